//! Analytic biphoton model: temporal wavepacket, generation rates and the
//! ideal trigger/partner correlation functions.
//!
//! Delays follow correlator coordinates: `tau >= 0` means the partner photon
//! is detected `tau` after its heralding trigger. The wavepacket density is
//! zero for negative delays.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectrum::{self, SpectralGrid};

/// Functional form of the biphoton intensity wavepacket `p(tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Waveform {
    /// Single-sided exponential decay, optionally preceded by a linear rise.
    ExponentialDecay {
        #[serde(default)]
        tau_rise_s: f64,
        tau_decay_s: f64,
    },
    /// `exp(-tau/tau_decay) * sin^2(pi * f * tau)`; the amplitude is the signed
    /// `exp(-tau/2 tau_decay) * sin(pi f tau)`.
    DampedOscillation { tau_decay_s: f64, oscillation_freq_hz: f64 },
    /// Intensity samples on a uniform grid starting at `tau = 0`, linearly
    /// interpolated and zero beyond the last sample.
    Tabulated { step_s: f64, intensity: Vec<f64> },
}

/// How pair emissions are realised at the event level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmissionStatistics {
    /// Each field carries thermal (Gaussian-state) statistics: probe photons
    /// bunch within the coherence time and heralded autocorrelation follows
    /// `(4g - 2) / g^2`.
    #[default]
    Thermal,
    /// Pairs and unpaired singles as independent homogeneous Poisson processes.
    Poisson,
}

/// Source-side experiment settings. Recorded alongside results, never used
/// in any computation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSettings {
    pub optical_depth: f64,
    pub omega_1_gamma: f64,
    pub omega_2_gamma: f64,
    pub delta_1_gamma: f64,
    pub gamma_21_gamma: f64,
    pub gamma_hz: f64,
}

impl SourceSettings {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("optical_depth", self.optical_depth),
            ("omega_1_gamma", self.omega_1_gamma),
            ("omega_2_gamma", self.omega_2_gamma),
            ("delta_1_gamma", self.delta_1_gamma),
            ("gamma_21_gamma", self.gamma_21_gamma),
            ("gamma_hz", self.gamma_hz),
        ];
        for (name, v) in fields {
            // detunings are signed; only their magnitude is constrained
            if !v.is_finite() {
                return Err(Error::Config(format!("source settings: {name} must be finite")));
            }
        }
        Ok(())
    }
}

/// Precomputed normalisation data for a validated waveform.
#[derive(Debug, Clone, PartialEq)]
struct Shape {
    norm: f64,
    peak_density: f64,
    peak_tau: f64,
}

/// Biphoton source: temporal wavepacket plus trigger, probe and pair rates.
#[derive(Debug, Clone, PartialEq)]
pub struct BiphotonModel {
    waveform: Waveform,
    pair_rate: f64,
    trigger_rate: f64,
    probe_rate: f64,
    emission: EmissionStatistics,
    shape: Shape,
    peak_g2: f64,
}

impl BiphotonModel {
    pub fn new(waveform: Waveform, pair_rate: f64, trigger_rate: f64, probe_rate: f64) -> Result<Self> {
        let shape = shape_of(&waveform)?;
        for (name, r) in [("pair_rate", pair_rate), ("trigger_rate", trigger_rate), ("probe_rate", probe_rate)] {
            if !(r.is_finite() && r >= 0.0) {
                return Err(Error::InvalidModel(format!("{name} must be finite and >= 0, got {r}")));
            }
        }
        if pair_rate > trigger_rate.min(probe_rate) {
            return Err(Error::InvalidModel(format!(
                "pair_rate {pair_rate} exceeds min(trigger_rate, probe_rate) = {}",
                trigger_rate.min(probe_rate)
            )));
        }
        let peak_g2 =
            if pair_rate == 0.0 { 1.0 } else { 1.0 + pair_rate * shape.peak_density / (trigger_rate * probe_rate) };
        Ok(Self {
            waveform,
            pair_rate,
            trigger_rate,
            probe_rate,
            emission: EmissionStatistics::default(),
            shape,
            peak_g2,
        })
    }

    pub fn with_emission(mut self, emission: EmissionStatistics) -> Self {
        self.emission = emission;
        self
    }

    pub fn waveform(&self) -> &Waveform {
        &self.waveform
    }

    pub fn pair_rate(&self) -> f64 {
        self.pair_rate
    }

    pub fn trigger_rate(&self) -> f64 {
        self.trigger_rate
    }

    pub fn probe_rate(&self) -> f64 {
        self.probe_rate
    }

    pub fn emission(&self) -> EmissionStatistics {
        self.emission
    }

    /// Cached `1 + R_pair * max p / (R_t R_p)`.
    pub fn peak_g2(&self) -> f64 {
        self.peak_g2
    }

    /// Delay at which the wavepacket density is maximal.
    pub fn peak_tau(&self) -> f64 {
        self.shape.peak_tau
    }

    pub fn peak_density(&self) -> f64 {
        self.shape.peak_density
    }

    /// Returns a copy with the rates replaced, keeping the waveform.
    pub fn with_rates(&self, pair_rate: f64, trigger_rate: f64, probe_rate: f64) -> Result<Self> {
        Ok(Self::new(self.waveform.clone(), pair_rate, trigger_rate, probe_rate)?.with_emission(self.emission))
    }

    /// Returns a copy with every time constant multiplied by `factor`.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::Domain(format!("time scale factor must be > 0, got {factor}")));
        }
        let waveform = match &self.waveform {
            Waveform::ExponentialDecay { tau_rise_s, tau_decay_s } => {
                Waveform::ExponentialDecay { tau_rise_s: tau_rise_s * factor, tau_decay_s: tau_decay_s * factor }
            }
            Waveform::DampedOscillation { tau_decay_s, oscillation_freq_hz } => Waveform::DampedOscillation {
                tau_decay_s: tau_decay_s * factor,
                oscillation_freq_hz: oscillation_freq_hz / factor,
            },
            Waveform::Tabulated { step_s, intensity } => {
                Waveform::Tabulated { step_s: step_s * factor, intensity: intensity.clone() }
            }
        };
        Ok(Self::new(waveform, self.pair_rate, self.trigger_rate, self.probe_rate)?.with_emission(self.emission))
    }

    /// Wavepacket probability density `p(tau)` in 1/s.
    pub fn waveform_pdf(&self, tau: f64) -> f64 {
        if !(tau >= 0.0) {
            return 0.0;
        }
        match &self.waveform {
            Waveform::ExponentialDecay { tau_rise_s, tau_decay_s } => {
                let (r, t) = (*tau_rise_s, *tau_decay_s);
                if tau < r {
                    self.shape.norm * tau / r
                } else {
                    self.shape.norm * (-(tau - r) / t).exp()
                }
            }
            Waveform::DampedOscillation { tau_decay_s, oscillation_freq_hz } => {
                let s = (PI * oscillation_freq_hz * tau).sin();
                self.shape.norm * (-tau / tau_decay_s).exp() * s * s
            }
            Waveform::Tabulated { step_s, intensity } => self.shape.norm * interpolate(intensity, *step_s, tau),
        }
    }

    /// Signed wavepacket amplitude with `amplitude(tau)^2 == waveform_pdf(tau)`.
    pub fn amplitude(&self, tau: f64) -> f64 {
        match &self.waveform {
            Waveform::DampedOscillation { tau_decay_s, oscillation_freq_hz } if tau >= 0.0 => {
                self.shape.norm.sqrt() * (-tau / (2.0 * tau_decay_s)).exp() * (PI * oscillation_freq_hz * tau).sin()
            }
            _ => self.waveform_pdf(tau).sqrt(),
        }
    }

    /// Normalised trigger/partner cross-correlation `1 + R_pair p(tau) / (R_t R_p)`.
    pub fn eval_cross_correlation(&self, tau: f64) -> f64 {
        if self.pair_rate == 0.0 {
            return 1.0;
        }
        1.0 + self.pair_rate * self.waveform_pdf(tau) / (self.trigger_rate * self.probe_rate)
    }

    /// Mean of `eval_cross_correlation` over `[lo, hi]`, by Simpson quadrature.
    pub fn mean_cross_correlation(&self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return self.eval_cross_correlation(lo);
        }
        let n = 512;
        let h = (hi - lo) / n as f64;
        let mut acc = self.eval_cross_correlation(lo) + self.eval_cross_correlation(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.eval_cross_correlation(lo + i as f64 * h);
        }
        acc * h / 3.0 / (hi - lo)
    }

    /// `(R_pair / R_p, R_pair / R_t)`.
    pub fn pairing_ratios(&self) -> Result<(f64, f64)> {
        if self.probe_rate <= 0.0 || self.trigger_rate <= 0.0 {
            return Err(Error::Domain("pairing ratios need positive trigger and probe rates".into()));
        }
        Ok((self.pair_rate / self.probe_rate, self.pair_rate / self.trigger_rate))
    }

    /// Decay constant for analytic waveforms; mean delay for tabulated ones.
    pub fn characteristic_time(&self) -> f64 {
        match &self.waveform {
            Waveform::ExponentialDecay { tau_decay_s, .. } => *tau_decay_s,
            Waveform::DampedOscillation { tau_decay_s, .. } => *tau_decay_s,
            Waveform::Tabulated { step_s, intensity } => {
                let mut m = 0.0;
                for (i, v) in intensity.iter().enumerate() {
                    m += i as f64 * step_s * v;
                }
                let total: f64 = intensity.iter().sum();
                (m / total).max(*step_s)
            }
        }
    }

    /// Delay beyond which the density is negligible (below `exp(-50)` of its
    /// scale for the analytic forms).
    pub fn support_end(&self) -> f64 {
        match &self.waveform {
            Waveform::ExponentialDecay { tau_rise_s, tau_decay_s } => tau_rise_s + 50.0 * tau_decay_s,
            Waveform::DampedOscillation { tau_decay_s, .. } => 50.0 * tau_decay_s,
            Waveform::Tabulated { step_s, intensity } => step_s * (intensity.len() - 1) as f64,
        }
    }

    /// Intensity FWHM of the lobe containing the peak, found by bisection on
    /// both sides of the peak.
    pub fn intensity_fwhm(&self) -> f64 {
        let half = 0.5 * self.shape.peak_density;
        let peak = self.shape.peak_tau;
        let f = |t: f64| self.waveform_pdf(t) - half;
        // walk outward in small steps to bracket the first crossing each side
        let step = (self.characteristic_time() / 2000.0).max(1e-15);
        let mut left = peak;
        while left > 0.0 && f(left) > 0.0 {
            left -= step;
        }
        let left = if left <= 0.0 && f(0.0) > 0.0 { 0.0 } else { bisect(&f, left.max(0.0), left + step) };
        let mut right = peak;
        let end = self.support_end();
        while right < end && f(right) > 0.0 {
            right += step;
        }
        let right = bisect(&f, right - step, right);
        right - left
    }
}

/// Heralded autocorrelation of the partner given the ideal cross-correlation:
/// `(4g - 2) / g^2`.
pub fn eval_conditional_autocorr(g2_cross: f64) -> Result<f64> {
    if !(g2_cross >= 1.0) || !g2_cross.is_finite() {
        return Err(Error::Domain(format!("cross-correlation must be >= 1, got {g2_cross}")));
    }
    Ok((4.0 * g2_cross - 2.0) / (g2_cross * g2_cross))
}

/// Result of a spectral width computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumWidth {
    pub fwhm_hz: f64,
    /// Frequency bin spacing of the transform grid.
    pub resolution_hz: f64,
    /// Set when the width is within a few bins of the bin spacing, or spans
    /// most of the sampled band.
    pub resolution_limited: bool,
}

/// FWHM of `|psi~(nu)|^2` on the default grid (2^16 points over 64 decay
/// times).
pub fn waveform_spectrum_fwhm(model: &BiphotonModel) -> Result<SpectrumWidth> {
    waveform_spectrum_fwhm_on(model, SpectralGrid::for_model(model))
}

pub fn waveform_spectrum_fwhm_on(model: &BiphotonModel, grid: SpectralGrid) -> Result<SpectrumWidth> {
    if let Waveform::Tabulated { intensity, .. } = model.waveform() {
        if intensity.len() < 16 {
            return Err(Error::Resolution(format!(
                "tabulated waveform has {} samples, need at least 16",
                intensity.len()
            )));
        }
    }
    let spec = spectrum::amplitude_spectrum(model, grid)?;
    let fwhm = spec.fwhm()?;
    let band = spec.step_hz * spec.density.len() as f64;
    Ok(SpectrumWidth {
        fwhm_hz: fwhm,
        resolution_hz: spec.step_hz,
        resolution_limited: fwhm < 4.0 * spec.step_hz || fwhm > 0.5 * band,
    })
}

/// Damped-oscillation waveform with a given main-lobe intensity FWHM and peak
/// density. The product `peak * fwhm` fixes the damping per oscillation
/// period; the width then fixes the time scale.
pub fn damped_oscillation_for(fwhm_s: f64, peak_density: f64) -> Result<Waveform> {
    if !(fwhm_s > 0.0 && peak_density > 0.0) {
        return Err(Error::Domain("fwhm and peak density must be positive".into()));
    }
    let target = fwhm_s * peak_density;
    // dimensionless shape exp(-a u) sin^2(pi u), a = damping per period
    let q = |a: f64| {
        let (fw, peak) = unit_damped_lobe(a);
        fw * peak
    };
    let (mut lo, mut hi) = (1e-3, 60.0);
    let (qlo, qhi) = (q(lo), q(hi));
    if !(qlo < target && target < qhi) {
        return Err(Error::Domain(format!(
            "peak*fwhm = {target:.4} outside the damped-oscillation family range ({qlo:.4}, {qhi:.4})"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if q(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let a = 0.5 * (lo + hi);
    let (fw_u, _) = unit_damped_lobe(a);
    let freq = fw_u / fwhm_s;
    Ok(Waveform::DampedOscillation { tau_decay_s: 1.0 / (a * freq), oscillation_freq_hz: freq })
}

/// Main-lobe FWHM and normalised peak of `exp(-a u) sin^2(pi u)` in units of
/// the oscillation period.
fn unit_damped_lobe(a: f64) -> (f64, f64) {
    let norm = 1.0 / ((1.0 / (2.0 * a)) * 4.0 * PI * PI / (a * a + 4.0 * PI * PI));
    let g = |u: f64| (-a * u).exp() * (PI * u).sin().powi(2);
    let u_peak = (2.0 * PI / a).atan() / PI;
    let half = 0.5 * g(u_peak);
    let f = |u: f64| g(u) - half;
    let left = bisect(&f, 0.0, u_peak);
    let right = bisect(&f, u_peak, 1.0);
    (right - left, norm * g(u_peak))
}

fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn interpolate(samples: &[f64], step: f64, tau: f64) -> f64 {
    let x = tau / step;
    let last = (samples.len() - 1) as f64;
    if x >= last {
        // tolerate rounding in tau / step at the final sample
        return if x - last <= 1e-9 * last.max(1.0) { samples[samples.len() - 1] } else { 0.0 };
    }
    let i = x.floor() as usize;
    let frac = x - i as f64;
    samples[i] * (1.0 - frac) + samples[i + 1] * frac
}

fn shape_of(waveform: &Waveform) -> Result<Shape> {
    match waveform {
        Waveform::ExponentialDecay { tau_rise_s, tau_decay_s } => {
            let (r, t) = (*tau_rise_s, *tau_decay_s);
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidModel(format!("tau_decay must be > 0, got {t}")));
            }
            if !(r >= 0.0 && r.is_finite()) {
                return Err(Error::InvalidModel(format!("tau_rise must be >= 0, got {r}")));
            }
            let norm = 1.0 / (0.5 * r + t);
            Ok(Shape { norm, peak_density: norm, peak_tau: r })
        }
        Waveform::DampedOscillation { tau_decay_s, oscillation_freq_hz } => {
            let (t, f) = (*tau_decay_s, *oscillation_freq_hz);
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidModel(format!("tau_decay must be > 0, got {t}")));
            }
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::InvalidModel(format!("damped oscillation needs oscillation_freq > 0, got {f}")));
            }
            let wt = 2.0 * PI * f * t;
            let integral = 0.5 * t * wt * wt / (1.0 + wt * wt);
            let norm = 1.0 / integral;
            let peak_tau = wt.atan() / (PI * f);
            let peak_density = norm * (-peak_tau / t).exp() * (PI * f * peak_tau).sin().powi(2);
            Ok(Shape { norm, peak_density, peak_tau })
        }
        Waveform::Tabulated { step_s, intensity } => {
            if !(step_s.is_finite() && *step_s > 0.0) {
                return Err(Error::InvalidModel(format!("tabulated step must be > 0, got {step_s}")));
            }
            if intensity.len() < 2 {
                return Err(Error::InvalidModel("tabulated waveform needs at least 2 samples".into()));
            }
            if intensity.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidModel("tabulated intensity must be finite and >= 0".into()));
            }
            let n = intensity.len();
            let integral = step_s * (intensity.iter().sum::<f64>() - 0.5 * (intensity[0] + intensity[n - 1]));
            if !(integral > 0.0) {
                return Err(Error::InvalidModel("tabulated intensity integrates to zero".into()));
            }
            let (imax, vmax) =
                intensity.iter().enumerate().fold((0, f64::MIN), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc });
            Ok(Shape { norm: 1.0 / integral, peak_density: vmax / integral, peak_tau: imax as f64 * step_s })
        }
    }
}

/// Half width at half maximum of a single-sided exponential of decay `t`.
pub fn exponential_fwhm(tau_decay: f64) -> f64 {
    tau_decay * LN_2
}

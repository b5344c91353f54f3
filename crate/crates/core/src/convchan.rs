//! Frequency-conversion channel: spectral acceptance, overlap efficiency,
//! group delay and added noise.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::rng::{stage_rng, Stage};
use crate::simkit::{delay_stream, merge_sorted, poisson_ticks, thin, TagStream};
use crate::spectrum::SpectralDensity;

/// Which transmission profile `window_fwhm_hz` measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowWidth {
    /// Width of the power (efficiency) profile.
    #[default]
    Efficiency,
    /// Width of the field amplitude profile; the efficiency window is its
    /// square and therefore narrower.
    Amplitude,
}

/// Acceptance window and stream-level parameters of the converter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConversionChannelSpec {
    pub window_fwhm_hz: f64,
    pub window_width: WindowWidth,
    /// Super-Gaussian order; 1 is Gaussian, larger values flatten the top.
    pub window_order: f64,
    pub window_center_offset_hz: f64,
    pub peak_efficiency: f64,
    pub group_delay_s: f64,
    pub added_noise_rate_hz: f64,
}

impl Default for ConversionChannelSpec {
    fn default() -> Self {
        Self {
            window_fwhm_hz: 40e6,
            window_width: WindowWidth::Efficiency,
            window_order: 1.0,
            window_center_offset_hz: 0.0,
            peak_efficiency: 0.794,
            group_delay_s: 55e-9,
            added_noise_rate_hz: 0.0,
        }
    }
}

impl ConversionChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_fwhm_hz > 0.0 && self.window_fwhm_hz.is_finite()) {
            return Err(Error::Config(format!("window_fwhm must be > 0, got {}", self.window_fwhm_hz)));
        }
        if !(self.window_order >= 1.0 && self.window_order.is_finite()) {
            return Err(Error::Config(format!("window_order must be >= 1, got {}", self.window_order)));
        }
        if !(self.peak_efficiency > 0.0 && self.peak_efficiency <= 1.0) {
            return Err(Error::Config(format!("peak_efficiency must lie in (0, 1], got {}", self.peak_efficiency)));
        }
        if !self.window_center_offset_hz.is_finite() || !self.group_delay_s.is_finite() {
            return Err(Error::Config("window offset and group delay must be finite".into()));
        }
        if !(self.added_noise_rate_hz >= 0.0 && self.added_noise_rate_hz.is_finite()) {
            return Err(Error::Config(format!("added_noise_rate must be >= 0, got {}", self.added_noise_rate_hz)));
        }
        Ok(())
    }
}

/// Converter settings kept with results for the record; unused by any
/// computation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverterSettings {
    pub optical_depth: f64,
    pub omega_c_gamma: f64,
    pub omega_d_gamma: f64,
    pub delta_p_gamma: f64,
    pub delta_c_gamma: f64,
    pub delta_d_gamma: f64,
}

impl ConverterSettings {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("optical_depth", self.optical_depth),
            ("omega_c_gamma", self.omega_c_gamma),
            ("omega_d_gamma", self.omega_d_gamma),
            ("delta_p_gamma", self.delta_p_gamma),
            ("delta_c_gamma", self.delta_c_gamma),
            ("delta_d_gamma", self.delta_d_gamma),
        ];
        for (name, v) in fields {
            if !v.is_finite() {
                return Err(Error::Config(format!("converter settings: {name} must be finite")));
            }
        }
        if self.optical_depth < 0.0 || self.omega_c_gamma < 0.0 || self.omega_d_gamma < 0.0 {
            return Err(Error::Config("converter settings: optical depth and Rabi frequencies must be >= 0".into()));
        }
        Ok(())
    }
}

/// `peak * exp(-ln2 * (2 (nu - offset) / fwhm)^(2 order))`, with the
/// exponent doubled when the width refers to the amplitude profile.
pub fn acceptance_transmission(spec: &ConversionChannelSpec, detuning_hz: f64) -> f64 {
    let x = (2.0 * (detuning_hz - spec.window_center_offset_hz) / spec.window_fwhm_hz).abs();
    let k = match spec.window_width {
        WindowWidth::Efficiency => LN_2,
        WindowWidth::Amplitude => 2.0 * LN_2,
    };
    spec.peak_efficiency * (-k * x.powf(2.0 * spec.window_order)).exp()
}

/// Overlap of a normalised photon spectrum with the acceptance window.
pub fn conversion_efficiency(spec: &ConversionChannelSpec, photon_spectrum: &SpectralDensity) -> Result<f64> {
    spec.validate()?;
    let v = photon_spectrum.integrate(|nu| acceptance_transmission(spec, nu))?;
    Ok(v.min(spec.peak_efficiency))
}

const MIN_ORDER: f64 = 1.0;
const MAX_ORDER: f64 = 8.0;
const TOLERANCE: f64 = 1e-3;

/// Default-width window whose peak equals `narrowband_target` and whose
/// overlap with `broadband_spectrum` equals `broadband_target`, found by
/// bisection on the window order.
pub fn calibrate_window_shape(
    narrowband_target: f64,
    broadband_target: f64,
    broadband_spectrum: &SpectralDensity,
) -> Result<ConversionChannelSpec> {
    calibrate_window_shape_from(
        ConversionChannelSpec::default(),
        narrowband_target,
        broadband_target,
        broadband_spectrum,
    )
}

/// As [`calibrate_window_shape`], keeping every other field of `base`.
pub fn calibrate_window_shape_from(
    base: ConversionChannelSpec,
    narrowband_target: f64,
    broadband_target: f64,
    broadband_spectrum: &SpectralDensity,
) -> Result<ConversionChannelSpec> {
    if !(narrowband_target > 0.0 && narrowband_target <= 1.0) {
        return Err(Error::Domain(format!("narrowband target must lie in (0, 1], got {narrowband_target}")));
    }
    if !(broadband_target > 0.0) || broadband_target > narrowband_target {
        return Err(Error::Domain(format!(
            "broadband target {broadband_target} must be positive and not exceed narrowband target {narrowband_target}"
        )));
    }
    let with =
        |order: f64| ConversionChannelSpec { window_order: order, peak_efficiency: narrowband_target, ..base.clone() };
    let eff = |order: f64| conversion_efficiency(&with(order), broadband_spectrum);
    let (mut lo, mut hi) = (MIN_ORDER, MAX_ORDER);
    let (e_lo, e_hi) = (eff(lo)?, eff(hi)?);
    if (e_lo - broadband_target).abs() <= TOLERANCE {
        return Ok(with(lo));
    }
    let fail = |message: &str| Error::Calibration {
        message: message.to_string(),
        lo_order: MIN_ORDER,
        lo_value: e_lo,
        hi_order: MAX_ORDER,
        hi_value: e_hi,
    };
    if broadband_target < e_lo.min(e_hi) - TOLERANCE || broadband_target > e_lo.max(e_hi) + TOLERANCE {
        return Err(fail(&format!("broadband target {broadband_target} is not bracketed by the order range")));
    }
    let rising = e_hi > e_lo;
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let e = eff(mid)?;
        if (e - broadband_target).abs() <= 0.1 * TOLERANCE {
            return Ok(with(mid));
        }
        if (e < broadband_target) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (eff(mid)? - broadband_target).abs() <= TOLERANCE {
        Ok(with(mid))
    } else {
        Err(fail("bisection did not converge"))
    }
}

/// Converts a probe stream: independent survival with probability
/// `efficiency`, a shift by the group delay, then Poisson noise tags.
pub fn transform_stream(
    spec: &ConversionChannelSpec,
    probe_tags: &TagStream,
    efficiency: f64,
    duration_s: f64,
    seed: u64,
) -> Result<TagStream> {
    probe_tags.check_sorted()?;
    spec.validate()?;
    if !(0.0..=1.0).contains(&efficiency) {
        return Err(Error::Domain(format!("efficiency must lie in [0, 1], got {efficiency}")));
    }
    let mut rng = stage_rng(seed, Stage::Conversion);
    let kept = TagStream { ticks: thin(&probe_tags.ticks, efficiency, &mut rng), duration_s, ..probe_tags.clone() };
    let shifted = delay_stream(&kept, spec.group_delay_s)?.stream;
    let mut noise_rng = stage_rng(seed, Stage::Noise);
    let mut noise = poisson_ticks(spec.added_noise_rate_hz, duration_s, probe_tags.resolution_s, &mut noise_rng);
    let max = shifted.max_tick();
    noise.retain(|&t| t <= max);
    Ok(TagStream { ticks: merge_sorted(&shifted.ticks, &noise), ..shifted })
}

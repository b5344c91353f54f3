//! Photon spectral densities and the FFT of the wavepacket amplitude.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BiphotonModel;

/// Uniform time grid starting at `tau = 0` on which the amplitude is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub step_s: f64,
    pub points: usize,
}

impl SpectralGrid {
    pub const DEFAULT_POINTS: usize = 1 << 16;

    /// `2^16` points spanning 64 characteristic times.
    pub fn for_model(model: &BiphotonModel) -> Self {
        let span = 64.0 * model.characteristic_time();
        Self { step_s: span / Self::DEFAULT_POINTS as f64, points: Self::DEFAULT_POINTS }
    }
}

/// Spectral density sampled on a uniform frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSpectrum {
    pub start_hz: f64,
    pub step_hz: f64,
    pub density: Vec<f64>,
}

impl SampledSpectrum {
    pub fn frequency(&self, k: usize) -> f64 {
        self.start_hz + k as f64 * self.step_hz
    }

    pub fn total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.step_hz
    }

    /// Distance between the outermost half-maximum crossings, linearly
    /// interpolated between samples.
    pub fn fwhm(&self) -> Result<f64> {
        let n = self.density.len();
        let max = self.density.iter().cloned().fold(f64::MIN, f64::max);
        if n < 2 || !(max > 0.0) {
            return Err(Error::Resolution("spectrum has no positive samples".into()));
        }
        let half = 0.5 * max;
        let first = self.density.iter().position(|&v| v >= half).unwrap();
        let last = self.density.iter().rposition(|&v| v >= half).unwrap();
        let left = if first == 0 {
            self.frequency(0)
        } else {
            let (a, b) = (self.density[first - 1], self.density[first]);
            self.frequency(first - 1) + (half - a) / (b - a) * self.step_hz
        };
        let right = if last == n - 1 {
            self.frequency(n - 1)
        } else {
            let (a, b) = (self.density[last], self.density[last + 1]);
            self.frequency(last) + (a - half) / (a - b) * self.step_hz
        };
        Ok((right - left).max(self.step_hz))
    }
}

/// Normalised photon spectral density, in 1/Hz.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SpectralDensity {
    Delta { center_hz: f64 },
    Gaussian { center_hz: f64, fwhm_hz: f64 },
    Lorentzian { center_hz: f64, fwhm_hz: f64 },
    Sampled(SampledSpectrum),
}

impl SpectralDensity {
    pub fn validate(&self) -> Result<()> {
        match self {
            SpectralDensity::Delta { center_hz } => finite("center_hz", *center_hz),
            SpectralDensity::Gaussian { center_hz, fwhm_hz } | SpectralDensity::Lorentzian { center_hz, fwhm_hz } => {
                finite("center_hz", *center_hz)?;
                if !(*fwhm_hz > 0.0 && fwhm_hz.is_finite()) {
                    return Err(Error::Domain(format!("spectrum fwhm must be > 0, got {fwhm_hz}")));
                }
                Ok(())
            }
            SpectralDensity::Sampled(s) => {
                if !(s.step_hz > 0.0) || s.density.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Domain(
                        "sampled spectrum must have step > 0 and finite nonnegative density".into(),
                    ));
                }
                let total = s.total();
                if (total - 1.0).abs() > 1e-4 {
                    return Err(Error::Domain(format!("spectrum integrates to {total}, expected 1")));
                }
                Ok(())
            }
        }
    }

    /// `integral S(nu) f(nu) dnu`. Quadrature nodes are fixed in units of the
    /// line width, so the result is exactly monotone under width scaling for
    /// any `f` that is nonincreasing away from the centre.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            SpectralDensity::Delta { center_hz } => f(*center_hz),
            SpectralDensity::Gaussian { center_hz, fwhm_hz } => {
                let sigma = fwhm_hz / (8.0 * 2f64.ln()).sqrt();
                let n = 24_000;
                let (lo, hi) = (-12.0, 12.0);
                let h = (hi - lo) / n as f64;
                let mut acc = 0.0;
                for i in 0..=n {
                    let x = lo + i as f64 * h;
                    let w = if i == 0 || i == n {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += w * (-0.5 * x * x).exp() * f(center_hz + sigma * x);
                }
                acc * h / 3.0 / (2.0 * PI).sqrt()
            }
            SpectralDensity::Lorentzian { center_hz, fwhm_hz } => {
                // nu = c + (w/2) tan(theta) maps the Lorentzian onto a uniform density
                let n = 40_000;
                let h = PI / n as f64;
                let mut acc = 0.0;
                for i in 0..n {
                    let theta = -0.5 * PI + (i as f64 + 0.5) * h;
                    acc += f(center_hz + 0.5 * fwhm_hz * theta.tan());
                }
                acc * h / PI
            }
            SpectralDensity::Sampled(s) => {
                s.density.iter().enumerate().map(|(k, d)| d * f(s.frequency(k))).sum::<f64>() * s.step_hz
            }
        })
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be finite")));
    }
    Ok(())
}

/// `|psi~(nu)|^2` of the model's signed amplitude, centred on zero frequency
/// and normalised to unit area.
pub fn amplitude_spectrum(model: &BiphotonModel, grid: SpectralGrid) -> Result<SampledSpectrum> {
    if grid.points < 16 || !(grid.step_s > 0.0) {
        return Err(Error::Resolution(format!(
            "spectral grid needs >= 16 points and a positive step, got {} x {}",
            grid.points, grid.step_s
        )));
    }
    let n = grid.points;
    let mut buf: Vec<Complex64> =
        (0..n).map(|i| Complex64::new(model.amplitude(i as f64 * grid.step_s), 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let step_hz = 1.0 / (n as f64 * grid.step_s);
    let half = n / 2;
    let mut density: Vec<f64> = (0..n).map(|k| buf[(k + half) % n].norm_sqr()).collect();
    let total: f64 = density.iter().sum::<f64>() * step_hz;
    if !(total > 0.0) {
        return Err(Error::Resolution("amplitude vanishes on the spectral grid".into()));
    }
    density.iter_mut().for_each(|v| *v /= total);
    Ok(SampledSpectrum { start_hz: -(half as f64) * step_hz, step_hz, density })
}

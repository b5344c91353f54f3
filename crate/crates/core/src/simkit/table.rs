use rand::Rng;

use crate::error::{Error, Result};

/// Sampler for a piecewise-linear density tabulated on a uniform grid.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    origin: f64,
    step: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    pub fn new(origin: f64, step: f64, density: Vec<f64>) -> Result<Self> {
        if density.len() < 2 || !(step > 0.0) || density.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("inverse-cdf table needs >= 2 finite nonnegative samples".into()));
        }
        let mut cdf = Vec::with_capacity(density.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for w in density.windows(2) {
            acc += 0.5 * step * (w[0] + w[1]);
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Domain("inverse-cdf table has zero mass".into()));
        }
        Ok(Self { origin, step, density, cdf })
    }

    /// Unnormalised area under the table.
    pub fn mass(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn support(&self) -> (f64, f64) {
        (self.origin, self.origin + self.step * (self.density.len() - 1) as f64)
    }

    /// Normalised density at `x` by linear interpolation.
    pub fn pdf(&self, x: f64) -> f64 {
        let u = (x - self.origin) / self.step;
        if !(u >= 0.0) {
            return 0.0;
        }
        let i = u.floor() as usize;
        if i + 1 >= self.density.len() {
            return 0.0;
        }
        let f = u - i as f64;
        (self.density[i] * (1.0 - f) + self.density[i + 1] * f) / self.mass()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target = rng.random::<f64>() * self.mass();
        let j = (self.cdf.partition_point(|&c| c <= target).max(1) - 1).min(self.density.len() - 2);
        let r = target - self.cdf[j];
        let (a, b) = (self.density[j], self.density[j + 1]);
        // solve a s + (b - a) s^2 / (2 step) = r in the rationalised form
        let disc = (a * a + 2.0 * (b - a) * r / self.step).max(0.0);
        let denom = a + disc.sqrt();
        let s = if denom > 0.0 { (2.0 * r / denom).min(self.step) } else { 0.0 };
        self.origin + j as f64 * self.step + s
    }
}

//! Pair-source event generation.
//!
//! Thermal mode realises the detected trigger and probe streams as a
//! superposition of independent Poisson cluster processes whose first-order,
//! cross, probe-probe and trigger-probe-probe cumulant densities equal those
//! of a two-mode Gaussian state:
//!
//! * double clusters emit triggers at `T` and `T + d`, with `d ~ C(d)^2 / W`,
//!   and two probes drawn independently from `psi(x - T) psi(x - T - d)`;
//! * pair clusters emit a trigger at `T` and a probe at `T + tau`, with the
//!   delay density making the total cross density `R_pair p(tau)`;
//! * probe-probe and trigger-trigger clusters supply the remaining thermal
//!   bunching `R^2 C(d)^2`;
//! * unpaired singles fill up the channel rates.
//!
//! Here `psi = sqrt(p)`, `C` is its autocorrelation and `W = int C^2`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::rng::{stage_rng, Stage};
use super::table::InverseCdf;
use super::{poisson_ticks, TagStream, DEFAULT_RESOLUTION_S};
use crate::error::{Error, Result};
use crate::model::{BiphotonModel, EmissionStatistics};

const GRID_POINTS: usize = 1 << 15;

#[derive(Debug, Clone)]
struct Thermal {
    w: f64,
    double_rate: f64,
    pair_rate: f64,
    probe_bunch_rate: f64,
    trigger_bunch_rate: f64,
    trigger_single_rate: f64,
    probe_single_rate: f64,
    delay: InverseCdf,
    separation: InverseCdf,
}

/// Precomputed sampling tables for one model, reusable across runs.
#[derive(Debug, Clone)]
pub struct SourcePlan {
    trigger_rate: f64,
    probe_rate: f64,
    pair_rate: f64,
    span: f64,
    wavepacket: InverseCdf,
    thermal: Option<Thermal>,
}

impl SourcePlan {
    pub fn new(model: &BiphotonModel) -> Result<Self> {
        let span = model.support_end();
        let dt = span / (GRID_POINTS - 1) as f64;
        let p: Vec<f64> = (0..GRID_POINTS).map(|i| model.waveform_pdf(i as f64 * dt)).collect();
        let wavepacket = InverseCdf::new(0.0, dt, p.clone())?;
        let mut plan = Self {
            trigger_rate: model.trigger_rate(),
            probe_rate: model.probe_rate(),
            pair_rate: model.pair_rate(),
            span,
            wavepacket,
            thermal: None,
        };
        if model.emission() == EmissionStatistics::Thermal && model.pair_rate() > 0.0 {
            plan.thermal = Some(thermal_tables(model, &p, dt)?);
        }
        Ok(plan)
    }

    /// `W = int C(d)^2 dd`, the effective coherence time; zero outside thermal mode.
    pub fn coherence_time(&self) -> f64 {
        self.thermal.as_ref().map_or(0.0, |t| t.w)
    }

    /// Rates of double, pair, probe-bunch and trigger-bunch clusters.
    pub fn cluster_rates(&self) -> Option<[f64; 4]> {
        self.thermal.as_ref().map(|t| [t.double_rate, t.pair_rate, t.probe_bunch_rate, t.trigger_bunch_rate])
    }

    /// Trigger stream on channel 0 and probe stream on channel 1, with the
    /// probe of each pair following its trigger.
    pub fn simulate(&self, duration_s: f64, resolution_s: f64, seed: u64) -> Result<(TagStream, TagStream)> {
        if !(duration_s > 0.0 && duration_s.is_finite()) {
            return Err(Error::Domain(format!("duration must be > 0, got {duration_s}")));
        }
        let mut rng = stage_rng(seed, Stage::Source);
        let (mut trig, mut probe) = match &self.thermal {
            Some(th) => self.thermal_events(th, duration_s, &mut rng),
            None => self.poisson_events(duration_s, &mut rng),
        };
        let to_ticks = |v: &mut Vec<f64>| -> Vec<u64> {
            let mut out: Vec<u64> =
                v.iter().filter(|&&t| (0.0..=duration_s).contains(&t)).map(|&t| (t / resolution_s) as u64).collect();
            v.clear();
            v.shrink_to_fit();
            out.sort_unstable();
            out
        };
        let t_ticks = to_ticks(&mut trig);
        let p_ticks = to_ticks(&mut probe);
        let mut t = TagStream { channel: 0, resolution_s, duration_s, ticks: t_ticks };
        let mut p = TagStream { channel: 1, resolution_s, duration_s, ticks: p_ticks };
        let (ts_rate, ps_rate) = match &self.thermal {
            Some(th) => (th.trigger_single_rate, th.probe_single_rate),
            None => (self.trigger_rate - self.pair_rate, self.probe_rate - self.pair_rate),
        };
        let ts = poisson_ticks(ts_rate, duration_s, resolution_s, &mut rng);
        let ps = poisson_ticks(ps_rate, duration_s, resolution_s, &mut rng);
        t.ticks = super::merge_sorted(&t.ticks, &ts);
        p.ticks = super::merge_sorted(&p.ticks, &ps);
        Ok((t, p))
    }

    fn poisson_events(&self, duration_s: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let n = (self.pair_rate * duration_s * 1.01) as usize + 16;
        let (mut trig, mut probe) = (Vec::with_capacity(n), Vec::with_capacity(n));
        if self.pair_rate <= 0.0 {
            return (trig, probe);
        }
        let mut t = -self.span;
        loop {
            let gap: f64 = Exp1.sample(rng);
            t += gap / self.pair_rate;
            if t > duration_s {
                break;
            }
            trig.push(t);
            probe.push(t + self.wavepacket.sample(rng));
        }
        (trig, probe)
    }

    fn thermal_events(&self, th: &Thermal, duration_s: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let rates = [th.double_rate, th.pair_rate, th.probe_bunch_rate, th.trigger_bunch_rate];
        let total: f64 = rates.iter().sum();
        let cap = |r: f64| (r * (duration_s + self.span) * 1.01) as usize + 16;
        let mut trig = Vec::with_capacity(cap(self.trigger_rate - th.trigger_single_rate));
        let mut probe = Vec::with_capacity(cap(self.probe_rate - th.probe_single_rate));
        let mut t = -self.span;
        loop {
            let gap: f64 = Exp1.sample(rng);
            t += gap / total;
            if t > duration_s {
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut kind = 0;
            while kind < 3 && u >= rates[kind] {
                u -= rates[kind];
                kind += 1;
            }
            match kind {
                0 => {
                    let t2 = t + self.separation(th, rng);
                    trig.push(t);
                    trig.push(t2);
                    probe.push(self.bunched_probe(t, t2, rng));
                    probe.push(self.bunched_probe(t, t2, rng));
                }
                1 => {
                    trig.push(t);
                    probe.push(t + th.delay.sample(rng));
                }
                2 => {
                    probe.push(t);
                    probe.push(t + self.separation(th, rng));
                }
                _ => {
                    trig.push(t);
                    trig.push(t + self.separation(th, rng));
                }
            }
        }
        (trig, probe)
    }

    fn separation(&self, th: &Thermal, rng: &mut ChaCha8Rng) -> f64 {
        let d = th.separation.sample(rng);
        if rng.random::<bool>() {
            -d
        } else {
            d
        }
    }

    /// Draws from `psi(x - t1) psi(x - t2)` using the mixture of the two
    /// wavepackets as proposal.
    fn bunched_probe(&self, t1: f64, t2: f64, rng: &mut ChaCha8Rng) -> f64 {
        loop {
            let origin = if rng.random::<bool>() { t1 } else { t2 };
            let x = origin + self.wavepacket.sample(rng);
            let (a, b) = (self.wavepacket.pdf(x - t1), self.wavepacket.pdf(x - t2));
            let s = a + b;
            if s > 0.0 && rng.random::<f64>() * s < 2.0 * (a * b).sqrt() {
                return x;
            }
        }
    }
}

/// Builds the cluster-process tables from the sampled wavepacket.
fn thermal_tables(model: &BiphotonModel, p: &[f64], dt: f64) -> Result<Thermal> {
    let n = p.len();
    let len = 4 * n;
    let norm = (dt * p.iter().sum::<f64>()).sqrt();
    let psi: Vec<f64> = p.iter().map(|v| v.sqrt() / norm).collect();

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(len);
    let inv = planner.plan_fft_inverse(len);
    let mut spec: Vec<Complex64> = psi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spec.resize(len, Complex64::new(0.0, 0.0));
    fwd.process(&mut spec);

    let mut auto: Vec<Complex64> = spec.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect();
    let mut cross: Vec<Complex64> = spec.iter().map(|z| z * z.norm_sqr()).collect();
    inv.process(&mut auto);
    inv.process(&mut cross);
    let scale = 1.0 / len as f64;
    let c0 = auto[0].re * scale * dt;
    let c: Vec<f64> = (0..n).map(|k| (auto[k].re * scale * dt / c0).max(0.0)).collect();
    let d: Vec<f64> = (0..n).map(|k| cross[k].re * scale * dt * dt / c0).collect();
    let w = dt * (c[0] * c[0] + 2.0 * c[1..].iter().map(|v| v * v).sum::<f64>());

    let (rt, rp, rpair) = (model.trigger_rate(), model.probe_rate(), model.pair_rate());
    if 2.0 * rp * w >= 1.0 {
        return Err(Error::InvalidModel(format!(
            "probe photons per coherence time too high for the thermal cluster model: 2 R_p W = {:.4} must stay below 1",
            2.0 * rp * w
        )));
    }
    // cross density left after double clusters: R_pair (psi^2 - 2 R_p psi D)
    let h: Vec<f64> = (0..n).map(|i| (psi[i] * psi[i] - 2.0 * rp * psi[i] * d[i]).max(0.0)).collect();
    let delay = InverseCdf::new(0.0, dt, h)?;
    let pair_rate = rpair * delay.mass();
    let double_rate = 0.5 * rpair * rp * w;
    let probe_bunch_rate = 0.5 * rp * (rp - rpair) * w;
    let trigger_budget = rt - 2.0 * double_rate - pair_rate;
    let trigger_bunch_rate = (0.5 * (rt * rt - rpair * rp).max(0.0) * w).min(0.5 * trigger_budget.max(0.0));
    let trigger_single_rate = trigger_budget - 2.0 * trigger_bunch_rate;
    let probe_single_rate = rp - 2.0 * double_rate - pair_rate - 2.0 * probe_bunch_rate;
    if trigger_single_rate < -1e-9 * rt || probe_single_rate < -1e-9 * rp {
        return Err(Error::InvalidModel("rates leave no room for the thermal cluster decomposition".into()));
    }
    let c2: Vec<f64> = c.iter().map(|v| v * v).collect();
    Ok(Thermal {
        w,
        double_rate,
        pair_rate,
        probe_bunch_rate,
        trigger_bunch_rate,
        trigger_single_rate: trigger_single_rate.max(0.0),
        probe_single_rate: probe_single_rate.max(0.0),
        delay,
        separation: InverseCdf::new(0.0, dt, c2)?,
    })
}

/// Trigger (channel 0) and probe (channel 1) streams at 1 ps resolution.
pub fn simulate_source(model: &BiphotonModel, duration_s: f64, seed: u64) -> Result<(TagStream, TagStream)> {
    SourcePlan::new(model)?.simulate(duration_s, DEFAULT_RESOLUTION_S, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Waveform;

    fn exp_model(t: f64) -> BiphotonModel {
        BiphotonModel::new(Waveform::ExponentialDecay { tau_rise_s: 0.0, tau_decay_s: t }, 7.3e5, 1.4e6, 8.9e5).unwrap()
    }

    #[test]
    fn coherence_time_of_exponential() {
        // psi = exp(-t/2T)/sqrt(T): C(d) = exp(-|d|/2T), W = 2T
        let t = 30e-9;
        let plan = SourcePlan::new(&exp_model(t)).unwrap();
        assert!((plan.coherence_time() / (2.0 * t) - 1.0).abs() < 1e-3, "{}", plan.coherence_time());
    }

    #[test]
    fn same_seed_same_streams() {
        let m = exp_model(30e-9);
        let a = simulate_source(&m, 0.05, 42).unwrap();
        let b = simulate_source(&m, 0.05, 42).unwrap();
        assert_eq!(a, b);
        let c = simulate_source(&m, 0.05, 43).unwrap();
        assert_ne!(a.0.ticks, c.0.ticks);
    }

    #[test]
    fn rates_match_in_both_modes() {
        for mode in [EmissionStatistics::Thermal, EmissionStatistics::Poisson] {
            let m = exp_model(30e-9).with_emission(mode);
            let dur = 2.0;
            let (t, p) = simulate_source(&m, dur, 7).unwrap();
            // thermal counts fluctuate slightly more than Poisson; allow the bunching excess
            let tol = |n: f64| 6.0 * n.sqrt();
            assert!((t.len() as f64 - 1.4e6 * dur).abs() < tol(1.4e6 * dur), "{mode:?} {}", t.len());
            assert!((p.len() as f64 - 8.9e5 * dur).abs() < tol(8.9e5 * dur), "{mode:?} {}", p.len());
            t.check_sorted().unwrap();
            p.check_sorted().unwrap();
        }
    }

    #[test]
    fn excessive_gain_rejected() {
        let m = BiphotonModel::new(Waveform::ExponentialDecay { tau_rise_s: 0.0, tau_decay_s: 1e-6 }, 1e5, 1e6, 1e6)
            .unwrap();
        // 2 R_p W = 2 * 1e6 * 2e-6 = 4
        assert!(matches!(SourcePlan::new(&m), Err(Error::InvalidModel(_))));
        assert!(SourcePlan::new(&m.with_emission(EmissionStatistics::Poisson)).is_ok());
    }

    #[test]
    fn zero_duration_rejected() {
        assert!(simulate_source(&exp_model(30e-9), 0.0, 1).is_err());
    }
}

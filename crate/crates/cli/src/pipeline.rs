//! Source, fiber delay, conversion, detection and beam splitter, run in
//! independently seeded chunks.

use biphoton_core::convchan::{conversion_efficiency, transform_stream};
use biphoton_core::correlator::{
    cross_correlogram, heralded_autocorr, merge_streams, CorrelogramResult, HeraldedResult,
};
use biphoton_core::model::BiphotonModel;
use biphoton_core::purity::PurityParams;
use biphoton_core::simkit::rng::derive_seed;
use biphoton_core::simkit::{apply_detector, delay_stream, hbt_split, SourcePlan, TagStream, DEFAULT_RESOLUTION_S};
use biphoton_core::spectrum::{amplitude_spectrum, SpectralDensity, SpectralGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Detected streams of one chunk: trigger, probe arm 1, probe arm 2.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStreams {
    pub trigger: TagStream,
    pub probe1: TagStream,
    pub probe2: TagStream,
}

impl ChunkStreams {
    pub fn probe(&self) -> CliResult<TagStream> {
        Ok(merge_streams(&[self.probe1.clone(), self.probe2.clone()])?.with_channel(1))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub correlogram: CorrelogramResult,
    pub heralded: HeraldedResult,
}

/// Model-side numbers for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub conversion_efficiency: Option<f64>,
    pub purity: PurityParams,
    pub herald_tau_s: f64,
    pub peak_g2_ideal: f64,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: BiphotonModel,
    efficiency: Option<f64>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> CliResult<Self> {
        config.validate()?;
        let model = config.source.model()?;
        let efficiency = match &config.conversion {
            None => None,
            Some(c) => Some(match c.efficiency {
                Some(e) => e,
                None => {
                    let spectrum =
                        SpectralDensity::Sampled(amplitude_spectrum(&model, SpectralGrid::for_model(&model))?);
                    conversion_efficiency(&c.channel, &spectrum)?
                }
            }),
        };
        Ok(Self { config, model, efficiency })
    }

    pub fn conversion_efficiency(&self) -> Option<f64> {
        self.efficiency
    }

    /// Genuine over total detected counts in each channel, from the
    /// configured rates.
    pub fn expected_purity(&self) -> CliResult<PurityParams> {
        let c = &self.config;
        let det_t = &c.detectors.trigger;
        let det_p = &c.detectors.probe;
        let signal_t = det_t.efficiency * self.model.trigger_rate();
        let (signal_p, noise_p) = match (&c.conversion, self.efficiency) {
            (Some(conv), Some(eff)) => (
                det_p.efficiency * eff * self.model.probe_rate(),
                det_p.efficiency * conv.channel.added_noise_rate_hz + det_p.dark_rate_hz,
            ),
            _ => (det_p.efficiency * self.model.probe_rate(), det_p.dark_rate_hz),
        };
        let ratio = |s: f64, n: f64| if s + n > 0.0 { s / (s + n) } else { 1.0 };
        PurityParams::new(ratio(signal_t, det_t.dark_rate_hz), ratio(signal_p, noise_p))
            .map_err(|e| CliError::Schema(format!("configured channels carry no signal: {e}")))
    }

    pub fn herald_tau_s(&self) -> f64 {
        self.config.herald_tau_s.unwrap_or(self.model.peak_tau() + self.config.total_delay_s())
    }

    pub fn expectation(&self) -> CliResult<Expectation> {
        Ok(Expectation {
            conversion_efficiency: self.efficiency,
            purity: self.expected_purity()?,
            herald_tau_s: self.herald_tau_s(),
            peak_g2_ideal: self.model.peak_g2(),
        })
    }

    /// Ideal cross-correlation averaged over `[lo, hi)` in correlator
    /// coordinates, which include the configured delays.
    pub fn model_mean(&self, lo: f64, hi: f64) -> f64 {
        let d = self.config.total_delay_s();
        self.model.mean_cross_correlation(lo - d, hi - d)
    }

    /// `(index, seconds)` of every chunk; the last one may be shorter.
    pub fn chunks(&self) -> Vec<(u64, f64)> {
        let c = &self.config;
        let n = (c.duration_s / c.chunk_s - 1e-9).ceil().max(1.0) as u64;
        (0..n).map(|k| (k, (c.duration_s - k as f64 * c.chunk_s).min(c.chunk_s))).collect()
    }

    /// Sampler tables; only needed to simulate, and stricter than the model.
    pub fn source_plan(&self) -> CliResult<SourcePlan> {
        Ok(SourcePlan::new(&self.model)?)
    }

    pub fn run_chunk(&self, plan: &SourcePlan, index: u64, seconds: f64) -> CliResult<ChunkStreams> {
        let c = &self.config;
        let seed = derive_seed(c.seed, index);
        let stage = |k: u64| derive_seed(seed, k);
        let (trigger, probe) = plan.simulate(seconds, DEFAULT_RESOLUTION_S, seed)?;
        let mut probe = delay_stream(&probe, c.fiber_delay_s)?.stream;
        if let (Some(conv), Some(eff)) = (&c.conversion, self.efficiency) {
            probe = transform_stream(&conv.channel, &probe, eff, seconds, stage(1))?;
        }
        let trigger = apply_detector(&trigger, &c.detectors.trigger, seconds, stage(2))?;
        let probe = apply_detector(&probe, &c.detectors.probe, seconds, stage(3))?;
        let (probe1, probe2) = hbt_split(&probe, stage(4))?;
        Ok(ChunkStreams {
            trigger: trigger.with_channel(0),
            probe1: probe1.with_channel(1),
            probe2: probe2.with_channel(2),
        })
    }

    /// All chunks laid end to end on one tick axis.
    pub fn simulate(&self) -> CliResult<ChunkStreams> {
        let chunk_ticks = (self.config.chunk_s / DEFAULT_RESOLUTION_S).round() as u64;
        let plan = self.source_plan()?;
        let parts: Vec<ChunkStreams> =
            self.chunks().into_par_iter().map(|(k, s)| self.run_chunk(&plan, k, s)).collect::<CliResult<_>>()?;
        let join = |pick: fn(&ChunkStreams) -> &TagStream, channel: u8| {
            let mut ticks = Vec::with_capacity(parts.iter().map(|p| pick(p).len()).sum());
            for (k, p) in parts.iter().enumerate() {
                let offset = k as u64 * chunk_ticks;
                ticks.extend(pick(p).ticks.iter().map(|t| t + offset));
            }
            TagStream { channel, resolution_s: DEFAULT_RESOLUTION_S, duration_s: self.config.duration_s, ticks }
        };
        Ok(ChunkStreams {
            trigger: join(|p| &p.trigger, 0),
            probe1: join(|p| &p.probe1, 1),
            probe2: join(|p| &p.probe2, 2),
        })
    }

    /// Correlogram and heralded counts summed over chunks, so memory stays
    /// bounded by one chunk.
    pub fn analyze(&self) -> CliResult<Analysis> {
        let tau = self.herald_tau_s();
        let plan = self.source_plan()?;
        let mut total: Option<Analysis> = None;
        for (k, s) in self.chunks() {
            let st = self.run_chunk(&plan, k, s)?;
            let corr = cross_correlogram(&st.trigger, &st.probe()?, self.config.binning)?;
            let her = heralded_autocorr(&st.trigger, &st.probe1, &st.probe2, tau, self.config.herald_window_s)?;
            match total.as_mut() {
                None => total = Some(Analysis { correlogram: corr, heralded: her }),
                Some(a) => {
                    a.correlogram.accumulate(&corr)?;
                    a.heralded.accumulate(&her)?;
                }
            }
        }
        total.ok_or_else(|| CliError::Runtime("no chunks to analyse".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn short(mut cfg: PipelineConfig) -> PipelineConfig {
        cfg.duration_s = 0.05;
        cfg.chunk_s = 0.02;
        cfg
    }

    #[test]
    fn chunking_covers_the_duration() {
        let p = Pipeline::new(short(presets::fig2_source().unwrap())).unwrap();
        let c = p.chunks();
        assert_eq!(c.len(), 3);
        assert!((c.iter().map(|x| x.1).sum::<f64>() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn simulate_is_sorted_and_deterministic() {
        let p = Pipeline::new(short(presets::fig3_conversion().unwrap())).unwrap();
        let a = p.simulate().unwrap();
        for s in [&a.trigger, &a.probe1, &a.probe2] {
            s.check_sorted().unwrap();
        }
        assert_eq!(a, p.simulate().unwrap());
    }

    #[test]
    fn fig3_purities_match_the_targets() {
        let p = Pipeline::new(presets::fig3_conversion().unwrap()).unwrap();
        let pur = p.expected_purity().unwrap();
        assert!((pur.p_trigger - presets::TRIGGER_PURITY).abs() < 1e-12);
        assert!((pur.p_partner - presets::SIGNAL_PURITY).abs() < 1e-12);
        let eff = p.conversion_efficiency().unwrap();
        assert!((eff - presets::BROADBAND_EFFICIENCY).abs() < 1e-3, "{eff}");
    }

    #[test]
    fn fig2_is_pure() {
        let p = Pipeline::new(presets::fig2_source().unwrap()).unwrap();
        assert_eq!(p.expected_purity().unwrap(), PurityParams::UNIT);
        assert!((p.herald_tau_s() - p.model.peak_tau()).abs() < 1e-18);
    }
}

//! Subcommand bodies. Each returns plain data; printing lives in `lib.rs`.

use std::fs;
use std::path::{Path, PathBuf};

use biphoton_core::convchan::conversion_efficiency;
use biphoton_core::correlator::{
    cross_correlogram, heralded_autocorr, merge_streams, peak_stats, read_tagfile_path, write_correlogram_csv,
    write_tagfile_path, BinningSpec, CorrelogramResult, CorrelogramSummary, HeraldedResult,
};
use biphoton_core::model::{eval_conditional_autocorr, waveform_spectrum_fwhm};
use biphoton_core::purity::{
    apply_purity_conditional, apply_purity_cross, estimate_purity, invert_purity_cross, noise_rate_for_purity,
    PurityParams,
};
use biphoton_core::simkit::rng::derive_seed;
use biphoton_core::simkit::{TagStream, DEFAULT_RESOLUTION_S};
use biphoton_core::spectrum::{amplitude_spectrum, SpectralDensity, SpectralGrid};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::Pipeline;

pub const TRIGGER_FILE: &str = "trigger.ttag";
pub const PROBE1_FILE: &str = "probe1.ttag";
pub const PROBE2_FILE: &str = "probe2.ttag";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORRELOGRAM_FILE: &str = "correlogram.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Narrowband reference bandwidth of the optimised source.
pub const NARROWBAND_FWHM_HZ: f64 = 2.5e6;

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub channel: u8,
    pub tags: usize,
    pub sha256: String,
}

/// Everything needed to regenerate the files of one `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_sha256: String,
    pub seed: u64,
    pub duration_s: f64,
    pub wall_clock_s: f64,
    pub resolution_s: f64,
    pub conversion_efficiency: Option<f64>,
    pub expected_purity: PurityParams,
    pub herald_tau_s: f64,
    pub files: Vec<FileEntry>,
    pub config: PipelineConfig,
}

pub fn config_hash(cfg: &PipelineConfig) -> String {
    sha256_hex(serde_json::to_string(cfg).expect("config serializes").as_bytes())
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> CliResult<Manifest> {
    let pipe = Pipeline::new(cfg.clone())?;
    let streams = pipe.simulate()?;
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let mut files = Vec::new();
    for (name, s) in [(TRIGGER_FILE, &streams.trigger), (PROBE1_FILE, &streams.probe1), (PROBE2_FILE, &streams.probe2)]
    {
        let path = out.join(name);
        write_tagfile_path(&path, std::slice::from_ref(s))?;
        files.push(FileEntry {
            name: name.to_string(),
            channel: s.channel,
            tags: s.len(),
            sha256: sha256_hex(&fs::read(&path)?),
        });
    }
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256: config_hash(cfg),
        seed: cfg.seed,
        duration_s: cfg.duration_s,
        wall_clock_s: cfg.wall_clock_s(),
        resolution_s: DEFAULT_RESOLUTION_S,
        conversion_efficiency: pipe.conversion_efficiency(),
        expected_purity: pipe.expected_purity()?,
        herald_tau_s: pipe.herald_tau_s(),
        files,
        config: cfg.clone(),
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

/// Reads a tag file; several channels in one file are merged.
pub fn load_stream(path: &Path) -> CliResult<TagStream> {
    if !path.exists() {
        return Err(CliError::Schema(format!("missing channel file {}", path.display())));
    }
    let file = read_tagfile_path(path)?;
    if file.streams.is_empty() {
        return Ok(TagStream::empty(0, file.resolution_s, 0.0));
    }
    Ok(merge_streams(&file.streams)?)
}

/// Acquisition time: explicit value, else a manifest next to `near`, else
/// the last tick seen.
pub fn resolve_duration(explicit: Option<f64>, near: &Path, streams: &[&TagStream]) -> CliResult<f64> {
    if let Some(d) = explicit {
        if !(d > 0.0 && d.is_finite()) {
            return Err(CliError::Schema(format!("duration must be > 0, got {d}")));
        }
        return Ok(d);
    }
    if let Some(dir) = near.parent() {
        let m = dir.join(MANIFEST_FILE);
        if let Ok(text) = fs::read_to_string(&m) {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| CliError::Format(format!("{}: {e}", m.display())))?;
            if let Some(d) = v.get("duration_s").and_then(|d| d.as_f64()) {
                return Ok(d);
            }
        }
    }
    Ok(streams.iter().map(|s| s.max_tick() as f64 * s.resolution_s).fold(0.0, f64::max))
}

fn with_duration(mut s: TagStream, d: f64) -> TagStream {
    s.duration_s = d;
    s
}

pub struct CorrelateOutput {
    pub result: CorrelogramResult,
    pub summary: CorrelogramSummary,
}

pub fn correlate(
    trigger: &TagStream,
    probe: &TagStream,
    binning: BinningSpec,
    out: Option<&Path>,
) -> CliResult<CorrelateOutput> {
    let result = cross_correlogram(trigger, probe, binning)?;
    let peak = peak_stats(&result)?;
    let summary = CorrelogramSummary::new(&result, peak);
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let f = fs::File::create(dir.join(CORRELOGRAM_FILE))?;
        write_correlogram_csv(std::io::BufWriter::new(f), &result)?;
        fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    Ok(CorrelateOutput { result, summary })
}

pub fn correlate_files(
    trigger: &Path,
    probes: &[PathBuf],
    binning: BinningSpec,
    duration: Option<f64>,
    out: Option<&Path>,
) -> CliResult<CorrelateOutput> {
    if probes.is_empty() {
        return Err(CliError::Usage("at least one probe file is required".into()));
    }
    let t = load_stream(trigger)?;
    let ps: Vec<TagStream> = probes.iter().map(|p| load_stream(p)).collect::<CliResult<_>>()?;
    let p = merge_streams(&ps)?;
    let d = resolve_duration(duration, trigger, &[&t, &p])?;
    correlate(&with_duration(t, d), &with_duration(p, d), binning, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeraldReport {
    pub heralded: HeraldedResult,
    pub measured_peak_g2: f64,
    pub purity: PurityParams,
    /// Conditional autocorrelation predicted from the measured peak, treating
    /// it as noise free.
    pub theory_ideal_from_measured: f64,
    /// Purity-degraded prediction from the measured peak.
    pub theory_purity_from_measured: f64,
    /// Purity-degraded prediction from the configured model peak.
    pub theory_purity_from_model: Option<f64>,
}

pub struct HeraldInputs<'a> {
    pub trigger: &'a Path,
    pub p1: &'a Path,
    pub p2: &'a Path,
    pub tau_s: f64,
    pub window_s: f64,
    pub purity: PurityParams,
    pub binning: BinningSpec,
    pub duration_s: Option<f64>,
    pub model_peak_g2: Option<f64>,
}

pub fn herald_files(inp: &HeraldInputs) -> CliResult<HeraldReport> {
    if !(inp.window_s > 0.0 && inp.window_s.is_finite()) {
        return Err(CliError::Schema(format!("herald window must be > 0, got {}", inp.window_s)));
    }
    let t = load_stream(inp.trigger)?;
    let p1 = load_stream(inp.p1)?;
    let p2 = load_stream(inp.p2)?;
    let d = resolve_duration(inp.duration_s, inp.trigger, &[&t, &p1, &p2])?;
    let (t, p1, p2) = (with_duration(t, d), with_duration(p1, d), with_duration(p2, d));
    let heralded = heralded_autocorr(&t, &p1, &p2, inp.tau_s, inp.window_s)?;
    let probe = merge_streams(&[p1, p2])?;
    let corr = correlate(&t, &probe, inp.binning, None)?;
    let g = corr.summary.peak_g2.max(1.0);
    Ok(HeraldReport {
        heralded,
        measured_peak_g2: corr.summary.peak_g2,
        purity: inp.purity,
        theory_ideal_from_measured: eval_conditional_autocorr(g)?,
        theory_purity_from_measured: apply_purity_conditional(invert_purity_cross(g, inp.purity)?, inp.purity)?,
        theory_purity_from_model: inp.model_peak_g2.map(|g0| apply_purity_conditional(g0, inp.purity)).transpose()?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityRow {
    pub g_input: f64,
    pub p_trigger: f64,
    pub p_partner: f64,
    pub cross_measured: f64,
    pub cross_ideal: f64,
    pub conditional: f64,
}

/// Forward map by default; with `invert`, `g` is a measured peak.
pub fn purity_table(g: f64, params: PurityParams, invert: bool) -> CliResult<PurityRow> {
    let (ideal, measured) =
        if invert { (invert_purity_cross(g, params)?, g) } else { (g, apply_purity_cross(g, params)?) };
    Ok(PurityRow {
        g_input: g,
        p_trigger: params.p_trigger,
        p_partner: params.p_partner,
        cross_measured: measured,
        cross_ideal: ideal,
        conditional: apply_purity_conditional(ideal, params)?,
    })
}

pub fn purity_estimate(total: u64, background: u64) -> CliResult<f64> {
    Ok(estimate_purity(total, background)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Bandwidth,
    Purity,
    Efficiency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub predicted_efficiency: Option<f64>,
    pub p_trigger: f64,
    pub p_partner: f64,
    pub predicted_peak_g2: f64,
    pub predicted_heralded: f64,
    pub measured_peak_g2: Option<f64>,
    pub measured_peak_err: Option<f64>,
    pub measured_heralded: Option<f64>,
    pub measured_heralded_err: Option<f64>,
}

pub const SWEEP_HEADER: &str = "axis,value,predicted_efficiency,p_trigger,p_partner,predicted_peak_g2,predicted_heralded,measured_peak_g2,measured_peak_err,measured_heralded,measured_heralded_err";

impl SweepRow {
    pub fn csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        let axis = match self.axis {
            SweepAxis::Bandwidth => "bandwidth",
            SweepAxis::Purity => "purity",
            SweepAxis::Efficiency => "efficiency",
        };
        format!(
            "{axis},{:e},{},{:e},{:e},{:e},{:e},{},{},{},{}",
            self.value,
            opt(self.predicted_efficiency),
            self.p_trigger,
            self.p_partner,
            self.predicted_peak_g2,
            self.predicted_heralded,
            opt(self.measured_peak_g2),
            opt(self.measured_peak_err),
            opt(self.measured_heralded),
            opt(self.measured_heralded_err),
        )
    }
}

/// Configuration realising one grid point of a sweep.
pub fn sweep_point(base: &PipelineConfig, axis: SweepAxis, value: f64) -> CliResult<PipelineConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Bandwidth => {
            if cfg.conversion.is_none() {
                return Err(CliError::Usage("a bandwidth sweep needs a conversion stage in the config".into()));
            }
            if !(value > 0.0 && value.is_finite()) {
                return Err(CliError::Usage(format!("bandwidth must be > 0 Hz, got {value}")));
            }
            let model = cfg.source.model()?;
            let base_fwhm = waveform_spectrum_fwhm(&model)?.fwhm_hz;
            cfg.source.waveform = model.time_scaled(base_fwhm / value)?.waveform().clone();
        }
        SweepAxis::Purity => {
            if !(value > 0.0 && value <= 1.0) {
                return Err(CliError::Usage(format!("purity product must lie in (0, 1], got {value}")));
            }
            let p = value.sqrt();
            let model = cfg.source.model()?;
            let det_t = &mut cfg.detectors.trigger;
            det_t.dark_rate_hz = noise_rate_for_purity(det_t.efficiency * model.trigger_rate(), p)?;
            let eff = match cfg.conversion.as_mut() {
                Some(c) => {
                    c.channel.added_noise_rate_hz = 0.0;
                    Pipeline::new(base.clone())?.conversion_efficiency().unwrap_or(1.0)
                }
                None => 1.0,
            };
            let det_p = &mut cfg.detectors.probe;
            det_p.dark_rate_hz = noise_rate_for_purity(det_p.efficiency * eff * model.probe_rate(), p)?;
        }
        SweepAxis::Efficiency => {
            if !(0.0..=1.0).contains(&value) {
                return Err(CliError::Usage(format!("efficiency must lie in [0, 1], got {value}")));
            }
            match cfg.conversion.as_mut() {
                Some(c) => c.efficiency = Some(value),
                None => cfg.detectors.probe.efficiency = value,
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn predicted(pipe: &Pipeline) -> CliResult<(f64, f64, PurityParams)> {
    let pur = pipe.expected_purity()?;
    let tau = pipe.herald_tau_s();
    let w = pipe.config.herald_window_s;
    let g_window = pipe.model_mean(tau - 0.5 * w, tau + 0.5 * w);
    Ok((apply_purity_cross(pipe.model.peak_g2(), pur)?, apply_purity_conditional(g_window, pur)?, pur))
}

pub fn sweep(
    base: &PipelineConfig,
    axis: SweepAxis,
    grid: &[f64],
    run: bool,
    duration: Option<f64>,
) -> CliResult<Vec<SweepRow>> {
    grid.par_iter()
        .enumerate()
        .map(|(i, &value)| {
            let mut cfg = sweep_point(base, axis, value)?;
            cfg.seed = derive_seed(base.seed, i as u64);
            if let Some(d) = duration {
                cfg.duration_s = d;
                cfg.validate()?;
            }
            let pipe = Pipeline::new(cfg)?;
            let (peak, herald, pur) = predicted(&pipe)?;
            let mut row = SweepRow {
                axis,
                value,
                predicted_efficiency: pipe.conversion_efficiency(),
                p_trigger: pur.p_trigger,
                p_partner: pur.p_partner,
                predicted_peak_g2: peak,
                predicted_heralded: herald,
                measured_peak_g2: None,
                measured_peak_err: None,
                measured_heralded: None,
                measured_heralded_err: None,
            };
            if run {
                let a = pipe.analyze()?;
                let st = peak_stats(&a.correlogram)?;
                let i = a.correlogram.g2.iter().position(|&g| g == st.peak_g2).unwrap_or(0);
                row.measured_peak_g2 = Some(st.peak_g2);
                row.measured_peak_err = Some(a.correlogram.g2_err[i]);
                row.measured_heralded = a.heralded.g_conditional;
                row.measured_heralded_err = a.heralded.g_err;
            }
            Ok(row)
        })
        .collect()
}

/// Model-side summary of a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub pair_rate_hz: f64,
    pub trigger_rate_hz: f64,
    pub probe_rate_hz: f64,
    pub pairing_ratio_probe: f64,
    pub pairing_ratio_trigger: f64,
    pub peak_g2: f64,
    pub peak_tau_s: f64,
    pub intensity_fwhm_s: f64,
    pub spectral_fwhm_hz: f64,
    pub spectral_fwhm_resolution_limited: bool,
    pub conditional_at_peak: f64,
    pub total_delay_s: f64,
    pub window_order: Option<f64>,
    pub conversion_efficiency: Option<f64>,
    pub narrowband_efficiency: Option<f64>,
    pub p_trigger: f64,
    pub p_partner: f64,
    pub predicted_peak_g2: f64,
    pub predicted_heralded: f64,
    pub herald_tau_s: f64,
    pub herald_window_s: f64,
    pub duration_s: f64,
    pub wall_clock_s: f64,
}

pub fn report(cfg: &PipelineConfig) -> CliResult<Report> {
    let pipe = Pipeline::new(cfg.clone())?;
    let m = &pipe.model;
    let (rp, rt) = m.pairing_ratios()?;
    let width = waveform_spectrum_fwhm(m)?;
    let narrowband_efficiency = match &cfg.conversion {
        Some(c) => {
            let narrow = m.time_scaled(width.fwhm_hz / NARROWBAND_FWHM_HZ)?;
            let spectrum = SpectralDensity::Sampled(amplitude_spectrum(&narrow, SpectralGrid::for_model(&narrow))?);
            Some(conversion_efficiency(&c.channel, &spectrum)?)
        }
        None => None,
    };
    let (peak, herald, pur) = predicted(&pipe)?;
    Ok(Report {
        pair_rate_hz: m.pair_rate(),
        trigger_rate_hz: m.trigger_rate(),
        probe_rate_hz: m.probe_rate(),
        pairing_ratio_probe: rp,
        pairing_ratio_trigger: rt,
        peak_g2: m.peak_g2(),
        peak_tau_s: m.peak_tau(),
        intensity_fwhm_s: m.intensity_fwhm(),
        spectral_fwhm_hz: width.fwhm_hz,
        spectral_fwhm_resolution_limited: width.resolution_limited,
        conditional_at_peak: eval_conditional_autocorr(m.peak_g2())?,
        total_delay_s: cfg.total_delay_s(),
        window_order: cfg.conversion.as_ref().map(|c| c.channel.window_order),
        conversion_efficiency: pipe.conversion_efficiency(),
        narrowband_efficiency,
        p_trigger: pur.p_trigger,
        p_partner: pur.p_partner,
        predicted_peak_g2: peak,
        predicted_heralded: herald,
        herald_tau_s: pipe.herald_tau_s(),
        herald_window_s: cfg.herald_window_s,
        duration_s: cfg.duration_s,
        wall_clock_s: cfg.wall_clock_s(),
    })
}

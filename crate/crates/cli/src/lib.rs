//! Command-line front end for simulating and analysing heralded biphoton
//! experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod presets;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use biphoton_core::correlator::BinningSpec;
use biphoton_core::purity::PurityParams;
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::SweepAxis;
use config::PipelineConfig;
use error::{CliError, CliResult};
use pipeline::Pipeline;

/// Environment variable fixing the worker thread count.
pub const THREADS_ENV: &str = "BIPHOTON_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "biphoton-lab", version, about = "Simulate and analyse heralded biphoton correlations")]
pub struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Built-in configuration: fig2-source or fig3-conversion.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Output directory; overrides the configured one.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed; overrides the configured one.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct BinningArgs {
    #[arg(long)]
    pub bin_width_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tau_min_s: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tau_max_s: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate time-tag files for the configured pipeline.
    Simulate,
    /// Histogram trigger-probe delays.
    Correlate {
        #[arg(long)]
        trigger: PathBuf,
        #[arg(long, required = true)]
        probe: Vec<PathBuf>,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Conditional autocorrelation of the probe given a trigger.
    Herald {
        #[arg(long)]
        trigger: PathBuf,
        #[arg(long)]
        p1: PathBuf,
        #[arg(long)]
        p2: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        tau_s: Option<f64>,
        #[arg(long)]
        window_s: Option<f64>,
        #[arg(long)]
        p_trigger: Option<f64>,
        #[arg(long)]
        p_partner: Option<f64>,
        #[command(flatten)]
        binning: BinningArgs,
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Purity corrections, or a purity estimate from counts.
    Purity {
        /// Cross-correlation peak; ideal unless --invert.
        #[arg(long)]
        g: Option<f64>,
        #[arg(long)]
        invert: bool,
        #[arg(long)]
        p_trigger: Option<f64>,
        #[arg(long)]
        p_partner: Option<f64>,
        /// Total counts for an estimate.
        #[arg(long, requires = "background")]
        total: Option<u64>,
        /// Background counts for an estimate.
        #[arg(long, requires = "total")]
        background: Option<u64>,
    },
    /// Predicted, and optionally simulated, figures of merit over a grid.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma separated values: Hz for bandwidth, purity products, or
        /// efficiencies.
        #[arg(long, default_value = "")]
        grid: String,
        #[arg(long)]
        simulate: bool,
        #[arg(long)]
        duration_s: Option<f64>,
    },
    /// Analytic summary of a configuration.
    Report,
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads();
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        // Already initialised when embedded; the existing pool is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_config(cli: &Cli) -> CliResult<Option<PipelineConfig>> {
    let cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--config and --preset are exclusive".into())),
        (Some(path), None) => Some(PipelineConfig::load(path)?),
        (None, Some(name)) => Some(presets::preset(name)?),
        (None, None) => None,
    };
    Ok(cfg.map(|mut c| {
        if let Some(s) = cli.seed {
            c.seed = s;
        }
        c
    }))
}

fn require_config(cli: &Cli) -> CliResult<PipelineConfig> {
    load_config(cli)?.ok_or_else(|| CliError::Usage("this command needs --config or --preset".into()))
}

fn resolve_binning(cfg: Option<&PipelineConfig>, args: &BinningArgs) -> CliResult<BinningSpec> {
    let mut b = cfg.map_or(BinningSpec { bin_width_s: 1e-9, tau_min_s: -100e-9, tau_max_s: 500e-9 }, |c| c.binning);
    if let Some(v) = args.bin_width_s {
        b.bin_width_s = v;
    }
    if let Some(v) = args.tau_min_s {
        b.tau_min_s = v;
    }
    if let Some(v) = args.tau_max_s {
        b.tau_max_s = v;
    }
    b.validate().map_err(|e| CliError::Schema(format!("binning: {e}")))?;
    Ok(b)
}

fn out_dir(cli: &Cli, cfg: Option<&PipelineConfig>) -> PathBuf {
    cli.out.clone().or_else(|| cfg.map(|c| c.output_dir.clone())).unwrap_or_else(|| PathBuf::from("out"))
}

fn purity_from(cfg: Option<&PipelineConfig>, pt: Option<f64>, pp: Option<f64>) -> CliResult<PurityParams> {
    let base = match cfg {
        Some(c) => Pipeline::new(c.clone())?.expected_purity()?,
        None => PurityParams::UNIT,
    };
    PurityParams::new(pt.unwrap_or(base.p_trigger), pp.unwrap_or(base.p_partner))
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn emit_json<W: Write, T: serde::Serialize>(w: &mut W, v: &T) -> CliResult<()> {
    writeln!(w, "{}", serde_json::to_string_pretty(v)?)?;
    Ok(())
}

/// CSV of a flat JSON object: a header row and one value row.
fn emit_flat_csv<W: Write, T: serde::Serialize>(w: &mut W, v: &T) -> CliResult<()> {
    let value = serde_json::to_value(v)?;
    let obj = value.as_object().ok_or_else(|| CliError::Runtime("expected an object".into()))?;
    let mut keys = Vec::new();
    let mut vals = Vec::new();
    flatten("", obj, &mut keys, &mut vals);
    writeln!(w, "{}", keys.join(","))?;
    writeln!(w, "{}", vals.join(","))?;
    Ok(())
}

fn flatten(
    prefix: &str,
    obj: &serde_json::Map<String, serde_json::Value>,
    keys: &mut Vec<String>,
    vals: &mut Vec<String>,
) {
    for (k, v) in obj {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            serde_json::Value::Object(inner) => flatten(&key, inner, keys, vals),
            serde_json::Value::Null => {
                keys.push(key);
                vals.push(String::new());
            }
            serde_json::Value::String(s) => {
                keys.push(key);
                vals.push(s.clone());
            }
            other => {
                keys.push(key);
                vals.push(other.to_string());
            }
        }
    }
}

pub fn execute<W: Write>(cli: &Cli, w: &mut W) -> CliResult<()> {
    match &cli.command {
        Command::Simulate => {
            let cfg = require_config(cli)?;
            let out = out_dir(cli, Some(&cfg));
            let manifest = commands::simulate(&cfg, &out)?;
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(w, &manifest)?,
                Format::Csv => {
                    writeln!(w, "name,channel,tags,sha256")?;
                    for f in &manifest.files {
                        writeln!(w, "{},{},{},{}", f.name, f.channel, f.tags, f.sha256)?;
                    }
                }
            }
        }
        Command::Correlate { trigger, probe, binning, duration_s } => {
            let cfg = load_config(cli)?;
            let b = resolve_binning(cfg.as_ref(), binning)?;
            let out = out_dir(cli, cfg.as_ref());
            let res = commands::correlate_files(trigger, probe, b, *duration_s, Some(&out))?;
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(w, &res.summary)?,
                Format::Csv => biphoton_core::correlator::write_correlogram_csv(&mut *w, &res.result)?,
            }
        }
        Command::Herald { trigger, p1, p2, tau_s, window_s, p_trigger, p_partner, binning, duration_s } => {
            let cfg = load_config(cli)?;
            let pipe = cfg.as_ref().map(|c| Pipeline::new(c.clone())).transpose()?;
            let tau = tau_s
                .or_else(|| pipe.as_ref().map(|p| p.herald_tau_s()))
                .ok_or_else(|| CliError::Usage("--tau-s is required without a config".into()))?;
            let window = window_s
                .or_else(|| cfg.as_ref().map(|c| c.herald_window_s))
                .ok_or_else(|| CliError::Usage("--window-s is required without a config".into()))?;
            let report = commands::herald_files(&commands::HeraldInputs {
                trigger,
                p1,
                p2,
                tau_s: tau,
                window_s: window,
                purity: purity_from(cfg.as_ref(), *p_trigger, *p_partner)?,
                binning: resolve_binning(cfg.as_ref(), binning)?,
                duration_s: *duration_s,
                model_peak_g2: pipe.as_ref().map(|p| p.model.peak_g2()),
            })?;
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(w, &report)?,
                Format::Csv => emit_flat_csv(w, &report)?,
            }
        }
        Command::Purity { g, invert, p_trigger, p_partner, total, background } => {
            if let (Some(t), Some(b)) = (total, background) {
                let p = commands::purity_estimate(*t, *b)?;
                match cli.format.unwrap_or(Format::Json) {
                    Format::Json => emit_json(w, &serde_json::json!({ "purity": p }))?,
                    Format::Csv => writeln!(w, "purity\n{p}")?,
                }
                return Ok(());
            }
            let cfg = load_config(cli)?;
            let g = g.ok_or_else(|| CliError::Usage("--g or --total/--background is required".into()))?;
            let params = purity_from(cfg.as_ref(), *p_trigger, *p_partner)?;
            let row = commands::purity_table(g, params, *invert)?;
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(w, &row)?,
                Format::Csv => emit_flat_csv(w, &row)?,
            }
        }
        Command::Sweep { axis, grid, simulate, duration_s } => {
            let cfg = require_config(cli)?;
            let rows = commands::sweep(&cfg, *axis, &parse_grid(grid)?, *simulate, *duration_s)?;
            let mut csv = String::from(commands::SWEEP_HEADER);
            csv.push('\n');
            for r in &rows {
                csv.push_str(&r.csv());
                csv.push('\n');
            }
            if let Some(dir) = &cli.out {
                write_file(dir, &format!("sweep-{}.csv", axis_name(*axis)), &csv)?;
            }
            match cli.format.unwrap_or(Format::Csv) {
                Format::Json => emit_json(w, &rows)?,
                Format::Csv => write!(w, "{csv}")?,
            }
        }
        Command::Report => {
            let cfg = require_config(cli)?;
            let r = commands::report(&cfg)?;
            match cli.format.unwrap_or(Format::Json) {
                Format::Json => emit_json(w, &r)?,
                Format::Csv => emit_flat_csv(w, &r)?,
            }
        }
    }
    Ok(())
}

fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<f64>().map_err(|e| CliError::Usage(format!("grid value {v:?}: {e}"))))
        .collect()
}

fn axis_name(a: SweepAxis) -> &'static str {
    match a {
        SweepAxis::Bandwidth => "bandwidth",
        SweepAxis::Purity => "purity",
        SweepAxis::Efficiency => "efficiency",
    }
}

fn write_file(dir: &Path, name: &str, text: &str) -> CliResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

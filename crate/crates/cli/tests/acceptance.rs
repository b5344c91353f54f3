//! End-to-end acceptance checks. Each test writes one PASS/FAIL line to
//! stderr, bypassing output capture, then asserts.

use std::io::Write;
use std::sync::OnceLock;

use biphoton_core::convchan::conversion_efficiency;
use biphoton_core::correlator::{
    cross_correlogram, heralded_autocorr, peak_stats, write_correlogram_csv, BinningSpec, CorrelogramResult,
};
use biphoton_core::model::{eval_conditional_autocorr, waveform_spectrum_fwhm};
use biphoton_core::purity::{apply_purity_conditional, apply_purity_cross, noise_rate_for_purity, PurityParams};
use biphoton_core::simkit::{TagStream, DEFAULT_RESOLUTION_S};
use biphoton_core::spectrum::{amplitude_spectrum, SpectralDensity, SpectralGrid};
use biphoton_lab::commands::{self, SweepAxis};
use biphoton_lab::config::PipelineConfig;
use biphoton_lab::pipeline::{Analysis, Pipeline};
use biphoton_lab::presets;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{tag}] criterion {n} {name}: {detail}");
    assert!(pass, "criterion {n} {name}: {detail}");
}

/// Oracle for the heralded autocorrelation at purities (pt, pp).
fn heralded_oracle(g: f64, pt: f64, pp: f64) -> f64 {
    let num = 1.0 + pp * pp + 2.0 * pt * pp * (1.0 + pp) * (g - 1.0);
    let den = (pt * pp * (g - 1.0) + 1.0).powi(2);
    num / den
}

fn ideal_heralded_oracle(g: f64) -> f64 {
    (4.0 * g - 2.0) / (g * g)
}

#[test]
fn criterion_1_conditional_autocorrelation() {
    let g = eval_conditional_autocorr(18.0).unwrap();
    let exact = 70.0 / 324.0;
    let pass = (g - exact).abs() < 1e-12 && (g * 100.0).round() / 100.0 == 0.22;
    verdict(1, "conditional autocorrelation at g=18", pass, format!("{g:.15} vs 70/324 = {exact:.15}"));
}

#[test]
fn criterion_2_purity_degraded_peak() {
    let p = PurityParams::new(0.89, 0.54).unwrap();
    let g = apply_purity_cross(18.0, p).unwrap();
    let pass = (g - 9.1702).abs() < 1e-12 && g.round() == 9.0;
    verdict(2, "purity-degraded peak", pass, format!("{g:.15} vs 9.1702"));
}

#[test]
fn criterion_3_unit_purity_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let g = rng.random_range(1.0..=100.0);
        let reduced = apply_purity_conditional(g, PurityParams::UNIT).unwrap();
        let direct = eval_conditional_autocorr(g).unwrap();
        worst = worst
            .max((reduced - direct).abs())
            .max((reduced - ideal_heralded_oracle(g)).abs())
            .max((reduced - heralded_oracle(g, 1.0, 1.0)).abs());
    }
    verdict(3, "unit-purity reduction", worst < 1e-12, format!("max deviation {worst:.3e} over 1000 draws"));
}

struct Run {
    pipe: Pipeline,
    analysis: Analysis,
}

fn fig2_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let pipe = Pipeline::new(presets::fig2_source().unwrap()).unwrap();
        let analysis = pipe.analyze().unwrap();
        Run { pipe, analysis }
    })
}

fn fig3_run() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let pipe = Pipeline::new(presets::fig3_conversion().unwrap()).unwrap();
        let analysis = pipe.analyze().unwrap();
        Run { pipe, analysis }
    })
}

/// Index of the bin holding `tau`.
fn bin_of(r: &CorrelogramResult, tau: f64) -> usize {
    ((tau - r.binning.tau_min_s) / r.binning.bin_width_s).floor() as usize
}

/// Measured g2 at the model peak bin, its error, and the purity-degraded
/// model average over the same bin.
fn peak_bin(pipe: &Pipeline, r: &CorrelogramResult, purity: PurityParams) -> (f64, f64, f64) {
    let i = bin_of(r, pipe.model.peak_tau() + pipe.config.total_delay_s());
    let lo = r.binning.tau_min_s + i as f64 * r.binning.bin_width_s;
    let want = apply_purity_cross(pipe.model_mean(lo, lo + r.binning.bin_width_s), purity).unwrap();
    (r.g2[i], r.g2_err[i], want)
}

/// Mean g2 and its error over bins with centres in `[lo, hi)`.
fn band_mean(r: &CorrelogramResult, lo: f64, hi: f64) -> (f64, f64) {
    let idx: Vec<usize> = (0..r.g2.len()).filter(|&i| (lo..hi).contains(&r.binning.center(i))).collect();
    let counts: u64 = idx.iter().map(|&i| r.counts[i]).sum();
    let expected = r.singles_a as f64 * r.singles_b as f64 * r.binning.bin_width_s / r.duration_s * idx.len() as f64;
    (counts as f64 / expected, (counts as f64).sqrt() / expected)
}

#[test]
fn criterion_4_source_correlogram() {
    let run = fig2_run();
    let r = &run.analysis.correlogram;
    let (g, err, want) = peak_bin(&run.pipe, r, PurityParams::UNIT);
    let z_model = (g - want) / err;
    let z_18 = (g - presets::PEAK_G2) / err;
    let (base, base_err) = band_mean(r, -100e-9, -10e-9);
    let z_base = (base - 1.0) / base_err;
    let pass = run.pipe.config.duration_s >= 30.0 && z_model.abs() < 3.0 && z_18.abs() < 3.0 && z_base.abs() < 4.0;
    verdict(
        4,
        "source correlogram",
        pass,
        format!(
            "peak {g:.4} ± {err:.4} (bin model {want:.4}, z {z_model:+.2}; vs 18 z {z_18:+.2}); baseline {base:.5} ± {base_err:.5} (z {z_base:+.2}); heralded {:.4} ± {:.4}",
            run.analysis.heralded.g_conditional.unwrap_or(f64::NAN),
            run.analysis.heralded.g_err.unwrap_or(f64::NAN),
        ),
    );
}

/// Tags of one fig3 chunk, run lossless and noiseless, equal the fig2 tags
/// shifted by the configured delay.
fn tick_exact_shift() -> (bool, i64) {
    let base = presets::fig2_source().unwrap();
    let mut conv = presets::fig3_conversion().unwrap();
    conv.seed = base.seed;
    conv.detectors = base.detectors.clone();
    let c = conv.conversion.as_mut().unwrap();
    c.efficiency = Some(1.0);
    c.channel.added_noise_rate_hz = 0.0;
    let (a, b) = (Pipeline::new(base).unwrap(), Pipeline::new(conv).unwrap());
    let shift = (b.config.total_delay_s() / DEFAULT_RESOLUTION_S).round() as i64;
    let seconds = 0.05;
    let before = a.run_chunk(&a.source_plan().unwrap(), 0, seconds).unwrap();
    let after = b.run_chunk(&b.source_plan().unwrap(), 0, seconds).unwrap();
    let max = (seconds / DEFAULT_RESOLUTION_S).round() as i64;
    let moved = |s: &TagStream| -> Vec<u64> {
        s.ticks.iter().map(|&t| t as i64 + shift).filter(|&t| t <= max).map(|t| t as u64).collect()
    };
    let ok = before.trigger == after.trigger
        && moved(&before.probe1) == after.probe1.ticks
        && moved(&before.probe2) == after.probe2.ticks
        && !after.probe1.is_empty();
    (ok, shift)
}

/// Bin lag maximising the overlap of the two excess correlations.
fn best_lag(a: &CorrelogramResult, b: &CorrelogramResult, max_lag: usize) -> usize {
    let score = |lag: usize| -> f64 {
        a.g2.iter().enumerate().filter_map(|(i, ga)| b.g2.get(i + lag).map(|gb| (ga - 1.0) * (gb - 1.0))).sum()
    };
    (0..=max_lag).max_by(|&x, &y| score(x).total_cmp(&score(y))).unwrap()
}

#[test]
fn criterion_5_converted_correlogram() {
    let pre = fig2_run();
    let run = fig3_run();
    let pur = run.pipe.expected_purity().unwrap();
    let r = &run.analysis.correlogram;
    let (g, err, want) = peak_bin(&run.pipe, r, pur);
    let z_model = (g - want) / err;
    let z_target = (g - 9.1702) / err;

    let fwhm_pre = peak_stats(&pre.analysis.correlogram).unwrap().fwhm_s;
    let fwhm = peak_stats(r).unwrap().fwhm_s;
    let fwhm_ratio = fwhm / fwhm_pre;

    let (exact, shift_ticks) = tick_exact_shift();
    assert_eq!(pre.analysis.correlogram.binning.tau_min_s, r.binning.tau_min_s);
    let lag_s = best_lag(&pre.analysis.correlogram, r, 300) as f64 * r.binning.bin_width_s;

    let h = &run.analysis.heralded;
    let (hg, herr) = (h.g_conditional.unwrap(), h.g_err.unwrap());
    let tau = run.pipe.herald_tau_s();
    let w = run.pipe.config.herald_window_s;
    let h_model = apply_purity_conditional(run.pipe.model_mean(tau - 0.5 * w, tau + 0.5 * w), pur).unwrap();
    let z_h = (hg - h_model) / herr;
    let z_h_peak = (hg - 0.3146) / herr;

    let pass = z_model.abs() < 3.0
        && z_target.abs() < 3.0
        && (fwhm_ratio - 1.0).abs() < 0.05
        && exact
        && shift_ticks == 155_000
        && (lag_s - 155e-9).abs() < 1e-15
        && z_h.abs() < 3.0
        && z_h_peak.abs() < 3.0;
    verdict(
        5,
        "converted correlogram",
        pass,
        format!(
            "peak {g:.4} ± {err:.4} (bin model {want:.4} z {z_model:+.2}; vs 9.1702 z {z_target:+.2}); FWHM {:.2} ns vs {:.2} ns pre ({:+.2}%); shift {} ticks exact={exact}, lag scan {:.0} ns; heralded {hg:.4} ± {herr:.4} (window model {h_model:.4} z {z_h:+.2}; vs 0.3146 z {z_h_peak:+.2})",
            fwhm * 1e9,
            fwhm_pre * 1e9,
            (fwhm_ratio - 1.0) * 100.0,
            shift_ticks,
            lag_s * 1e9,
        ),
    );
}

#[test]
fn criterion_6_spectral_matching() {
    let cfg = presets::fig3_conversion().unwrap();
    let channel = cfg.conversion.as_ref().unwrap().channel.clone();
    let model = cfg.source.model().unwrap();
    let spectrum = |m: &biphoton_core::model::BiphotonModel| {
        SpectralDensity::Sampled(amplitude_spectrum(m, SpectralGrid::for_model(m)).unwrap())
    };
    let broad = conversion_efficiency(&channel, &spectrum(&model)).unwrap();
    let fwhm = waveform_spectrum_fwhm(&model).unwrap().fwhm_hz;
    let narrow_model = model.time_scaled(fwhm / commands::NARROWBAND_FWHM_HZ).unwrap();
    let narrow_fwhm = waveform_spectrum_fwhm(&narrow_model).unwrap().fwhm_hz;
    let narrow = conversion_efficiency(&channel, &spectrum(&narrow_model)).unwrap();
    let pass = (narrow - 0.794).abs() <= 0.026 && (broad - 0.55).abs() <= 0.03;
    verdict(
        6,
        "spectral matching",
        pass,
        format!(
            "{:.2} MHz spectrum -> {narrow:.4} (0.794 ± 0.026); broadband {:.2} MHz -> {broad:.4} (0.55 ± 0.03)",
            narrow_fwhm / 1e6,
            fwhm / 1e6
        ),
    );
}

const RES: f64 = 1e-12;

fn stream(channel: u8, ticks: Vec<u64>) -> TagStream {
    let duration = (ticks.last().copied().unwrap_or(0) + 1) as f64 * RES;
    TagStream::new(channel, RES, duration, ticks).unwrap()
}

fn random_ticks(rng: &mut ChaCha8Rng, n: usize, span: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).map(|_| rng.random_range(0..span)).collect();
    v.sort_unstable();
    v
}

fn brute_histogram(a: &[u64], b: &[u64], width: i64, min: i64, bins: usize) -> Vec<u64> {
    let mut h = vec![0u64; bins];
    for &x in a {
        for &y in b {
            let d = y as i64 - x as i64 - min;
            if d >= 0 && d < width * bins as i64 {
                h[(d / width) as usize] += 1;
            }
        }
    }
    h
}

fn brute_herald(t: &[u64], p1: &[u64], p2: &[u64], start: i64, width: i64) -> [u64; 3] {
    let hit = |p: &[u64], s: i64| p.iter().any(|&x| (x as i64) >= s && (x as i64) < s + width);
    let mut out = [0u64; 3];
    for &x in t {
        let s = x as i64 + start;
        let (h1, h2) = (hit(p1, s), hit(p2, s));
        out[0] += h1 as u64;
        out[1] += h2 as u64;
        out[2] += (h1 && h2) as u64;
    }
    out
}

#[test]
fn criterion_7_brute_force_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = Vec::new();
    let mut largest = 0;
    for case in 0..200 {
        let total = if case < 10 { 10_000 } else { rng.random_range(2..=10_000usize) };
        largest = largest.max(total);
        let na = rng.random_range(1..total);
        let span = rng.random_range(1_000..5_000_000u64);
        let a = random_ticks(&mut rng, na, span);
        let b = random_ticks(&mut rng, total - na, span);
        let width = rng.random_range(1..500i64);
        let bins = rng.random_range(1..400usize);
        let min = rng.random_range(-(width * bins as i64)..width * 10);
        let spec =
            BinningSpec::new(width as f64 * RES, min as f64 * RES, (min + width * bins as i64) as f64 * RES).unwrap();
        let got = cross_correlogram(&stream(0, a.clone()), &stream(1, b.clone()), spec).unwrap();
        let hist_ok = got.counts == brute_histogram(&a, &b, width, min, bins);

        let cut = rng.random_range(0..=b.len());
        let (p1, p2) = b.split_at(cut);
        let window = rng.random_range(1..10_000i64);
        let tau = rng.random_range(-10_000..10_000i64);
        let h = heralded_autocorr(
            &stream(0, a.clone()),
            &stream(1, p1.to_vec()),
            &stream(2, p2.to_vec()),
            tau as f64 * RES,
            window as f64 * RES,
        )
        .unwrap();
        let herald_ok = [h.n_tp1, h.n_tp2, h.n_triple] == brute_herald(&a, p1, p2, tau - window / 2, window)
            && h.n_trigger == a.len() as u64;
        if !(hist_ok && herald_ok) {
            mismatches.push(case);
        }
    }
    verdict(
        7,
        "brute-force equivalence",
        mismatches.is_empty(),
        format!("200 instances up to {largest} tags, mismatching cases {mismatches:?}"),
    );
}

/// Fig2 source rescaled to peak `g` through the pair rate, with detector
/// dark counts setting the channel purities.
fn grid_config(g: f64, pt: f64, pp: f64, index: u64) -> PipelineConfig {
    let mut cfg = presets::fig2_source().unwrap();
    let model = cfg.source.model().unwrap();
    let (rt, rp) = (model.trigger_rate(), model.probe_rate());
    cfg.source.pair_rate_hz = (g - 1.0) * rt * rp / model.peak_density();
    cfg.detectors.trigger.dark_rate_hz = noise_rate_for_purity(rt, pt).unwrap();
    cfg.detectors.probe.dark_rate_hz = noise_rate_for_purity(rp, pp).unwrap();
    cfg.duration_s = 8.0;
    cfg.chunk_s = 4.0;
    cfg.seed = 800 + index;
    cfg
}

#[test]
fn criterion_8_purity_grid() {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut index = 0;
    for g in [5.0, 10.0, 18.0] {
        for pt in [0.5, 0.9] {
            for pp in [0.5, 0.9] {
                let pipe = Pipeline::new(grid_config(g, pt, pp, index)).unwrap();
                index += 1;
                let pur = pipe.expected_purity().unwrap();
                assert!((pur.p_trigger - pt).abs() < 1e-12 && (pur.p_partner - pp).abs() < 1e-12);
                assert!((pipe.model.peak_g2() - g).abs() < 1e-9);
                let a = pipe.analyze().unwrap();
                let (m, err, want) = peak_bin(&pipe, &a.correlogram, pur);
                let z_peak = (m - want) / err;
                let tau = pipe.herald_tau_s();
                let w = pipe.config.herald_window_s;
                let g_win = pipe.model_mean(tau - 0.5 * w, tau + 0.5 * w);
                let h_want = heralded_oracle(g_win, pt, pp);
                let (h, herr) = (a.heralded.g_conditional.unwrap(), a.heralded.g_err.unwrap());
                let z_h = (h - h_want) / herr;
                let ok = z_peak.abs() < 3.0 && z_h.abs() < 3.0;
                pass &= ok;
                lines.push(format!(
                    "g={g} Pt={pt} Pp={pp}: peak {m:.3}±{err:.3} vs {want:.3} (z {z_peak:+.2}), heralded {h:.3}±{herr:.3} vs {h_want:.3} (z {z_h:+.2}){}",
                    if ok { "" } else { " <-" }
                ));
            }
        }
    }
    verdict(8, "purity grid", pass, format!("12 points\n    {}", lines.join("\n    ")));
}

fn outputs_under(threads: usize, cfg: &PipelineConfig) -> Vec<Vec<u8>> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let dir = tempfile::tempdir().unwrap();
        commands::simulate(cfg, dir.path()).unwrap();
        let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
        let mut out: Vec<Vec<u8>> =
            [commands::TRIGGER_FILE, commands::PROBE1_FILE, commands::PROBE2_FILE, commands::MANIFEST_FILE]
                .iter()
                .map(|n| read(n))
                .collect();
        let res = commands::correlate_files(
            &dir.path().join(commands::TRIGGER_FILE),
            &[dir.path().join(commands::PROBE1_FILE), dir.path().join(commands::PROBE2_FILE)],
            cfg.binning,
            None,
            Some(dir.path()),
        )
        .unwrap();
        let mut csv = Vec::new();
        write_correlogram_csv(&mut csv, &res.result).unwrap();
        out.push(csv);
        out.push(read(commands::SUMMARY_FILE));
        let rows = commands::sweep(cfg, SweepAxis::Purity, &[1.0, 0.81, 0.25], true, Some(0.2)).unwrap();
        out.push(rows.iter().map(|r| r.csv() + "\n").collect::<String>().into_bytes());
        out
    })
}

#[test]
fn criterion_9_determinism() {
    let mut cfg = presets::fig3_conversion().unwrap();
    cfg.duration_s = 2.0;
    cfg.chunk_s = 0.25;
    let single = outputs_under(1, &cfg);
    let threads = std::thread::available_parallelism().map_or(4, |n| n.get()).max(4);
    let parallel = outputs_under(threads, &cfg);
    let names =
        ["trigger.ttag", "probe1.ttag", "probe2.ttag", "manifest.json", "correlogram.csv", "summary.json", "sweep.csv"];
    let differing: Vec<&str> =
        names.iter().zip(single.iter().zip(&parallel)).filter(|(_, (a, b))| a != b).map(|(n, _)| *n).collect();
    let bytes: usize = single.iter().map(Vec::len).sum();
    verdict(
        9,
        "determinism",
        differing.is_empty(),
        format!("1 vs {threads} threads, {bytes} bytes compared, differing outputs {differing:?}"),
    );
}

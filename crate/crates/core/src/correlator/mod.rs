//! Coincidence analysis on sorted time-tag streams.

mod output;
mod tagfile;

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simkit::TagStream;

pub use output::{write_correlogram_csv, CorrelogramSummary};
pub use tagfile::{read_tagfile, read_tagfile_path, write_tagfile, write_tagfile_path, TagFile, TTAG_VERSION};

/// Upper bound on the number of histogram bins.
pub const MAX_BINS: usize = 10_000_000;

const CHUNK: usize = 1 << 16;

/// Histogram range and bin width, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinningSpec {
    pub bin_width_s: f64,
    pub tau_min_s: f64,
    pub tau_max_s: f64,
}

/// Binning resolved to integer ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TickBinning {
    pub width: i64,
    pub min: i64,
    pub bins: usize,
}

impl TickBinning {
    fn span(&self) -> i64 {
        self.width * self.bins as i64
    }
}

fn whole_ticks(seconds: f64, resolution_s: f64, what: &str) -> Result<i64> {
    let x = seconds / resolution_s;
    let r = x.round();
    if (x - r).abs() > 1e-6 * r.abs().max(1.0) {
        return Err(Error::Config(format!("{what} = {seconds} s is not a whole number of {resolution_s} s ticks")));
    }
    Ok(r as i64)
}

impl BinningSpec {
    pub fn new(bin_width_s: f64, tau_min_s: f64, tau_max_s: f64) -> Result<Self> {
        let b = Self { bin_width_s, tau_min_s, tau_max_s };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_s > 0.0 && self.bin_width_s.is_finite()) {
            return Err(Error::Config(format!("bin width must be > 0, got {}", self.bin_width_s)));
        }
        if !(self.tau_min_s < self.tau_max_s) || !self.tau_min_s.is_finite() || !self.tau_max_s.is_finite() {
            return Err(Error::Config(format!("need tau_min < tau_max, got [{}, {}]", self.tau_min_s, self.tau_max_s)));
        }
        let n = (self.tau_max_s - self.tau_min_s) / self.bin_width_s;
        let r = n.round();
        if (n - r).abs() > 1e-6 * r.max(1.0) {
            return Err(Error::Config(format!(
                "range [{}, {}] is not a whole number of {} s bins",
                self.tau_min_s, self.tau_max_s, self.bin_width_s
            )));
        }
        if r as usize > MAX_BINS {
            return Err(Error::Config(format!("{r} bins exceeds the limit of {MAX_BINS}")));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        ((self.tau_max_s - self.tau_min_s) / self.bin_width_s).round() as usize
    }

    /// Centre of bin `i`.
    pub fn center(&self, i: usize) -> f64 {
        self.tau_min_s + (i as f64 + 0.5) * self.bin_width_s
    }

    pub fn resolve(&self, resolution_s: f64) -> Result<TickBinning> {
        self.validate()?;
        let width = whole_ticks(self.bin_width_s, resolution_s, "bin width")?;
        let min = whole_ticks(self.tau_min_s, resolution_s, "tau_min")?;
        if width < 1 {
            return Err(Error::Config("bin width is below the tag resolution".into()));
        }
        Ok(TickBinning { width, min, bins: self.bins() })
    }
}

/// Coincidence histogram with its normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelogramResult {
    pub binning: BinningSpec,
    pub counts: Vec<u64>,
    pub singles_a: u64,
    pub singles_b: u64,
    pub duration_s: f64,
    pub g2: Vec<f64>,
    /// `g2 / sqrt(counts)`; empty bins carry the error of a single count.
    pub g2_err: Vec<f64>,
}

impl CorrelogramResult {
    pub fn from_counts(
        binning: BinningSpec,
        counts: Vec<u64>,
        singles_a: u64,
        singles_b: u64,
        duration_s: f64,
    ) -> Self {
        let mut r = Self { binning, counts, singles_a, singles_b, duration_s, g2: Vec::new(), g2_err: Vec::new() };
        r.normalise();
        r
    }

    fn normalise(&mut self) {
        let denom = self.singles_a as f64 * self.singles_b as f64 * self.binning.bin_width_s;
        let scale = if denom > 0.0 { self.duration_s / denom } else { 0.0 };
        self.g2 = self.counts.iter().map(|&c| c as f64 * scale).collect();
        self.g2_err =
            self.counts.iter().map(|&c| if c > 0 { c as f64 * scale / (c as f64).sqrt() } else { scale }).collect();
    }

    /// Adds an independent run with the same binning: counts, singles and
    /// durations are summed and the normalisation recomputed.
    pub fn accumulate(&mut self, other: &CorrelogramResult) -> Result<()> {
        if self.binning != other.binning {
            return Err(Error::Config("cannot accumulate correlograms with different binning".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.singles_a += other.singles_a;
        self.singles_b += other.singles_b;
        self.duration_s += other.duration_s;
        self.normalise();
        Ok(())
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn taus(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.binning.center(i)).collect()
    }
}

fn same_resolution(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// Histogram of `t_b - t_a` over all pairs, counted with a sliding window on
/// chunks of `a` processed in parallel.
pub fn cross_correlogram(a: &TagStream, b: &TagStream, binning: BinningSpec) -> Result<CorrelogramResult> {
    a.check_sorted()?;
    b.check_sorted()?;
    if !same_resolution(a.resolution_s, b.resolution_s) {
        return Err(Error::Config(format!("stream resolutions differ: {} vs {}", a.resolution_s, b.resolution_s)));
    }
    let tb = binning.resolve(a.resolution_s)?;
    let counts = a
        .ticks
        .par_chunks(CHUNK)
        .fold(
            || vec![0u64; tb.bins],
            |mut hist, chunk| {
                histogram_chunk(chunk, &b.ticks, tb, &mut hist);
                hist
            },
        )
        .reduce(
            || vec![0u64; tb.bins],
            |mut x, y| {
                x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
                x
            },
        );
    Ok(CorrelogramResult::from_counts(binning, counts, a.len() as u64, b.len() as u64, a.duration_s.max(b.duration_s)))
}

fn histogram_chunk(chunk: &[u64], b: &[u64], tb: TickBinning, hist: &mut [u64]) {
    let Some(&first) = chunk.first() else { return };
    let lo_of = |t: u64| t as i64 + tb.min;
    let mut lo = b.partition_point(|&x| (x as i64) < lo_of(first));
    for &t in chunk {
        let start = lo_of(t);
        while lo < b.len() && (b[lo] as i64) < start {
            lo += 1;
        }
        let end = start + tb.span();
        let mut j = lo;
        while j < b.len() && (b[j] as i64) < end {
            let k = ((b[j] as i64 - start) / tb.width) as usize;
            hist[k] += 1;
            j += 1;
        }
    }
}

/// Three-fold heralded coincidence counts for one delay and window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeraldedResult {
    pub window_s: f64,
    pub tau_s: f64,
    pub n_trigger: u64,
    pub n_tp1: u64,
    pub n_tp2: u64,
    pub n_triple: u64,
    /// `None` when a denominator is zero.
    pub g_conditional: Option<f64>,
    pub g_err: Option<f64>,
}

impl HeraldedResult {
    fn from_counts(window_s: f64, tau_s: f64, n: [u64; 4]) -> Self {
        let [n_trigger, n_tp1, n_tp2, n_triple] = n;
        let (g, err) = if n_trigger > 0 && n_tp1 > 0 && n_tp2 > 0 {
            let scale = n_trigger as f64 / (n_tp1 as f64 * n_tp2 as f64);
            let g = n_triple as f64 * scale;
            let err = if n_triple > 0 { g / (n_triple as f64).sqrt() } else { scale };
            (Some(g), Some(err))
        } else {
            (None, None)
        };
        Self { window_s, tau_s, n_trigger, n_tp1, n_tp2, n_triple, g_conditional: g, g_err: err }
    }

    /// Sums counts of an independent run with the same delay and window.
    pub fn accumulate(&mut self, other: &HeraldedResult) -> Result<()> {
        if self.window_s != other.window_s || self.tau_s != other.tau_s {
            return Err(Error::Config("cannot accumulate heralded results with different windows".into()));
        }
        *self = Self::from_counts(
            self.window_s,
            self.tau_s,
            [
                self.n_trigger + other.n_trigger,
                self.n_tp1 + other.n_tp1,
                self.n_tp2 + other.n_tp2,
                self.n_triple + other.n_triple,
            ],
        );
        Ok(())
    }
}

/// For every trigger at `t`, records whether each probe channel has at least
/// one tag in the window of `w` ticks starting at `t + tau - floor(w/2)`, with
/// `tau` and `w` rounded to whole ticks.
pub fn heralded_autocorr(
    trigger: &TagStream,
    p1: &TagStream,
    p2: &TagStream,
    tau_s: f64,
    window_s: f64,
) -> Result<HeraldedResult> {
    for s in [trigger, p1, p2] {
        s.check_sorted()?;
    }
    if !(window_s > 0.0 && window_s.is_finite()) || !tau_s.is_finite() {
        return Err(Error::Config(format!("window must be > 0, got {window_s}")));
    }
    let res = trigger.resolution_s;
    if !same_resolution(res, p1.resolution_s) || !same_resolution(res, p2.resolution_s) {
        return Err(Error::Config("stream resolutions differ".into()));
    }
    let width = ((window_s / res).round() as i64).max(1);
    let offset = (tau_s / res).round() as i64 - width / 2;
    let counts = trigger
        .ticks
        .par_chunks(CHUNK)
        .map(|chunk| herald_chunk(chunk, &p1.ticks, &p2.ticks, offset, width))
        .reduce(|| [0u64; 3], |x, y| [x[0] + y[0], x[1] + y[1], x[2] + y[2]]);
    Ok(HeraldedResult::from_counts(window_s, tau_s, [trigger.len() as u64, counts[0], counts[1], counts[2]]))
}

fn herald_chunk(chunk: &[u64], p1: &[u64], p2: &[u64], offset: i64, width: i64) -> [u64; 3] {
    let Some(&first) = chunk.first() else { return [0; 3] };
    let start0 = first as i64 + offset;
    let mut j1 = p1.partition_point(|&x| (x as i64) < start0);
    let mut j2 = p2.partition_point(|&x| (x as i64) < start0);
    let mut out = [0u64; 3];
    for &t in chunk {
        let start = t as i64 + offset;
        let end = start + width;
        while j1 < p1.len() && (p1[j1] as i64) < start {
            j1 += 1;
        }
        while j2 < p2.len() && (p2[j2] as i64) < start {
            j2 += 1;
        }
        let h1 = j1 < p1.len() && (p1[j1] as i64) < end;
        let h2 = j2 < p2.len() && (p2[j2] as i64) < end;
        out[0] += h1 as u64;
        out[1] += h2 as u64;
        out[2] += (h1 && h2) as u64;
    }
    out
}

/// Location, height and width of the correlation peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakStats {
    pub peak_g2: f64,
    pub peak_tau_s: f64,
    pub fwhm_s: f64,
}

/// Peak of a correlogram. The maximum must exceed the accidental level by at
/// least five times the median per-bin error.
pub fn peak_stats(result: &CorrelogramResult) -> Result<PeakStats> {
    if result.counts.iter().all(|&c| c == 0) {
        return Err(Error::Domain("no coincidences".into()));
    }
    let g = &result.g2;
    let mut ip = 0;
    for (i, &v) in g.iter().enumerate() {
        if v > g[ip] {
            ip = i;
        }
    }
    let peak = g[ip];
    let mut errs: Vec<f64> =
        result.counts.iter().zip(&result.g2_err).filter(|(c, _)| **c > 0).map(|(_, e)| *e).collect();
    errs.sort_by(|a, b| a.total_cmp(b));
    let median = errs[errs.len() / 2];
    if peak < 1.0 + 5.0 * median {
        return Err(Error::Domain(format!("no peak above baseline: max g2 {peak:.4} below 1 + 5 x {median:.4}")));
    }
    let half = 1.0 + 0.5 * (peak - 1.0);
    let bw = result.binning.bin_width_s;
    let c = |i: usize| result.binning.center(i);
    let left = match (0..ip).rev().find(|&i| g[i] <= half) {
        Some(i) => c(i) + (half - g[i]) / (g[i + 1] - g[i]) * bw,
        None => c(0),
    };
    let right = match (ip + 1..g.len()).find(|&i| g[i] <= half) {
        Some(i) => c(i - 1) + (g[i - 1] - half) / (g[i - 1] - g[i]) * bw,
        None => c(g.len() - 1),
    };
    Ok(PeakStats { peak_g2: peak, peak_tau_s: c(ip), fwhm_s: (right - left).max(bw) })
}

/// K-way merge; equal ticks keep the order of the input list. The output
/// takes the channel of the first input.
pub fn merge_streams(streams: &[TagStream]) -> Result<TagStream> {
    let Some(first) = streams.first() else {
        return Err(Error::Config("nothing to merge".into()));
    };
    for s in streams {
        if !same_resolution(s.resolution_s, first.resolution_s) {
            return Err(Error::Config(format!("mixed resolutions: {} vs {}", s.resolution_s, first.resolution_s)));
        }
        s.check_sorted()?;
    }
    let total = streams.iter().map(|s| s.len()).sum();
    let mut ticks = Vec::with_capacity(total);
    let mut pos = vec![0usize; streams.len()];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> =
        streams.iter().enumerate().filter_map(|(k, s)| s.ticks.first().map(|&t| Reverse((t, k)))).collect();
    while let Some(Reverse((t, k))) = heap.pop() {
        ticks.push(t);
        pos[k] += 1;
        if let Some(&next) = streams[k].ticks.get(pos[k]) {
            heap.push(Reverse((next, k)));
        }
    }
    let duration_s = streams.iter().map(|s| s.duration_s).fold(0.0, f64::max);
    Ok(TagStream { channel: first.channel, resolution_s: first.resolution_s, duration_s, ticks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(ticks: Vec<u64>) -> TagStream {
        TagStream::new(0, 1e-12, 1e-3, ticks).unwrap()
    }

    #[test]
    fn two_tag_example() {
        let a = s(vec![0]);
        let b = s(vec![5000, 7000]);
        let r = cross_correlogram(&a, &b, BinningSpec::new(1e-9, 0.0, 10e-9).unwrap()).unwrap();
        let mut expect = vec![0; 10];
        expect[5] = 1;
        expect[7] = 1;
        assert_eq!(r.counts, expect);
        assert!((r.binning.center(5) - 5.5e-9).abs() < 1e-18);
    }

    #[test]
    fn negative_delays_land_in_low_bins() {
        let a = s(vec![10_000]);
        let b = s(vec![7_000, 10_000, 12_500]);
        let r = cross_correlogram(&a, &b, BinningSpec::new(1e-9, -5e-9, 5e-9).unwrap()).unwrap();
        assert_eq!(r.counts, vec![0, 0, 1, 0, 0, 1, 0, 1, 0, 0]);
    }

    #[test]
    fn misaligned_binning_rejected() {
        let a = s(vec![0]);
        assert!(matches!(
            cross_correlogram(&a, &a, BinningSpec::new(1.5e-12, 0.0, 3e-12).unwrap()),
            Err(Error::Config(_))
        ));
        assert!(BinningSpec::new(1e-9, 0.0, 2.5e-9).is_err());
        assert!(BinningSpec::new(1e-12, 0.0, 1.0).is_err());
        assert!(BinningSpec::new(1e-9, 1e-9, 1e-9).is_err());
    }

    #[test]
    fn mismatched_resolution_rejected() {
        let a = s(vec![0]);
        let b = TagStream::new(0, 1e-9, 1e-3, vec![1]).unwrap();
        assert!(matches!(cross_correlogram(&a, &b, BinningSpec::new(1e-9, 0.0, 1e-8).unwrap()), Err(Error::Config(_))));
        assert!(matches!(merge_streams(&[a, b]), Err(Error::Config(_))));
    }

    #[test]
    fn unsorted_rejected() {
        let bad = TagStream { channel: 0, resolution_s: 1e-12, duration_s: 1.0, ticks: vec![3, 1] };
        let ok = s(vec![1]);
        let bins = BinningSpec::new(1e-9, 0.0, 1e-8).unwrap();
        assert!(matches!(cross_correlogram(&bad, &ok, bins), Err(Error::Ordering(_))));
        assert!(matches!(heralded_autocorr(&ok, &bad, &ok, 0.0, 1e-9), Err(Error::Ordering(_))));
    }

    #[test]
    fn six_tag_herald() {
        // triggers at 0 and 100 ns; only the first has hits in both arms
        let t = s(vec![0, 100_000]);
        let p1 = s(vec![10_000, 109_000]);
        let p2 = s(vec![10_500, 150_000]);
        let r = heralded_autocorr(&t, &p1, &p2, 10e-9, 2e-9).unwrap();
        assert_eq!((r.n_trigger, r.n_tp1, r.n_tp2, r.n_triple), (2, 2, 1, 1));
        assert_eq!(r.g_conditional, Some(1.0));
        // window edges: start inclusive, end exclusive
        let r = heralded_autocorr(&s(vec![0]), &s(vec![9_000]), &s(vec![11_000]), 10e-9, 2e-9).unwrap();
        assert_eq!((r.n_tp1, r.n_tp2), (1, 0));
        assert_eq!(r.g_conditional, None);
    }

    #[test]
    fn empty_arm_is_undefined() {
        let r = heralded_autocorr(&s(vec![0, 5]), &s(vec![10]), &s(vec![]), 0.0, 1e-9).unwrap();
        assert_eq!(r.g_conditional, None);
        assert!(heralded_autocorr(&s(vec![0]), &s(vec![]), &s(vec![]), 0.0, 0.0).is_err());
    }

    fn synthetic(g2: Vec<f64>, bw: f64) -> CorrelogramResult {
        // counts large enough that the noise threshold is small
        let n = g2.len();
        let counts: Vec<u64> = g2.iter().map(|v| (v * 1e6) as u64).collect();
        let mut r =
            CorrelogramResult::from_counts(BinningSpec::new(bw, 0.0, bw * n as f64).unwrap(), counts, 1, 1, 1.0);
        r.g2 = g2;
        r.g2_err = vec![1e-3; n];
        r
    }

    #[test]
    fn triangle_fwhm() {
        // peak 5 at bin 4, linear flanks of slope 1 per bin: half level 3 is
        // crossed two bins either side of the peak centre
        let g = vec![1.0, 1.0, 2.0, 4.0, 5.0, 4.0, 2.0, 1.0, 1.0];
        let st = peak_stats(&synthetic(g, 1e-9)).unwrap();
        assert_eq!(st.peak_g2, 5.0);
        assert!((st.peak_tau_s - 4.5e-9).abs() < 1e-18);
        // left crossing between 2 (bin 2) and 4 (bin 3): 2.5 + 0.5; right mirrors it
        assert!((st.fwhm_s - 3e-9).abs() < 1e-18, "{}", st.fwhm_s);
    }

    #[test]
    fn spike_floor_and_tie() {
        let st = peak_stats(&synthetic(vec![1.0, 1.0, 9.0, 1.0, 9.0, 1.0], 2e-9)).unwrap();
        assert!((st.fwhm_s - 2e-9).abs() < 1e-18);
        assert!((st.peak_tau_s - 5e-9).abs() < 1e-18);
    }

    #[test]
    fn flat_has_no_peak() {
        let r =
            CorrelogramResult::from_counts(BinningSpec::new(1.0, 0.0, 10.0).unwrap(), vec![100; 10], 100, 100, 100.0);
        assert!(matches!(peak_stats(&r), Err(Error::Domain(_))));
        let empty = CorrelogramResult::from_counts(BinningSpec::new(1.0, 0.0, 10.0).unwrap(), vec![0; 10], 0, 0, 1.0);
        assert!(matches!(peak_stats(&empty), Err(Error::Domain(m)) if m.contains("no coincidences")));
    }

    #[test]
    fn merge_examples() {
        let m = merge_streams(&[s(vec![1, 3]), s(vec![2, 4])]).unwrap();
        assert_eq!(m.ticks, vec![1, 2, 3, 4]);
        let x = s(vec![5, 6, 9]);
        assert_eq!(merge_streams(&[x.clone(), s(vec![])]).unwrap(), x);
        assert!(merge_streams(&[]).is_err());
    }

    #[test]
    fn accumulate_sums() {
        let b = BinningSpec::new(1.0, 0.0, 2.0).unwrap();
        let mut a = CorrelogramResult::from_counts(b, vec![1, 2], 10, 10, 1.0);
        a.accumulate(&CorrelogramResult::from_counts(b, vec![3, 4], 10, 10, 1.0)).unwrap();
        assert_eq!(a.counts, vec![4, 6]);
        assert!((a.g2[1] - 6.0 * 2.0 / 400.0).abs() < 1e-15);
    }
}

//! Event-level Monte Carlo of the source, detection and beam-splitting chain.

pub mod rng;
mod source;
mod table;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use source::{simulate_source, SourcePlan};
pub use table::InverseCdf;

use self::rng::{stage_rng, Stage};

/// One picosecond.
pub const DEFAULT_RESOLUTION_S: f64 = 1e-12;

/// A single detection event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub ticks: u64,
    pub channel: u8,
}

/// Sorted detection times of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TagStream {
    pub channel: u8,
    pub resolution_s: f64,
    pub duration_s: f64,
    pub ticks: Vec<u64>,
}

impl TagStream {
    /// Validates ordering and that every tick lies within the duration.
    pub fn new(channel: u8, resolution_s: f64, duration_s: f64, ticks: Vec<u64>) -> Result<Self> {
        if !(resolution_s > 0.0 && resolution_s.is_finite()) {
            return Err(Error::Config(format!("resolution must be > 0, got {resolution_s}")));
        }
        if !(duration_s >= 0.0 && duration_s.is_finite()) {
            return Err(Error::Config(format!("duration must be >= 0, got {duration_s}")));
        }
        let s = Self { channel, resolution_s, duration_s, ticks };
        s.check_sorted()?;
        if let Some(&last) = s.ticks.last() {
            if last > s.max_tick() {
                return Err(Error::Ordering(format!(
                    "tick {last} lies beyond the stream duration ({} ticks)",
                    s.max_tick()
                )));
            }
        }
        Ok(s)
    }

    pub fn empty(channel: u8, resolution_s: f64, duration_s: f64) -> Self {
        Self { channel, resolution_s, duration_s, ticks: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn max_tick(&self) -> u64 {
        (self.duration_s / self.resolution_s).round() as u64
    }

    pub fn with_channel(mut self, channel: u8) -> Self {
        self.channel = channel;
        self
    }

    pub fn check_sorted(&self) -> Result<()> {
        if let Some(i) = self.ticks.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Ordering(format!(
                "channel {} tags out of order at index {}: {} after {}",
                self.channel,
                i + 1,
                self.ticks[i + 1],
                self.ticks[i]
            )));
        }
        Ok(())
    }

    /// Delay expressed in whole ticks of this stream.
    pub fn ticks_for(&self, seconds: f64) -> i64 {
        (seconds / self.resolution_s).round() as i64
    }
}

/// Detector efficiency and dark count rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub efficiency: f64,
    #[serde(default)]
    pub dark_rate_hz: f64,
    #[serde(default)]
    pub label: String,
}

impl DetectorSpec {
    pub fn ideal(label: &str) -> Self {
        Self { efficiency: 1.0, dark_rate_hz: 0.0, label: label.to_string() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::Config(format!(
                "detector {:?}: efficiency must lie in [0, 1], got {}",
                self.label, self.efficiency
            )));
        }
        if !(self.dark_rate_hz >= 0.0 && self.dark_rate_hz.is_finite()) {
            return Err(Error::Config(format!(
                "detector {:?}: dark rate must be >= 0, got {}",
                self.label, self.dark_rate_hz
            )));
        }
        Ok(())
    }
}

/// Homogeneous Poisson arrival ticks on `[0, duration]`.
pub fn poisson_ticks<R: Rng>(rate_hz: f64, duration_s: f64, resolution_s: f64, rng: &mut R) -> Vec<u64> {
    if !(rate_hz > 0.0) || !(duration_s > 0.0) {
        return Vec::new();
    }
    let end = duration_s / resolution_s;
    let scale = 1.0 / (rate_hz * resolution_s);
    let mut out = Vec::with_capacity((rate_hz * duration_s * 1.01 + 16.0) as usize);
    let mut t = 0.0f64;
    loop {
        let gap: f64 = Exp1.sample(rng);
        t += gap * scale;
        if t > end {
            break;
        }
        out.push(t as u64);
    }
    out
}

/// Merge of two sorted tick vectors.
pub(crate) fn merge_sorted(a: &[u64], b: &[u64]) -> Vec<u64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Keeps each tag independently with probability `p`.
pub(crate) fn thin<R: Rng>(ticks: &[u64], p: f64, rng: &mut R) -> Vec<u64> {
    if p >= 1.0 {
        return ticks.to_vec();
    }
    if p <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity((ticks.len() as f64 * p * 1.01) as usize + 16);
    out.extend(ticks.iter().copied().filter(|_| rng.random::<f64>() < p));
    out
}

/// Independent thinning at the detector efficiency plus Poisson dark counts.
pub fn apply_detector(stream: &TagStream, det: &DetectorSpec, duration_s: f64, seed: u64) -> Result<TagStream> {
    stream.check_sorted()?;
    det.validate()?;
    let mut rng = stage_rng(seed, Stage::Detector);
    let kept = thin(&stream.ticks, det.efficiency, &mut rng);
    let mut dark = poisson_ticks(det.dark_rate_hz, duration_s, stream.resolution_s, &mut rng);
    let max = (duration_s / stream.resolution_s).round() as u64;
    dark.retain(|&t| t <= max);
    Ok(TagStream {
        channel: stream.channel,
        resolution_s: stream.resolution_s,
        duration_s: stream.duration_s.max(duration_s),
        ticks: merge_sorted(&kept, &dark),
    })
}

/// Routes each tag to one of two outputs with equal probability.
pub fn hbt_split(stream: &TagStream, seed: u64) -> Result<(TagStream, TagStream)> {
    stream.check_sorted()?;
    let mut rng = stage_rng(seed, Stage::Split);
    let half = stream.len() / 2 + 16;
    let (mut a, mut b) = (Vec::with_capacity(half), Vec::with_capacity(half));
    for &t in &stream.ticks {
        if rng.random::<bool>() {
            a.push(t);
        } else {
            b.push(t);
        }
    }
    let mk = |ticks| TagStream {
        channel: stream.channel,
        resolution_s: stream.resolution_s,
        duration_s: stream.duration_s,
        ticks,
    };
    Ok((mk(a), mk(b)))
}

/// Result of shifting a stream in time.
#[derive(Debug, Clone, PartialEq)]
pub struct Delayed {
    pub stream: TagStream,
    /// Tags that fell before zero or past the duration.
    pub dropped: usize,
}

/// Shifts every tag by `round(delay / resolution)` ticks, dropping tags that
/// leave `[0, duration]`.
pub fn delay_stream(stream: &TagStream, delay_s: f64) -> Result<Delayed> {
    stream.check_sorted()?;
    if !delay_s.is_finite() {
        return Err(Error::Config("delay must be finite".into()));
    }
    let shift = stream.ticks_for(delay_s);
    let max = stream.max_tick() as i128;
    let ticks: Vec<u64> = stream
        .ticks
        .iter()
        .filter_map(|&t| {
            let s = t as i128 + shift as i128;
            (0..=max).contains(&s).then_some(s as u64)
        })
        .collect();
    let dropped = stream.len() - ticks.len();
    Ok(Delayed { stream: TagStream { ticks, ..stream.clone() }, dropped })
}

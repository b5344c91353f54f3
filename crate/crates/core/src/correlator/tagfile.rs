//! Binary time-tag files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TTAG" | version: u16 | resolution_fs: u64 | channels: u8 | { channel: u8, ticks: u64 }*
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::simkit::TagStream;

pub const TTAG_MAGIC: &[u8; 4] = b"TTAG";
pub const TTAG_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 8 + 1;
const RECORD_LEN: usize = 9;

/// Contents of a tag file: one stream per channel present in the records.
#[derive(Debug, Clone, PartialEq)]
pub struct TagFile {
    pub resolution_s: f64,
    pub channel_count: u8,
    pub streams: Vec<TagStream>,
}

fn resolution_fs(resolution_s: f64) -> Result<u64> {
    let fs = (resolution_s * 1e15).round();
    if !(fs >= 1.0) || (fs - resolution_s * 1e15).abs() > 1e-6 * fs {
        return Err(Error::Format(format!("resolution {resolution_s} s is not a whole number of femtoseconds")));
    }
    Ok(fs as u64)
}

/// Writes the streams interleaved in tick order; equal ticks follow channel
/// id, then input order.
pub fn write_tagfile<W: Write>(mut w: W, streams: &[TagStream]) -> Result<()> {
    let res = streams.first().map_or(1e-12, |s| s.resolution_s);
    if streams.iter().any(|s| (s.resolution_s - res).abs() > 1e-12 * res) {
        return Err(Error::Config("streams in one tag file must share a resolution".into()));
    }
    if streams.len() > u8::MAX as usize {
        return Err(Error::Config("too many channels for one tag file".into()));
    }
    for s in streams {
        s.check_sorted()?;
    }
    w.write_all(TTAG_MAGIC)?;
    w.write_all(&TTAG_VERSION.to_le_bytes())?;
    w.write_all(&resolution_fs(res)?.to_le_bytes())?;
    w.write_all(&[streams.len() as u8])?;
    let mut order: Vec<usize> = (0..streams.len()).collect();
    order.sort_by_key(|&k| streams[k].channel);
    let mut pos = vec![0usize; streams.len()];
    let mut rec = [0u8; RECORD_LEN];
    loop {
        let mut best: Option<(u64, usize)> = None;
        for &k in &order {
            if let Some(&t) = streams[k].ticks.get(pos[k]) {
                if best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, k));
                }
            }
        }
        let Some((t, k)) = best else { break };
        rec[0] = streams[k].channel;
        rec[1..].copy_from_slice(&t.to_le_bytes());
        w.write_all(&rec)?;
        pos[k] += 1;
    }
    w.flush()?;
    Ok(())
}

pub fn write_tagfile_path(path: &Path, streams: &[TagStream]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    write_tagfile(BufWriter::with_capacity(1 << 20, f), streams)
}

/// Parses a tag file. Stream durations are set to the last tick; callers
/// that know the acquisition time should overwrite them.
pub fn read_tagfile<R: Read>(mut r: R) -> Result<TagFile> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    if buf.len() < HEADER_LEN || &buf[..4] != TTAG_MAGIC {
        return Err(Error::Format("missing TTAG magic".into()));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != TTAG_VERSION {
        return Err(Error::Format(format!("unsupported TTAG version {version}")));
    }
    let fs = u64::from_le_bytes(buf[6..14].try_into().unwrap());
    if fs == 0 {
        return Err(Error::Format("zero resolution".into()));
    }
    let resolution_s = fs as f64 * 1e-15;
    let channel_count = buf[14];
    let body = &buf[HEADER_LEN..];
    if body.len() % RECORD_LEN != 0 {
        return Err(Error::Format(format!(
            "truncated record at byte {}",
            HEADER_LEN + body.len() / RECORD_LEN * RECORD_LEN
        )));
    }
    let mut streams: Vec<TagStream> = Vec::new();
    for rec in body.chunks_exact(RECORD_LEN) {
        let ch = rec[0];
        let t = u64::from_le_bytes(rec[1..].try_into().unwrap());
        let idx = match streams.iter().position(|s| s.channel == ch) {
            Some(i) => i,
            None => {
                if streams.len() >= channel_count as usize {
                    return Err(Error::Format(format!("more channels than the header declares ({channel_count})")));
                }
                streams.push(TagStream::empty(ch, resolution_s, 0.0));
                streams.len() - 1
            }
        };
        let s = &mut streams[idx];
        if s.ticks.last().is_some_and(|&last| t < last) {
            return Err(Error::Format(format!("channel {ch} ticks decrease at {t}")));
        }
        s.ticks.push(t);
    }
    for s in &mut streams {
        s.duration_s = s.ticks.last().map_or(0.0, |&t| t as f64 * resolution_s);
    }
    streams.sort_by_key(|s| s.channel);
    Ok(TagFile { resolution_s, channel_count, streams })
}

pub fn read_tagfile_path(path: &Path) -> Result<TagFile> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_tagfile(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let a = TagStream::new(2, 1e-12, 1e-6, vec![5, 9]).unwrap();
        let b = TagStream::new(0, 1e-12, 1e-6, vec![5, 7]).unwrap();
        let mut bytes = Vec::new();
        write_tagfile(&mut bytes, &[a.clone(), b.clone()]).unwrap();
        assert_eq!(&bytes[..4], b"TTAG");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(u64::from_le_bytes(bytes[6..14].try_into().unwrap()), 1000);
        assert_eq!(bytes[14], 2);
        assert_eq!(bytes.len(), 15 + 4 * 9);
        // tick 5 appears on both channels: channel 0 first
        assert_eq!(bytes[15], 0);
        assert_eq!(bytes[24], 2);
        let f = read_tagfile(&bytes[..]).unwrap();
        assert_eq!(f.streams.len(), 2);
        assert_eq!(f.streams[0].ticks, b.ticks);
        assert_eq!(f.streams[1].ticks, a.ticks);
        assert_eq!(f.streams[1].channel, 2);
    }

    #[test]
    fn bad_headers() {
        assert!(matches!(read_tagfile(&b"NOPE\x01\x00"[..]), Err(Error::Format(_))));
        let mut bytes = Vec::new();
        write_tagfile(&mut bytes, &[]).unwrap();
        bytes[4] = 9;
        assert!(matches!(read_tagfile(&bytes[..]), Err(Error::Format(m)) if m.contains("version")));
    }

    #[test]
    fn decreasing_ticks_rejected() {
        let mut bytes = Vec::new();
        write_tagfile(&mut bytes, &[TagStream::new(0, 1e-12, 1.0, vec![1]).unwrap()]).unwrap();
        bytes.push(0);
        bytes.extend_from_slice(&0u64.to_le_bytes());
        assert!(matches!(read_tagfile(&bytes[..]), Err(Error::Format(_))));
    }
}

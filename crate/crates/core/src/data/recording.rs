//! Raw recording files and seizure annotation files.
//!
//! Recording layout, little-endian: magic `EEGR`, version u16, electrode
//! count u16, sample rate u32 (Hz), sample count u64, then
//! `electrodes × samples` f32 values, one electrode after another.
//!
//! Annotations are text, one seizure per line: `onset_s<TAB>end_s` in decimal
//! seconds, sorted by onset. Blank lines are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

pub const RECORDING_MAGIC: &[u8; 4] = b"EEGR";
pub const RECORDING_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingMeta {
    pub id: String,
    pub electrodes: usize,
    pub sample_rate_hz: u32,
    pub sample_count: usize,
}

impl RecordingMeta {
    pub fn duration_s(&self) -> f64 {
        self.sample_count as f64 / self.sample_rate_hz as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: RecordingMeta,
    /// Electrode-major: sample `t` of electrode `e` is at `e * sample_count + t`.
    samples: Vec<f32>,
}

impl Recording {
    pub fn new(meta: RecordingMeta, samples: Vec<f32>) -> Result<Self> {
        if meta.electrodes == 0 || meta.electrodes > u16::MAX as usize {
            return Err(Error::InvalidConfig(format!("electrode count {} out of range", meta.electrodes)));
        }
        if meta.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be >= 1 Hz".into()));
        }
        if samples.len() != meta.electrodes * meta.sample_count {
            return Err(Error::ShapeMismatch(format!(
                "{} electrodes x {} samples needs {} values, got {}",
                meta.electrodes,
                meta.sample_count,
                meta.electrodes * meta.sample_count,
                samples.len()
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("recording contains non-finite samples".into()));
        }
        Ok(Recording { meta, samples })
    }

    pub fn electrode(&self, e: usize) -> &[f32] {
        &self.samples[e * self.meta.sample_count..][..self.meta.sample_count]
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.samples.len());
        out.extend_from_slice(RECORDING_MAGIC);
        out.extend_from_slice(&RECORDING_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.electrodes as u16).to_le_bytes());
        out.extend_from_slice(&self.meta.sample_rate_hz.to_le_bytes());
        out.extend_from_slice(&(self.meta.sample_count as u64).to_le_bytes());
        for v in &self.samples {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(id: &str, bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::CorruptInput(m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!("recording header truncated ({} bytes)", bytes.len())));
        }
        if &bytes[..4] != RECORDING_MAGIC {
            return Err(bad("bad magic (not an EEGR recording)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != RECORDING_VERSION {
            return Err(bad(format!("unsupported recording version {version}")));
        }
        let electrodes = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let fs = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
        if electrodes == 0 || fs == 0 {
            return Err(bad(format!("header declares {electrodes} electrodes at {fs} Hz")));
        }
        let body = &bytes[HEADER_LEN..];
        let expected = (electrodes as u128) * (count as u128) * 4;
        if body.len() as u128 != expected {
            let rows = body.len() as f64 / (4.0 * count.max(1) as f64);
            return Err(bad(format!(
                "header declares {electrodes} electrodes x {count} samples ({expected} bytes) but the data holds {} bytes (~{rows:.2} rows)",
                body.len()
            )));
        }
        let samples: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(bad("recording contains non-finite samples".into()));
        }
        Ok(Recording {
            meta: RecordingMeta {
                id: id.to_string(),
                electrodes,
                sample_rate_hz: fs,
                sample_count: count as usize,
            },
            samples,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Loads a recording; its id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Recording::from_bytes(&id, &fs::read(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeizureAnnotation {
    pub onset_s: f64,
    pub end_s: f64,
}

/// Checks that every seizure has `onset < end` and that the list is sorted
/// and non-overlapping.
pub fn validate_annotations(annotations: &[SeizureAnnotation]) -> Result<()> {
    for (i, a) in annotations.iter().enumerate() {
        if !(a.onset_s.is_finite() && a.end_s.is_finite()) || a.onset_s < 0.0 {
            return Err(Error::InvalidAnnotations(format!("seizure {}: bad times {a:?}", i + 1)));
        }
        if a.end_s <= a.onset_s {
            return Err(Error::InvalidAnnotations(format!(
                "seizure {}: end {} is not after onset {}",
                i + 1,
                a.end_s,
                a.onset_s
            )));
        }
        if i > 0 {
            let prev = annotations[i - 1];
            if a.onset_s < prev.onset_s {
                return Err(Error::InvalidAnnotations(format!("seizure {} is out of order", i + 1)));
            }
            if a.onset_s < prev.end_s {
                return Err(Error::InvalidAnnotations(format!(
                    "seizure {} overlaps seizure {}",
                    i + 1,
                    i
                )));
            }
        }
    }
    Ok(())
}

pub fn parse_annotations(text: &str) -> Result<Vec<SeizureAnnotation>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::CorruptInput(format!("annotation line {}: {s:?} is not a number", n + 1)))
        };
        if fields.len() != 2 {
            return Err(Error::CorruptInput(format!(
                "annotation line {}: expected `onset<TAB>end`, got {line:?}",
                n + 1
            )));
        }
        out.push(SeizureAnnotation {
            onset_s: parse(fields[0])?,
            end_s: parse(fields[1])?,
        });
    }
    validate_annotations(&out)?;
    Ok(out)
}

pub fn format_annotations(annotations: &[SeizureAnnotation]) -> String {
    let mut s = String::new();
    for a in annotations {
        let _ = writeln!(s, "{}\t{}", a.onset_s, a.end_s);
    }
    s
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<SeizureAnnotation>> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::CorruptInput("annotation file is not UTF-8".into()))?;
    parse_annotations(&text)
}

pub fn save_annotations(path: impl AsRef<Path>, annotations: &[SeizureAnnotation]) -> Result<()> {
    validate_annotations(annotations)?;
    fs::write(path, format_annotations(annotations))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Recording {
        let meta = RecordingMeta {
            id: "r".into(),
            electrodes: 3,
            sample_rate_hz: 10,
            sample_count: 5,
        };
        Recording::new(meta, (0..15).map(|i| i as f32 * 0.5 - 3.0).collect()).unwrap()
    }

    #[test]
    fn recording_round_trip() {
        let r = sample();
        let back = Recording::from_bytes("r", &r.to_bytes()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.electrode(1), &[-0.5, 0.0, 0.5, 1.0, 1.5]);
        assert_eq!(back.meta.duration_s(), 0.5);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rec42.eegr");
        r.save(&p).unwrap();
        let loaded = Recording::load(&p).unwrap();
        assert_eq!(loaded.meta.id, "rec42");
        assert_eq!(loaded.samples(), r.samples());
    }

    #[test]
    fn missing_electrode_row_is_corrupt() {
        let meta = RecordingMeta {
            id: "r".into(),
            electrodes: 15,
            sample_rate_hz: 400,
            sample_count: 8,
        };
        let mut bytes = Recording::new(meta, vec![0.0; 15 * 8]).unwrap().to_bytes();
        // Declare 16 electrodes while the body holds 15 rows.
        bytes[6..8].copy_from_slice(&16u16.to_le_bytes());
        assert!(matches!(Recording::from_bytes("r", &bytes), Err(Error::CorruptInput(_))));
        let good = sample().to_bytes();
        assert!(matches!(Recording::from_bytes("r", &good[..10]), Err(Error::CorruptInput(_))));
        let mut magic = good.clone();
        magic[0] = b'Z';
        assert!(matches!(Recording::from_bytes("r", &magic), Err(Error::CorruptInput(_))));
    }

    #[test]
    fn annotations_parse_and_validate() {
        let a = parse_annotations("10\t20.5\n\n100\t130\n").unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(parse_annotations(&format_annotations(&a)).unwrap(), a);
        assert!(matches!(parse_annotations("20\t20\n"), Err(Error::InvalidAnnotations(_))));
        assert!(matches!(parse_annotations("30\t10\n"), Err(Error::InvalidAnnotations(_))));
        assert!(matches!(parse_annotations("0\t50\n40\t60\n"), Err(Error::InvalidAnnotations(_))));
        assert!(matches!(parse_annotations("50\t60\n0\t10\n"), Err(Error::InvalidAnnotations(_))));
        assert!(matches!(parse_annotations("abc\t1\n"), Err(Error::CorruptInput(_))));
        assert!(matches!(parse_annotations("1 2\n"), Err(Error::CorruptInput(_))));
    }
}

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

use super::recording::{validate_annotations, RecordingMeta, SeizureAnnotation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelingConfig {
    /// Gap between the end of the preictal interval and seizure onset.
    pub sph_s: f64,
    /// Length of the preictal interval.
    pub pil_s: f64,
    /// Time after a seizure's end that belongs to neither class.
    pub postictal_s: f64,
}

impl LabelingConfig {
    pub fn new(sph_s: f64, pil_s: f64, postictal_s: f64) -> Result<Self> {
        for (name, v) in [("sph", sph_s), ("pil", pil_s), ("postictal", postictal_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative duration")));
            }
        }
        if pil_s == 0.0 {
            return Err(Error::InvalidConfig("pil must be > 0".into()));
        }
        Ok(LabelingConfig {
            sph_s,
            pil_s,
            postictal_s,
        })
    }
}

/// Named dataset presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Aes,
    Chbmit,
    Custom,
}

pub const DEFAULT_SPH_S: f64 = 300.0;
pub const DEFAULT_POSTICTAL_S: f64 = 3600.0;

impl Profile {
    pub fn labeling(self) -> LabelingConfig {
        let pil = match self {
            Profile::Aes | Profile::Custom => 3600.0,
            Profile::Chbmit => 1800.0,
        };
        LabelingConfig {
            sph_s: DEFAULT_SPH_S,
            pil_s: pil,
            postictal_s: DEFAULT_POSTICTAL_S,
        }
    }

    /// `(electrodes, sample rate)` of the preset's input windows.
    pub fn window_geometry(self) -> Option<(usize, u32)> {
        match self {
            Profile::Aes => Some((16, 400)),
            Profile::Chbmit => Some((23, 256)),
            Profile::Custom => None,
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Aes => "aes",
            Profile::Chbmit => "chbmit",
            Profile::Custom => "custom",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aes" => Ok(Profile::Aes),
            "chbmit" | "chb-mit" => Ok(Profile::Chbmit),
            "custom" => Ok(Profile::Custom),
            _ => Err(Error::InvalidConfig(format!("unknown profile {s:?} (expected aes, chbmit or custom)"))),
        }
    }
}

/// Half-open interval `[start_s, end_s)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn is_empty(&self) -> bool {
        self.end_s <= self.start_s
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PreictalInterval {
    pub interval: Interval,
    /// Index of the seizure this interval precedes.
    pub seizure: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledIntervals {
    /// At most one per seizure, in seizure order; empty intervals are omitted.
    pub preictal: Vec<PreictalInterval>,
    pub interictal: Vec<Interval>,
}

/// Splits a recording into preictal and interictal intervals.
///
/// For each seizure the preictal interval is `[onset − sph − pil, onset − sph)`,
/// clipped to the recording and starting no earlier than the end of any
/// earlier seizure's postictal zone. The SPH gap, the seizure itself and the
/// postictal zone are excluded; everything else is interictal.
pub fn label_intervals(
    meta: &RecordingMeta,
    annotations: &[SeizureAnnotation],
    cfg: &LabelingConfig,
) -> Result<LabeledIntervals> {
    validate_annotations(annotations)?;
    let duration = meta.duration_s();
    if let Some(a) = annotations.iter().find(|a| a.end_s > duration) {
        return Err(Error::InvalidAnnotations(format!(
            "seizure ending at {} s lies outside the {duration} s recording",
            a.end_s
        )));
    }

    let mut preictal = Vec::new();
    let mut excluded: Vec<Interval> = Vec::new();
    let mut earliest = 0.0f64;
    for (i, a) in annotations.iter().enumerate() {
        let start = (a.onset_s - cfg.sph_s - cfg.pil_s).max(0.0).max(earliest);
        let end = (a.onset_s - cfg.sph_s).max(0.0);
        if start < end {
            preictal.push(PreictalInterval {
                interval: Interval { start_s: start, end_s: end },
                seizure: i,
            });
        }
        excluded.push(Interval {
            start_s: end,
            end_s: (a.end_s + cfg.postictal_s).min(duration),
        });
        earliest = earliest.max(a.end_s + cfg.postictal_s);
    }

    // Interictal: the complement of every preictal and excluded interval.
    let mut taken: Vec<Interval> = preictal.iter().map(|p| p.interval).chain(excluded).collect();
    taken.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut interictal = Vec::new();
    let mut cursor = 0.0f64;
    for t in taken {
        if t.start_s > cursor {
            interictal.push(Interval {
                start_s: cursor,
                end_s: t.start_s.min(duration),
            });
        }
        cursor = cursor.max(t.end_s);
    }
    if cursor < duration {
        interictal.push(Interval {
            start_s: cursor,
            end_s: duration,
        });
    }
    interictal.retain(|i| !i.is_empty());
    Ok(LabeledIntervals { preictal, interictal })
}

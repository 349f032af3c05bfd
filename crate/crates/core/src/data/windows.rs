use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Shape};

use super::labeling::{Interval, LabeledIntervals};
use super::recording::Recording;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowingConfig {
    pub window_s: f64,
    pub preictal_step_s: f64,
    pub interictal_step_s: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        WindowingConfig {
            window_s: 20.0,
            preictal_step_s: 5.0,
            interictal_step_s: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Interictal = 0,
    Preictal = 1,
}

impl Class {
    pub fn label(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    pub recording_id: String,
    pub start_s: f64,
    pub class: Class,
    /// Seizure index for preictal windows.
    pub seizure: Option<usize>,
    pub data: DenseTensor,
}

/// Number of windows of length `window` that fit in `len` at `step`.
pub fn window_count(len: f64, window: f64, step: f64) -> usize {
    if len < window {
        0
    } else {
        ((len - window) / step).floor() as usize + 1
    }
}

/// Converts seconds to a whole number of samples, or fails if it is fractional.
fn whole_samples(seconds: f64, fs: u32, what: &str) -> Result<usize> {
    let n = seconds * fs as f64;
    if !(n.is_finite() && n >= 1.0 && (n - n.round()).abs() < 1e-9) {
        return Err(Error::InvalidConfig(format!(
            "{what} of {seconds} s is not a positive whole number of samples at {fs} Hz"
        )));
    }
    Ok(n.round() as usize)
}

/// Window start offsets (in samples) for one interval; windows never cross
/// the interval boundary and partial trailing windows are dropped.
fn starts(interval: &Interval, fs: u32, len: usize, step: usize) -> impl Iterator<Item = usize> {
    let lo = (interval.start_s * fs as f64 - 1e-9).ceil().max(0.0) as usize;
    let hi = (interval.end_s * fs as f64 + 1e-9).floor() as usize;
    let n = if hi >= lo + len { (hi - lo - len) / step + 1 } else { 0 };
    (0..n).map(move |k| lo + k * step)
}

/// Cuts labeled windows out of a recording.
pub fn extract_windows(
    recording: &Recording,
    intervals: &LabeledIntervals,
    cfg: &WindowingConfig,
) -> Result<Vec<LabeledWindow>> {
    let meta = &recording.meta;
    let fs = meta.sample_rate_hz;
    let len = whole_samples(cfg.window_s, fs, "window")?;
    let pre_step = whole_samples(cfg.preictal_step_s, fs, "preictal step")?;
    let inter_step = whole_samples(cfg.interictal_step_s, fs, "interictal step")?;
    let shape = Shape::new(meta.electrodes, len, 1);

    let cut = |start: usize, class: Class, seizure: Option<usize>| -> LabeledWindow {
        let mut data = Vec::with_capacity(shape.len());
        for e in 0..meta.electrodes {
            data.extend_from_slice(&recording.electrode(e)[start..start + len]);
        }
        LabeledWindow {
            recording_id: meta.id.clone(),
            start_s: start as f64 / fs as f64,
            class,
            seizure,
            data: DenseTensor::from_raw(shape, data),
        }
    };

    let mut out = Vec::new();
    for p in &intervals.preictal {
        for s in starts(&p.interval, fs, len, pre_step) {
            if s + len <= meta.sample_count {
                out.push(cut(s, Class::Preictal, Some(p.seizure)));
            }
        }
    }
    for i in &intervals.interictal {
        for s in starts(i, fs, len, inter_step) {
            if s + len <= meta.sample_count {
                out.push(cut(s, Class::Interictal, None));
            }
        }
    }
    Ok(out)
}

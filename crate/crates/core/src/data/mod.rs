//! Recordings, seizure annotations, interval labeling, windowing, balanced
//! batching and synthetic data.

mod batches;
mod labeling;
mod recording;
mod synth;
mod windows;

pub use batches::{BalancedBatches, Batch, BATCH_SIZE, PER_CLASS};
pub use labeling::{
    label_intervals, Interval, LabeledIntervals, LabelingConfig, PreictalInterval, Profile, DEFAULT_POSTICTAL_S,
    DEFAULT_SPH_S,
};
pub use recording::{
    format_annotations, load_annotations, parse_annotations, save_annotations, validate_annotations, Recording,
    RecordingMeta, SeizureAnnotation, RECORDING_MAGIC, RECORDING_VERSION,
};
pub use synth::{synth_generate, SynthConfig};
pub use windows::{extract_windows, window_count, Class, LabeledWindow, WindowingConfig};

use crate::error::Result;

/// Labels a recording and cuts its windows in one step.
pub fn windows_for(
    recording: &Recording,
    annotations: &[SeizureAnnotation],
    labeling: &LabelingConfig,
    windowing: &WindowingConfig,
) -> Result<Vec<LabeledWindow>> {
    let intervals = label_intervals(&recording.meta, annotations, labeling)?;
    extract_windows(recording, &intervals, windowing)
}

//! Synthetic EEG with a known preictal signature.
//!
//! Background is unit-variance AR(1) noise per electrode. Seizures are spread
//! evenly so that no preictal interval is truncated. Inside every preictal
//! interval an amplitude-modulated sinusoid is added to the first half of the
//! electrodes; `snr` is the RMS of that signature relative to the background.
//! Seizures themselves carry a large slow oscillation on every electrode.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};

use super::labeling::LabelingConfig;
use super::recording::{Recording, RecordingMeta, SeizureAnnotation};

const AR_COEFF: f64 = 0.9;
const MODULATION_HZ: f64 = 0.2;
/// RMS of `(1 + 0.5 sin) · sin` for unit amplitude.
const SIGNATURE_RMS: f64 = 0.75;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub electrodes: usize,
    pub fs_hz: u32,
    pub duration_s: f64,
    pub seizures: usize,
    pub snr: f64,
    pub ictal_s: f64,
    pub labeling: LabelingConfig,
}

impl SynthConfig {
    pub fn new(seed: u64, electrodes: usize, fs_hz: u32, duration_s: f64, seizures: usize, labeling: LabelingConfig) -> Self {
        SynthConfig {
            seed,
            electrodes,
            fs_hz,
            duration_s,
            seizures,
            snr: 1.0,
            ictal_s: 60.0,
            labeling,
        }
    }
}

/// Seizure placement: equal gaps before, between and after the seizures,
/// each seizure preceded by a full preictal interval and SPH gap.
fn place_seizures(cfg: &SynthConfig) -> Result<Vec<SeizureAnnotation>> {
    let n = cfg.seizures;
    if n == 0 {
        return Ok(Vec::new());
    }
    let l = &cfg.labeling;
    let lead = l.pil_s + l.sph_s;
    let required = n as f64 * (lead + cfg.ictal_s) + (n - 1) as f64 * l.postictal_s;
    let slack = cfg.duration_s - required;
    if slack < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "{n} seizures need at least {required} s (pil + sph + ictal each, postictal between), recording is {} s",
            cfg.duration_s
        )));
    }
    let gap = (slack / (n + 1) as f64).floor();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        t += gap + lead;
        out.push(SeizureAnnotation {
            onset_s: t,
            end_s: t + cfg.ictal_s,
        });
        t += cfg.ictal_s + l.postictal_s;
    }
    Ok(out)
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<(Recording, Vec<SeizureAnnotation>)> {
    if cfg.electrodes == 0 || cfg.electrodes > u16::MAX as usize {
        return Err(Error::InvalidConfig(format!("electrode count {} out of range", cfg.electrodes)));
    }
    if cfg.fs_hz == 0 {
        return Err(Error::InvalidConfig("sample rate must be >= 1 Hz".into()));
    }
    if !(cfg.duration_s.is_finite() && cfg.duration_s > 0.0) {
        return Err(Error::InvalidConfig("duration must be positive".into()));
    }
    if !(cfg.snr.is_finite() && cfg.snr >= 0.0) {
        return Err(Error::InvalidConfig("snr must be a finite non-negative number".into()));
    }
    if !(cfg.ictal_s.is_finite() && cfg.ictal_s > 0.0) {
        return Err(Error::InvalidConfig("ictal duration must be positive".into()));
    }
    let seizures = place_seizures(cfg)?;
    let fs = cfg.fs_hz as f64;
    let count = (cfg.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let innovation = (1.0 - AR_COEFF * AR_COEFF).sqrt();
    let mut samples = Vec::with_capacity(cfg.electrodes * count);
    for _ in 0..cfg.electrodes {
        let mut x: f64 = StandardNormal.sample(&mut rng);
        for _ in 0..count {
            samples.push(x as f32);
            let z: f64 = StandardNormal.sample(&mut rng);
            x = AR_COEFF * x + innovation * z;
        }
    }

    let amplitude = cfg.snr / SIGNATURE_RMS;
    let carrier = fs / 8.0;
    let marked = cfg.electrodes.div_ceil(2);
    let to_sample = |s: f64| ((s * fs).round().max(0.0) as usize).min(count);
    for a in &seizures {
        let l = &cfg.labeling;
        let (lo, hi) = (to_sample(a.onset_s - l.sph_s - l.pil_s), to_sample(a.onset_s - l.sph_s));
        if amplitude > 0.0 {
            for e in 0..marked {
                let row = &mut samples[e * count..][..count];
                for (i, v) in row[lo..hi].iter_mut().enumerate() {
                    let t = (lo + i) as f64 / fs;
                    let env = 1.0 + 0.5 * (TAU * MODULATION_HZ * t).sin();
                    *v += (amplitude * env * (TAU * carrier * t).sin()) as f32;
                }
            }
        }
        let (lo, hi) = (to_sample(a.onset_s), to_sample(a.end_s));
        for e in 0..cfg.electrodes {
            let row = &mut samples[e * count..][..count];
            for (i, v) in row[lo..hi].iter_mut().enumerate() {
                let t = (lo + i) as f64 / fs;
                *v += (5.0 * (TAU * 3.0 * t).sin()) as f32;
            }
        }
    }

    let recording = Recording::new(
        RecordingMeta {
            id: format!("synth-{}", cfg.seed),
            electrodes: cfg.electrodes,
            sample_rate_hz: cfg.fs_hz,
            sample_count: count,
        },
        samples,
    )?;
    Ok((recording, seizures))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::labeling::{label_intervals, Profile};

    fn cfg(seed: u64, hours: f64, seizures: usize) -> SynthConfig {
        SynthConfig::new(seed, 4, 100, hours * 3600.0, seizures, Profile::Aes.labeling())
    }

    #[test]
    fn deterministic_per_seed() {
        let (a, sa) = synth_generate(&cfg(1, 2.0, 1)).unwrap();
        let (b, sb) = synth_generate(&cfg(1, 2.0, 1)).unwrap();
        assert_eq!(sa.len(), 1);
        assert_eq!(sa, sb);
        assert_eq!(a.to_bytes(), b.to_bytes());
        let (c, sc) = synth_generate(&cfg(2, 2.0, 1)).unwrap();
        assert_ne!(a.samples(), c.samples());
        assert_eq!((a.meta.electrodes, a.meta.sample_count), (c.meta.electrodes, c.meta.sample_count));
        assert_eq!(sa, sc);
    }

    #[test]
    fn infeasible_spacing_is_rejected() {
        assert!(matches!(synth_generate(&cfg(1, 1.0, 50)), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn preictal_intervals_are_never_truncated() {
        let mut c = cfg(3, 4.0, 3);
        c.labeling = LabelingConfig::new(300.0, 600.0, 1200.0).unwrap();
        let (rec, seizures) = synth_generate(&c).unwrap();
        let l = label_intervals(&rec.meta, &seizures, &c.labeling).unwrap();
        assert_eq!(l.preictal.len(), 3);
        assert!(l.preictal.iter().all(|p| p.interval.len() == 600.0));
    }

    #[test]
    fn background_has_unit_variance_and_signature_power() {
        let mut c = cfg(5, 4.0, 1);
        c.labeling = LabelingConfig::new(300.0, 1200.0, 600.0).unwrap();
        c.snr = 2.0;
        let (rec, seizures) = synth_generate(&c).unwrap();
        let fs = 100.0;
        let var = |x: &[f32]| {
            let m = x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
            x.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / x.len() as f64
        };
        let onset = seizures[0].onset_s;
        let pre = ((onset - 1500.0) * fs) as usize..((onset - 300.0) * fs) as usize;
        let quiet = 0..pre.start;
        let marked = rec.electrode(0);
        let unmarked = rec.electrode(3);
        assert!((var(&marked[quiet.clone()]) - 1.0).abs() < 0.1);
        assert!((var(&marked[pre.clone()]) - 5.0).abs() < 0.5, "{}", var(&marked[pre.clone()]));
        assert!((var(&unmarked[pre]) - 1.0).abs() < 0.15);
    }

    #[test]
    fn zero_snr_adds_nothing_before_seizures() {
        let mut c = cfg(8, 2.0, 1);
        c.snr = 0.0;
        let (with_seizure, s) = synth_generate(&c).unwrap();
        c.seizures = 0;
        let (plain, _) = synth_generate(&c).unwrap();
        let onset = (s[0].onset_s * 100.0) as usize;
        assert_eq!(&with_seizure.electrode(0)[..onset], &plain.electrode(0)[..onset]);
    }
}

//! ROC/AUC, window- and seizure-level sensitivity, and false alarms per hour.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::data::{Class, LabeledWindow};
use crate::error::{Error, Result};

/// A window's provenance and its preictal score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredWindow {
    pub recording_id: String,
    pub start_s: f64,
    pub class: Class,
    pub seizure: Option<usize>,
    pub score: f64,
}

impl ScoredWindow {
    pub fn new(window: &LabeledWindow, score: f64) -> Self {
        ScoredWindow {
            recording_id: window.recording_id.clone(),
            start_s: window.start_s,
            class: window.class,
            seizure: window.seizure,
            score,
        }
    }
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidValue("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidDataset(format!(
            "AUC needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann–Whitney statistic
/// `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`, from midranks of the sorted scores.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let midrank = (i + j + 2) as f64 / 2.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// ROC points for every distinct score used as a `score >= threshold` cut,
/// starting from `+inf` (nothing positive).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
        });
    }
    Ok(points)
}

pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("threshold,tpr,fpr\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.threshold, p.tpr, p.fpr);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlarmConfig {
    pub threshold: f64,
    pub refractory_s: f64,
    pub window_s: f64,
}

impl Default for AlarmConfig {
    fn default() -> Self {
        AlarmConfig {
            threshold: 0.5,
            refractory_s: 1800.0,
            window_s: 20.0,
        }
    }
}

/// Evaluation summary. Serialized field order is fixed; undefined rates
/// (no positives, no interictal exposure, single class) are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub auc: Option<f64>,
    pub window_sensitivity: Option<f64>,
    pub seizure_sensitivity: Option<f64>,
    pub fpr_per_hour: Option<f64>,
    pub window_false_positive_rate: Option<f64>,
    pub threshold: f64,
    pub refractory_s: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub seizures_predicted: usize,
    pub seizures_total: usize,
    pub false_alarms: usize,
    pub interictal_hours: f64,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize")
    }
}

/// Total length of the union of `[start, start + len)` spans.
fn covered_seconds(mut starts: Vec<f64>, len: f64) -> f64 {
    starts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut end = f64::NEG_INFINITY;
    for s in starts {
        let e = s + len;
        if s >= end {
            total += len;
        } else if e > end {
            total += e - end;
        }
        end = end.max(e);
    }
    total
}

/// Window counts, seizure-level sensitivity and refractory-limited false
/// alarms per interictal hour.
///
/// A window alarms when its score is at least the threshold. A seizure is
/// predicted when any of its preictal windows alarms; only seizures with at
/// least one scored window count. Interictal alarms are false alarms, except
/// that one alarm silences the following `refractory_s` seconds of the same
/// recording. Interictal exposure is the union of interictal window spans.
pub fn alarm_metrics(windows: &[ScoredWindow], cfg: &AlarmConfig) -> Result<MetricsReport> {
    if windows.iter().any(|w| w.score.is_nan()) {
        return Err(Error::InvalidValue("scores contain NaN".into()));
    }
    let alarm = |w: &ScoredWindow| w.score >= cfg.threshold;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    let mut seizures: BTreeMap<(&str, usize), bool> = BTreeMap::new();
    let mut interictal: BTreeMap<&str, Vec<(f64, bool)>> = BTreeMap::new();
    for w in windows {
        let a = alarm(w);
        match w.class {
            Class::Preictal => {
                if a {
                    tp += 1;
                } else {
                    fn_ += 1;
                }
                if let Some(s) = w.seizure {
                    *seizures.entry((w.recording_id.as_str(), s)).or_default() |= a;
                }
            }
            Class::Interictal => {
                if a {
                    fp += 1;
                } else {
                    tn += 1;
                }
                interictal.entry(w.recording_id.as_str()).or_default().push((w.start_s, a));
            }
        }
    }

    let mut false_alarms = 0usize;
    let mut exposure_s = 0.0f64;
    for (_, mut list) in interictal {
        list.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut quiet_until = f64::NEG_INFINITY;
        for &(start, a) in &list {
            if a && start >= quiet_until {
                false_alarms += 1;
                quiet_until = start + cfg.refractory_s;
            }
        }
        exposure_s += covered_seconds(list.iter().map(|x| x.0).collect(), cfg.window_s);
    }
    let hours = exposure_s / 3600.0;

    let scores: Vec<f64> = windows.iter().map(|w| w.score).collect();
    let labels: Vec<bool> = windows.iter().map(|w| w.class == Class::Preictal).collect();
    let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
    let predicted = seizures.values().filter(|&&p| p).count();
    Ok(MetricsReport {
        auc: roc_auc(&scores, &labels).ok(),
        window_sensitivity: ratio(tp, tp + fn_),
        seizure_sensitivity: ratio(predicted, seizures.len()),
        fpr_per_hour: (hours > 0.0).then(|| false_alarms as f64 / hours),
        window_false_positive_rate: ratio(fp, fp + tn),
        threshold: cfg.threshold,
        refractory_s: cfg.refractory_s,
        tp,
        fp,
        tn,
        fn_,
        seizures_predicted: predicted,
        seizures_total: seizures.len(),
        false_alarms,
        interictal_hours: hours,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.9, 0.2, 0.1, 0.8], &[true, true, false, false]).unwrap(), 0.75);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[true, true, false, false]).unwrap(), 0.0);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(Error::InvalidDataset(_))));
    }

    #[test]
    fn curve_endpoints_and_csv() {
        let pts = roc_curve(&[0.9, 0.2, 0.1, 0.8], &[true, true, false, false]).unwrap();
        assert_eq!((pts[0].tpr, pts[0].fpr), (0.0, 0.0));
        let last = pts.last().unwrap();
        assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
        let csv = roc_csv(&pts);
        assert!(csv.starts_with("threshold,tpr,fpr\ninf,0,0\n0.9,0.5,0\n"));
    }

    fn window(rec: &str, start_s: f64, class: Class, seizure: Option<usize>, score: f64) -> ScoredWindow {
        ScoredWindow {
            recording_id: rec.into(),
            start_s,
            class,
            seizure,
            score,
        }
    }

    #[test]
    fn two_hours_of_alarms_give_two_per_hour() {
        let w: Vec<ScoredWindow> = (0..360)
            .map(|k| window("r", k as f64 * 20.0, Class::Interictal, None, 0.9))
            .collect();
        let m = alarm_metrics(&w, &AlarmConfig::default()).unwrap();
        assert_eq!(m.false_alarms, 4);
        assert!((m.interictal_hours - 2.0).abs() < 1e-12);
        assert!((m.fpr_per_hour.unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(m.auc, None);
    }

    #[test]
    fn zero_scores_give_zero_rates() {
        let mut w: Vec<ScoredWindow> = (0..10)
            .map(|k| window("r", k as f64 * 5.0, Class::Preictal, Some(0), 0.0))
            .collect();
        w.extend((0..10).map(|k| window("r", 1000.0 + k as f64 * 20.0, Class::Interictal, None, 0.0)));
        let m = alarm_metrics(&w, &AlarmConfig::default()).unwrap();
        assert_eq!(m.seizure_sensitivity, Some(0.0));
        assert_eq!(m.window_sensitivity, Some(0.0));
        assert_eq!(m.fpr_per_hour, Some(0.0));
    }

    #[test]
    fn one_alarmed_preictal_window_predicts_the_seizure() {
        let mut w: Vec<ScoredWindow> = (0..5)
            .map(|k| window("r", k as f64 * 5.0, Class::Preictal, Some(0), 0.1))
            .collect();
        w[3].score = 0.7;
        let m = alarm_metrics(&w, &AlarmConfig::default()).unwrap();
        assert_eq!(m.seizure_sensitivity, Some(1.0));
        assert_eq!((m.seizures_predicted, m.seizures_total), (1, 1));
        assert_eq!(m.fpr_per_hour, None, "no interictal exposure");
    }

    #[test]
    fn zero_refractory_counts_every_alarm_and_json_is_stable() {
        let w: Vec<ScoredWindow> = (0..30)
            .map(|k| window("r", k as f64 * 20.0, Class::Interictal, None, (k % 3) as f64 / 2.0))
            .collect();
        let cfg = AlarmConfig {
            refractory_s: 0.0,
            ..Default::default()
        };
        let m = alarm_metrics(&w, &cfg).unwrap();
        assert_eq!(m.false_alarms, 20);
        let json = m.to_json();
        assert!(json.starts_with("{\"auc\":null,\"window_sensitivity\":null,"), "{json}");
        assert!(!json.contains('\n'));
        let keys: Vec<&str> = json.split('"').skip(1).step_by(2).filter(|k| !k.is_empty()).collect();
        assert_eq!(keys.first(), Some(&"auc"));
        assert!(json.contains("\"fn\":0"));
    }

    proptest! {
        #[test]
        fn auc_matches_pairwise_counting(v in prop::collection::vec((0u8..20, any::<bool>()), 2..60)) {
            let scores: Vec<f64> = v.iter().map(|x| x.0 as f64 / 20.0).collect();
            let labels: Vec<bool> = v.iter().map(|x| x.1).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert!((a - pairwise_auc(&scores, &labels)).abs() < 1e-12);
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            prop_assert!((a + roc_auc(&scores, &flipped).unwrap() - 1.0).abs() < 1e-9);
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(a, roc_auc(&warped, &labels).unwrap());
        }

        #[test]
        fn alarm_counts_fall_as_threshold_rises(
            scores in prop::collection::vec(0.0f64..1.0, 1..80),
            t1 in 0.0f64..1.0,
            t2 in 0.0f64..1.0,
        ) {
            let w: Vec<ScoredWindow> = scores
                .iter()
                .enumerate()
                .map(|(k, &s)| {
                    let class = if k % 2 == 0 { Class::Interictal } else { Class::Preictal };
                    window("r", k as f64 * 20.0, class, (k % 2 == 1).then_some(k % 3), s)
                })
                .collect();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let cfg = |threshold| AlarmConfig { threshold, refractory_s: 0.0, window_s: 20.0 };
            let a = alarm_metrics(&w, &cfg(lo)).unwrap();
            let b = alarm_metrics(&w, &cfg(hi)).unwrap();
            prop_assert!(b.tp <= a.tp && b.fp <= a.fp && b.false_alarms <= a.false_alarms);
            prop_assert!(b.seizures_predicted <= a.seizures_predicted);
            prop_assert_eq!(a.false_alarms, a.fp);
        }
    }
}

//! Slide-level aggregation and ROC-based threshold selection.
//!
//! A slide's score is the fraction of its border windows flagged positive.
//! The slide is positive when that fraction is strictly above the operating
//! threshold, which is picked as the ROC point nearest to `(fpr 0, tpr 1)`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::WindowScore;

#[derive(Debug, Error)]
pub enum DiagnosisError {
    #[error("no windows to diagnose")]
    NoWindows,
    #[error("windows from several slides passed together ({0} and {1})")]
    MixedSlides(String, String),
    #[error("ROC needs both classes; got {positives} positive and {negatives} negative samples")]
    DegenerateRoc { positives: usize, negatives: usize },
    #[error("non-finite score in ROC input")]
    NonFiniteScore,
    #[error("diagnosis export: {0}")]
    Csv(#[from] csv::Error),
    #[error("diagnosis export: {0}")]
    Io(#[from] std::io::Error),
    #[error("diagnosis export: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideDiagnosis {
    pub slide_id: String,
    pub patient_id: String,
    pub n_windows: usize,
    pub n_positive: usize,
    pub positive_fraction: f64,
    pub predicted: Label,
    pub threshold_used: f64,
}

/// Aggregates the window scores of one slide.
pub fn diagnose_slide(scores: &[WindowScore], threshold: f64) -> Result<SlideDiagnosis, DiagnosisError> {
    let first = scores.first().ok_or(DiagnosisError::NoWindows)?;
    if let Some(other) = scores.iter().find(|s| s.window.slide_id != first.window.slide_id) {
        return Err(DiagnosisError::MixedSlides(first.window.slide_id.clone(), other.window.slide_id.clone()));
    }
    let n_positive = scores.iter().filter(|s| s.positive).count();
    Ok(diagnose_counts(&first.window.slide_id, &first.window.patient_id, scores.len(), n_positive, threshold))
}

pub fn diagnose_counts(slide_id: &str, patient_id: &str, n_windows: usize, n_positive: usize, threshold: f64) -> SlideDiagnosis {
    let positive_fraction = n_positive as f64 / n_windows as f64;
    SlideDiagnosis {
        slide_id: slide_id.to_string(),
        patient_id: patient_id.to_string(),
        n_windows,
        n_positive,
        positive_fraction,
        predicted: if positive_fraction > threshold { Label::Positive } else { Label::Negative },
        threshold_used: threshold,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

impl RocPoint {
    pub fn distance_to_ideal(&self) -> f64 {
        (self.fpr * self.fpr + (1.0 - self.tpr) * (1.0 - self.tpr)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Ordered by strictly decreasing threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub optimal: RocPoint,
}

/// Exact ROC over `(score, label)` pairs.
///
/// Candidate thresholds are every distinct score plus one sentinel above the
/// maximum (nothing positive) and one below the minimum (everything
/// positive); a sample is called positive when its score is strictly above
/// the threshold. Sentinels sit one unit beyond the observed range.
pub fn roc_curve(samples: &[(f64, Label)]) -> Result<RocCurve, DiagnosisError> {
    if samples.iter().any(|(s, _)| !s.is_finite()) {
        return Err(DiagnosisError::NonFiniteScore);
    }
    let positives = samples.iter().filter(|(_, l)| l.is_positive()).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DiagnosisError::DegenerateRoc { positives, negatives });
    }
    let mut sorted: Vec<(f64, Label)> = samples.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let max = sorted[0].0;
    let min = sorted[sorted.len() - 1].0;

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint { threshold: max + 1.0, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        // samples strictly above t are exactly those already consumed
        points.push(RocPoint { threshold: t, fpr: fp as f64 / n, tpr: tp as f64 / p });
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1.is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    points.push(RocPoint { threshold: min - 1.0, fpr: 1.0, tpr: 1.0 });

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    let optimal = closest_point(&points);
    Ok(RocCurve { points, auc, optimal })
}

/// Point nearest `(0, 1)`; ties go to the smaller threshold.
fn closest_point(points: &[RocPoint]) -> RocPoint {
    let mut best = points[0];
    let mut best_d = best.distance_to_ideal();
    for p in &points[1..] {
        let d = p.distance_to_ideal();
        if d < best_d || (d == best_d && p.threshold < best.threshold) {
            best = *p;
            best_d = d;
        }
    }
    best
}

pub fn optimal_threshold(curve: &RocCurve) -> f64 {
    curve.optimal.threshold
}

#[derive(Debug, Serialize)]
struct DiagnosisRow<'a> {
    slide_id: &'a str,
    patient_id: &'a str,
    n_windows: usize,
    n_positive: usize,
    positive_fraction: f64,
    predicted: Label,
}

/// Writes `slide_id,patient_id,n_windows,n_positive,positive_fraction,predicted`.
pub fn write_diagnoses(path: impl AsRef<Path>, diagnoses: &[SlideDiagnosis]) -> Result<(), DiagnosisError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for d in diagnoses {
        w.serialize(DiagnosisRow {
            slide_id: &d.slide_id,
            patient_id: &d.patient_id,
            n_windows: d.n_windows,
            n_positive: d.n_positive,
            positive_fraction: d.positive_fraction,
            predicted: d.predicted,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `threshold,fpr,tpr` rows.
pub fn write_roc_csv(path: impl AsRef<Path>, curve: &RocCurve) -> Result<(), DiagnosisError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for p in &curve.points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub auc: f64,
    pub optimal: RocPoint,
    pub n_points: usize,
}

pub fn write_roc_summary(path: impl AsRef<Path>, curve: &RocCurve) -> Result<(), DiagnosisError> {
    let summary = RocSummary { auc: curve.auc, optimal: curve.optimal, n_points: curve.points.len() };
    std::fs::write(path.as_ref(), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::{Point, WindowSpec};
    use proptest::prelude::*;
    use Label::{Negative as N, Positive as P};

    fn scores(slide: &str, n: usize, positives: usize) -> Vec<WindowScore> {
        (0..n)
            .map(|i| WindowScore {
                window: WindowSpec {
                    slide_id: slide.into(),
                    patient_id: "p".into(),
                    center: Point::new(i, 0),
                    size: 224,
                    resized_to: 28,
                },
                red_orig: 0,
                red_recon: 0,
                f_red: if i < positives { 2.0 } else { 1.0 },
                positive: i < positives,
            })
            .collect()
    }

    #[test]
    fn slide_examples() {
        assert_eq!(diagnose_slide(&scores("s", 10, 0), 0.0618).unwrap().predicted, N);
        let d = diagnose_slide(&scores("s", 100, 7), 0.0618).unwrap();
        assert_eq!(d.predicted, P);
        assert_eq!(d.positive_fraction, 0.07);
        assert_eq!(diagnose_slide(&scores("s", 100, 6), 0.06).unwrap().predicted, N);
        assert!(matches!(diagnose_slide(&[], 0.5), Err(DiagnosisError::NoWindows)));
        let mut mixed = scores("a", 3, 1);
        mixed.extend(scores("b", 2, 0));
        assert!(matches!(diagnose_slide(&mixed, 0.5), Err(DiagnosisError::MixedSlides(..))));
    }

    #[test]
    fn order_does_not_matter() {
        let mut s = scores("s", 30, 4);
        let a = diagnose_slide(&s, 0.1).unwrap();
        s.reverse();
        assert_eq!(diagnose_slide(&s, 0.1).unwrap(), a);
    }

    #[test]
    fn perfect_separation() {
        let c = roc_curve(&[(0.0, N), (0.01, N), (0.2, P), (0.5, P)]).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!((c.optimal.fpr, c.optimal.tpr), (0.0, 1.0));
        // strictly above 0.01 separates the classes
        assert_eq!(optimal_threshold(&c), 0.01);
    }

    #[test]
    fn single_class_is_degenerate() {
        assert!(matches!(roc_curve(&[(0.1, P), (0.2, P)]), Err(DiagnosisError::DegenerateRoc { .. })));
    }

    #[test]
    fn curve_endpoints_and_sentinels() {
        let c = roc_curve(&[(0.3, N), (0.3, P), (0.6, P)]).unwrap();
        let first = c.points.first().unwrap();
        let last = c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(c.points.len(), 4);
        assert!((c.auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn tie_break_prefers_smaller_threshold() {
        // (0,0.5) at t=0.4 and (0.5,1) at t=0.1 are both 0.5 from (0,1)
        let c = roc_curve(&[(0.1, N), (0.2, P), (0.3, N), (0.5, P)]).unwrap();
        let d: Vec<f64> = c.points.iter().map(|p| p.distance_to_ideal()).collect();
        let best = d.iter().cloned().fold(f64::INFINITY, f64::min);
        let tied: Vec<f64> = c.points.iter().filter(|p| p.distance_to_ideal() == best).map(|p| p.threshold).collect();
        assert!(tied.len() >= 2, "{tied:?}");
        assert_eq!(c.optimal.threshold, tied.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    fn pair_count_auc(samples: &[(f64, Label)]) -> f64 {
        let pos: Vec<f64> = samples.iter().filter(|s| s.1.is_positive()).map(|s| s.0).collect();
        let neg: Vec<f64> = samples.iter().filter(|s| !s.1.is_positive()).map(|s| s.0).collect();
        let mut wins = 0.0;
        for &p in &pos {
            for &n in &neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        wins / (pos.len() * neg.len()) as f64
    }

    fn samples_strategy() -> impl Strategy<Value = Vec<(f64, Label)>> {
        prop::collection::vec((0u32..20, any::<bool>()), 2..60).prop_map(|v| {
            let mut out: Vec<(f64, Label)> = v.into_iter().map(|(s, l)| (s as f64 / 20.0, if l { P } else { N })).collect();
            out[0].1 = P;
            out[1].1 = N;
            out
        })
    }

    proptest! {
        #[test]
        fn roc_invariants(samples in samples_strategy()) {
            let c = roc_curve(&samples).unwrap();
            prop_assert!((c.auc - pair_count_auc(&samples)).abs() < 1e-9);
            for w in c.points.windows(2) {
                prop_assert!(w[1].threshold < w[0].threshold);
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            // classification at each threshold matches a direct recount
            let pos = samples.iter().filter(|s| s.1.is_positive()).count() as f64;
            let neg = samples.len() as f64 - pos;
            for p in &c.points {
                let tp = samples.iter().filter(|s| s.1.is_positive() && s.0 > p.threshold).count() as f64;
                let fp = samples.iter().filter(|s| !s.1.is_positive() && s.0 > p.threshold).count() as f64;
                prop_assert_eq!(p.tpr, tp / pos);
                prop_assert_eq!(p.fpr, fp / neg);
            }
        }

        #[test]
        fn monotone_transform_invariance(samples in samples_strategy()) {
            let c = roc_curve(&samples).unwrap();
            let mapped: Vec<(f64, Label)> = samples.iter().map(|&(s, l)| (s * s * 3.0 + 0.25, l)).collect();
            let m = roc_curve(&mapped).unwrap();
            prop_assert!((c.auc - m.auc).abs() < 1e-12);
            let t = c.optimal.threshold;
            let tm = m.optimal.threshold;
            for (&(s, _), &(sm, _)) in samples.iter().zip(&mapped) {
                prop_assert_eq!(s > t, sm > tm);
            }
        }
    }
}

//! Patient-stratified k-fold evaluation.
//!
//! Every fold picks its slide threshold from the ROC of the patients outside
//! the fold and applies it to the patients inside. Results are summarized as
//! mean ± sample standard deviation across folds plus a confusion matrix
//! pooled over all held-out predictions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnosis::{roc_curve, DiagnosisError, Label, RocCurve, SlideDiagnosis};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("need k >= 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("{k} folds need at least {k} patients per class ({negatives} negative, {positives} positive)")]
    TooFewPatients { k: usize, negatives: usize, positives: usize },
    #[error("patient {0} appears with both labels")]
    ConflictingLabel(String),
    #[error("duplicate patient {0}")]
    DuplicatePatient(String),
    #[error("no fraction for patient {0}")]
    MissingPatient(String),
    #[error("fold {fold} does not exist (k = {k})")]
    NoSuchFold { fold: usize, k: usize },
    #[error("fold {fold}: {source}")]
    DegenerateFold { fold: usize, source: DiagnosisError },
    #[error("manifest: {0}")]
    Csv(#[from] csv::Error),
    #[error("report: {0}")]
    Io(#[from] std::io::Error),
    #[error("report: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlideRole {
    Train,
    Eval,
}

/// Bacterial load class of a positive patient. Metadata only; both classes
/// count as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityClass {
    Low,
    High,
}

/// One row of the dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub label: Label,
    pub density: Option<DensityClass>,
    /// Relative paths are resolved against the manifest's directory.
    pub slide_path: String,
    pub slide_role: SlideRole,
}

impl ManifestEntry {
    /// File stem of the slide path.
    pub fn slide_id(&self) -> String {
        Path::new(&self.slide_path)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.slide_path.clone())
    }
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, EvalError> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub label: Label,
    pub density: Option<DensityClass>,
    pub slide_paths: Vec<String>,
}

/// Groups manifest rows by patient, in order of first appearance.
pub fn patients_from_manifest(entries: &[ManifestEntry]) -> Result<Vec<PatientRecord>, EvalError> {
    let mut out: Vec<PatientRecord> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entries {
        match index.get(e.patient_id.as_str()) {
            Some(&i) => {
                if out[i].label != e.label {
                    return Err(EvalError::ConflictingLabel(e.patient_id.clone()));
                }
                out[i].slide_paths.push(e.slide_path.clone());
            }
            None => {
                index.insert(&e.patient_id, out.len());
                out.push(PatientRecord {
                    patient_id: e.patient_id.clone(),
                    label: e.label,
                    density: e.density,
                    slide_paths: vec![e.slide_path.clone()],
                });
            }
        }
    }
    Ok(out)
}

/// Positive-window fraction of one patient, pooled over their diagnosed slides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientScore {
    pub label: Label,
    pub fraction: f64,
}

pub fn patient_scores(
    patients: &[PatientRecord],
    diagnoses: &[SlideDiagnosis],
) -> Result<BTreeMap<String, PatientScore>, EvalError> {
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for d in diagnoses {
        let c = counts.entry(&d.patient_id).or_default();
        c.0 += d.n_positive;
        c.1 += d.n_windows;
    }
    let mut out = BTreeMap::new();
    for p in patients {
        let (pos, total) = counts
            .get(p.patient_id.as_str())
            .copied()
            .filter(|c| c.1 > 0)
            .ok_or_else(|| EvalError::MissingPatient(p.patient_id.clone()))?;
        out.insert(p.patient_id.clone(), PatientScore { label: p.label, fraction: pos as f64 / total as f64 });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub assignments: BTreeMap<String, usize>,
}

impl FoldPlan {
    pub fn fold_of(&self, patient_id: &str) -> Option<usize> {
        self.assignments.get(patient_id).copied()
    }

    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignments.iter().filter(|(_, &f)| f == fold).map(|(p, _)| p.as_str()).collect()
    }
}

/// Shuffles each class and deals it round-robin over the folds. Positives
/// continue where negatives stopped, so fold sizes differ by at most one.
pub fn make_folds(patients: &[PatientRecord], k: usize, seed: u64) -> Result<FoldPlan, EvalError> {
    if k < 2 {
        return Err(EvalError::InvalidFoldCount(k));
    }
    let mut seen = std::collections::BTreeSet::new();
    for p in patients {
        if !seen.insert(p.patient_id.as_str()) {
            return Err(EvalError::DuplicatePatient(p.patient_id.clone()));
        }
    }
    let mut neg: Vec<&str> = patients.iter().filter(|p| !p.label.is_positive()).map(|p| p.patient_id.as_str()).collect();
    let mut pos: Vec<&str> = patients.iter().filter(|p| p.label.is_positive()).map(|p| p.patient_id.as_str()).collect();
    if neg.len() < k || pos.len() < k {
        return Err(EvalError::TooFewPatients { k, negatives: neg.len(), positives: pos.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neg.shuffle(&mut rng);
    pos.shuffle(&mut rng);
    let offset = neg.len() % k;
    let mut assignments = BTreeMap::new();
    for (i, id) in neg.iter().enumerate() {
        assignments.insert(id.to_string(), i % k);
    }
    for (i, id) in pos.iter().enumerate() {
        assignments.insert(id.to_string(), (i + offset) % k);
    }
    Ok(FoldPlan { k, seed, assignments })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Precision, recall and F1 of one class. Undefined ratios (0/0) are 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl ClassMetrics {
    fn from_counts(hit: usize, false_alarm: usize, miss: usize) -> Self {
        let precision = ratio(hit, hit + false_alarm);
        let recall = ratio(hit, hit + miss);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Self { precision, recall, f1 }
    }
}

impl Confusion {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Negative, Label::Positive) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Positive, Label::Negative) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn positive(&self) -> ClassMetrics {
        ClassMetrics::from_counts(self.tp, self.fp, self.fn_)
    }

    pub fn negative(&self) -> ClassMetrics {
        ClassMetrics::from_counts(self.tn, self.fn_, self.fp)
    }

    fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPrediction {
    pub patient_id: String,
    pub fraction: f64,
    pub truth: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub threshold: f64,
    pub train_auc: f64,
    /// `None` when the held-out patients are all of one class.
    pub test_auc: Option<f64>,
    pub confusion: Confusion,
    pub accuracy: f64,
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
    pub predictions: Vec<FoldPrediction>,
}

/// ROC of the patients outside `fold`. Test patients' scores are never read.
pub fn fold_roc(fold: usize, plan: &FoldPlan, scores: &BTreeMap<String, PatientScore>) -> Result<RocCurve, EvalError> {
    let mut train = Vec::new();
    for (id, &f) in &plan.assignments {
        if f != fold {
            let s = scores.get(id).ok_or_else(|| EvalError::MissingPatient(id.clone()))?;
            train.push((s.fraction, s.label));
        }
    }
    roc_curve(&train).map_err(|source| EvalError::DegenerateFold { fold, source })
}

/// Operating threshold and training AUC of `fold`.
pub fn fold_threshold(
    fold: usize,
    plan: &FoldPlan,
    scores: &BTreeMap<String, PatientScore>,
) -> Result<(f64, f64), EvalError> {
    let curve = fold_roc(fold, plan, scores)?;
    Ok((curve.optimal.threshold, curve.auc))
}

pub fn run_fold(fold: usize, plan: &FoldPlan, scores: &BTreeMap<String, PatientScore>) -> Result<FoldMetrics, EvalError> {
    if fold >= plan.k {
        return Err(EvalError::NoSuchFold { fold, k: plan.k });
    }
    let (threshold, train_auc) = fold_threshold(fold, plan, scores)?;
    let mut confusion = Confusion::default();
    let mut predictions = Vec::new();
    for id in plan.members(fold) {
        let s = scores.get(id).ok_or_else(|| EvalError::MissingPatient(id.to_string()))?;
        let predicted = if s.fraction > threshold { Label::Positive } else { Label::Negative };
        confusion.add(s.label, predicted);
        predictions.push(FoldPrediction { patient_id: id.to_string(), fraction: s.fraction, truth: s.label, predicted });
    }
    let test: Vec<(f64, Label)> = predictions.iter().map(|p| (p.fraction, p.truth)).collect();
    let test_auc = roc_curve(&test).ok().map(|c| c.auc);
    Ok(FoldMetrics {
        fold,
        threshold,
        train_auc,
        test_auc,
        confusion,
        accuracy: confusion.accuracy(),
        positive: confusion.positive(),
        negative: confusion.negative(),
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub accuracy: MeanStd,
    pub positive: ClassSummary,
    pub negative: ClassSummary,
    /// Over folds whose held-out set has both classes.
    pub test_auc: MeanStd,
    pub threshold: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSummary {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub positive: ClassMetrics,
    pub negative: ClassMetrics,
}

/// Per-patient positive-window percentages grouped by true label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotData {
    pub negative: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative_median: f64,
    pub positive_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub seed: u64,
    pub n_patients: usize,
    /// ROC AUC over every evaluated patient at once.
    pub auc: f64,
    pub folds: Vec<FoldMetrics>,
    pub summary: FoldSummary,
    pub pooled: PooledSummary,
    pub boxplot: BoxplotData,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn aggregate_report(
    plan: &FoldPlan,
    folds: Vec<FoldMetrics>,
    scores: &BTreeMap<String, PatientScore>,
) -> Result<EvalReport, EvalError> {
    let col = |f: &dyn Fn(&FoldMetrics) -> f64| MeanStd::of(&folds.iter().map(f).collect::<Vec<_>>());
    let class = |pick: fn(&FoldMetrics) -> ClassMetrics| ClassSummary {
        precision: col(&|m| pick(m).precision),
        recall: col(&|m| pick(m).recall),
        f1: col(&|m| pick(m).f1),
    };
    let aucs: Vec<f64> = folds.iter().filter_map(|m| m.test_auc).collect();
    let summary = FoldSummary {
        accuracy: col(&|m| m.accuracy),
        positive: class(|m| m.positive),
        negative: class(|m| m.negative),
        test_auc: MeanStd::of(&aucs),
        threshold: col(&|m| m.threshold),
    };

    let mut confusion = Confusion::default();
    for m in &folds {
        confusion.merge(&m.confusion);
    }
    let all: Vec<(f64, Label)> = scores.values().map(|s| (s.fraction, s.label)).collect();
    let auc = roc_curve(&all)
        .map_err(|source| EvalError::DegenerateFold { fold: plan.k, source })?
        .auc;
    let pooled = PooledSummary {
        confusion,
        accuracy: confusion.accuracy(),
        positive: confusion.positive(),
        negative: confusion.negative(),
    };

    let pct = |label: Label| -> Vec<f64> {
        scores.values().filter(|s| s.label == label).map(|s| 100.0 * s.fraction).collect()
    };
    let (negative, positive) = (pct(Label::Negative), pct(Label::Positive));
    let boxplot = BoxplotData {
        negative_median: median(&negative),
        positive_median: median(&positive),
        negative,
        positive,
    };
    Ok(EvalReport { k: plan.k, seed: plan.seed, n_patients: scores.len(), auc, folds, summary, pooled, boxplot })
}

/// Runs every fold of `plan` and aggregates.
pub fn evaluate(plan: &FoldPlan, scores: &BTreeMap<String, PatientScore>) -> Result<EvalReport, EvalError> {
    let folds = (0..plan.k).map(|f| run_fold(f, plan, scores)).collect::<Result<Vec<_>, _>>()?;
    aggregate_report(plan, folds, scores)
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String, EvalError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Per-class precision/recall/F1 and accuracy as `mean ± std`, followed
    /// by the pooled confusion matrix.
    pub fn format_table(&self) -> String {
        let ms = |m: MeanStd| format!("{:.2} ± {:.2}", m.mean, m.std);
        let mut s = String::new();
        let _ = writeln!(s, "{}-fold validation, {} patients", self.k, self.n_patients);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<10} {:>14} {:>14}", "", "positive", "negative");
        for (name, p, n) in [
            ("precision", self.summary.positive.precision, self.summary.negative.precision),
            ("recall", self.summary.positive.recall, self.summary.negative.recall),
            ("f1-score", self.summary.positive.f1, self.summary.negative.f1),
        ] {
            let _ = writeln!(s, "{:<10} {:>14} {:>14}", name, ms(p), ms(n));
        }
        let _ = writeln!(s, "{:<10} {:>14}", "accuracy", ms(self.summary.accuracy));
        let _ = writeln!(s, "{:<10} {:>14}", "threshold", ms(self.summary.threshold));
        let _ = writeln!(s, "{:<10} {:>14.3}", "auc", self.auc);
        let c = self.pooled.confusion;
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<16} {:>10} {:>10}", "truth \\ pred", "positive", "negative");
        let _ = writeln!(s, "{:<16} {:>10} {:>10}", "positive", format!("TP {}", c.tp), format!("FN {}", c.fn_));
        let _ = writeln!(s, "{:<16} {:>10} {:>10}", "negative", format!("FP {}", c.fp), format!("TN {}", c.tn));
        let _ = writeln!(s);
        let _ = writeln!(
            s,
            "median positive-window %: negative {:.2}, positive {:.2}",
            self.boxplot.negative_median, self.boxplot.positive_median
        );
        s
    }
}

/// Writes `label,patient_id,percentage` rows.
pub fn write_boxplot_csv(path: impl AsRef<Path>, scores: &BTreeMap<String, PatientScore>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["label", "patient_id", "percentage"])?;
    for (id, s) in scores {
        w.write_record([s.label.to_string(), id.clone(), format!("{}", 100.0 * s.fraction)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cohort(neg: usize, pos: usize) -> Vec<PatientRecord> {
        let mk = |prefix: &str, i: usize, label| PatientRecord {
            patient_id: format!("{prefix}{i:03}"),
            label,
            density: None,
            slide_paths: vec![format!("{prefix}{i:03}.png")],
        };
        (0..neg)
            .map(|i| mk("n", i, Label::Negative))
            .chain((0..pos).map(|i| mk("p", i, Label::Positive)))
            .collect()
    }

    fn class_counts(plan: &FoldPlan, fold: usize) -> (usize, usize) {
        let m = plan.members(fold);
        let pos = m.iter().filter(|id| id.starts_with('p')).count();
        (m.len() - pos, pos)
    }

    #[test]
    fn ten_by_ten_gives_one_pair_per_fold() {
        let plan = make_folds(&cohort(10, 10), 10, 3).unwrap();
        for f in 0..10 {
            assert_eq!(class_counts(&plan, f), (1, 1));
        }
    }

    #[test]
    fn cohort_of_117_and_128_is_stratified() {
        let plan = make_folds(&cohort(117, 128), 10, 7).unwrap();
        for f in 0..10 {
            let (n, p) = class_counts(&plan, f);
            assert!((11..=12).contains(&n) && (12..=13).contains(&p), "fold {f}: {n}/{p}");
            assert!((24..=25).contains(&(n + p)));
        }
        assert_eq!(plan.assignments.len(), 245);
        assert_eq!(make_folds(&cohort(117, 128), 10, 7).unwrap(), plan);
    }

    #[test]
    fn too_few_patients() {
        assert!(matches!(make_folds(&cohort(5, 20), 10, 0), Err(EvalError::TooFewPatients { .. })));
        assert!(matches!(make_folds(&cohort(5, 5), 1, 0), Err(EvalError::InvalidFoldCount(1))));
    }

    fn scores_for(patients: &[PatientRecord], f: impl Fn(usize, &PatientRecord) -> f64) -> BTreeMap<String, PatientScore> {
        patients
            .iter()
            .enumerate()
            .map(|(i, p)| (p.patient_id.clone(), PatientScore { label: p.label, fraction: f(i, p) }))
            .collect()
    }

    #[test]
    fn separable_fractions_are_perfect() {
        let patients = cohort(10, 10);
        let scores = scores_for(&patients, |i, p| if p.label.is_positive() { 0.1 + i as f64 * 0.01 } else { 0.0 });
        let plan = make_folds(&patients, 5, 1).unwrap();
        let report = evaluate(&plan, &scores).unwrap();
        assert_eq!(report.summary.accuracy, MeanStd { mean: 1.0, std: 0.0 });
        assert_eq!(report.pooled.confusion.fp + report.pooled.confusion.fn_, 0);
        assert_eq!(report.pooled.confusion.total(), 20);
        assert_eq!(report.auc, 1.0);
    }

    #[test]
    fn test_patients_do_not_move_the_threshold() {
        let patients = cohort(12, 12);
        let scores = scores_for(&patients, |i, _| ((i * 7919) % 23) as f64 / 23.0);
        let plan = make_folds(&patients, 4, 2).unwrap();
        for fold in 0..4 {
            let (t, _) = fold_threshold(fold, &plan, &scores).unwrap();
            let mut altered = scores.clone();
            for id in plan.members(fold) {
                altered.remove(id);
            }
            assert_eq!(fold_threshold(fold, &plan, &altered).unwrap().0, t);
        }
    }

    #[test]
    fn threshold_fit_on_test_fold_would_differ() {
        // training folds separate at 0.1; the held-out fold separates at 0.5
        let patients = cohort(4, 4);
        let plan = FoldPlan {
            k: 2,
            seed: 0,
            assignments: patients.iter().enumerate().map(|(i, p)| (p.patient_id.clone(), i % 2)).collect(),
        };
        let scores = scores_for(&patients, |i, p| match (i % 2, p.label.is_positive()) {
            (0, false) => 0.05,
            (0, true) => 0.2,
            (_, false) => 0.4,
            (_, true) => 0.6,
        });
        let honest = run_fold(1, &plan, &scores).unwrap();
        let test_only: Vec<(f64, Label)> = plan.members(1).iter().map(|id| (scores[*id].fraction, scores[*id].label)).collect();
        let leaked = roc_curve(&test_only).unwrap().optimal.threshold;
        assert_eq!(honest.threshold, 0.05);
        assert_eq!(leaked, 0.4);
        assert_eq!(honest.accuracy, 0.5);
        let leaked_acc = honest.predictions.iter().filter(|p| (p.fraction > leaked) == p.truth.is_positive()).count();
        assert_eq!(leaked_acc, 4);
    }

    #[test]
    fn pooled_metrics_match_recount() {
        let patients = cohort(15, 15);
        let scores = scores_for(&patients, |i, p| ((i * 31) % 17) as f64 / 17.0 + if p.label.is_positive() { 0.2 } else { 0.0 });
        let plan = make_folds(&patients, 5, 9).unwrap();
        let report = evaluate(&plan, &scores).unwrap();
        let preds: Vec<&FoldPrediction> = report.folds.iter().flat_map(|f| &f.predictions).collect();
        assert_eq!(preds.len(), 30);
        let count = |t: bool, p: bool| preds.iter().filter(|x| x.truth.is_positive() == t && x.predicted.is_positive() == p).count();
        let (tp, fp, fn_) = (count(true, true), count(false, true), count(true, false));
        let c = report.pooled.confusion;
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (tp, fp, fn_, count(false, false)));
        assert_eq!(report.pooled.positive.precision, ratio(tp, tp + fp));
        assert_eq!(report.pooled.positive.recall, ratio(tp, tp + fn_));
        for m in &report.folds {
            for v in [m.accuracy, m.positive.precision, m.positive.recall, m.negative.f1] {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn mean_std_is_sample_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - 1.2909944487358056).abs() < 1e-12);
        assert_eq!(MeanStd::of(&[0.7]).std, 0.0);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn manifest_round_trip() {
        let entries = vec![
            ManifestEntry {
                patient_id: "neg-001".into(),
                label: Label::Negative,
                density: None,
                slide_path: "slides/neg-001_s1.png".into(),
                slide_role: SlideRole::Train,
            },
            ManifestEntry {
                patient_id: "pos-001".into(),
                label: Label::Positive,
                density: Some(DensityClass::High),
                slide_path: "slides/pos-001_s2.png".into(),
                slide_role: SlideRole::Eval,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.csv");
        write_manifest(&p, &entries).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("patient_id,label,density,slide_path,slide_role\n"));
        assert!(text.contains("neg-001,negative,,slides/neg-001_s1.png,train"));
        assert_eq!(read_manifest(&p).unwrap(), entries);
        assert_eq!(entries[1].slide_id(), "pos-001_s2");
        let patients = patients_from_manifest(&entries).unwrap();
        assert_eq!(patients.len(), 2);
    }

    #[test]
    fn conflicting_labels_rejected() {
        let e = |label| ManifestEntry {
            patient_id: "x".into(),
            label,
            density: None,
            slide_path: "a.png".into(),
            slide_role: SlideRole::Eval,
        };
        assert!(matches!(
            patients_from_manifest(&[e(Label::Negative), e(Label::Positive)]),
            Err(EvalError::ConflictingLabel(_))
        ));
    }
}

//! Pipeline stages. Each one reads the files of the stage before it from the
//! workdir, writes its own, and leaves a stamp holding the hash of the
//! settings it ran with.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use hpscreen::anomaly::{read_scores, score_windows, write_scores, WindowScore};
use hpscreen::autoencoder::{load_model, save_model, train, AutoencoderModel};
use hpscreen::diagnosis::{
    diagnose_counts, roc_curve, write_diagnoses, write_roc_csv, write_roc_summary, Label, SlideDiagnosis,
};
use hpscreen::evaluation::{
    evaluate as run_folds, fold_roc, make_folds, patient_scores, patients_from_manifest, read_manifest,
    write_boxplot_csv, EvalReport, ManifestEntry, SlideRole,
};
use hpscreen::imaging::load_image;
use hpscreen::segmentation::{
    crop_window, detect_mask, enumerate_inference_windows, read_window_manifest, sample_training_windows,
    trace_borders, write_window_manifest, BorderTrace, WindowSpec,
};
use hpscreen::synth::{generate_cohort, ground_truth_path, slide_seed, SpotWindowStats, SynthGroundTruth};
use hpscreen::RasterImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{PipelineConfig, Stage};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.csv";
pub const SEGMENTATION: &str = "segmentation.csv";
pub const WINDOWS_TRAIN: &str = "windows_train.csv";
pub const WINDOWS_EVAL: &str = "windows_eval.csv";
pub const MODEL: &str = "model.hpae";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const SCORES: &str = "scores.csv";
pub const DIAGNOSES: &str = "diagnoses.csv";
pub const ROC: &str = "roc.csv";
pub const ROC_SUMMARY: &str = "roc_summary.json";
pub const ROC_FOLDS: &str = "roc_folds.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const BOXPLOT: &str = "boxplot.csv";

/// Evaluation report plus pipeline-level extras, as written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    #[serde(flatten)]
    pub evaluation: EvalReport,
    /// Present when the dataset carries generator ground truth.
    pub window_detection: Option<WindowDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowDetection {
    #[serde(flatten)]
    pub counts: SpotWindowStats,
    pub rate: Option<f64>,
    pub visible_rate: Option<f64>,
}

pub struct Pipeline {
    cfg: PipelineConfig,
    work: PathBuf,
    quiet: bool,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, quiet: bool) -> Result<Self, CliError> {
        let work = cfg.paths.workdir.clone();
        std::fs::create_dir_all(work.join("stamps")).map_err(CliError::io(&work))?;
        Ok(Self { cfg, work, quiet })
    }

    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }

    fn manifest_path(&self) -> PathBuf {
        match &self.cfg.paths.manifest {
            Some(p) => p.clone(),
            None => self.work.join("cohort").join(MANIFEST),
        }
    }

    fn manifest_digest(&self) -> Result<Option<String>, CliError> {
        let Some(p) = &self.cfg.paths.manifest else { return Ok(None) };
        let bytes = std::fs::read(p).map_err(|e| CliError::MissingInput { path: p.clone(), hint: e.to_string() })?;
        let d = Sha256::digest(&bytes);
        Ok(Some(d.iter().take(8).map(|b| format!("{b:02x}")).collect()))
    }

    fn hash(&self, stage: Stage) -> Result<String, CliError> {
        Ok(self.cfg.stage_hash(stage, self.manifest_digest()?.as_deref()))
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.work.join("stamps").join(stage.name())
    }

    fn write_stamp(&self, stage: Stage) -> Result<(), CliError> {
        let p = self.stamp_path(stage);
        std::fs::write(&p, self.hash(stage)? + "\n").map_err(CliError::io(p))
    }

    /// Fails unless `stage` last ran with the current settings.
    fn require(&self, stage: Stage) -> Result<(), CliError> {
        if stage == Stage::Synth && self.cfg.paths.manifest.is_some() {
            return Ok(());
        }
        let p = self.stamp_path(stage);
        let found = std::fs::read_to_string(&p).map_err(|_| CliError::MissingInput {
            path: p.clone(),
            hint: format!("run `hpscreen {}` first", stage.name()),
        })?;
        if found.trim() != self.hash(stage)? {
            return Err(CliError::Stale { stage: stage.name() });
        }
        Ok(())
    }

    fn manifest(&self) -> Result<(Vec<ManifestEntry>, PathBuf), CliError> {
        let p = self.manifest_path();
        if !p.exists() {
            return Err(CliError::MissingInput { path: p, hint: "run `hpscreen synth` or set paths.manifest".into() });
        }
        let entries = read_manifest(&p)?;
        let mut ids = BTreeSet::new();
        for e in &entries {
            if !ids.insert(e.slide_id()) {
                return Err(CliError::Data(format!("slide id {} appears twice in {}", e.slide_id(), p.display())));
            }
        }
        let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((entries, base))
    }

    fn traces_path(&self, slide_id: &str) -> PathBuf {
        self.work.join("traces").join(format!("{slide_id}.json"))
    }

    fn read_traces(&self, slide_id: &str) -> Result<Vec<BorderTrace>, CliError> {
        let p = self.traces_path(slide_id);
        let text = std::fs::read_to_string(&p)
            .map_err(|e| CliError::MissingInput { path: p.clone(), hint: e.to_string() })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn synth(&self) -> Result<(), CliError> {
        if self.cfg.paths.manifest.is_some() {
            return Err(CliError::Config("paths.manifest is set; there is no cohort to generate".into()));
        }
        let t = Instant::now();
        let out = self.work.join("cohort");
        let entries = generate_cohort(&self.cfg.synth, &out)?;
        self.note(format!("synth: {} slides in {} ({:.1}s)", entries.len(), out.display(), t.elapsed().as_secs_f64()));
        self.write_stamp(Stage::Synth)
    }

    pub fn segment(&self) -> Result<(), CliError> {
        self.require(Stage::Synth)?;
        let t = Instant::now();
        let (entries, base) = self.manifest()?;
        let dir = self.work.join("traces");
        std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;
        let rows: Vec<(String, usize, usize, usize)> = entries
            .par_iter()
            .map(|e| -> Result<_, CliError> {
                let slide = load_image(base.join(&e.slide_path))?;
                let mask = detect_mask(&slide, &self.cfg.mask);
                let traces = trace_borders(&mask);
                let p = self.traces_path(&e.slide_id());
                std::fs::write(&p, serde_json::to_string(&traces)?).map_err(CliError::io(p))?;
                let border: usize = traces.iter().map(|t| t.len()).sum();
                Ok((e.slide_id(), mask.count(), traces.len(), border))
            })
            .collect::<Result<_, _>>()?;
        let p = self.path(SEGMENTATION);
        let mut w = csv::Writer::from_path(&p).map_err(|e| CliError::Data(e.to_string()))?;
        let mut write = || -> Result<(), csv::Error> {
            w.write_record(["slide_id", "tissue_px", "n_components", "border_px"])?;
            for (id, tissue, n, border) in &rows {
                w.write_record([id.clone(), tissue.to_string(), n.to_string(), border.to_string()])?;
            }
            w.flush()?;
            Ok(())
        };
        write().map_err(|e| CliError::Data(e.to_string()))?;
        self.note(format!("segment: {} slides ({:.1}s)", rows.len(), t.elapsed().as_secs_f64()));
        self.write_stamp(Stage::Segment)
    }

    pub fn sample(&self) -> Result<(), CliError> {
        self.require(Stage::Segment)?;
        let (entries, _) = self.manifest()?;
        let s = &self.cfg.sampling;
        let mut train_windows = Vec::new();
        let mut eval_windows = Vec::new();
        for e in &entries {
            let id = e.slide_id();
            match (e.slide_role, e.label) {
                (SlideRole::Train, Label::Negative) => {
                    let traces = self.read_traces(&id)?;
                    let seed = slide_seed(s.seed, &id, 0);
                    train_windows.extend(sample_training_windows(&id, &e.patient_id, &traces, s.n_train_windows, seed, s.window)?);
                }
                (SlideRole::Eval, _) => {
                    let traces = self.read_traces(&id)?;
                    let windows = enumerate_inference_windows(&id, &e.patient_id, &traces, s.stride, s.window)?;
                    if windows.is_empty() {
                        return Err(CliError::Data(format!("no tissue border found on evaluation slide {id}")));
                    }
                    eval_windows.extend(windows);
                }
                (SlideRole::Train, Label::Positive) => {}
            }
        }
        if train_windows.is_empty() {
            return Err(CliError::Data("the manifest has no training slides of negative patients".into()));
        }
        write_window_manifest(self.path(WINDOWS_TRAIN), &train_windows)?;
        write_window_manifest(self.path(WINDOWS_EVAL), &eval_windows)?;
        self.note(format!("sample: {} training windows, {} evaluation windows", train_windows.len(), eval_windows.len()));
        self.write_stamp(Stage::Sample)
    }

    /// Crops `windows` grouped by slide, loading each slide once. Output
    /// order matches input order.
    fn crop_all(&self, windows: &[WindowSpec]) -> Result<Vec<RasterImage>, CliError> {
        let (entries, base) = self.manifest()?;
        let paths: BTreeMap<String, PathBuf> = entries.iter().map(|e| (e.slide_id(), base.join(&e.slide_path))).collect();
        let groups = group_by_slide(windows);
        let crops: Vec<Vec<RasterImage>> = groups
            .par_iter()
            .map(|(id, idx)| -> Result<_, CliError> {
                let path = paths.get(id).ok_or_else(|| CliError::Data(format!("window on unknown slide {id}")))?;
                let slide = load_image(path)?;
                idx.iter().map(|&i| Ok(crop_window(&slide, &windows[i])?)).collect()
            })
            .collect::<Result<_, _>>()?;
        let mut out: Vec<Option<RasterImage>> = vec![None; windows.len()];
        for ((_, idx), imgs) in groups.iter().zip(crops) {
            for (&i, img) in idx.iter().zip(imgs) {
                out[i] = Some(img);
            }
        }
        Ok(out.into_iter().map(|o| o.expect("every window belongs to one group")).collect())
    }

    pub fn train(&self) -> Result<(), CliError> {
        self.require(Stage::Sample)?;
        let t = Instant::now();
        let windows = read_window_manifest(self.path(WINDOWS_TRAIN), self.cfg.sampling.window.resized_to)?;
        let images = self.crop_all(&windows)?;
        self.note(format!(
            "train: {} windows, {} epochs, batch {}",
            images.len(),
            self.cfg.train.epochs,
            self.cfg.train.batch_size
        ));
        let model = AutoencoderModel::init(&self.cfg.autoencoder, self.cfg.train.seed)?;
        let (mut model, report) = train(model, &images, &self.cfg.train)?;
        model.meta.provenance = format!("cfg:{}", self.hash(Stage::Train)?);
        save_model(&model, self.path(MODEL))?;
        let log: String = std::iter::once("epoch,loss\n".to_string())
            .chain(report.epoch_losses.iter().enumerate().map(|(i, l)| format!("{},{l}\n", i + 1)))
            .collect();
        let p = self.path(TRAIN_LOG);
        std::fs::write(&p, log).map_err(CliError::io(p))?;
        self.note(format!(
            "train: final loss {:.6} after {} steps ({:.1}s)",
            model.meta.final_loss,
            report.steps,
            t.elapsed().as_secs_f64()
        ));
        self.write_stamp(Stage::Train)
    }

    fn load_checked_model(&self) -> Result<AutoencoderModel, CliError> {
        let p = self.path(MODEL);
        if !p.exists() {
            return Err(CliError::MissingInput { path: p, hint: "run `hpscreen train` first".into() });
        }
        let model = load_model(&p)?;
        if model.meta.provenance != format!("cfg:{}", self.hash(Stage::Train)?) {
            return Err(CliError::Stale { stage: Stage::Train.name() });
        }
        Ok(model)
    }

    pub fn score(&self) -> Result<(), CliError> {
        self.require(Stage::Train)?;
        let t = Instant::now();
        let model = self.load_checked_model()?;
        let windows = read_window_manifest(self.path(WINDOWS_EVAL), self.cfg.sampling.window.resized_to)?;
        let images = self.crop_all(&windows)?;
        let items: Vec<(WindowSpec, RasterImage)> = windows.into_iter().zip(images).collect();
        let batch = self.cfg.scoring.batch_size;
        let scored: Vec<Vec<WindowScore>> = items
            .par_chunks(batch)
            .map(|chunk| score_windows(&model, chunk, &self.cfg.red_filter, batch))
            .collect::<Result<_, _>>()?;
        let scores: Vec<WindowScore> = scored.into_iter().flatten().collect();
        write_scores(self.path(SCORES), &scores)?;
        let positive = scores.iter().filter(|s| s.positive).count();
        self.note(format!(
            "score: {} windows, {} positive ({:.1}s)",
            scores.len(),
            positive,
            t.elapsed().as_secs_f64()
        ));
        self.write_stamp(Stage::Score)
    }

    fn read_checked_scores(&self) -> Result<Vec<WindowScore>, CliError> {
        self.require(Stage::Score)?;
        let g = self.cfg.sampling.window;
        Ok(read_scores(self.path(SCORES), g.size, g.resized_to)?)
    }

    /// Per-slide positive counts of evaluation slides, in manifest order.
    fn slide_diagnoses(
        &self,
        entries: &[ManifestEntry],
        scores: &[WindowScore],
        threshold: f64,
    ) -> Result<Vec<SlideDiagnosis>, CliError> {
        let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for s in scores {
            let c = counts.entry(&s.window.slide_id).or_default();
            c.0 += 1;
            c.1 += s.positive as usize;
        }
        entries
            .iter()
            .filter(|e| e.slide_role == SlideRole::Eval)
            .map(|e| {
                let id = e.slide_id();
                let &(n, pos) = counts
                    .get(id.as_str())
                    .ok_or_else(|| CliError::Data(format!("no scored windows for evaluation slide {id}")))?;
                Ok(diagnose_counts(&id, &e.patient_id, n, pos, threshold))
            })
            .collect()
    }

    /// Diagnoses every evaluation slide. Without `threshold`, the operating
    /// point is the ROC optimum over all evaluation slides; the
    /// cross-validated predictions come from `evaluate`.
    pub fn diagnose(&self, threshold: Option<f64>) -> Result<(), CliError> {
        let scores = self.read_checked_scores()?;
        let (entries, _) = self.manifest()?;
        let provisional = self.slide_diagnoses(&entries, &scores, 0.0)?;
        let labels: BTreeMap<String, Label> = entries.iter().map(|e| (e.slide_id(), e.label)).collect();
        let samples: Vec<(f64, Label)> = provisional.iter().map(|d| (d.positive_fraction, labels[&d.slide_id])).collect();
        let threshold = match threshold {
            Some(t) => t,
            None => {
                let curve = roc_curve(&samples)?;
                write_roc_csv(self.path(ROC), &curve)?;
                write_roc_summary(self.path(ROC_SUMMARY), &curve)?;
                self.note(format!("diagnose: AUC {:.4}, threshold {:.4}", curve.auc, curve.optimal.threshold));
                curve.optimal.threshold
            }
        };
        let diagnoses = self.slide_diagnoses(&entries, &scores, threshold)?;
        write_diagnoses(self.path(DIAGNOSES), &diagnoses)?;
        let positive = diagnoses.iter().filter(|d| d.predicted == Label::Positive).count();
        self.note(format!("diagnose: {positive} of {} slides positive", diagnoses.len()));
        self.write_stamp(Stage::Diagnose)
    }

    pub fn evaluate(&self) -> Result<PipelineReport, CliError> {
        let scores = self.read_checked_scores()?;
        let (entries, base) = self.manifest()?;
        let eval_entries: Vec<ManifestEntry> =
            entries.iter().filter(|e| e.slide_role == SlideRole::Eval).cloned().collect();
        let diagnoses = self.slide_diagnoses(&entries, &scores, 0.0)?;
        let patients = patients_from_manifest(&eval_entries)?;
        let per_patient = patient_scores(&patients, &diagnoses)?;
        let plan = make_folds(&patients, self.cfg.evaluation.k, self.cfg.evaluation.seed)?;
        let report = run_folds(&plan, &per_patient)?;

        let p = self.path(ROC_FOLDS);
        let mut rows = String::from("fold,threshold,fpr,tpr\n");
        for fold in 0..plan.k {
            for pt in fold_roc(fold, &plan, &per_patient)?.points {
                rows.push_str(&format!("{fold},{},{},{}\n", pt.threshold, pt.fpr, pt.tpr));
            }
        }
        std::fs::write(&p, rows).map_err(CliError::io(p))?;
        write_boxplot_csv(self.path(BOXPLOT), &per_patient)?;

        let window_detection = self.window_detection(&eval_entries, &base, &scores)?;
        let full = PipelineReport { config_hash: self.hash(Stage::Evaluate)?, evaluation: report, window_detection };
        let json = serde_json::to_string_pretty(&full)? + "\n";
        let p = self.path(REPORT_JSON);
        std::fs::write(&p, json).map_err(CliError::io(p))?;
        let mut text = full.evaluation.format_table();
        if let Some(w) = &full.window_detection {
            text.push_str(&format!(
                "spot windows flagged: {}/{} (visible at model resolution: {}/{})\n",
                w.counts.spot_windows_flagged,
                w.counts.spot_windows,
                w.counts.visible_spot_windows_flagged,
                w.counts.visible_spot_windows
            ));
        }
        let p = self.path(REPORT_TXT);
        std::fs::write(&p, &text).map_err(CliError::io(p))?;
        self.note(text.trim_end());
        self.write_stamp(Stage::Evaluate)?;
        Ok(full)
    }

    /// Spot-window statistics when every evaluation slide has a generator
    /// ground-truth file next to the manifest.
    fn window_detection(
        &self,
        eval_entries: &[ManifestEntry],
        base: &Path,
        scores: &[WindowScore],
    ) -> Result<Option<WindowDetection>, CliError> {
        let truth_paths: Vec<PathBuf> = eval_entries.iter().map(|e| ground_truth_path(base, &e.slide_id())).collect();
        if !truth_paths.iter().all(|p| p.exists()) {
            return Ok(None);
        }
        let mut by_slide: BTreeMap<&str, Vec<WindowScore>> = BTreeMap::new();
        for s in scores {
            by_slide.entry(&s.window.slide_id).or_default().push(s.clone());
        }
        let mut counts = SpotWindowStats::default();
        for (e, p) in eval_entries.iter().zip(&truth_paths) {
            let truth = SynthGroundTruth::read_json(p)?;
            counts.add_slide(&truth, by_slide.get(e.slide_id().as_str()).map(Vec::as_slice).unwrap_or(&[]))?;
        }
        Ok(Some(WindowDetection { counts, rate: counts.rate(), visible_rate: counts.visible_rate() }))
    }

    pub fn run_all(&self) -> Result<PipelineReport, CliError> {
        if self.cfg.paths.manifest.is_none() {
            self.synth()?;
        }
        self.segment()?;
        self.sample()?;
        self.train()?;
        self.score()?;
        self.diagnose(None)?;
        self.evaluate()
    }
}

/// Window indices grouped by slide, groups in order of first appearance.
fn group_by_slide(windows: &[WindowSpec]) -> Vec<(String, Vec<usize>)> {
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, w) in windows.iter().enumerate() {
        let g = *index.entry(&w.slide_id).or_insert_with(|| {
            groups.push((w.slide_id.clone(), Vec::new()));
            groups.len() - 1
        });
        groups[g].1.push(i);
    }
    groups
}

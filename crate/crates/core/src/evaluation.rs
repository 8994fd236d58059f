//! Metrics, aggregation and the evaluation protocols.
//!
//! Standard deviations across runs use the sample (n − 1) convention. A cell
//! with a single run reports a deviation of 0 and sets
//! [`EvalReport::single_run`].

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::EmotionLabel;
use crate::manifest::{DatasetManifest, ImageRecord};
use crate::report::RunStore;
use crate::seed::{derive_seed, rng_from_seed};

pub type Probabilities = [f32; EmotionLabel::COUNT];

const K: usize = EmotionLabel::COUNT;

/// Index of the largest probability; ties resolve to the lower index.
pub fn argmax(p: &Probabilities) -> EmotionLabel {
    let mut best = 0;
    for i in 1..K {
        if p[i] > p[best] {
            best = i;
        }
    }
    EmotionLabel::from_index(best).expect("index < 7")
}

/// `m[true][predicted]` counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[u64; K]; K]);

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (EmotionLabel, EmotionLabel)>) -> Self {
        let mut m = Self::default();
        for (t, p) in pairs {
            m.0[t.index()][p.index()] += 1;
        }
        m
    }

    pub fn get(&self, truth: EmotionLabel, predicted: EmotionLabel) -> u64 {
        self.0[truth.index()][predicted.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.0[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    pub fn predicted_count(&self, class: EmotionLabel) -> u64 {
        (0..K).map(|r| self.0[r][class.index()]).sum()
    }

    pub fn actual_count(&self, class: EmotionLabel) -> u64 {
        self.0[class.index()].iter().sum()
    }

    /// Precision and recall per class. A class that is never predicted has no
    /// precision; one that never occurs has no recall.
    pub fn per_class(&self) -> BTreeMap<EmotionLabel, ClassMetrics> {
        EmotionLabel::ALL
            .iter()
            .map(|&c| {
                let tp = self.0[c.index()][c.index()] as f64;
                let ratio = |n: u64| (n > 0).then(|| tp / n as f64);
                (
                    c,
                    ClassMetrics {
                        precision: ratio(self.predicted_count(c)),
                        recall: ratio(self.actual_count(c)),
                    },
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// One trained model evaluated on one test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub seed: u64,
    pub train_set: String,
    pub test_set: String,
    pub backbone: String,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

impl RunResult {
    pub fn new(
        run_id: impl Into<String>,
        seed: u64,
        train_set: impl Into<String>,
        test_set: impl Into<String>,
        backbone: impl Into<String>,
        confusion: ConfusionMatrix,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            seed,
            train_set: train_set.into(),
            test_set: test_set.into(),
            backbone: backbone.into(),
            accuracy: confusion.accuracy(),
            confusion,
        }
    }
}

pub fn per_class_metrics(result: &RunResult) -> BTreeMap<EmotionLabel, ClassMetrics> {
    result.confusion.per_class()
}

/// Mean and sample standard deviation; the deviation of a single value is 0.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

/// Aggregate over the runs of one (train set, backbone, test set) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub train_set: String,
    pub test_set: String,
    pub backbone: String,
    /// Percent.
    pub mean_accuracy: f64,
    /// Percent, sample convention.
    pub std_accuracy: f64,
    pub expected_runs: usize,
    pub single_run: bool,
    /// False when fewer runs completed than configured.
    pub complete: bool,
    /// Per-class metrics of the most accurate run.
    pub per_class: BTreeMap<EmotionLabel, ClassMetrics>,
    pub best_run_id: Option<String>,
    pub runs: Vec<RunResult>,
    #[serde(default)]
    pub failures: Vec<RunFailure>,
}

impl EvalReport {
    pub fn from_runs(
        name: impl Into<String>,
        train_set: impl Into<String>,
        test_set: impl Into<String>,
        backbone: impl Into<String>,
        expected_runs: usize,
        runs: Vec<RunResult>,
        failures: Vec<RunFailure>,
    ) -> Self {
        let accs: Vec<f64> = runs.iter().map(|r| r.accuracy * 100.0).collect();
        let (mean, std) = mean_std(&accs);
        let best = runs
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.accuracy.total_cmp(&b.accuracy).then(ib.cmp(ia)))
            .map(|(_, r)| r);
        Self {
            name: name.into(),
            train_set: train_set.into(),
            test_set: test_set.into(),
            backbone: backbone.into(),
            mean_accuracy: mean,
            std_accuracy: std,
            expected_runs,
            single_run: runs.len() == 1,
            complete: failures.is_empty() && runs.len() == expected_runs,
            per_class: best.map(|r| r.confusion.per_class()).unwrap_or_default(),
            best_run_id: best.map(|r| r.run_id.clone()),
            runs,
            failures,
        }
    }

    /// Recomputes mean and deviation from the runs and compares them with the
    /// stored values at `1e-9` relative tolerance.
    pub fn verify(&self) -> Result<()> {
        let accs: Vec<f64> = self.runs.iter().map(|r| r.accuracy * 100.0).collect();
        let (mean, std) = mean_std(&accs);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        if !(close(mean, self.mean_accuracy) || mean == self.mean_accuracy) {
            return Err(Error::Evaluation(format!(
                "stored mean {} != recomputed {mean}",
                self.mean_accuracy
            )));
        }
        if !(close(std, self.std_accuracy) || std == self.std_accuracy) {
            return Err(Error::Evaluation(format!(
                "stored std {} != recomputed {std}",
                self.std_accuracy
            )));
        }
        for run in &self.runs {
            if run.accuracy != run.confusion.accuracy() {
                return Err(Error::Evaluation(format!(
                    "run {} accuracy disagrees with its confusion matrix",
                    run.run_id
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {} -> {} | {:.2} ± {:.2} % (n={}{})",
            self.backbone,
            self.train_set,
            self.test_set,
            self.mean_accuracy,
            self.std_accuracy,
            self.runs.len(),
            if self.complete { "" } else { ", INCOMPLETE" }
        )
    }
}

/// A model that maps records to class probabilities.
pub trait Classifier {
    fn name(&self) -> &str;
    fn predict_records(&self, records: &[ImageRecord]) -> Result<Vec<Probabilities>>;
}

/// Produces a trained classifier for a (backbone, training set, seed) triple.
pub trait ModelTrainer {
    fn train(&self, backbone: &str, train: &DatasetManifest, seed: u64) -> Result<Box<dyn Classifier>>;

    /// Digest of everything besides the inputs that affects training; part
    /// of the content address of stored runs.
    fn config_digest(&self) -> String {
        String::new()
    }
}

const EVAL_BATCH: usize = 32;

/// Confusion matrix of argmax predictions over `test`.
pub fn evaluate_model(
    model: &dyn Classifier,
    test: &DatasetManifest,
    run_id: &str,
    seed: u64,
    train_set: &str,
) -> Result<RunResult> {
    if test.is_empty() {
        return Err(Error::Evaluation(format!("test set `{}` is empty", test.name())));
    }
    let mut confusion = ConfusionMatrix::default();
    for chunk in test.records().chunks(EVAL_BATCH) {
        let probs = model.predict_records(chunk)?;
        if probs.len() != chunk.len() {
            return Err(Error::Evaluation(format!(
                "model `{}` returned {} predictions for {} records",
                model.name(),
                probs.len(),
                chunk.len()
            )));
        }
        for (record, p) in chunk.iter().zip(&probs) {
            confusion.0[record.label.index()][argmax(p).index()] += 1;
        }
    }
    Ok(RunResult::new(
        run_id,
        seed,
        train_set,
        test.name(),
        model.name(),
        confusion,
    ))
}

/// Order-sensitive digest of a manifest's ids and labels.
pub fn manifest_digest(m: &DatasetManifest) -> String {
    let mut bytes = Vec::new();
    for r in m.records() {
        bytes.extend_from_slice(r.id.as_bytes());
        bytes.push(0);
        bytes.push(r.label.index() as u8);
    }
    crate::seed::hex_digest(&bytes)
}

/// Trains `runs_per_cell` models per (train set, backbone) with seeds
/// `seed_base..seed_base + runs_per_cell` and evaluates each on every test
/// set. Returns one report per (train set, backbone, test set).
///
/// A failed run marks its cells incomplete. With a `store`, finished runs
/// are persisted and reused on the next invocation.
pub fn cross_database_suite(
    trainer: &dyn ModelTrainer,
    backbones: &[String],
    train_sets: &[DatasetManifest],
    test_sets: &[DatasetManifest],
    runs_per_cell: usize,
    seed_base: u64,
    store: Option<&RunStore>,
) -> Result<Vec<EvalReport>> {
    if runs_per_cell == 0 {
        return Err(Error::Config("runs_per_cell must be positive".into()));
    }
    let config = trainer.config_digest();
    let mut reports = Vec::new();
    for train in train_sets {
        let train_digest = manifest_digest(train);
        for backbone in backbones {
            let mut cells: Vec<(Vec<RunResult>, Vec<RunFailure>)> = vec![Default::default(); test_sets.len()];
            for run in 0..runs_per_cell {
                let seed = seed_base + run as u64;
                let run_id = format!("{}-{}-s{}", train.name(), backbone, seed);
                let keys: Vec<String> = test_sets
                    .iter()
                    .map(|t| {
                        RunStore::key(&[
                            backbone,
                            train.name(),
                            &train_digest,
                            t.name(),
                            &manifest_digest(t),
                            &config,
                            &seed.to_string(),
                        ])
                    })
                    .collect();
                let cached: Option<Vec<RunResult>> = store.and_then(|s| keys.iter().map(|k| s.load(k)).collect());
                let results = match cached {
                    Some(results) => {
                        tracing::info!(stage = "eval_cross", run = %run_id, "reusing stored run");
                        Ok(results)
                    }
                    None => trainer.train(backbone, train, seed).and_then(|model| {
                        test_sets
                            .iter()
                            .map(|t| evaluate_model(model.as_ref(), t, &run_id, seed, train.name()))
                            .collect::<Result<Vec<_>>>()
                    }),
                };
                match results {
                    Ok(results) => {
                        for ((cell, key), result) in cells.iter_mut().zip(&keys).zip(results) {
                            if let Some(s) = store {
                                s.save(key, &result)?;
                            }
                            tracing::info!(
                                stage = "eval_cross",
                                run = %run_id,
                                test = %result.test_set,
                                accuracy = result.accuracy,
                                "run finished"
                            );
                            cell.0.push(result);
                        }
                    }
                    Err(e) => {
                        tracing::error!(stage = "eval_cross", run = %run_id, error = %e, "run failed");
                        for cell in cells.iter_mut() {
                            cell.1.push(RunFailure {
                                seed,
                                error: e.to_string(),
                            });
                        }
                    }
                }
            }
            for (test, (runs, failures)) in test_sets.iter().zip(cells) {
                reports.push(EvalReport::from_runs(
                    format!("cross_{}_{}_{}", train.name(), backbone, test.name()),
                    train.name(),
                    test.name(),
                    backbone.as_str(),
                    runs_per_cell,
                    runs,
                    failures,
                ));
            }
        }
    }
    Ok(reports)
}

/// Stratified partition of record indices into `k` folds.
///
/// Each label's indices are shuffled with a seed derived from `seed` and the
/// label, the per-label lists are concatenated in label order, and position
/// `i` of that sequence goes to fold `i mod k`. Fold sizes and per-label
/// fold counts therefore differ by at most one.
pub fn stratified_kfold(labels: &[EmotionLabel], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::Partition(format!("k = {k}; at least 2 folds are needed")));
    }
    let mut by_label: BTreeMap<EmotionLabel, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    for (label, idx) in &by_label {
        if idx.len() < k {
            return Err(Error::Partition(format!(
                "label {label} has {} records, fewer than k = {k}",
                idx.len()
            )));
        }
    }
    let mut folds = vec![Vec::with_capacity(labels.len() / k + 1); k];
    let mut position = 0usize;
    for (label, mut idx) in by_label {
        let mut rng = rng_from_seed(derive_seed(seed, label.as_str(), 0));
        idx.shuffle(&mut rng);
        for i in idx {
            folds[position % k].push(i);
            position += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

/// k-fold cross validation on a single manifest.
pub fn kfold_suite(
    trainer: &dyn ModelTrainer,
    union: &DatasetManifest,
    backbone: &str,
    k: usize,
    seed: u64,
    store: Option<&RunStore>,
) -> Result<EvalReport> {
    let labels: Vec<_> = union.records().iter().map(|r| r.label).collect();
    let folds = stratified_kfold(&labels, k, seed)?;
    let config = trainer.config_digest();
    let union_digest = manifest_digest(union);
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (f, val_idx) in folds.iter().enumerate() {
        let mut in_val = vec![false; union.len()];
        for &i in val_idx {
            in_val[i] = true;
        }
        let train_idx: Vec<usize> = (0..union.len()).filter(|&i| !in_val[i]).collect();
        let train = union.select(format!("{}_train{f}", union.name()), &train_idx);
        let val = union.select(format!("{}_fold{f}", union.name()), val_idx);
        let fold_seed = seed + f as u64;
        let run_id = format!("{}-{}-fold{f}", union.name(), backbone);
        let key = RunStore::key(&[
            backbone,
            union.name(),
            &union_digest,
            &k.to_string(),
            &f.to_string(),
            &config,
            &seed.to_string(),
        ]);
        if let Some(r) = store.and_then(|s| s.load(&key)) {
            runs.push(r);
            continue;
        }
        match trainer
            .train(backbone, &train, fold_seed)
            .and_then(|model| evaluate_model(model.as_ref(), &val, &run_id, fold_seed, union.name()))
        {
            Ok(result) => {
                if let Some(s) = store {
                    s.save(&key, &result)?;
                }
                tracing::info!(
                    stage = "eval_kfold",
                    fold = f,
                    accuracy = result.accuracy,
                    "fold finished"
                );
                runs.push(result);
            }
            Err(e) => {
                tracing::error!(stage = "eval_kfold", fold = f, error = %e, "fold failed");
                failures.push(RunFailure {
                    seed: fold_seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(EvalReport::from_runs(
        format!("kfold_{}_{}_k{k}", union.name(), backbone),
        union.name(),
        format!("{k}-fold validation"),
        backbone,
        k,
        runs,
        failures,
    ))
}

/// Expected number of generated images per emotion group.
pub const GAN_GROUP_SIZE: usize = 150;

/// Fraction of each emotion group that a classifier assigns to that emotion.
pub fn gan_quality_check(
    classifiers: &[&dyn Classifier],
    gan_sets: &BTreeMap<EmotionLabel, DatasetManifest>,
) -> Result<BTreeMap<(String, EmotionLabel), f64>> {
    let mut out = BTreeMap::new();
    for (&emotion, group) in gan_sets {
        if group.is_empty() {
            return Err(Error::Evaluation(format!("GAN group for {emotion} is empty")));
        }
        if group.len() != GAN_GROUP_SIZE {
            tracing::warn!(
                stage = "eval_gan_quality",
                %emotion,
                size = group.len(),
                expected = GAN_GROUP_SIZE,
                "unexpected group size; using actual size"
            );
        }
        for clf in classifiers {
            let mut correct = 0usize;
            for chunk in group.records().chunks(EVAL_BATCH) {
                let probs = clf.predict_records(chunk)?;
                correct += probs.iter().filter(|p| argmax(p) == emotion).count();
            }
            out.insert((clf.name().to_string(), emotion), correct as f64 / group.len() as f64);
        }
    }
    Ok(out)
}

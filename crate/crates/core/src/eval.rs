//! Confusion matrices, F1 scores, seed selection and error reports.

use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Label};
use crate::textprep::{build_training_example, SequencePair};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("predictions ({preds}) and gold labels ({golds}) differ in length")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
}

/// Rows are gold labels, columns predicted labels, both in [`Label::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 4]; 4],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 4]; 4]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn get(&self, gold: Label, pred: Label) -> u64 {
        self.counts[gold.index()][pred.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: Label) -> u64 {
        self.counts[gold.index()].iter().sum()
    }

    pub fn col_sum(&self, pred: Label) -> u64 {
        self.counts.iter().map(|r| r[pred.index()]).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..4).map(|i| self.counts[i][i]).sum()
    }
}

pub fn confusion_matrix(preds: &[Label], golds: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), golds: golds.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (p, g) in preds.iter().zip(golds) {
        cm.counts[g.index()][p.index()] += 1;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: [f64; 4],
    pub recall: [f64; 4],
    pub per_class_f1: [f64; 4],
    pub macro_f1: f64,
    pub accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class F1 is 0 whenever precision and recall are both 0 or undefined.
pub fn scores(cm: &ConfusionMatrix) -> Scores {
    let mut precision = [0.0; 4];
    let mut recall = [0.0; 4];
    let mut f1 = [0.0; 4];
    for l in Label::ALL {
        let i = l.index();
        let tp = cm.counts[i][i];
        precision[i] = ratio(tp, cm.col_sum(l));
        recall[i] = ratio(tp, cm.row_sum(l));
        let s = precision[i] + recall[i];
        f1[i] = if s > 0.0 { 2.0 * precision[i] * recall[i] / s } else { 0.0 };
    }
    Scores {
        precision,
        recall,
        per_class_f1: f1,
        macro_f1: f1.iter().sum::<f64>() / 4.0,
        accuracy: ratio(cm.trace(), cm.total()),
    }
}

/// One misclassified post, laid out like an error-analysis table row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exhibit {
    pub post_id: String,
    pub reply_text: String,
    pub target_text: String,
    pub predicted: Label,
    pub gold: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cm: ConfusionMatrix,
    pub per_class_f1: [f64; 4],
    pub macro_f1: f64,
    pub accuracy: f64,
    pub exhibits: Vec<Exhibit>,
}

impl EvalReport {
    pub fn from_cm(cm: ConfusionMatrix) -> Self {
        let s = scores(&cm);
        EvalReport { cm, per_class_f1: s.per_class_f1, macro_f1: s.macro_f1, accuracy: s.accuracy, exhibits: Vec::new() }
    }

    pub fn from_predictions(preds: &[Label], golds: &[Label]) -> Result<Self, EvalError> {
        Ok(Self::from_cm(confusion_matrix(preds, golds)?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Plain-text rendering: score row, confusion matrix, then exhibits.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let names: Vec<String> = Label::ALL.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(
            s,
            "| {:<14} | {:>10} | {:>10} | {:>10} | {:>10} |",
            "Macro F1", "F1 Support", "F1 Deny", "F1 Query", "F1 Comment"
        );
        let _ = writeln!(
            s,
            "| {:<14.4} | {:>10.4} | {:>10.4} | {:>10.4} | {:>10.4} |",
            self.macro_f1, self.per_class_f1[0], self.per_class_f1[1], self.per_class_f1[2], self.per_class_f1[3]
        );
        let _ = writeln!(s, "\nAccuracy: {:.4}\n", self.accuracy);
        let _ = writeln!(s, "Confusion matrix (rows: true label, columns: predicted label)");
        let _ = writeln!(
            s,
            "| {:<10} | {:>8} | {:>8} | {:>8} | {:>8} |",
            "True label", names[0], names[1], names[2], names[3]
        );
        for (l, row) in Label::ALL.iter().zip(&self.cm.counts) {
            let _ = writeln!(
                s,
                "| {:<10} | {:>8} | {:>8} | {:>8} | {:>8} |",
                l.to_string(),
                row[0],
                row[1],
                row[2],
                row[3]
            );
        }
        if !self.exhibits.is_empty() {
            let _ = writeln!(s, "\n| Note | Reply-post | Target | Predicted label | True label |");
            for (i, e) in self.exhibits.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {} | {} |",
                    i + 1,
                    e.reply_text,
                    e.target_text,
                    e.predicted,
                    e.gold
                );
            }
        }
        s
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_table())
    }
}

/// Anything that maps a sequence pair to a label.
pub trait Classifier {
    type Error: std::error::Error;

    fn classify(&self, pair: &SequencePair) -> Result<Label, Self::Error>;
}

/// Scores `model` on every labeled post of `corpus` and keeps up to `k`
/// misclassified examples for each (gold, predicted) cell.
pub fn error_report<C: Classifier>(model: &C, corpus: &Corpus, k: usize) -> Result<EvalReport, C::Error> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut per_cell = [[0usize; 4]; 4];
    let mut exhibits = Vec::new();
    for (thread, post) in corpus.posts() {
        let Some(gold) = post.label else { continue };
        let pair = build_training_example(post, thread).expect("corpus posts belong to their thread");
        let pred = model.classify(&pair)?;
        preds.push(pred);
        golds.push(gold);
        if pred != gold && per_cell[gold.index()][pred.index()] < k {
            per_cell[gold.index()][pred.index()] += 1;
            exhibits.push(Exhibit {
                post_id: post.id.clone(),
                reply_text: post.text.clone(),
                target_text: pair.second.clone(),
                predicted: pred,
                gold,
            });
        }
    }
    let cm = if preds.is_empty() { ConfusionMatrix::default() } else { confusion_matrix(&preds, &golds).unwrap() };
    let mut report = EvalReport::from_cm(cm);
    report.exhibits = exhibits;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    #[default]
    MacroF1,
    Accuracy,
}

impl SelectionMetric {
    pub fn of(self, report: &EvalReport) -> f64 {
        match self {
            SelectionMetric::MacroF1 => report.macro_f1,
            SelectionMetric::Accuracy => report.accuracy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedRun<M> {
    pub seed: u64,
    pub model: M,
    pub dev_report: EvalReport,
}

/// The run with the best dev score; the lowest seed wins ties.
pub fn select_best_seed<M>(runs: Vec<SeedRun<M>>, metric: SelectionMetric) -> Result<SeedRun<M>, EvalError> {
    runs.into_iter()
        .reduce(|best, run| {
            let (a, b) = (metric.of(&best.dev_report), metric.of(&run.dev_report));
            if b > a || (b == a && run.seed < best.seed) {
                run
            } else {
                best
            }
        })
        .ok_or(EvalError::Empty)
}

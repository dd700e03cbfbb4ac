//! Confusion matrix, agreement statistics and micro-averaged ROC.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::argmax_rows;

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confusion {
    classes: usize,
    counts: Vec<u64>,
}

impl Confusion {
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::Data("confusion matrix must be square".into()));
        }
        Ok(Confusion {
            classes,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Confusion> {
    if truth.len() != predicted.len() {
        return Err(Error::Data(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (k, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        if t >= classes || p >= classes {
            return Err(Error::Data(format!(
                "sample {k}: labels ({t}, {p}) outside 0..{classes}"
            )));
        }
        counts[t * classes + p] += 1;
    }
    Ok(Confusion { classes, counts })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// False when nothing was predicted as this class; precision is then 0.
    pub precision_defined: bool,
    /// False when the class has no true samples; recall is then 0.
    pub recall_defined: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub gaa: f64,
    pub kappa: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, false)
    } else {
        (num as f64 / den as f64, true)
    }
}

pub fn classification_metrics(c: &Confusion) -> Result<Metrics> {
    let total = c.total();
    if c.classes == 0 || total == 0 {
        return Err(Error::Data("confusion matrix is empty".into()));
    }
    let n = total as f64;
    let gaa = c.trace() as f64 / n;
    let pe: f64 = (0..c.classes)
        .map(|i| c.row_sum(i) as f64 * c.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    // pe == 1 only when truth and predictions are one identical class
    let kappa = if pe >= 1.0 { 1.0 } else { (gaa - pe) / (1.0 - pe) };
    let per_class: Vec<ClassMetrics> = (0..c.classes)
        .map(|i| {
            let tp = c.get(i, i);
            let (precision, precision_defined) = ratio(tp, c.col_sum(i));
            let (recall, recall_defined) = ratio(tp, c.row_sum(i));
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                precision,
                recall,
                f1,
                support: c.row_sum(i),
                precision_defined,
                recall_defined,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c.classes as f64;
    Ok(Metrics {
        gaa,
        kappa,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +inf.
    pub threshold: f64,
}

/// ROC of binary `(score, positive)` pairs, sweeping every distinct score
/// from high to low. Tied scores enter the curve together.
pub fn roc_binary(pairs: &mut [(f64, bool)]) -> Result<(Vec<RocPoint>, f64)> {
    if pairs.iter().any(|p| p.0.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC needs both positive and negative samples".into()));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < pairs.len() {
        let score = pairs[k].0;
        while k < pairs.len() && pairs[k].0 == score {
            if pairs[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let prev = points[points.len() - 1];
        let p = RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: score,
        };
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        points.push(p);
    }
    Ok((points, auc))
}

/// Micro-averaged one-vs-rest ROC over a `[samples, classes]` score matrix.
pub fn roc_auc(truth: &[usize], scores: &Tensor) -> Result<(Vec<RocPoint>, f64)> {
    let shape = scores.shape();
    if shape.len() != 2 || shape[0] != truth.len() {
        return Err(Error::Data(format!(
            "scores of shape {shape:?} do not match {} labels",
            truth.len()
        )));
    }
    let classes = shape[1];
    let mut pairs = Vec::with_capacity(scores.len());
    for (i, row) in scores.data().chunks(classes).enumerate() {
        if truth[i] >= classes {
            return Err(Error::Data(format!("label {} outside 0..{classes}", truth[i])));
        }
        pairs.extend(row.iter().enumerate().map(|(c, &s)| (s, c == truth[i])));
    }
    roc_binary(&mut pairs)
}

/// Everything reported for one evaluated split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub roc: Vec<RocPoint>,
    pub auc: f64,
}

impl EvalReport {
    /// Predictions are the row-wise argmax of `probabilities`.
    pub fn evaluate(truth: &[usize], probabilities: &Tensor, class_names: &[&str]) -> Result<Self> {
        let classes = class_names.len();
        if probabilities.shape().get(1) != Some(&classes) {
            return Err(Error::Data(format!(
                "probabilities of shape {:?} for {classes} classes",
                probabilities.shape()
            )));
        }
        let predicted = argmax_rows(probabilities.data(), classes);
        let confusion = confusion_matrix(truth, &predicted, classes)?;
        let metrics = classification_metrics(&confusion)?;
        let (roc, auc) = roc_auc(truth, probabilities)?;
        Ok(EvalReport {
            class_names: class_names.iter().map(|s| s.to_string()).collect(),
            confusion,
            metrics,
            roc,
            auc,
        })
    }

    pub fn samples(&self) -> u64 {
        self.confusion.total()
    }

    /// `key: value` lines.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "samples: {}", self.samples());
        let _ = writeln!(s, "gaa: {}", m.gaa);
        let _ = writeln!(s, "kappa: {}", m.kappa);
        let _ = writeln!(s, "macro_precision: {}", m.macro_precision);
        let _ = writeln!(s, "macro_recall: {}", m.macro_recall);
        let _ = writeln!(s, "macro_f1: {}", m.macro_f1);
        let _ = writeln!(s, "auc: {}", self.auc);
        for (name, c) in self.class_names.iter().zip(&m.per_class) {
            let _ = writeln!(s, "precision.{name}: {}", c.precision);
            let _ = writeln!(s, "recall.{name}: {}", c.recall);
            let _ = writeln!(s, "f1.{name}: {}", c.f1);
            if !c.precision_defined {
                let _ = writeln!(s, "undefined.precision.{name}: true");
            }
            if !c.recall_defined {
                let _ = writeln!(s, "undefined.recall.{name}: true");
            }
        }
        for (name, row) in self.class_names.iter().zip(self.confusion.rows()) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "confusion.{name}: {}", cells.join(" "));
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = format!("true,{}\n", self.class_names.join(","));
        for (name, row) in self.class_names.iter().zip(self.confusion.rows()) {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            let _ = writeln!(s, "{name},{}", cells.join(","));
        }
        s
    }

    pub fn roc_csv(&self) -> String {
        let mut s = String::from("fpr,tpr,threshold\n");
        for p in &self.roc {
            let _ = writeln!(s, "{},{},{}", p.fpr, p.tpr, p.threshold);
        }
        s
    }

    pub fn metrics_csv(&self) -> String {
        let m = &self.metrics;
        let mut s = String::from("class,precision,recall,f1,support,precision_defined,recall_defined\n");
        for (name, c) in self.class_names.iter().zip(&m.per_class) {
            let _ = writeln!(
                s,
                "{name},{},{},{},{},{},{}",
                c.precision, c.recall, c.f1, c.support, c.precision_defined, c.recall_defined
            );
        }
        let _ = writeln!(
            s,
            "macro,{},{},{},{},true,true",
            m.macro_precision,
            m.macro_recall,
            m.macro_f1,
            self.samples()
        );
        s
    }

    /// Writes `report.txt`, `confusion.csv`, `roc.csv` and `metrics.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        for (name, body) in [
            ("report.txt", self.to_text()),
            ("confusion.csv", self.confusion_csv()),
            ("roc.csv", self.roc_csv()),
            ("metrics.csv", self.metrics_csv()),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::file(&path, e))?;
        }
        Ok(())
    }
}

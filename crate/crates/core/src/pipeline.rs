//! Two-stage training and evaluation of one cross-validation fold, and the
//! cross-validation loop over all folds.
//!
//! A fold directory holds:
//!
//! ```text
//! config.txt          resolved configuration
//! split.csv           index,set for every cached segment
//! rnn.gmnd gcn.gmnd   checkpoints
//! features.csv        feature matrix the graph was estimated from
//! pearson.csv abs_pearson.csv adjacency.csv laplacian.csv
//! history_rnn.csv history_gcn.csv
//! report.txt confusion.csv roc.csv metrics.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::checkpoint::Checkpoint;
use crate::config::{GraphSource, RunConfig};
use crate::data::{segments_to_tensor, split_grouped, split_kfold, Segment, SplitMode, SplitPlan};
use crate::error::{Error, Result};
use crate::gcn::{gcn_train, GcnModel};
use crate::graph::{graclus_coarsen, read_matrix_csv, write_matrix_csv, CorrelationGraph};
use crate::metrics::EvalReport;
use crate::recurrent::{extract_features, stage1_train, Stage1Config, Stage1Model};
use crate::tensor::{SeedStream, Tensor};
use crate::train::TrainHistory;

pub const CLASS_NAMES: [&str; 4] = ["L", "R", "B", "F"];

/// Fold partition of the cached segments under the configured split mode.
pub fn plan_folds(segments: &[Segment], config: &RunConfig) -> Result<SplitPlan> {
    match config.split {
        SplitMode::Segment => split_kfold(segments.len(), config.seed, config.folds),
        SplitMode::Trial => {
            let keys: Vec<(u16, u16)> = segments.iter().map(|s| (s.subject, s.trial)).collect();
            split_grouped(&keys, config.seed, config.folds)
        }
    }
}

/// Seed stream of fold `fold` (1-based), shared by `--fold` and `--cv`.
pub fn fold_seeds(seed: u64, fold: usize) -> SeedStream {
    SeedStream::new(seed).child(&format!("fold{fold}"))
}

pub fn fold_dir(output: &Path, fold: usize) -> PathBuf {
    output.join(format!("fold{fold:02}"))
}

/// Stage-1 input tensor and labels of the selected segments.
pub fn select(segments: &[Segment], indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let refs: Vec<&Segment> = indices.iter().map(|&i| &segments[i]).collect();
    let labels = refs.iter().map(|s| s.label()).collect();
    Ok((segments_to_tensor(&refs)?, labels))
}

pub fn tensor_to_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    match t.shape() {
        &[r, c] => Ok(DMatrix::from_row_slice(r, c, t.data())),
        s => Err(Error::shape("matrix", s, &[0, 0])),
    }
}

pub fn matrix_to_tensor(m: &DMatrix<f64>) -> Tensor {
    let data: Vec<f64> = m.transpose().iter().copied().collect();
    Tensor::new(vec![m.nrows(), m.ncols()], data).expect("matrix shape")
}

/// Writes `pearson.csv`, `abs_pearson.csv`, `adjacency.csv` and
/// `laplacian.csv` into `dir`.
pub fn export_graph(graph: &CorrelationGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write_matrix_csv(&dir.join("pearson.csv"), &graph.pearson)?;
    write_matrix_csv(&dir.join("abs_pearson.csv"), &graph.pearson.abs())?;
    write_matrix_csv(&dir.join("adjacency.csv"), &graph.adjacency)?;
    write_matrix_csv(&dir.join("laplacian.csv"), &graph.laplacian)?;
    Ok(())
}

fn history_csv(h: &TrainHistory) -> String {
    let mut s = String::from("epoch,loss,accuracy\n");
    for (e, (l, a)) in h.loss.iter().zip(&h.accuracy).enumerate() {
        let _ = writeln!(s, "{},{l},{a}", e + 1);
    }
    s
}

fn split_csv(n: usize, test: &[usize]) -> String {
    let mut is_test = vec![false; n];
    for &i in test {
        is_test[i] = true;
    }
    let mut s = String::from("index,set\n");
    for (i, t) in is_test.iter().enumerate() {
        let _ = writeln!(s, "{i},{}", if *t { "test" } else { "train" });
    }
    s
}

/// Reads a `split.csv` and returns the indices of the named set (`train`,
/// `test`, or `all`).
pub fn read_split(path: &Path, set: &str) -> Result<Vec<usize>> {
    if !matches!(set, "train" | "test" | "all") {
        return Err(Error::Config(format!("split must be train, test or all, got {set:?}")));
    }
    let ctx = path.display().to_string();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(&ctx, e.to_string()))?;
    let mut out = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(&ctx, e.to_string()))?;
        let index: usize = rec
            .get(0)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(&ctx, format!("row {row}: bad index")))?;
        let kind = rec.get(1).unwrap_or("");
        if kind != "train" && kind != "test" {
            return Err(Error::format(&ctx, format!("row {row}: unknown set {kind:?}")));
        }
        if set == "all" || set == kind {
            out.push(index);
        }
    }
    Ok(out)
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::file(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    /// 1-based fold number.
    pub fold: usize,
    pub report: EvalReport,
    pub rnn_history: TrainHistory,
    pub gcn_history: TrainHistory,
}

/// Trains both stages on fold `fold` (1-based) and evaluates on its test
/// part, writing every artifact into `dir`.
pub fn run_fold(
    segments: &[Segment],
    plan: &SplitPlan,
    fold: usize,
    config: &RunConfig,
    dir: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<FoldOutcome> {
    config.validate()?;
    if fold == 0 || fold > plan.fold_count() {
        return Err(Error::Config(format!("fold {fold} outside 1..={}", plan.fold_count())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write(&dir.join("config.txt"), &config.to_text())?;
    let test = plan.test(fold - 1).to_vec();
    let train = plan.train(fold - 1);
    write(&dir.join("split.csv"), &split_csv(segments.len(), &test))?;
    let seeds = fold_seeds(config.seed, fold);

    let (x_train, y_train) = select(segments, &train)?;
    let rnn_config = Stage1Config {
        channels: x_train.shape()[2],
        classes: CLASS_NAMES.len(),
        ..config.rnn.clone()
    };
    log(&format!("fold {fold}: stage 1 on {} segments", train.len()));
    let mut rnn = Stage1Model::new(&rnn_config, &seeds)?;
    let rnn_history = stage1_train(&mut rnn, &x_train, &y_train, &rnn_config, &seeds)?;
    rnn.checkpoint().save(&dir.join("rnn.gmnd"))?;
    write(&dir.join("history_rnn.csv"), &history_csv(&rnn_history))?;

    let f_train = extract_features(&rnn, &x_train)?;
    drop(x_train);
    let (x_test, y_test) = select(segments, &test)?;
    let f_test = extract_features(&rnn, &x_test)?;
    drop(x_test);

    let graph_features = match config.graph {
        GraphSource::Train => f_train.clone(),
        GraphSource::All => {
            let mut data = f_train.data().to_vec();
            data.extend_from_slice(f_test.data());
            Tensor::new(vec![train.len() + test.len(), f_train.shape()[1]], data)?
        }
    };
    let graph = CorrelationGraph::from_features(&graph_features)?;
    write_matrix_csv(&dir.join("features.csv"), &tensor_to_matrix(&graph_features)?)?;
    export_graph(&graph, dir)?;

    let layers = config.gcn.filters.len();
    let hierarchy = graclus_coarsen(&graph.adjacency, layers)?;
    log(&format!(
        "fold {fold}: graph of {} nodes, levels {:?}",
        graph.nodes(),
        hierarchy.sizes
    ));
    let gcn_config = crate::gcn::GcnConfig {
        classes: CLASS_NAMES.len(),
        ..config.gcn.clone()
    };
    let mut gcn = GcnModel::new(&gcn_config, hierarchy, &seeds)?;
    let gcn_history = gcn_train(&mut gcn, &f_train, &y_train, &gcn_config, &seeds)?;
    gcn.checkpoint().save(&dir.join("gcn.gmnd"))?;
    write(&dir.join("history_gcn.csv"), &history_csv(&gcn_history))?;

    let prediction = gcn.predict(&f_test)?;
    let report = EvalReport::evaluate(&y_test, &prediction.probabilities, &CLASS_NAMES)?;
    report.write_dir(dir)?;
    log(&format!(
        "fold {fold}: test gaa {:.4} kappa {:.4} auc {:.4}",
        report.metrics.gaa, report.metrics.kappa, report.auc
    ));
    Ok(FoldOutcome {
        fold,
        report,
        rnn_history,
        gcn_history,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

const SUMMARY_KEYS: [&str; 6] = ["gaa", "kappa", "macro_precision", "macro_recall", "macro_f1", "auc"];

fn summary_values(r: &EvalReport) -> [f64; 6] {
    let m = &r.metrics;
    [m.gaa, m.kappa, m.macro_precision, m.macro_recall, m.macro_f1, r.auc]
}

/// `summary.csv` (one row per fold plus the median) and `summary.txt`
/// (medians as `key: value` lines).
pub fn write_summary(outcomes: &[FoldOutcome], dir: &Path) -> Result<()> {
    let mut csv = format!("fold,{}\n", SUMMARY_KEYS.join(","));
    for o in outcomes {
        let v: Vec<String> = summary_values(&o.report).iter().map(f64::to_string).collect();
        let _ = writeln!(csv, "{},{}", o.fold, v.join(","));
    }
    let mut text = format!("folds: {}\n", outcomes.len());
    let mut medians = Vec::new();
    for (k, key) in SUMMARY_KEYS.iter().enumerate() {
        let mut col: Vec<f64> = outcomes.iter().map(|o| summary_values(&o.report)[k]).collect();
        let m = median(&mut col);
        let _ = writeln!(text, "median_{key}: {m}");
        medians.push(m.to_string());
    }
    let _ = writeln!(csv, "median,{}", medians.join(","));
    write(&dir.join("summary.csv"), &csv)?;
    write(&dir.join("summary.txt"), &text)
}

/// Runs every fold in order, then writes the median summary.
pub fn run_cv(segments: &[Segment], config: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<Vec<FoldOutcome>> {
    let plan = plan_folds(segments, config)?;
    fs::create_dir_all(&config.output).map_err(|e| Error::file(&config.output, e))?;
    write(&config.output.join("config.txt"), &config.to_text())?;
    let mut outcomes = Vec::with_capacity(plan.fold_count());
    for fold in 1..=plan.fold_count() {
        outcomes.push(run_fold(segments, &plan, fold, config, &fold_dir(&config.output, fold), log)?);
    }
    write_summary(&outcomes, &config.output)?;
    Ok(outcomes)
}

/// Evaluates saved checkpoints on the selected segments. The graph
/// hierarchy is rebuilt from the saved adjacency matrix.
pub fn evaluate_artifacts(
    rnn: &Checkpoint,
    gcn: &Checkpoint,
    adjacency: &DMatrix<f64>,
    segments: &[Segment],
    indices: &[usize],
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Data("no segments selected for evaluation".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= segments.len()) {
        return Err(Error::Data(format!(
            "split index {bad} outside the cache of {} segments",
            segments.len()
        )));
    }
    let rnn = Stage1Model::from_checkpoint(rnn, 0.0)?;
    if adjacency.nrows() != rnn.feature_width() || adjacency.ncols() != rnn.feature_width() {
        return Err(Error::Data(format!(
            "graph has {}x{} nodes but the feature layer is {} wide",
            adjacency.nrows(),
            adjacency.ncols(),
            rnn.feature_width()
        )));
    }
    let layers = (0..)
        .take_while(|l| gcn.get(&format!("gcn.l{l}.theta")).is_some())
        .count();
    let hierarchy = graclus_coarsen(adjacency, layers)?;
    let gcn = GcnModel::from_checkpoint(gcn, hierarchy)?;
    let (x, labels) = select(segments, indices)?;
    let features = extract_features(&rnn, &x)?;
    let prediction = gcn.predict(&features)?;
    EvalReport::evaluate(&labels, &prediction.probabilities, &CLASS_NAMES)
}

/// Loads the three artifact files of a fold directory layout and evaluates.
pub fn evaluate_files(
    rnn: &Path,
    gcn: &Path,
    graph: &Path,
    segments: &[Segment],
    indices: &[usize],
) -> Result<EvalReport> {
    let rnn = Checkpoint::load(rnn)?;
    let gcn = Checkpoint::load(gcn)?;
    let adjacency = read_matrix_csv(graph)?;
    evaluate_artifacts(&rnn, &gcn, &adjacency, segments, indices)
}

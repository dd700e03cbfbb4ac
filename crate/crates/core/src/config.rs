//! Run configuration: flat `section.key = value` text.
//!
//! ```text
//! # comment
//! seed = 7
//! data.subjects = 1-20
//! rnn.cell_size = 256
//! gcn.filters = 16,32,64,128,256,512
//! ```

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use crate::data::SplitMode;
use crate::error::{Error, Result};
use crate::gcn::GcnConfig;
use crate::recurrent::Stage1Config;
use crate::tensor::OptimizerKind;

/// Which samples the Pearson feature graph is estimated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphSource {
    /// Training split of the current fold.
    Train,
    /// Every sample, test split included.
    All,
}

impl fmt::Display for GraphSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GraphSource::Train => "train",
            GraphSource::All => "all",
        })
    }
}

impl FromStr for GraphSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(GraphSource::Train),
            "all" => Ok(GraphSource::All),
            _ => Err(Error::Config(format!("graph source must be train or all, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_root: PathBuf,
    pub subjects: Vec<u16>,
    pub cache: PathBuf,
    pub output: PathBuf,
    pub seed: u64,
    pub folds: usize,
    pub split: SplitMode,
    pub graph: GraphSource,
    pub rnn: Stage1Config,
    pub gcn: GcnConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_root: PathBuf::from("data"),
            subjects: (1..=20).collect(),
            cache: PathBuf::from("segments.gmsg"),
            output: PathBuf::from("runs"),
            seed: 0,
            folds: 10,
            split: SplitMode::Segment,
            graph: GraphSource::Train,
            rnn: Stage1Config::default(),
            gcn: GcnConfig::default(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "data.root",
    "data.subjects",
    "data.cache",
    "output.dir",
    "split.mode",
    "split.folds",
    "graph.source",
    "rnn.cell_size",
    "rnn.attention_size",
    "rnn.feature_width",
    "rnn.dropout",
    "rnn.batch_size",
    "rnn.learning_rate",
    "rnn.l2",
    "rnn.epochs",
    "rnn.optimizer",
    "gcn.filters",
    "gcn.order",
    "gcn.batch_size",
    "gcn.learning_rate",
    "gcn.l2",
    "gcn.epochs",
    "gcn.optimizer",
];

/// Parses `1-20`, `1,3,5` or a mix such as `1-3,9`.
pub fn parse_subjects(s: &str) -> Result<Vec<u16>> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || Error::Config(format!("bad subject list entry {part:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let a: u16 = a.trim().parse().map_err(|_| bad())?;
                let b: u16 = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn format_subjects(subjects: &[u16]) -> String {
    let mut parts = Vec::new();
    let mut i = 0;
    while i < subjects.len() {
        let mut j = i;
        while j + 1 < subjects.len() && subjects[j + 1] == subjects[j] + 1 {
            j += 1;
        }
        parts.push(if j > i {
            format!("{}-{}", subjects[i], subjects[j])
        } else {
            subjects[i].to_string()
        });
        i = j + 1;
    }
    parts.join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "data.root" => self.data_root = PathBuf::from(v),
            "data.subjects" => self.subjects = parse_subjects(v)?,
            "data.cache" => self.cache = PathBuf::from(v),
            "output.dir" => self.output = PathBuf::from(v),
            "split.mode" => self.split = v.parse()?,
            "split.folds" => self.folds = parse(key, v)?,
            "graph.source" => self.graph = v.parse()?,
            "rnn.cell_size" => self.rnn.hidden = parse(key, v)?,
            "rnn.attention_size" => self.rnn.attention = parse(key, v)?,
            "rnn.feature_width" => self.rnn.features = parse(key, v)?,
            "rnn.dropout" => self.rnn.dropout = parse(key, v)?,
            "rnn.batch_size" => self.rnn.batch_size = parse(key, v)?,
            "rnn.learning_rate" => self.rnn.learning_rate = parse(key, v)?,
            "rnn.l2" => self.rnn.l2 = parse(key, v)?,
            "rnn.epochs" => self.rnn.epochs = parse(key, v)?,
            "rnn.optimizer" => self.rnn.optimizer = v.parse::<OptimizerKind>()?,
            "gcn.filters" => {
                self.gcn.filters = v
                    .split(',')
                    .map(|f| parse(key, f.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            "gcn.order" => self.gcn.order = parse(key, v)?,
            "gcn.batch_size" => self.gcn.batch_size = parse(key, v)?,
            "gcn.learning_rate" => self.gcn.learning_rate = parse(key, v)?,
            "gcn.l2" => self.gcn.l2 = parse(key, v)?,
            "gcn.epochs" => self.gcn.epochs = parse(key, v)?,
            "gcn.optimizer" => self.gcn.optimizer = v.parse::<OptimizerKind>()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment of a config file on top of `self`. All bad
    /// lines are reported together.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut errors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = self.set(k, v) {
                        errors.push(format!("line {}: {e}", n + 1));
                    }
                }
                None => errors.push(format!("line {}: expected key = value", n + 1)),
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors.join("\n")))
        }
    }

    /// Every violated constraint, in key order.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.subjects.is_empty() {
            p.push("data.subjects: empty subject list".to_string());
        }
        if self.subjects.contains(&0) {
            p.push("data.subjects: subject ids start at 1".to_string());
        }
        if self.folds < 2 {
            p.push(format!("split.folds: need at least 2, got {}", self.folds));
        }
        let positive = [
            ("rnn.cell_size", self.rnn.hidden),
            ("rnn.attention_size", self.rnn.attention),
            ("rnn.feature_width", self.rnn.features),
            ("rnn.batch_size", self.rnn.batch_size),
            ("gcn.order", self.gcn.order),
            ("gcn.batch_size", self.gcn.batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                p.push(format!("{k}: must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.rnn.dropout) {
            p.push(format!("rnn.dropout: must be in [0, 1), got {}", self.rnn.dropout));
        }
        for (k, v) in [
            ("rnn.learning_rate", self.rnn.learning_rate),
            ("rnn.l2", self.rnn.l2),
            ("gcn.learning_rate", self.gcn.learning_rate),
            ("gcn.l2", self.gcn.l2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                p.push(format!("{k}: must be finite and non-negative, got {v}"));
            }
        }
        if self.gcn.filters.is_empty() || self.gcn.filters.contains(&0) {
            p.push("gcn.filters: need at least one positive filter count".to_string());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("\n")))
        }
    }

    /// The fully resolved configuration in the file syntax.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key));
        }
        s
    }

    fn get(&self, key: &str) -> String {
        match key {
            "seed" => self.seed.to_string(),
            "data.root" => self.data_root.display().to_string(),
            "data.subjects" => format_subjects(&self.subjects),
            "data.cache" => self.cache.display().to_string(),
            "output.dir" => self.output.display().to_string(),
            "split.mode" => self.split.to_string(),
            "split.folds" => self.folds.to_string(),
            "graph.source" => self.graph.to_string(),
            "rnn.cell_size" => self.rnn.hidden.to_string(),
            "rnn.attention_size" => self.rnn.attention.to_string(),
            "rnn.feature_width" => self.rnn.features.to_string(),
            "rnn.dropout" => self.rnn.dropout.to_string(),
            "rnn.batch_size" => self.rnn.batch_size.to_string(),
            "rnn.learning_rate" => format!("{:e}", self.rnn.learning_rate),
            "rnn.l2" => format!("{:e}", self.rnn.l2),
            "rnn.epochs" => self.rnn.epochs.to_string(),
            "rnn.optimizer" => self.rnn.optimizer.to_string(),
            "gcn.filters" => self.gcn.filters.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "gcn.order" => self.gcn.order.to_string(),
            "gcn.batch_size" => self.gcn.batch_size.to_string(),
            "gcn.learning_rate" => format!("{:e}", self.gcn.learning_rate),
            "gcn.l2" => format!("{:e}", self.gcn.l2),
            "gcn.epochs" => self.gcn.epochs.to_string(),
            "gcn.optimizer" => self.gcn.optimizer.to_string(),
            _ => unreachable!("key list and getter out of sync"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_architecture() {
        let c = RunConfig::default();
        assert_eq!(c.rnn.hidden, 256);
        assert_eq!(c.rnn.attention, 8);
        assert_eq!(c.rnn.features, 64);
        assert_eq!(c.rnn.batch_size, 1024);
        assert_eq!(c.gcn.filters, vec![16, 32, 64, 128, 256, 512]);
        assert_eq!(c.gcn.order, 2);
        assert_eq!(c.subjects.len(), 20);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 9\ndata.subjects = 1-3, 7\ngcn.filters = 4,8\nrnn.learning_rate = 0.001 # fast\n")
            .unwrap();
        assert_eq!(c.subjects, vec![1, 2, 3, 7]);
        let mut d = RunConfig::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert!(c.to_text().contains("data.subjects = 1-3,7\n"));
    }

    #[test]
    fn errors_are_collected() {
        let mut c = RunConfig::default();
        let err = c.apply_text("bogus = 1\nrnn.epochs = x\nnot a line\n").unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("line 2") && err.contains("line 3"), "{err}");
        c.folds = 1;
        c.rnn.dropout = 1.0;
        assert_eq!(c.problems().len(), 2);
    }
}

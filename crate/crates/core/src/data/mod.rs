//! EEG Motor Movement/Imagery ingestion: EDF decoding, trial extraction,
//! segmentation, cross-validation splits and the segment cache.

mod cache;
mod edf;
mod split;
pub mod synth;
mod trials;

use std::path::{Path, PathBuf};

pub use cache::{cache_from_bytes, cache_to_bytes, read_cache, write_cache};
pub use edf::{edf_parse, edf_parse_bytes, edf_to_bytes, parse_file_name, write_edf, Annotation, Recording};
pub use split::{split_grouped, split_kfold, SplitMode, SplitPlan};
pub use trials::{
    segment_trials, segments_to_tensor, trial_extract, Segment, Task, Trial, CHANNELS, FEET_RUNS, FIST_RUNS,
    SAMPLE_RATE, SEGMENTS_PER_TRIAL, SEGMENT_SAMPLES, TRIALS_PER_TASK, TRIAL_SAMPLES,
};

use crate::error::{Error, Result};

/// Imagery runs in recording order.
pub const IMAGERY_RUNS: [u8; 6] = [4, 6, 8, 10, 12, 14];

/// `root/S###/S###R##.edf`
pub fn run_path(root: &Path, subject: u16, run: u8) -> PathBuf {
    root.join(format!("S{subject:03}")).join(format!("S{subject:03}R{run:02}.edf"))
}

/// Outcome of ingesting several subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingest {
    /// Sorted by subject, trial and segment index.
    pub segments: Vec<Segment>,
    /// Segment count per subject, in subject order.
    pub counts: Vec<(u16, usize)>,
    /// Run files that were not found.
    pub missing: Vec<PathBuf>,
}

/// Decodes the imagery runs of one subject into segments.
pub fn ingest_subject(root: &Path, subject: u16, allow_missing: bool) -> Result<(Vec<Segment>, Vec<PathBuf>)> {
    let mut trials = Vec::new();
    let mut missing = Vec::new();
    for run in IMAGERY_RUNS {
        let path = run_path(root, subject, run);
        if !path.is_file() {
            missing.push(path);
            continue;
        }
        let mut rec = edf_parse(&path)?;
        rec.subject = subject;
        if rec.channels() != CHANNELS || (rec.sample_rate - SAMPLE_RATE).abs() > 1e-9 {
            return Err(Error::Data(format!(
                "{}: expected {CHANNELS} channels at {SAMPLE_RATE} Hz, found {} at {} Hz",
                path.display(),
                rec.channels(),
                rec.sample_rate
            )));
        }
        trials.extend(trial_extract(&rec, run)?);
    }
    if !missing.is_empty() && !allow_missing {
        return Ok((Vec::new(), missing));
    }
    Ok((segment_trials(&trials, TRIALS_PER_TASK), missing))
}

/// Ingests every listed subject. Any missing run file is an error unless
/// `allow_missing` is set; the error lists every missing file.
pub fn ingest(root: &Path, subjects: &[u16], allow_missing: bool) -> Result<Ingest> {
    if subjects.is_empty() {
        return Err(Error::Config("no subjects selected".into()));
    }
    let mut subjects = subjects.to_vec();
    subjects.sort_unstable();
    subjects.dedup();
    let mut out = Ingest {
        segments: Vec::new(),
        counts: Vec::new(),
        missing: Vec::new(),
    };
    for s in subjects {
        let (segs, missing) = ingest_subject(root, s, allow_missing)?;
        out.missing.extend(missing);
        out.counts.push((s, segs.len()));
        out.segments.extend(segs);
    }
    if !out.missing.is_empty() && !allow_missing {
        let list: Vec<String> = out.missing.iter().map(|p| format!("  {}", p.display())).collect();
        return Err(Error::Data(format!("missing run files:\n{}", list.join("\n"))));
    }
    Ok(out)
}

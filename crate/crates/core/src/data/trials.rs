use std::fmt;
use std::str::FromStr;

use super::edf::Recording;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Samples per trial: 4 s at 160 Hz.
pub const TRIAL_SAMPLES: usize = 640;
/// Samples per segment: 0.4 s at 160 Hz.
pub const SEGMENT_SAMPLES: usize = 64;
pub const SEGMENTS_PER_TRIAL: usize = TRIAL_SAMPLES / SEGMENT_SAMPLES;
pub const TRIALS_PER_TASK: usize = 21;
pub const CHANNELS: usize = 64;
pub const SAMPLE_RATE: f64 = 160.0;
/// Imagery runs of the fist tasks (T1 left, T2 right).
pub const FIST_RUNS: [u8; 3] = [4, 8, 12];
/// Imagery runs of the both-fists / feet tasks (T1 both, T2 feet).
pub const FEET_RUNS: [u8; 3] = [6, 10, 14];

/// Imagined movement, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    Left,
    Right,
    Both,
    Feet,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Left, Task::Right, Task::Both, Task::Feet];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Task> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        ["L", "R", "B", "F"][self.index()]
    }

    /// Task of an annotation code in a given run; `Ok(None)` for rest and
    /// unrelated codes.
    pub fn for_event(run: u8, code: &str) -> Result<Option<Task>> {
        let fist = if FIST_RUNS.contains(&run) {
            true
        } else if FEET_RUNS.contains(&run) {
            false
        } else {
            return Err(Error::Data(format!("run {run} is not a motor-imagery run")));
        };
        Ok(match (code, fist) {
            ("T1", true) => Some(Task::Left),
            ("T2", true) => Some(Task::Right),
            ("T1", false) => Some(Task::Both),
            ("T2", false) => Some(Task::Feet),
            _ => None,
        })
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Data(format!("unknown task {s:?}")))
    }
}

/// One 4 s imagery window, channel-major (`channels × 640`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub subject: u16,
    pub run: u8,
    pub onset_sample: usize,
    pub task: Task,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Cuts a 640-sample window at every T1/T2 onset of an imagery run. Rest
/// events are ignored; windows running past the end are dropped.
pub fn trial_extract(rec: &Recording, run: u8) -> Result<Vec<Trial>> {
    // validates the run id even when there are no events
    Task::for_event(run, "")?;
    let annotations = rec.annotations.as_ref().ok_or_else(|| {
        Error::Data(format!(
            "subject {} run {run} has no annotation signal",
            rec.subject
        ))
    })?;
    let n = rec.samples();
    let mut trials = Vec::new();
    for a in annotations {
        let Some(task) = Task::for_event(run, &a.code)? else {
            continue;
        };
        let start = (a.onset * rec.sample_rate).round();
        if start < 0.0 {
            continue;
        }
        let start = start as usize;
        if start + TRIAL_SAMPLES > n {
            continue;
        }
        let mut data = Vec::with_capacity(rec.channels() * TRIAL_SAMPLES);
        for s in &rec.signals {
            data.extend_from_slice(&s[start..start + TRIAL_SAMPLES]);
        }
        trials.push(Trial {
            subject: rec.subject,
            run,
            onset_sample: start,
            task,
            channels: rec.channels(),
            data,
        });
    }
    Ok(trials)
}

/// A 0.4 s window, channel-major (`channels × 64`).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub subject: u16,
    /// Index of the source trial among the subject's retained trials.
    pub trial: u16,
    /// Position of the segment inside its trial, `0..10`.
    pub index: u8,
    pub task: Task,
    pub data: Vec<f64>,
}

impl Segment {
    pub fn label(&self) -> usize {
        self.task.index()
    }
}

/// Keeps the first `cap` trials of each task per subject (in the order
/// given, which must be recording order) and tiles each into ten
/// non-overlapping 64-sample segments.
pub fn segment_trials(trials: &[Trial], cap: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut subjects: Vec<u16> = trials.iter().map(|t| t.subject).collect();
    subjects.sort_unstable();
    subjects.dedup();
    for subject in subjects {
        let mut counts = [0usize; 4];
        let mut next_trial = 0u16;
        for t in trials.iter().filter(|t| t.subject == subject) {
            let c = &mut counts[t.task.index()];
            if *c >= cap {
                continue;
            }
            *c += 1;
            for k in 0..SEGMENTS_PER_TRIAL {
                let mut data = Vec::with_capacity(t.channels * SEGMENT_SAMPLES);
                for ch in 0..t.channels {
                    let base = ch * TRIAL_SAMPLES + k * SEGMENT_SAMPLES;
                    data.extend_from_slice(&t.data[base..base + SEGMENT_SAMPLES]);
                }
                out.push(Segment {
                    subject,
                    trial: next_trial,
                    index: k as u8,
                    task: t.task,
                    data,
                });
            }
            next_trial += 1;
        }
    }
    out
}

/// Stage-1 input `[M, 64 time, channels]` from channel-major segments.
pub fn segments_to_tensor(segments: &[&Segment]) -> Result<Tensor> {
    let channels = segments.first().map_or(CHANNELS, |s| s.data.len() / SEGMENT_SAMPLES);
    let mut data = Vec::with_capacity(segments.len() * SEGMENT_SAMPLES * channels);
    for s in segments {
        if s.data.len() != channels * SEGMENT_SAMPLES {
            return Err(Error::Data(format!(
                "segment of subject {} trial {} has {} values, expected {}",
                s.subject,
                s.trial,
                s.data.len(),
                channels * SEGMENT_SAMPLES
            )));
        }
        for t in 0..SEGMENT_SAMPLES {
            for ch in 0..channels {
                data.push(s.data[ch * SEGMENT_SAMPLES + t]);
            }
        }
    }
    Tensor::new(vec![segments.len(), SEGMENT_SAMPLES, channels], data)
}

//! Synthetic EEG Motor Movement/Imagery recordings, for tests and offline
//! demos. Each imagery run follows the dataset's event layout (alternating
//! rest and task events of about 4 s) and each task adds a rhythm of its own
//! frequency over its own group of channels on top of AR(1) background noise.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::edf::{write_edf, Annotation, Recording};
use super::trials::{Task, CHANNELS, FEET_RUNS, FIST_RUNS, SAMPLE_RATE};
use super::run_path;
use crate::error::{Error, Result};
use crate::tensor::SeedStream;

/// Channel labels of the dataset, in file order.
pub const CHANNEL_LABELS: [&str; CHANNELS] = [
    "Fc5.", "Fc3.", "Fc1.", "Fcz.", "Fc2.", "Fc4.", "Fc6.", "C5..", "C3..", "C1..", "Cz..", "C2..", "C4..", "C6..",
    "Cp5.", "Cp3.", "Cp1.", "Cpz.", "Cp2.", "Cp4.", "Cp6.", "Fp1.", "Fpz.", "Fp2.", "Af7.", "Af3.", "Afz.", "Af4.",
    "Af8.", "F7..", "F5..", "F3..", "F1..", "Fz..", "F2..", "F4..", "F6..", "F8..", "Ft7.", "Ft8.", "T7..", "T8..",
    "T9..", "T10.", "Tp7.", "Tp8.", "P7..", "P5..", "P3..", "P1..", "Pz..", "P2..", "P4..", "P6..", "P8..", "Po7.",
    "Po3.", "Poz.", "Po4.", "Po8.", "O1..", "Oz..", "O2..", "Iz..",
];

/// Task events per run; with three runs per task pair this gives 22–23
/// events per task, above the 21-trial cap.
pub const EVENTS_PER_RUN: usize = 15;
pub const REST_SECONDS: f64 = 4.2;
pub const TASK_SECONDS: f64 = 4.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Innovation standard deviation of the AR(1) background, µV.
    pub noise: f64,
    /// AR(1) coefficient of the background.
    pub ar: f64,
    /// Peak amplitude of the task rhythm, µV.
    pub amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            noise: 4.0,
            ar: 0.9,
            amplitude: 10.0,
        }
    }
}

fn channels_of(labels: &[&str]) -> Vec<usize> {
    labels
        .iter()
        .map(|l| CHANNEL_LABELS.iter().position(|c| c == l).expect("known label"))
        .collect()
}

/// Channels and frequency (Hz) of each task's rhythm.
fn pattern(task: Task) -> (Vec<usize>, f64) {
    let right_hemi = ["Fc2.", "Fc4.", "Fc6.", "C2..", "C4..", "C6..", "Cp2.", "Cp4.", "Cp6."];
    let left_hemi = ["Fc5.", "Fc3.", "Fc1.", "C5..", "C3..", "C1..", "Cp5.", "Cp3.", "Cp1."];
    match task {
        Task::Left => (channels_of(&right_hemi), 10.0),
        Task::Right => (channels_of(&left_hemi), 10.0),
        Task::Both => {
            let mut c = channels_of(&right_hemi);
            c.extend(channels_of(&left_hemi));
            (c, 20.0)
        }
        Task::Feet => (channels_of(&["Fcz.", "Cz..", "Cpz.", "Fz..", "Pz..", "C1..", "C2.."]), 15.0),
    }
}

/// Annotation list of one imagery run: rest, task, rest, task, …, rest.
/// Runs 8 and 10 open with T2, the others with T1.
pub fn run_events(run: u8) -> Vec<Annotation> {
    let t2_first = run == 8 || run == 10;
    let mut out = Vec::with_capacity(2 * EVENTS_PER_RUN + 1);
    let mut t = 0.0;
    for k in 0..EVENTS_PER_RUN {
        out.push(Annotation {
            onset: t,
            duration: REST_SECONDS,
            code: "T0".into(),
        });
        t += REST_SECONDS;
        let first = k % 2 == 0;
        out.push(Annotation {
            onset: t,
            duration: TASK_SECONDS,
            code: if first != t2_first { "T1" } else { "T2" }.into(),
        });
        t += TASK_SECONDS;
    }
    out.push(Annotation {
        onset: t,
        duration: REST_SECONDS,
        code: "T0".into(),
    });
    out
}

/// One synthetic run of one subject; a pure function of its arguments.
pub fn synth_recording(subject: u16, run: u8, seed: u64, config: &SynthConfig) -> Result<Recording> {
    let events = run_events(run);
    let end = events.last().map_or(0.0, |a| a.onset + a.duration);
    let n = (end * SAMPLE_RATE).ceil() as usize;
    let seeds = SeedStream::new(seed).child(&format!("synth.S{subject:03}"));
    let mut rng = seeds.rng_indexed("run", u64::from(run));
    // Subject-specific channel gains, shared by all runs.
    let mut gain_rng = seeds.rng("gains");
    let gains: Vec<f64> = (0..CHANNELS).map(|_| gain_rng.gen_range(0.8..1.2)).collect();
    let normal = Normal::new(0.0, config.noise).map_err(|e| Error::Param(e.to_string()))?;

    let mut signals: Vec<Vec<f64>> = Vec::with_capacity(CHANNELS);
    for _ in 0..CHANNELS {
        let mut x = 0.0;
        let mut s = Vec::with_capacity(n);
        for _ in 0..n {
            x = config.ar * x + normal.sample(&mut rng);
            s.push(x);
        }
        signals.push(s);
    }
    for a in &events {
        let Some(task) = Task::for_event(run, &a.code)? else {
            continue;
        };
        let (channels, freq) = pattern(task);
        let phase = rng.gen_range(0.0..TAU);
        let amp = config.amplitude * rng.gen_range(0.7..1.3);
        let start = (a.onset * SAMPLE_RATE).round() as usize;
        let stop = (((a.onset + a.duration) * SAMPLE_RATE).round() as usize).min(n);
        for &c in &channels {
            for (k, v) in signals[c][start..stop].iter_mut().enumerate() {
                *v += amp * gains[c] * (TAU * freq * k as f64 / SAMPLE_RATE + phase).sin();
            }
        }
    }
    Ok(Recording {
        subject,
        run,
        sample_rate: SAMPLE_RATE,
        labels: CHANNEL_LABELS.iter().map(|s| s.to_string()).collect(),
        signals,
        annotations: Some(events),
    })
}

/// Writes the six imagery runs of each subject under `root` in the
/// dataset's `S###/S###R##.edf` layout.
pub fn write_synthetic_dataset(root: &Path, subjects: &[u16], seed: u64, config: &SynthConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &subject in subjects {
        let mut runs: Vec<u8> = FIST_RUNS.iter().chain(&FEET_RUNS).copied().collect();
        runs.sort_unstable();
        for run in runs {
            let path = run_path(root, subject, run);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            }
            write_edf(&path, &synth_recording(subject, run, seed, config)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

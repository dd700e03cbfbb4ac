//! EDF and EDF+ reading and writing.
//!
//! A file is a 256-byte ASCII header, `ns` 256-byte signal headers (stored
//! field-by-field across signals), then data records of little-endian
//! 16-bit two's-complement samples. EDF+ adds an `EDF Annotations` signal
//! whose bytes hold time-stamped annotation lists (TALs).

use std::fs;
use std::path::Path;

use crate::bytes::Reader;
use crate::error::{Error, Result};

pub const ANNOTATION_LABEL: &str = "EDF Annotations";

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub onset: f64,
    pub duration: f64,
    pub code: String,
}

/// One EDF file decoded into physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub subject: u16,
    pub run: u8,
    pub sample_rate: f64,
    pub labels: Vec<String>,
    /// One vector of physical samples per ordinary signal.
    pub signals: Vec<Vec<f64>>,
    /// `None` when the file has no annotation signal.
    pub annotations: Option<Vec<Annotation>>,
}

impl Recording {
    pub fn channels(&self) -> usize {
        self.signals.len()
    }

    pub fn samples(&self) -> usize {
        self.signals.first().map_or(0, Vec::len)
    }
}

struct SignalHeader {
    label: String,
    physical_min: f64,
    physical_max: f64,
    digital_min: f64,
    digital_max: f64,
    samples_per_record: usize,
}

impl SignalHeader {
    fn is_annotation(&self) -> bool {
        self.label == ANNOTATION_LABEL
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
    }
}

fn ascii<'a>(r: &mut Reader<'a>, n: usize) -> Result<String> {
    let raw = r.take(n)?;
    let s = std::str::from_utf8(raw).map_err(|_| r.error("header field is not ASCII"))?;
    Ok(s.trim().to_string())
}

fn number<T: std::str::FromStr>(r: &mut Reader<'_>, n: usize, field: &str) -> Result<T> {
    let at = r.position();
    let s = ascii(r, n)?;
    s.parse()
        .map_err(|_| Error::format("edf", format!("at byte {at}: {field} {s:?} is not a number")))
}

/// Subject and run numbers from a `S###R##.edf` file name.
pub fn parse_file_name(path: &Path) -> Option<(u16, u8)> {
    let stem = path.file_stem()?.to_str()?.to_ascii_uppercase();
    let rest = stem.strip_prefix('S')?;
    let (subject, run) = rest.split_once('R')?;
    Some((subject.parse().ok()?, run.parse().ok()?))
}

pub fn edf_parse(path: &Path) -> Result<Recording> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    let mut rec = edf_parse_bytes(&bytes).map_err(|e| match e {
        Error::Format { message, .. } => Error::format(path.display().to_string(), message),
        other => other,
    })?;
    if let Some((subject, run)) = parse_file_name(path) {
        rec.subject = subject;
        rec.run = run;
    }
    Ok(rec)
}

pub fn edf_parse_bytes(bytes: &[u8]) -> Result<Recording> {
    let mut r = Reader::new(bytes, "edf");
    let version = r.take(8)?;
    if version != b"0       " {
        return Err(Error::format("edf", format!("bad version field {:?}", String::from_utf8_lossy(version))));
    }
    r.take(80 + 80 + 8 + 8)?;
    let header_bytes: usize = number(&mut r, 8, "header size")?;
    r.take(44)?;
    let declared_records: i64 = number(&mut r, 8, "record count")?;
    let record_duration: f64 = number(&mut r, 8, "record duration")?;
    let ns: usize = number(&mut r, 4, "signal count")?;
    if header_bytes != 256 * (ns + 1) {
        return Err(Error::format(
            "edf",
            format!("header size {header_bytes} does not match {ns} signals"),
        ));
    }
    let field = |r: &mut Reader<'_>, n: usize| -> Result<Vec<String>> { (0..ns).map(|_| ascii(r, n)).collect() };
    let nums = |r: &mut Reader<'_>, n: usize, what: &str| -> Result<Vec<f64>> {
        (0..ns).map(|_| number(r, n, what)).collect()
    };
    let labels = field(&mut r, 16)?;
    field(&mut r, 80)?;
    field(&mut r, 8)?;
    let pmin = nums(&mut r, 8, "physical minimum")?;
    let pmax = nums(&mut r, 8, "physical maximum")?;
    let dmin = nums(&mut r, 8, "digital minimum")?;
    let dmax = nums(&mut r, 8, "digital maximum")?;
    field(&mut r, 80)?;
    let spr: Vec<usize> = (0..ns).map(|_| number(&mut r, 8, "samples per record")).collect::<Result<_>>()?;
    field(&mut r, 32)?;
    let headers: Vec<SignalHeader> = (0..ns)
        .map(|i| SignalHeader {
            label: labels[i].clone(),
            physical_min: pmin[i],
            physical_max: pmax[i],
            digital_min: dmin[i],
            digital_max: dmax[i],
            samples_per_record: spr[i],
        })
        .collect();
    for h in headers.iter().filter(|h| !h.is_annotation()) {
        if h.digital_max <= h.digital_min || !(h.physical_max != h.physical_min) {
            return Err(Error::format("edf", format!("signal {:?} has a degenerate calibration range", h.label)));
        }
    }

    let record_bytes: usize = 2 * spr.iter().sum::<usize>();
    if record_bytes == 0 {
        return Err(Error::format("edf", "data records are empty"));
    }
    let records = if declared_records < 0 {
        r.remaining() / record_bytes
    } else {
        declared_records as usize
    };

    let ordinary: Vec<usize> = (0..ns).filter(|&i| !headers[i].is_annotation()).collect();
    let rate = match ordinary.first() {
        Some(&i) => headers[i].samples_per_record as f64 / record_duration,
        None => 0.0,
    };
    if ordinary
        .iter()
        .any(|&i| (headers[i].samples_per_record as f64 / record_duration - rate).abs() > 1e-9)
    {
        return Err(Error::format("edf", "signals with different sample rates are not supported"));
    }
    let mut signals: Vec<Vec<f64>> = ordinary
        .iter()
        .map(|&i| Vec::with_capacity(records * headers[i].samples_per_record))
        .collect();
    let has_annotations = headers.iter().any(SignalHeader::is_annotation);
    let mut annotations = Vec::new();
    for record in 0..records {
        let start = r.position();
        if r.remaining() < record_bytes {
            return Err(Error::format(
                "edf",
                format!(
                    "data record {record} truncated at byte {start}: needs {record_bytes} bytes, {} left",
                    r.remaining()
                ),
            ));
        }
        let mut slot = 0;
        for h in &headers {
            let raw = r.take(2 * h.samples_per_record)?;
            if h.is_annotation() {
                parse_tals(raw, &mut annotations)?;
            } else {
                let gain = h.gain();
                signals[slot].extend(raw.chunks_exact(2).map(|c| {
                    let d = f64::from(i16::from_le_bytes([c[0], c[1]]));
                    (d - h.digital_min) * gain + h.physical_min
                }));
                slot += 1;
            }
        }
    }
    Ok(Recording {
        subject: 0,
        run: 0,
        sample_rate: rate,
        labels: ordinary.iter().map(|&i| headers[i].label.clone()).collect(),
        signals,
        annotations: has_annotations.then_some(annotations),
    })
}

/// Parses the TALs in one record's annotation bytes. Timekeeping TALs (no
/// annotation text) are skipped.
fn parse_tals(raw: &[u8], out: &mut Vec<Annotation>) -> Result<()> {
    for tal in raw.split(|&b| b == 0).filter(|t| !t.is_empty()) {
        let mut parts = tal.split(|&b| b == 0x14);
        let stamp = parts.next().unwrap_or_default();
        let (onset_raw, duration_raw) = match stamp.iter().position(|&b| b == 0x15) {
            Some(p) => (&stamp[..p], Some(&stamp[p + 1..])),
            None => (stamp, None),
        };
        let parse = |b: &[u8]| -> Result<f64> {
            std::str::from_utf8(b)
                .ok()
                .and_then(|s| s.trim_start_matches('+').parse::<f64>().ok())
                .ok_or_else(|| Error::format("edf", format!("bad annotation time {:?}", String::from_utf8_lossy(b))))
        };
        let onset = parse(onset_raw)?;
        let duration = match duration_raw {
            Some(d) if !d.is_empty() => parse(d)?,
            _ => 0.0,
        };
        for text in parts.filter(|t| !t.is_empty()) {
            out.push(Annotation {
                onset,
                duration,
                code: String::from_utf8_lossy(text).trim().to_string(),
            });
        }
    }
    Ok(())
}

/// Physical range written for every ordinary signal: a gain of exactly
/// 6553.5/65535 µV per digital step.
pub const WRITE_PHYSICAL_RANGE: (f64, f64) = (-3276.8, 3276.7);

fn pad(out: &mut Vec<u8>, s: &str, n: usize) {
    let mut b = s.as_bytes().to_vec();
    b.resize(n, b' ');
    out.extend_from_slice(&b[..n]);
}

/// Encodes a recording as EDF+ with one-second data records. Values are
/// quantized to the fixed physical range; annotations are placed in the
/// record containing their onset.
pub fn edf_to_bytes(rec: &Recording) -> Result<Vec<u8>> {
    let rate = rec.sample_rate;
    if rate <= 0.0 || rate.fract() != 0.0 {
        return Err(Error::Param(format!("sample rate {rate} must be a positive integer")));
    }
    let spr = rate as usize;
    let n = rec.samples();
    if rec.signals.iter().any(|s| s.len() != n) {
        return Err(Error::Param("signals differ in length".into()));
    }
    let records = n.div_ceil(spr).max(1);
    let mut tal_bytes: Vec<Vec<u8>> = (0..records)
        .map(|i| format!("+{i}\x14\x14\x00").into_bytes())
        .collect();
    if let Some(anns) = &rec.annotations {
        for a in anns {
            let slot = (a.onset.max(0.0) as usize).min(records - 1);
            let tal = format!("+{}\x15{}\x14{}\x14\x00", fmt_seconds(a.onset), fmt_seconds(a.duration), a.code);
            tal_bytes[slot].extend_from_slice(tal.as_bytes());
        }
    }
    let ann_samples = rec
        .annotations
        .as_ref()
        .map(|_| tal_bytes.iter().map(|t| t.len().div_ceil(2)).max().unwrap_or(0));

    let ns = rec.channels() + usize::from(ann_samples.is_some());
    let mut out = Vec::with_capacity(256 * (ns + 1) + records * spr * ns * 2);
    pad(&mut out, "0", 8);
    pad(&mut out, &format!("X X X S{:03}", rec.subject), 80);
    pad(&mut out, "Startdate 01-JAN-2009 X X graphmind", 80);
    pad(&mut out, "01.01.09", 8);
    pad(&mut out, "00.00.00", 8);
    pad(&mut out, &(256 * (ns + 1)).to_string(), 8);
    pad(&mut out, if ann_samples.is_some() { "EDF+C" } else { "" }, 44);
    pad(&mut out, &records.to_string(), 8);
    pad(&mut out, "1", 8);
    pad(&mut out, &ns.to_string(), 4);

    let (pmin, pmax) = WRITE_PHYSICAL_RANGE;
    let mut labels: Vec<String> = rec.labels.clone();
    labels.resize(rec.channels(), String::new());
    let ann = ann_samples.is_some();
    let each = |out: &mut Vec<u8>, ordinary: &dyn Fn(usize) -> String, annotation: &str, n: usize| {
        for i in 0..rec.channels() {
            pad(out, &ordinary(i), n);
        }
        if ann {
            pad(out, annotation, n);
        }
    };
    each(&mut out, &|i| labels[i].clone(), ANNOTATION_LABEL, 16);
    each(&mut out, &|_| String::new(), "", 80);
    each(&mut out, &|_| "uV".into(), "", 8);
    each(&mut out, &|_| format!("{pmin}"), "-1", 8);
    each(&mut out, &|_| format!("{pmax}"), "1", 8);
    each(&mut out, &|_| "-32768".into(), "-32768", 8);
    each(&mut out, &|_| "32767".into(), "32767", 8);
    each(&mut out, &|_| String::new(), "", 80);
    each(&mut out, &|_| spr.to_string(), &ann_samples.unwrap_or(0).to_string(), 8);
    each(&mut out, &|_| String::new(), "", 32);

    let gain = (pmax - pmin) / 65535.0;
    for (rix, tal) in tal_bytes.iter().enumerate() {
        for s in &rec.signals {
            for k in rix * spr..(rix + 1) * spr {
                let v = s.get(k).copied().unwrap_or(0.0);
                let d = ((v - pmin) / gain - 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        if let Some(len) = ann_samples {
            let mut b = tal.clone();
            b.resize(2 * len, 0);
            out.extend_from_slice(&b);
        }
    }
    Ok(out)
}

pub fn write_edf(path: &Path, rec: &Recording) -> Result<()> {
    fs::write(path, edf_to_bytes(rec)?).map_err(|e| Error::file(path, e))
}

fn fmt_seconds(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

//! Audio ingest: WAV decoding, clip conditioning, and dataset manifests.
//!
//! Recordings become [`AudioClip`]s — mono 64-bit samples in `[-1, 1]` at a
//! known rate — before any feature extraction happens. The WAV reader covers
//! little-endian RIFF with integer PCM (8/16/24-bit) and 32-bit float data,
//! one or two channels; everything else is rejected rather than guessed at.

use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A decoded mono clip. `samples` are 64-bit floats in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    /// Clip identifier, usually the file stem.
    pub source_id: String,
    /// Grouping key for cross-validation. Defaults to `source_id` until a
    /// manifest assigns the real one.
    pub patient_id: String,
}

/// Binary class label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Positive => "positive",
            Label::Negative => "negative",
        }
    }

    /// Case-insensitive parse of the manifest label tokens.
    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" => Some(Label::Positive),
            "negative" => Some(Label::Negative),
            _ => None,
        }
    }

    /// Numeric form used by the classifiers (positive = 1).
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Positive => 1,
            Label::Negative => 0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dataset row: a WAV file, its class, and the patient it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub patient_id: String,
}

/// The list of clips that make up a dataset.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV header: {0}")]
    MalformedHeader(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
    #[error("truncated WAV data: declared {declared} bytes, only {available} available")]
    TruncatedData { declared: usize, available: usize },
    #[error("clip has no samples")]
    EmptyClip,
    #[error("bad manifest: {0}")]
    BadManifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

const RIFF: &[u8; 4] = b"RIFF";
const WAVE: &[u8; 4] = b"WAVE";
const FMT: &[u8; 4] = b"fmt ";
const DATA: &[u8; 4] = b"data";

struct FmtInfo {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

/// Decode a RIFF/WAVE file into a mono clip.
///
/// Integer PCM is scaled by the type's maximum magnitude (16-bit sample
/// 16384 becomes exactly 0.5); stereo frames are averaged to mono. Chunks
/// other than `fmt ` and `data` are skipped.
pub fn load_wav(path: &Path) -> Result<AudioClip, AudioError> {
    let bytes = fs::read(path)?;
    let (samples, sample_rate) = decode_wav_bytes(&bytes)?;
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "clip".to_string());
    Ok(AudioClip {
        samples,
        sample_rate_hz: sample_rate,
        patient_id: source_id.clone(),
        source_id,
    })
}

/// Decode WAV bytes; exposed for tests that build files in memory.
pub fn decode_wav_bytes(bytes: &[u8]) -> Result<(Vec<f64>, u32), AudioError> {
    if bytes.len() < 12 {
        return Err(AudioError::MalformedHeader("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != RIFF {
        return Err(AudioError::MalformedHeader("missing RIFF magic".into()));
    }
    if &bytes[8..12] != WAVE {
        return Err(AudioError::MalformedHeader("missing WAVE tag".into()));
    }

    let mut fmt: Option<FmtInfo> = None;
    let mut pos = 12usize;
    while pos + 8 <= bytes.len() {
        let id: [u8; 4] = bytes[pos..pos + 4].try_into().unwrap();
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;

        if &id == FMT {
            if size < 16 || body_start + 16 > bytes.len() {
                return Err(AudioError::MalformedHeader("fmt chunk too small".into()));
            }
            let b = &bytes[body_start..];
            fmt = Some(FmtInfo {
                format: u16::from_le_bytes([b[0], b[1]]),
                channels: u16::from_le_bytes([b[2], b[3]]),
                sample_rate: u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                bits_per_sample: u16::from_le_bytes([b[14], b[15]]),
            });
        } else if &id == DATA {
            let fmt = fmt.ok_or_else(|| {
                AudioError::MalformedHeader("data chunk before fmt chunk".into())
            })?;
            let available = bytes.len().saturating_sub(body_start);
            if size > available {
                return Err(AudioError::TruncatedData { declared: size, available });
            }
            let data = &bytes[body_start..body_start + size];
            return decode_data(&fmt, data);
        }

        // RIFF chunks are word-aligned; odd sizes carry a pad byte.
        pos = body_start + size + (size & 1);
    }

    Err(AudioError::MalformedHeader("no data chunk found".into()))
}

fn decode_data(fmt: &FmtInfo, data: &[u8]) -> Result<(Vec<f64>, u32), AudioError> {
    if fmt.sample_rate == 0 {
        return Err(AudioError::MalformedHeader("sample rate is zero".into()));
    }
    if !(1..=2).contains(&fmt.channels) {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels (only mono/stereo supported)",
            fmt.channels
        )));
    }
    let channels = fmt.channels as usize;

    let per_channel: Vec<f64> = match (fmt.format, fmt.bits_per_sample) {
        // format 1 = integer PCM
        (1, 8) => data.iter().map(|&b| (b as f64 - 128.0) / 128.0).collect(),
        (1, 16) => data
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (1, 24) => data
            .chunks_exact(3)
            .map(|c| {
                let raw = (c[0] as i32) | ((c[1] as i32) << 8) | ((c[2] as i32) << 16);
                // sign-extend from 24 bits
                let v = (raw << 8) >> 8;
                v as f64 / 8_388_608.0
            })
            .collect(),
        // format 3 = IEEE float
        (3, 32) => data
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                v.clamp(-1.0, 1.0)
            })
            .collect(),
        (f, b) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {f} with {b} bits per sample"
            )))
        }
    };

    let samples = if channels == 1 {
        per_channel
    } else {
        per_channel
            .chunks_exact(2)
            .map(|fr| (fr[0] + fr[1]) / 2.0)
            .collect()
    };

    Ok((samples, fmt.sample_rate))
}

/// Write a mono 16-bit PCM WAV file.
///
/// Samples are quantized as `round(s * 32768)` clamped to the i16 range, so
/// values already on the 16-bit grid round-trip bit-exactly through
/// [`load_wav`].
pub fn write_wav(path: &Path, samples: &[f64], sample_rate_hz: u32) -> Result<(), AudioError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write_wav_to(&mut f, samples, sample_rate_hz)?;
    f.flush()?;
    Ok(())
}

fn write_wav_to<W: Write>(w: &mut W, samples: &[f64], sample_rate_hz: u32) -> io::Result<()> {
    let data_len = (samples.len() * 2) as u32;
    w.write_all(RIFF)?;
    w.write_all(&(36 + data_len).to_le_bytes())?;
    w.write_all(WAVE)?;
    w.write_all(FMT)?;
    w.write_all(&16u32.to_le_bytes())?;
    w.write_all(&1u16.to_le_bytes())?; // PCM
    w.write_all(&1u16.to_le_bytes())?; // mono
    w.write_all(&sample_rate_hz.to_le_bytes())?;
    w.write_all(&(sample_rate_hz * 2).to_le_bytes())?; // byte rate
    w.write_all(&2u16.to_le_bytes())?; // block align
    w.write_all(&16u16.to_le_bytes())?;
    w.write_all(DATA)?;
    w.write_all(&data_len.to_le_bytes())?;
    for &s in samples {
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_all(&q.to_le_bytes())?;
    }
    Ok(())
}

/// Output of [`prepare_clip`]: the conditioned clip plus a flag for clips
/// that were entirely silent (those pass through unscaled).
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub clip: AudioClip,
    pub silent: bool,
}

/// Resample to `target_rate_hz` (linear interpolation) and peak-normalize so
/// the loudest sample is exactly 1.0. All-zero clips are passed through
/// unchanged with `silent = true`. Idempotent at a fixed target rate.
pub fn prepare_clip(clip: &AudioClip, target_rate_hz: u32) -> Result<PreparedClip, AudioError> {
    if clip.samples.is_empty() {
        return Err(AudioError::EmptyClip);
    }

    let mut samples = if clip.sample_rate_hz == target_rate_hz {
        clip.samples.clone()
    } else {
        resample_linear(&clip.samples, clip.sample_rate_hz, target_rate_hz)
    };

    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    let silent = peak == 0.0;
    if !silent {
        for s in &mut samples {
            *s /= peak;
        }
    }

    Ok(PreparedClip {
        clip: AudioClip {
            samples,
            sample_rate_hz: target_rate_hz,
            source_id: clip.source_id.clone(),
            patient_id: clip.patient_id.clone(),
        },
        silent,
    })
}

fn resample_linear(input: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    let ratio = to_hz as f64 / from_hz as f64;
    let out_len = ((input.len() as f64) * ratio).round().max(1.0) as usize;
    let step = from_hz as f64 / to_hz as f64;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let pos = i as f64 * step;
        let i0 = pos.floor() as usize;
        if i0 + 1 >= input.len() {
            out.push(input[input.len() - 1]);
        } else {
            let frac = pos - i0 as f64;
            out.push(input[i0] + frac * (input[i0 + 1] - input[i0]));
        }
    }
    out
}

impl DatasetManifest {
    /// Read a `path,label,patient_id` CSV. Relative clip paths are resolved
    /// against the manifest's directory. Labels are case-insensitive
    /// `positive`/`negative`; duplicate paths are rejected.
    pub fn read_csv(path: &Path) -> Result<DatasetManifest, AudioError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut rdr = csv::Reader::from_path(path)
            .map_err(|e| AudioError::BadManifest(format!("{}: {e}", path.display())))?;

        let headers = rdr
            .headers()
            .map_err(|e| AudioError::BadManifest(e.to_string()))?
            .clone();
        let expect = ["path", "label", "patient_id"];
        let got: Vec<&str> = headers.iter().map(str::trim).collect();
        if got != expect {
            return Err(AudioError::BadManifest(format!(
                "expected header path,label,patient_id, found {}",
                got.join(",")
            )));
        }

        let mut entries = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| AudioError::BadManifest(e.to_string()))?;
            if rec.len() != 3 {
                return Err(AudioError::BadManifest(format!(
                    "row {}: expected 3 fields, found {}",
                    i + 2,
                    rec.len()
                )));
            }
            let raw_path = rec[0].trim();
            let label = Label::parse(&rec[1]).ok_or_else(|| {
                AudioError::BadManifest(format!("row {}: unknown label {:?}", i + 2, &rec[1]))
            })?;
            let patient_id = rec[2].trim().to_string();
            if patient_id.is_empty() {
                return Err(AudioError::BadManifest(format!("row {}: empty patient_id", i + 2)));
            }
            if !seen.insert(raw_path.to_string()) {
                return Err(AudioError::BadManifest(format!(
                    "row {}: duplicate path {raw_path:?}",
                    i + 2
                )));
            }
            let p = Path::new(raw_path);
            let path = if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
            entries.push(ManifestEntry { path, label, patient_id });
        }
        if entries.is_empty() {
            return Err(AudioError::BadManifest("no entries".into()));
        }
        Ok(DatasetManifest { entries })
    }

    /// Write the manifest with clip paths relative to the CSV when possible.
    pub fn write_csv(&self, path: &Path) -> Result<(), AudioError> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut wtr = csv::Writer::from_path(path)
            .map_err(|e| AudioError::BadManifest(e.to_string()))?;
        wtr.write_record(["path", "label", "patient_id"])
            .map_err(|e| AudioError::BadManifest(e.to_string()))?;
        for e in &self.entries {
            let rel = e.path.strip_prefix(&base).unwrap_or(&e.path);
            wtr.write_record([
                rel.to_string_lossy().as_ref(),
                e.label.as_str(),
                e.patient_id.as_str(),
            ])
            .map_err(|e| AudioError::BadManifest(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Load, decode, and assign labels/patients to every clip.
    pub fn load_clips(&self) -> Result<Vec<(AudioClip, Label)>, AudioError> {
        let mut out = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let mut clip = load_wav(&e.path)?;
            clip.patient_id = e.patient_id.clone();
            out.push((clip, e.label));
        }
        Ok(out)
    }
}

/// Read WAV bytes from a reader (convenience for streams).
pub fn read_wav<R: Read>(mut r: R, source_id: &str) -> Result<AudioClip, AudioError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let (samples, sample_rate_hz) = decode_wav_bytes(&bytes)?;
    Ok(AudioClip {
        samples,
        sample_rate_hz,
        source_id: source_id.to_string(),
        patient_id: source_id.to_string(),
    })
}

//! Statistical aggregation: collapse each feature track into seven summary
//! metrics and assemble the fixed-layout per-clip feature vector.
//!
//! The full layout is 9 tracks x 7 statistics = 63 entries, in a globally
//! fixed order (track order: voiced, unvoiced, effective_segments, f0,
//! log_energy, short_term_energy, zcr, spl, mfcc; stat order: min, max,
//! range, mean, std, skew, kurt). Named masks select sub-layouts.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::Label;
use crate::dsp::FeatureTrackSet;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("empty track")]
    EmptyTrack,
    #[error("unknown mask entry: {0}")]
    UnknownMaskEntry(String),
    #[error("unknown mask name: {0}")]
    UnknownMaskName(String),
    #[error("bad feature csv: {0}")]
    BadFeatureCsv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The nine aggregated tracks, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackId {
    Voiced,
    Unvoiced,
    EffectiveSegments,
    F0,
    LogEnergy,
    ShortTermEnergy,
    Zcr,
    Spl,
    Mfcc,
}

impl TrackId {
    pub const ALL: [TrackId; 9] = [
        TrackId::Voiced,
        TrackId::Unvoiced,
        TrackId::EffectiveSegments,
        TrackId::F0,
        TrackId::LogEnergy,
        TrackId::ShortTermEnergy,
        TrackId::Zcr,
        TrackId::Spl,
        TrackId::Mfcc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TrackId::Voiced => "voiced",
            TrackId::Unvoiced => "unvoiced",
            TrackId::EffectiveSegments => "effective_segments",
            TrackId::F0 => "f0",
            TrackId::LogEnergy => "log_energy",
            TrackId::ShortTermEnergy => "short_term_energy",
            TrackId::Zcr => "zcr",
            TrackId::Spl => "spl",
            TrackId::Mfcc => "mfcc",
        }
    }

    pub fn parse(s: &str) -> Option<TrackId> {
        TrackId::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// The seven summary statistics, in layout order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatId {
    Min,
    Max,
    Range,
    Mean,
    Std,
    Skew,
    Kurt,
}

impl StatId {
    pub const ALL: [StatId; 7] = [
        StatId::Min,
        StatId::Max,
        StatId::Range,
        StatId::Mean,
        StatId::Std,
        StatId::Skew,
        StatId::Kurt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StatId::Min => "min",
            StatId::Max => "max",
            StatId::Range => "range",
            StatId::Mean => "mean",
            StatId::Std => "std",
            StatId::Skew => "skew",
            StatId::Kurt => "kurt",
        }
    }

    pub fn parse(s: &str) -> Option<StatId> {
        StatId::ALL.into_iter().find(|t| t.name() == s)
    }
}

/// One layout entry, displayed as `track.stat`.
pub type LayoutEntry = (TrackId, StatId);

pub fn entry_name(e: LayoutEntry) -> String {
    format!("{}.{}", e.0.name(), e.1.name())
}

pub fn parse_entry(s: &str) -> Result<LayoutEntry, StatsError> {
    let (t, st) = s
        .split_once('.')
        .ok_or_else(|| StatsError::UnknownMaskEntry(s.to_string()))?;
    match (TrackId::parse(t), StatId::parse(st)) {
        (Some(t), Some(st)) => Ok((t, st)),
        _ => Err(StatsError::UnknownMaskEntry(s.to_string())),
    }
}

/// The globally fixed 63-entry layout.
pub fn full_layout() -> Vec<LayoutEntry> {
    let mut out = Vec::with_capacity(63);
    for t in TrackId::ALL {
        for s in StatId::ALL {
            out.push((t, s));
        }
    }
    out
}

/// Population summary of a numeric track. Moments divide by n (not n-1) and
/// kurtosis is the excess form. `degenerate` marks tracks with zero
/// variance (skew/kurt reported as 0) or tracks that were empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub degenerate: bool,
}

impl StatSummary {
    /// Summary used for empty tracks (silent clips still vectorize).
    pub fn degenerate_zero() -> StatSummary {
        StatSummary {
            mean: 0.0,
            std: 0.0,
            min: 0.0,
            max: 0.0,
            range: 0.0,
            skewness: 0.0,
            kurtosis: 0.0,
            degenerate: true,
        }
    }

    pub fn get(&self, stat: StatId) -> f64 {
        match stat {
            StatId::Min => self.min,
            StatId::Max => self.max,
            StatId::Range => self.range,
            StatId::Mean => self.mean,
            StatId::Std => self.std,
            StatId::Skew => self.skewness,
            StatId::Kurt => self.kurtosis,
        }
    }
}

/// Population statistics of a non-empty track.
pub fn aggregate_stats(track: &[f64]) -> Result<StatSummary, StatsError> {
    if track.is_empty() {
        return Err(StatsError::EmptyTrack);
    }
    let n = track.len() as f64;
    let mean = track.iter().sum::<f64>() / n;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in track {
        min = min.min(x);
        max = max.max(x);
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;

    let std = m2.sqrt();
    let (skewness, kurtosis, degenerate) = if std > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0, false)
    } else {
        (0.0, 0.0, true)
    };

    Ok(StatSummary { mean, std, min, max, range: max - min, skewness, kurtosis, degenerate })
}

/// An ordered subset of the full layout. Iteration always follows the
/// global layout order, whatever order entries were inserted in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureMask {
    entries: BTreeSet<LayoutEntry>,
}

impl FeatureMask {
    pub fn full() -> FeatureMask {
        FeatureMask { entries: full_layout().into_iter().collect() }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = LayoutEntry>) -> FeatureMask {
        FeatureMask { entries: entries.into_iter().collect() }
    }

    pub fn from_names(names: &[&str]) -> Result<FeatureMask, StatsError> {
        let mut entries = BTreeSet::new();
        for n in names {
            entries.insert(parse_entry(n)?);
        }
        Ok(FeatureMask { entries })
    }

    pub fn contains(&self, e: LayoutEntry) -> bool {
        self.entries.contains(&e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in global layout order.
    pub fn layout(&self) -> Vec<LayoutEntry> {
        full_layout().into_iter().filter(|e| self.contains(*e)).collect()
    }

    pub fn union(&self, other: &FeatureMask) -> FeatureMask {
        FeatureMask { entries: self.entries.union(&other.entries).copied().collect() }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<String> = self.layout().into_iter().map(entry_name).collect();
        f.write_str(&names.join(","))
    }
}

/// The 23 features of the published random-forest selection.
const RF23: [LayoutEntry; 23] = [
    (TrackId::F0, StatId::Max),
    (TrackId::F0, StatId::Mean),
    (TrackId::F0, StatId::Skew),
    (TrackId::LogEnergy, StatId::Min),
    (TrackId::LogEnergy, StatId::Mean),
    (TrackId::LogEnergy, StatId::Std),
    (TrackId::ShortTermEnergy, StatId::Min),
    (TrackId::ShortTermEnergy, StatId::Mean),
    (TrackId::ShortTermEnergy, StatId::Std),
    (TrackId::Zcr, StatId::Max),
    (TrackId::Zcr, StatId::Range),
    (TrackId::Zcr, StatId::Mean),
    (TrackId::Zcr, StatId::Std),
    (TrackId::Zcr, StatId::Kurt),
    (TrackId::Spl, StatId::Min),
    (TrackId::Spl, StatId::Mean),
    (TrackId::Spl, StatId::Std),
    (TrackId::Mfcc, StatId::Min),
    (TrackId::Mfcc, StatId::Max),
    (TrackId::Mfcc, StatId::Mean),
    (TrackId::Mfcc, StatId::Std),
    (TrackId::Mfcc, StatId::Skew),
    (TrackId::Mfcc, StatId::Kurt),
];

/// The 26 printed features of the published PCA selection. (The source
/// table's caption claims 27 but prints 26 names; the printed list wins.)
const PCA_TABLE: [LayoutEntry; 26] = [
    (TrackId::F0, StatId::Max),
    (TrackId::F0, StatId::Mean),
    (TrackId::F0, StatId::Skew),
    (TrackId::LogEnergy, StatId::Min),
    (TrackId::LogEnergy, StatId::Max),
    (TrackId::LogEnergy, StatId::Mean),
    (TrackId::ShortTermEnergy, StatId::Min),
    (TrackId::ShortTermEnergy, StatId::Max),
    (TrackId::ShortTermEnergy, StatId::Range),
    (TrackId::ShortTermEnergy, StatId::Mean),
    (TrackId::ShortTermEnergy, StatId::Std),
    (TrackId::Zcr, StatId::Min),
    (TrackId::Zcr, StatId::Max),
    (TrackId::Zcr, StatId::Range),
    (TrackId::Zcr, StatId::Std),
    (TrackId::Zcr, StatId::Skew),
    (TrackId::Zcr, StatId::Kurt),
    (TrackId::Spl, StatId::Min),
    (TrackId::Spl, StatId::Max),
    (TrackId::Mfcc, StatId::Min),
    (TrackId::Mfcc, StatId::Max),
    (TrackId::Mfcc, StatId::Range),
    (TrackId::Mfcc, StatId::Mean),
    (TrackId::Mfcc, StatId::Std),
    (TrackId::Mfcc, StatId::Skew),
    (TrackId::Mfcc, StatId::Kurt),
];

/// Look up one of the shipped mask presets.
///
/// * `full` — all 63 entries.
/// * `paper57` — 57 entries: full minus skew/kurt of the three
///   indicator-like tracks (voiced, unvoiced, effective_segments).
/// * `table4` — the 49-entry reduction mask with skew/kurt kept only for
///   log_energy and mfcc.
/// * `rf23` — the 23 published random-forest picks.
/// * `pca_table3` (alias `pca26`) — the 26 printed PCA picks.
pub fn named_mask(name: &str) -> Result<FeatureMask, StatsError> {
    match name {
        "full" => Ok(FeatureMask::full()),
        "paper57" => {
            let drop: BTreeSet<LayoutEntry> =
                [TrackId::Voiced, TrackId::Unvoiced, TrackId::EffectiveSegments]
                    .into_iter()
                    .flat_map(|t| [(t, StatId::Skew), (t, StatId::Kurt)])
                    .collect();
            Ok(FeatureMask::from_entries(
                full_layout().into_iter().filter(|e| !drop.contains(e)),
            ))
        }
        "table4" => {
            let keep_all = [TrackId::LogEnergy, TrackId::Mfcc];
            Ok(FeatureMask::from_entries(full_layout().into_iter().filter(|(t, s)| {
                keep_all.contains(t) || !matches!(s, StatId::Skew | StatId::Kurt)
            })))
        }
        "rf23" => Ok(FeatureMask::from_entries(RF23)),
        "pca_table3" | "pca26" => Ok(FeatureMask::from_entries(PCA_TABLE)),
        other => Err(StatsError::UnknownMaskName(other.to_string())),
    }
}

/// A per-clip feature vector with its layout and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub layout: Vec<LayoutEntry>,
    pub label: Option<Label>,
    pub patient_id: String,
}

fn track_values(tracks: &FeatureTrackSet, id: TrackId) -> Vec<f64> {
    match id {
        TrackId::Voiced => tracks.voiced.clone(),
        TrackId::Unvoiced => tracks.unvoiced.clone(),
        TrackId::EffectiveSegments => tracks.effective_segments.clone(),
        TrackId::F0 => tracks.f0_values(),
        TrackId::LogEnergy => tracks.log_energy.clone(),
        TrackId::ShortTermEnergy => tracks.short_term_energy.clone(),
        TrackId::Zcr => tracks.zcr.clone(),
        TrackId::Spl => tracks.spl_db.clone(),
        // statistics over the flattened coefficient matrix
        TrackId::Mfcc => tracks.mfcc.iter().flatten().copied().collect(),
    }
}

/// Aggregate every masked (track, stat) pair in global layout order. Empty
/// tracks (no voiced frames, no segments) contribute all-zero summaries.
pub fn build_feature_vector(
    tracks: &FeatureTrackSet,
    mask: &FeatureMask,
    label: Option<Label>,
    patient_id: &str,
) -> Result<FeatureVector, StatsError> {
    let layout = mask.layout();
    let mut values = Vec::with_capacity(layout.len());

    let mut summaries: Vec<Option<StatSummary>> = vec![None; TrackId::ALL.len()];
    for &(track, stat) in &layout {
        let idx = TrackId::ALL.iter().position(|&t| t == track).unwrap();
        if summaries[idx].is_none() {
            let vals = track_values(tracks, track);
            summaries[idx] = Some(if vals.is_empty() {
                StatSummary::degenerate_zero()
            } else {
                aggregate_stats(&vals)?
            });
        }
        values.push(summaries[idx].as_ref().unwrap().get(stat));
    }

    Ok(FeatureVector { values, layout, label, patient_id: patient_id.to_string() })
}

// ---------------------------------------------------------------------------
// Feature matrix CSV
// ---------------------------------------------------------------------------

/// Write one feature vector per row: `track.stat` columns followed by
/// `label` and `patient_id`.
pub fn write_feature_csv(path: &Path, vectors: &[FeatureVector]) -> Result<(), StatsError> {
    if vectors.is_empty() {
        return Err(StatsError::BadFeatureCsv("no vectors to write".into()));
    }
    let layout = &vectors[0].layout;
    let mut wtr =
        csv::Writer::from_path(path).map_err(|e| StatsError::BadFeatureCsv(e.to_string()))?;

    let mut header: Vec<String> = layout.iter().map(|&e| entry_name(e)).collect();
    header.push("label".into());
    header.push("patient_id".into());
    wtr.write_record(&header).map_err(|e| StatsError::BadFeatureCsv(e.to_string()))?;

    for v in vectors {
        if v.layout != *layout {
            return Err(StatsError::BadFeatureCsv("inconsistent layouts across rows".into()));
        }
        let mut rec: Vec<String> = v.values.iter().map(|x| format!("{x}")).collect();
        rec.push(v.label.map(|l| l.as_str().to_string()).unwrap_or_default());
        rec.push(v.patient_id.clone());
        wtr.write_record(&rec).map_err(|e| StatsError::BadFeatureCsv(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read a feature CSV back into vectors.
pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureVector>, StatsError> {
    let mut rdr =
        csv::Reader::from_path(path).map_err(|e| StatsError::BadFeatureCsv(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| StatsError::BadFeatureCsv(e.to_string()))?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "patient_id" {
        return Err(StatsError::BadFeatureCsv(
            "expected trailing label,patient_id columns".into(),
        ));
    }
    let layout: Vec<LayoutEntry> = cols[..cols.len() - 2]
        .iter()
        .map(|s| parse_entry(s))
        .collect::<Result<_, _>>()?;

    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| StatsError::BadFeatureCsv(e.to_string()))?;
        if rec.len() != layout.len() + 2 {
            return Err(StatsError::BadFeatureCsv("row width mismatch".into()));
        }
        let values: Vec<f64> = rec
            .iter()
            .take(layout.len())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| StatsError::BadFeatureCsv(format!("bad float {s:?}")))
            })
            .collect::<Result<_, _>>()?;
        let label_str = &rec[layout.len()];
        let label = if label_str.is_empty() {
            None
        } else {
            Some(Label::parse(label_str).ok_or_else(|| {
                StatsError::BadFeatureCsv(format!("bad label {label_str:?}"))
            })?)
        };
        out.push(FeatureVector {
            values,
            layout: layout.clone(),
            label,
            patient_id: rec[layout.len() + 1].to_string(),
        });
    }
    if out.is_empty() {
        return Err(StatsError::BadFeatureCsv("no rows".into()));
    }
    Ok(out)
}

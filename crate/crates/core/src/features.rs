//! Hand-built features derived from blame annotations.
//!
//! Frame-level features describe how one developer relates to the file of a
//! single frame. Stack-level features describe the developer's footprint
//! across the whole trace. Features marked "max"/"min" are normalized by the
//! extreme value over the query's candidate developers; a zero extreme means
//! every candidate ties and the feature is 1.
//!
//! Time differences are measured in days and decayed with `e^(-days / 30)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::annotations::{Annotation, AnnotationStore, DeveloperStack};
use crate::error::{Error, Result};
use crate::trace::{DeveloperId, StackTrace, TokenSequence};

pub const FEATURE_CATALOGUE_VERSION: u32 = 1;
pub const FRAME_FEATURES: usize = 15;
pub const STACK_FEATURES: usize = 12;

pub const FRAME_FEATURE_NAMES: [&str; FRAME_FEATURES] = [
    "min_distance",
    "min_distance_by_length",
    "min_distance_by_best",
    "edited_error_line",
    "edited_lines_by_length",
    "edited_lines_by_max",
    "decayed_edits_by_length",
    "decayed_edits_by_max",
    "window_edits_by_size",
    "window_edits_by_max",
    "distinct_timestamps",
    "distinct_timestamps_by_max",
    "last_edit_decay",
    "last_edit_log_days",
    "first_edit_log_days",
];

pub const STACK_FEATURE_NAMES: [&str; STACK_FEATURES] = [
    "first_edited_order",
    "first_edited_order_by_length",
    "first_edited_order_by_annotated",
    "first_edited_order_best_ratio",
    "edited_error_lines_by_length",
    "edited_error_lines_by_max",
    "edited_lines_by_total",
    "edited_lines_by_max",
    "max_idf_frame_edited_lines",
    "edited_frames_by_length",
    "edited_frames_by_annotated",
    "edited_frames_by_max",
];

pub const DECAY_DAYS: f64 = 30.0;
pub const MS_PER_DAY: f64 = 86_400_000.0;
/// Error-line band `[line - 5, line + 4]`.
const WINDOW_BEFORE: i64 = 5;
const WINDOW_AFTER: i64 = 4;
const WINDOW_SIZE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameFeatures {
    pub values: [f64; FRAME_FEATURES],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackFeatures {
    pub values: [f64; STACK_FEATURES],
}

/// `value / max` where ties at zero count as the extreme.
fn by_max(value: f64, max: f64) -> f64 {
    if max > 0.0 {
        value / max
    } else {
        1.0
    }
}

pub fn elapsed_days(report_time: i64, edit_time: i64) -> f64 {
    (report_time.saturating_sub(edit_time)).max(0) as f64 / MS_PER_DAY
}

pub fn decay(days: f64) -> f64 {
    (-days / DECAY_DAYS).exp()
}

#[derive(Debug, Clone, Copy)]
struct FrameStats {
    min_distance: f64,
    hits_error_line: bool,
    edited: f64,
    decayed: f64,
    window: f64,
    distinct_times: f64,
    last_days: f64,
    first_days: f64,
}

fn frame_stats(dev: &str, annotation: &Annotation, error_line: Option<u32>, report_time: i64) -> Option<FrameStats> {
    let target = error_line.unwrap_or(1) as i64;
    let mut min_distance = i64::MAX;
    let mut hits = false;
    let mut edited = 0usize;
    let mut decayed = 0.0;
    let mut window = 0usize;
    let mut times = BTreeSet::new();
    let mut last = f64::INFINITY;
    let mut first = 0.0f64;
    for (line, ts) in annotation.edits_by(dev) {
        let line = line as i64;
        min_distance = min_distance.min((line - target).abs());
        hits |= error_line.is_some() && line == target;
        edited += 1;
        let days = elapsed_days(report_time, ts);
        decayed += decay(days);
        if (target - WINDOW_BEFORE..=target + WINDOW_AFTER).contains(&line) {
            window += 1;
        }
        times.insert(ts);
        last = last.min(days);
        first = first.max(days);
    }
    (edited > 0).then_some(FrameStats {
        min_distance: min_distance as f64,
        hits_error_line: hits,
        edited: edited as f64,
        decayed,
        window: window as f64,
        distinct_times: times.len() as f64,
        last_days: last,
        first_days: first,
    })
}

fn assemble_frame(stats: &FrameStats, len: f64, best: &FrameStats) -> FrameFeatures {
    FrameFeatures {
        values: [
            stats.min_distance,
            stats.min_distance / len,
            (stats.min_distance + 1.0) / (best.min_distance + 1.0),
            if stats.hits_error_line { 1.0 } else { 0.0 },
            stats.edited / len,
            by_max(stats.edited, best.edited),
            stats.decayed / len,
            by_max(stats.decayed, best.decayed),
            stats.window / WINDOW_SIZE,
            by_max(stats.window, best.window),
            stats.distinct_times,
            by_max(stats.distinct_times, best.distinct_times),
            decay(stats.last_days),
            stats.last_days.ln_1p(),
            stats.first_days.ln_1p(),
        ],
    }
}

/// Frame features for every candidate who edited this file. The `best` stats
/// hold the per-column extremes (min for distance, max otherwise).
pub fn frame_features_for_candidates(
    annotation: &Annotation,
    error_line: Option<u32>,
    report_time: i64,
    candidates: &BTreeSet<DeveloperId>,
) -> BTreeMap<DeveloperId, FrameFeatures> {
    let stats: Vec<(&DeveloperId, FrameStats)> = candidates
        .iter()
        .filter_map(|d| Some((d, frame_stats(d, annotation, error_line, report_time)?)))
        .collect();
    let Some(best) = stats.iter().map(|(_, s)| *s).reduce(|a, b| FrameStats {
        min_distance: a.min_distance.min(b.min_distance),
        hits_error_line: a.hits_error_line || b.hits_error_line,
        edited: a.edited.max(b.edited),
        decayed: a.decayed.max(b.decayed),
        window: a.window.max(b.window),
        distinct_times: a.distinct_times.max(b.distinct_times),
        last_days: a.last_days.min(b.last_days),
        first_days: a.first_days.max(b.first_days),
    }) else {
        return BTreeMap::new();
    };
    let len = annotation.len() as f64;
    stats
        .into_iter()
        .map(|(d, s)| (d.clone(), assemble_frame(&s, len, &best)))
        .collect()
}

/// Frame features of one developer. Returns `None` when `dev` authored no
/// line of the annotation.
pub fn frame_features(
    dev: &str,
    annotation: &Annotation,
    error_line: Option<u32>,
    report_time: i64,
    candidates: &BTreeSet<DeveloperId>,
) -> Option<FrameFeatures> {
    let mut all = candidates.clone();
    all.insert(dev.to_owned());
    frame_features_for_candidates(annotation, error_line, report_time, &all).remove(dev)
}

/// Inverse document frequency weights over token sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdfTable {
    pub weights: BTreeMap<String, f64>,
    pub corpus_size: usize,
}

impl IdfTable {
    /// `ln(N / (1 + df))`, clamped at zero.
    pub fn formula(corpus_size: usize, df: usize) -> f64 {
        (corpus_size as f64 / (1.0 + df as f64)).ln().max(0.0)
    }

    pub fn max_weight(&self) -> f64 {
        self.weights.values().copied().fold(0.0, f64::max)
    }

    /// Unseen tokens get the maximum stored weight.
    pub fn weight(&self, token: &str) -> f64 {
        self.weights.get(token).copied().unwrap_or_else(|| self.max_weight())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.weights.contains_key(token)
    }
}

pub fn compute_idf(docs: &[TokenSequence]) -> Result<IdfTable> {
    if docs.is_empty() {
        return Err(Error::validation("corpus", "cannot compute IDF of an empty corpus"));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: BTreeSet<&str> = doc.tokens.iter().map(String::as_str).collect();
        for t in unique {
            *df.entry(t).or_default() += 1;
        }
    }
    let n = docs.len();
    Ok(IdfTable {
        weights: df
            .into_iter()
            .map(|(t, d)| (t.to_owned(), IdfTable::formula(n, d)))
            .collect(),
        corpus_size: n,
    })
}

struct StackStats {
    first_order: f64,
    edited_error_lines: f64,
    edited_lines: f64,
    max_idf_lines: f64,
    edited_frames: f64,
}

/// Stack features for each developer with a non-empty stack. `trace` should
/// already be loop-compressed; the IDF token of a frame is its file name.
pub fn stack_features_for_candidates(
    trace: &StackTrace,
    stacks: &BTreeMap<DeveloperId, DeveloperStack>,
    store: &AnnotationStore,
    idf: &IdfTable,
) -> BTreeMap<DeveloperId, StackFeatures> {
    let annotations: Vec<Option<&Annotation>> = trace.frames.iter().map(|f| store.for_frame(f)).collect();
    let n = trace.frames.len() as f64;
    let annotated = annotations.iter().flatten().count().max(1) as f64;

    let mut distinct: BTreeMap<(&str, &str), &Annotation> = BTreeMap::new();
    for a in annotations.iter().flatten() {
        distinct.insert((a.file.as_str(), a.commit.as_str()), a);
    }
    let total_lines: f64 = distinct.values().map(|a| a.len() as f64).sum::<f64>().max(1.0);

    // First annotated frame holding the rarest token.
    let mut max_idf_frame: Option<(f64, &Annotation)> = None;
    for (frame, ann) in trace.frames.iter().zip(&annotations) {
        if let (Some(file), Some(ann)) = (frame.file.as_deref(), ann) {
            let w = idf.weight(file);
            if max_idf_frame.is_none_or(|(best, _)| w > best) {
                max_idf_frame = Some((w, ann));
            }
        }
    }

    let stats: Vec<(&DeveloperId, StackStats)> = stacks
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(dev, stack)| {
            let first_order = stack.frames[0].0 as f64 + 1.0;
            let edited_error_lines = trace
                .frames
                .iter()
                .zip(&annotations)
                .filter(|(f, a)| match (f.error_line, a) {
                    (Some(l), Some(a)) => a.author_of(l).is_some_and(|x| x.author == **dev),
                    _ => false,
                })
                .count() as f64;
            let edited_lines = distinct.values().map(|a| a.edits_by(dev).count() as f64).sum();
            let max_idf_lines = max_idf_frame
                .map(|(_, a)| a.edits_by(dev).count() as f64 / a.len() as f64)
                .unwrap_or(0.0);
            (
                dev,
                StackStats {
                    first_order,
                    edited_error_lines,
                    edited_lines,
                    max_idf_lines,
                    edited_frames: stack.len() as f64,
                },
            )
        })
        .collect();

    let min_order = stats.iter().map(|(_, s)| s.first_order).fold(f64::INFINITY, f64::min);
    let max_err = stats.iter().map(|(_, s)| s.edited_error_lines).fold(0.0, f64::max);
    let max_lines = stats.iter().map(|(_, s)| s.edited_lines).fold(0.0, f64::max);
    let max_frames = stats.iter().map(|(_, s)| s.edited_frames).fold(0.0, f64::max);

    stats
        .into_iter()
        .map(|(dev, s)| {
            let values = [
                s.first_order,
                s.first_order / n,
                s.first_order / annotated,
                min_order / s.first_order,
                s.edited_error_lines / n,
                by_max(s.edited_error_lines, max_err),
                s.edited_lines / total_lines,
                by_max(s.edited_lines, max_lines),
                s.max_idf_lines,
                s.edited_frames / n,
                s.edited_frames / annotated,
                by_max(s.edited_frames, max_frames),
            ];
            (dev.clone(), StackFeatures { values })
        })
        .collect()
}

pub fn stack_features(
    dev: &str,
    trace: &StackTrace,
    dev_stack: &DeveloperStack,
    others: &BTreeMap<DeveloperId, DeveloperStack>,
    store: &AnnotationStore,
    idf: &IdfTable,
) -> Option<StackFeatures> {
    let mut all = others.clone();
    all.insert(dev.to_owned(), dev_stack.clone());
    stack_features_for_candidates(trace, &all, store, idf).remove(dev)
}

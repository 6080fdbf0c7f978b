//! End-to-end experiment plumbing: loading a corpus directory, splitting it,
//! ranking queries with a model or baseline, and assembling the eval report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotations::{
    build_developer_stack_with, parse_annotations, AnnotationStore, AuthorshipPolicy, DeveloperStack,
};
use crate::baselines::{heuristic_rank, logreg_rank, logreg_train, LinearModel, LogRegConfig, TfidfVectorizer};
use crate::datagen::{ANNOTATIONS_FILE, REPORTS_FILE};
use crate::error::{Error, Result};
use crate::eval::{bootstrap_diff, compute_metrics, split_by_time, BootstrapInterval, EvalResult, Metric, SplitSpec};
use crate::features::{
    compute_idf, frame_features_for_candidates, stack_features_for_candidates, IdfTable, FRAME_FEATURES,
    FRAME_FEATURE_NAMES, STACK_FEATURES, STACK_FEATURE_NAMES,
};
use crate::ranker::{RankedList, RankingModel, TrainingSummary};
use crate::trace::{compress_loops, parse_reports, tokenize, DeveloperId, StackTrace, TokenMode};

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VALIDATION_FRACTION: f64 = 0.15;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub reports: Vec<StackTrace>,
    pub annotations: AnnotationStore,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let reports = parse_reports(&std::fs::read_to_string(dir.join(REPORTS_FILE))?)?;
        let annotations = parse_annotations(&std::fs::read_to_string(dir.join(ANNOTATIONS_FILE))?)?;
        Ok(Self { reports, annotations })
    }

    /// Every annotation author and every recorded fixer.
    pub fn developers(&self) -> BTreeSet<DeveloperId> {
        let mut devs = self.annotations.all_authors();
        devs.extend(self.reports.iter().filter_map(|r| r.fixer.clone()));
        devs
    }

    pub fn split(&self) -> Result<Split> {
        let spec = split_by_time(&self.reports, TRAIN_FRACTION, VALIDATION_FRACTION)?;
        let (train, validation, test) = spec.apply(&self.reports);
        let owned = |v: Vec<&StackTrace>| v.into_iter().cloned().collect();
        Ok(Split {
            train: owned(train),
            validation: owned(validation),
            test: owned(test),
            spec,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub spec: SplitSpec,
    pub train: Vec<StackTrace>,
    pub validation: Vec<StackTrace>,
    pub test: Vec<StackTrace>,
}

/// TF-IDF features plus a fitted multinomial logistic regression.
#[derive(Debug, Clone)]
pub struct LogRegRanker {
    pub vectorizer: TfidfVectorizer,
    pub model: LinearModel,
    pub token_mode: TokenMode,
}

impl LogRegRanker {
    /// Fits on the reports that carry a fixer and at least one token.
    pub fn fit(reports: &[StackTrace], token_mode: TokenMode, config: &LogRegConfig) -> Result<Self> {
        let docs: Vec<_> = reports
            .iter()
            .map(|r| tokenize(&compress_loops(r), token_mode))
            .collect();
        let vectorizer = TfidfVectorizer::fit(&docs)?;
        let (mut vectors, mut labels) = (Vec::new(), Vec::new());
        for (r, doc) in reports.iter().zip(&docs) {
            if let (Some(fixer), false) = (&r.fixer, doc.is_empty()) {
                vectors.push(vectorizer.transform(doc));
                labels.push(fixer.clone());
            }
        }
        let model = logreg_train(&vectors, &labels, vectorizer.dim(), config)?;
        Ok(Self {
            vectorizer,
            model,
            token_mode,
        })
    }

    pub fn rank(&self, trace: &StackTrace, all_devs: &BTreeSet<DeveloperId>) -> RankedList {
        let doc = tokenize(&compress_loops(trace), self.token_mode);
        logreg_rank(&self.vectorizer.transform(&doc), &self.model, all_devs)
    }
}

/// Anything that can order developers for a report.
#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    Model(&'a RankingModel),
    Heuristic,
    LogReg(&'a LogRegRanker),
}

impl Ranker<'_> {
    pub fn rank(&self, trace: &StackTrace, store: &AnnotationStore, all_devs: &BTreeSet<DeveloperId>) -> RankedList {
        match self {
            Ranker::Model(m) => m.rank(trace, store, all_devs),
            Ranker::Heuristic => heuristic_rank(trace, store, all_devs),
            Ranker::LogReg(l) => l.rank(trace, all_devs),
        }
    }

    /// Whether `dev` gets a real score rather than the shared fallback.
    pub fn scores(&self, trace: &StackTrace, store: &AnnotationStore, dev: &str) -> bool {
        match self {
            Ranker::Model(m) => m.prepare(trace, store, None).position(dev).is_some(),
            Ranker::Heuristic => true,
            Ranker::LogReg(l) => l.model.class_index(dev).is_some(),
        }
    }

    /// Ranks every report in parallel; output order follows `reports`.
    pub fn rank_all(
        &self,
        reports: &[StackTrace],
        store: &AnnotationStore,
        all_devs: &BTreeSet<DeveloperId>,
    ) -> Vec<RankedList> {
        reports.par_iter().map(|r| self.rank(r, store, all_devs)).collect()
    }
}

/// Reports with a recorded fixer, which are the only ones that can be scored.
pub fn labelled(reports: &[StackTrace]) -> Vec<StackTrace> {
    reports.iter().filter(|r| r.fixer.is_some()).cloned().collect()
}

pub fn evaluate(lists: &[RankedList], reports: &[StackTrace]) -> Result<EvalResult> {
    compute_metrics(
        lists
            .iter()
            .zip(reports)
            .map(|(l, r)| (l, r.fixer.as_deref().expect("labelled reports"))),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub metrics: EvalResult,
    /// Interval of `metric(model) - metric(baseline)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<BootstrapInterval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significant: Option<bool>,
    pub unseen_fixers: UnseenFixerStats,
}

/// Test queries whose fixer never fixed a training report.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UnseenFixerStats {
    pub queries: usize,
    /// Queries where the fixer is ranked first.
    pub hits_at_1: usize,
    /// Queries where the fixer receives a real score, i.e. a finite rank
    /// among scored developers instead of the shared fallback.
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    #[serde(flatten)]
    pub metrics: EvalResult,
    /// Training reports dropped because the fixer had an empty stack.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub excluded_at_train: Option<usize>,
    /// Test queries kept despite an empty fixer stack (ranked at the fallback).
    pub test_empty_target: usize,
    pub unseen_fixers: UnseenFixerStats,
    pub comparisons: Vec<Comparison>,
}

pub fn unseen_fixer_stats(
    ranker: Ranker,
    lists: &[RankedList],
    reports: &[StackTrace],
    store: &AnnotationStore,
    seen: &BTreeSet<DeveloperId>,
) -> UnseenFixerStats {
    let mut stats = UnseenFixerStats::default();
    for (list, r) in lists.iter().zip(reports) {
        let fixer = r.fixer.as_deref().expect("labelled reports");
        if seen.contains(fixer) {
            continue;
        }
        stats.queries += 1;
        stats.hits_at_1 += usize::from(list.rank_of(fixer) == Some(1));
        stats.scored += usize::from(ranker.scores(r, store, fixer));
    }
    stats
}

/// Options for [`evaluate_against`].
#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub bootstrap: Option<usize>,
    pub metric: Metric,
    pub level: f64,
    pub seed: u64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            bootstrap: None,
            metric: Metric::Mrr,
            level: 0.95,
            seed: 0,
        }
    }
}

/// Evaluates `model` on the test split and compares it against each named
/// baseline, with paired bootstrap intervals when requested.
pub fn evaluate_against(
    model_name: &str,
    model: &RankingModel,
    training: Option<&TrainingSummary>,
    baselines: &[(String, Ranker)],
    dataset: &Dataset,
    split: &Split,
    options: &CompareOptions,
) -> Result<EvalReport> {
    let test = labelled(&split.test);
    if test.is_empty() {
        return Err(Error::validation("test", "test split has no labelled reports"));
    }
    let all_devs = dataset.developers();
    let seen: BTreeSet<DeveloperId> = split.train.iter().filter_map(|r| r.fixer.clone()).collect();
    let store = &dataset.annotations;

    let ranker = Ranker::Model(model);
    let lists = ranker.rank_all(&test, store, &all_devs);
    let metrics = evaluate(&lists, &test)?;
    let test_empty_target = test
        .iter()
        .filter(|r| {
            !model
                .candidates(&compress_loops(r), store)
                .contains(r.fixer.as_deref().unwrap())
        })
        .count();
    let unseen_fixers = unseen_fixer_stats(ranker, &lists, &test, store, &seen);

    let mut comparisons = Vec::with_capacity(baselines.len());
    for (name, baseline) in baselines {
        let base_lists = baseline.rank_all(&test, store, &all_devs);
        let base_metrics = evaluate(&base_lists, &test)?;
        let interval = options
            .bootstrap
            .map(|n| {
                bootstrap_diff(
                    &metrics.ranks,
                    &base_metrics.ranks,
                    options.metric,
                    n,
                    options.level,
                    options.seed,
                )
            })
            .transpose()?;
        comparisons.push(Comparison {
            baseline: name.clone(),
            unseen_fixers: unseen_fixer_stats(*baseline, &base_lists, &test, store, &seen),
            metrics: base_metrics,
            significant: interval.as_ref().map(|i| i.significant),
            interval,
        });
    }

    Ok(EvalReport {
        model: model_name.to_owned(),
        metrics,
        excluded_at_train: training.map(|t| t.skipped_empty_target),
        test_empty_target,
        unseen_fixers,
        comparisons,
    })
}

/// One row per (report, developer with a non-empty stack): frame features
/// averaged over the developer's stack frames, then the stack features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub report_id: String,
    pub developer: DeveloperId,
    pub frame: [f64; FRAME_FEATURES],
    pub stack: [f64; STACK_FEATURES],
}

pub fn feature_rows(trace: &StackTrace, store: &AnnotationStore, idf: &IdfTable) -> Vec<FeatureRow> {
    let trace = compress_loops(trace);
    let policy = AuthorshipPolicy::default();
    let candidates = crate::annotations::candidate_developers_with(&trace, store, policy);
    let stacks: BTreeMap<DeveloperId, DeveloperStack> = candidates
        .iter()
        .map(|d| (d.clone(), build_developer_stack_with(d, &trace, store, policy)))
        .collect();
    let stack_feats = stack_features_for_candidates(&trace, &stacks, store, idf);

    let mut sums: BTreeMap<&str, ([f64; FRAME_FEATURES], usize)> = BTreeMap::new();
    for frame in &trace.frames {
        let Some(ann) = store.for_frame(frame) else { continue };
        for (dev, f) in frame_features_for_candidates(ann, frame.error_line, trace.timestamp, &candidates) {
            let dev = candidates.get(&dev).expect("candidate").as_str();
            let slot = sums.entry(dev).or_insert(([0.0; FRAME_FEATURES], 0));
            for (s, v) in slot.0.iter_mut().zip(f.values) {
                *s += v;
            }
            slot.1 += 1;
        }
    }
    sums.into_iter()
        .filter_map(|(dev, (sum, n))| {
            let stack = stack_feats.get(dev)?.values;
            Some(FeatureRow {
                report_id: trace.report_id.clone(),
                developer: dev.to_owned(),
                frame: sum.map(|s| s / n as f64),
                stack,
            })
        })
        .collect()
}

pub fn write_feature_csv<W: std::io::Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header = ["report_id", "developer"]
        .into_iter()
        .map(str::to_owned)
        .chain((1..=FRAME_FEATURES).map(|i| format!("F{i}")))
        .chain((1..=STACK_FEATURES).map(|i| format!("S{i}")));
    w.write_record(header)?;
    for row in rows {
        let record = [row.report_id.clone(), row.developer.clone()]
            .into_iter()
            .chain(row.frame.iter().chain(&row.stack).map(|v| v.to_string()));
        w.write_record(record)?;
    }
    w.flush()?;
    Ok(())
}

/// IDF over the training split, for feature dumps without a model.
pub fn training_idf(split: &Split, mode: TokenMode) -> Result<IdfTable> {
    let docs: Vec<_> = split.train.iter().map(|r| tokenize(&compress_loops(r), mode)).collect();
    compute_idf(&docs)
}

/// Feature names in CSV column order, for documentation output.
pub fn feature_names() -> impl Iterator<Item = &'static str> {
    FRAME_FEATURE_NAMES.into_iter().chain(STACK_FEATURE_NAMES)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, GeneratorConfig};

    fn dataset() -> Dataset {
        let c = generate(&GeneratorConfig {
            n_developers: 6,
            n_files: 30,
            n_reports: 40,
            mean_trace_len: 12.0,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        Dataset {
            reports: c.reports,
            annotations: c.annotations,
        }
    }

    #[test]
    fn split_sizes_and_order() {
        let d = dataset();
        let s = d.split().unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (28, 6, 6));
        assert!(s.train.last().unwrap().timestamp <= s.test[0].timestamp);
    }

    #[test]
    fn heuristic_lists_cover_every_developer() {
        let d = dataset();
        let devs = d.developers();
        let lists = Ranker::Heuristic.rank_all(&d.reports, &d.annotations, &devs);
        assert!(lists.iter().all(|l| l.len() == devs.len()));
        let m = evaluate(&lists, &labelled(&d.reports)).unwrap();
        assert!(m.acc_at_1 <= m.acc_at_5 && m.acc_at_5 <= m.acc_at_10);
    }

    #[test]
    fn feature_csv_has_header_and_rows() {
        let d = dataset();
        let s = d.split().unwrap();
        let idf = training_idf(&s, TokenMode::File).unwrap();
        let rows = feature_rows(&d.reports[0], &d.annotations, &idf);
        assert!(!rows.is_empty());
        let mut buf = Vec::new();
        write_feature_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("report_id,developer,F1,"));
        assert!(header.ends_with(",S12"));
        assert_eq!(lines.count(), rows.len());
        for r in &rows {
            assert!(r.frame.iter().chain(&r.stack).all(|v| v.is_finite()));
        }
        assert_eq!(feature_names().count(), FRAME_FEATURES + STACK_FEATURES);
    }
}

//! Comparison points: a blame-counting heuristic and a TF-IDF + logistic
//! regression classifier over trace tokens.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotations::AnnotationStore;
use crate::error::{Error, Result};
use crate::features::{decay, elapsed_days, IdfTable};
use crate::ranker::RankedList;
use crate::trace::{compress_loops, DeveloperId, StackTrace, TokenSequence};

/// Only the topmost frames are inspected by the heuristic.
pub const HEURISTIC_TOP_FRAMES: usize = 20;

/// Scores each developer by the recency-weighted number of error lines they
/// last edited among the top frames.
pub fn heuristic_rank(trace: &StackTrace, store: &AnnotationStore, all_devs: &BTreeSet<DeveloperId>) -> RankedList {
    let trace = compress_loops(trace);
    let mut scores: BTreeMap<DeveloperId, f64> = all_devs.iter().map(|d| (d.clone(), 0.0)).collect();
    for frame in trace.frames.iter().take(HEURISTIC_TOP_FRAMES) {
        let (Some(line), Some(ann)) = (frame.error_line, store.for_frame(frame)) else {
            continue;
        };
        if let Some(edit) = ann.author_of(line) {
            *scores.entry(edit.author.clone()).or_default() += decay(elapsed_days(trace.timestamp, edit.timestamp));
        }
    }
    RankedList::from_scores(scores)
}

/// Sparse, L2-normalized `(token id, weight)` pairs sorted by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TfidfVector {
    pub entries: Vec<(usize, f64)>,
}

impl TfidfVector {
    pub fn norm(&self) -> f64 {
        self.entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVectorizer {
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
}

impl TfidfVectorizer {
    pub fn fit(docs: &[TokenSequence]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::validation("corpus", "cannot fit TF-IDF on an empty corpus"));
        }
        let mut df: BTreeMap<&str, usize> = BTreeMap::new();
        for doc in docs {
            for t in doc.tokens.iter().map(String::as_str).collect::<BTreeSet<_>>() {
                *df.entry(t).or_default() += 1;
            }
        }
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (t, d)) in df.into_iter().enumerate() {
            vocabulary.insert(t.to_owned(), i);
            idf.push(IdfTable::formula(docs.len(), d));
        }
        Ok(Self { vocabulary, idf })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    /// Unknown tokens are dropped; an all-unknown document maps to the zero
    /// vector.
    pub fn transform(&self, doc: &TokenSequence) -> TfidfVector {
        let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
        for t in &doc.tokens {
            if let Some(&id) = self.vocabulary.get(t) {
                *counts.entry(id).or_default() += 1.0;
            }
        }
        let mut entries: Vec<(usize, f64)> = counts
            .into_iter()
            .map(|(id, tf)| (id, tf * self.idf[id]))
            .filter(|(_, w)| *w != 0.0)
            .collect();
        let norm = entries.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
        if norm > 0.0 {
            entries.iter_mut().for_each(|(_, w)| *w /= norm);
        }
        TfidfVector { entries }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub epochs: usize,
    /// L2 regularization coefficient.
    pub alpha: f64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            alpha: 1e-5,
            learning_rate: 0.5,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression over TF-IDF vectors. Only developers seen
/// as labels during training can be predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub classes: Vec<DeveloperId>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub alpha: f64,
}

impl LinearModel {
    fn logits(&self, x: &TfidfVector) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| b + x.entries.iter().map(|&(i, v)| w[i] * v).sum::<f64>())
            .collect()
    }

    pub fn probabilities(&self, x: &TfidfVector) -> Vec<f64> {
        let z = self.logits(x);
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        p
    }

    /// Regularized negative log-likelihood of one example.
    pub fn loss(&self, x: &TfidfVector, class: usize) -> f64 {
        let reg: f64 = self.weights.iter().flatten().map(|w| w * w).sum::<f64>() * self.alpha / 2.0;
        -self.probabilities(x)[class].ln() + reg
    }

    /// Dense gradients of [`loss`](Self::loss) with respect to weights and biases.
    pub fn gradient(&self, x: &TfidfVector, class: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
        let p = self.probabilities(x);
        let mut gw: Vec<Vec<f64>> = self
            .weights
            .iter()
            .map(|w| w.iter().map(|v| self.alpha * v).collect())
            .collect();
        let mut gb = vec![0.0; self.classes.len()];
        for c in 0..self.classes.len() {
            let err = p[c] - if c == class { 1.0 } else { 0.0 };
            gb[c] = err;
            for &(i, v) in &x.entries {
                gw[c][i] += err * v;
            }
        }
        (gw, gb)
    }

    pub fn class_index(&self, dev: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == dev)
    }

    pub fn predict(&self, x: &TfidfVector) -> &str {
        let p = self.probabilities(x);
        let best = (0..p.len())
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .unwrap();
        &self.classes[best]
    }
}

/// Trains with plain SGD over shuffled examples.
pub fn logreg_train(
    vectors: &[TfidfVector],
    labels: &[DeveloperId],
    dim: usize,
    config: &LogRegConfig,
) -> Result<LinearModel> {
    if vectors.len() != labels.len() {
        return Err(Error::shape(vectors.len(), labels.len()));
    }
    let classes: Vec<DeveloperId> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(Error::validation(
            "labels",
            format!("need at least 2 classes, got {}", classes.len()),
        ));
    }
    let mut model = LinearModel {
        weights: vec![vec![0.0; dim]; classes.len()],
        biases: vec![0.0; classes.len()],
        classes,
        alpha: config.alpha,
    };
    let targets: Vec<usize> = labels.iter().map(|l| model.class_index(l).unwrap()).collect();
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let lr = config.learning_rate;
    let shrink = 1.0 - lr * config.alpha;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let x = &vectors[i];
            let p = model.probabilities(x);
            for (c, pc) in p.iter().enumerate() {
                let err = pc - if c == targets[i] { 1.0 } else { 0.0 };
                let w = &mut model.weights[c];
                w.iter_mut().for_each(|v| *v *= shrink);
                for &(j, v) in &x.entries {
                    w[j] -= lr * err * v;
                }
                model.biases[c] -= lr * err;
            }
        }
    }
    Ok(model)
}

/// Seen classes by probability, then every other developer of `all_devs`
/// below them in id order.
pub fn logreg_rank(x: &TfidfVector, model: &LinearModel, all_devs: &BTreeSet<DeveloperId>) -> RankedList {
    let p = model.probabilities(x);
    let scored: BTreeMap<DeveloperId, f64> = model.classes.iter().cloned().zip(p).collect();
    let mut everyone = all_devs.clone();
    everyone.extend(model.classes.iter().cloned());
    RankedList::with_sentinel(scored, &everyone)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{Annotation, AnnotationLine};
    use crate::trace::StackFrame;

    const DAY: i64 = 86_400_000;

    fn doc(tokens: &[&str]) -> TokenSequence {
        TokenSequence {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            source_frame_indices: (0..tokens.len()).collect(),
        }
    }

    fn devs(ids: &[&str]) -> BTreeSet<DeveloperId> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    /// One frame per (author, edit time) pair, each in its own file.
    fn heuristic_case(edits: &[(&str, i64)], report_time: i64) -> (StackTrace, AnnotationStore) {
        let mut store = AnnotationStore::new();
        let mut frames = Vec::new();
        for (i, (author, t)) in edits.iter().enumerate() {
            let file = format!("F{i}");
            let lines = vec![AnnotationLine {
                author: author.to_string(),
                timestamp: *t,
            }];
            store.insert(Annotation::new(file.clone(), "c", lines).unwrap());
            frames.push(StackFrame {
                file: Some(file),
                commit: Some("c".into()),
                error_line: Some(1),
                method: Some(format!("m{i}")),
                ..Default::default()
            });
        }
        let trace = StackTrace {
            report_id: "r".into(),
            timestamp: report_time,
            fixer: None,
            frames,
        };
        (trace, store)
    }

    #[test]
    fn heuristic_counts_error_lines() {
        let (t, s) = heuristic_case(&[("A", 0), ("A", 0), ("B", 0), ("A", 0)], 0);
        let l = heuristic_rank(&t, &s, &devs(&["A", "B", "C"]));
        assert_eq!(l.developers().collect::<Vec<_>>(), ["A", "B", "C"]);
        assert_eq!(l.entries[0].score, 3.0);
    }

    #[test]
    fn heuristic_prefers_recent_edit() {
        let now = 1000 * DAY;
        let old = now - 300 * DAY;
        let (t, s) = heuristic_case(&[("B", old), ("A", now), ("B", old)], now);
        let l = heuristic_rank(&t, &s, &devs(&["A", "B"]));
        assert_eq!(l.rank_of("A"), Some(1));
        assert!((l.entries[1].score - 2.0 * (-10f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn heuristic_ignores_frames_past_top_twenty() {
        let mut edits = vec![("A", 0); 20];
        edits.push(("B", 0));
        let (t, s) = heuristic_case(&edits, 0);
        let l = heuristic_rank(&t, &s, &devs(&["A", "B"]));
        assert_eq!(l.entries[1].developer, "B");
        assert_eq!(l.entries[1].score, 0.0);
    }

    #[test]
    fn heuristic_ignores_enumeration_order() {
        let (t, s) = heuristic_case(&[("A", 0), ("B", 0)], 0);
        let a = heuristic_rank(&t, &s, &devs(&["B", "A", "C"]));
        let b = heuristic_rank(&t, &s, &devs(&["C", "A", "B"]));
        assert_eq!(a, b);
    }

    #[test]
    fn tfidf_hand_corpus() {
        // df(a) = 1, df(b) = 2 over N = 4 documents.
        let docs = [doc(&["a", "a", "b"]), doc(&["b"]), doc(&["c"]), doc(&["c"])];
        let v = TfidfVectorizer::fit(&docs).unwrap();
        let ia = (4f64 / 2.0).ln();
        let ib = (4f64 / 3.0).ln();
        let x = v.transform(&docs[0]);
        let (wa, wb) = (2.0 * ia, ib);
        let n = (wa * wa + wb * wb).sqrt();
        assert_eq!(x.entries.len(), 2);
        assert!((x.entries[0].1 - wa / n).abs() < 1e-12);
        assert!((x.entries[1].1 - wb / n).abs() < 1e-12);
        assert!((x.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfidf_single_token_and_unknown() {
        let docs = [doc(&["a"]), doc(&["b"]), doc(&["c"])];
        let v = TfidfVectorizer::fit(&docs).unwrap();
        let x = v.transform(&doc(&["a", "a", "a"]));
        assert_eq!(x.entries.len(), 1);
        assert!((x.entries[0].1 - 1.0).abs() < 1e-12);
        assert!(v.transform(&doc(&["zzz"])).entries.is_empty());
        assert!(v.transform(&doc(&[])).entries.is_empty());
    }

    #[test]
    fn logreg_separates_two_classes() {
        let docs: Vec<_> = (0..10)
            .map(|i| if i % 2 == 0 { doc(&["x", "p"]) } else { doc(&["y", "q"]) })
            .collect();
        let labels: Vec<DeveloperId> = (0..10)
            .map(|i| if i % 2 == 0 { "A".into() } else { "B".into() })
            .collect();
        let v = TfidfVectorizer::fit(&docs).unwrap();
        let xs: Vec<_> = docs.iter().map(|d| v.transform(d)).collect();
        let m = logreg_train(&xs, &labels, v.dim(), &LogRegConfig::default()).unwrap();
        let correct = xs
            .iter()
            .zip(&labels)
            .filter(|(x, l)| m.predict(x) == l.as_str())
            .count();
        assert_eq!(correct, 10);
        for x in &xs {
            assert!((m.probabilities(x).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn logreg_rejects_single_class() {
        let xs = vec![TfidfVector::default(); 2];
        let labels = vec!["A".to_string(), "A".to_string()];
        assert!(logreg_train(&xs, &labels, 1, &LogRegConfig::default()).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn logreg_gradient_matches_finite_differences() {
        let mut m = LinearModel {
            classes: vec!["A".into(), "B".into(), "C".into()],
            weights: vec![vec![0.3, -0.2, 0.5], vec![-0.1, 0.4, 0.0], vec![0.2, 0.2, -0.6]],
            biases: vec![0.1, -0.3, 0.05],
            alpha: 1e-2,
        };
        let x = TfidfVector {
            entries: vec![(0, 0.6), (2, 0.8)],
        };
        let (gw, gb) = m.gradient(&x, 1);
        let eps = 1e-6;
        for c in 0..3 {
            for j in 0..3 {
                let orig = m.weights[c][j];
                m.weights[c][j] = orig + eps;
                let hi = m.loss(&x, 1);
                m.weights[c][j] = orig - eps;
                let lo = m.loss(&x, 1);
                m.weights[c][j] = orig;
                let num = (hi - lo) / (2.0 * eps);
                assert!((num - gw[c][j]).abs() <= 1e-4 * num.abs().max(gw[c][j].abs()).max(1e-6));
            }
            let orig = m.biases[c];
            m.biases[c] = orig + eps;
            let hi = m.loss(&x, 1);
            m.biases[c] = orig - eps;
            let lo = m.loss(&x, 1);
            m.biases[c] = orig;
            let num = (hi - lo) / (2.0 * eps);
            assert!((num - gb[c]).abs() <= 1e-4 * num.abs().max(1e-6));
        }
    }

    #[test]
    fn unseen_developer_ranked_after_seen_classes() {
        let m = LinearModel {
            classes: vec!["A".into(), "B".into()],
            weights: vec![vec![1.0], vec![-1.0]],
            biases: vec![0.0, 0.0],
            alpha: 0.0,
        };
        let x = TfidfVector {
            entries: vec![(0, 1.0)],
        };
        let l = logreg_rank(&x, &m, &devs(&["A", "B", "N"]));
        assert_eq!(l.developers().collect::<Vec<_>>(), ["A", "B", "N"]);
        assert!(l.entries[2].score < l.entries[1].score);
    }
}

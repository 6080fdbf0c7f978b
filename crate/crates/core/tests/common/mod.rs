//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod checks;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use triage_core::datagen::{generate, GeneratorConfig};
use triage_core::features::compute_idf;
use triage_core::nn::{Dropout, Gradients, Tape};
use triage_core::ranker::{PreparedQuery, Vocabulary};
use triage_core::{
    compress_loops, tokenize, Annotation, AnnotationLine, AnnotationStore, ModelConfig, RankingModel, StackFrame,
    StackTrace,
};

/// Every tandem repeat `(start, period, count)` with count >= 2 and maximal
/// count, by direct slice comparison.
pub fn tandem_repeats<T: PartialEq>(xs: &[T]) -> Vec<(usize, usize, usize)> {
    let n = xs.len();
    let mut out = Vec::new();
    for i in 0..n {
        for p in 1..=n {
            let mut k = 1;
            while i + (k + 1) * p <= n && xs[i..i + p] == xs[i + k * p..i + (k + 1) * p] {
                k += 1;
            }
            if k >= 2 {
                out.push((i, p, k));
            }
        }
    }
    out
}

/// Collapses the lexicographically first `(start, period)` repeat until no
/// tandem repeat is left.
pub fn oracle_compress<T: PartialEq + Clone>(xs: &[T]) -> Vec<T> {
    let mut cur = xs.to_vec();
    loop {
        let Some(&(i, p, k)) = tandem_repeats(&cur).iter().min_by_key(|&&(i, p, _)| (i, p)) else {
            return cur;
        };
        let mut next = cur[..i + p].to_vec();
        next.extend_from_slice(&cur[i + k * p..]);
        cur = next;
    }
}

pub fn is_subsequence<T: PartialEq>(sub: &[T], of: &[T]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|x| it.any(|y| y == x))
}

/// Frame indices whose annotation (found by linear search) has a line by `dev`.
pub fn oracle_dev_stack(dev: &str, trace: &StackTrace, annotations: &[Annotation]) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, frame) in trace.frames.iter().enumerate() {
        let (Some(file), Some(commit)) = (&frame.file, &frame.commit) else {
            continue;
        };
        let mut authored = false;
        for a in annotations.iter().rev() {
            if &a.file == file && &a.commit == commit {
                for line in 1..=a.lines.len() {
                    if a.lines[line - 1].author == dev {
                        authored = true;
                    }
                }
                break;
            }
        }
        if authored {
            out.push(i);
        }
    }
    out
}

pub fn frame(file: Option<&str>, commit: Option<&str>, line: Option<u32>) -> StackFrame {
    StackFrame {
        method: file.map(|f| format!("{f}.run")),
        file: file.map(str::to_owned),
        subsystem: Some("sys".into()),
        commit: commit.map(str::to_owned),
        error_line: line,
    }
}

pub fn trace(id: &str, timestamp: i64, fixer: Option<&str>, frames: Vec<StackFrame>) -> StackTrace {
    StackTrace {
        report_id: id.into(),
        timestamp,
        fixer: fixer.map(str::to_owned),
        frames,
    }
}

pub fn store_of(annotations: &[Annotation]) -> AnnotationStore {
    let mut s = AnnotationStore::new();
    for a in annotations {
        s.insert(a.clone());
    }
    s
}

pub fn random_annotation(
    rng: &mut ChaCha8Rng,
    file: &str,
    commit: &str,
    devs: &[String],
    max_lines: usize,
    now: i64,
) -> Annotation {
    let len = rng.gen_range(1..=max_lines);
    let lines = (0..len)
        .map(|_| AnnotationLine {
            author: devs.choose(rng).unwrap().clone(),
            timestamp: rng.gen_range(0..=now),
        })
        .collect();
    Annotation::new(file, commit, lines).unwrap()
}

/// Small training instances drawn from tiny generated corpora: model,
/// prepared query and target index.
pub fn grad_instances(config: &ModelConfig, count: usize) -> Vec<(RankingModel, PreparedQuery, usize)> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count {
        seed += 1;
        let corpus = generate(&GeneratorConfig {
            n_developers: 3,
            n_files: 6,
            n_reports: 4,
            mean_trace_len: 6.0,
            noise: 0.3,
            seed,
            ..Default::default()
        })
        .unwrap();
        let docs: Vec<_> = corpus
            .reports
            .iter()
            .map(|r| tokenize(&compress_loops(r), config.token_mode))
            .collect();
        let mut model = RankingModel::new(
            ModelConfig { seed, ..config.clone() },
            Vocabulary::build(&docs),
            compute_idf(&docs).unwrap(),
        );
        // Default initialization leaves attention almost flat, whose tiny
        // gradients would sit at the finite-difference noise floor. Raw
        // annotation inputs reach the hundreds, so their input weights are
        // drawn smaller to keep the gates out of saturation.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_owned()).collect();
        for (name, t) in names.iter().zip(model.params.tensors_mut()) {
            let scale = if name.starts_with("annotation.lstm") && name.ends_with("w_ih") {
                0.05
            } else {
                1.0
            };
            t.data.iter_mut().for_each(|x| *x = scale * rng.gen_range(-1.0..1.0));
        }
        let report = &corpus.reports[seed as usize % corpus.reports.len()];
        let query = model.prepare(report, &corpus.annotations, None);
        let Some(target) = query.position(report.fixer.as_deref().unwrap()) else {
            continue;
        };
        if query.candidates.len() < 2 || query.bug_token_ids.is_empty() {
            continue;
        }
        // A scorer whose hidden units are all inactive passes no gradient.
        let grads = analytic_gradients(&model, &query, target);
        let hidden = model.params.id("score.hidden.b").expect("scorer bias");
        if grads.get(hidden).norm() > 1e-8 {
            out.push((model, query, target));
        }
    }
    out
}

pub fn loss(model: &RankingModel, query: &PreparedQuery, target: usize) -> f64 {
    let mut tape = Tape::new(&model.params);
    let scores = model.score_nodes(&mut tape, query, &mut Dropout::disabled());
    let l = model.loss_node(&mut tape, &scores, target).unwrap();
    tape.scalar(l)
}

pub fn analytic_gradients(model: &RankingModel, query: &PreparedQuery, target: usize) -> Gradients {
    let mut grads = Gradients::zeros_like(&model.params);
    let mut tape = Tape::new(&model.params);
    let scores = model.score_nodes(&mut tape, query, &mut Dropout::disabled());
    let l = model.loss_node(&mut tape, &scores, target).unwrap();
    tape.backward(l, &mut grads);
    grads
}

#[derive(Debug, Clone)]
pub struct GroupCheck {
    pub name: String,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)`.
    pub relative_error: f64,
    pub absolute_error: f64,
    pub analytic_norm: f64,
    /// Both gradients lie below the finite-difference noise floor (for
    /// example the output bias, which a pairwise loss cannot see); such a
    /// group is judged by absolute error against the floor.
    pub below_noise: bool,
    pub noise_floor: f64,
}

impl GroupCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        if self.below_noise {
            self.absolute_error < self.noise_floor
        } else {
            self.relative_error < tolerance
        }
    }
}

/// Roundoff of a central difference: about `1e-16 * |loss| / eps` per entry.
pub fn noise_floor(loss: f64, eps: f64, entries: usize) -> f64 {
    100.0 * f64::EPSILON * loss.abs().max(1.0) / eps * (entries as f64).sqrt()
}

/// Central-difference check of every parameter tensor; one entry per tensor.
pub fn check_gradients(model: &mut RankingModel, query: &PreparedQuery, target: usize, eps: f64) -> Vec<GroupCheck> {
    let grads = analytic_gradients(model, query, target);
    let base = loss(model, query, target);
    let ids: Vec<_> = model.params.ids().collect();
    ids.into_iter()
        .map(|id| {
            let n = model.params.get(id).len();
            let mut numeric = vec![0.0; n];
            for (j, slot) in numeric.iter_mut().enumerate() {
                let orig = model.params.get(id).data[j];
                model.params.get_mut(id).data[j] = orig + eps;
                let up = loss(model, query, target);
                model.params.get_mut(id).data[j] = orig - eps;
                let down = loss(model, query, target);
                model.params.get_mut(id).data[j] = orig;
                *slot = (up - down) / (2.0 * eps);
            }
            let analytic = &grads.get(id).data;
            let diff = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
            let floor = noise_floor(base, eps, n);
            let below_noise = na.max(nn) < floor;
            GroupCheck {
                name: model.params.name(id).to_owned(),
                relative_error: if na.max(nn) > 0.0 { diff / na.max(nn) } else { 0.0 },
                absolute_error: diff,
                analytic_norm: na,
                below_noise,
                noise_floor: floor,
            }
        })
        .collect()
}

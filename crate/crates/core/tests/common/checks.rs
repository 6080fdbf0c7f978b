//! Checks shared by the oracle tests and the acceptance target. Each panics
//! with a description of the first failing case.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triage_core::annotations::{build_developer_stack, candidate_developers, DeveloperStack};
use triage_core::features::{compute_idf, frame_features_for_candidates, stack_features_for_candidates};
use triage_core::trace::compress_sequence;
use triage_core::{tokenize, Annotation, DeveloperId, TokenMode};

use super::*;

pub fn all_sequences(alphabet: u8, max_len: usize) -> impl Iterator<Item = Vec<u8>> {
    (0..=max_len).flat_map(move |len| {
        let total = (alphabet as usize).pow(len as u32);
        (0..total).map(move |mut code| {
            (0..len)
                .map(|_| {
                    let s = (code % alphabet as usize) as u8;
                    code /= alphabet as usize;
                    s
                })
                .collect()
        })
    })
}

/// Oracle equality, no repeat left, subsequence and idempotence on every
/// ternary sequence up to length 10. Returns the number of sequences.
pub fn compression_exhaustive() -> usize {
    let mut checked = 0;
    for seq in all_sequences(3, 10) {
        let got = compress_sequence(seq.clone());
        assert_eq!(got, oracle_compress(&seq), "input {seq:?}");
        assert!(tandem_repeats(&got).is_empty(), "repeat left in {got:?}");
        assert!(is_subsequence(&got, &seq));
        assert_eq!(compress_sequence(got.clone()), got, "not idempotent on {seq:?}");
        checked += 1;
    }
    assert_eq!(checked, (0..=10).map(|n| 3usize.pow(n)).sum::<usize>());
    checked
}

pub fn devs(n: usize) -> Vec<DeveloperId> {
    (0..n).map(|i| format!("d{i}")).collect()
}

pub fn check_stacks(t: &triage_core::StackTrace, annotations: &[Annotation], devs: &[DeveloperId]) {
    let store = store_of(annotations);
    let annotated: BTreeSet<usize> = t
        .frames
        .iter()
        .enumerate()
        .filter(|(_, f)| store.for_frame(f).is_some())
        .map(|(i, _)| i)
        .collect();
    let mut nonempty = BTreeSet::new();
    for d in devs {
        let stack = build_developer_stack(d, t, &store);
        let got: Vec<usize> = stack.indices().collect();
        assert_eq!(got, oracle_dev_stack(d, t, annotations), "dev {d} on {t:?}");
        for (i, f) in &stack.frames {
            assert_eq!(&t.frames[*i], f);
        }
        assert!(got.iter().all(|i| annotated.contains(i)));
        if !got.is_empty() {
            nonempty.insert(d.clone());
        }
    }
    assert_eq!(candidate_developers(t, &store), nonempty);
}

pub fn developer_stack_random() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..1000 {
        let devs = devs(rng.gen_range(1..=5));
        let files: Vec<String> = (0..4).map(|i| format!("F{i}.kt")).collect();
        let commits = ["c0", "c1"];
        let mut annotations = Vec::new();
        for f in &files {
            for c in commits {
                if rng.gen_bool(0.6) {
                    annotations.push(random_annotation(&mut rng, f, c, &devs, 20, 1_000));
                }
            }
        }
        // Occasional duplicate key: the later record wins.
        if !annotations.is_empty() && rng.gen_bool(0.2) {
            let a = annotations.choose(&mut rng).unwrap().clone();
            annotations.push(random_annotation(&mut rng, &a.file, &a.commit, &devs, 20, 1_000));
        }
        let frames = (0..rng.gen_range(0..=8))
            .map(|_| {
                let f = files.choose(&mut rng).unwrap();
                let c = commits.choose(&mut rng).unwrap();
                frame(
                    (!rng.gen_bool(0.1)).then_some(f.as_str()),
                    (!rng.gen_bool(0.1)).then_some(*c),
                    Some(rng.gen_range(1..25)),
                )
            })
            .collect();
        let mut all = devs.clone();
        all.push("outsider".into());
        check_stacks(&trace(&format!("r{case}"), 2_000, None, frames), &annotations, &all);
    }
}

/// All traces up to length 6 over three annotated files, one unannotated
/// file and one frame without a commit.
pub fn developer_stack_exhaustive() {
    let devs = devs(3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // Author sets per annotated file, covering singletons, pairs and the full set.
    let configs: Vec<[Vec<usize>; 3]> = vec![
        [vec![0], vec![1], vec![2]],
        [vec![0, 1], vec![1, 2], vec![0, 2]],
        [vec![0, 1, 2], vec![0], vec![0]],
        [vec![2], vec![2], vec![0, 1, 2]],
    ];
    for config in &configs {
        let annotations: Vec<Annotation> = config
            .iter()
            .enumerate()
            .map(|(i, authors)| {
                let lines = (0..rng.gen_range(1..=6))
                    .map(|j| triage_core::AnnotationLine {
                        author: devs[authors[j % authors.len()]].clone(),
                        timestamp: 10,
                    })
                    .collect();
                Annotation::new(format!("F{i}.kt"), "c", lines).unwrap()
            })
            .collect();
        // Symbols 0..3 are annotated files, 3 has no annotation, 4 lacks a commit.
        for seq in all_sequences(5, 6) {
            let frames = seq
                .iter()
                .map(|&s| match s {
                    0..=2 => frame(Some(&format!("F{s}.kt")), Some("c"), Some(1)),
                    3 => frame(Some("Missing.kt"), Some("c"), Some(1)),
                    _ => frame(Some("F0.kt"), None, Some(1)),
                })
                .collect();
            check_stacks(&trace("r", 100, None, frames), &annotations, &devs);
        }
    }
}

pub const MAX_NORMALIZED_FRAME: [usize; 4] = [5, 7, 9, 11];
pub const MAX_NORMALIZED_STACK: [usize; 4] = [3, 5, 7, 11];

pub fn frame_features_fuzz(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let day = 86_400_000i64;
    for _ in 0..cases {
        let all = devs(rng.gen_range(1..=6));
        let now = rng.gen_range(0..1000 * day);
        let ann = random_annotation(&mut rng, "A.kt", "c", &all, 30, 1200 * day);
        let line = rng.gen_bool(0.8).then(|| rng.gen_range(1..=40));
        let mut candidates: BTreeSet<DeveloperId> = ann.authors().clone();
        if rng.gen_bool(0.3) {
            candidates.insert("bystander".into());
        }
        let feats = frame_features_for_candidates(&ann, line, now, &candidates);
        assert_eq!(feats.len(), ann.authors().len());
        for f in feats.values() {
            assert!(f.values.iter().all(|v| v.is_finite()), "{f:?}");
            assert!(f.values[3] == 0.0 || f.values[3] == 1.0);
            if line.is_none() {
                assert_eq!(f.values[3], 0.0);
            }
            for i in [4, 5, 7, 8, 9, 11, 12] {
                assert!((0.0..=1.0).contains(&f.values[i]), "F{} = {}", i + 1, f.values[i]);
            }
        }
        for i in MAX_NORMALIZED_FRAME {
            let max = feats.values().map(|f| f.values[i]).fold(f64::MIN, f64::max);
            assert_eq!(max, 1.0, "F{}", i + 1);
        }
        let min_f3 = feats.values().map(|f| f.values[2]).fold(f64::MAX, f64::min);
        assert_eq!(min_f3, 1.0);

        // Relabelling developers permutes the rows and nothing else.
        let rename = |d: &str| format!("x-{}", d.chars().rev().collect::<String>());
        let lines = ann
            .lines
            .iter()
            .map(|l| triage_core::AnnotationLine {
                author: rename(&l.author),
                timestamp: l.timestamp,
            })
            .collect();
        let renamed = Annotation::new("A.kt", "c", lines).unwrap();
        let cands: BTreeSet<DeveloperId> = candidates.iter().map(|d| rename(d)).collect();
        let again = frame_features_for_candidates(&renamed, line, now, &cands);
        for (d, f) in &feats {
            assert_eq!(again[&rename(d)], *f);
        }
    }
}

pub fn stack_features_fuzz(cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..cases {
        let all = devs(rng.gen_range(1..=5));
        let files: Vec<String> = (0..rng.gen_range(1..=5)).map(|i| format!("F{i}.kt")).collect();
        let mut annotations = Vec::new();
        for f in &files {
            if rng.gen_bool(0.8) {
                annotations.push(random_annotation(&mut rng, f, "c", &all, 15, 1_000_000));
            }
        }
        let store = store_of(&annotations);
        let frames = (0..rng.gen_range(1..=12))
            .map(|_| {
                let f = files.choose(&mut rng).unwrap();
                frame(Some(f), Some("c"), rng.gen_bool(0.9).then(|| rng.gen_range(1..=20)))
            })
            .collect();
        let t = trace("r", 500_000, None, frames);
        let docs = vec![tokenize(&t, TokenMode::File)];
        let idf = compute_idf(&docs).unwrap();
        let stacks: BTreeMap<DeveloperId, DeveloperStack> = all
            .iter()
            .map(|d| (d.clone(), build_developer_stack(d, &t, &store)))
            .collect();
        let feats = stack_features_for_candidates(&t, &stacks, &store, &idf);
        assert_eq!(feats.len(), stacks.values().filter(|s| !s.is_empty()).count());
        if feats.is_empty() {
            continue;
        }
        for f in feats.values() {
            assert!(f.values.iter().all(|v| v.is_finite()), "{f:?}");
            // S1 and S3 count positions in the full trace, so they are unbounded.
            for i in [1, 3, 4, 5, 6, 7, 8, 9, 10, 11] {
                assert!((0.0..=1.0).contains(&f.values[i]), "S{} = {}", i + 1, f.values[i]);
            }
        }
        for i in MAX_NORMALIZED_STACK {
            let max = feats.values().map(|f| f.values[i]).fold(f64::MIN, f64::max);
            assert_eq!(max, 1.0, "S{}", i + 1);
        }
    }
}

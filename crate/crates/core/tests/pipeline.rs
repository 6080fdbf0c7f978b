mod common;

use std::collections::BTreeSet;

use triage_core::datagen::{generate, Corpus, GeneratorConfig};
use triage_core::pipeline::{evaluate, evaluate_against, labelled, CompareOptions, Dataset, LogRegRanker, Ranker};
use triage_core::{
    build_developer_stack, train, Checkpoint, EncoderKind, FeatureMode, ModelConfig, RankingOutput, TokenMode,
};

fn corpus(seed: u64) -> Corpus {
    generate(&GeneratorConfig {
        n_developers: 6,
        n_files: 40,
        n_reports: 80,
        mean_trace_len: 15.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn dataset(c: Corpus) -> Dataset {
    Dataset {
        reports: c.reports,
        annotations: c.annotations,
    }
}

fn small(encoder: EncoderKind, feature_mode: FeatureMode) -> ModelConfig {
    ModelConfig {
        feature_mode,
        use_stack_features: true,
        embedding_dim: 6,
        hidden_size: 6,
        filters: 6,
        mlp_hidden: 8,
        annotation_hidden: 4,
        epochs: 3,
        seed: 3,
        ..ModelConfig::public(encoder)
    }
}

#[test]
fn generated_traces_average_fifty_frames() {
    let c = generate(&GeneratorConfig::default()).unwrap();
    let mean = c.reports.iter().map(|r| r.frames.len()).sum::<usize>() as f64 / c.reports.len() as f64;
    assert!((45.0..=55.0).contains(&mean), "mean length {mean}");
}

#[test]
fn noiseless_corpus_heuristic_is_near_bayes_optimal() {
    let c = generate(&GeneratorConfig {
        noise: 0.0,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    let d = dataset(c);
    let reports = labelled(&d.reports);
    let lists = Ranker::Heuristic.rank_all(&reports, &d.annotations, &d.developers());
    let m = evaluate(&lists, &reports).unwrap();
    assert!(m.acc_at_1 > 0.9, "{m:?}");
}

#[test]
fn planted_owner_heads_their_developer_stack() {
    let c = corpus(9);
    for (r, m) in c.reports.iter().zip(&c.manifest.reports) {
        if let Some(owner) = &m.planted_owner {
            let stack = build_developer_stack(owner, r, &c.annotations);
            assert!(!stack.is_empty(), "{}", r.report_id);
        }
    }
}

#[test]
fn training_is_deterministic_and_checkpoints_round_trip() {
    let d = dataset(corpus(1));
    let split = d.split().unwrap();
    for encoder in [EncoderKind::Rnn, EncoderKind::Cnn] {
        let config = small(encoder, FeatureMode::ManualFrame);
        let (a, sa) = train(&split.train, &d.annotations, &config).unwrap();
        let (b, sb) = train(&split.train, &d.annotations, &config).unwrap();
        assert_eq!(sa, sb);
        let ja = Checkpoint::from_model(&a, Some(sa.clone())).to_json();
        let jb = Checkpoint::from_model(&b, Some(sb)).to_json();
        assert_eq!(ja, jb);

        let restored = Checkpoint::from_json(&ja).unwrap().into_model().unwrap();
        for ((na, ta), (nb, tb)) in a.params.iter().zip(restored.params.iter()) {
            assert_eq!(na, nb);
            let bits = |t: &triage_core::nn::Tensor| t.data.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb), "{na}");
        }
        assert_eq!(Checkpoint::from_model(&restored, Some(sa)).to_json(), ja);

        let devs = d.developers();
        for r in &split.test {
            assert_eq!(
                a.rank(r, &d.annotations, &devs),
                restored.rank(r, &d.annotations, &devs)
            );
        }
    }
}

#[test]
fn different_seeds_give_different_models() {
    let d = dataset(corpus(1));
    let split = d.split().unwrap();
    let config = small(EncoderKind::Rnn, FeatureMode::None);
    let (a, _) = train(&split.train, &d.annotations, &config).unwrap();
    let (b, _) = train(&split.train, &d.annotations, &ModelConfig { seed: 4, ..config }).unwrap();
    assert_ne!(
        Checkpoint::from_model(&a, None).to_json(),
        Checkpoint::from_model(&b, None).to_json()
    );
}

#[test]
fn training_loss_decreases() {
    let d = dataset(corpus(2));
    let split = d.split().unwrap();
    for mode in [FeatureMode::None, FeatureMode::ManualFrame, FeatureMode::NeuralFrame] {
        let config = ModelConfig {
            epochs: 6,
            ..small(EncoderKind::Rnn, mode)
        };
        let (_, summary) = train(&split.train, &d.annotations, &config).unwrap();
        let losses = &summary.epoch_losses;
        assert_eq!(losses.len(), 6);
        assert!(losses.iter().all(|l| l.is_finite()));
        assert!(losses[5] < losses[0], "{mode:?}: {losses:?}");
    }
}

#[test]
fn rankings_cover_every_developer_once_in_score_order() {
    let d = dataset(corpus(3));
    let split = d.split().unwrap();
    let (model, _) = train(
        &split.train,
        &d.annotations,
        &small(EncoderKind::Cnn, FeatureMode::None),
    )
    .unwrap();
    let devs = d.developers();
    for r in &split.test {
        let list = model.rank(r, &d.annotations, &devs);
        let seen: BTreeSet<&str> = list.developers().collect();
        assert_eq!(seen.len(), list.len());
        assert_eq!(seen, devs.iter().map(String::as_str).collect());
        assert!(list.entries.windows(2).all(|w| w[0].score >= w[1].score));

        let candidates = model.candidates(&triage_core::compress_loops(r), &d.annotations);
        let lowest_scored = list
            .entries
            .iter()
            .filter(|e| candidates.contains(&e.developer))
            .map(|e| e.score)
            .fold(f64::INFINITY, f64::min);
        for e in list.entries.iter().filter(|e| !candidates.contains(&e.developer)) {
            assert!(e.score < lowest_scored);
        }

        let top = RankingOutput::new(&r.report_id, &list, Some(3));
        assert_eq!(top.ranking, list.entries[..3].to_vec());
    }
}

#[test]
fn classifier_cannot_name_unseen_fixers() {
    let c = generate(&GeneratorConfig {
        n_developers: 10,
        n_files: 60,
        n_reports: 200,
        mean_trace_len: 15.0,
        newcomer_fraction: 0.5,
        seed: 8,
        ..Default::default()
    })
    .unwrap();
    let d = dataset(c);
    let split = d.split().unwrap();
    let (model, summary) = train(
        &split.train,
        &d.annotations,
        &small(EncoderKind::Rnn, FeatureMode::None),
    )
    .unwrap();
    let logreg = LogRegRanker::fit(&split.train, TokenMode::File, &Default::default()).unwrap();
    let report = evaluate_against(
        "rnn",
        &model,
        Some(&summary),
        &[("tfidf-logreg".to_owned(), Ranker::LogReg(&logreg))],
        &d,
        &split,
        &CompareOptions {
            bootstrap: Some(50),
            ..Default::default()
        },
    )
    .unwrap();
    let unseen = report.unseen_fixers;
    assert!(unseen.queries > 0);
    assert_eq!(unseen.scored, unseen.queries);
    let base = &report.comparisons[0];
    assert_eq!(base.unseen_fixers.queries, unseen.queries);
    assert_eq!(base.unseen_fixers.hits_at_1, 0);
    assert_eq!(base.unseen_fixers.scored, 0);

    let json = serde_json::to_value(&report).unwrap();
    for key in [
        "model",
        "acc@1",
        "acc@5",
        "acc@10",
        "mrr",
        "n_queries",
        "unseen_fixers",
        "comparisons",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert!(json["comparisons"][0]["interval"]["lo"].is_number());
    assert!(json["comparisons"][0]["significant"].is_boolean());
}

#[test]
fn checkpoint_rejects_mismatched_parameters() {
    let d = dataset(corpus(5));
    let split = d.split().unwrap();
    let (model, _) = train(
        &split.train,
        &d.annotations,
        &small(EncoderKind::Cnn, FeatureMode::None),
    )
    .unwrap();
    let ckpt = Checkpoint::from_model(&model, None);

    let mut bad = ckpt.clone();
    bad.parameters[0].shape[0] += 1;
    assert!(bad.into_model().is_err());

    let mut bad = ckpt.clone();
    bad.parameters[0].name = "nonsense".into();
    assert!(bad.into_model().is_err());

    let mut bad = ckpt.clone();
    bad.format_version = 99;
    assert!(bad.into_model().is_err());

    let mut bad = ckpt;
    bad.parameters.pop();
    assert!(bad.into_model().is_err());
}

#[test]
fn corpus_files_round_trip_through_disk() {
    let c = corpus(6);
    let dir = tempfile::tempdir().unwrap();
    c.write_dir(dir.path()).unwrap();
    let d = Dataset::load(dir.path()).unwrap();
    assert_eq!(d.reports, c.reports);
    assert_eq!(d.annotations.to_json_lines(), c.annotations.to_json_lines());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["reports"].as_array().unwrap().len(), c.reports.len());
}

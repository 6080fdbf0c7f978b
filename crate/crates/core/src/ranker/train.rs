use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{PreparedQuery, RankingModel, Vocabulary};
use super::ModelConfig;
use crate::annotations::AnnotationStore;
use crate::error::{Error, Result};
use crate::features::compute_idf;
use crate::nn::{adam_step, Dropout, Gradients, OptimizerState, Tape};
use crate::trace::{compress_loops, tokenize, StackTrace};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub reports: usize,
    pub used: usize,
    /// Reports whose fixer has an empty developer stack.
    pub skipped_empty_target: usize,
    pub skipped_few_candidates: usize,
    pub skipped_no_fixer: usize,
    pub skipped_no_tokens: usize,
    /// Mean RankNet loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Fits a ranking model with per-query Adam steps on the RankNet loss.
pub fn train(
    reports: &[StackTrace],
    store: &AnnotationStore,
    config: &ModelConfig,
) -> Result<(RankingModel, TrainingSummary)> {
    if reports.is_empty() {
        return Err(Error::Training("training split is empty".into()));
    }
    let compressed: Vec<StackTrace> = reports.iter().map(compress_loops).collect();
    let docs: Vec<_> = compressed.iter().map(|t| tokenize(t, config.token_mode)).collect();
    let vocab = Vocabulary::build(&docs);
    let idf = compute_idf(&docs)?;
    let mut model = RankingModel::new(config.clone(), vocab, idf);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_7a1e);

    let mut summary = TrainingSummary {
        reports: reports.len(),
        ..Default::default()
    };
    let mut queries: Vec<(PreparedQuery, usize)> = Vec::new();
    for (trace, doc) in compressed.iter().zip(&docs) {
        let Some(fixer) = trace.fixer.as_deref() else {
            summary.skipped_no_fixer += 1;
            continue;
        };
        if doc.is_empty() {
            summary.skipped_no_tokens += 1;
            continue;
        }
        let candidates = model.candidates(trace, store);
        if !candidates.contains(fixer) {
            summary.skipped_empty_target += 1;
            continue;
        }
        if candidates.len() < 2 {
            summary.skipped_few_candidates += 1;
            continue;
        }
        let selected = model.cap_candidates(candidates, fixer, &mut rng);
        let query = model.prepare(trace, store, Some(&selected));
        match query.position(fixer) {
            Some(target) if query.candidates.len() >= 2 => queries.push((query, target)),
            Some(_) => summary.skipped_few_candidates += 1,
            None => summary.skipped_empty_target += 1,
        }
    }
    summary.used = queries.len();
    if queries.is_empty() {
        return Err(Error::Training(format!(
            "no usable reports out of {} ({} with empty fixer stack, {} with fewer than 2 candidates, {} without fixer, {} without tokens)",
            summary.reports,
            summary.skipped_empty_target,
            summary.skipped_few_candidates,
            summary.skipped_no_fixer,
            summary.skipped_no_tokens
        )));
    }

    let mut state = OptimizerState::new(&model.params, config.learning_rate, config.weight_decay, config.dropout);
    let mut grads = Gradients::zeros_like(&model.params);
    let mut order: Vec<usize> = (0..queries.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &qi in &order {
            let (query, target) = &queries[qi];
            grads.clear();
            let loss = {
                let mut tape = Tape::new(&model.params);
                let mut dropout = Dropout::new(state.dropout, &mut rng);
                let scores = model.score_nodes(&mut tape, query, &mut dropout);
                let loss = model
                    .loss_node(&mut tape, &scores, *target)
                    .expect("queries have at least two candidates");
                tape.backward(loss, &mut grads);
                tape.scalar(loss)
            };
            total += loss;
            adam_step(&mut model.params, &grads, &mut state);
        }
        let mean = total / queries.len() as f64;
        log::info!("epoch {}: mean loss {:.6}", epoch + 1, mean);
        summary.epoch_losses.push(mean);
    }
    Ok((model, summary))
}

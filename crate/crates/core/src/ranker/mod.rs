//! Developer ranking model: bug and developer encoders compared through a
//! bilinear similarity and a scoring MLP, trained with the RankNet pairwise
//! loss.

mod checkpoint;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use model::{FrameInput, PreparedDeveloper, PreparedQuery, RankingModel, Vocabulary, UNK};
pub use train::{train, TrainingSummary};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::trace::{DeveloperId, TokenMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Rnn,
    Cnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    #[default]
    None,
    ManualFrame,
    NeuralFrame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub feature_mode: FeatureMode,
    pub use_stack_features: bool,
    pub token_mode: TokenMode,
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub filters: usize,
    pub mlp_hidden: usize,
    pub annotation_hidden: usize,
    /// Most recent annotation lines fed to the annotation encoder.
    pub max_annotation_lines: usize,
    pub max_candidates: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub mask_future_edits: bool,
    pub seed: u64,
}

impl ModelConfig {
    /// Dimensions used for the smaller (public) dataset.
    pub fn public(encoder: EncoderKind) -> Self {
        Self {
            encoder,
            feature_mode: FeatureMode::None,
            use_stack_features: false,
            token_mode: TokenMode::File,
            embedding_dim: 50,
            hidden_size: 70,
            filters: 32,
            mlp_hidden: 64,
            annotation_hidden: 16,
            max_annotation_lines: 64,
            max_candidates: 64,
            epochs: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            dropout: 0.2,
            mask_future_edits: false,
            seed: 0,
        }
    }

    /// Dimensions used for the larger (private) dataset.
    pub fn private(encoder: EncoderKind) -> Self {
        Self {
            embedding_dim: 70,
            hidden_size: 100,
            filters: 64,
            ..Self::public(encoder)
        }
    }

    pub fn encoder_output_width(&self) -> usize {
        match self.encoder {
            EncoderKind::Rnn => 4 * self.hidden_size,
            EncoderKind::Cnn => self.filters,
        }
    }

    pub fn frame_feature_width(&self) -> usize {
        match self.feature_mode {
            FeatureMode::None => 0,
            FeatureMode::ManualFrame | FeatureMode::NeuralFrame => crate::features::FRAME_FEATURES,
        }
    }

    pub fn stack_feature_width(&self) -> usize {
        if self.use_stack_features {
            crate::features::STACK_FEATURES
        } else {
            0
        }
    }

    /// Width of `[x_q; x_sim; x_d; x_feat]`.
    pub fn join_width(&self) -> usize {
        2 * self.encoder_output_width() + 1 + self.stack_feature_width()
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::public(EncoderKind::Rnn)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub developer: DeveloperId,
    pub score: f64,
}

/// Developers by descending score; ties broken by ascending id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn from_scores(scores: impl IntoIterator<Item = (DeveloperId, f64)>) -> Self {
        let mut entries: Vec<RankedEntry> = scores
            .into_iter()
            .map(|(developer, score)| RankedEntry { developer, score })
            .collect();
        entries.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.developer.cmp(&b.developer)));
        Self { entries }
    }

    /// Scores the given developers and places everyone else in `all_devs`
    /// one below the lowest score (or at 0 when nobody was scored).
    pub fn with_sentinel(scored: BTreeMap<DeveloperId, f64>, all_devs: &BTreeSet<DeveloperId>) -> Self {
        let sentinel = scored.values().copied().fold(f64::INFINITY, f64::min);
        let sentinel = if sentinel.is_finite() { sentinel - 1.0 } else { 0.0 };
        let rest: Vec<(DeveloperId, f64)> = all_devs
            .iter()
            .filter(|d| !scored.contains_key(*d))
            .map(|d| (d.clone(), sentinel))
            .collect();
        Self::from_scores(scored.into_iter().chain(rest))
    }

    /// 1-based rank of a developer.
    pub fn rank_of(&self, dev: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.developer == dev).map(|p| p + 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn developers(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.developer.as_str())
    }
}

/// JSON shape of a ranking response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingOutput {
    pub report_id: String,
    pub ranking: Vec<RankedEntry>,
}

impl RankingOutput {
    /// `top` limits the listed entries only.
    pub fn new(report_id: &str, list: &RankedList, top: Option<usize>) -> Self {
        let n = top.unwrap_or(list.len()).min(list.len());
        Self {
            report_id: report_id.to_owned(),
            ranking: list.entries[..n].to_vec(),
        }
    }
}

/// Pairwise RankNet loss of the relevant developer against every other
/// candidate: `sum ln(1 + e^-(s_target - s_other))`.
pub fn ranknet_loss(target_score: f64, other_scores: &[f64]) -> f64 {
    other_scores
        .iter()
        .map(|&s| {
            let z = s - target_score;
            z.max(0.0) + (-z.abs()).exp().ln_1p()
        })
        .sum()
}

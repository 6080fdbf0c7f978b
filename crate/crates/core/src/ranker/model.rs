use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{EncoderKind, FeatureMode, ModelConfig, RankedList};
use crate::annotations::{
    build_developer_stack_with, candidate_developers_with, Annotation, AnnotationStore, AuthorshipPolicy,
    DeveloperStack,
};
use crate::error::{Error, Result};
use crate::features::{
    frame_features_for_candidates, stack_features_for_candidates, IdfTable, FRAME_FEATURES, STACK_FEATURES,
};
use crate::nn::{
    BiLstmAttention, Bilinear, ConvEncoder, Dropout, Init, Linear, NodeId, ParamId, ParameterSet, ScoreMlp,
    SequenceEncoder, Tape,
};
use crate::trace::{compress_loops, tokenize, DeveloperId, StackTrace, TokenSequence};

/// Row of the embedding table shared by all out-of-vocabulary tokens.
pub const UNK: usize = 0;
const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

impl Vocabulary {
    /// Sorted vocabulary of the given sequences, with UNK at row 0.
    pub fn build<'a>(docs: impl IntoIterator<Item = &'a TokenSequence>) -> Self {
        let set: BTreeSet<&str> = docs
            .into_iter()
            .flat_map(|d| d.tokens.iter().map(String::as_str))
            .collect();
        let tokens = std::iter::once(UNK_TOKEN)
            .chain(set)
            .map(str::to_owned)
            .collect::<Vec<_>>();
        Self::from(tokens)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Per-frame side input of the developer encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameInput {
    None,
    /// Log-scaled manual frame features.
    Manual([f64; FRAME_FEATURES]),
    /// (distance to error line, log elapsed milliseconds) per edited line,
    /// oldest first.
    Annotation(Vec<[f64; 2]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDeveloper {
    pub developer: DeveloperId,
    pub token_ids: Vec<usize>,
    pub frames: Vec<FrameInput>,
    /// Log-scaled stack features, when enabled.
    pub stack_features: Option<[f64; STACK_FEATURES]>,
}

/// Everything about a query that does not depend on trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedQuery {
    pub report_id: String,
    pub bug_token_ids: Vec<usize>,
    pub candidates: Vec<PreparedDeveloper>,
}

impl PreparedQuery {
    pub fn position(&self, dev: &str) -> Option<usize> {
        self.candidates.iter().position(|c| c.developer == dev)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub embedding: ParamId,
    pub bug: SequenceEncoder,
    pub dev: SequenceEncoder,
    pub annotation: Option<(BiLstmAttention, Linear)>,
    pub bilinear: Bilinear,
    pub mlp: ScoreMlp,
}

impl Layout {
    fn register(params: &mut ParameterSet, config: &ModelConfig, vocab_len: usize) -> Self {
        let d = config.embedding_dim;
        let embedding = params.add("embedding", &[vocab_len, d], Init::Normal(1.0));
        let dev_input = d + config.frame_feature_width();
        let make = |params: &mut ParameterSet, prefix: &str, input: usize| match config.encoder {
            EncoderKind::Rnn => {
                SequenceEncoder::Rnn(BiLstmAttention::register(params, prefix, input, config.hidden_size))
            }
            EncoderKind::Cnn => SequenceEncoder::Cnn(ConvEncoder::register(params, prefix, input, config.filters)),
        };
        let bug = make(params, "bug", d);
        let dev = make(params, "dev", dev_input);
        let annotation = (config.feature_mode == FeatureMode::NeuralFrame).then(|| {
            let enc = BiLstmAttention::register(params, "annotation", 2, config.annotation_hidden);
            let proj = Linear::register(params, "annotation.proj", enc.output_width(), FRAME_FEATURES);
            (enc, proj)
        });
        let width = config.encoder_output_width();
        let bilinear = Bilinear::register(params, "compare.m", width, width);
        let mlp = ScoreMlp::register(params, "score", config.join_width(), config.mlp_hidden);
        Self {
            embedding,
            bug,
            dev,
            annotation,
            bilinear,
            mlp,
        }
    }
}

fn log_scaled<const N: usize>(values: &[f64; N]) -> [f64; N] {
    values.map(f64::ln_1p)
}

/// Trainable ranking model together with its vocabulary and IDF table.
#[derive(Debug, Clone)]
pub struct RankingModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub idf: IdfTable,
    pub params: ParameterSet,
    pub(crate) layout: Layout,
}

impl RankingModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, idf: IdfTable) -> Self {
        let mut params = ParameterSet::new(config.seed);
        let layout = Layout::register(&mut params, &config, vocab.len());
        Self {
            config,
            vocab,
            idf,
            params,
            layout,
        }
    }

    fn policy(&self) -> AuthorshipPolicy {
        AuthorshipPolicy {
            mask_future_edits: self.config.mask_future_edits,
        }
    }

    pub fn token_ids(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    /// Candidate developers of a (compressed) trace.
    pub fn candidates(&self, trace: &StackTrace, store: &AnnotationStore) -> BTreeSet<DeveloperId> {
        candidate_developers_with(trace, store, self.policy())
    }

    /// Builds the non-trainable inputs for `developers` (all candidates when
    /// `None`). Developers with empty stacks are left out. The trace is
    /// loop-compressed here.
    pub fn prepare(
        &self,
        trace: &StackTrace,
        store: &AnnotationStore,
        developers: Option<&BTreeSet<DeveloperId>>,
    ) -> PreparedQuery {
        let trace = compress_loops(trace);
        let mode = self.config.token_mode;
        let bug_token_ids = self.token_ids(&tokenize(&trace, mode));
        let all_candidates = self.candidates(&trace, store);
        let selected: BTreeSet<DeveloperId> = match developers {
            Some(devs) => devs.intersection(&all_candidates).cloned().collect(),
            None => all_candidates.clone(),
        };

        let stacks: BTreeMap<DeveloperId, DeveloperStack> = all_candidates
            .iter()
            .map(|d| (d.clone(), build_developer_stack_with(d, &trace, store, self.policy())))
            .filter(|(_, s)| !s.is_empty())
            .collect();

        let stack_feats = if self.config.use_stack_features {
            stack_features_for_candidates(&trace, &stacks, store, &self.idf)
        } else {
            BTreeMap::new()
        };

        // Manual frame features per trace index, normalized over all candidates.
        let mut manual: BTreeMap<usize, BTreeMap<DeveloperId, [f64; FRAME_FEATURES]>> = BTreeMap::new();
        if self.config.feature_mode == FeatureMode::ManualFrame {
            for (i, frame) in trace.frames.iter().enumerate() {
                if let Some(ann) = store.for_frame(frame) {
                    let per_dev =
                        frame_features_for_candidates(ann, frame.error_line, trace.timestamp, &all_candidates);
                    manual.insert(
                        i,
                        per_dev.into_iter().map(|(d, f)| (d, log_scaled(&f.values))).collect(),
                    );
                }
            }
        }

        let candidates = selected
            .iter()
            .filter_map(|dev| {
                let stack = stacks.get(dev)?;
                let mut token_ids = Vec::with_capacity(stack.len());
                let mut frames = Vec::with_capacity(stack.len());
                for (i, frame) in &stack.frames {
                    let Some(tok) = frame.token(mode) else { continue };
                    token_ids.push(self.vocab.id(tok));
                    frames.push(match self.config.feature_mode {
                        FeatureMode::None => FrameInput::None,
                        FeatureMode::ManualFrame => FrameInput::Manual(manual[i][dev]),
                        FeatureMode::NeuralFrame => {
                            let ann = store.for_frame(frame).expect("developer stack frames are annotated");
                            FrameInput::Annotation(self.annotation_sequence(
                                dev,
                                ann,
                                frame.error_line,
                                trace.timestamp,
                            ))
                        }
                    });
                }
                if token_ids.is_empty() {
                    return None;
                }
                Some(PreparedDeveloper {
                    developer: dev.clone(),
                    token_ids,
                    frames,
                    stack_features: stack_feats.get(dev).map(|f| log_scaled(&f.values)),
                })
            })
            .collect();

        PreparedQuery {
            report_id: trace.report_id.clone(),
            bug_token_ids,
            candidates,
        }
    }

    /// Time-ordered `(|error_line - line|, ln(elapsed_ms + 1))` pairs of the
    /// developer's lines, keeping the most recent ones.
    pub fn annotation_sequence(
        &self,
        dev: &str,
        ann: &Annotation,
        error_line: Option<u32>,
        report_time: i64,
    ) -> Vec<[f64; 2]> {
        let target = error_line.unwrap_or(1) as f64;
        let mut lines: Vec<(i64, u32)> = ann.edits_by(dev).map(|(l, t)| (t, l)).collect();
        lines.sort();
        let skip = lines.len().saturating_sub(self.config.max_annotation_lines.max(1));
        lines[skip..]
            .iter()
            .map(|&(t, l)| {
                let elapsed = report_time.saturating_sub(t).max(0) as f64;
                [(target - l as f64).abs(), elapsed.ln_1p()]
            })
            .collect()
    }

    fn embed_rows(&self, tape: &mut Tape, ids: &[usize]) -> Vec<NodeId> {
        ids.iter().map(|&id| tape.row(self.layout.embedding, id)).collect()
    }

    pub(crate) fn bug_node(&self, tape: &mut Tape, ids: &[usize], dropout: &mut Dropout) -> NodeId {
        let rows = self.embed_rows(tape, ids);
        let q = self.layout.bug.encode(tape, &rows);
        dropout.apply(tape, q)
    }

    pub(crate) fn annotation_node(&self, tape: &mut Tape, seq: &[[f64; 2]]) -> NodeId {
        let (enc, proj) = self
            .layout
            .annotation
            .expect("annotation encoder is registered in neural mode");
        let rows: Vec<NodeId> = seq.iter().map(|p| tape.input(p.to_vec())).collect();
        let e = enc.encode(tape, &rows);
        proj.apply(tape, e)
    }

    pub(crate) fn dev_node(&self, tape: &mut Tape, dev: &PreparedDeveloper, dropout: &mut Dropout) -> NodeId {
        let mut rows = Vec::with_capacity(dev.token_ids.len());
        for (&id, frame) in dev.token_ids.iter().zip(&dev.frames) {
            let emb = tape.row(self.layout.embedding, id);
            let row = match frame {
                FrameInput::None => emb,
                FrameInput::Manual(values) => {
                    let f = tape.input(values.to_vec());
                    tape.concat(&[emb, f])
                }
                FrameInput::Annotation(seq) => {
                    let f = self.annotation_node(tape, seq);
                    tape.concat(&[emb, f])
                }
            };
            rows.push(row);
        }
        let d = self.layout.dev.encode(tape, &rows);
        dropout.apply(tape, d)
    }

    pub(crate) fn score_node(
        &self,
        tape: &mut Tape,
        q: NodeId,
        d: NodeId,
        stack_features: Option<&[f64; STACK_FEATURES]>,
        dropout: &mut Dropout,
    ) -> NodeId {
        let sim = self.layout.bilinear.apply(tape, q, d);
        let mut parts = vec![q, sim, d];
        if self.config.use_stack_features {
            let feats = stack_features
                .map(|f| f.to_vec())
                .unwrap_or_else(|| vec![0.0; STACK_FEATURES]);
            parts.push(tape.input(feats));
        }
        let join = tape.concat(&parts);
        self.layout.mlp.apply(tape, join, dropout)
    }

    /// Score nodes for every prepared candidate, in candidate order.
    pub fn score_nodes(&self, tape: &mut Tape, query: &PreparedQuery, dropout: &mut Dropout) -> Vec<NodeId> {
        let q = self.bug_node(tape, &query.bug_token_ids, dropout);
        query
            .candidates
            .iter()
            .map(|c| {
                let d = self.dev_node(tape, c, dropout);
                self.score_node(tape, q, d, c.stack_features.as_ref(), dropout)
            })
            .collect()
    }

    /// RankNet loss node of the candidate at `target` against all others.
    pub fn loss_node(&self, tape: &mut Tape, scores: &[NodeId], target: usize) -> Option<NodeId> {
        let terms: Vec<NodeId> = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != target)
            .map(|(_, &s)| {
                let diff = tape.sub(s, scores[target]);
                tape.softplus(diff)
            })
            .collect();
        (!terms.is_empty()).then(|| tape.sum(&terms))
    }

    /// Inference scores (no dropout) of the prepared candidates.
    pub fn score_query(&self, query: &PreparedQuery) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let nodes = self.score_nodes(&mut tape, query, &mut Dropout::disabled());
        nodes.iter().map(|&n| tape.scalar(n)).collect()
    }

    pub fn encode_bug(&self, trace: &StackTrace) -> Result<Vec<f64>> {
        let trace = compress_loops(trace);
        let ids = self.token_ids(&tokenize(&trace, self.config.token_mode));
        if ids.is_empty() {
            return Err(Error::validation(
                "trace",
                format!("report `{}` has no tokens", trace.report_id),
            ));
        }
        let mut tape = Tape::new(&self.params);
        let q = self.bug_node(&mut tape, &ids, &mut Dropout::disabled());
        Ok(tape.value(q).to_vec())
    }

    pub fn encode_developer(&self, dev: &PreparedDeveloper) -> Vec<f64> {
        let mut tape = Tape::new(&self.params);
        let d = self.dev_node(&mut tape, dev, &mut Dropout::disabled());
        tape.value(d).to_vec()
    }

    /// Learned 15-wide annotation embedding of one (developer, frame).
    pub fn encode_annotation(
        &self,
        dev: &str,
        ann: &Annotation,
        error_line: Option<u32>,
        report_time: i64,
    ) -> Result<Vec<f64>> {
        if self.layout.annotation.is_none() {
            return Err(Error::validation(
                "feature_mode",
                "annotation encoder requires neural_frame mode",
            ));
        }
        let seq = self.annotation_sequence(dev, ann, error_line, report_time);
        if seq.is_empty() {
            return Err(Error::validation(
                "developer",
                format!("`{dev}` authored no line of `{}`", ann.file),
            ));
        }
        let mut tape = Tape::new(&self.params);
        let n = self.annotation_node(&mut tape, &seq);
        Ok(tape.value(n).to_vec())
    }

    pub fn score(&self, q: &[f64], d: &[f64], stack_features: Option<&[f64; STACK_FEATURES]>) -> Result<f64> {
        let width = self.config.encoder_output_width();
        if q.len() != width || d.len() != width {
            return Err(Error::shape(width, format!("{} / {}", q.len(), d.len())));
        }
        let mut tape = Tape::new(&self.params);
        let (qn, dn) = (tape.input(q.to_vec()), tape.input(d.to_vec()));
        let s = self.score_node(&mut tape, qn, dn, stack_features, &mut Dropout::disabled());
        Ok(tape.scalar(s))
    }

    /// Ranks every developer in `all_devs` (plus any candidate missing from
    /// it). Developers with empty stacks share a score below every scored one.
    pub fn rank(&self, trace: &StackTrace, store: &AnnotationStore, all_devs: &BTreeSet<DeveloperId>) -> RankedList {
        let query = self.prepare(trace, store, None);
        let mut scored = BTreeMap::new();
        if query.bug_token_ids.is_empty() {
            log::warn!(
                "report `{}` has no tokens; every developer gets the sentinel score",
                trace.report_id
            );
        } else {
            let scores = self.score_query(&query);
            for (c, s) in query.candidates.iter().zip(scores) {
                scored.insert(c.developer.clone(), s);
            }
        }
        let mut everyone = all_devs.clone();
        everyone.extend(scored.keys().cloned());
        RankedList::with_sentinel(scored, &everyone)
    }

    /// Uniform subsample of at most `max_candidates` candidates that always
    /// keeps `target`.
    pub(crate) fn cap_candidates(
        &self,
        candidates: BTreeSet<DeveloperId>,
        target: &str,
        rng: &mut dyn RngCore,
    ) -> BTreeSet<DeveloperId> {
        let cap = self.config.max_candidates.max(2);
        if candidates.len() <= cap {
            return candidates;
        }
        let mut others: Vec<DeveloperId> = candidates.into_iter().filter(|d| d != target).collect();
        others.shuffle(rng);
        others.truncate(cap - 1);
        others.push(target.to_owned());
        others.into_iter().collect()
    }
}

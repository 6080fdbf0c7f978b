use rand::Rng;

use super::tape::{NodeId, Tape};
use super::tensor::{Init, ParamId, ParameterSet};

/// Convolution kernel width over frames.
pub const CONV_WIDTH: usize = 5;

#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn register(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize) -> Self {
        let fan = Init::FanIn(hidden);
        Self {
            w_ih: params.add(&format!("{prefix}.w_ih"), &[4 * hidden, input], fan),
            w_hh: params.add(&format!("{prefix}.w_hh"), &[4 * hidden, hidden], fan),
            b: params.add(&format!("{prefix}.b"), &[4 * hidden], fan),
            hidden,
        }
    }

    /// Hidden outputs for each step, in processing order.
    pub fn run(&self, tape: &mut Tape, inputs: impl Iterator<Item = NodeId>) -> Vec<NodeId> {
        let mut h = tape.zeros(self.hidden);
        let mut c = tape.zeros(self.hidden);
        let mut outputs = Vec::new();
        for x in inputs {
            let gates = tape.linear(&[(self.w_ih, x), (self.w_hh, h)], Some(self.b));
            let hc = tape.lstm_cell(gates, c);
            h = tape.slice(hc, 0, self.hidden);
            c = tape.slice(hc, self.hidden, self.hidden);
            outputs.push(h);
        }
        outputs
    }
}

/// Additive attention: `score_i = v . tanh(W y_i + b)`, softmax-normalized.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub w: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

impl Attention {
    pub fn register(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            w: params.add(&format!("{prefix}.w"), &[hidden, input], Init::FanIn(input)),
            b: params.add(&format!("{prefix}.b"), &[hidden], Init::FanIn(input)),
            v: params.add(&format!("{prefix}.v"), &[1, hidden], Init::FanIn(hidden)),
        }
    }

    /// Returns (context, weights node).
    pub fn pool(&self, tape: &mut Tape, items: &[NodeId]) -> (NodeId, NodeId) {
        let scores: Vec<NodeId> = items
            .iter()
            .map(|&y| {
                let hid = tape.linear(&[(self.w, y)], Some(self.b));
                let act = tape.tanh(hid);
                tape.linear(&[(self.v, act)], None)
            })
            .collect();
        let scores = tape.concat(&scores);
        let alpha = tape.softmax(scores);
        (tape.weighted_sum(alpha, items), alpha)
    }
}

/// Bidirectional LSTM whose output per direction is the last hidden state
/// concatenated with its attention context: `[y_fwd; a_fwd; y_bwd; a_bwd]`.
#[derive(Debug, Clone, Copy)]
pub struct BiLstmAttention {
    pub forward: Lstm,
    pub backward: Lstm,
    pub att_forward: Attention,
    pub att_backward: Attention,
}

impl BiLstmAttention {
    pub fn register(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            forward: Lstm::register(params, &format!("{prefix}.lstm_fwd"), input, hidden),
            backward: Lstm::register(params, &format!("{prefix}.lstm_bwd"), input, hidden),
            att_forward: Attention::register(params, &format!("{prefix}.att_fwd"), hidden, hidden),
            att_backward: Attention::register(params, &format!("{prefix}.att_bwd"), hidden, hidden),
        }
    }

    pub fn output_width(&self) -> usize {
        4 * self.forward.hidden
    }

    /// An empty sequence encodes to the zero vector.
    pub fn encode(&self, tape: &mut Tape, rows: &[NodeId]) -> NodeId {
        self.encode_with_attention(tape, rows).0
    }

    /// Also returns the forward and backward attention weight nodes.
    pub fn encode_with_attention(&self, tape: &mut Tape, rows: &[NodeId]) -> (NodeId, Option<(NodeId, NodeId)>) {
        if rows.is_empty() {
            return (tape.zeros(self.output_width()), None);
        }
        let fwd = self.forward.run(tape, rows.iter().copied());
        let bwd = self.backward.run(tape, rows.iter().rev().copied());
        let (a_fwd, w_fwd) = self.att_forward.pool(tape, &fwd);
        let (a_bwd, w_bwd) = self.att_backward.pool(tape, &bwd);
        let out = tape.concat(&[*fwd.last().unwrap(), a_fwd, *bwd.last().unwrap(), a_bwd]);
        (out, Some((w_fwd, w_bwd)))
    }
}

/// 1D convolution of width [`CONV_WIDTH`] followed by max-pooling over
/// positions, one output per filter.
#[derive(Debug, Clone, Copy)]
pub struct ConvEncoder {
    pub w: ParamId,
    pub b: ParamId,
    pub filters: usize,
}

impl ConvEncoder {
    pub fn register(params: &mut ParameterSet, prefix: &str, input: usize, filters: usize) -> Self {
        let fan = Init::FanIn(CONV_WIDTH * input);
        Self {
            w: params.add(&format!("{prefix}.conv_w"), &[filters, CONV_WIDTH * input], fan),
            b: params.add(&format!("{prefix}.conv_b"), &[filters], fan),
            filters,
        }
    }

    pub fn output_width(&self) -> usize {
        self.filters
    }

    /// Trailing all-zero rows are padding and are dropped before the sequence
    /// is zero-padded to the kernel width.
    pub fn encode(&self, tape: &mut Tape, rows: &[NodeId]) -> NodeId {
        let mut n = rows.len();
        while n > 0 && tape.value(rows[n - 1]).iter().all(|&v| v == 0.0) {
            n -= 1;
        }
        tape.conv_max(self.w, self.b, &rows[..n], CONV_WIDTH)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum SequenceEncoder {
    Rnn(BiLstmAttention),
    Cnn(ConvEncoder),
}

impl SequenceEncoder {
    pub fn output_width(&self) -> usize {
        match self {
            SequenceEncoder::Rnn(e) => e.output_width(),
            SequenceEncoder::Cnn(e) => e.output_width(),
        }
    }

    pub fn encode(&self, tape: &mut Tape, rows: &[NodeId]) -> NodeId {
        match self {
            SequenceEncoder::Rnn(e) => e.encode(tape, rows),
            SequenceEncoder::Cnn(e) => e.encode(tape, rows),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register(params: &mut ParameterSet, prefix: &str, input: usize, output: usize) -> Self {
        Self {
            w: params.add(&format!("{prefix}.w"), &[output, input], Init::FanIn(input)),
            b: params.add(&format!("{prefix}.b"), &[output], Init::FanIn(input)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: NodeId) -> NodeId {
        tape.linear(&[(self.w, x)], Some(self.b))
    }
}

/// `w2 . relu(W1 x + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct ScoreMlp {
    pub hidden: Linear,
    pub out: Linear,
    pub input: usize,
}

impl ScoreMlp {
    pub fn register(params: &mut ParameterSet, prefix: &str, input: usize, hidden: usize) -> Self {
        Self {
            hidden: Linear::register(params, &format!("{prefix}.hidden"), input, hidden),
            out: Linear::register(params, &format!("{prefix}.out"), hidden, 1),
            input,
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: NodeId, dropout: &mut Dropout) -> NodeId {
        let h = self.hidden.apply(tape, x);
        let h = tape.relu(h);
        let h = dropout.apply(tape, h);
        self.out.apply(tape, h)
    }
}

/// `x_q^T M x_d`.
#[derive(Debug, Clone, Copy)]
pub struct Bilinear {
    pub m: ParamId,
}

impl Bilinear {
    pub fn register(params: &mut ParameterSet, name: &str, left: usize, right: usize) -> Self {
        Self {
            m: params.add(name, &[left, right], Init::FanIn(right)),
        }
    }

    pub fn apply(&self, tape: &mut Tape, q: NodeId, d: NodeId) -> NodeId {
        let md = tape.linear(&[(self.m, d)], None);
        tape.dot(q, md)
    }
}

/// Inverted dropout driven by a caller-owned generator; inactive when `rng`
/// is `None` or the rate is zero.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: Option<&'r mut dyn rand::RngCore>,
}

impl<'r> Dropout<'r> {
    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut dyn rand::RngCore) -> Self {
        Self { rate, rng: Some(rng) }
    }

    pub fn apply(&mut self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self.rng.as_mut() {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 - self.rate;
                let mask = (0..tape.value(x).len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                tape.mask(x, mask)
            }
            _ => x,
        }
    }
}

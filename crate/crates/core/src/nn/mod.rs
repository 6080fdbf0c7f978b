//! Minimal differentiable core for the ranking models: trainable embeddings,
//! bidirectional LSTM with additive attention, 1D convolution with
//! max-pooling, a bilinear form, a scoring MLP, dropout, and Adam.
//!
//! The free functions below evaluate single layers outside of training and
//! are mostly useful for inspection and tests.

pub mod adam;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use layers::{BiLstmAttention, Bilinear, ConvEncoder, Dropout, Linear, ScoreMlp, SequenceEncoder, CONV_WIDTH};
pub use tape::{NodeId, Tape};
pub use tensor::{Gradients, Init, ParamId, ParameterSet, Tensor};

use crate::error::{Error, Result};

/// Looks up embedding rows; ids outside the table map to row 0 (UNK).
pub fn embed(ids: &[usize], table: &Tensor) -> Tensor {
    let d = table.cols();
    let mut data = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        let row = if id < table.rows() { id } else { 0 };
        data.extend_from_slice(table.row(row));
    }
    Tensor {
        shape: vec![ids.len(), d],
        data,
    }
}

fn input_rows(tape: &mut Tape, inputs: &Tensor) -> Vec<NodeId> {
    (0..inputs.rows()).map(|i| tape.input(inputs.row(i).to_vec())).collect()
}

pub fn bilstm_attention_encode(inputs: &Tensor, encoder: &BiLstmAttention, params: &ParameterSet) -> Tensor {
    let mut tape = Tape::new(params);
    let rows = input_rows(&mut tape, inputs);
    let out = encoder.encode(&mut tape, &rows);
    Tensor::vector(tape.value(out).to_vec())
}

pub fn cnn_encode(inputs: &Tensor, encoder: &ConvEncoder, params: &ParameterSet) -> Tensor {
    let mut tape = Tape::new(params);
    let rows = input_rows(&mut tape, inputs);
    let out = encoder.encode(&mut tape, &rows);
    Tensor::vector(tape.value(out).to_vec())
}

pub fn score_mlp(x_join: &[f64], mlp: &ScoreMlp, params: &ParameterSet) -> Result<f64> {
    if x_join.len() != mlp.input {
        return Err(Error::shape(mlp.input, x_join.len()));
    }
    let mut tape = Tape::new(params);
    let x = tape.input(x_join.to_vec());
    let s = mlp.apply(&mut tape, x, &mut Dropout::disabled());
    Ok(tape.scalar(s))
}

pub fn bilinear(x_q: &[f64], m: &Tensor, x_d: &[f64]) -> Result<f64> {
    if m.shape.len() != 2 || m.rows() != x_q.len() || m.cols() != x_d.len() {
        return Err(Error::shape(
            format!("[{}, {}]", x_q.len(), x_d.len()),
            format!("{:?}", m.shape),
        ));
    }
    Ok((0..m.rows())
        .map(|i| x_q[i] * m.row(i).iter().zip(x_d).map(|(a, b)| a * b).sum::<f64>())
        .sum())
}

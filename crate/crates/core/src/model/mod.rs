//! The recurrent label-chain head.
//!
//! Each real label owns one row of the embedding table. That row is both the
//! LSTM input when the label has just been emitted and the scoring weight
//! when the next label is chosen. Row `K` is the END token and row `K + 1`
//! is the START token, which is fed at the first step and never scored.
//!
//! Per step, with `r` the recurrent state and `w` the embedded input label:
//!
//! ```text
//! cand   = relu(Wc_r r + Wc_w w + b_c)
//! input  = sigmoid(Wi_r r + Wi_w w + b_i)
//! forget = sigmoid(Wf_r r + Wf_w w + b_f)
//! gate   = sigmoid(Wo_r r + Wo_w w + b_o)
//! r'     = forget * r + input * cand
//! out    = gate * r'
//! joint  = relu(P_out out + P_img image + b_p)
//! scores = E[0..=K] joint
//! ```

mod backward;
mod forward;
mod gradcheck;

pub use backward::{accumulate_gradients, backward_sequence};
pub use forward::{
    embed_label, forward_sequence, forward_sequence_masked, infer_step, joint_project, lstm_step, score_labels,
    DropoutMasks, ForwardTrace, LstmOutput, Mode, StepTrace,
};
pub use gradcheck::{finite_diff_check, max_relative_error};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{glorot_init, Matrix, Rng};

pub type LabelId = usize;

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_STATE_DIM: usize = 512;
pub const FORGET_BIAS_INIT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hyper {
    /// Number of real labels `K` (END and START excluded).
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub state_dim: usize,
    pub feature_dim: usize,
}

impl Hyper {
    pub fn new(vocab_size: usize, embed_dim: usize, state_dim: usize, feature_dim: usize) -> Result<Self> {
        let hyper = Self {
            vocab_size,
            embed_dim,
            state_dim,
            feature_dim,
        };
        hyper.validate()?;
        Ok(hyper)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocabulary needs at least 2 labels, got {}",
                self.vocab_size
            )));
        }
        if self.embed_dim == 0 || self.state_dim == 0 || self.feature_dim == 0 {
            return Err(Error::Config(
                "embed_dim, state_dim and feature_dim must all be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn end_id(&self) -> LabelId {
        self.vocab_size
    }

    pub fn start_id(&self) -> LabelId {
        self.vocab_size + 1
    }

    /// Rows of the embedding table: real labels, END and START.
    pub fn table_rows(&self) -> usize {
        self.vocab_size + 2
    }
}

/// How a parameter tensor is treated by the optimiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
}

/// A named collection of parameter matrices visited in a fixed order.
pub trait ParamSet {
    fn params(&self) -> Vec<(&'static str, ParamKind, &Matrix)>;
    fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Matrix)>;

    fn num_entries(&self) -> usize {
        self.params().iter().map(|(_, _, m)| m.len()).sum()
    }
}

/// Recurrent weights, input weights and bias for one LSTM pre-activation.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub recurrent: Matrix,
    pub input: Matrix,
    pub bias: Matrix,
}

impl GateParams {
    fn zeros(state_dim: usize, embed_dim: usize) -> Self {
        Self {
            recurrent: Matrix::zeros(state_dim, state_dim),
            input: Matrix::zeros(state_dim, embed_dim),
            bias: Matrix::zeros(state_dim, 1),
        }
    }

    fn glorot(state_dim: usize, embed_dim: usize, bias: f64, rng: &mut Rng) -> Self {
        Self {
            recurrent: glorot_init(state_dim, state_dim, rng),
            input: glorot_init(state_dim, embed_dim, rng),
            bias: Matrix::filled(state_dim, 1, bias),
        }
    }

    /// `recurrent r + input w + bias`.
    pub(crate) fn preactivation(&self, r: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = self.bias.data().to_vec();
        self.recurrent.matvec_add_into(r, &mut out);
        self.input.matvec_add_into(w, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub hyper: Hyper,
    /// `(K + 2) x embed_dim`, one row per label id.
    pub label_embedding: Matrix,
    pub cell: GateParams,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    /// `embed_dim x state_dim`.
    pub proj_recurrent: Matrix,
    /// `embed_dim x feature_dim`.
    pub proj_image: Matrix,
    pub proj_bias: Matrix,
}

impl ModelParams {
    /// All-zero parameters; also the gradient accumulator shape.
    pub fn zeros(hyper: Hyper) -> Self {
        let (d_e, d_r, d_i) = (hyper.embed_dim, hyper.state_dim, hyper.feature_dim);
        Self {
            hyper,
            label_embedding: Matrix::zeros(hyper.table_rows(), d_e),
            cell: GateParams::zeros(d_r, d_e),
            input_gate: GateParams::zeros(d_r, d_e),
            forget_gate: GateParams::zeros(d_r, d_e),
            output_gate: GateParams::zeros(d_r, d_e),
            proj_recurrent: Matrix::zeros(d_e, d_r),
            proj_image: Matrix::zeros(d_e, d_i),
            proj_bias: Matrix::zeros(d_e, 1),
        }
    }

    /// Glorot-uniform weights, zero biases except the forget gate.
    pub fn init(hyper: Hyper, rng: &mut Rng) -> Result<Self> {
        hyper.validate()?;
        let (d_e, d_r, d_i) = (hyper.embed_dim, hyper.state_dim, hyper.feature_dim);
        Ok(Self {
            hyper,
            label_embedding: glorot_init(hyper.table_rows(), d_e, rng),
            cell: GateParams::glorot(d_r, d_e, 0.0, rng),
            input_gate: GateParams::glorot(d_r, d_e, 0.0, rng),
            forget_gate: GateParams::glorot(d_r, d_e, FORGET_BIAS_INIT, rng),
            output_gate: GateParams::glorot(d_r, d_e, 0.0, rng),
            proj_recurrent: glorot_init(d_e, d_r, rng),
            proj_image: glorot_init(d_e, d_i, rng),
            proj_bias: Matrix::zeros(d_e, 1),
        })
    }

    /// Checks every shape against `hyper` and every entry for finiteness.
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        let reference = ModelParams::zeros(self.hyper);
        for ((name, _, expected), (_, _, actual)) in reference.params().into_iter().zip(self.params()) {
            if expected.shape() != actual.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` is {:?}, expected {:?}",
                    actual.shape(),
                    expected.shape()
                )));
            }
            if !actual.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{name}` has non-finite entries"
                )));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ModelParams) -> bool {
        self.hyper == other.hyper
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, _, a), (_, _, b)) in self.params_mut().into_iter().zip(other.params()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, _, m) in self.params_mut() {
            m.scale(factor);
        }
    }

    /// Looks up a parameter tensor by its checkpoint name.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params_mut()
            .into_iter()
            .find(|(n, _, _)| *n == name)
            .map(|(_, _, m)| m)
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<(&'static str, ParamKind, &Matrix)> {
        use ParamKind::*;
        vec![
            ("label_embedding", Embedding, &self.label_embedding),
            ("cell.recurrent", Weight, &self.cell.recurrent),
            ("cell.input", Weight, &self.cell.input),
            ("cell.bias", Bias, &self.cell.bias),
            ("input_gate.recurrent", Weight, &self.input_gate.recurrent),
            ("input_gate.input", Weight, &self.input_gate.input),
            ("input_gate.bias", Bias, &self.input_gate.bias),
            ("forget_gate.recurrent", Weight, &self.forget_gate.recurrent),
            ("forget_gate.input", Weight, &self.forget_gate.input),
            ("forget_gate.bias", Bias, &self.forget_gate.bias),
            ("output_gate.recurrent", Weight, &self.output_gate.recurrent),
            ("output_gate.input", Weight, &self.output_gate.input),
            ("output_gate.bias", Bias, &self.output_gate.bias),
            ("proj_recurrent", Weight, &self.proj_recurrent),
            ("proj_image", Weight, &self.proj_image),
            ("proj_bias", Bias, &self.proj_bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Matrix)> {
        use ParamKind::*;
        vec![
            ("label_embedding", Embedding, &mut self.label_embedding),
            ("cell.recurrent", Weight, &mut self.cell.recurrent),
            ("cell.input", Weight, &mut self.cell.input),
            ("cell.bias", Bias, &mut self.cell.bias),
            ("input_gate.recurrent", Weight, &mut self.input_gate.recurrent),
            ("input_gate.input", Weight, &mut self.input_gate.input),
            ("input_gate.bias", Bias, &mut self.input_gate.bias),
            ("forget_gate.recurrent", Weight, &mut self.forget_gate.recurrent),
            ("forget_gate.input", Weight, &mut self.forget_gate.input),
            ("forget_gate.bias", Bias, &mut self.forget_gate.bias),
            ("output_gate.recurrent", Weight, &mut self.output_gate.recurrent),
            ("output_gate.input", Weight, &mut self.output_gate.input),
            ("output_gate.bias", Bias, &mut self.output_gate.bias),
            ("proj_recurrent", Weight, &mut self.proj_recurrent),
            ("proj_image", Weight, &mut self.proj_image),
            ("proj_bias", Bias, &mut self.proj_bias),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hyper_rejects_degenerate_sizes() {
        assert!(Hyper::new(1, 4, 4, 4).is_err());
        assert!(Hyper::new(3, 0, 4, 4).is_err());
        assert!(Hyper::new(3, 4, 4, 4).is_ok());
    }

    #[test]
    fn init_shapes_and_biases() {
        let hyper = Hyper::new(5, 4, 6, 3).unwrap();
        let p = ModelParams::init(hyper, &mut Rng::new(1)).unwrap();
        p.validate().unwrap();
        assert_eq!(p.label_embedding.shape(), (7, 4));
        assert_eq!(p.proj_image.shape(), (4, 3));
        assert!(p.forget_gate.bias.data().iter().all(|&b| b == FORGET_BIAS_INIT));
        assert!(p.cell.bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(p.num_entries(), 7 * 4 + 4 * (36 + 24 + 6) + 24 + 12 + 4);
    }

    #[test]
    fn validate_catches_wrong_shape() {
        let hyper = Hyper::new(3, 2, 2, 2).unwrap();
        let mut p = ModelParams::zeros(hyper);
        p.proj_image = Matrix::zeros(2, 5);
        assert!(matches!(p.validate(), Err(Error::Shape(_))));
    }

    #[test]
    fn parameter_names_are_unique() {
        let p = ModelParams::zeros(Hyper::new(3, 2, 2, 2).unwrap());
        let mut names: Vec<_> = p.params().iter().map(|(n, _, _)| *n).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 16);
    }
}

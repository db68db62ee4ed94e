use crate::error::{Error, Result};
use crate::numerics::{hadamard, relu, sigmoid, softmax, Rng};

use super::{LabelId, ModelParams};

/// Whether dropout is active during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    /// Inverted dropout on the projection inputs with the given drop rate.
    Train {
        dropout: f64,
    },
    Infer,
}

/// Multipliers applied to the recurrent output and the image before the
/// joint projection. Entries are `0` (dropped) or `1 / keep`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    pub output: Vec<f64>,
    pub image: Vec<f64>,
}

impl DropoutMasks {
    pub fn ones(state_dim: usize, feature_dim: usize) -> Self {
        Self {
            output: vec![1.0; state_dim],
            image: vec![1.0; feature_dim],
        }
    }

    fn sample(state_dim: usize, feature_dim: usize, rate: f64, rng: &mut Rng) -> Self {
        let keep = 1.0 - rate;
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| if rng.bernoulli(keep) { 1.0 / keep } else { 0.0 })
                .collect()
        };
        let output = draw(state_dim);
        let image = draw(feature_dim);
        Self { output, image }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmOutput {
    pub state: Vec<f64>,
    pub output: Vec<f64>,
}

/// Intermediate values of one LSTM step, kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmCache {
    pub cand_pre: Vec<f64>,
    pub cand: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub state: Vec<f64>,
    pub output: Vec<f64>,
}

/// Everything recorded for one time step of a teacher-forced pass.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub input_label: LabelId,
    pub embedded: Vec<f64>,
    pub prev_state: Vec<f64>,
    pub cand_pre: Vec<f64>,
    pub cand: Vec<f64>,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub state: Vec<f64>,
    pub output: Vec<f64>,
    pub dropout: Option<DropoutMasks>,
    pub joint_pre: Vec<f64>,
    pub joint: Vec<f64>,
    /// `K + 1` scores; masked entries are `-inf`.
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub target: LabelId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub steps: Vec<StepTrace>,
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn targets(&self) -> Vec<LabelId> {
        self.steps.iter().map(|s| s.target).collect()
    }
}

fn check_len(what: &str, actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::Shape(format!("{what} has length {actual}, expected {expected}")));
    }
    Ok(())
}

/// Row `id` of the embedding table.
pub fn embed_label(id: LabelId, params: &ModelParams) -> Result<Vec<f64>> {
    let limit = params.hyper.table_rows();
    if id >= limit {
        return Err(Error::LabelOutOfRange { id, limit });
    }
    Ok(params.label_embedding.row(id).to_vec())
}

pub(crate) fn lstm_forward(prev: &[f64], input: &[f64], params: &ModelParams) -> LstmCache {
    let cand_pre = params.cell.preactivation(prev, input);
    let cand = relu(&cand_pre);
    let input_gate = sigmoid(&params.input_gate.preactivation(prev, input));
    let forget_gate = sigmoid(&params.forget_gate.preactivation(prev, input));
    let output_gate = sigmoid(&params.output_gate.preactivation(prev, input));
    let state: Vec<f64> = (0..prev.len())
        .map(|k| forget_gate[k] * prev[k] + input_gate[k] * cand[k])
        .collect();
    let output = hadamard(&output_gate, &state);
    LstmCache {
        cand_pre,
        cand,
        input_gate,
        forget_gate,
        output_gate,
        state,
        output,
    }
}

/// One LSTM step: sigmoid gates, ReLU cell candidate, and the output gate
/// applied directly to the new state.
pub fn lstm_step(prev_state: &[f64], input: &[f64], params: &ModelParams) -> Result<LstmOutput> {
    check_len("previous state", prev_state.len(), params.hyper.state_dim)?;
    check_len("step input", input.len(), params.hyper.embed_dim)?;
    let cache = lstm_forward(prev_state, input, params);
    Ok(LstmOutput {
        state: cache.state,
        output: cache.output,
    })
}

pub(crate) fn joint_preactivation(
    output: &[f64],
    image: &[f64],
    params: &ModelParams,
    dropout: Option<&DropoutMasks>,
) -> Vec<f64> {
    let mut pre = params.proj_bias.data().to_vec();
    match dropout {
        Some(masks) => {
            params
                .proj_recurrent
                .matvec_add_into(&hadamard(&masks.output, output), &mut pre);
            params
                .proj_image
                .matvec_add_into(&hadamard(&masks.image, image), &mut pre);
        }
        None => {
            params.proj_recurrent.matvec_add_into(output, &mut pre);
            params.proj_image.matvec_add_into(image, &mut pre);
        }
    }
    pre
}

/// Projects the recurrent output and the image feature into the label
/// embedding space.
pub fn joint_project(
    output: &[f64],
    image: &[f64],
    params: &ModelParams,
    dropout: Option<&DropoutMasks>,
) -> Result<Vec<f64>> {
    let hyper = &params.hyper;
    check_len("recurrent output", output.len(), hyper.state_dim)?;
    check_len("image feature", image.len(), hyper.feature_dim)?;
    if let Some(masks) = dropout {
        check_len("output dropout mask", masks.output.len(), hyper.state_dim)?;
        check_len("image dropout mask", masks.image.len(), hyper.feature_dim)?;
    }
    Ok(relu(&joint_preactivation(output, image, params, dropout)))
}

/// Dot products of the joint embedding with every real label row and END.
/// Ids in `mask` score `-inf`. START is never part of the output.
pub fn score_labels(joint: &[f64], params: &ModelParams, mask: &[LabelId]) -> Result<Vec<f64>> {
    let hyper = &params.hyper;
    check_len("joint embedding", joint.len(), hyper.embed_dim)?;
    let scored = hyper.vocab_size + 1;
    let mut scores: Vec<f64> = (0..scored)
        .map(|c| crate::numerics::dot(params.label_embedding.row(c), joint))
        .collect();
    for &id in mask {
        if id >= scored {
            return Err(Error::LabelOutOfRange { id, limit: scored });
        }
        scores[id] = f64::NEG_INFINITY;
    }
    if scores.iter().all(|&s| s == f64::NEG_INFINITY) {
        return Err(Error::EmptySupport);
    }
    Ok(scores)
}

/// Feeds `input` on top of `prev_state` and returns the new LSTM state
/// together with the joint embedding used to score the next label.
pub fn infer_step(
    params: &ModelParams,
    image: &[f64],
    prev_state: &[f64],
    input: LabelId,
) -> Result<(LstmOutput, Vec<f64>)> {
    let embedded = embed_label(input, params)?;
    let lstm = lstm_step(prev_state, &embedded, params)?;
    let joint = joint_project(&lstm.output, image, params, None)?;
    Ok((lstm, joint))
}

fn validate_sequence(label_seq: &[LabelId], params: &ModelParams, forbidden: &[LabelId]) -> Result<()> {
    let end = params.hyper.end_id();
    match label_seq.last() {
        None => return Err(Error::InvalidSequence("label sequence is empty".into())),
        Some(&last) if last != end => return Err(Error::InvalidSequence("sequence must end with END".into())),
        _ => {}
    }
    let body = &label_seq[..label_seq.len() - 1];
    let mut seen = vec![false; params.hyper.vocab_size];
    for &id in body {
        if id == end {
            return Err(Error::InvalidSequence("END appears before the last position".into()));
        }
        if id >= params.hyper.vocab_size {
            return Err(Error::LabelOutOfRange {
                id,
                limit: params.hyper.vocab_size,
            });
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::InvalidSequence(format!("label {id} repeats")));
        }
    }
    if let Some(&id) = label_seq.iter().find(|id| forbidden.contains(id)) {
        return Err(Error::InvalidSequence(format!("target {id} is masked")));
    }
    Ok(())
}

/// Teacher-forced pass over `label_seq` (real labels followed by END).
///
/// Step `t` feeds START (`t = 0`) or `label_seq[t - 1]`, masks every label
/// already consumed, and records the distribution over the next label.
pub fn forward_sequence(
    image: &[f64],
    label_seq: &[LabelId],
    params: &ModelParams,
    mode: Mode,
    rng: &mut Rng,
) -> Result<ForwardTrace> {
    forward_sequence_masked(image, label_seq, params, mode, rng, &[])
}

/// Like [`forward_sequence`], with `forbidden` masked at every step.
pub fn forward_sequence_masked(
    image: &[f64],
    label_seq: &[LabelId],
    params: &ModelParams,
    mode: Mode,
    rng: &mut Rng,
    forbidden: &[LabelId],
) -> Result<ForwardTrace> {
    let hyper = params.hyper;
    check_len("image feature", image.len(), hyper.feature_dim)?;
    validate_sequence(label_seq, params, forbidden)?;
    let dropout_rate = match mode {
        Mode::Train { dropout } if dropout > 0.0 => Some(dropout),
        _ => None,
    };

    let mut steps = Vec::with_capacity(label_seq.len());
    let mut prev_state = vec![0.0; hyper.state_dim];
    let mut mask: Vec<LabelId> = forbidden.to_vec();
    for (t, &target) in label_seq.iter().enumerate() {
        let input_label = if t == 0 { hyper.start_id() } else { label_seq[t - 1] };
        if t > 0 {
            mask.push(input_label);
        }
        let embedded = params.label_embedding.row(input_label).to_vec();
        let lstm = lstm_forward(&prev_state, &embedded, params);
        let dropout = dropout_rate.map(|rate| DropoutMasks::sample(hyper.state_dim, hyper.feature_dim, rate, rng));
        let joint_pre = joint_preactivation(&lstm.output, image, params, dropout.as_ref());
        let joint = relu(&joint_pre);
        let scores = score_labels(&joint, params, &mask)?;
        let probs = softmax(&scores)?;
        let next_state = lstm.state.clone();
        steps.push(StepTrace {
            input_label,
            embedded,
            prev_state,
            cand_pre: lstm.cand_pre,
            cand: lstm.cand,
            input_gate: lstm.input_gate,
            forget_gate: lstm.forget_gate,
            output_gate: lstm.output_gate,
            state: lstm.state,
            output: lstm.output,
            dropout,
            joint_pre,
            joint,
            scores,
            probs,
            target,
        });
        prev_state = next_state;
    }
    Ok(ForwardTrace { steps })
}

use crate::error::{Error, Result};
use crate::numerics::hadamard;

use super::{ForwardTrace, GateParams, ModelParams};

/// Gradient of the mean per-step cross-entropy of `trace` with respect to
/// every parameter.
pub fn backward_sequence(trace: &ForwardTrace, image: &[f64], params: &ModelParams) -> Result<ModelParams> {
    let mut grads = ModelParams::zeros(params.hyper);
    accumulate_gradients(trace, image, params, &mut grads, 1.0)?;
    Ok(grads)
}

fn gate_backward(gate: &mut GateParams, delta: &[f64], prev_state: &[f64], input: &[f64]) {
    gate.recurrent.add_outer(delta, prev_state);
    gate.input.add_outer(delta, input);
    for (b, d) in gate.bias.data_mut().iter_mut().zip(delta) {
        *b += d;
    }
}

/// Adds `scale * dL/dθ` into `grads`, where `L = -(1/T) Σ_t ln p_t[target_t]`.
pub fn accumulate_gradients(
    trace: &ForwardTrace,
    image: &[f64],
    params: &ModelParams,
    grads: &mut ModelParams,
    scale: f64,
) -> Result<()> {
    let hyper = params.hyper;
    if !grads.same_shape(params) {
        return Err(Error::Shape("gradient buffer does not match parameters".into()));
    }
    if image.len() != hyper.feature_dim {
        return Err(Error::Shape(format!(
            "image feature has length {}, expected {}",
            image.len(),
            hyper.feature_dim
        )));
    }
    let steps = &trace.steps;
    if steps.is_empty() {
        return Ok(());
    }
    if let Some(bad) = steps.iter().find(|s| {
        s.state.len() != hyper.state_dim
            || s.embedded.len() != hyper.embed_dim
            || s.scores.len() != hyper.vocab_size + 1
    }) {
        return Err(Error::Shape(format!(
            "trace step for input {} does not match parameters",
            bad.input_label
        )));
    }

    let step_weight = scale / steps.len() as f64;
    let d_r = hyper.state_dim;
    // dL/dr flowing back from step t + 1.
    let mut carry = vec![0.0; d_r];

    for step in steps.iter().rev() {
        // Softmax + cross-entropy: dL/ds = p - onehot(target). Masked
        // entries have p = 0 and are never the target.
        let mut d_scores = step.probs.clone();
        d_scores[step.target] -= 1.0;
        d_scores.iter_mut().for_each(|d| *d *= step_weight);

        let mut d_joint = vec![0.0; hyper.embed_dim];
        for (c, &ds) in d_scores.iter().enumerate() {
            if ds == 0.0 {
                continue;
            }
            grads
                .label_embedding
                .add_to_row(c, &step.joint.iter().map(|j| ds * j).collect::<Vec<_>>());
            for (dj, &u) in d_joint.iter_mut().zip(params.label_embedding.row(c)) {
                *dj += ds * u;
            }
        }

        let d_joint_pre: Vec<f64> = d_joint
            .iter()
            .zip(&step.joint_pre)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();

        let (proj_out_in, proj_img_in) = match &step.dropout {
            Some(m) => (hadamard(&m.output, &step.output), hadamard(&m.image, image)),
            None => (step.output.clone(), image.to_vec()),
        };
        grads.proj_recurrent.add_outer(&d_joint_pre, &proj_out_in);
        grads.proj_image.add_outer(&d_joint_pre, &proj_img_in);
        for (b, d) in grads.proj_bias.data_mut().iter_mut().zip(&d_joint_pre) {
            *b += d;
        }

        let mut d_output = vec![0.0; d_r];
        params.proj_recurrent.tr_matvec_add_into(&d_joint_pre, &mut d_output);
        if let Some(m) = &step.dropout {
            d_output = hadamard(&d_output, &m.output);
        }

        // out = gate * state
        let mut d_state = carry;
        for k in 0..d_r {
            d_state[k] += d_output[k] * step.output_gate[k];
        }

        let mut d_cand_pre = vec![0.0; d_r];
        let mut d_in_pre = vec![0.0; d_r];
        let mut d_forget_pre = vec![0.0; d_r];
        let mut d_out_pre = vec![0.0; d_r];
        let mut next_carry = vec![0.0; d_r];
        for k in 0..d_r {
            let ds = d_state[k];
            let i = step.input_gate[k];
            let f = step.forget_gate[k];
            let g = step.output_gate[k];
            if step.cand_pre[k] > 0.0 {
                d_cand_pre[k] = ds * i;
            }
            d_in_pre[k] = ds * step.cand[k] * i * (1.0 - i);
            d_forget_pre[k] = ds * step.prev_state[k] * f * (1.0 - f);
            d_out_pre[k] = d_output[k] * step.state[k] * g * (1.0 - g);
            next_carry[k] = ds * f;
        }

        let mut d_embedded = vec![0.0; hyper.embed_dim];
        for (gate, grad_gate, delta) in [
            (&params.cell, &mut grads.cell, &d_cand_pre),
            (&params.input_gate, &mut grads.input_gate, &d_in_pre),
            (&params.forget_gate, &mut grads.forget_gate, &d_forget_pre),
            (&params.output_gate, &mut grads.output_gate, &d_out_pre),
        ] {
            gate_backward(grad_gate, delta, &step.prev_state, &step.embedded);
            gate.recurrent.tr_matvec_add_into(delta, &mut next_carry);
            gate.input.tr_matvec_add_into(delta, &mut d_embedded);
        }
        grads.label_embedding.add_to_row(step.input_label, &d_embedded);

        carry = next_carry;
    }
    Ok(())
}

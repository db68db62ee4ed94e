use crate::error::Result;
use crate::numerics::Rng;
use crate::train::sequence_loss;

use super::{backward_sequence, forward_sequence, LabelId, Mode, ModelParams, ParamSet};

/// Largest `|a - n| / max(1e-8, |a| + |n|)` over all parameter entries, where
/// `a` is the analytic gradient and `n` the central difference of `loss`.
pub fn max_relative_error<P, F>(params: &P, analytic: &P, mut loss: F, eps: f64) -> f64
where
    P: ParamSet + Clone,
    F: FnMut(&P) -> f64,
{
    let mut probe = params.clone();
    let mut worst = 0.0f64;
    let sizes: Vec<usize> = params.params().iter().map(|(_, _, m)| m.len()).collect();
    let analytic_entries = analytic.params();
    for (slot, &size) in sizes.iter().enumerate() {
        for j in 0..size {
            let original = params.params()[slot].2.data()[j];
            probe.params_mut()[slot].2.data_mut()[j] = original + eps;
            let plus = loss(&probe);
            probe.params_mut()[slot].2.data_mut()[j] = original - eps;
            let minus = loss(&probe);
            probe.params_mut()[slot].2.data_mut()[j] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic_entries[slot].2.data()[j];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}

/// Compares [`backward_sequence`] with central differences of the
/// dropout-free sequence loss.
pub fn finite_diff_check(image: &[f64], label_seq: &[LabelId], params: &ModelParams, eps: f64) -> Result<f64> {
    let mut rng = Rng::new(0);
    let trace = forward_sequence(image, label_seq, params, Mode::Infer, &mut rng)?;
    let analytic = backward_sequence(&trace, image, params)?;
    let targets = trace.targets();
    let loss = |p: &ModelParams| {
        let mut rng = Rng::new(0);
        forward_sequence(image, label_seq, p, Mode::Infer, &mut rng)
            .and_then(|t| sequence_loss(&t, &targets))
            .unwrap_or(f64::NAN)
    };
    Ok(max_relative_error(params, &analytic, loss, eps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Hyper, ParamKind};

    fn weight_decay_loss(p: &ModelParams, lambda: f64) -> f64 {
        p.params()
            .iter()
            .filter(|(_, kind, _)| *kind == ParamKind::Weight)
            .flat_map(|(_, _, m)| m.data().iter())
            .map(|v| 0.5 * lambda * v * v)
            .sum()
    }

    #[test]
    fn quadratic_decay_gradient_matches() {
        let hyper = Hyper::new(3, 2, 3, 2).unwrap();
        let params = ModelParams::init(hyper, &mut Rng::new(8)).unwrap();
        let lambda = 1e-2;
        let mut analytic = ModelParams::zeros(hyper);
        for ((_, kind, g), (_, _, p)) in analytic.params_mut().into_iter().zip(params.params()) {
            if kind == ParamKind::Weight {
                for (gv, pv) in g.data_mut().iter_mut().zip(p.data()) {
                    *gv = lambda * pv;
                }
            }
        }
        let err = max_relative_error(&params, &analytic, |p| weight_decay_loss(p, lambda), 1e-4);
        assert!(err < 1e-8, "{err}");
    }

    fn tiny_case(seed: u64) -> (ModelParams, Vec<f64>, Vec<LabelId>) {
        let hyper = Hyper::new(5, 4, 6, 3).unwrap();
        let mut rng = Rng::new(seed);
        let params = ModelParams::init(hyper, &mut rng).unwrap();
        let image: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let mut labels: Vec<LabelId> = (0..5).collect();
        rng.shuffle(&mut labels);
        let mut seq: Vec<LabelId> = labels[..3].to_vec();
        seq.push(hyper.end_id());
        (params, image, seq)
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        for seed in 0..10 {
            let (params, image, seq) = tiny_case(seed);
            let err = finite_diff_check(&image, &seq, &params, 1e-5).unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (params, image, seq) = tiny_case(11);
        let mut rng = Rng::new(0);
        let trace = forward_sequence(&image, &seq, &params, Mode::Infer, &mut rng).unwrap();
        let mut analytic = backward_sequence(&trace, &image, &params).unwrap();
        let targets = trace.targets();
        let loss = |p: &ModelParams| {
            let t = forward_sequence(&image, &seq, p, Mode::Infer, &mut Rng::new(0)).unwrap();
            sequence_loss(&t, &targets).unwrap()
        };
        assert!(max_relative_error(&params, &analytic, loss, 1e-5) <= 1e-4);
        let g = analytic.proj_image.get(1, 2);
        analytic.proj_image.set(1, 2, g * 1.01 + 1e-6);
        assert!(max_relative_error(&params, &analytic, loss, 1e-5) > 1e-3);
    }
}

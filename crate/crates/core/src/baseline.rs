//! Feature-only comparison model: one linear score per label over the image
//! features, trained with the same optimiser, shuffling and dropout as the
//! recurrent head but with no view of the other labels.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelVocab};
use crate::error::{Error, Result};
use crate::model::{LabelId, ParamKind, ParamSet};
use crate::numerics::{glorot_init, log_softmax, sigmoid_scalar, softmax, Matrix, Rng};
use crate::train::{rmsprop_update, BatchScheduler, EpochRecord, OptimizerState, TrainConfig, TrainStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineLoss {
    /// Independent sigmoid outputs with binary cross-entropy.
    #[default]
    Logistic,
    /// One softmax over labels, target mass spread evenly over the true labels.
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    /// `K x feature_dim`.
    pub weight: Matrix,
    pub bias: Matrix,
}

impl BaselineParams {
    pub fn zeros(vocab_size: usize, feature_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(vocab_size, feature_dim),
            bias: Matrix::zeros(vocab_size, 1),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bias.shape() != (self.weight.rows(), 1) {
            return Err(Error::Shape(format!(
                "baseline bias is {:?}, expected ({}, 1)",
                self.bias.shape(),
                self.weight.rows()
            )));
        }
        if !self.weight.is_finite() || !self.bias.is_finite() {
            return Err(Error::InvalidArgument("baseline parameters are not finite".into()));
        }
        Ok(())
    }
}

impl ParamSet for BaselineParams {
    fn params(&self) -> Vec<(&'static str, ParamKind, &Matrix)> {
        vec![
            ("weight", ParamKind::Weight, &self.weight),
            ("bias", ParamKind::Bias, &self.bias),
        ]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Matrix)> {
        vec![
            ("weight", ParamKind::Weight, &mut self.weight),
            ("bias", ParamKind::Bias, &mut self.bias),
        ]
    }
}

/// Raw per-label scores `W x + b`.
pub fn baseline_scores(features: &[f64], params: &BaselineParams) -> Result<Vec<f64>> {
    if features.len() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "feature vector has length {}, baseline expects {}",
            features.len(),
            params.feature_dim()
        )));
    }
    let mut scores = params.bias.data().to_vec();
    params.weight.matvec_add_into(features, &mut scores);
    Ok(scores)
}

/// Labels ordered by descending score, ties by id, cut to `k`.
pub fn baseline_topk(features: &[f64], params: &BaselineParams, k: usize) -> Result<Vec<LabelId>> {
    let scores = baseline_scores(features, params)?;
    let mut ids: Vec<LabelId> = (0..scores.len()).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    Ok(ids)
}

/// Label ids whose sigmoid score reaches 0.5.
pub fn baseline_threshold(features: &[f64], params: &BaselineParams) -> Result<Vec<LabelId>> {
    let scores = baseline_scores(features, params)?;
    Ok((0..scores.len())
        .filter(|&c| sigmoid_scalar(scores[c]) >= 0.5)
        .collect())
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub params: BaselineParams,
    pub history: Vec<EpochRecord>,
}

/// Loss and score gradient of one example.
fn example_gradient(scores: &[f64], truth: &[bool], loss: BaselineLoss) -> Result<(f64, Vec<f64>)> {
    match loss {
        BaselineLoss::Logistic => {
            let mut value = 0.0;
            let grad = scores
                .iter()
                .zip(truth)
                .map(|(&z, &y)| {
                    // -ln σ(z) = ln(1 + e^-z), evaluated stably.
                    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
                    value += if y { softplus(-z) } else { softplus(z) };
                    sigmoid_scalar(z) - if y { 1.0 } else { 0.0 }
                })
                .collect();
            Ok((value, grad))
        }
        BaselineLoss::Softmax => {
            let positives = truth.iter().filter(|&&y| y).count() as f64;
            let probs = softmax(scores)?;
            let log_probs = log_softmax(scores)?;
            let mut value = 0.0;
            let grad = probs
                .iter()
                .zip(truth)
                .zip(&log_probs)
                .map(|((&p, &y), &lp)| {
                    let target = if y { 1.0 / positives } else { 0.0 };
                    value -= target * lp;
                    p - target
                })
                .collect();
            Ok((value, grad))
        }
    }
}

pub fn baseline_fit(
    dataset: &Dataset,
    vocab: &LabelVocab,
    cfg: &TrainConfig,
    loss: BaselineLoss,
) -> Result<BaselineOutcome> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    let dim = dataset.feature_dim();
    if dim == 0 {
        return Err(Error::InvalidArgument("dataset has no features".into()));
    }
    let mut items: Vec<(usize, Vec<bool>)> = Vec::new();
    let mut skipped = 0;
    for (i, ex) in dataset.examples.iter().enumerate() {
        if loss == BaselineLoss::Softmax && ex.labels.is_empty() {
            skipped += 1;
            continue;
        }
        let mut truth = vec![false; vocab.len()];
        for id in vocab.ids(&ex.labels)? {
            truth[id] = true;
        }
        items.push((i, truth));
    }
    if items.is_empty() {
        return Err(Error::InvalidArgument("no usable training examples".into()));
    }

    let mut streams = TrainStreams::new(cfg.seed);
    let mut params = BaselineParams {
        weight: glorot_init(vocab.len(), dim, &mut streams.init),
        bias: Matrix::zeros(vocab.len(), 1),
    };
    let mut state = OptimizerState::new(&params);
    let mut scheduler = BatchScheduler::new(streams.shuffle, cfg.batch_size);
    let keep = 1.0 - cfg.dropout;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in scheduler.next_epoch(items.len()) {
            let mut grads = BaselineParams::zeros(vocab.len(), dim);
            for &k in &batch {
                let (index, truth) = &items[k];
                let mut rng = Rng::new(streams.dropout.next_u64());
                let features: Vec<f64> = dataset.examples[*index]
                    .features
                    .iter()
                    .map(|&x| {
                        if cfg.dropout > 0.0 {
                            if rng.bernoulli(keep) {
                                x / keep
                            } else {
                                0.0
                            }
                        } else {
                            x
                        }
                    })
                    .collect();
                let scores = baseline_scores(&features, &params)?;
                let (value, d_scores) = example_gradient(&scores, truth, loss)?;
                if !value.is_finite() {
                    return Err(Error::Diverged(format!("baseline loss became {value}")));
                }
                loss_sum += value;
                grads.weight.add_outer(&d_scores, &features);
                for (b, d) in grads.bias.data_mut().iter_mut().zip(&d_scores) {
                    *b += d;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grads.weight.scale(scale);
            grads.bias.scale(scale);
            rmsprop_update(&mut params, &grads, &mut state, cfg)?;
        }
        history.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / items.len() as f64,
            examples_skipped: skipped,
        });
    }
    Ok(BaselineOutcome { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SynthConfig};

    #[test]
    fn topk_of_all_labels_is_a_permutation() {
        let mut rng = Rng::new(1);
        let params = BaselineParams {
            weight: glorot_init(5, 3, &mut rng),
            bias: Matrix::zeros(5, 1),
        };
        let mut ids = baseline_topk(&[0.3, -0.2, 1.0], &params, 5).unwrap();
        ids.sort_unstable();
        assert_eq!(ids, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn hand_set_weights_rank_label_two_first() {
        let mut params = BaselineParams::zeros(4, 2);
        params.weight.set(2, 0, 3.0);
        params.weight.set(1, 1, 1.0);
        let ranked = baseline_topk(&[1.0, 1.0], &params, 2).unwrap();
        assert_eq!(ranked, vec![2, 1]);
        // Equal scores fall back to id order.
        assert_eq!(baseline_topk(&[0.0, 0.0], &params, 4).unwrap(), vec![0, 1, 2, 3]);
        assert!(baseline_topk(&[0.0], &params, 1).is_err());
    }

    fn separable() -> (Dataset, LabelVocab) {
        let cfg = SynthConfig {
            context_labels: 0,
            noise: 0.0,
            examples_per_group: 10,
            ..SynthConfig::default()
        };
        let ds = synth_generate(&cfg).unwrap();
        let vocab = LabelVocab::from_dataset(&ds);
        (ds, vocab)
    }

    #[test]
    fn separable_dominant_labels_are_learned() {
        let (ds, vocab) = separable();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            dropout: 0.0,
            epochs: 60,
            batch_size: 8,
            ..TrainConfig::default()
        };
        for loss in [BaselineLoss::Logistic, BaselineLoss::Softmax] {
            let out = baseline_fit(&ds, &vocab, &cfg, loss).unwrap();
            for ex in &ds.examples {
                let top = baseline_topk(&ex.features, &out.params, 1).unwrap();
                assert_eq!(vocab.label(top[0]).unwrap(), ex.labels[0]);
            }
            if loss == BaselineLoss::Logistic {
                for ex in &ds.examples {
                    let predicted = baseline_threshold(&ex.features, &out.params).unwrap();
                    assert_eq!(predicted, vocab.ids(&ex.labels).unwrap());
                }
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let (ds, vocab) = separable();
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = baseline_fit(&ds, &vocab, &cfg, BaselineLoss::Logistic).unwrap();
        let b = baseline_fit(&ds, &vocab, &cfg, BaselineLoss::Logistic).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let scores = [0.3, -1.2, 2.0];
        let truth = [true, false, true];
        for loss in [BaselineLoss::Logistic, BaselineLoss::Softmax] {
            let (_, grad) = example_gradient(&scores, &truth, loss).unwrap();
            for j in 0..3 {
                let mut plus = scores;
                let mut minus = scores;
                plus[j] += 1e-6;
                minus[j] -= 1e-6;
                let numeric = (example_gradient(&plus, &truth, loss).unwrap().0
                    - example_gradient(&minus, &truth, loss).unwrap().0)
                    / 2e-6;
                assert!((numeric - grad[j]).abs() < 1e-8, "{loss:?} {j}");
            }
        }
    }
}

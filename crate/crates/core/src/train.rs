//! Target construction, loss, the rmsprop optimiser and the training loop.

use std::cmp::Reverse;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelVocab};
use crate::error::{Error, Result};
use crate::model::{
    accumulate_gradients, forward_sequence, ForwardTrace, Hyper, LabelId, Mode, ModelParams, ParamKind, ParamSet,
};
use crate::numerics::Rng;

/// Examples per reduction chunk. Chunks are summed internally in example
/// order and then combined in chunk order, independent of thread count.
const REDUCTION_CHUNK: usize = 8;

/// Global label order used to serialise label sets into target sequences:
/// most frequent first, ties by label string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelOrder {
    order: Vec<LabelId>,
    rank: Vec<usize>,
}

impl LabelOrder {
    pub fn from_order(order: Vec<LabelId>) -> Result<Self> {
        let mut rank = vec![usize::MAX; order.len()];
        for (pos, &id) in order.iter().enumerate() {
            if id >= order.len() || rank[id] != usize::MAX {
                return Err(Error::InvalidArgument(format!(
                    "label order {order:?} is not a permutation"
                )));
            }
            rank[id] = pos;
        }
        Ok(Self { order, rank })
    }

    pub fn as_slice(&self) -> &[LabelId] {
        &self.order
    }

    pub fn rank(&self, id: LabelId) -> usize {
        self.rank[id]
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

pub fn order_labels(dataset: &Dataset, vocab: &LabelVocab) -> Result<LabelOrder> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot order labels of an empty dataset".into()));
    }
    let mut counts = vec![0usize; vocab.len()];
    for ex in &dataset.examples {
        for label in &ex.labels {
            counts[vocab.id(label)?] += 1;
        }
    }
    let mut order: Vec<LabelId> = (0..vocab.len()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then_with(|| vocab.labels()[a].cmp(&vocab.labels()[b]))
    });
    LabelOrder::from_order(order)
}

/// The example's labels sorted by the global order, followed by END.
pub fn build_target_sequence(labels: &[String], vocab: &LabelVocab, order: &LabelOrder) -> Result<Vec<LabelId>> {
    let mut ids = vocab.ids(labels)?;
    ids.sort_by_key(|&id| order.rank(id));
    ids.push(vocab.end_id());
    Ok(ids)
}

/// Mean negative log-probability of the targets, `-(1/T) Σ ln p_t[target_t]`.
pub fn sequence_loss(trace: &ForwardTrace, targets: &[LabelId]) -> Result<f64> {
    if trace.len() != targets.len() {
        return Err(Error::Shape(format!(
            "trace has {} steps but {} targets were given",
            trace.len(),
            targets.len()
        )));
    }
    if targets.is_empty() {
        return Err(Error::InvalidSequence("empty target sequence".into()));
    }
    let total: f64 = trace
        .steps
        .iter()
        .zip(targets)
        .map(|(step, &t)| -step.probs[t].ln())
        .sum();
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub momentum: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            rms_decay: 0.9,
            momentum: 0.9,
            epsilon: 1e-6,
            weight_decay: 1e-4,
            dropout: 0.5,
            batch_size: 32,
            epochs: 20,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must lie in [0, 1)")))
            }
        };
        unit("rms_decay", self.rms_decay)?;
        unit("momentum", self.momentum)?;
        unit("dropout", self.dropout)?;
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("learning_rate and epsilon must be > 0".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Running mean of squared gradients and momentum buffer per parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cache: Vec<Vec<f64>>,
    pub velocity: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.params().iter().map(|(_, _, m)| vec![0.0; m.len()]).collect();
        Self {
            cache: zeros.clone(),
            velocity: zeros,
            step: 0,
        }
    }
}

/// One rmsprop step with momentum. Weight decay is added to the gradient of
/// weight matrices only; biases and embedding rows are not decayed.
pub fn rmsprop_update<P: ParamSet>(
    params: &mut P,
    grads: &P,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    let grad_list = grads.params();
    if grad_list.len() != state.cache.len() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    for (name, _, g) in &grad_list {
        if !g.is_finite() {
            return Err(Error::Diverged(format!("non-finite gradient in `{name}`")));
        }
    }
    for (slot, ((name, kind, theta), (_, _, g))) in params.params_mut().into_iter().zip(&grad_list).enumerate() {
        if theta.shape() != g.shape() || state.cache[slot].len() != theta.len() {
            return Err(Error::Shape(format!("gradient for `{name}` has the wrong shape")));
        }
        let decay = if kind == ParamKind::Weight {
            cfg.weight_decay
        } else {
            0.0
        };
        let cache = &mut state.cache[slot];
        let velocity = &mut state.velocity[slot];
        for (j, (t, &gj)) in theta.data_mut().iter_mut().zip(g.data()).enumerate() {
            let grad = gj + decay * *t;
            cache[j] = cfg.rms_decay * cache[j] + (1.0 - cfg.rms_decay) * grad * grad;
            velocity[j] = cfg.momentum * velocity[j] + cfg.learning_rate * grad / (cache[j].sqrt() + cfg.epsilon);
            *t -= velocity[j];
        }
        if !theta.is_finite() {
            return Err(Error::Diverged(format!("parameter `{name}` became non-finite")));
        }
    }
    state.step += 1;
    Ok(())
}

/// Deterministic epoch shuffling into mini-batches.
#[derive(Debug, Clone)]
pub struct BatchScheduler {
    rng: Rng,
    batch_size: usize,
}

impl BatchScheduler {
    pub fn new(rng: Rng, batch_size: usize) -> Self {
        Self { rng, batch_size }
    }

    /// Shuffles `0..n` and cuts it into consecutive batches.
    pub fn next_epoch(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        self.rng.shuffle(&mut order);
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// One training item: image features and the teacher-forced target sequence.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub features: &'a [f64],
    pub targets: &'a [LabelId],
}

/// Mean gradient and mean loss over `items`. `dropout_seeds[i]` seeds the
/// dropout masks of item `i`.
pub fn batch_gradient(
    params: &ModelParams,
    items: &[TrainItem<'_>],
    mode: Mode,
    dropout_seeds: &[u64],
) -> Result<(ModelParams, f64)> {
    assert_eq!(items.len(), dropout_seeds.len());
    let chunks: Vec<Result<(ModelParams, f64)>> = items
        .par_chunks(REDUCTION_CHUNK)
        .zip(dropout_seeds.par_chunks(REDUCTION_CHUNK))
        .map(|(chunk, seeds)| {
            let mut grads = ModelParams::zeros(params.hyper);
            let mut loss_sum = 0.0;
            for (item, &seed) in chunk.iter().zip(seeds) {
                let mut rng = Rng::new(seed);
                let trace = forward_sequence(item.features, item.targets, params, mode, &mut rng)?;
                let loss = sequence_loss(&trace, item.targets)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged(format!("loss became {loss}")));
                }
                loss_sum += loss;
                accumulate_gradients(&trace, item.features, params, &mut grads, 1.0)?;
            }
            Ok((grads, loss_sum))
        })
        .collect();

    let mut total = ModelParams::zeros(params.hyper);
    let mut loss_sum = 0.0;
    for chunk in chunks {
        let (grads, loss) = chunk?;
        total.add_assign(&grads);
        loss_sum += loss;
    }
    let n = items.len().max(1) as f64;
    total.scale(1.0 / n);
    Ok((total, loss_sum / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub examples_skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub order: LabelOrder,
    pub history: Vec<EpochRecord>,
}

/// Streams derived from the training seed, in the order they are forked.
pub(crate) struct TrainStreams {
    pub init: Rng,
    pub shuffle: Rng,
    pub dropout: Rng,
}

impl TrainStreams {
    pub fn new(seed: u64) -> Self {
        let mut root = Rng::new(seed);
        Self {
            init: root.fork(),
            shuffle: root.fork(),
            dropout: root.fork(),
        }
    }
}

/// Trains the label-chain model with teacher forcing.
///
/// Examples with an empty label set have no target sequence and are skipped;
/// the count is reported in every history record.
pub fn fit(dataset: &Dataset, vocab: &LabelVocab, hyper: Hyper, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if vocab.is_empty() {
        return Err(Error::Config("vocabulary is empty".into()));
    }
    hyper.validate()?;
    if hyper.vocab_size != vocab.len() || hyper.feature_dim != dataset.feature_dim() {
        return Err(Error::Config(format!(
            "hyper-parameters ({} labels, {} features) do not match the data ({} labels, {} features)",
            hyper.vocab_size,
            hyper.feature_dim,
            vocab.len(),
            dataset.feature_dim()
        )));
    }

    let order = order_labels(dataset, vocab)?;
    let mut targets: Vec<(usize, Vec<LabelId>)> = Vec::new();
    let mut skipped = 0;
    for (i, ex) in dataset.examples.iter().enumerate() {
        if ex.labels.is_empty() {
            skipped += 1;
            continue;
        }
        targets.push((i, build_target_sequence(&ex.labels, vocab, &order)?));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no example has any label".into()));
    }

    let mut streams = TrainStreams::new(cfg.seed);
    let mut params = ModelParams::init(hyper, &mut streams.init)?;
    let mut state = OptimizerState::new(&params);
    let mut scheduler = BatchScheduler::new(streams.shuffle, cfg.batch_size);
    let mode = Mode::Train { dropout: cfg.dropout };
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut loss_sum = 0.0;
        for batch in scheduler.next_epoch(targets.len()) {
            let items: Vec<TrainItem<'_>> = batch
                .iter()
                .map(|&k| TrainItem {
                    features: &dataset.examples[targets[k].0].features,
                    targets: &targets[k].1,
                })
                .collect();
            let seeds: Vec<u64> = (0..items.len()).map(|_| streams.dropout.next_u64()).collect();
            let (grads, loss) = batch_gradient(&params, &items, mode, &seeds)?;
            loss_sum += loss * items.len() as f64;
            rmsprop_update(&mut params, &grads, &mut state, cfg)?;
        }
        let mean_loss = loss_sum / targets.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged(format!("epoch {epoch} mean loss is {mean_loss}")));
        }
        history.push(EpochRecord {
            epoch,
            mean_loss,
            examples_skipped: skipped,
        });
    }
    Ok(TrainOutcome { params, order, history })
}

/// Document frequency of each label, keyed by label string.
pub fn label_counts(dataset: &Dataset) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for ex in &dataset.examples {
        for l in &ex.labels {
            *counts.entry(l.as_str()).or_insert(0) += 1;
        }
    }
    counts
}

/// Labels sorted by descending count then ascending string, using only
/// [`label_counts`]. Used to cross-check [`order_labels`].
pub fn order_by_counts(dataset: &Dataset) -> Vec<String> {
    let counts = label_counts(dataset);
    let mut labels: Vec<(&str, usize)> = counts.into_iter().collect();
    labels.sort_by_key(|&(l, c)| (Reverse(c), l));
    labels.into_iter().map(|(l, _)| l.to_owned()).collect()
}

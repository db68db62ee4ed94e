//! Greedy and beam-search decoding of prediction paths.
//!
//! A path is a duplicate-free sequence of real labels closed by END. Its
//! log-probability is the sum of the per-step log-probabilities, including
//! the END step. Labels already on a path are masked, and END is masked
//! until the path holds `min_len` labels. A path that reaches `max_len`
//! labels is closed with END regardless of END's rank at that step.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{infer_step, score_labels, LabelId, ModelParams};
use crate::numerics::log_softmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub top_paths: usize,
}

impl BeamConfig {
    pub fn new(beam_width: usize, min_len: usize, max_len: usize, top_paths: usize) -> Result<Self> {
        let cfg = Self {
            beam_width,
            min_len,
            max_len,
            top_paths,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Single-path decoding with the given length limits.
    pub fn greedy(min_len: usize, max_len: usize) -> Self {
        Self {
            beam_width: 1,
            min_len,
            max_len,
            top_paths: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be >= 1".into()));
        }
        if self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        if self.top_paths == 0 || self.top_paths > self.beam_width {
            return Err(Error::Config(format!(
                "top_paths {} must lie in 1..={}",
                self.top_paths, self.beam_width
            )));
        }
        Ok(())
    }

    /// Length limits clipped to the vocabulary size.
    fn limits(&self, vocab_size: usize) -> (usize, usize) {
        let max_len = self.max_len.min(vocab_size);
        (self.min_len.min(max_len), max_len)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPath {
    pub labels: Vec<LabelId>,
    pub log_prob: f64,
    pub terminated: bool,
    /// LSTM state after consuming START and every label on the path.
    /// Dropped once the path is terminated.
    pub state: Option<Vec<f64>>,
    joint: Option<Vec<f64>>,
}

impl PredictionPath {
    fn root(params: &ModelParams, image: &[f64]) -> Result<Self> {
        let zero = vec![0.0; params.hyper.state_dim];
        let (lstm, joint) = infer_step(params, image, &zero, params.hyper.start_id())?;
        Ok(Self {
            labels: Vec::new(),
            log_prob: 0.0,
            terminated: false,
            state: Some(lstm.state),
            joint: Some(joint),
        })
    }

    fn terminate(&self, end_log_prob: f64) -> Self {
        Self {
            labels: self.labels.clone(),
            log_prob: self.log_prob + end_log_prob,
            terminated: true,
            state: None,
            joint: None,
        }
    }

    fn extend(&self, label: LabelId, log_prob: f64, params: &ModelParams, image: &[f64]) -> Result<Self> {
        let state = self.state.as_deref().expect("open path keeps its state");
        let (lstm, joint) = infer_step(params, image, state, label)?;
        let mut labels = self.labels.clone();
        labels.push(label);
        Ok(Self {
            labels,
            log_prob: self.log_prob + log_prob,
            terminated: false,
            state: Some(lstm.state),
            joint: Some(joint),
        })
    }

    /// Log-probabilities of every next token given the path, with masked
    /// entries at `-inf`.
    fn next_log_probs(&self, params: &ModelParams, min_len: usize) -> Result<Vec<f64>> {
        let joint = self.joint.as_deref().expect("open path keeps its joint embedding");
        let mut mask = self.labels.clone();
        if self.labels.len() < min_len {
            mask.push(params.hyper.end_id());
        }
        log_softmax(&score_labels(joint, params, &mask)?)
    }
}

/// Higher log-probability first; ties by label sequence (smaller ids, then
/// shorter paths).
fn path_order(a: &PredictionPath, b: &PredictionPath) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.labels.cmp(&b.labels))
}

/// Token ids sorted by descending log-probability, ties by id; masked
/// entries are left out.
fn ranked_tokens(log_probs: &[f64]) -> Vec<LabelId> {
    let mut ids: Vec<LabelId> = (0..log_probs.len())
        .filter(|&i| log_probs[i] != f64::NEG_INFINITY)
        .collect();
    ids.sort_by(|&a, &b| log_probs[b].total_cmp(&log_probs[a]).then(a.cmp(&b)));
    ids
}

fn check_image(params: &ModelParams, image: &[f64]) -> Result<()> {
    if image.len() != params.hyper.feature_dim {
        return Err(Error::Shape(format!(
            "image feature has length {}, model expects {}",
            image.len(),
            params.hyper.feature_dim
        )));
    }
    Ok(())
}

/// Picks the most probable unmasked token at every step.
pub fn greedy_decode(image: &[f64], params: &ModelParams, cfg: &BeamConfig) -> Result<PredictionPath> {
    check_image(params, image)?;
    let end = params.hyper.end_id();
    let (min_len, max_len) = cfg.limits(params.hyper.vocab_size);
    let mut path = PredictionPath::root(params, image)?;
    loop {
        let log_probs = path.next_log_probs(params, min_len)?;
        if path.labels.len() >= max_len {
            return Ok(path.terminate(log_probs[end]));
        }
        let best = ranked_tokens(&log_probs)[0];
        if best == end {
            return Ok(path.terminate(log_probs[end]));
        }
        path = path.extend(best, log_probs[best], params, image)?;
    }
}

pub fn beam_search(image: &[f64], params: &ModelParams, cfg: &BeamConfig) -> Result<Vec<PredictionPath>> {
    beam_search_with_observer(image, params, cfg, |_| {})
}

/// Beam search that reports the intermediate path set after every step.
pub fn beam_search_with_observer<F>(
    image: &[f64],
    params: &ModelParams,
    cfg: &BeamConfig,
    mut observe: F,
) -> Result<Vec<PredictionPath>>
where
    F: FnMut(&[PredictionPath]),
{
    cfg.validate()?;
    check_image(params, image)?;
    let end = params.hyper.end_id();
    let (min_len, max_len) = cfg.limits(params.hyper.vocab_size);
    let width = cfg.beam_width;

    let mut intermediate = vec![PredictionPath::root(params, image)?];
    let mut candidates: Vec<PredictionPath> = Vec::new();

    while !intermediate.is_empty() {
        let mut children: Vec<(usize, LabelId, f64, f64)> = Vec::new();
        for (parent, path) in intermediate.iter().enumerate() {
            let log_probs = path.next_log_probs(params, min_len)?;
            if path.labels.len() >= max_len {
                candidates.push(path.terminate(log_probs[end]));
                continue;
            }
            for token in ranked_tokens(&log_probs).into_iter().take(width) {
                if token == end {
                    candidates.push(path.terminate(log_probs[end]));
                } else {
                    children.push((parent, token, log_probs[token], path.log_prob + log_probs[token]));
                }
            }
        }

        children.sort_by(|a, b| {
            b.3.total_cmp(&a.3).then_with(|| {
                let la = intermediate[a.0].labels.iter().chain([&a.1]);
                let lb = intermediate[b.0].labels.iter().chain([&b.1]);
                la.cmp(lb)
            })
        });
        children.truncate(width);
        intermediate = children
            .into_iter()
            .map(|(parent, token, step, _)| intermediate[parent].extend(token, step, params, image))
            .collect::<Result<_>>()?;
        observe(&intermediate);

        if candidates.len() >= cfg.top_paths && !intermediate.is_empty() {
            candidates.sort_by(path_order);
            let threshold = candidates[cfg.top_paths - 1].log_prob;
            if intermediate[0].log_prob < threshold {
                break;
            }
        }
    }

    candidates.sort_by(path_order);
    candidates.truncate(cfg.top_paths);
    Ok(candidates)
}

/// Ranked labels of the best path, truncated to `k`. With `min_len >= k`
/// exactly `k` labels come back; with `min_len = 0` the best path may be
/// shorter than `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedPrediction {
    pub labels: Vec<LabelId>,
    pub log_prob: f64,
}

pub fn predict_topk(image: &[f64], params: &ModelParams, k: usize, cfg: &BeamConfig) -> Result<RankedPrediction> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    let paths = beam_search(image, params, cfg)?;
    let best = paths
        .into_iter()
        .next()
        .ok_or_else(|| Error::InvalidArgument("beam search produced no path".into()))?;
    let mut labels = best.labels;
    labels.truncate(k);
    Ok(RankedPrediction {
        labels,
        log_prob: best.log_prob,
    })
}

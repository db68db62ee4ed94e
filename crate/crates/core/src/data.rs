//! Datasets of precomputed image features with label sets, stored as JSON
//! Lines, and a synthetic generator with planted label co-occurrence.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LabelId;
use crate::numerics::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub id: String,
    pub features: Vec<f64>,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let dataset = Self { examples };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Feature dimension shared by every example (0 for an empty dataset).
    pub fn feature_dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    fn validate(&self) -> Result<()> {
        let dim = self.feature_dim();
        let mut ids = HashSet::new();
        for (i, ex) in self.examples.iter().enumerate() {
            validate_example(ex, dim).map_err(|msg| Error::Parse { line: i + 1, msg })?;
            if !ids.insert(ex.id.as_str()) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate example id `{}`", ex.id),
                });
            }
        }
        Ok(())
    }

    /// Deterministically splits off `fraction` of the examples as a held-out set.
    /// Returns `(train, test)`; both keep the original relative order.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::Config(format!("holdout fraction {fraction} not in [0, 1)")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        Rng::new(seed).shuffle(&mut order);
        let n_test = (self.len() as f64 * fraction).round() as usize;
        let mut is_test = vec![false; self.len()];
        for &i in &order[..n_test] {
            is_test[i] = true;
        }
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (ex, test_flag) in self.examples.iter().zip(is_test) {
            if test_flag {
                test.push(ex.clone());
            } else {
                train.push(ex.clone());
            }
        }
        Ok((Dataset { examples: train }, Dataset { examples: test }))
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut writer, ex)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_jsonl(BufWriter::new(File::create(path)?))
    }
}

fn validate_example(ex: &Example, dim: usize) -> std::result::Result<(), String> {
    if ex.features.len() != dim {
        return Err(format!(
            "example `{}` has {} features, expected {dim}",
            ex.id,
            ex.features.len()
        ));
    }
    if ex.features.iter().any(|v| !v.is_finite()) {
        return Err(format!("example `{}` has non-finite features", ex.id));
    }
    let mut seen = HashSet::new();
    for label in &ex.labels {
        if !seen.insert(label.as_str()) {
            return Err(format!("example `{}` repeats label `{label}`", ex.id));
        }
    }
    Ok(())
}

/// Label strings mapped to dense ids `0..K`, assigned in sorted string order.
/// END is id `K` and START is id `K + 1`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, LabelId>,
}

impl LabelVocab {
    /// Builds a vocabulary from labels given in id order.
    pub fn from_labels(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(labels.len());
        for (id, label) in labels.iter().enumerate() {
            if index.insert(label.clone(), id).is_some() {
                return Err(Error::InvalidArgument(format!("label `{label}` listed twice")));
            }
        }
        Ok(Self { labels, index })
    }

    /// Sorted distinct labels of `dataset`.
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let set: BTreeSet<&str> = dataset
            .examples
            .iter()
            .flat_map(|e| e.labels.iter().map(String::as_str))
            .collect();
        let labels: Vec<String> = set.into_iter().map(str::to_owned).collect();
        Self::from_labels(labels).expect("labels are distinct")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn end_id(&self) -> LabelId {
        self.labels.len()
    }

    pub fn start_id(&self) -> LabelId {
        self.labels.len() + 1
    }

    pub fn id(&self, label: &str) -> Result<LabelId> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))
    }

    pub fn label(&self, id: LabelId) -> Result<&str> {
        self.labels.get(id).map(String::as_str).ok_or(Error::LabelOutOfRange {
            id,
            limit: self.labels.len(),
        })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn ids(&self, labels: &[String]) -> Result<Vec<LabelId>> {
        labels.iter().map(|l| self.id(l)).collect()
    }
}

/// Parses a JSON Lines dataset. Blank lines are ignored.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut dim = None;
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let expected = *dim.get_or_insert(ex.features.len());
        validate_example(&ex, expected).map_err(|msg| Error::Parse { line: line_no, msg })?;
        if !ids.insert(ex.id.clone()) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate example id `{}`", ex.id),
            });
        }
        examples.push(ex);
    }
    Ok(Dataset { examples })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<(Dataset, LabelVocab)> {
    let dataset = read_dataset(File::open(path)?)?;
    let vocab = LabelVocab::from_dataset(&dataset);
    Ok((dataset, vocab))
}

/// Parameters of the planted co-occurrence generator.
///
/// Every group has one dominant label whose presence is written into the
/// features, and `context_labels` labels that carry no feature signal and
/// co-occur with the dominant label with probability `co_occurrence`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub groups: usize,
    pub context_labels: usize,
    pub co_occurrence: f64,
    pub feature_dim: usize,
    pub signal: f64,
    pub noise: f64,
    pub examples_per_group: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            context_labels: 2,
            co_occurrence: 0.9,
            feature_dim: 8,
            signal: 1.0,
            noise: 0.3,
            examples_per_group: 200,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups == 0 || self.examples_per_group == 0 {
            return Err(Error::Config("groups and examples_per_group must be >= 1".into()));
        }
        if self.groups * (1 + self.context_labels) < 2 {
            return Err(Error::Config("synthetic vocabulary needs at least 2 labels".into()));
        }
        if self.feature_dim < self.groups {
            return Err(Error::Config(format!(
                "feature_dim {} is smaller than the number of groups {}",
                self.feature_dim, self.groups
            )));
        }
        if !(self.co_occurrence > 0.0 && self.co_occurrence <= 1.0) {
            return Err(Error::Config(format!(
                "co_occurrence {} not in (0, 1]",
                self.co_occurrence
            )));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite() && self.signal.is_finite()) {
            return Err(Error::Config("noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Width of the feature block owned by each group.
    pub fn block_width(&self) -> usize {
        self.feature_dim / self.groups
    }

    pub fn dominant_label(group: usize) -> String {
        format!("g{group}-dominant")
    }

    pub fn context_label(group: usize, index: usize) -> String {
        format!("g{group}-context{index}")
    }

    /// Group and context index of a context label, `None` for dominant or foreign labels.
    pub fn parse_context_label(label: &str) -> Option<(usize, usize)> {
        let rest = label.strip_prefix('g')?;
        let (group, context) = rest.split_once("-context")?;
        Some((group.parse().ok()?, context.parse().ok()?))
    }

    pub fn group_of(label: &str) -> Option<usize> {
        let rest = label.strip_prefix('g')?;
        rest.split_once('-')?.0.parse().ok()
    }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let width = cfg.block_width();
    let mut examples = Vec::with_capacity(cfg.groups * cfg.examples_per_group);
    for group in 0..cfg.groups {
        for i in 0..cfg.examples_per_group {
            let mut labels = vec![SynthConfig::dominant_label(group)];
            for c in 0..cfg.context_labels {
                if rng.bernoulli(cfg.co_occurrence) {
                    labels.push(SynthConfig::context_label(group, c));
                }
            }
            let features = (0..cfg.feature_dim)
                .map(|d| {
                    let base = if d / width == group && d < width * cfg.groups {
                        cfg.signal
                    } else {
                        0.0
                    };
                    base + cfg.noise * rng.normal()
                })
                .collect();
            examples.push(Example {
                id: format!("g{group}-{i:05}"),
                features,
                labels,
            });
        }
    }
    Ok(Dataset { examples })
}

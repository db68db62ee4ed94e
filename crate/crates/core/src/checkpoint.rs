//! JSON checkpoint holding hyperparameters, vocabulary, label order and every
//! parameter matrix by name.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineParams;
use crate::data::LabelVocab;
use crate::error::{Error, Result};
use crate::model::{Hyper, ModelParams, ParamSet};
use crate::numerics::Matrix;
use crate::train::LabelOrder;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format_version: u32,
    hyper: Hyper,
    vocab: Vec<String>,
    label_order: Vec<usize>,
    params: BTreeMap<String, Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    baseline_params: Option<BTreeMap<String, Matrix>>,
}

/// Everything needed to decode with a trained model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: LabelVocab,
    pub order: LabelOrder,
    pub params: ModelParams,
    pub baseline: Option<BaselineParams>,
}

fn to_map<P: ParamSet>(params: &P) -> BTreeMap<String, Matrix> {
    params
        .params()
        .into_iter()
        .map(|(name, _, m)| (name.to_string(), m.clone()))
        .collect()
}

fn fill_from_map<P: ParamSet>(target: &mut P, mut map: BTreeMap<String, Matrix>, section: &str) -> Result<()> {
    for (name, _, slot) in target.params_mut() {
        let m = map
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("{section}: missing parameter `{name}`")))?;
        if m.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "{section}: `{name}` has shape {:?}, expected {:?}",
                m.shape(),
                slot.shape()
            )));
        }
        *slot = m;
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::Checkpoint(format!("{section}: unexpected parameter `{extra}`")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new(vocab: LabelVocab, order: LabelOrder, params: ModelParams) -> Result<Self> {
        let ckpt = Self {
            vocab,
            order,
            params,
            baseline: None,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn hyper(&self) -> Hyper {
        self.params.hyper
    }

    pub fn validate(&self) -> Result<()> {
        let hyper = self.params.hyper;
        hyper.validate()?;
        self.params.validate()?;
        if self.vocab.len() != hyper.vocab_size {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} labels, hyper says {}",
                self.vocab.len(),
                hyper.vocab_size
            )));
        }
        if self.order.len() != hyper.vocab_size {
            return Err(Error::Checkpoint(format!(
                "label order has {} entries, hyper says {}",
                self.order.len(),
                hyper.vocab_size
            )));
        }
        if let Some(b) = &self.baseline {
            b.validate()?;
            if b.vocab_size() != hyper.vocab_size || b.feature_dim() != hyper.feature_dim {
                return Err(Error::Checkpoint(format!(
                    "baseline is {}x{}, expected {}x{}",
                    b.vocab_size(),
                    b.feature_dim(),
                    hyper.vocab_size,
                    hyper.feature_dim
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let doc = Document {
            format_version: FORMAT_VERSION,
            hyper: self.params.hyper,
            vocab: self.vocab.labels().to_vec(),
            label_order: self.order.as_slice().to_vec(),
            params: to_map(&self.params),
            baseline_params: self.baseline.as_ref().map(to_map),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format_version {}",
                doc.format_version
            )));
        }
        doc.hyper.validate()?;
        let vocab = LabelVocab::from_labels(doc.vocab.clone())?;
        if vocab.labels() != doc.vocab.as_slice() {
            return Err(Error::Checkpoint("vocabulary is not in sorted id order".into()));
        }
        let order = LabelOrder::from_order(doc.label_order)?;
        let mut params = ModelParams::zeros(doc.hyper);
        fill_from_map(&mut params, doc.params, "params")?;
        let baseline = match doc.baseline_params {
            Some(map) => {
                let mut b = BaselineParams::zeros(doc.hyper.vocab_size, doc.hyper.feature_dim);
                fill_from_map(&mut b, map, "baseline_params")?;
                Some(b)
            }
            None => None,
        };
        let ckpt = Self {
            vocab,
            order,
            params,
            baseline,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = self.to_json()?;
        let mut file = fs::File::create(path)?;
        file.write_all(text.as_bytes())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

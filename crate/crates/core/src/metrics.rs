//! Multi-label evaluation: per-class and overall precision/recall/F1,
//! MAP@N over per-image label rankings, and nearest neighbours in the
//! label embedding space.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LabelId, ModelParams};
use crate::numerics::{dot, norm};

/// An image id with a label list: ranked for predictions, unordered for truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub labels: Vec<String>,
}

impl Annotation {
    pub fn new(id: impl Into<String>, labels: &[&str]) -> Self {
        Self {
            id: id.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Pairs every truth entry with the prediction carrying the same id.
/// Truth entries with no labels are dropped; their count is returned.
fn align<'a>(
    predictions: &'a [Annotation],
    truth: &'a [Annotation],
) -> Result<(Vec<(&'a Annotation, &'a Annotation)>, usize)> {
    let mut by_id: HashMap<&str, &Annotation> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::IdMismatch(format!("prediction id `{}` appears twice", p.id)));
        }
        let distinct: HashSet<&str> = p.labels.iter().map(String::as_str).collect();
        if distinct.len() != p.labels.len() {
            return Err(Error::InvalidArgument(format!(
                "prediction for `{}` repeats a label",
                p.id
            )));
        }
    }
    if predictions.len() != truth.len() {
        return Err(Error::IdMismatch(format!(
            "{} predictions for {} ground-truth images",
            predictions.len(),
            truth.len()
        )));
    }
    let mut pairs = Vec::with_capacity(truth.len());
    let mut excluded = 0;
    for t in truth {
        let p = by_id
            .get(t.id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("no prediction for image `{}`", t.id)))?;
        if t.labels.is_empty() {
            excluded += 1;
        } else {
            pairs.push((*p, t));
        }
    }
    Ok((pairs, excluded))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverallMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Images skipped because their ground truth is empty.
    pub excluded: usize,
}

/// Pooled precision and recall over all images.
pub fn overall_metrics(predictions: &[Annotation], truth: &[Annotation]) -> Result<OverallMetrics> {
    let (pairs, excluded) = align(predictions, truth)?;
    let (mut hits, mut predicted, mut relevant) = (0, 0, 0);
    for (p, t) in pairs {
        let truth_set: HashSet<&str> = t.labels.iter().map(String::as_str).collect();
        hits += p.labels.iter().filter(|l| truth_set.contains(l.as_str())).count();
        predicted += p.labels.len();
        relevant += truth_set.len();
    }
    let precision = ratio(hits, predicted);
    let recall = ratio(hits, relevant);
    Ok(OverallMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    /// Images whose ground truth contains the label.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub table: Vec<ClassStats>,
}

/// Per-class precision and recall averaged uniformly over every vocabulary
/// label. A class with a zero denominator scores 0.
pub fn per_class_metrics(
    predictions: &[Annotation],
    truth: &[Annotation],
    vocab: &[String],
) -> Result<PerClassMetrics> {
    let (pairs, _) = align(predictions, truth)?;
    let index: HashMap<&str, usize> = vocab.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let lookup = |label: &str| {
        index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(label.to_owned()))
    };
    let mut tp = vec![0usize; vocab.len()];
    let mut fp = vec![0usize; vocab.len()];
    let mut fn_ = vec![0usize; vocab.len()];
    for (p, t) in pairs {
        let truth_ids: HashSet<usize> = t.labels.iter().map(|l| lookup(l)).collect::<Result<_>>()?;
        let pred_ids: HashSet<usize> = p.labels.iter().map(|l| lookup(l)).collect::<Result<_>>()?;
        for &c in &pred_ids {
            if truth_ids.contains(&c) {
                tp[c] += 1;
            } else {
                fp[c] += 1;
            }
        }
        for &c in truth_ids.difference(&pred_ids) {
            fn_[c] += 1;
        }
    }
    let table: Vec<ClassStats> = vocab
        .iter()
        .enumerate()
        .map(|(c, label)| ClassStats {
            label: label.clone(),
            precision: ratio(tp[c], tp[c] + fp[c]),
            recall: ratio(tp[c], tp[c] + fn_[c]),
            support: tp[c] + fn_[c],
        })
        .collect();
    let n = vocab.len().max(1) as f64;
    let precision = table.iter().map(|c| c.precision).sum::<f64>() / n;
    let recall = table.iter().map(|c| c.recall).sum::<f64>() / n;
    Ok(PerClassMetrics {
        precision,
        recall,
        f1: f1(precision, recall),
        table,
    })
}

/// Average precision of one ranking truncated to `n`, normalised by
/// `min(n, |truth|)`.
pub fn average_precision(ranked: &[String], truth: &[String], n: usize) -> Result<f64> {
    let mut seen = HashSet::new();
    if let Some(dup) = ranked.iter().find(|l| !seen.insert(l.as_str())) {
        return Err(Error::InvalidArgument(format!("label `{dup}` ranked twice")));
    }
    let truth: HashSet<&str> = truth.iter().map(String::as_str).collect();
    let denom = n.min(truth.len());
    if denom == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, label) in ranked.iter().take(n).enumerate() {
        if truth.contains(label.as_str()) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Ok(sum / denom as f64)
}

/// Mean over images (empty ground truth excluded) of [`average_precision`].
pub fn map_at_n(ranked: &[Annotation], truth: &[Annotation], n: usize) -> Result<f64> {
    let (pairs, _) = align(ranked, truth)?;
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (p, t) in &pairs {
        total += average_precision(&p.labels, &t.labels, n)?;
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "C_P")]
    pub c_p: f64,
    #[serde(rename = "C_R")]
    pub c_r: f64,
    #[serde(rename = "C_F1")]
    pub c_f1: f64,
    #[serde(rename = "O_P")]
    pub o_p: f64,
    #[serde(rename = "O_R")]
    pub o_r: f64,
    #[serde(rename = "O_F1")]
    pub o_f1: f64,
    #[serde(rename = "MAP")]
    pub map: f64,
    pub per_class: Vec<ClassStats>,
}

fn truncate(annotations: &[Annotation], len: usize) -> Vec<Annotation> {
    annotations
        .iter()
        .map(|a| Annotation {
            id: a.id.clone(),
            labels: a.labels.iter().take(len).cloned().collect(),
        })
        .collect()
}

/// Full report: precision/recall on the top `k` of each ranking and MAP on
/// the top `n`.
pub fn evaluate(
    predictions: &[Annotation],
    truth: &[Annotation],
    vocab: &[String],
    k: usize,
    n: usize,
) -> Result<MetricsReport> {
    let top_k = truncate(predictions, k);
    let overall = overall_metrics(&top_k, truth)?;
    let per_class = per_class_metrics(&top_k, truth, vocab)?;
    let map = map_at_n(&truncate(predictions, n), truth, n)?;
    Ok(MetricsReport {
        k,
        n,
        c_p: per_class.precision,
        c_r: per_class.recall,
        c_f1: per_class.f1,
        o_p: overall.precision,
        o_r: overall.recall,
        o_f1: overall.f1,
        map,
        per_class: per_class.table,
    })
}

/// Query vector for an image: its projection into the label embedding space.
pub fn image_query(params: &ModelParams, image: &[f64]) -> Result<Vec<f64>> {
    if image.len() != params.hyper.feature_dim {
        return Err(Error::Shape(format!(
            "image feature has length {}, model expects {}",
            image.len(),
            params.hyper.feature_dim
        )));
    }
    Ok(params.proj_image.matvec(image))
}

/// The `m` real labels whose embedding rows have the highest cosine
/// similarity to `query`, ties by label id.
pub fn nearest_labels(
    query: &[f64],
    params: &ModelParams,
    m: usize,
    exclude: &[LabelId],
) -> Result<Vec<(LabelId, f64)>> {
    if query.len() != params.hyper.embed_dim {
        return Err(Error::Shape(format!(
            "query has length {}, embeddings have {}",
            query.len(),
            params.hyper.embed_dim
        )));
    }
    let q_norm = norm(query);
    if q_norm == 0.0 {
        return Err(Error::InvalidArgument("query vector has zero norm".into()));
    }
    let mut scored: Vec<(LabelId, f64)> = (0..params.hyper.vocab_size)
        .filter(|id| !exclude.contains(id))
        .map(|id| {
            let row = params.label_embedding.row(id);
            let r_norm = norm(row);
            let sim = if r_norm == 0.0 {
                0.0
            } else {
                dot(row, query) / (r_norm * q_norm)
            };
            (id, sim)
        })
        .collect();
    if m > scored.len() {
        return Err(Error::InvalidArgument(format!(
            "asked for {m} neighbours but only {} labels are eligible",
            scored.len()
        )));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(m);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Hyper;
    use crate::numerics::Matrix;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ann(id: &str, labels: &[&str]) -> Annotation {
        Annotation::new(id, labels)
    }

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let truth = vec![ann("1", &["a", "b"]), ann("2", &["c"])];
        let o = overall_metrics(&truth, &truth).unwrap();
        assert_eq!((o.precision, o.recall, o.f1), (1.0, 1.0, 1.0));
        let c = per_class_metrics(&truth, &truth, &strings(&["a", "b", "c"])).unwrap();
        assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
        assert_eq!(map_at_n(&truth, &truth, 2).unwrap(), 1.0);
    }

    #[test]
    fn two_image_overall_fixture() {
        let pred = vec![ann("1", &["a", "b"]), ann("2", &["c"])];
        let truth = vec![ann("1", &["a"]), ann("2", &["c", "d"])];
        let o = overall_metrics(&pred, &truth).unwrap();
        assert_abs_diff_eq!(o.precision, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.recall, 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.f1, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn no_predictions_score_zero() {
        let pred = vec![ann("1", &[]), ann("2", &[])];
        let truth = vec![ann("1", &["a"]), ann("2", &["b"])];
        let o = overall_metrics(&pred, &truth).unwrap();
        assert_eq!((o.precision, o.recall, o.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_truth_is_excluded() {
        let pred = vec![ann("1", &["a"]), ann("2", &["b"])];
        let truth = vec![ann("1", &["a"]), ann("2", &[])];
        let o = overall_metrics(&pred, &truth).unwrap();
        assert_eq!(o.excluded, 1);
        assert_eq!(o.precision, 1.0);
    }

    #[test]
    fn id_mismatch_is_an_error() {
        let pred = vec![ann("1", &["a"])];
        let truth = vec![ann("2", &["a"])];
        assert!(matches!(overall_metrics(&pred, &truth), Err(Error::IdMismatch(_))));
        assert!(overall_metrics(&pred, &[]).is_err());
    }

    #[test]
    fn per_class_hand_fixture() {
        // Class a: TP on images 1 and 2, FP on image 3, FN on image 4.
        let pred = vec![
            ann("1", &["a"]),
            ann("2", &["a", "b"]),
            ann("3", &["a", "c"]),
            ann("4", &["b"]),
        ];
        let truth = vec![
            ann("1", &["a"]),
            ann("2", &["a", "b"]),
            ann("3", &["c"]),
            ann("4", &["a", "c"]),
        ];
        let vocab = strings(&["a", "b", "c", "d"]);
        let c = per_class_metrics(&pred, &truth, &vocab).unwrap();
        let expected = [(2.0 / 3.0, 2.0 / 3.0, 3), (0.5, 1.0, 1), (1.0, 0.5, 2), (0.0, 0.0, 0)];
        for (row, (p, r, s)) in c.table.iter().zip(expected) {
            assert_abs_diff_eq!(row.precision, p, epsilon = 1e-15);
            assert_abs_diff_eq!(row.recall, r, epsilon = 1e-15);
            assert_eq!(row.support, s);
        }
        assert_abs_diff_eq!(c.precision, (2.0 / 3.0 + 0.5 + 1.0) / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.recall, (2.0 / 3.0 + 1.0 + 0.5) / 4.0, epsilon = 1e-15);
        let o = overall_metrics(&pred, &truth).unwrap();
        assert_abs_diff_eq!(o.precision, 4.0 / 6.0, epsilon = 1e-15);
        assert_abs_diff_eq!(o.recall, 4.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn unknown_label_in_per_class_is_an_error() {
        let truth = vec![ann("1", &["z"])];
        assert!(per_class_metrics(&truth, &truth, &strings(&["a"])).is_err());
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision(&strings(&["a"]), &strings(&["a"]), 1).unwrap(), 1.0);
        assert_eq!(
            average_precision(&strings(&["b", "a"]), &strings(&["a"]), 2).unwrap(),
            0.5
        );
        assert_eq!(
            average_precision(&strings(&["b", "c"]), &strings(&["a"]), 2).unwrap(),
            0.0
        );
        assert!(average_precision(&strings(&["a", "a"]), &strings(&["a"]), 2).is_err());
    }

    #[test]
    fn report_serialises_with_expected_keys() {
        let truth = vec![ann("1", &["a"])];
        let report = evaluate(&truth, &truth, &strings(&["a"]), 1, 1).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        for key in ["k", "N", "C_P", "C_R", "C_F1", "O_P", "O_R", "O_F1", "MAP", "per_class"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["per_class"][0]["support"], 1);
    }

    fn orthonormal_model() -> ModelParams {
        let hyper = Hyper::new(4, 6, 2, 2).unwrap();
        let mut p = ModelParams::zeros(hyper);
        p.label_embedding = Matrix::identity(6);
        p
    }

    #[test]
    fn nearest_label_of_its_own_row() {
        let p = orthonormal_model();
        let top = nearest_labels(p.label_embedding.row(2), &p, 1, &[]).unwrap();
        assert_eq!(top[0].0, 2);
        assert_abs_diff_eq!(top[0].1, 1.0, epsilon = 1e-15);
        let rest = nearest_labels(p.label_embedding.row(2), &p, 3, &[2]).unwrap();
        assert!(rest.iter().all(|(id, _)| *id != 2));
        assert_eq!(rest.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 3]);
    }

    #[test]
    fn nearest_label_errors() {
        let p = orthonormal_model();
        assert!(nearest_labels(&[0.0; 6], &p, 1, &[]).is_err());
        assert!(nearest_labels(&[1.0; 6], &p, 4, &[0]).is_err());
        assert!(nearest_labels(&[1.0; 5], &p, 1, &[]).is_err());
    }

    fn annotation_pairs() -> impl Strategy<Value = (Vec<Annotation>, Vec<Annotation>)> {
        let labels = ["a", "b", "c", "d", "e"];
        proptest::collection::vec(
            (
                proptest::sample::subsequence(labels.to_vec(), 0..=5).prop_shuffle(),
                proptest::sample::subsequence(labels.to_vec(), 1..=5),
            ),
            1..8,
        )
        .prop_map(|rows| {
            let mut pred = Vec::new();
            let mut truth = Vec::new();
            for (i, (p, t)) in rows.into_iter().enumerate() {
                pred.push(ann(&i.to_string(), &p));
                truth.push(ann(&i.to_string(), &t));
            }
            (pred, truth)
        })
    }

    proptest! {
        #[test]
        fn average_precision_is_bounded((pred, truth) in annotation_pairs(), n in 1usize..6) {
            for (p, t) in pred.iter().zip(&truth) {
                let ap = average_precision(&p.labels, &t.labels, n).unwrap();
                prop_assert!((0.0..=1.0).contains(&ap));
            }
        }

        #[test]
        fn dropping_a_false_positive_never_lowers_precision((pred, truth) in annotation_pairs()) {
            let before = overall_metrics(&pred, &truth).unwrap().precision;
            for (i, (p, t)) in pred.iter().zip(&truth).enumerate() {
                if let Some(pos) = p.labels.iter().position(|l| !t.labels.contains(l)) {
                    let mut fewer = pred.clone();
                    fewer[i].labels.remove(pos);
                    let after = overall_metrics(&fewer, &truth).unwrap().precision;
                    prop_assert!(after >= before - 1e-15);
                }
            }
        }

        #[test]
        fn metrics_stay_in_unit_interval((pred, truth) in annotation_pairs()) {
            let vocab = strings(&["a", "b", "c", "d", "e"]);
            let r = evaluate(&pred, &truth, &vocab, 3, 3).unwrap();
            for v in [r.c_p, r.c_r, r.c_f1, r.o_p, r.o_r, r.o_f1, r.map] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeVector;

/// Relevance flags in ranked order.
pub type Relevance = Vec<bool>;

/// Fraction of queries with a relevant item in the top `k`.
///
/// Queries without any relevant item are skipped.
pub fn recall_at_k(rankings: &[Relevance], k: usize) -> f64 {
    let valid: Vec<&Relevance> = rankings.iter().filter(|r| r.contains(&true)).collect();
    if valid.is_empty() {
        return 0.0;
    }
    let hits = valid.iter().filter(|r| r.iter().take(k).any(|&x| x)).count();
    hits as f64 / valid.len() as f64
}

/// Mean over relevant positions of precision at that position.
pub fn average_precision(ranking: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in ranking.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

pub fn mean_ap(rankings: &[Relevance]) -> f64 {
    let aps: Vec<f64> = rankings.iter().filter_map(|r| average_precision(r)).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub map: f64,
    pub queries: usize,
    /// Queries with no relevant gallery item.
    pub excluded: usize,
}

pub fn retrieval_metrics(rankings: &[Relevance]) -> RetrievalMetrics {
    let excluded = rankings.iter().filter(|r| !r.contains(&true)).count();
    if excluded > 0 {
        log::warn!("{excluded} queries have no relevant gallery item and are excluded");
    }
    RetrievalMetrics {
        r1: recall_at_k(rankings, 1),
        r5: recall_at_k(rankings, 5),
        r10: recall_at_k(rankings, 10),
        map: mean_ap(rankings),
        queries: rankings.len() - excluded,
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttrMetrics {
    /// Mean over attributes of (TPR + TNR) / 2, label 1 counted as positive.
    pub ma: f64,
    pub acc: f64,
    pub prec: f64,
    pub rec: f64,
    pub f1: f64,
    /// Per-attribute balanced accuracy; `None` where no label is known.
    pub per_attribute: Vec<Option<f64>>,
    /// Attributes without any known label.
    pub excluded_attributes: Vec<usize>,
    /// Samples that entered the example-based metrics.
    pub samples: usize,
}

/// Label-based mA and example-based Acc / Prec / Rec / F1 over known labels.
///
/// When an attribute has labels of only one class, its balanced accuracy is the
/// rate of that class alone. For a sample, an empty predicted-positive set has
/// precision 1 if the true set is also empty and 0 otherwise (recall likewise);
/// an empty union has accuracy 1.
pub fn attr_metrics(predictions: &[AttributeVector], labels: &[AttributeVector]) -> AttrMetrics {
    assert_eq!(predictions.len(), labels.len(), "one prediction per label vector");
    let num_attr = labels.first().map_or(0, |l| l.values().len());

    let mut per_attribute = Vec::with_capacity(num_attr);
    let mut excluded_attributes = Vec::new();
    for a in 0..num_attr {
        let (mut tp, mut p, mut tn, mut n) = (0usize, 0usize, 0usize, 0usize);
        for (pred, label) in predictions.iter().zip(labels) {
            let Some(y) = label.get(a) else { continue };
            let yhat = pred.get(a).unwrap_or(0);
            if y == 1 {
                p += 1;
                tp += (yhat == 1) as usize;
            } else {
                n += 1;
                tn += (yhat == 0) as usize;
            }
        }
        let rates: Vec<f64> = [(tp, p), (tn, n)]
            .iter()
            .filter(|(_, d)| *d > 0)
            .map(|&(k, d)| k as f64 / d as f64)
            .collect();
        if rates.is_empty() {
            excluded_attributes.push(a);
            per_attribute.push(None);
        } else {
            per_attribute.push(Some(rates.iter().sum::<f64>() / rates.len() as f64));
        }
    }
    if !excluded_attributes.is_empty() {
        log::warn!("attributes {excluded_attributes:?} have no known labels and are excluded from mA");
    }
    let known: Vec<f64> = per_attribute.iter().flatten().copied().collect();
    let ma = if known.is_empty() { 0.0 } else { known.iter().sum::<f64>() / known.len() as f64 };

    let (mut acc, mut prec, mut rec) = (0.0, 0.0, 0.0);
    let mut samples = 0usize;
    for (pred, label) in predictions.iter().zip(labels) {
        let (mut inter, mut truth, mut guess, mut any) = (0usize, 0usize, 0usize, false);
        for (a, y) in label.known() {
            any = true;
            let yhat = pred.get(a).unwrap_or(0);
            truth += (y == 1) as usize;
            guess += (yhat == 1) as usize;
            inter += (y == 1 && yhat == 1) as usize;
        }
        if !any {
            continue;
        }
        samples += 1;
        let union = truth + guess - inter;
        acc += ratio_or(inter, union, 1.0);
        prec += ratio_or(inter, guess, if truth == 0 { 1.0 } else { 0.0 });
        rec += ratio_or(inter, truth, if guess == 0 { 1.0 } else { 0.0 });
    }
    let (acc, prec, rec) = if samples == 0 {
        (0.0, 0.0, 0.0)
    } else {
        let s = samples as f64;
        (acc / s, prec / s, rec / s)
    };
    let f1 = if prec + rec > 0.0 { 2.0 * prec * rec / (prec + rec) } else { 0.0 };
    AttrMetrics {
        ma,
        acc,
        prec,
        rec,
        f1,
        per_attribute,
        excluded_attributes,
        samples,
    }
}

fn ratio_or(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

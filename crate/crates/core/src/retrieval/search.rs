use std::cmp::Ordering;
use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attributes::tokenizer::effective_len;
use crate::attributes::{AttributeVector, PromptBank, NUM_ATTRIBUTES};
use crate::encoders::Model;
use crate::error::{Error, Result};
use crate::numcore::{Graph, Scalar, Tensor, Var};

pub const DEFAULT_SHORTLIST: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GalleryItem {
    pub image_id: String,
    pub person_id: String,
}

/// Encoded gallery: unit-norm features for stage 1, full image states for stage 2.
#[derive(Debug, Clone)]
pub struct Gallery<T: Scalar> {
    items: Vec<GalleryItem>,
    features: Vec<Vec<T>>,
    states: Vec<Tensor<T>>,
}

impl<T: Scalar> Gallery<T> {
    pub fn from_parts(items: Vec<GalleryItem>, features: Vec<Vec<T>>, states: Vec<Tensor<T>>) -> Result<Self> {
        if items.len() != features.len() || items.len() != states.len() {
            return Err(Error::dim("gallery items, features and states differ in length"));
        }
        let mut seen = HashSet::new();
        for it in &items {
            if !seen.insert(it.image_id.as_str()) {
                return Err(Error::contract(format!("duplicate gallery id '{}'", it.image_id)));
            }
        }
        for (it, f) in items.iter().zip(&features) {
            let norm = f.iter().map(|&x| x * x).sum::<T>().sqrt().to_f64().unwrap_or(f64::NAN);
            if (norm - 1.0).abs() > 1e-3 {
                return Err(Error::contract(format!("feature of '{}' has norm {norm}", it.image_id)));
            }
        }
        Ok(Self { items, features, states })
    }

    /// Encodes every image in parallel.
    pub fn encode(model: &Model<T>, items: Vec<GalleryItem>, pixels: &[Tensor<T>]) -> Result<Self> {
        if items.len() != pixels.len() {
            return Err(Error::dim("one image per gallery item"));
        }
        let encoded = pixels
            .par_iter()
            .map(|px| {
                let g = Graph::new();
                let p = model.bind_frozen(&g);
                let v = model.encode_image(&p, px)?;
                let f = model.project_image(&p, &v.row(0)?)?;
                Ok((f.to_vec(), v.value()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (features, states) = encoded.into_iter().unzip();
        Self::from_parts(items, features, states)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[GalleryItem] {
        &self.items
    }

    pub fn feature(&self, i: usize) -> &[T] {
        &self.features[i]
    }

    pub fn state(&self, i: usize) -> &Tensor<T> {
        &self.states[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub image_id: String,
    pub similarity: f64,
    /// Set for shortlist members only.
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub query_id: String,
    pub items: Vec<RankedItem>,
}

/// Orders candidates: shortlist of the `k` most similar reranked by probability,
/// the rest in similarity order. Ties fall back to similarity, then id.
///
/// `rerank` receives shortlist indices and returns one probability per index.
pub fn two_stage_order(
    ids: &[&str],
    similarities: &[f64],
    k: usize,
    rerank: impl FnOnce(&[usize]) -> Result<Vec<f64>>,
) -> Result<Vec<(usize, f64, Option<f64>)>> {
    if ids.len() != similarities.len() {
        return Err(Error::dim("one similarity per id"));
    }
    if k == 0 {
        return Err(Error::contract("shortlist size must be at least 1"));
    }
    let mut stage1: Vec<usize> = (0..ids.len()).collect();
    stage1.sort_by(|&a, &b| desc(similarities[a], similarities[b]).then_with(|| ids[a].cmp(ids[b])));
    let cut = k.min(stage1.len());
    let shortlist = &stage1[..cut];
    let probs = rerank(shortlist)?;
    if probs.len() != shortlist.len() {
        return Err(Error::dim("reranker returned the wrong number of scores"));
    }
    let mut head: Vec<(usize, f64, Option<f64>)> = shortlist
        .iter()
        .zip(&probs)
        .map(|(&i, &p)| (i, similarities[i], Some(p)))
        .collect();
    head.sort_by(|a, b| {
        desc(a.2.unwrap(), b.2.unwrap())
            .then_with(|| desc(a.1, b.1))
            .then_with(|| ids[a.0].cmp(ids[b.0]))
    });
    head.extend(stage1[cut..].iter().map(|&i| (i, similarities[i], None)));
    Ok(head)
}

fn desc(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

/// Text-to-image search and attribute recognition over a frozen model.
pub struct Retriever<'m, T: Scalar> {
    model: &'m Model<T>,
    shortlist: usize,
}

impl<'m, T: Scalar> Retriever<'m, T> {
    pub fn new(model: &'m Model<T>, shortlist: usize) -> Self {
        Self { model, shortlist }
    }

    pub fn search(&self, query_id: &str, tokens: &[u32], gallery: &Gallery<T>) -> Result<RankedResult> {
        if gallery.is_empty() {
            return Ok(RankedResult {
                query_id: query_id.to_string(),
                items: Vec::new(),
            });
        }
        let tokens = &tokens[..effective_len(tokens)];
        let g = Graph::new();
        let p = self.model.bind_frozen(&g);
        let l = self.model.encode_text(&p, tokens)?;
        let f_text = self.model.project_text(&p, &l.row(0)?)?.to_vec();
        let sims: Vec<f64> = (0..gallery.len())
            .map(|i| dot(gallery.feature(i), &f_text))
            .collect();
        let ids: Vec<&str> = gallery.items().iter().map(|it| it.image_id.as_str()).collect();
        let order = two_stage_order(&ids, &sims, self.shortlist, |short| {
            let mut cls = Vec::with_capacity(short.len());
            for &i in short {
                let v = g.constant(gallery.state(i));
                cls.push(self.model.encode_cross(&p, &v, &l, tokens)?.row(0)?);
            }
            let probs = self
                .model
                .match_probability(&p, &Var::concat_rows(&cls)?)?
                .to_vec();
            Ok(probs.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
        })?;
        Ok(RankedResult {
            query_id: query_id.to_string(),
            items: order
                .into_iter()
                .map(|(i, similarity, probability)| RankedItem {
                    image_id: ids[i].to_string(),
                    similarity,
                    probability,
                })
                .collect(),
        })
    }

    /// Runs queries in parallel; results come back in query order.
    pub fn search_all(&self, queries: &[(String, Vec<u32>)], gallery: &Gallery<T>) -> Result<Vec<RankedResult>> {
        queries
            .par_iter()
            .map(|(id, tokens)| self.search(id, tokens, gallery))
            .collect()
    }

    /// Match probability of every prompt against one image, in prompt order.
    pub fn prompt_probabilities(&self, pixels: &Tensor<T>, prompts: &PromptBank) -> Result<Vec<f64>> {
        let g = Graph::new();
        let p = self.model.bind_frozen(&g);
        let v = self.model.encode_image(&p, pixels)?;
        let mut cls = Vec::with_capacity(prompts.len());
        for t in &prompts.tokens {
            let t = &t[..effective_len(t)];
            let l = self.model.encode_text(&p, t)?;
            cls.push(self.model.encode_cross(&p, &v, &l, t)?.row(0)?);
        }
        let probs = self
            .model
            .match_probability(&p, &Var::concat_rows(&cls)?)?
            .to_vec();
        Ok(probs.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect())
    }

    pub fn recognize_attributes(&self, pixels: &Tensor<T>, prompts: &PromptBank) -> Result<AttributeVector> {
        Ok(attributes_from_probabilities(&self.prompt_probabilities(pixels, prompts)?))
    }
}

/// Per attribute, the polarity whose prompt scored higher; ties give label 0.
pub fn attributes_from_probabilities(probs: &[f64]) -> AttributeVector {
    assert_eq!(probs.len(), 2 * NUM_ATTRIBUTES, "one probability per prompt");
    let mut out = AttributeVector::unknown();
    for a in 0..NUM_ATTRIBUTES {
        out.set(a, Some((probs[2 * a + 1] > probs[2 * a]) as u8));
    }
    out
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x * y)
        .sum::<T>()
        .to_f64()
        .unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shortlist_is_reranked_and_tail_keeps_stage_one_order() {
        let ids = ["a", "b", "c", "d"];
        let sims = [0.1, 0.9, 0.5, 0.7];
        let order = two_stage_order(&ids, &sims, 2, |s| {
            assert_eq!(s, &[1, 3]);
            Ok(vec![0.2, 0.8])
        })
        .unwrap();
        let ranked: Vec<usize> = order.iter().map(|x| x.0).collect();
        assert_eq!(ranked, vec![3, 1, 2, 0]);
        assert!(order[2].2.is_none());
    }

    #[test]
    fn ties_break_by_similarity_then_id() {
        let ids = ["z", "y", "x"];
        let sims = [0.5, 0.5, 0.9];
        let order = two_stage_order(&ids, &sims, 3, |s| Ok(vec![0.5; s.len()])).unwrap();
        let ranked: Vec<&str> = order.iter().map(|x| ids[x.0]).collect();
        assert_eq!(ranked, vec!["x", "y", "z"]);
    }

    #[test]
    fn recognition_ties_go_to_zero() {
        let mut probs = vec![0.5; 54];
        probs[1] = 0.9;
        let v = attributes_from_probabilities(&probs);
        assert_eq!(v.get(0), Some(1));
        assert_eq!(v.get(1), Some(0));
    }
}

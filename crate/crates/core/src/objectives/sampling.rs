use serde::Serialize;

use crate::attributes::AttributeVector;
use crate::numcore::RngStream;

/// Sampled attribute prompts per image.
pub const IAM_PER_IMAGE: usize = 5;

/// An image paired with the prompt of one of its known attribute values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MatchedPair {
    pub image: usize,
    pub attribute: usize,
    pub polarity: u8,
}

/// An image paired with either its true prompt (target 1) or the opposite one (target 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IamPair {
    pub image: usize,
    pub attribute: usize,
    pub polarity: u8,
    pub target: u8,
}

/// Every (image, attribute) with a known value, image-major.
pub fn matched_pairs(attributes: &[AttributeVector]) -> Vec<MatchedPair> {
    attributes
        .iter()
        .enumerate()
        .flat_map(|(image, v)| {
            v.known().map(move |(attribute, polarity)| MatchedPair {
                image,
                attribute,
                polarity,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IamSample {
    pub pairs: Vec<IamPair>,
    /// Images with no known attribute.
    pub excluded: Vec<usize>,
}

/// Draws five attributes per image (with replacement only when fewer are known)
/// and flips a fair coin for the true or opposite prompt.
pub fn sample_iam_pairs(attributes: &[AttributeVector], rng: &RngStream) -> IamSample {
    let mut pairs = Vec::with_capacity(IAM_PER_IMAGE * attributes.len());
    let mut excluded = Vec::new();
    for (image, v) in attributes.iter().enumerate() {
        let mut known: Vec<(usize, u8)> = v.known().collect();
        if known.is_empty() {
            log::warn!("image {image} has no known attributes; excluded from IAM");
            excluded.push(image);
            continue;
        }
        let mut r = rng.split(image as u64);
        let picks: Vec<(usize, u8)> = if known.len() >= IAM_PER_IMAGE {
            r.shuffle(&mut known);
            known.truncate(IAM_PER_IMAGE);
            known
        } else {
            (0..IAM_PER_IMAGE).map(|_| known[r.below(known.len())]).collect()
        };
        for (attribute, value) in picks {
            let truthful = r.coin(0.5);
            pairs.push(IamPair {
                image,
                attribute,
                polarity: if truthful { value } else { 1 - value },
                target: truthful as u8,
            });
        }
    }
    IamSample { pairs, excluded }
}

/// Per text the most similar other image, per image the most similar other text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HardNegatives {
    pub image_for_text: Vec<usize>,
    pub text_for_image: Vec<usize>,
}

/// `sim` is row-major `[n×n]` with `sim[i*n + j]` = image i · text j.
///
/// Returns `None` when `n < 2`. Ties go to the lowest index.
pub fn mine_hard_negatives(sim: &[f64], n: usize) -> Option<HardNegatives> {
    assert_eq!(sim.len(), n * n, "similarity matrix must be n×n");
    if n < 2 {
        log::warn!("batch of {n} has no negatives; ITM skipped");
        return None;
    }
    let argmax_excluding = |skip: usize, value: &dyn Fn(usize) -> f64| {
        let mut best: Option<(usize, f64)> = None;
        for k in (0..n).filter(|&k| k != skip) {
            let v = value(k);
            match best {
                None => best = Some((k, v)),
                Some((_, bv)) if v > bv || (bv.is_nan() && !v.is_nan()) => best = Some((k, v)),
                _ => {}
            }
        }
        best.expect("n ≥ 2").0
    };
    let image_for_text = (0..n).map(|t| argmax_excluding(t, &|i| sim[i * n + t])).collect();
    let text_for_image = (0..n).map(|i| argmax_excluding(i, &|t| sim[i * n + t])).collect();
    Some(HardNegatives {
        image_for_text,
        text_for_image,
    })
}

use crate::attributes::tokenizer::effective_len;
use crate::attributes::{AttributeVector, PromptBank};
use crate::encoders::{Bound, Model};
use crate::error::{Error, Result};
use crate::numcore::{site, RngStream, Scalar, Tensor, Var};

use super::losses::{
    iac_loss, itc_loss, masked_token_loss, match_loss, smooth_targets, total_loss, zero, LossReport, Mode,
    DEFAULT_BETA, IAM_SMOOTHING,
};
use super::masking::{mask_tokens_with, Masked, MASK_PROB};
use super::sampling::{matched_pairs, mine_hard_negatives, sample_iam_pairs, HardNegatives, IamPair, MatchedPair};

/// One training example as seen by the objectives.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a, T: Scalar> {
    pub pixels: &'a Tensor<T>,
    pub tokens: &'a [u32],
    pub attributes: &'a AttributeVector,
}

/// Every random choice of one step, fixed before the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPlan {
    pub size: usize,
    /// Masked caption per sample (trailing `[PAD]`s removed).
    pub text_masks: Vec<Masked>,
    /// B_a.
    pub matched: Vec<MatchedPair>,
    /// B̂_a: index into `matched` with that pair's masked prompt.
    pub prompt_masks: Vec<(usize, Masked)>,
    /// B̄_a.
    pub iam: Vec<IamPair>,
    pub iam_excluded: Vec<usize>,
    /// Mined from the live similarities when `None`.
    pub negatives: Option<HardNegatives>,
}

impl BatchPlan {
    /// Draws masks and IAM pairs from streams keyed by `(seed, site, step)`.
    pub fn build(
        tokens: &[&[u32]],
        attributes: &[&AttributeVector],
        prompts: &PromptBank,
        vocab_size: usize,
        seed: u64,
        step: u64,
    ) -> Self {
        Self::build_with(tokens, attributes, prompts, vocab_size, MASK_PROB, seed, step)
    }

    pub fn build_with(
        tokens: &[&[u32]],
        attributes: &[&AttributeVector],
        prompts: &PromptBank,
        vocab_size: usize,
        mask_prob: f64,
        seed: u64,
        step: u64,
    ) -> Self {
        let text_rng = RngStream::for_site(seed, site::MASK_TEXT, step);
        let text_masks = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| mask_tokens_with(&t[..effective_len(t)], vocab_size, mask_prob, &mut text_rng.split(i as u64)))
            .collect();

        let owned: Vec<AttributeVector> = attributes.iter().map(|a| (*a).clone()).collect();
        let matched = matched_pairs(&owned);
        let prompt_rng = RngStream::for_site(seed, site::MASK_PROMPT, step);
        let prompt_masks = matched
            .iter()
            .enumerate()
            .filter_map(|(k, m)| {
                let t = prompts.tokens_for(m.attribute, m.polarity);
                let masked = mask_tokens_with(&t[..effective_len(t)], vocab_size, mask_prob, &mut prompt_rng.split(k as u64));
                (!masked.records.is_empty()).then_some((k, masked))
            })
            .collect();

        let iam = sample_iam_pairs(&owned, &RngStream::for_site(seed, site::IAM, step));
        Self {
            size: tokens.len(),
            text_masks,
            matched,
            prompt_masks,
            iam: iam.pairs,
            iam_excluded: iam.excluded,
            negatives: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub beta: f64,
    pub mode: Mode,
    pub smoothing: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            mode: Mode::Pretrain,
            smoothing: IAM_SMOOTHING,
        }
    }
}

/// Graph outputs of one forward pass.
pub struct StepLosses<T: Scalar> {
    pub total: Var<T>,
    pub components: [Var<T>; 6],
    pub report: LossReport,
    /// Negatives used for ITM (mined here unless the plan fixed them).
    pub negatives: Option<HardNegatives>,
}

/// Runs every encoder pass needed by the plan and builds all six losses.
pub fn forward_losses<T: Scalar>(
    model: &Model<T>,
    p: &Bound<T>,
    batch: &[Sample<T>],
    prompts: &PromptBank,
    plan: &BatchPlan,
    objective: &Objective,
) -> Result<StepLosses<T>> {
    let n = batch.len();
    if n == 0 || plan.size != n {
        return Err(Error::contract(format!("plan for {} samples used with batch of {n}", plan.size)));
    }
    let g = p.graph().clone();
    let tau = model.temperature(p);

    let texts: Vec<&[u32]> = batch.iter().map(|s| &s.tokens[..effective_len(s.tokens)]).collect();
    let images = batch.iter().map(|s| model.encode_image(p, s.pixels)).collect::<Result<Vec<_>>>()?;
    let text_states = texts.iter().map(|t| model.encode_text(p, t)).collect::<Result<Vec<_>>>()?;

    let image_cls = Var::concat_rows(&images.iter().map(|v| v.row(0)).collect::<Result<Vec<_>>>()?)?;
    let text_cls = Var::concat_rows(&text_states.iter().map(|l| l.row(0)).collect::<Result<Vec<_>>>()?)?;
    let f_image = model.project_image(p, &image_cls)?;
    let f_text = model.project_text(p, &text_cls)?;
    let itc = itc_loss(&f_image, &f_text, &tau)?;

    // ITM: positives, then a hard image per text, then a hard text per image.
    let negatives = match &plan.negatives {
        Some(h) => Some(h.clone()),
        None => {
            let sim = f_image.matmul_t(&f_text)?.to_vec();
            let sim: Vec<f64> = sim.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
            mine_hard_negatives(&sim, n)
        }
    };
    let itm = match &negatives {
        None => zero(&g),
        Some(h) => {
            let mut pairs: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
            pairs.extend(h.image_for_text.iter().enumerate().map(|(t, &i)| (i, t, 0.0)));
            pairs.extend(h.text_for_image.iter().enumerate().map(|(i, &t)| (i, t, 0.0)));
            let mut cls = Vec::with_capacity(pairs.len());
            for &(i, t, _) in &pairs {
                cls.push(model.encode_cross(p, &images[i], &text_states[t], texts[t])?.row(0)?);
            }
            let targets: Vec<f64> = pairs.iter().map(|x| x.2).collect();
            match_loss(&model.match_logit(p, &Var::concat_rows(&cls)?)?, &targets)?
        }
    };

    let mut rows = Vec::new();
    let mut originals = Vec::new();
    for (i, m) in plan.text_masks.iter().enumerate() {
        if m.records.is_empty() {
            continue;
        }
        let l = model.encode_text(p, &m.tokens)?;
        let c = model.encode_cross(p, &images[i], &l, &m.tokens)?;
        rows.push(c.gather_rows(&m.positions())?);
        originals.extend(m.originals());
    }
    let mlm = if rows.is_empty() {
        zero(&g)
    } else {
        masked_token_loss(&model.mask_logits(p, &Var::concat_rows(&rows)?)?, &originals)?
    };

    let (iac, iam, mam) = if objective.mode == Mode::Finetune {
        (zero(&g), zero(&g), zero(&g))
    } else {
        attribute_losses(model, p, &images, &f_image, prompts, plan, objective.smoothing, &tau)?
    };

    let components = [itc, itm, mlm, iac, iam, mam];
    let total = total_loss(
        [&components[0], &components[1], &components[2], &components[3], &components[4], &components[5]],
        objective.beta,
        objective.mode,
    )?;
    let values = components.clone().map(|c| c.item().to_f64().unwrap_or(f64::NAN));
    let report = LossReport::from_components(values, objective.beta, objective.mode, model.temperature_value());
    Ok(StepLosses {
        total,
        components,
        report,
        negatives,
    })
}

#[allow(clippy::too_many_arguments)]
fn attribute_losses<T: Scalar>(
    model: &Model<T>,
    p: &Bound<T>,
    images: &[Var<T>],
    f_image: &Var<T>,
    prompts: &PromptBank,
    plan: &BatchPlan,
    smoothing: f64,
    tau: &Var<T>,
) -> Result<(Var<T>, Var<T>, Var<T>)> {
    let g = p.graph().clone();
    let prompt_tokens: Vec<&[u32]> = prompts.tokens.iter().map(|t| &t[..effective_len(t)]).collect();
    let prompt_states = prompt_tokens
        .iter()
        .map(|t| model.encode_text(p, t))
        .collect::<Result<Vec<_>>>()?;

    let iac = if plan.matched.is_empty() {
        log::warn!("batch has no known attributes; IAC contributes 0");
        zero(&g)
    } else {
        let cls = Var::concat_rows(&prompt_states.iter().map(|l| l.row(0)).collect::<Result<Vec<_>>>()?)?;
        let f_prompt = model.project_text(p, &cls)?;
        let np = prompts.len();
        let sims = f_image.matmul_t(&f_prompt)?.reshape(&[f_image.shape()[0] * np, 1])?;
        let pos: Vec<usize> = plan
            .matched
            .iter()
            .map(|m| m.image * np + 2 * m.attribute + m.polarity as usize)
            .collect();
        let neg: Vec<usize> = plan
            .matched
            .iter()
            .map(|m| m.image * np + 2 * m.attribute + 1 - m.polarity as usize)
            .collect();
        iac_loss(&sims.gather_rows(&pos)?, &sims.gather_rows(&neg)?, tau)?
    };

    let iam = if plan.iam.is_empty() {
        zero(&g)
    } else {
        let mut cls = Vec::with_capacity(plan.iam.len());
        for pair in &plan.iam {
            let k = 2 * pair.attribute + pair.polarity as usize;
            cls.push(model.encode_cross(p, &images[pair.image], &prompt_states[k], prompt_tokens[k])?.row(0)?);
        }
        let targets: Vec<u8> = plan.iam.iter().map(|x| x.target).collect();
        match_loss(&model.match_logit(p, &Var::concat_rows(&cls)?)?, &smooth_targets(&targets, smoothing))?
    };

    let mam = if plan.prompt_masks.is_empty() {
        zero(&g)
    } else {
        let mut rows = Vec::with_capacity(plan.prompt_masks.len());
        let mut originals = Vec::new();
        for (k, m) in &plan.prompt_masks {
            let image = &images[plan.matched[*k].image];
            let l = model.encode_text(p, &m.tokens)?;
            let c = model.encode_cross(p, image, &l, &m.tokens)?;
            rows.push(c.gather_rows(&m.positions())?);
            originals.extend(m.originals());
        }
        masked_token_loss(&model.mask_logits(p, &Var::concat_rows(&rows)?)?, &originals)?
    };
    Ok((iac, iam, mam))
}

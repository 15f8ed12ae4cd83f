use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{lit, ops, Graph, Scalar, Var};

pub const DEFAULT_BETA: f64 = 0.8;
pub const IAM_SMOOTHING: f64 = 0.1;

/// Two-way softmax of a prompt similarity against its opposite.
pub fn iac_score(s_pos: f64, s_neg: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(1.0 / (1.0 + ((s_neg - s_pos) / tau).exp()))
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("temperature must be positive, got {tau}")))
    }
}

fn check_tau_var<T: Scalar>(tau: &Var<T>) -> Result<()> {
    check_tau(tau.item().to_f64().unwrap_or(f64::NAN))
}

/// `−mean log S` over pairs; `s_pos`, `s_neg` are `[n×1]`.
pub fn iac_loss<T: Scalar>(s_pos: &Var<T>, s_neg: &Var<T>, tau: &Var<T>) -> Result<Var<T>> {
    check_tau_var(tau)?;
    let logits = Var::concat_cols(&[s_pos.clone(), s_neg.clone()])?.div_scalar(tau)?;
    let n = logits.shape()[0];
    ops::cross_entropy_index(&logits, &vec![0; n])
}

/// Symmetric in-batch contrastive loss over unit-norm `[B×d]` features.
pub fn itc_loss<T: Scalar>(image: &Var<T>, text: &Var<T>, tau: &Var<T>) -> Result<Var<T>> {
    check_tau_var(tau)?;
    let sim = image.matmul_t(text)?.div_scalar(tau)?;
    let n = sim.shape()[0];
    if sim.shape()[1] != n {
        return Err(Error::dim(format!("itc needs equal batch sizes, got {:?}", sim.shape())));
    }
    let diag: Vec<usize> = (0..n).collect();
    let i2t = ops::cross_entropy_index(&sim, &diag)?;
    let t2i = ops::cross_entropy_index(&sim.transpose()?, &diag)?;
    i2t.add(&t2i)?.scale(lit(0.5))
}

/// Binary cross-entropy on match logits `[n×1]`.
pub fn match_loss<T: Scalar>(logits: &Var<T>, targets: &[f64]) -> Result<Var<T>> {
    let t: Vec<T> = targets.iter().map(|&y| lit(y)).collect();
    ops::binary_cross_entropy_with_logits(logits, &t)
}

/// `y(1−ε) + ε/2`.
pub fn smooth_targets(targets: &[u8], eps: f64) -> Vec<f64> {
    targets.iter().map(|&y| y as f64 * (1.0 - eps) + eps / 2.0).collect()
}

/// Lowest reachable BCE for a smoothed target (the entropy of `y'`).
pub fn smoothing_floor(eps: f64) -> f64 {
    let y = 1.0 - eps / 2.0;
    -(y * y.ln() + (1.0 - y) * (1.0 - y).ln())
}

/// Mean cross-entropy of vocabulary logits `[k×V]` against original ids.
pub fn masked_token_loss<T: Scalar>(logits: &Var<T>, originals: &[u32]) -> Result<Var<T>> {
    let classes: Vec<usize> = originals.iter().map(|&t| t as usize).collect();
    ops::cross_entropy_index(logits, &classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// All six objectives.
    #[default]
    Pretrain,
    /// ITC + ITM + MLM only.
    Finetune,
}

/// Component losses of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub itc: f64,
    pub itm: f64,
    pub mlm: f64,
    pub iac: f64,
    pub iam: f64,
    pub mam: f64,
    pub apl: f64,
    pub total: f64,
    pub temperature: f64,
}

impl LossReport {
    /// Fills `apl` and `total` from the six components.
    pub fn from_components(c: [f64; 6], beta: f64, mode: Mode, temperature: f64) -> Self {
        let [itc, itm, mlm, iac, iam, mam] = c;
        let (apl, total) = combine(c, beta, mode);
        Self {
            itc,
            itm,
            mlm,
            iac,
            iam,
            mam,
            apl,
            total,
            temperature,
        }
    }
}

/// `(L_APL, L_total)` for components `[itc, itm, mlm, iac, iam, mam]`.
pub fn combine(c: [f64; 6], beta: f64, mode: Mode) -> (f64, f64) {
    let [itc, itm, mlm, iac, iam, mam] = c;
    let apl = (iac + iam + mam) / 3.0;
    let tml = itc + itm + mlm;
    match mode {
        Mode::Pretrain => (apl, tml + beta * apl),
        Mode::Finetune => (apl, tml),
    }
}

/// Graph counterpart of [`combine`].
pub fn total_loss<T: Scalar>(c: [&Var<T>; 6], beta: f64, mode: Mode) -> Result<Var<T>> {
    let [itc, itm, mlm, iac, iam, mam] = c;
    let tml = itc.add(itm)?.add(mlm)?;
    match mode {
        Mode::Finetune => Ok(tml),
        Mode::Pretrain => {
            let apl = iac.add(iam)?.add(mam)?.scale(lit(beta / 3.0))?;
            tml.add(&apl)
        }
    }
}

pub(crate) fn zero<T: Scalar>(g: &Graph<T>) -> Var<T> {
    g.scalar(T::zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn iac_score_cases() {
        assert_eq!(iac_score(0.3, 0.3, 0.07).unwrap(), 0.5);
        assert!((iac_score(1.0, -1.0, 1.0).unwrap() - 0.8808).abs() < 1e-4);
        assert!(iac_score(0.2, 0.1, 0.0).is_err());
        let (a, b) = (0.4, -0.2);
        assert!((iac_score(a, b, 0.1).unwrap() + iac_score(b, a, 0.1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn itc_single_pair_is_zero_and_identical_features_give_ln_b() {
        let g = Graph::<f64>::new();
        let tau = g.scalar(0.07);
        let f = g.constant(&Tensor::from_f64(&[1, 2], &[0.6, 0.8]).unwrap());
        assert_eq!(itc_loss(&f, &f, &tau).unwrap().item(), 0.0);
        let same = g.constant(&Tensor::from_f64(&[3, 2], &[0.6, 0.8, 0.6, 0.8, 0.6, 0.8]).unwrap());
        let l = itc_loss(&same, &same, &tau).unwrap().item();
        assert!((l - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn combine_arithmetic() {
        let (_, t) = combine([1.0; 6], 0.8, Mode::Pretrain);
        assert!((t - 3.8).abs() < 1e-12);
        let c = [0.5, 0.25, 1.5, 9.0, 9.0, 9.0];
        assert_eq!(combine(c, 0.0, Mode::Pretrain).1, 2.25);
        assert_eq!(combine(c, 0.8, Mode::Finetune).1, 2.25);
    }

    #[test]
    fn smoothing() {
        let s = smooth_targets(&[1, 0], 0.1);
        assert!((s[0] - 0.95).abs() < 1e-15 && (s[1] - 0.05).abs() < 1e-15);
        assert!(smoothing_floor(0.1) > 0.19 && smoothing_floor(0.1) < 0.2);
    }
}

use crate::error::Result;
use crate::numcore::{lit, Scalar, Var};

use super::params::{Bound, Init, ParamId};

const LN_EPS: f64 = 1e-5;
/// Added to attention scores of padded keys.
const MASKED: f64 = -1e9;

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    /// Weights start at std `1/√input`, so outputs keep the input's scale.
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, input: usize, output: usize) -> Self {
        Self {
            weight: init.normal_std(format!("{name}.weight"), &[input, output], (input as f64).sqrt().recip()),
            bias: init.zeros(format!("{name}.bias"), &[output]),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.matmul(&p.var(self.weight))?.add_row(&p.var(self.bias))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: init.ones(format!("{name}.gamma"), &[dim]),
            beta: init.zeros(format!("{name}.beta"), &[dim]),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        x.layer_norm(&p.var(self.gamma), &p.var(self.beta), lit(LN_EPS))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    dim: usize,
}

impl Attention {
    /// Queries have width `dim`; keys and values are read from inputs of width `kv_dim`.
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, dim: usize, kv_dim: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(init, &format!("{name}.q"), dim, dim),
            k: Linear::new(init, &format!("{name}.k"), kv_dim, dim),
            v: Linear::new(init, &format!("{name}.v"), kv_dim, dim),
            o: Linear::new(init, &format!("{name}.o"), dim, dim),
            heads,
            dim,
        }
    }

    /// `key_bias` is a row of 0 / large-negative values added to every score row.
    pub fn forward<T: Scalar>(
        &self,
        p: &Bound<T>,
        x: &Var<T>,
        kv: &Var<T>,
        key_bias: Option<&Var<T>>,
    ) -> Result<Var<T>> {
        let q = self.q.forward(p, x)?;
        let k = self.k.forward(p, kv)?;
        let v = self.v.forward(p, kv)?;
        let dh = self.dim / self.heads;
        let scale = lit::<T>(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice_cols(h * dh, dh)?;
            let kh = k.slice_cols(h * dh, dh)?;
            let vh = v.slice_cols(h * dh, dh)?;
            let mut scores = qh.matmul_t(&kh)?.scale(scale)?;
            if let Some(bias) = key_bias {
                scores = scores.add_row(bias)?;
            }
            outs.push(scores.softmax(1)?.matmul(&vh)?);
        }
        let joined = if outs.len() == 1 { outs.pop().unwrap() } else { Var::concat_cols(&outs)? };
        self.o.forward(p, &joined)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), dim, hidden),
            fc2: Linear::new(init, &format!("{name}.fc2"), hidden, dim),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>) -> Result<Var<T>> {
        self.fc2.forward(p, &self.fc1.forward(p, x)?.gelu()?)
    }
}

/// Pre-norm self-attention block.
#[derive(Debug, Clone)]
pub(crate) struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            attn: Attention::new(init, &format!("{name}.attn"), dim, dim, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
            mlp: Mlp::new(init, &format!("{name}.mlp"), dim, 4 * dim),
        }
    }

    pub fn forward<T: Scalar>(&self, p: &Bound<T>, x: &Var<T>, key_bias: Option<&Var<T>>) -> Result<Var<T>> {
        let h = self.ln1.forward(p, x)?;
        let x = x.add(&self.attn.forward(p, &h, &h, key_bias)?)?;
        let h = self.ln2.forward(p, &x)?;
        x.add(&self.mlp.forward(p, &h)?)
    }
}

/// Pre-norm block: self-attention on text, cross-attention to image, MLP.
#[derive(Debug, Clone)]
pub(crate) struct CrossBlock {
    ln1: LayerNorm,
    self_attn: Attention,
    ln2: LayerNorm,
    cross_attn: Attention,
    ln3: LayerNorm,
    mlp: Mlp,
}

impl CrossBlock {
    pub fn new<T: Scalar>(init: &mut Init<T>, name: &str, dim: usize, image_dim: usize, heads: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            self_attn: Attention::new(init, &format!("{name}.self_attn"), dim, dim, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
            cross_attn: Attention::new(init, &format!("{name}.cross_attn"), dim, image_dim, heads),
            ln3: LayerNorm::new(init, &format!("{name}.ln3"), dim),
            mlp: Mlp::new(init, &format!("{name}.mlp"), dim, 4 * dim),
        }
    }

    pub fn forward<T: Scalar>(
        &self,
        p: &Bound<T>,
        x: &Var<T>,
        image: &Var<T>,
        key_bias: Option<&Var<T>>,
    ) -> Result<Var<T>> {
        let h = self.ln1.forward(p, x)?;
        let x = x.add(&self.self_attn.forward(p, &h, &h, key_bias)?)?;
        let h = self.ln2.forward(p, &x)?;
        let x = x.add(&self.cross_attn.forward(p, &h, image, None)?)?;
        let h = self.ln3.forward(p, &x)?;
        x.add(&self.mlp.forward(p, &h)?)
    }
}

/// Score bias that hides `[PAD]` keys; `None` when nothing is padded.
pub(crate) fn pad_bias<T: Scalar>(p: &Bound<T>, tokens: &[u32]) -> Result<Option<Var<T>>> {
    use crate::attributes::tokenizer::PAD;
    if !tokens.contains(&PAD) {
        return Ok(None);
    }
    let data = tokens
        .iter()
        .map(|&t| if t == PAD { lit(MASKED) } else { T::zero() })
        .collect();
    Ok(Some(p.graph().constant_from(&[tokens.len()], data)?))
}

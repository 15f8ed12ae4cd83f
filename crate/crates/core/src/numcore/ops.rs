//! Free-function forms of the differentiable operations, plus the composite
//! losses built from them.

use crate::error::{Error, Result};

use super::graph::Var;
use super::scalar::{lit, Scalar};

pub fn matmul<T: Scalar>(a: &Var<T>, b: &Var<T>) -> Result<Var<T>> {
    a.matmul(b)
}

pub fn softmax<T: Scalar>(x: &Var<T>, axis: usize) -> Result<Var<T>> {
    x.softmax(axis)
}

pub fn sigmoid<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    x.sigmoid()
}

pub fn gelu<T: Scalar>(x: &Var<T>) -> Result<Var<T>> {
    x.gelu()
}

pub fn layer_norm<T: Scalar>(x: &Var<T>, gamma: &Var<T>, beta: &Var<T>) -> Result<Var<T>> {
    x.layer_norm(gamma, beta, lit(1e-5))
}

pub fn backward<T: Scalar>(root: &Var<T>) -> Result<()> {
    root.backward()
}

/// Mean over rows of `−Σ target · log softmax(logits)`.
///
/// `target` must hold one probability distribution per row of `logits`.
pub fn cross_entropy<T: Scalar>(logits: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    let shape = logits.shape();
    if target.shape() != shape {
        return Err(Error::dim(format!(
            "cross_entropy: logits {shape:?} vs target {:?}",
            target.shape()
        )));
    }
    let n = *shape.last().unwrap();
    let t = target.to_vec();
    for row in t.chunks_exact(n) {
        let total: f64 = row.iter().map(|x| x.to_f64().unwrap()).sum();
        if (total - 1.0).abs() > 1e-5 || row.iter().any(|&x| x < T::zero()) {
            return Err(Error::contract(format!(
                "cross_entropy target row is not a distribution (sums to {total})"
            )));
        }
    }
    let rows = t.len() / n;
    let logp = logits.log_softmax(shape.len() - 1)?;
    let total = target.mul(&logp)?.sum()?;
    total.scale(-T::one() / T::from_usize(rows).unwrap())
}

/// Cross-entropy against class indices: mean of `−log softmax(logits)[r, class_r]`.
pub fn cross_entropy_index<T: Scalar>(logits: &Var<T>, classes: &[usize]) -> Result<Var<T>> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != classes.len() {
        return Err(Error::dim(format!(
            "cross_entropy_index: logits {shape:?} for {} targets",
            classes.len()
        )));
    }
    let n = shape[1];
    let mut onehot = vec![T::zero(); classes.len() * n];
    for (r, &c) in classes.iter().enumerate() {
        if c >= n {
            return Err(Error::dim(format!("class {c} out of range for {n} logits")));
        }
        onehot[r * n + c] = T::one();
    }
    let target = logits.graph().constant_from(&shape, onehot)?;
    cross_entropy(logits, &target)
}

/// Mean binary cross-entropy of `σ(logits)` against soft targets in `[0, 1]`.
pub fn binary_cross_entropy_with_logits<T: Scalar>(logits: &Var<T>, targets: &[T]) -> Result<Var<T>> {
    if logits.len() != targets.len() {
        return Err(Error::dim(format!(
            "bce: {} logits for {} targets",
            logits.len(),
            targets.len()
        )));
    }
    if targets.iter().any(|&y| y < T::zero() || y > T::one()) {
        return Err(Error::contract("bce targets must lie in [0, 1]"));
    }
    let shape = logits.shape();
    let g = logits.graph();
    let pos = logits.log_sigmoid()?;
    let neg = logits.neg()?.log_sigmoid()?;
    let y = g.constant_from(&shape, targets.to_vec())?;
    let not_y = g.constant_from(&shape, targets.iter().map(|&v| T::one() - v).collect())?;
    let ll = y.mul(&pos)?.add(&not_y.mul(&neg)?)?;
    ll.mean()?.neg()
}

/// Cosine similarity of two equal-length vectors.
pub fn cosine_similarity<T: Scalar>(u: &Var<T>, v: &Var<T>) -> Result<Var<T>> {
    let (ul, vl) = (u.len(), v.len());
    if ul != vl {
        return Err(Error::dim(format!("cosine_similarity of lengths {ul} and {vl}")));
    }
    let un = u.reshape(&[1, ul])?.l2_normalize_rows()?;
    let vn = v.reshape(&[1, vl])?.l2_normalize_rows()?;
    un.mul(&vn)?.sum()
}

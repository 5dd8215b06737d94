//! Scalar host reference kernels.
//!
//! Every reduction accumulates in `f64` and rounds to `f32` once at the end, so
//! results do not depend on summation order and the tolerance bounds GPU error
//! only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::HostTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceContext {
    SingleKernel,
    ChainedMlp,
    FullForward,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub max_abs: f64,
    pub context: ToleranceContext,
}

impl ToleranceSpec {
    pub const SINGLE_KERNEL: ToleranceSpec = ToleranceSpec {
        max_abs: 2e-4,
        context: ToleranceContext::SingleKernel,
    };
    /// Four chained matmuls plus a norm accumulate roughly ten single-kernel errors.
    pub const CHAINED_MLP: ToleranceSpec = ToleranceSpec {
        max_abs: 2e-3,
        context: ToleranceContext::ChainedMlp,
    };
    pub const FULL_FORWARD: ToleranceSpec = ToleranceSpec {
        max_abs: 5e-3,
        context: ToleranceContext::FullForward,
    };

    pub fn for_context(context: ToleranceContext) -> Self {
        match context {
            ToleranceContext::SingleKernel => Self::SINGLE_KERNEL,
            ToleranceContext::ChainedMlp => Self::CHAINED_MLP,
            ToleranceContext::FullForward => Self::FULL_FORWARD,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub max_abs_diff: f64,
    /// Flat index of the largest difference.
    pub argmax_of_diff: usize,
    pub tolerance: ToleranceSpec,
    pub pass: bool,
}

/// Compare two tensors elementwise. Passes iff `max_abs_diff < tol.max_abs`.
/// A NaN anywhere counts as an infinite difference.
pub fn compare(a: &HostTensor, b: &HostTensor, tol: ToleranceSpec) -> Result<ComparisonReport> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let (max_abs_diff, argmax_of_diff) = max_abs_diff(a.data(), b.data());
    Ok(ComparisonReport {
        max_abs_diff,
        argmax_of_diff,
        tolerance: tol,
        pass: max_abs_diff < tol.max_abs,
    })
}

/// Largest `|a[i] - b[i]|` and its index; ties keep the lowest index.
pub fn max_abs_diff(a: &[f32], b: &[f32]) -> (f64, usize) {
    let mut best = (0.0f64, 0usize);
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let d = (*x as f64 - *y as f64).abs();
        let d = if d.is_nan() { f64::INFINITY } else { d };
        if d > best.0 {
            best = (d, i);
        }
    }
    best
}

fn require_matrix(t: &HostTensor, what: &str) -> Result<(usize, usize)> {
    if t.shape().len() != 2 {
        return Err(Error::DimsMismatch(format!(
            "{what} must be 2-D, got shape {:?}",
            t.shape()
        )));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

/// `C = A · B` with `A: [m, k]`, `B: [k, n]`.
pub fn oracle_matmul(a: &HostTensor, b: &HostTensor) -> Result<HostTensor> {
    let (m, k) = require_matrix(a, "A")?;
    let (kb, n) = require_matrix(b, "B")?;
    if k != kb {
        return Err(Error::DimsMismatch(format!("A is {m}x{k} but B is {kb}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += ad[i * k + p] as f64 * bd[p * n + j] as f64;
            }
            out[i * n + j] = acc as f32;
        }
    }
    HostTensor::new(vec![m, n], out)
}

/// Linear layer `Y = X · Wᵀ` with `X: [m, in]` and `W` stored `[out, in]`.
pub fn oracle_linear(x: &HostTensor, w: &HostTensor) -> Result<HostTensor> {
    let (m, k) = require_matrix(x, "x")?;
    let (n, kw) = require_matrix(w, "W")?;
    if k != kw {
        return Err(Error::DimsMismatch(format!("x has {k} features but W is [{n}, {kw}]")));
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let xr = &xd[i * k..(i + 1) * k];
        for j in 0..n {
            let wr = &wd[j * k..(j + 1) * k];
            out[i * n + j] = dot_f64(xr, wr) as f32;
        }
    }
    HostTensor::new(vec![m, n], out)
}

/// Selected output elements of `X · Wᵀ`, for spot checks at production sizes.
pub fn oracle_linear_at(x: &HostTensor, w: &HostTensor, picks: &[(usize, usize)]) -> Result<Vec<f32>> {
    let (m, k) = require_matrix(x, "x")?;
    let (n, kw) = require_matrix(w, "W")?;
    if k != kw {
        return Err(Error::DimsMismatch(format!("x has {k} features but W is [{n}, {kw}]")));
    }
    picks
        .iter()
        .map(|&(i, j)| {
            if i >= m || j >= n {
                return Err(Error::DimsMismatch(format!("pick ({i}, {j}) outside [{m}, {n}]")));
            }
            Ok(dot_f64(x.row(i), w.row(j)) as f32)
        })
        .collect()
}

/// Selected output elements of `A · B` (`B: [k, n]`).
pub fn oracle_matmul_at(a: &HostTensor, b: &HostTensor, picks: &[(usize, usize)]) -> Result<Vec<f32>> {
    let (m, k) = require_matrix(a, "A")?;
    let (kb, n) = require_matrix(b, "B")?;
    if k != kb {
        return Err(Error::DimsMismatch(format!("A is {m}x{k} but B is {kb}x{n}")));
    }
    let (ad, bd) = (a.data(), b.data());
    picks
        .iter()
        .map(|&(i, j)| {
            if i >= m || j >= n {
                return Err(Error::DimsMismatch(format!("pick ({i}, {j}) outside [{m}, {n}]")));
            }
            let acc: f64 = (0..k).map(|p| ad[i * k + p] as f64 * bd[p * n + j] as f64).sum();
            Ok(acc as f32)
        })
        .collect()
}

fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

/// `out[r, c] = x[r, c] · rsqrt(mean(x[r, ·]²) + eps) · weight[c]`.
pub fn oracle_rmsnorm(x: &HostTensor, weight: &HostTensor, eps: f64) -> Result<HostTensor> {
    let hidden = x.cols();
    if weight.numel() != hidden {
        return Err(Error::DimsMismatch(format!(
            "x has {hidden} columns but weight has {} elements",
            weight.numel()
        )));
    }
    let w = weight.data();
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        let ms = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / hidden as f64;
        let scale = 1.0 / (ms + eps).sqrt();
        out.extend(row.iter().zip(w).map(|(v, wc)| (*v as f64 * scale * *wc as f64) as f32));
    }
    HostTensor::new(x.shape().to_vec(), out)
}

pub fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// `silu(x·Wgᵀ) ⊙ (x·Wuᵀ)`.
pub fn oracle_gate_up_silu(x: &HostTensor, w_gate: &HostTensor, w_up: &HostTensor) -> Result<HostTensor> {
    if w_gate.shape() != w_up.shape() {
        return Err(Error::DimsMismatch(format!(
            "gate {:?} and up {:?} projections differ",
            w_gate.shape(),
            w_up.shape()
        )));
    }
    let (m, k) = require_matrix(x, "x")?;
    let (n, kw) = require_matrix(w_gate, "W_gate")?;
    if k != kw {
        return Err(Error::DimsMismatch(format!(
            "x has {k} features but projections are [{n}, {kw}]"
        )));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let xr = x.row(i);
        for j in 0..n {
            let g = dot_f64(xr, w_gate.row(j));
            let u = dot_f64(xr, w_up.row(j));
            out.push((silu(g) * u) as f32);
        }
    }
    HostTensor::new(vec![m, n], out)
}

/// Weights of one MLP block. Projections are stored `[out, in]`.
#[derive(Clone, Debug)]
pub struct MlpWeights {
    pub norm: HostTensor,
    /// `[intermediate, hidden]`
    pub gate: HostTensor,
    /// `[intermediate, hidden]`
    pub up: HostTensor,
    /// `[hidden, intermediate]`
    pub down: HostTensor,
    pub eps: f64,
}

impl MlpWeights {
    pub fn hidden(&self) -> usize {
        self.norm.numel()
    }

    pub fn intermediate(&self) -> usize {
        self.gate.shape().first().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, i) = (self.hidden(), self.intermediate());
        let ok = self.gate.shape() == [i, h] && self.up.shape() == [i, h] && self.down.shape() == [h, i];
        if !ok || h == 0 || i == 0 {
            return Err(Error::DimsMismatch(format!(
                "mlp weights inconsistent: norm [{h}], gate {:?}, up {:?}, down {:?}",
                self.gate.shape(),
                self.up.shape(),
                self.down.shape()
            )));
        }
        Ok(())
    }
}

/// `x + (silu(n·Wgᵀ) ⊙ (n·Wuᵀ))·Wdᵀ` with `n = rmsnorm(x)`.
///
/// Unlike the single kernels, intermediates are kept in `f64` end to end.
pub fn oracle_mlp(x: &HostTensor, w: &MlpWeights) -> Result<HostTensor> {
    w.validate()?;
    let hidden = w.hidden();
    if x.cols() != hidden {
        return Err(Error::DimsMismatch(format!(
            "x has {} columns, block hidden size is {hidden}",
            x.cols()
        )));
    }
    let inter = w.intermediate();
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        let ms = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / hidden as f64;
        let scale = 1.0 / (ms + w.eps).sqrt();
        let normed: Vec<f64> = row
            .iter()
            .zip(w.norm.data())
            .map(|(v, g)| *v as f64 * scale * *g as f64)
            .collect();
        let act: Vec<f64> = (0..inter)
            .map(|j| {
                let g: f64 = normed.iter().zip(w.gate.row(j)).map(|(a, b)| a * *b as f64).sum();
                let u: f64 = normed.iter().zip(w.up.row(j)).map(|(a, b)| a * *b as f64).sum();
                silu(g) * u
            })
            .collect();
        for (o, r) in row.iter().enumerate() {
            let d: f64 = act.iter().zip(w.down.row(o)).map(|(a, b)| a * *b as f64).sum();
            out.push((*r as f64 + d) as f32);
        }
    }
    HostTensor::new(x.shape().to_vec(), out)
}

/// Row-wise softmax with max subtraction.
pub fn oracle_softmax(x: &HostTensor) -> Result<HostTensor> {
    let cols = x.cols();
    if cols == 0 {
        return Err(Error::DimsMismatch("softmax needs at least one column".into()));
    }
    let mut out = Vec::with_capacity(x.numel());
    for r in 0..x.rows() {
        let row = x.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
        let exps: Vec<f64> = row.iter().map(|v| (*v as f64 - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / sum) as f32));
    }
    HostTensor::new(x.shape().to_vec(), out)
}

/// Index of the maximum; ties resolve to the lowest index. NaNs are skipped.
pub fn oracle_argmax(values: &[f32]) -> Result<usize> {
    if values.is_empty() {
        return Err(Error::DimsMismatch("argmax of an empty vector".into()));
    }
    let mut best = 0usize;
    let mut best_v = f32::NEG_INFINITY;
    let mut seen = false;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if !seen || *v > best_v {
            best = i;
            best_v = *v;
            seen = true;
        }
    }
    Ok(best)
}

/// Gap between the largest and second-largest value; `None` for length 1.
pub fn top2_gap(values: &[f32]) -> Option<f32> {
    if values.len() < 2 {
        return None;
    }
    let (mut a, mut b) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
    for v in values {
        if *v > a {
            b = a;
            a = *v;
        } else if *v > b {
            b = *v;
        }
    }
    Some(a - b)
}

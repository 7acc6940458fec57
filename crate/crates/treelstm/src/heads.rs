//! Task heads: node-label softmax classification and sentence-pair
//! similarity scoring with a sparse-target KL objective.
//!
//! The similarity head reads two sentence representations and combines
//! their elementwise product (angle) and absolute difference (distance):
//!
//! ```text
//! h× = hL ⊙ hR        h+ = |hL − hR|
//! hs = σ(W^(×) h× + W^(+) h+ + b^(h))
//! p̂ = softmax(W^(p) hs + b^(p))      ŷ = rᵀ p̂,  r = (1, 2, …, K)
//! ```
//!
//! Both losses differentiate w.r.t. pre-softmax logits, where the gradient
//! is `p̂ − target` for NLL (one-hot target) and KL (sparse target) alike.

use thiserror::Error;

use crate::tensor::{
    elementwise, init_mat, Matrix, NamedTensor, NamedTensorMut, Nonlinearity, Rng, Vector,
};

#[derive(Debug, Error)]
pub enum HeadError {
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error("gold class {gold} out of range for {classes} classes")]
    InvalidClass { gold: usize, classes: usize },
    #[error("target score {y} outside [1, {k}]")]
    ScoreOutOfRange { y: f64, k: usize },
}

/// Softmax with max-subtraction; output sums to 1 and is strictly positive.
pub fn softmax(logits: &Vector) -> Vector {
    let m = logits
        .data
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.data.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= s;
    }
    Vector { data: out }
}

/// Softmax classifier over node/sequence representations.
#[derive(Debug, Clone)]
pub struct ClassifierParams {
    pub w: Matrix,
    pub b: Vector,
}

impl ClassifierParams {
    pub fn init(in_dim: usize, classes: usize, scale: f64, rng: &mut Rng) -> Self {
        ClassifierParams {
            w: init_mat(classes, in_dim, scale, rng),
            b: Vector::zeros(classes),
        }
    }

    pub fn classes(&self) -> usize {
        self.w.rows
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols
    }

    pub fn zeros_like(&self) -> Self {
        ClassifierParams {
            w: Matrix::zeros(self.w.rows, self.w.cols),
            b: Vector::zeros(self.b.dim()),
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<NamedTensor<'a>> {
        vec![
            self.w.view(format!("{prefix}w_s")),
            self.b.view(format!("{prefix}b_s")),
        ]
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<NamedTensorMut<'a>> {
        vec![
            self.w.view_mut(format!("{prefix}w_s")),
            self.b.view_mut(format!("{prefix}b_s")),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.w.data.len() + self.b.dim()
    }
}

/// Class probabilities for a representation.
pub fn classify(cp: &ClassifierParams, h: &Vector) -> Result<Vector, HeadError> {
    if h.dim() != cp.in_dim() {
        return Err(crate::tensor::TensorError::DimMismatch {
            op: "classify",
            operand: "h".into(),
            expected: cp.in_dim(),
            got: h.dim(),
        }
        .into());
    }
    let mut logits = cp.w.mul_vec(h);
    logits.add_assign(&cp.b);
    Ok(softmax(&logits))
}

/// Negative log-likelihood and its gradient w.r.t. the logits.
pub fn nll_loss_grad(phat: &Vector, gold: usize) -> Result<(f64, Vector), HeadError> {
    if gold >= phat.dim() {
        return Err(HeadError::InvalidClass {
            gold,
            classes: phat.dim(),
        });
    }
    let loss = -phat.data[gold].max(f64::MIN_POSITIVE).ln();
    let mut grad = phat.clone();
    grad.data[gold] -= 1.0;
    Ok((loss, grad))
}

/// Propagate a logit gradient through the classifier; returns dL/dh.
pub fn classify_backward(
    cp: &ClassifierParams,
    h: &Vector,
    dlogits: &Vector,
    g: &mut ClassifierParams,
) -> Vector {
    g.w.add_outer(dlogits, h);
    g.b.add_assign(dlogits);
    cp.w.tr_mul_vec(dlogits)
}

/// Pair-similarity head parameters. `r` is implicit: rank `j` (0-based)
/// scores `j + 1`.
#[derive(Debug, Clone)]
pub struct SimilarityParams {
    pub w_cross: Matrix,
    pub w_plus: Matrix,
    pub b_h: Vector,
    pub w_p: Matrix,
    pub b_p: Vector,
}

impl SimilarityParams {
    pub fn init(in_dim: usize, hidden: usize, k: usize, scale: f64, rng: &mut Rng) -> Self {
        SimilarityParams {
            w_cross: init_mat(hidden, in_dim, scale, rng),
            w_plus: init_mat(hidden, in_dim, scale, rng),
            b_h: Vector::zeros(hidden),
            w_p: init_mat(k, hidden, scale, rng),
            b_p: Vector::zeros(k),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_cross.cols
    }

    pub fn hidden(&self) -> usize {
        self.w_cross.rows
    }

    pub fn k(&self) -> usize {
        self.w_p.rows
    }

    pub fn zeros_like(&self) -> Self {
        SimilarityParams {
            w_cross: Matrix::zeros(self.w_cross.rows, self.w_cross.cols),
            w_plus: Matrix::zeros(self.w_plus.rows, self.w_plus.cols),
            b_h: Vector::zeros(self.b_h.dim()),
            w_p: Matrix::zeros(self.w_p.rows, self.w_p.cols),
            b_p: Vector::zeros(self.b_p.dim()),
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<NamedTensor<'a>> {
        vec![
            self.w_cross.view(format!("{prefix}w_cross")),
            self.w_plus.view(format!("{prefix}w_plus")),
            self.b_h.view(format!("{prefix}b_h")),
            self.w_p.view(format!("{prefix}w_p")),
            self.b_p.view(format!("{prefix}b_p")),
        ]
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<NamedTensorMut<'a>> {
        vec![
            self.w_cross.view_mut(format!("{prefix}w_cross")),
            self.w_plus.view_mut(format!("{prefix}w_plus")),
            self.b_h.view_mut(format!("{prefix}b_h")),
            self.w_p.view_mut(format!("{prefix}w_p")),
            self.b_p.view_mut(format!("{prefix}b_p")),
        ]
    }

    pub fn n_params(&self) -> usize {
        self.tensors("").iter().map(|t| t.data.len()).sum()
    }
}

/// Forward cache for the similarity head. `sign[j]` is the subgradient of
/// `|hL − hR|` at coordinate j: ±1, or 0 where the arguments tie.
#[derive(Debug)]
pub struct SimTrace {
    pub h_cross: Vector,
    pub h_abs: Vector,
    pub sign: Vector,
    pub hs: Vector,
    pub phat: Vector,
    pub yhat: f64,
}

/// Expected score `rᵀ p̂` with ranks 1..K.
pub fn expected_score(phat: &Vector) -> f64 {
    phat.data
        .iter()
        .enumerate()
        .map(|(j, &p)| (j + 1) as f64 * p)
        .sum()
}

pub fn similarity_forward(
    sp: &SimilarityParams,
    hl: &Vector,
    hr: &Vector,
) -> Result<SimTrace, HeadError> {
    if hl.dim() != sp.in_dim() || hr.dim() != sp.in_dim() {
        return Err(crate::tensor::TensorError::DimMismatch {
            op: "similarity_forward",
            operand: "h".into(),
            expected: sp.in_dim(),
            got: if hl.dim() != sp.in_dim() {
                hl.dim()
            } else {
                hr.dim()
            },
        }
        .into());
    }
    let h_cross = crate::tensor::hadamard(hl, hr)?;
    let mut h_abs = Vector::zeros(hl.dim());
    let mut sign = Vector::zeros(hl.dim());
    for j in 0..hl.dim() {
        let diff = hl.data[j] - hr.data[j];
        h_abs.data[j] = diff.abs();
        sign.data[j] = if diff > 0.0 {
            1.0
        } else if diff < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
    let mut pre = sp.w_cross.mul_vec(&h_cross);
    pre.add_assign(&sp.w_plus.mul_vec(&h_abs));
    pre.add_assign(&sp.b_h);
    let hs = elementwise(&pre, Nonlinearity::Sigmoid);
    let mut logits = sp.w_p.mul_vec(&hs);
    logits.add_assign(&sp.b_p);
    let phat = softmax(&logits);
    let yhat = expected_score(&phat);
    Ok(SimTrace {
        h_cross,
        h_abs,
        sign,
        hs,
        phat,
        yhat,
    })
}

/// Propagate a similarity logit gradient; returns `(dhL, dhR)`.
pub fn similarity_backward(
    sp: &SimilarityParams,
    t: &SimTrace,
    hl: &Vector,
    hr: &Vector,
    dlogits: &Vector,
    g: &mut SimilarityParams,
) -> (Vector, Vector) {
    g.w_p.add_outer(dlogits, &t.hs);
    g.b_p.add_assign(dlogits);
    let dhs = sp.w_p.tr_mul_vec(dlogits);
    let mut dhs_pre = Vector::zeros(t.hs.dim());
    for j in 0..t.hs.dim() {
        let s = t.hs.data[j];
        dhs_pre.data[j] = dhs.data[j] * s * (1.0 - s);
    }
    g.w_cross.add_outer(&dhs_pre, &t.h_cross);
    g.w_plus.add_outer(&dhs_pre, &t.h_abs);
    g.b_h.add_assign(&dhs_pre);
    let dh_cross = sp.w_cross.tr_mul_vec(&dhs_pre);
    let dh_abs = sp.w_plus.tr_mul_vec(&dhs_pre);
    let mut dhl = Vector::zeros(hl.dim());
    let mut dhr = Vector::zeros(hr.dim());
    for j in 0..hl.dim() {
        dhl.data[j] = dh_cross.data[j] * hr.data[j] + dh_abs.data[j] * t.sign.data[j];
        dhr.data[j] = dh_cross.data[j] * hl.data[j] - dh_abs.data[j] * t.sign.data[j];
    }
    (dhl, dhr)
}

/// Sparse target over ranks 1..K whose expectation reproduces `y`: mass
/// `y − ⌊y⌋` on rank `⌊y⌋ + 1` and the remainder on rank `⌊y⌋`.
pub fn sparse_target(y: f64, k: usize) -> Result<Vector, HeadError> {
    if !(1.0..=k as f64).contains(&y) || !y.is_finite() {
        return Err(HeadError::ScoreOutOfRange { y, k });
    }
    let mut p = Vector::zeros(k);
    let floor = y.floor();
    let idx = floor as usize - 1;
    let frac = y - floor;
    p.data[idx] = 1.0 - frac;
    if idx + 1 < k {
        p.data[idx + 1] = frac;
    }
    // y = K has floor = K and frac = 0: all mass on the last rank.
    Ok(p)
}

/// KL divergence Σ p log(p/p̂) (0·log 0 = 0) and its logit gradient p̂ − p.
pub fn kl_loss_grad(p: &Vector, phat: &Vector) -> (f64, Vector) {
    debug_assert_eq!(p.dim(), phat.dim());
    let mut loss = 0.0;
    for j in 0..p.dim() {
        let pj = p.data[j];
        if pj > 0.0 {
            loss += pj * (pj.ln() - phat.data[j].max(f64::MIN_POSITIVE).ln());
        }
    }
    let mut grad = phat.clone();
    for j in 0..p.dim() {
        grad.data[j] -= p.data[j];
    }
    (loss, grad)
}

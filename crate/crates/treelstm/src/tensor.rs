//! Dense 64-bit vectors and matrices, elementwise nonlinearities, and a
//! seeded, platform-independent random number generator.
//!
//! Everything above this module is built from these pieces; there is no
//! BLAS and no automatic differentiation. Gradients are derived by hand in
//! [`crate::cells`] and [`crate::heads`], which is also why the whole crate
//! works in `f64`: central finite differences at `1e-5` step size need the
//! headroom.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: operand `{operand}` has dimension {got}, expected {expected}")]
    DimMismatch {
        op: &'static str,
        operand: String,
        expected: usize,
        got: usize,
    },
}

fn dim_err(
    op: &'static str,
    operand: impl Into<String>,
    expected: usize,
    got: usize,
) -> TensorError {
    TensorError::DimMismatch {
        op,
        operand: operand.into(),
        expected,
        got,
    }
}

/// Dense vector of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vector {
    pub data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector {
            data: vec![0.0; dim],
        }
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Vector {
            data: data.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn add_assign(&mut self, other: &Vector) {
        debug_assert_eq!(self.dim(), other.dim());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, s: f64) -> Vector {
        Vector {
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Concatenate two vectors, `[self; other]`.
    pub fn concat(&self, other: &Vector) -> Vector {
        let mut data = Vec::with_capacity(self.dim() + other.dim());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Vector { data }
    }
}

/// Dense row-major matrix of `f64` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `y = M x`.
    pub fn mul_vec(&self, x: &Vector) -> Vector {
        debug_assert_eq!(self.cols, x.dim());
        let mut out = Vector::zeros(self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            out.data[r] = row.iter().zip(&x.data).map(|(a, b)| a * b).sum();
        }
        out
    }

    /// `y = Mᵀ v`, used when propagating gradients back through `M x`.
    pub fn tr_mul_vec(&self, v: &Vector) -> Vector {
        debug_assert_eq!(self.rows, v.dim());
        let mut out = Vector::zeros(self.cols);
        for r in 0..self.rows {
            let vr = v.data[r];
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, m) in out.data.iter_mut().zip(row) {
                *o += m * vr;
            }
        }
        out
    }

    /// `M += u vᵀ`, the outer-product accumulation used for weight gradients.
    pub fn add_outer(&mut self, u: &Vector, v: &Vector) {
        debug_assert_eq!(self.rows, u.dim());
        debug_assert_eq!(self.cols, v.dim());
        for r in 0..self.rows {
            let ur = u.data[r];
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (m, x) in row.iter_mut().zip(&v.data) {
                *m += ur * x;
            }
        }
    }
}

/// Read-only view of one named parameter tensor; the unit all bookkeeping
/// (optimizer state, checkpoints, gradient checks) iterates over.
pub struct NamedTensor<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

/// Mutable counterpart of [`NamedTensor`].
pub struct NamedTensorMut<'a> {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: &'a mut [f64],
}

impl Matrix {
    pub fn view<'a>(&'a self, name: impl Into<String>) -> NamedTensor<'a> {
        NamedTensor {
            name: name.into(),
            dims: vec![self.rows, self.cols],
            data: &self.data,
        }
    }

    pub fn view_mut<'a>(&'a mut self, name: impl Into<String>) -> NamedTensorMut<'a> {
        NamedTensorMut {
            name: name.into(),
            dims: vec![self.rows, self.cols],
            data: &mut self.data,
        }
    }
}

impl Vector {
    pub fn view<'a>(&'a self, name: impl Into<String>) -> NamedTensor<'a> {
        NamedTensor {
            name: name.into(),
            dims: vec![self.data.len()],
            data: &self.data,
        }
    }

    pub fn view_mut<'a>(&'a mut self, name: impl Into<String>) -> NamedTensorMut<'a> {
        NamedTensorMut {
            name: name.into(),
            dims: vec![self.data.len()],
            data: &mut self.data,
        }
    }
}

/// Elementwise nonlinearity selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Sigmoid,
    Tanh,
}

// Largest f64 strictly below 1.0. Sigmoid and tanh outputs are clamped into
// the open interval so stored gate activations always satisfy the
// boundedness invariant, even for saturating inputs where the naive
// expression would round to exactly 1.
const ONE_MINUS_ULP: f64 = 1.0 - f64::EPSILON / 2.0;

pub fn sigmoid(x: f64) -> f64 {
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, ONE_MINUS_ULP)
}

pub fn tanh(x: f64) -> f64 {
    x.tanh().clamp(-ONE_MINUS_ULP, ONE_MINUS_ULP)
}

/// Apply a nonlinearity entry by entry.
pub fn elementwise(v: &Vector, kind: Nonlinearity) -> Vector {
    let f = match kind {
        Nonlinearity::Sigmoid => sigmoid,
        Nonlinearity::Tanh => tanh,
    };
    Vector {
        data: v.data.iter().map(|&x| f(x)).collect(),
    }
}

/// Pointwise product `a ⊙ b`.
pub fn hadamard(a: &Vector, b: &Vector) -> Result<Vector, TensorError> {
    if a.dim() != b.dim() {
        return Err(dim_err("hadamard", "b", a.dim(), b.dim()));
    }
    Ok(Vector {
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    })
}

/// Pre-activation `W x + Σ_k U_k h_k + b`.
///
/// The `W x` term is optional: constituency-tree interior nodes have no
/// input vector, and their pre-activations are built from the recurrent
/// terms alone. Pairing `W` and `x` in one option makes "W present iff x
/// present" hold by construction.
pub fn affine_combine(
    wx: Option<(&Matrix, &Vector)>,
    u_terms: &[(&Matrix, &Vector)],
    b: &Vector,
) -> Result<Vector, TensorError> {
    let d = b.dim();
    let mut out = b.clone();
    if let Some((w, x)) = wx {
        if w.rows != d {
            return Err(dim_err("affine_combine", "W.rows", d, w.rows));
        }
        if w.cols != x.dim() {
            return Err(dim_err("affine_combine", "x", w.cols, x.dim()));
        }
        out.add_assign(&w.mul_vec(x));
    }
    for (k, (u, h)) in u_terms.iter().enumerate() {
        if u.rows != d {
            return Err(dim_err("affine_combine", format!("U[{k}].rows"), d, u.rows));
        }
        if u.cols != h.dim() {
            return Err(dim_err(
                "affine_combine",
                format!("h[{k}]"),
                u.cols,
                h.dim(),
            ));
        }
        out.add_assign(&u.mul_vec(h));
    }
    Ok(out)
}

/// Seeded pseudo-random generator with a fixed, documented algorithm
/// (SplitMix64), so test vectors and checkpoints are identical on every
/// platform. The state update is
///
/// ```text
/// state += 0x9E3779B97F4A7C15
/// z = state
/// z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
/// z = (z ^ (z >> 27)) * 0x94D049BB133111EB
/// output = z ^ (z >> 31)
/// ```
///
/// and `uniform()` maps the top 53 bits onto `[0, 1)`.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n` via the widening-multiply reduction.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

/// Matrix with entries i.i.d. uniform on `[-scale, scale]`.
pub fn init_mat(rows: usize, cols: usize, scale: f64, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.uniform_in(-scale, scale);
    }
    m
}

/// Vector with entries i.i.d. uniform on `[-scale, scale]`.
pub fn init_vec(dim: usize, scale: f64, rng: &mut Rng) -> Vector {
    let mut v = Vector::zeros(dim);
    for x in v.data.iter_mut() {
        *x = rng.uniform_in(-scale, scale);
    }
    v
}

/// Sum vectors with a per-coordinate canonical addend order, so the result
/// is bit-identical under any permutation of the inputs. Child-sum cells
/// use this to make their order-insensitivity exact rather than
/// approximate.
pub fn sum_vectors_canonical(dim: usize, vs: &[&Vector]) -> Vector {
    let mut out = Vector::zeros(dim);
    if vs.is_empty() {
        return out;
    }
    let mut addends = Vec::with_capacity(vs.len());
    for (i, o) in out.data.iter_mut().enumerate() {
        addends.clear();
        addends.extend(vs.iter().map(|v| v.data[i]));
        addends.sort_by(f64::total_cmp);
        *o = addends.iter().sum();
    }
    out
}

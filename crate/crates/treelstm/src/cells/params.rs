//! Gate parameters for one composition cell.
//!
//! Every cell owns, per gate g ∈ {i, f, o, u}: an input matrix `W^(g)`
//! (d×e, applied wherever a node has an input vector), one or more
//! recurrent matrices `U^(g)` (d×d), and a bias `b^(g)`. How many `U`
//! blocks exist depends on the kind:
//!
//! * chain and child-sum cells keep a single `U` per gate; the child-sum
//!   forget gate reuses its one `U^(f)` against every child,
//! * the slot-addressed cell keeps one `U` per child slot for i/o/u, and
//!   either N (diagonal only) or N×N (`u_f[k*n + l]`: forget gate k reading
//!   child l) blocks for the forget gates.

use crate::tensor::{init_mat, Matrix, NamedTensor, NamedTensorMut, Rng, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Chain,
    ChildSum,
    Nary { arity: usize, off_diagonal: bool },
}

impl CellKind {
    /// Number of `U` blocks per i/o/u gate.
    pub fn recurrent_slots(&self) -> usize {
        match self {
            CellKind::Chain | CellKind::ChildSum => 1,
            CellKind::Nary { arity, .. } => *arity,
        }
    }

    /// Number of `U^(f)` blocks.
    pub fn forget_slots(&self) -> usize {
        match self {
            CellKind::Chain | CellKind::ChildSum => 1,
            CellKind::Nary {
                arity,
                off_diagonal,
            } => {
                if *off_diagonal {
                    arity * arity
                } else {
                    *arity
                }
            }
        }
    }

    /// Largest admissible child count, if bounded.
    pub fn max_children(&self) -> Option<usize> {
        match self {
            CellKind::Chain => Some(1),
            CellKind::ChildSum => None,
            CellKind::Nary { arity, .. } => Some(*arity),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellParams {
    pub kind: CellKind,
    pub in_dim: usize,
    pub hid_dim: usize,
    pub w_i: Matrix,
    pub w_f: Matrix,
    pub w_o: Matrix,
    pub w_u: Matrix,
    pub u_i: Vec<Matrix>,
    pub u_f: Vec<Matrix>,
    pub u_o: Vec<Matrix>,
    pub u_u: Vec<Matrix>,
    pub b_i: Vector,
    pub b_f: Vector,
    pub b_o: Vector,
    pub b_u: Vector,
}

impl CellParams {
    /// Weights uniform on `[-scale, scale]`, biases zero except the forget
    /// bias, which starts at `forget_bias` so early training does not
    /// discard child state.
    pub fn init(
        kind: CellKind,
        in_dim: usize,
        hid_dim: usize,
        scale: f64,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        let d = hid_dim;
        let w = |rng: &mut Rng| init_mat(d, in_dim, scale, rng);
        let us = |n: usize, rng: &mut Rng| (0..n).map(|_| init_mat(d, d, scale, rng)).collect();
        let mut b_f = Vector::zeros(d);
        b_f.data.fill(forget_bias);
        CellParams {
            kind,
            in_dim,
            hid_dim,
            w_i: w(rng),
            w_f: w(rng),
            w_o: w(rng),
            w_u: w(rng),
            u_i: us(kind.recurrent_slots(), rng),
            u_f: us(kind.forget_slots(), rng),
            u_o: us(kind.recurrent_slots(), rng),
            u_u: us(kind.recurrent_slots(), rng),
            b_i: Vector::zeros(d),
            b_f,
            b_o: Vector::zeros(d),
            b_u: Vector::zeros(d),
        }
    }

    /// Same shapes, every entry zero; the gradient/accumulator mirror.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut("") {
            t.data.fill(0.0);
        }
        z
    }

    pub fn n_params(&self) -> usize {
        self.tensors("").iter().map(|t| t.data.len()).sum()
    }

    /// Named views over every tensor, in a fixed order shared with
    /// [`Self::tensors_mut`]; `prefix` scopes the names.
    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<NamedTensor<'a>> {
        let mut out = Vec::new();
        out.push(self.w_i.view(format!("{prefix}w_i")));
        out.push(self.w_f.view(format!("{prefix}w_f")));
        out.push(self.w_o.view(format!("{prefix}w_o")));
        out.push(self.w_u.view(format!("{prefix}w_u")));
        for (tag, us) in [
            ("u_i", &self.u_i),
            ("u_f", &self.u_f),
            ("u_o", &self.u_o),
            ("u_u", &self.u_u),
        ] {
            for (k, u) in us.iter().enumerate() {
                out.push(u.view(format!("{prefix}{tag}.{k}")));
            }
        }
        out.push(self.b_i.view(format!("{prefix}b_i")));
        out.push(self.b_f.view(format!("{prefix}b_f")));
        out.push(self.b_o.view(format!("{prefix}b_o")));
        out.push(self.b_u.view(format!("{prefix}b_u")));
        out
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<NamedTensorMut<'a>> {
        let mut out = Vec::new();
        out.push(self.w_i.view_mut(format!("{prefix}w_i")));
        out.push(self.w_f.view_mut(format!("{prefix}w_f")));
        out.push(self.w_o.view_mut(format!("{prefix}w_o")));
        out.push(self.w_u.view_mut(format!("{prefix}w_u")));
        for (tag, us) in [
            ("u_i", &mut self.u_i),
            ("u_f", &mut self.u_f),
            ("u_o", &mut self.u_o),
            ("u_u", &mut self.u_u),
        ] {
            for (k, u) in us.iter_mut().enumerate() {
                out.push(u.view_mut(format!("{prefix}{tag}.{k}")));
            }
        }
        out.push(self.b_i.view_mut(format!("{prefix}b_i")));
        out.push(self.b_f.view_mut(format!("{prefix}b_f")));
        out.push(self.b_o.view_mut(format!("{prefix}b_o")));
        out.push(self.b_u.view_mut(format!("{prefix}b_u")));
        out
    }
}

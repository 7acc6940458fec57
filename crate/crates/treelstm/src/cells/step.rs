//! One gated composition step: forward with a full trace, and the exact
//! backward pass derived from the gate equations.
//!
//! Forward, for a node with input `x` (optional) and children `(h_k, c_k)`:
//!
//! ```text
//! i = σ(W^(i) x + Σ U-terms + b^(i))        u = tanh(W^(u) x + Σ U-terms + b^(u))
//! f_k = σ(W^(f) x + U^(f)-terms_k + b^(f))  o = σ(W^(o) x + Σ U-terms + b^(o))
//! c = i ⊙ u + Σ_k f_k ⊙ c_k                 h = o ⊙ tanh(c)
//! ```
//!
//! The recurrent U-terms differ per cell kind: the previous state for
//! chains, the child-sum h̃ for child-sum cells, and per-slot matrices for
//! the slot-addressed cell. Child-sum aggregation uses the canonical
//! summation from [`crate::tensor::sum_vectors_canonical`], which makes the
//! forward pass bit-identical under child permutation.

use crate::tensor::{
    affine_combine, elementwise, sum_vectors_canonical, Matrix, Nonlinearity, Vector,
};

use super::params::{CellKind, CellParams};
use super::CellError;

/// Everything the backward pass needs to replay one step.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub x: Option<Vector>,
    pub child_h: Vec<Vector>,
    pub child_c: Vec<Vector>,
    /// Child-sum aggregate Σ h_k; `None` for other kinds.
    pub h_tilde: Option<Vector>,
    pub i: Vector,
    /// One forget gate per child, aligned with `child_h`.
    pub f: Vec<Vector>,
    pub o: Vector,
    pub u: Vector,
    pub c: Vector,
    pub tanh_c: Vector,
    pub h: Vector,
}

/// Gradients a step sends further down: to its input vector and children.
#[derive(Debug)]
pub struct StepBack {
    pub dx: Option<Vector>,
    /// `(dh_k, dc_k)` aligned with the trace's children.
    pub dchildren: Vec<(Vector, Vector)>,
}

fn prod(a: &Vector, b: &Vector) -> Vector {
    debug_assert_eq!(a.dim(), b.dim());
    Vector {
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

/// dpre for a sigmoid gate with stored activation `s`: dval ⊙ s ⊙ (1 − s).
fn sigmoid_back(dval: &Vector, s: &Vector) -> Vector {
    debug_assert_eq!(dval.dim(), s.dim());
    Vector {
        data: dval
            .data
            .iter()
            .zip(&s.data)
            .map(|(d, v)| d * v * (1.0 - v))
            .collect(),
    }
}

/// dpre for a tanh output with stored value `t`: dval ⊙ (1 − t²).
fn tanh_back(dval: &Vector, t: &Vector) -> Vector {
    debug_assert_eq!(dval.dim(), t.dim());
    Vector {
        data: dval
            .data
            .iter()
            .zip(&t.data)
            .map(|(d, v)| d * (1.0 - v * v))
            .collect(),
    }
}

fn check_children(p: &CellParams, n: usize) -> Result<(), CellError> {
    match p.kind {
        CellKind::Chain if n != 1 => Err(CellError::ChainArity { got: n }),
        CellKind::Nary { arity, .. } if n > arity => Err(CellError::Arity { got: n, max: arity }),
        _ => Ok(()),
    }
}

/// Recurrent `(U, h)` pairings for the i/o/u gates.
fn iou_terms<'a>(
    p: &'a CellParams,
    us: &'a [Matrix],
    children: &[(&'a Vector, &'a Vector)],
    h_tilde: Option<&'a Vector>,
) -> Vec<(&'a Matrix, &'a Vector)> {
    match p.kind {
        CellKind::Chain => vec![(&us[0], children[0].0)],
        CellKind::ChildSum => vec![(&us[0], h_tilde.expect("child-sum trace has h_tilde"))],
        CellKind::Nary { .. } => (0..children.len())
            .map(|l| (&us[l], children[l].0))
            .collect(),
    }
}

/// Recurrent `(U, h)` pairings for forget gate `k`.
fn forget_terms<'a>(
    p: &'a CellParams,
    children: &[(&'a Vector, &'a Vector)],
    k: usize,
) -> Vec<(&'a Matrix, &'a Vector)> {
    match p.kind {
        CellKind::Chain | CellKind::ChildSum => vec![(&p.u_f[0], children[k].0)],
        CellKind::Nary {
            arity,
            off_diagonal: true,
        } => (0..children.len())
            .map(|l| (&p.u_f[k * arity + l], children[l].0))
            .collect(),
        CellKind::Nary {
            off_diagonal: false,
            ..
        } => vec![(&p.u_f[k], children[k].0)],
    }
}

/// One forward step. `children` carries `(h_k, c_k)` references; missing
/// slots of an under-full slot-addressed node are simply not passed — they
/// contribute zero everywhere and receive no gradient.
pub fn step(
    p: &CellParams,
    x: Option<&Vector>,
    children: &[(&Vector, &Vector)],
) -> Result<StepTrace, CellError> {
    check_children(p, children.len())?;
    let d = p.hid_dim;

    let h_tilde = match p.kind {
        CellKind::ChildSum => {
            let hs: Vec<&Vector> = children.iter().map(|(h, _)| *h).collect();
            Some(sum_vectors_canonical(d, &hs))
        }
        _ => None,
    };

    let gate = |w: &Matrix, us: &[Matrix], b: &Vector, kind: Nonlinearity| {
        let terms = iou_terms(p, us, children, h_tilde.as_ref());
        let pre = affine_combine(x.map(|xv| (w, xv)), &terms, b)?;
        Ok::<Vector, CellError>(elementwise(&pre, kind))
    };
    let i = gate(&p.w_i, &p.u_i, &p.b_i, Nonlinearity::Sigmoid)?;
    let o = gate(&p.w_o, &p.u_o, &p.b_o, Nonlinearity::Sigmoid)?;
    let u = gate(&p.w_u, &p.u_u, &p.b_u, Nonlinearity::Tanh)?;

    let mut f = Vec::with_capacity(children.len());
    for k in 0..children.len() {
        let pre = affine_combine(
            x.map(|xv| (&p.w_f, xv)),
            &forget_terms(p, children, k),
            &p.b_f,
        )?;
        f.push(elementwise(&pre, Nonlinearity::Sigmoid));
    }

    let mut c = prod(&i, &u);
    let retained: Vec<Vector> = f
        .iter()
        .zip(children)
        .map(|(fk, (_, ck))| prod(fk, ck))
        .collect();
    match p.kind {
        CellKind::ChildSum => {
            let refs: Vec<&Vector> = retained.iter().collect();
            c.add_assign(&sum_vectors_canonical(d, &refs));
        }
        _ => {
            for r in &retained {
                c.add_assign(r);
            }
        }
    }

    let tanh_c = elementwise(&c, Nonlinearity::Tanh);
    let h = prod(&o, &tanh_c);

    Ok(StepTrace {
        x: x.cloned(),
        child_h: children.iter().map(|(h, _)| (*h).clone()).collect(),
        child_c: children.iter().map(|(_, c)| (*c).clone()).collect(),
        h_tilde,
        i,
        f,
        o,
        u,
        c,
        tanh_c,
        h,
    })
}

/// Chain convenience wrapper: one previous state.
pub fn lstm_step(
    p: &CellParams,
    x: &Vector,
    prev_h: &Vector,
    prev_c: &Vector,
) -> Result<StepTrace, CellError> {
    step(p, Some(x), &[(prev_h, prev_c)])
}

/// Exact backward pass of [`step`]. `dh`/`dc_in` are the loss gradients
/// w.r.t. this node's hidden and cell state; parameter gradients accumulate
/// into `g` (a zeroed mirror of `p`), and the returned [`StepBack`] carries
/// the gradients to propagate to the input vector and each child.
pub fn step_backward(
    p: &CellParams,
    t: &StepTrace,
    dh: &Vector,
    dc_in: &Vector,
    g: &mut CellParams,
) -> Result<StepBack, CellError> {
    let r = t.child_h.len();
    debug_assert_eq!(dh.dim(), p.hid_dim);
    debug_assert_eq!(dc_in.dim(), p.hid_dim);

    // h = o ⊙ tanh(c)
    let do_pre = sigmoid_back(&prod(dh, &t.tanh_c), &t.o);
    let mut dc = tanh_back(dh, &t.tanh_c);
    dc = prod(&dc, &t.o);
    dc.add_assign(dc_in);

    // c = i ⊙ u + Σ f_k ⊙ c_k
    let di_pre = sigmoid_back(&prod(&dc, &t.u), &t.i);
    let du_pre = tanh_back(&prod(&dc, &t.i), &t.u);
    let df_pre: Vec<Vector> = (0..r)
        .map(|k| sigmoid_back(&prod(&dc, &t.child_c[k]), &t.f[k]))
        .collect();
    let mut dchildren: Vec<(Vector, Vector)> = (0..r)
        .map(|k| (Vector::zeros(p.hid_dim), prod(&dc, &t.f[k])))
        .collect();

    // Shared W^(f) means the forget pre-gradients sum for the input path.
    let mut df_sum = Vector::zeros(p.hid_dim);
    for dfk in &df_pre {
        df_sum.add_assign(dfk);
    }

    // Input path: dW^(g) += g_pre ⊗ xᵀ, dx += W^(g)ᵀ g_pre.
    let dx = match &t.x {
        Some(x) => {
            let mut dx = Vector::zeros(p.in_dim);
            for (pre, w, wg) in [
                (&di_pre, &p.w_i, &mut g.w_i),
                (&df_sum, &p.w_f, &mut g.w_f),
                (&do_pre, &p.w_o, &mut g.w_o),
                (&du_pre, &p.w_u, &mut g.w_u),
            ] {
                wg.add_outer(pre, x);
                dx.add_assign(&w.tr_mul_vec(pre));
            }
            Some(dx)
        }
        None => None,
    };

    g.b_i.add_assign(&di_pre);
    g.b_f.add_assign(&df_sum);
    g.b_o.add_assign(&do_pre);
    g.b_u.add_assign(&du_pre);

    // Recurrent path, per kind.
    match p.kind {
        CellKind::Chain => {
            let h0 = &t.child_h[0];
            let dh0 = &mut dchildren[0].0;
            for (pre, u, ug) in [
                (&di_pre, &p.u_i[0], &mut g.u_i[0]),
                (&df_pre[0], &p.u_f[0], &mut g.u_f[0]),
                (&do_pre, &p.u_o[0], &mut g.u_o[0]),
                (&du_pre, &p.u_u[0], &mut g.u_u[0]),
            ] {
                ug.add_outer(pre, h0);
                dh0.add_assign(&u.tr_mul_vec(pre));
            }
        }
        CellKind::ChildSum => {
            let h_tilde = t.h_tilde.as_ref().expect("child-sum trace has h_tilde");
            // i/o/u read h̃ = Σ h_k, so their pullback reaches every child.
            let mut common = Vector::zeros(p.hid_dim);
            for (pre, u, ug) in [
                (&di_pre, &p.u_i[0], &mut g.u_i[0]),
                (&do_pre, &p.u_o[0], &mut g.u_o[0]),
                (&du_pre, &p.u_u[0], &mut g.u_u[0]),
            ] {
                ug.add_outer(pre, h_tilde);
                common.add_assign(&u.tr_mul_vec(pre));
            }
            for k in 0..r {
                g.u_f[0].add_outer(&df_pre[k], &t.child_h[k]);
                let dh_k = &mut dchildren[k].0;
                dh_k.add_assign(&common);
                dh_k.add_assign(&p.u_f[0].tr_mul_vec(&df_pre[k]));
            }
        }
        CellKind::Nary {
            arity,
            off_diagonal,
        } => {
            for (l, dchild) in dchildren.iter_mut().enumerate() {
                let h_l = &t.child_h[l];
                for (pre, u, ug) in [
                    (&di_pre, &p.u_i[l], &mut g.u_i[l]),
                    (&do_pre, &p.u_o[l], &mut g.u_o[l]),
                    (&du_pre, &p.u_u[l], &mut g.u_u[l]),
                ] {
                    ug.add_outer(pre, h_l);
                    dchild.0.add_assign(&u.tr_mul_vec(pre));
                }
            }
            for k in 0..r {
                if off_diagonal {
                    for (l, dchild) in dchildren.iter_mut().enumerate() {
                        let idx = k * arity + l;
                        g.u_f[idx].add_outer(&df_pre[k], &t.child_h[l]);
                        dchild.0.add_assign(&p.u_f[idx].tr_mul_vec(&df_pre[k]));
                    }
                } else {
                    g.u_f[k].add_outer(&df_pre[k], &t.child_h[k]);
                    dchildren[k].0.add_assign(&p.u_f[k].tr_mul_vec(&df_pre[k]));
                }
            }
        }
    }

    Ok(StepBack { dx, dchildren })
}

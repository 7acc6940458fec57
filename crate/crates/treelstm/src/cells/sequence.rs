//! Chain LSTM over a token sequence: unidirectional or bidirectional,
//! optionally stacked, with the matching backward pass.
//!
//! Layer ℓ's hidden state at step t is layer ℓ+1's input at step t. A
//! bidirectional encoder runs the SAME parameter stack over the sequence
//! and its reversal — forward and backward transition functions share
//! parameters — and its output representation is the concatenation
//! `[forward final; backward final]`, in that fixed order.

use crate::tensor::{NamedTensor, NamedTensorMut, Rng, Vector};

use super::params::{CellKind, CellParams};
use super::step::{lstm_step, step_backward, StepTrace};
use super::CellError;

/// A stack of chain cells plus the direction flag.
#[derive(Debug, Clone)]
pub struct ChainEncoder {
    pub cells: Vec<CellParams>,
    pub bidirectional: bool,
}

impl ChainEncoder {
    /// `layers ≥ 1`; layer 0 reads `in_dim`-vectors, upper layers read the
    /// hidden dimension.
    pub fn init(
        layers: usize,
        bidirectional: bool,
        in_dim: usize,
        hid_dim: usize,
        scale: f64,
        forget_bias: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(layers >= 1);
        let cells = (0..layers)
            .map(|l| {
                let e = if l == 0 { in_dim } else { hid_dim };
                CellParams::init(CellKind::Chain, e, hid_dim, scale, forget_bias, rng)
            })
            .collect();
        ChainEncoder {
            cells,
            bidirectional,
        }
    }

    pub fn hid_dim(&self) -> usize {
        self.cells[0].hid_dim
    }

    /// Dimension of the representation handed to a head.
    pub fn out_dim(&self) -> usize {
        if self.bidirectional {
            2 * self.hid_dim()
        } else {
            self.hid_dim()
        }
    }

    pub fn zeros_like(&self) -> Self {
        ChainEncoder {
            cells: self.cells.iter().map(CellParams::zeros_like).collect(),
            bidirectional: self.bidirectional,
        }
    }

    pub fn n_params(&self) -> usize {
        self.cells.iter().map(CellParams::n_params).sum()
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<NamedTensor<'a>> {
        let mut out = Vec::new();
        for (l, c) in self.cells.iter().enumerate() {
            out.extend(c.tensors(&format!("{prefix}l{l}.")));
        }
        out
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<NamedTensorMut<'a>> {
        let mut out = Vec::new();
        for (l, c) in self.cells.iter_mut().enumerate() {
            out.extend(c.tensors_mut(&format!("{prefix}l{l}.")));
        }
        out
    }
}

/// Per-layer, per-step traces for one or both directions. `bwd[l][s]` is
/// the trace for processing step `s` of the REVERSED sequence, i.e.
/// original position `T − 1 − s`.
#[derive(Debug)]
pub struct SeqTrace {
    pub fwd: Vec<Vec<StepTrace>>,
    pub bwd: Vec<Vec<StepTrace>>,
}

impl SeqTrace {
    pub fn seq_len(&self) -> usize {
        self.fwd[0].len()
    }

    /// Representation fed to a head: top-layer final hidden state, with the
    /// two directions concatenated `[forward; backward]` when present.
    pub fn final_hidden(&self) -> Vector {
        let f = &self.fwd.last().unwrap().last().unwrap().h;
        match self.bwd.last() {
            Some(b) => f.concat(&b.last().unwrap().h),
            None => f.clone(),
        }
    }

    /// Top-layer hidden state at original position `t` (concatenated for
    /// bidirectional runs).
    pub fn hidden_at(&self, t: usize) -> Vector {
        let f = &self.fwd.last().unwrap()[t].h;
        match self.bwd.last() {
            Some(b) => f.concat(&b[self.seq_len() - 1 - t].h),
            None => f.clone(),
        }
    }
}

fn run_direction(
    cells: &[CellParams],
    inputs: &[&Vector],
) -> Result<Vec<Vec<StepTrace>>, CellError> {
    let d = cells[0].hid_dim;
    let mut layer_inputs: Vec<Vector> = inputs.iter().map(|x| (*x).clone()).collect();
    let mut all = Vec::with_capacity(cells.len());
    for cell in cells {
        let mut traces = Vec::with_capacity(layer_inputs.len());
        let mut h = Vector::zeros(d);
        let mut c = Vector::zeros(d);
        for x in &layer_inputs {
            let t = lstm_step(cell, x, &h, &c)?;
            h = t.h.clone();
            c = t.c.clone();
            traces.push(t);
        }
        layer_inputs = traces.iter().map(|t| t.h.clone()).collect();
        all.push(traces);
    }
    Ok(all)
}

pub fn run_sequence(enc: &ChainEncoder, xs: &[Vector]) -> Result<SeqTrace, CellError> {
    if xs.is_empty() {
        return Err(CellError::EmptySequence);
    }
    let fwd_in: Vec<&Vector> = xs.iter().collect();
    let fwd = run_direction(&enc.cells, &fwd_in)?;
    let bwd = if enc.bidirectional {
        let bwd_in: Vec<&Vector> = xs.iter().rev().collect();
        run_direction(&enc.cells, &bwd_in)?
    } else {
        Vec::new()
    };
    Ok(SeqTrace { fwd, bwd })
}

/// Backpropagate through one direction; returns d-loss/d-input per step in
/// processing order.
fn backward_direction(
    cells: &[CellParams],
    dir: &[Vec<StepTrace>],
    d_top_final: &Vector,
    g: &mut [CellParams],
) -> Result<Vec<Vector>, CellError> {
    let t_len = dir[0].len();
    let d = cells[0].hid_dim;
    let mut dh_above: Vec<Vector> = vec![Vector::zeros(d); t_len];
    dh_above[t_len - 1] = d_top_final.clone();
    for l in (0..cells.len()).rev() {
        let mut dx_layer: Vec<Vector> = vec![Vector::zeros(cells[l].in_dim); t_len];
        let mut dh_carry = Vector::zeros(d);
        let mut dc_carry = Vector::zeros(d);
        for t in (0..t_len).rev() {
            let mut dh = dh_above[t].clone();
            dh.add_assign(&dh_carry);
            let back = step_backward(&cells[l], &dir[l][t], &dh, &dc_carry, &mut g[l])?;
            let (dh_prev, dc_prev) = back.dchildren.into_iter().next().expect("chain child");
            dh_carry = dh_prev;
            dc_carry = dc_prev;
            dx_layer[t] = back.dx.expect("chain steps always have inputs");
        }
        dh_above = dx_layer;
    }
    Ok(dh_above)
}

/// Backward pass seeded by the gradient on [`SeqTrace::final_hidden`].
/// Parameter gradients accumulate into `g`; input-vector gradients add
/// into `dxs` (one slot per original position).
pub fn sequence_backward(
    enc: &ChainEncoder,
    trace: &SeqTrace,
    d_final: &Vector,
    g: &mut ChainEncoder,
    dxs: &mut [Vector],
) -> Result<(), CellError> {
    let t_len = trace.seq_len();
    debug_assert_eq!(dxs.len(), t_len);
    debug_assert_eq!(d_final.dim(), enc.out_dim());
    let d = enc.hid_dim();
    if enc.bidirectional {
        let d_fwd = Vector::from_slice(&d_final.data[..d]);
        let d_bwd = Vector::from_slice(&d_final.data[d..]);
        let fwd_dx = backward_direction(&enc.cells, &trace.fwd, &d_fwd, &mut g.cells)?;
        for (t, dx) in fwd_dx.into_iter().enumerate() {
            dxs[t].add_assign(&dx);
        }
        let bwd_dx = backward_direction(&enc.cells, &trace.bwd, &d_bwd, &mut g.cells)?;
        for (s, dx) in bwd_dx.into_iter().enumerate() {
            dxs[t_len - 1 - s].add_assign(&dx);
        }
    } else {
        let fwd_dx = backward_direction(&enc.cells, &trace.fwd, d_final, &mut g.cells)?;
        for (t, dx) in fwd_dx.into_iter().enumerate() {
            dxs[t].add_assign(&dx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::init_vec;

    fn encoder(layers: usize, bi: bool, seed: u64) -> ChainEncoder {
        ChainEncoder::init(layers, bi, 3, 4, 0.3, 0.0, &mut Rng::new(seed))
    }

    fn inputs(n: usize, seed: u64) -> Vec<Vector> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| init_vec(3, 1.0, &mut rng)).collect()
    }

    #[test]
    fn length_one_equals_single_step() {
        let enc = encoder(1, false, 1);
        let xs = inputs(1, 2);
        let trace = run_sequence(&enc, &xs).unwrap();
        let manual =
            lstm_step(&enc.cells[0], &xs[0], &Vector::zeros(4), &Vector::zeros(4)).unwrap();
        assert_eq!(trace.final_hidden().data, manual.h.data);
    }

    #[test]
    fn empty_sequence_rejected() {
        let enc = encoder(1, false, 1);
        assert!(matches!(
            run_sequence(&enc, &[]).unwrap_err(),
            CellError::EmptySequence
        ));
    }

    #[test]
    fn palindrome_directions_mirror() {
        // Shared parameters over a palindromic input: the backward pass
        // consumes the identical sequence, so its per-step states equal the
        // forward ones exactly.
        let enc = encoder(1, true, 3);
        let mut xs = inputs(2, 4);
        xs.push(xs[1].clone());
        xs.push(xs[0].clone());
        // xs = [a, b, b, a]
        let trace = run_sequence(&enc, &xs).unwrap();
        for t in 0..4 {
            assert_eq!(trace.fwd[0][t].h.data, trace.bwd[0][t].h.data);
            assert_eq!(trace.fwd[0][t].c.data, trace.bwd[0][t].c.data);
        }
    }

    #[test]
    fn two_layers_equal_manual_composition() {
        let enc = encoder(2, false, 5);
        let xs = inputs(6, 6);
        let trace = run_sequence(&enc, &xs).unwrap();

        let mut h = Vector::zeros(4);
        let mut c = Vector::zeros(4);
        let mut layer1 = Vec::new();
        for x in &xs {
            let t = lstm_step(&enc.cells[0], x, &h, &c).unwrap();
            h = t.h.clone();
            c = t.c.clone();
            layer1.push(t.h.clone());
        }
        let mut h2 = Vector::zeros(4);
        let mut c2 = Vector::zeros(4);
        for (t, x) in layer1.iter().enumerate() {
            let tr = lstm_step(&enc.cells[1], x, &h2, &c2).unwrap();
            h2 = tr.h.clone();
            c2 = tr.c.clone();
            assert_eq!(trace.fwd[1][t].h.data, h2.data);
        }
        assert_eq!(trace.final_hidden().data, h2.data);
    }

    #[test]
    fn output_dimensions() {
        let xs = inputs(3, 7);
        assert_eq!(
            run_sequence(&encoder(1, false, 8), &xs)
                .unwrap()
                .final_hidden()
                .dim(),
            4
        );
        assert_eq!(
            run_sequence(&encoder(1, true, 8), &xs)
                .unwrap()
                .final_hidden()
                .dim(),
            8
        );
        assert_eq!(encoder(2, true, 8).out_dim(), 8);
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        for (layers, bi) in [(1, false), (2, false), (1, true), (2, true)] {
            let enc = ChainEncoder::init(layers, bi, 3, 4, 0.3, 0.0, &mut Rng::new(11));
            let xs = inputs(4, 12);
            let w = init_vec(enc.out_dim(), 1.0, &mut Rng::new(13));

            let loss =
                |xs: &[Vector]| -> f64 { w.dot(&run_sequence(&enc, xs).unwrap().final_hidden()) };

            let trace = run_sequence(&enc, &xs).unwrap();
            let mut g = enc.zeros_like();
            let mut dxs = vec![Vector::zeros(3); 4];
            sequence_backward(&enc, &trace, &w, &mut g, &mut dxs).unwrap();

            let eps = 1e-5;
            for t in 0..4 {
                for j in 0..3 {
                    let mut plus = xs.clone();
                    plus[t].data[j] += eps;
                    let mut minus = xs.clone();
                    minus[t].data[j] -= eps;
                    let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                    let a = dxs[t].data[j];
                    assert!(
                        (a - num).abs() <= 1e-7 * a.abs().max(num.abs()).max(1.0),
                        "layers={layers} bi={bi} dx[{t}][{j}]: {a} vs {num}"
                    );
                }
            }
        }
    }
}

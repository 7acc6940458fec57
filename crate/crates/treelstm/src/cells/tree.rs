//! Bottom-up tree evaluation and backpropagation through structure.
//!
//! `run_tree` evaluates a tree cell at every node in post-order; the
//! backward pass walks the reverse order, so a parent's state gradients are
//! complete before they are scattered to its children (cell gradient scaled
//! by the per-child forget gate, hidden gradient through the recurrent
//! matrices).

use crate::tensor::Vector;
use crate::trees::Tree;

use super::params::{CellKind, CellParams};
use super::step::{step, step_backward, StepTrace};
use super::CellError;

/// One [`StepTrace`] per node, indexed by node id.
#[derive(Debug)]
pub struct TreeTrace {
    pub steps: Vec<StepTrace>,
}

impl TreeTrace {
    pub fn hidden(&self, node: usize) -> &Vector {
        &self.steps[node].h
    }
}

/// Evaluate `cell` over `tree`. `inputs[n]` is node n's input vector:
/// every node for dependency trees, leaves only for constituency trees
/// (interior nodes pass `None`, and the W·x term is absent there, not a
/// zero-vector multiply).
pub fn run_tree(
    cell: &CellParams,
    tree: &Tree,
    inputs: &[Option<Vector>],
) -> Result<TreeTrace, CellError> {
    if matches!(cell.kind, CellKind::Chain) {
        return Err(CellError::ChainOnTree);
    }
    debug_assert_eq!(inputs.len(), tree.n_nodes());
    let mut steps: Vec<Option<StepTrace>> = vec![None; tree.n_nodes()];
    for node in tree.post_order() {
        let kids = &tree.nodes[node].children;
        if kids.is_empty() && inputs[node].is_none() {
            return Err(CellError::MissingInput { node });
        }
        let trace = {
            let children: Vec<(&Vector, &Vector)> = kids
                .iter()
                .map(|&k| {
                    let s = steps[k].as_ref().expect("post-order visits children first");
                    (&s.h, &s.c)
                })
                .collect();
            step(cell, inputs[node].as_ref(), &children)?
        };
        steps[node] = Some(trace);
    }
    Ok(TreeTrace {
        steps: steps
            .into_iter()
            .map(|s| s.expect("all nodes visited"))
            .collect(),
    })
}

/// Backward pass over a [`TreeTrace`]. `dh_nodes[n]` carries the loss
/// gradient w.r.t. node n's hidden state (from whatever head read it);
/// parameter gradients accumulate into `g`, and `dxs[n]` receives the
/// gradient w.r.t. node n's input vector where one was given.
pub fn tree_backward(
    cell: &CellParams,
    tree: &Tree,
    trace: &TreeTrace,
    dh_nodes: &[Option<Vector>],
    g: &mut CellParams,
    dxs: &mut [Option<Vector>],
) -> Result<(), CellError> {
    let d = cell.hid_dim;
    debug_assert_eq!(dh_nodes.len(), tree.n_nodes());
    debug_assert_eq!(dxs.len(), tree.n_nodes());
    let mut acc_dh: Vec<Vector> = (0..tree.n_nodes()).map(|_| Vector::zeros(d)).collect();
    let mut acc_dc: Vec<Vector> = (0..tree.n_nodes()).map(|_| Vector::zeros(d)).collect();

    let order = tree.post_order();
    for &node in order.iter().rev() {
        let mut dh = acc_dh[node].clone();
        if let Some(up) = &dh_nodes[node] {
            dh.add_assign(up);
        }
        let dc = acc_dc[node].clone();
        let back = step_backward(cell, &trace.steps[node], &dh, &dc, g)?;
        for (k, &child) in tree.nodes[node].children.iter().enumerate() {
            acc_dh[child].add_assign(&back.dchildren[k].0);
            acc_dc[child].add_assign(&back.dchildren[k].1);
        }
        if let Some(dx) = back.dx {
            dxs[node] = Some(dx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::sequence::{run_sequence, ChainEncoder};
    use crate::tensor::{init_vec, Rng};
    use crate::trees::{parse_constituency, parse_dependency};

    fn chain_tree(n: usize) -> Tree {
        let rows: Vec<(usize, String, usize)> = (1..=n)
            .map(|i| (i, format!("w{i}"), if i == n { 0 } else { i + 1 }))
            .collect();
        parse_dependency(&rows).unwrap()
    }

    fn rand_inputs(n: usize, e: usize, seed: u64) -> Vec<Option<Vector>> {
        let mut rng = Rng::new(seed);
        (0..n).map(|_| Some(init_vec(e, 1.0, &mut rng))).collect()
    }

    #[test]
    fn single_node_tree_is_one_leaf_step() {
        let cell = CellParams::init(CellKind::ChildSum, 3, 4, 0.3, 0.0, &mut Rng::new(1));
        let tree = parse_dependency(&[(1, "only".to_string(), 0)]).unwrap();
        let inputs = rand_inputs(1, 3, 2);
        let trace = run_tree(&cell, &tree, &inputs).unwrap();
        let manual = step(&cell, inputs[0].as_ref(), &[]).unwrap();
        assert_eq!(trace.steps[0].h.data, manual.h.data);
    }

    #[test]
    fn chain_tree_reduces_to_sequence() {
        // A left-branching dependency chain evaluated with the child-sum
        // cell, and with a 1-slot tree cell, matches the chain LSTM
        // position by position.
        let n = 7;
        let mut rng = Rng::new(3);
        let cs = CellParams::init(CellKind::ChildSum, 3, 4, 0.3, 0.0, &mut rng);
        let mut chain = cs.clone();
        chain.kind = CellKind::Chain;
        let mut nary = cs.clone();
        nary.kind = CellKind::Nary {
            arity: 1,
            off_diagonal: true,
        };
        let enc = ChainEncoder {
            cells: vec![chain],
            bidirectional: false,
        };

        let tree = chain_tree(n);
        let inputs = rand_inputs(n, 3, 4);
        let xs: Vec<Vector> = inputs.iter().map(|x| x.clone().unwrap()).collect();

        let seq = run_sequence(&enc, &xs).unwrap();
        for cell in [&cs, &nary] {
            let tt = run_tree(cell, &tree, &inputs).unwrap();
            for t in 0..n {
                for j in 0..4 {
                    assert!((tt.steps[t].h.data[j] - seq.fwd[0][t].h.data[j]).abs() <= 1e-12);
                    assert!((tt.steps[t].c.data[j] - seq.fwd[0][t].c.data[j]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn binary_tree_matches_manual_steps() {
        let cell = CellParams::init(
            CellKind::Nary {
                arity: 2,
                off_diagonal: true,
            },
            3,
            4,
            0.3,
            0.0,
            &mut Rng::new(5),
        );
        let tree = parse_constituency("(0 (1 (2 a) (3 b)) (4 (5 c) (6 d)))").unwrap();
        // Leaves get inputs, interior nodes do not.
        let mut rng = Rng::new(6);
        let inputs: Vec<Option<Vector>> = tree
            .nodes
            .iter()
            .map(|n| n.token.map(|_| init_vec(3, 1.0, &mut rng)))
            .collect();
        let trace = run_tree(&cell, &tree, &inputs).unwrap();

        let leaf = |i: usize| step(&cell, inputs[i].as_ref(), &[]).unwrap();
        // Node ids follow completion order: a=0, b=1, (a b)=2, c=3, d=4, (c d)=5, root=6.
        let a = leaf(0);
        let b = leaf(1);
        let ab = step(&cell, None, &[(&a.h, &a.c), (&b.h, &b.c)]).unwrap();
        let c = leaf(3);
        let d = leaf(4);
        let cd = step(&cell, None, &[(&c.h, &c.c), (&d.h, &d.c)]).unwrap();
        let root = step(&cell, None, &[(&ab.h, &ab.c), (&cd.h, &cd.c)]).unwrap();
        assert_eq!(trace.steps[6].h.data, root.h.data);
        assert_eq!(trace.steps[2].c.data, ab.c.data);
        assert_eq!(trace.steps[5].h.data, cd.h.data);
    }

    #[test]
    fn leaf_without_input_is_an_error() {
        let cell = CellParams::init(CellKind::ChildSum, 3, 4, 0.3, 0.0, &mut Rng::new(7));
        let tree = parse_dependency(&[(1, "x".to_string(), 0)]).unwrap();
        assert!(matches!(
            run_tree(&cell, &tree, &[None]).unwrap_err(),
            CellError::MissingInput { node: 0 }
        ));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cell = CellParams::init(CellKind::ChildSum, 3, 4, 0.3, 0.0, &mut Rng::new(8));
        let tree = chain_tree(4);
        let inputs = rand_inputs(4, 3, 9);
        let trace = run_tree(&cell, &tree, &inputs).unwrap();
        let mut g = cell.zeros_like();
        let mut dxs = vec![None; 4];
        let dh = vec![None; 4];
        tree_backward(&cell, &tree, &trace, &dh, &mut g, &mut dxs).unwrap();
        assert!(g
            .tensors("")
            .iter()
            .all(|t| t.data.iter().all(|&v| v == 0.0)));
        assert!(dxs
            .iter()
            .all(|d| d.as_ref().unwrap().data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn upstream_gradients_are_additive() {
        let cell = CellParams::init(CellKind::ChildSum, 3, 4, 0.3, 0.0, &mut Rng::new(10));
        let tree = chain_tree(5);
        let inputs = rand_inputs(5, 3, 11);
        let trace = run_tree(&cell, &tree, &inputs).unwrap();
        let mut rng = Rng::new(12);
        let up_a = init_vec(4, 1.0, &mut rng);
        let up_b = init_vec(4, 1.0, &mut rng);

        let run = |dh: Vec<Option<Vector>>| {
            let mut g = cell.zeros_like();
            let mut dxs = vec![None; 5];
            tree_backward(&cell, &tree, &trace, &dh, &mut g, &mut dxs).unwrap();
            g
        };
        let mut only_a = vec![None; 5];
        only_a[1] = Some(up_a.clone());
        let mut only_b = vec![None; 5];
        only_b[4] = Some(up_b.clone());
        let mut both = vec![None; 5];
        both[1] = Some(up_a);
        both[4] = Some(up_b);

        let ga = run(only_a);
        let gb = run(only_b);
        let gboth = run(both);
        for ((ta, tb), tboth) in ga
            .tensors("")
            .iter()
            .zip(gb.tensors(""))
            .zip(gboth.tensors(""))
        {
            for j in 0..ta.data.len() {
                let sum = ta.data[j] + tb.data[j];
                assert!((sum - tboth.data[j]).abs() <= 1e-12);
            }
        }
    }
}

//! Finite-difference verification of every hand-derived gradient.
//!
//! The check builds a small random instance (trees, labels, scores), runs
//! the exact batch forward/backward, then compares each parameter group's
//! analytic gradient against central differences of the batch loss. Runs
//! in eval mode (no dropout), so the loss is a deterministic function of
//! the parameters.

use crate::config::{RunConfig, TaskKind, VariantKind};
use crate::embeddings::Vocab;
use crate::model::{Grads, ModelParams, TrainExample};
use crate::tensor::Rng;
use crate::train::{minibatch_loss_grad, sentiment_train_examples, tree_ids};
use crate::trees::{parse_constituency, parse_dependency, Tree};

pub const FD_EPSILON: f64 = 1e-5;
pub const REL_ERR_LIMIT: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub groups: Vec<GroupReport>,
}

impl CheckReport {
    pub fn worst(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.rel_err))
    }

    pub fn passed(&self) -> bool {
        self.worst() <= REL_ERR_LIMIT
    }
}

/// Infinity-norm relative error, floored so that all-zero groups compare
/// cleanly: ||a - n||_inf / max(||a||_inf, ||n||_inf, 1e-6).
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    diff / inf(analytic).max(inf(numeric)).max(1e-6)
}

fn batch_loss(
    m: &ModelParams,
    examples: &[TrainExample],
    idx: &[usize],
    scratch: &mut Grads,
) -> crate::Result<f64> {
    let mut rng = Rng::new(0);
    Ok(minibatch_loss_grad(m, examples, idx, false, &mut rng, scratch)?.loss)
}

/// Compare analytic and numeric gradients for every named tensor and every
/// embedding row the examples touch. `corrupt` deliberately damages one
/// analytic gradient so the failure path can be exercised end to end.
pub fn check_model(
    m: &mut ModelParams,
    examples: &[TrainExample],
    corrupt: bool,
) -> crate::Result<CheckReport> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut g = Grads::zeros_like(m);
    {
        let mut rng = Rng::new(0);
        minibatch_loss_grad(m, examples, &idx, false, &mut rng, &mut g)?;
    }
    if corrupt {
        if let Some(t) = g.net.tensors_mut().first_mut() {
            t.data[0] += 0.05;
        }
    }
    let mut scratch = Grads::zeros_like(m);
    let mut groups = Vec::new();

    let n_groups = m.net.tensors().len();
    for gi in 0..n_groups {
        let (name, len) = {
            let ts = m.net.tensors();
            (ts[gi].name.clone(), ts[gi].data.len())
        };
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = m.net.tensors()[gi].data[k];
            m.net.tensors_mut()[gi].data[k] = orig + FD_EPSILON;
            let lp = batch_loss(m, examples, &idx, &mut scratch)?;
            m.net.tensors_mut()[gi].data[k] = orig - FD_EPSILON;
            let lm = batch_loss(m, examples, &idx, &mut scratch)?;
            m.net.tensors_mut()[gi].data[k] = orig;
            *slot = (lp - lm) / (2.0 * FD_EPSILON);
        }
        groups.push(GroupReport {
            name,
            rel_err: rel_err(g.net.tensors()[gi].data, &numeric),
        });
    }

    let rows: Vec<usize> = g.emb.keys().copied().collect();
    for row in rows {
        let dim = m.emb.dim;
        let mut numeric = vec![0.0; dim];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = m.emb.rows[row].data[k];
            m.emb.rows[row].data[k] = orig + FD_EPSILON;
            let lp = batch_loss(m, examples, &idx, &mut scratch)?;
            m.emb.rows[row].data[k] = orig - FD_EPSILON;
            let lm = batch_loss(m, examples, &idx, &mut scratch)?;
            m.emb.rows[row].data[k] = orig;
            *slot = (lp - lm) / (2.0 * FD_EPSILON);
        }
        groups.push(GroupReport {
            name: format!("emb.row{row}"),
            rel_err: rel_err(g.emb[&row].as_slice(), &numeric),
        });
    }
    Ok(CheckReport { groups })
}

/// Small-instance configuration used by the verification harness.
pub fn harness_config(task: TaskKind, variant: VariantKind, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::defaults(task, variant);
    cfg.d = 8;
    cfg.e = 12;
    cfg.sim_hidden = 7;
    cfg.seed = seed;
    cfg.dropout = 0.0;
    cfg
}

fn harness_vocab() -> Vocab {
    let mut v = Vocab::new();
    for i in 0..9 {
        v.insert(&format!("t{i}"));
    }
    v
}

/// Random binary constituency tree over `leaves` tokens with labels at
/// every node, as an s-expression.
fn random_const_sexpr(leaves: usize, classes: u32, rng: &mut Rng) -> String {
    if leaves == 1 {
        return format!("({} t{})", rng.below(classes as usize), rng.below(9));
    }
    let left = 1 + rng.below(leaves - 1);
    format!(
        "({} {} {})",
        rng.below(classes as usize),
        random_const_sexpr(left, classes, rng),
        random_const_sexpr(leaves - left, classes, rng)
    )
}

/// Random dependency tree over `n` tokens: a random attachment order keeps
/// it acyclic, and `parse_dependency` re-validates the result.
fn random_dep_tree(n: usize, rng: &mut Rng) -> Tree {
    let mut order: Vec<usize> = (1..=n).collect();
    rng.shuffle(&mut order);
    let mut head = vec![0usize; n + 1];
    for (pos, &tok) in order.iter().enumerate() {
        head[tok] = if pos == 0 { 0 } else { order[rng.below(pos)] };
    }
    let rows: Vec<(usize, String, usize)> = (1..=n)
        .map(|i| (i, format!("t{}", rng.below(9)), head[i]))
        .collect();
    parse_dependency(&rows).expect("random attachment is a valid tree")
}

fn random_labeled_dep_tree(n: usize, classes: u32, rng: &mut Rng) -> Tree {
    let mut tree = random_dep_tree(n, rng);
    let root = tree.root;
    for (i, node) in tree.nodes.iter_mut().enumerate() {
        if i == root || rng.below(2) == 0 {
            node.label = Some(rng.below(classes as usize) as u32);
        }
    }
    tree
}

/// Random small training examples for one (task, variant) combination.
/// Trees stay at 12 nodes or fewer so the finite-difference sweep is fast.
pub fn harness_examples(cfg: &RunConfig, rng: &mut Rng) -> (Vec<TrainExample>, Vocab) {
    let vocab = harness_vocab();
    let classes = cfg.classes() as u32;
    let examples = match cfg.task {
        TaskKind::Relatedness => {
            let make_tree = |rng: &mut Rng| -> Tree {
                if cfg.variant == VariantKind::NaryConst {
                    let s = random_const_sexpr(2 + rng.below(3), classes, rng);
                    parse_constituency(&s).expect("generated s-expression parses")
                } else {
                    random_dep_tree(2 + rng.below(4), rng)
                }
            };
            (0..2)
                .map(|_| {
                    let ta = make_tree(rng);
                    let tb = make_tree(rng);
                    let ids_a = tree_ids(&ta, &vocab);
                    let ids_b = tree_ids(&tb, &vocab);
                    TrainExample::Pair {
                        tree_a: ta,
                        ids_a,
                        tree_b: tb,
                        ids_b,
                        score: 1.0 + rng.uniform() * (classes as f64 - 1.0),
                    }
                })
                .collect()
        }
        _ if cfg.variant == VariantKind::NaryConst => {
            let trees: Vec<Tree> = (0..2)
                .map(|_| {
                    let s = random_const_sexpr(3 + rng.below(3), classes, rng);
                    parse_constituency(&s).expect("generated s-expression parses")
                })
                .collect();
            sentiment_train_examples(&trees, &vocab, false)
        }
        _ if cfg.variant == VariantKind::ChildSumDep => {
            let trees: Vec<Tree> = (0..2)
                .map(|_| random_labeled_dep_tree(3 + rng.below(3), classes, rng))
                .collect();
            sentiment_train_examples(&trees, &vocab, false)
        }
        _ => (0..3)
            .map(|_| TrainExample::Seq {
                ids: (0..3 + rng.below(4)).map(|_| rng.below(10)).collect(),
                label: rng.below(classes as usize) as u32,
            })
            .collect(),
    };
    (examples, vocab)
}

/// Build the instance and run the check for one (task, variant, seed).
pub fn run_check(
    task: TaskKind,
    variant: VariantKind,
    seed: u64,
    corrupt: bool,
) -> crate::Result<CheckReport> {
    let cfg = harness_config(task, variant, seed);
    let mut rng = Rng::new(seed);
    let (examples, vocab) = harness_examples(&cfg, &mut rng);
    let mut m = ModelParams::new(&cfg, vocab.len(), &mut rng);
    check_model(&mut m, &examples, corrupt)
}

//! Whole-model parameter set and the per-example forward/backward glue.
//!
//! A model is an encoder (chain stack or tree cell), a task head, and the
//! word-vector table. Encoder and head tensors are visited by name (the
//! optimizer, checkpoint, and gradient check all iterate the same fixed
//! order); embedding gradients are kept sparse, keyed by row.

use std::collections::BTreeMap;

use crate::cells::{
    run_sequence, run_tree, sequence_backward, tree_backward, CellParams, ChainEncoder,
};
use crate::config::{RunConfig, TaskKind};
use crate::embeddings::EmbeddingTable;
use crate::heads::{
    classify, classify_backward, kl_loss_grad, nll_loss_grad, similarity_backward,
    similarity_forward, sparse_target, ClassifierParams, SimilarityParams,
};
use crate::tensor::{NamedTensor, NamedTensorMut, Rng, Vector};
use crate::train::dropout_apply;
use crate::trees::Tree;
use crate::Result;

// Tensor storage is heap-allocated either way; boxing the wide variant
// would only add indirection to every forward step.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum EncoderParams {
    Chain(ChainEncoder),
    Tree(CellParams),
}

impl EncoderParams {
    pub fn out_dim(&self) -> usize {
        match self {
            EncoderParams::Chain(c) => c.out_dim(),
            EncoderParams::Tree(t) => t.hid_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            EncoderParams::Chain(c) => EncoderParams::Chain(c.zeros_like()),
            EncoderParams::Tree(t) => EncoderParams::Tree(t.zeros_like()),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            EncoderParams::Chain(c) => c.n_params(),
            EncoderParams::Tree(t) => t.n_params(),
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<NamedTensor<'a>> {
        match self {
            EncoderParams::Chain(c) => c.tensors(prefix),
            EncoderParams::Tree(t) => t.tensors(prefix),
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<NamedTensorMut<'a>> {
        match self {
            EncoderParams::Chain(c) => c.tensors_mut(prefix),
            EncoderParams::Tree(t) => t.tensors_mut(prefix),
        }
    }
}

#[derive(Debug, Clone)]
pub enum HeadParams {
    Classifier(ClassifierParams),
    Similarity(SimilarityParams),
}

impl HeadParams {
    pub fn zeros_like(&self) -> Self {
        match self {
            HeadParams::Classifier(c) => HeadParams::Classifier(c.zeros_like()),
            HeadParams::Similarity(s) => HeadParams::Similarity(s.zeros_like()),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            HeadParams::Classifier(c) => c.n_params(),
            HeadParams::Similarity(s) => s.n_params(),
        }
    }

    pub fn tensors<'a>(&'a self, prefix: &str) -> Vec<NamedTensor<'a>> {
        match self {
            HeadParams::Classifier(c) => c.tensors(prefix),
            HeadParams::Similarity(s) => s.tensors(prefix),
        }
    }

    pub fn tensors_mut<'a>(&'a mut self, prefix: &str) -> Vec<NamedTensorMut<'a>> {
        match self {
            HeadParams::Classifier(c) => c.tensors_mut(prefix),
            HeadParams::Similarity(s) => s.tensors_mut(prefix),
        }
    }
}

/// Encoder + head: the densely-updated, L2-regularized parameters.
#[derive(Debug, Clone)]
pub struct NetParams {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

impl NetParams {
    pub fn zeros_like(&self) -> Self {
        NetParams {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.encoder.n_params() + self.head.n_params()
    }

    pub fn tensors<'a>(&'a self) -> Vec<NamedTensor<'a>> {
        let mut out = self.encoder.tensors("enc.");
        out.extend(self.head.tensors("head."));
        out
    }

    pub fn tensors_mut<'a>(&'a mut self) -> Vec<NamedTensorMut<'a>> {
        let mut out = self.encoder.tensors_mut("enc.");
        out.extend(self.head.tensors_mut("head."));
        out
    }
}

/// Full trainable state for one run.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub cfg: RunConfig,
    pub net: NetParams,
    pub emb: EmbeddingTable,
}

impl ModelParams {
    /// Fresh model. RNG consumption order is fixed (encoder, head,
    /// embeddings) so a seed fully determines every initial value.
    pub fn new(cfg: &RunConfig, vocab_size: usize, rng: &mut Rng) -> Self {
        let encoder = match cfg.variant.cell_kind() {
            Some(kind) => EncoderParams::Tree(CellParams::init(
                kind,
                cfg.e,
                cfg.d,
                cfg.init_scale,
                cfg.forget_bias,
                rng,
            )),
            None => EncoderParams::Chain(ChainEncoder::init(
                cfg.variant.layers(),
                cfg.variant.bidirectional(),
                cfg.e,
                cfg.d,
                cfg.init_scale,
                cfg.forget_bias,
                rng,
            )),
        };
        let out_dim = encoder.out_dim();
        let head = match cfg.task {
            TaskKind::Relatedness => HeadParams::Similarity(SimilarityParams::init(
                out_dim,
                cfg.sim_hidden,
                cfg.classes(),
                cfg.init_scale,
                rng,
            )),
            _ => HeadParams::Classifier(ClassifierParams::init(
                out_dim,
                cfg.classes(),
                cfg.init_scale,
                rng,
            )),
        };
        let emb = EmbeddingTable::random(vocab_size, cfg.e, cfg.init_scale, rng);
        ModelParams {
            cfg: cfg.clone(),
            net: NetParams { encoder, head },
            emb,
        }
    }
}

/// One training example, already mapped to vocabulary ids.
#[derive(Debug, Clone)]
pub enum TrainExample {
    /// Tree with labels at (some) nodes; every labeled node supervises.
    Tree { tree: Tree, ids: Vec<usize> },
    /// Token sequence with one label, predicted from the final hidden state.
    Seq { ids: Vec<usize>, label: u32 },
    /// Sentence pair with a gold relatedness score in [1, K].
    Pair {
        tree_a: Tree,
        ids_a: Vec<usize>,
        tree_b: Tree,
        ids_b: Vec<usize>,
        score: f64,
    },
}

/// One evaluation example (root-level supervision only).
#[derive(Debug, Clone)]
pub enum EvalExample {
    Root {
        tree: Tree,
        ids: Vec<usize>,
        gold: u32,
    },
    Seq {
        ids: Vec<usize>,
        gold: u32,
    },
    Pair {
        tree_a: Tree,
        ids_a: Vec<usize>,
        tree_b: Tree,
        ids_b: Vec<usize>,
        gold: f64,
    },
}

/// Gradient mirror: dense for encoder and head, sparse rows for embeddings.
#[derive(Debug)]
pub struct Grads {
    pub net: NetParams,
    pub emb: BTreeMap<usize, Vector>,
}

impl Grads {
    pub fn zeros_like(m: &ModelParams) -> Self {
        Grads {
            net: m.net.zeros_like(),
            emb: BTreeMap::new(),
        }
    }

    pub fn clear(&mut self) {
        for t in self.net.tensors_mut() {
            t.data.fill(0.0);
        }
        self.emb.clear();
    }

    pub fn add_emb(&mut self, row: usize, dx: &Vector) {
        self.emb
            .entry(row)
            .or_insert_with(|| Vector::zeros(dx.dim()))
            .add_assign(dx);
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.net.tensors_mut() {
            for v in t.data.iter_mut() {
                *v *= s;
            }
        }
        for g in self.emb.values_mut() {
            for v in g.data.iter_mut() {
                *v *= s;
            }
        }
    }
}

/// Loss mass and number of supervision terms one example contributed.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossStats {
    pub loss_sum: f64,
    pub terms: usize,
}

fn node_inputs(m: &ModelParams, tree: &Tree, ids: &[usize]) -> Vec<Option<Vector>> {
    tree.nodes
        .iter()
        .map(|n| n.token.map(|t| m.emb.lookup(ids[t]).clone()))
        .collect()
}

fn seq_inputs(m: &ModelParams, ids: &[usize]) -> Vec<Vector> {
    ids.iter().map(|&id| m.emb.lookup(id).clone()).collect()
}

fn tree_cell(m: &ModelParams) -> &CellParams {
    match &m.net.encoder {
        EncoderParams::Tree(c) => c,
        EncoderParams::Chain(_) => panic!("tree example routed to a chain encoder"),
    }
}

fn chain_enc(m: &ModelParams) -> &ChainEncoder {
    match &m.net.encoder {
        EncoderParams::Chain(c) => c,
        EncoderParams::Tree(_) => panic!("sequence example routed to a tree encoder"),
    }
}

/// Forward and backward for one example. Loss and gradients accumulate into
/// `g`; dropout masks (train mode, classifier head only) draw from `rng`.
///
/// Returns the example's summed loss and term count; a labeled-node count
/// of zero means the example carries no supervision and contributed
/// nothing.
pub fn example_loss_grad(
    m: &ModelParams,
    ex: &TrainExample,
    train_mode: bool,
    rng: &mut Rng,
    g: &mut Grads,
) -> Result<LossStats> {
    let rate = m.cfg.dropout;
    match ex {
        TrainExample::Tree { tree, ids } => {
            let head = match &m.net.head {
                HeadParams::Classifier(c) => c,
                HeadParams::Similarity(_) => {
                    panic!("labeled-tree example routed to a similarity head")
                }
            };
            let ghead = match &mut g.net.head {
                HeadParams::Classifier(c) => c,
                HeadParams::Similarity(_) => unreachable!(),
            };
            let cell = tree_cell(m);
            let inputs = node_inputs(m, tree, ids);
            let trace = run_tree(cell, tree, &inputs)?;

            let mut stats = LossStats::default();
            let mut dh_nodes: Vec<Option<Vector>> = vec![None; tree.n_nodes()];
            for (node, tn) in tree.nodes.iter().enumerate() {
                let Some(label) = tn.label else { continue };
                let (h_drop, mask) = dropout_apply(trace.hidden(node), rate, rng, train_mode);
                let phat = classify(head, &h_drop)?;
                let (loss, dlogits) = nll_loss_grad(&phat, label as usize)?;
                let dh_drop = classify_backward(head, &h_drop, &dlogits, ghead);
                let dh = crate::tensor::hadamard(&dh_drop, &mask).expect("mask dims");
                dh_nodes[node] = Some(dh);
                stats.loss_sum += loss;
                stats.terms += 1;
            }
            if stats.terms == 0 {
                return Ok(stats);
            }
            let gcell = match &mut g.net.encoder {
                EncoderParams::Tree(c) => c,
                EncoderParams::Chain(_) => unreachable!(),
            };
            let mut dxs: Vec<Option<Vector>> = vec![None; tree.n_nodes()];
            tree_backward(cell, tree, &trace, &dh_nodes, gcell, &mut dxs)?;
            for (node, dx) in dxs.into_iter().enumerate() {
                if let (Some(dx), Some(t)) = (dx, tree.nodes[node].token) {
                    g.add_emb(ids[t], &dx);
                }
            }
            Ok(stats)
        }
        TrainExample::Seq { ids, label } => {
            let head = match &m.net.head {
                HeadParams::Classifier(c) => c,
                HeadParams::Similarity(_) => {
                    panic!("sequence example routed to a similarity head")
                }
            };
            let enc = chain_enc(m);
            let xs = seq_inputs(m, ids);
            let trace = run_sequence(enc, &xs)?;
            let h = trace.final_hidden();
            let (h_drop, mask) = dropout_apply(&h, rate, rng, train_mode);
            let phat = classify(head, &h_drop)?;
            let (loss, dlogits) = nll_loss_grad(&phat, *label as usize)?;
            let ghead = match &mut g.net.head {
                HeadParams::Classifier(c) => c,
                HeadParams::Similarity(_) => unreachable!(),
            };
            let dh_drop = classify_backward(head, &h_drop, &dlogits, ghead);
            let d_final = crate::tensor::hadamard(&dh_drop, &mask).expect("mask dims");
            let genc = match &mut g.net.encoder {
                EncoderParams::Chain(c) => c,
                EncoderParams::Tree(_) => unreachable!(),
            };
            let mut dxs = vec![Vector::zeros(m.cfg.e); ids.len()];
            sequence_backward(enc, &trace, &d_final, genc, &mut dxs)?;
            for (t, dx) in dxs.into_iter().enumerate() {
                g.add_emb(ids[t], &dx);
            }
            Ok(LossStats {
                loss_sum: loss,
                terms: 1,
            })
        }
        TrainExample::Pair {
            tree_a,
            ids_a,
            tree_b,
            ids_b,
            score,
        } => {
            let head = match &m.net.head {
                HeadParams::Similarity(s) => s,
                HeadParams::Classifier(_) => {
                    panic!("pair example routed to a classifier head")
                }
            };
            // The similarity head is never dropout-regularized; encode both
            // sides, score, and push gradients back through each encoder.
            enum SideTrace {
                Tree(crate::cells::TreeTrace),
                Seq(crate::cells::SeqTrace),
            }
            let encode = |tree: &Tree, ids: &[usize]| -> Result<(SideTrace, Vector)> {
                match &m.net.encoder {
                    EncoderParams::Tree(cell) => {
                        let trace = run_tree(cell, tree, &node_inputs(m, tree, ids))?;
                        let h = trace.hidden(tree.root).clone();
                        Ok((SideTrace::Tree(trace), h))
                    }
                    EncoderParams::Chain(enc) => {
                        let trace = run_sequence(enc, &seq_inputs(m, ids))?;
                        let h = trace.final_hidden();
                        Ok((SideTrace::Seq(trace), h))
                    }
                }
            };
            let (trace_a, h_a) = encode(tree_a, ids_a)?;
            let (trace_b, h_b) = encode(tree_b, ids_b)?;
            let sim = similarity_forward(head, &h_a, &h_b)?;
            let target = sparse_target(*score, head.k())?;
            let (loss, dlogits) = kl_loss_grad(&target, &sim.phat);
            let ghead = match &mut g.net.head {
                HeadParams::Similarity(s) => s,
                HeadParams::Classifier(_) => unreachable!(),
            };
            let (dha, dhb) = similarity_backward(head, &sim, &h_a, &h_b, &dlogits, ghead);

            let mut backward_side =
                |tree: &Tree, ids: &[usize], trace: SideTrace, dh: Vector| -> Result<()> {
                    match (trace, &mut g.net.encoder) {
                        (SideTrace::Tree(trace), EncoderParams::Tree(gcell)) => {
                            let cell = tree_cell(m);
                            let mut dh_nodes: Vec<Option<Vector>> = vec![None; tree.n_nodes()];
                            dh_nodes[tree.root] = Some(dh);
                            let mut dxs: Vec<Option<Vector>> = vec![None; tree.n_nodes()];
                            tree_backward(cell, tree, &trace, &dh_nodes, gcell, &mut dxs)?;
                            for (node, dx) in dxs.into_iter().enumerate() {
                                if let (Some(dx), Some(t)) = (dx, tree.nodes[node].token) {
                                    g.emb
                                        .entry(ids[t])
                                        .or_insert_with(|| Vector::zeros(dx.dim()))
                                        .add_assign(&dx);
                                }
                            }
                            Ok(())
                        }
                        (SideTrace::Seq(trace), EncoderParams::Chain(genc)) => {
                            let enc = chain_enc(m);
                            let mut dxs = vec![Vector::zeros(m.cfg.e); ids.len()];
                            sequence_backward(enc, &trace, &dh, genc, &mut dxs)?;
                            for (t, dx) in dxs.into_iter().enumerate() {
                                g.emb
                                    .entry(ids[t])
                                    .or_insert_with(|| Vector::zeros(dx.dim()))
                                    .add_assign(&dx);
                            }
                            Ok(())
                        }
                        _ => unreachable!("trace kind matches encoder kind"),
                    }
                };
            backward_side(tree_a, ids_a, trace_a, dha)?;
            backward_side(tree_b, ids_b, trace_b, dhb)?;
            Ok(LossStats {
                loss_sum: loss,
                terms: 1,
            })
        }
    }
}

/// Encode one sentence to the representation a head reads (eval mode).
pub fn encode_sentence(m: &ModelParams, tree: &Tree, ids: &[usize]) -> Result<Vector> {
    match &m.net.encoder {
        EncoderParams::Tree(cell) => {
            let trace = run_tree(cell, tree, &node_inputs(m, tree, ids))?;
            Ok(trace.hidden(tree.root).clone())
        }
        EncoderParams::Chain(enc) => {
            let trace = run_sequence(enc, &seq_inputs(m, ids))?;
            Ok(trace.final_hidden())
        }
    }
}

fn argmax(p: &Vector) -> usize {
    let mut best = 0;
    for j in 1..p.dim() {
        if p.data[j] > p.data[best] {
            best = j;
        }
    }
    best
}

/// Eval-mode prediction for one example: a class id or a score.
pub fn predict(m: &ModelParams, ex: &EvalExample) -> Result<f64> {
    match ex {
        EvalExample::Root { tree, ids, .. } => {
            let h = encode_sentence(m, tree, ids)?;
            let head = match &m.net.head {
                HeadParams::Classifier(c) => c,
                HeadParams::Similarity(_) => panic!("class example routed to similarity head"),
            };
            Ok(argmax(&classify(head, &h)?) as f64)
        }
        EvalExample::Seq { ids, .. } => {
            let enc = chain_enc(m);
            let trace = run_sequence(enc, &seq_inputs(m, ids))?;
            let head = match &m.net.head {
                HeadParams::Classifier(c) => c,
                HeadParams::Similarity(_) => panic!("class example routed to similarity head"),
            };
            Ok(argmax(&classify(head, &trace.final_hidden())?) as f64)
        }
        EvalExample::Pair {
            tree_a,
            ids_a,
            tree_b,
            ids_b,
            ..
        } => {
            let head = match &m.net.head {
                HeadParams::Similarity(s) => s,
                HeadParams::Classifier(_) => panic!("pair example routed to classifier head"),
            };
            let ha = encode_sentence(m, tree_a, ids_a)?;
            let hb = encode_sentence(m, tree_b, ids_b)?;
            Ok(similarity_forward(head, &ha, &hb)?.yhat)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::VariantKind;
    use crate::trees::parse_constituency;

    fn toy_cfg(task: TaskKind, variant: VariantKind) -> RunConfig {
        let mut cfg = RunConfig::defaults(task, variant);
        cfg.d = 4;
        cfg.e = 3;
        cfg.sim_hidden = 5;
        cfg.dropout = 0.0;
        cfg
    }

    #[test]
    fn model_dimensions_follow_config() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::BiLstm);
        let m = ModelParams::new(&cfg, 10, &mut Rng::new(1));
        assert_eq!(m.net.encoder.out_dim(), 8);
        match &m.net.head {
            HeadParams::Classifier(c) => {
                assert_eq!(c.in_dim(), 8);
                assert_eq!(c.classes(), 5);
            }
            _ => panic!("sentiment model should have a classifier head"),
        }
        assert_eq!(m.emb.vocab_size(), 10);
        assert_eq!(m.emb.dim, 3);
    }

    #[test]
    fn tensor_names_unique_across_net() {
        let cfg = toy_cfg(TaskKind::Relatedness, VariantKind::Lstm2Layer);
        let m = ModelParams::new(&cfg, 4, &mut Rng::new(2));
        let mut names: Vec<String> = m.net.tensors().iter().map(|t| t.name.clone()).collect();
        let total = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), total);
        assert!(names.iter().any(|n| n.starts_with("enc.l1.")));
        assert!(names.iter().any(|n| n.starts_with("head.")));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        let a = ModelParams::new(&cfg, 6, &mut Rng::new(9));
        let b = ModelParams::new(&cfg, 6, &mut Rng::new(9));
        for (ta, tb) in a.net.tensors().iter().zip(b.net.tensors().iter()) {
            assert_eq!(ta.data, tb.data);
        }
        for (ra, rb) in a.emb.rows.iter().zip(&b.emb.rows) {
            assert_eq!(ra.data, rb.data);
        }
    }

    #[test]
    fn unlabeled_tree_contributes_nothing() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        let m = ModelParams::new(&cfg, 6, &mut Rng::new(3));
        let mut tree = parse_constituency("(0 (0 a) (0 b))").unwrap();
        for n in tree.nodes.iter_mut() {
            n.label = None;
        }
        let ex = TrainExample::Tree {
            tree,
            ids: vec![1, 2],
        };
        let mut g = Grads::zeros_like(&m);
        let stats = example_loss_grad(&m, &ex, true, &mut Rng::new(4), &mut g).unwrap();
        assert_eq!(stats.terms, 0);
        assert!(g
            .net
            .tensors()
            .iter()
            .all(|t| t.data.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn labeled_tree_reaches_all_parts() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        let m = ModelParams::new(&cfg, 6, &mut Rng::new(5));
        let tree = parse_constituency("(3 (2 a) (1 b))").unwrap();
        let ex = TrainExample::Tree {
            tree,
            ids: vec![1, 2],
        };
        let mut g = Grads::zeros_like(&m);
        let stats = example_loss_grad(&m, &ex, true, &mut Rng::new(6), &mut g).unwrap();
        assert_eq!(stats.terms, 3);
        assert!(stats.loss_sum > 0.0);
        // Both leaf embedding rows got gradients; the head bias moved.
        assert_eq!(g.emb.len(), 2);
        let head = match &g.net.head {
            HeadParams::Classifier(c) => c,
            _ => unreachable!(),
        };
        assert!(head.b.data.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn pair_example_scores_and_backprops() {
        let cfg = toy_cfg(TaskKind::Relatedness, VariantKind::ChildSumDep);
        let m = ModelParams::new(&cfg, 8, &mut Rng::new(7));
        let tree_a =
            crate::trees::parse_dependency(&[(1, "a".to_string(), 2), (2, "b".to_string(), 0)])
                .unwrap();
        let tree_b = crate::trees::parse_dependency(&[(1, "c".to_string(), 0)]).unwrap();
        let ex = TrainExample::Pair {
            tree_a: tree_a.clone(),
            ids_a: vec![1, 2],
            tree_b: tree_b.clone(),
            ids_b: vec![3],
            score: 4.5,
        };
        let mut g = Grads::zeros_like(&m);
        let stats = example_loss_grad(&m, &ex, true, &mut Rng::new(8), &mut g).unwrap();
        assert_eq!(stats.terms, 1);
        assert!(stats.loss_sum >= 0.0);
        assert_eq!(g.emb.len(), 3);

        let yhat = predict(
            &m,
            &EvalExample::Pair {
                tree_a,
                ids_a: vec![1, 2],
                tree_b,
                ids_b: vec![3],
                gold: 4.5,
            },
        )
        .unwrap();
        assert!(yhat > 1.0 && yhat < 5.0);
    }
}

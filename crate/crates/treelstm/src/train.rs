//! Training: AdaGrad, inverted dropout, minibatch assembly, the epoch loop
//! with patience-based early stopping, and binary checkpoints.
//!
//! Checkpoint layout: the magic `TLSTM\x01`, then length-prefixed records
//! (u32 name length, name, u32 rank, u64 dims, f64 values, all
//! little-endian). Rank-0 `meta.*` records carry the run configuration, so
//! a checkpoint can be loaded without the original config file. The
//! vocabulary travels in a `<path>.vocab` sidecar, one token per line in
//! index order. Record order is fixed, so identical runs produce
//! byte-identical files.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::{RunConfig, TaskKind, VariantKind};
use crate::embeddings::Vocab;
use crate::eval;
use crate::model::{example_loss_grad, EvalExample, Grads, ModelParams, NetParams, TrainExample};
use crate::tensor::{Rng, Vector};
use crate::trees::{PairRecord, Tree};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("non-finite value in {name}")]
    NonFinite { name: String },
    #[error("no training examples")]
    NoExamples,
    #[error("pair files disagree: {pairs} score rows, {a} left trees, {b} right trees")]
    PairCount { pairs: usize, a: usize, b: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint ends mid-record")]
    Truncated,
    #[error("checkpoint record {what} is malformed")]
    Malformed { what: String },
    #[error("tensor {name}: expected shape {expected:?}, found {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("checkpoint is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("checkpoint contains unexpected tensor {name}")]
    UnknownTensor { name: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Inverted dropout. In train mode each coordinate is zeroed with
/// probability `rate` and survivors are scaled by 1/(1-rate), so the
/// expected value matches eval mode and evaluation needs no rescaling.
/// Returns the dropped vector and the mask (backward multiplies by the
/// mask). Rate 0 and eval mode draw nothing from the RNG.
pub fn dropout_apply(h: &Vector, rate: f64, rng: &mut Rng, train: bool) -> (Vector, Vector) {
    let dim = h.dim();
    if !train || rate == 0.0 {
        return (
            h.clone(),
            Vector {
                data: vec![1.0; dim],
            },
        );
    }
    let keep = 1.0 / (1.0 - rate);
    let mut mask = Vector::zeros(dim);
    let mut out = Vector::zeros(dim);
    for j in 0..dim {
        if rng.uniform() >= rate {
            mask.data[j] = keep;
            out.data[j] = h.data[j] * keep;
        }
    }
    (out, mask)
}

/// Encoder parameter count for a memory dimension `d` and input dimension
/// `e`. Counts composition-function parameters only: the classifier or
/// similarity head and the word vectors are excluded, and bidirectional
/// variants share one parameter set across directions.
///
/// The count reflects exactly the tensors this implementation allocates for
/// the dimensions you pass in. External tallies that instead pick a
/// different `d` per variant so that every model has roughly equal total
/// capacity will report other numbers for the same nominal setup; in
/// particular the binary tree cell here costs `4de + 10d^2 + 4d` (405,600
/// at d=150, e=300), not the smaller equal-capacity figure sometimes quoted
/// for that task.
pub fn count_params(variant: VariantKind, d: usize, e: usize) -> usize {
    let gate = |in_dim: usize| 4 * (d * in_dim + d * d + d);
    match variant {
        VariantKind::Lstm | VariantKind::BiLstm | VariantKind::ChildSumDep => gate(e),
        // Layer two reads layer one's hidden state.
        VariantKind::Lstm2Layer | VariantKind::BiLstm2Layer => gate(e) + gate(d),
        // Binary cell: per-slot U for i/o/u (2 each) plus the 2x2
        // cross-slot forget grid.
        VariantKind::NaryConst => 4 * d * e + 10 * d * d + 4 * d,
    }
}

const ADAGRAD_EPS: f64 = 1e-10;

/// AdaGrad state: one squared-gradient accumulator per parameter, plus one
/// dense per-row accumulator table for the embeddings.
#[derive(Debug)]
pub struct AdaGrad {
    pub accum_net: NetParams,
    pub accum_emb: Vec<Vector>,
}

impl AdaGrad {
    pub fn new(m: &ModelParams) -> Self {
        AdaGrad {
            accum_net: m.net.zeros_like(),
            accum_emb: vec![Vector::zeros(m.emb.dim); m.emb.vocab_size()],
        }
    }
}

/// One AdaGrad update: G += g^2, then theta -= lr * g / (sqrt(G) + eps).
/// Embedding rows use `emb_lr` and are skipped entirely when it is zero
/// (frozen word vectors). Rejects non-finite gradients by tensor name.
pub fn adagrad_step(m: &mut ModelParams, g: &Grads, opt: &mut AdaGrad) -> Result<(), TrainError> {
    let lr = m.cfg.lr;
    let emb_lr = m.cfg.emb_lr;
    let mut params = m.net.tensors_mut();
    let grads = g.net.tensors();
    let mut accums = opt.accum_net.tensors_mut();
    debug_assert_eq!(params.len(), grads.len());
    for ((p, gt), a) in params.iter_mut().zip(grads.iter()).zip(accums.iter_mut()) {
        debug_assert_eq!(p.name, gt.name);
        for k in 0..p.data.len() {
            let gv = gt.data[k];
            if !gv.is_finite() {
                return Err(TrainError::NonFinite {
                    name: gt.name.clone(),
                });
            }
            a.data[k] += gv * gv;
            p.data[k] -= lr * gv / (a.data[k].sqrt() + ADAGRAD_EPS);
        }
    }
    if emb_lr == 0.0 {
        return Ok(());
    }
    for (&row, grad) in &g.emb {
        let acc = &mut opt.accum_emb[row];
        let theta = &mut m.emb.rows[row];
        for k in 0..grad.dim() {
            let gv = grad.data[k];
            if !gv.is_finite() {
                return Err(TrainError::NonFinite {
                    name: format!("emb.row{row}"),
                });
            }
            acc.data[k] += gv * gv;
            theta.data[k] -= emb_lr * gv / (acc.data[k].sqrt() + ADAGRAD_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BatchStats {
    /// Reported batch loss: supervision terms averaged, plus the L2 penalty.
    pub loss: f64,
    /// Supervision terms in the batch (labeled nodes / sequences / pairs).
    pub terms: usize,
    /// Examples that carried no supervision and were skipped.
    pub skipped: usize,
}

/// Forward/backward over one minibatch. Gradients are averaged over the
/// batch's supervision terms; the L2 penalty (encoder and head only, not
/// the word vectors) is added once per batch. `g` is cleared first.
pub fn minibatch_loss_grad(
    m: &ModelParams,
    examples: &[TrainExample],
    batch: &[usize],
    train_mode: bool,
    rng: &mut Rng,
    g: &mut Grads,
) -> crate::Result<BatchStats> {
    g.clear();
    let mut stats = BatchStats::default();
    let mut loss_sum = 0.0;
    for &idx in batch {
        let s = example_loss_grad(m, &examples[idx], train_mode, rng, g)?;
        if s.terms == 0 {
            stats.skipped += 1;
        }
        loss_sum += s.loss_sum;
        stats.terms += s.terms;
    }
    if stats.terms == 0 {
        return Ok(stats);
    }
    let inv = 1.0 / stats.terms as f64;
    g.scale(inv);
    stats.loss = loss_sum * inv;

    let l2 = m.cfg.l2;
    if l2 > 0.0 {
        let mut penalty = 0.0;
        for (p, gt) in m.net.tensors().iter().zip(g.net.tensors_mut().iter_mut()) {
            debug_assert_eq!(p.name, gt.name);
            for k in 0..p.data.len() {
                penalty += p.data[k] * p.data[k];
                gt.data[k] += l2 * p.data[k];
            }
        }
        stats.loss += 0.5 * l2 * penalty;
    }
    Ok(stats)
}

/// Vocabulary over every token of the given trees, in first-seen order
/// (index 0 is the unknown-word slot).
pub fn build_vocab<'a, I: IntoIterator<Item = &'a Tree>>(trees: I) -> Vocab {
    Vocab::build(
        trees
            .into_iter()
            .flat_map(|t| t.tokens.iter().map(|s| s.as_str())),
    )
}

/// Map a tree's tokens to vocabulary ids (unknown words to the unk row).
pub fn tree_ids(tree: &Tree, vocab: &Vocab) -> Vec<usize> {
    tree.tokens.iter().map(|t| vocab.lookup(t)).collect()
}

/// Training examples for sentiment. Tree variants supervise every labeled
/// node of the tree in place; chain variants can only read token spans, so
/// each labeled node becomes an independent sequence example over its span.
pub fn sentiment_train_examples(trees: &[Tree], vocab: &Vocab, chain: bool) -> Vec<TrainExample> {
    let mut out = Vec::new();
    for tree in trees {
        let ids = tree_ids(tree, vocab);
        if chain {
            for node in &tree.nodes {
                let Some(label) = node.label else { continue };
                out.push(TrainExample::Seq {
                    ids: node.span.iter().map(|&t| ids[t]).collect(),
                    label,
                });
            }
        } else {
            out.push(TrainExample::Tree {
                tree: tree.clone(),
                ids,
            });
        }
    }
    out
}

/// Root-supervision eval set for sentiment; trees without a root label are
/// skipped.
pub fn sentiment_eval_examples(trees: &[Tree], vocab: &Vocab, chain: bool) -> Vec<EvalExample> {
    let mut out = Vec::new();
    for tree in trees {
        let Some(gold) = tree.nodes[tree.root].label else {
            continue;
        };
        let ids = tree_ids(tree, vocab);
        if chain {
            out.push(EvalExample::Seq { ids, gold });
        } else {
            out.push(EvalExample::Root {
                tree: tree.clone(),
                ids,
                gold,
            });
        }
    }
    out
}

/// Pair examples for relatedness: row i of the score file aligns with tree
/// i of each side's tree file.
pub fn relatedness_examples(
    pairs: &[PairRecord],
    trees_a: &[Tree],
    trees_b: &[Tree],
    vocab: &Vocab,
) -> Result<(Vec<TrainExample>, Vec<EvalExample>), TrainError> {
    if pairs.len() != trees_a.len() || pairs.len() != trees_b.len() {
        return Err(TrainError::PairCount {
            pairs: pairs.len(),
            a: trees_a.len(),
            b: trees_b.len(),
        });
    }
    let mut train = Vec::with_capacity(pairs.len());
    let mut evals = Vec::with_capacity(pairs.len());
    for (p, (ta, tb)) in pairs.iter().zip(trees_a.iter().zip(trees_b.iter())) {
        let ids_a = tree_ids(ta, vocab);
        let ids_b = tree_ids(tb, vocab);
        train.push(TrainExample::Pair {
            tree_a: ta.clone(),
            ids_a: ids_a.clone(),
            tree_b: tb.clone(),
            ids_b: ids_b.clone(),
            score: p.score,
        });
        evals.push(EvalExample::Pair {
            tree_a: ta.clone(),
            ids_a,
            tree_b: tb.clone(),
            ids_b,
            gold: p.score,
        });
    }
    Ok((train, evals))
}

const MAGIC: &[u8; 6] = b"TLSTM\x01";
const META_KEYS: [&str; 17] = [
    "meta.task",
    "meta.variant",
    "meta.d",
    "meta.e",
    "meta.lr",
    "meta.emb_lr",
    "meta.l2",
    "meta.dropout",
    "meta.batch",
    "meta.epochs",
    "meta.seed",
    "meta.patience",
    "meta.init_scale",
    "meta.forget_bias",
    "meta.sim_hidden",
    "meta.log_timing",
    "meta.vocab_size",
];

/// Path of the vocabulary sidecar for a checkpoint path.
pub fn vocab_path(ckpt: &Path) -> PathBuf {
    let mut s = OsString::from(ckpt.as_os_str());
    s.push(".vocab");
    PathBuf::from(s)
}

fn write_record<W: Write>(w: &mut W, name: &str, dims: &[u64], data: &[f64]) -> io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for &d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    debug_assert_eq!(dims.iter().product::<u64>().max(1), data.len() as u64);
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn meta_values(cfg: &RunConfig, vocab_size: usize) -> [f64; 17] {
    [
        cfg.task.code() as f64,
        cfg.variant.code() as f64,
        cfg.d as f64,
        cfg.e as f64,
        cfg.lr,
        cfg.emb_lr,
        cfg.l2,
        cfg.dropout,
        cfg.batch as f64,
        cfg.epochs as f64,
        cfg.seed as f64,
        cfg.patience as f64,
        cfg.init_scale,
        cfg.forget_bias,
        cfg.sim_hidden as f64,
        if cfg.log_timing { 1.0 } else { 0.0 },
        vocab_size as f64,
    ]
}

/// Serialize the model and write the vocabulary sidecar.
pub fn save_checkpoint(m: &ModelParams, vocab: &Vocab, path: &Path) -> Result<(), CheckpointError> {
    if vocab.len() != m.emb.vocab_size() {
        return Err(CheckpointError::Malformed {
            what: format!(
                "vocabulary has {} tokens but the embedding table has {} rows",
                vocab.len(),
                m.emb.vocab_size()
            ),
        });
    }
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    for (key, value) in META_KEYS.iter().zip(meta_values(&m.cfg, vocab.len())) {
        write_record(&mut w, key, &[], &[value])?;
    }
    for t in m.net.tensors() {
        let dims: Vec<u64> = t.dims.iter().map(|&d| d as u64).collect();
        write_record(&mut w, &t.name, &dims, t.data)?;
    }
    let mut flat = Vec::with_capacity(m.emb.vocab_size() * m.emb.dim);
    for row in &m.emb.rows {
        flat.extend_from_slice(row.as_slice());
    }
    write_record(
        &mut w,
        "emb",
        &[m.emb.vocab_size() as u64, m.emb.dim as u64],
        &flat,
    )?;
    w.flush()?;

    let mut vf = BufWriter::new(std::fs::File::create(vocab_path(path))?);
    for tok in vocab.tokens() {
        vf.write_all(tok.as_bytes())?;
        vf.write_all(b"\n")?;
    }
    vf.flush()?;
    Ok(())
}

struct Record {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

/// Read exactly `buf.len()` bytes; Ok(false) on clean EOF at offset zero.
fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool, CheckpointError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(CheckpointError::Truncated),
            n => filled += n,
        }
    }
    Ok(true)
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    if read_exact_or_eof(r, buf)? {
        Ok(())
    } else {
        Err(CheckpointError::Truncated)
    }
}

fn read_records(path: &Path) -> Result<Vec<Record>, CheckpointError> {
    let file = std::fs::File::open(path)?;
    let mut r = io::BufReader::new(file);
    let mut magic = [0u8; 6];
    read_exact(&mut r, &mut magic).map_err(|_| CheckpointError::BadMagic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut records = Vec::new();
    loop {
        let mut len4 = [0u8; 4];
        if !read_exact_or_eof(&mut r, &mut len4)? {
            break;
        }
        let name_len = u32::from_le_bytes(len4) as usize;
        if name_len == 0 || name_len > 1024 {
            return Err(CheckpointError::Malformed {
                what: format!("name length {name_len}"),
            });
        }
        let mut name_buf = vec![0u8; name_len];
        read_exact(&mut r, &mut name_buf)?;
        let name = String::from_utf8(name_buf).map_err(|_| CheckpointError::Malformed {
            what: "non-utf8 tensor name".into(),
        })?;
        let mut rank4 = [0u8; 4];
        read_exact(&mut r, &mut rank4)?;
        let rank = u32::from_le_bytes(rank4) as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed {
                what: format!("{name}: rank {rank}"),
            });
        }
        let mut dims = Vec::with_capacity(rank);
        let mut count: u64 = 1;
        for _ in 0..rank {
            let mut d8 = [0u8; 8];
            read_exact(&mut r, &mut d8)?;
            let d = u64::from_le_bytes(d8);
            count = count.saturating_mul(d);
            dims.push(d as usize);
        }
        if count > 1 << 30 {
            return Err(CheckpointError::Malformed {
                what: format!("{name}: {count} values"),
            });
        }
        let mut data = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let mut v8 = [0u8; 8];
            read_exact(&mut r, &mut v8)?;
            data.push(f64::from_le_bytes(v8));
        }
        records.push(Record { name, dims, data });
    }
    Ok(records)
}

fn meta_usize(v: f64, key: &str) -> Result<usize, CheckpointError> {
    if v.fract() != 0.0 || v < 0.0 || v > (1u64 << 53) as f64 {
        return Err(CheckpointError::Malformed {
            what: format!("{key} = {v}"),
        });
    }
    Ok(v as usize)
}

/// Rebuild a model (and its vocabulary) from a checkpoint. Every record
/// must be consumed and every expected tensor present at its exact shape.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Vocab), CheckpointError> {
    let records = read_records(path)?;
    let mut by_name: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        if by_name.insert(rec.name.as_str(), i).is_some() {
            return Err(CheckpointError::Malformed {
                what: format!("duplicate record {}", rec.name),
            });
        }
    }
    let mut used = vec![false; records.len()];
    let mut scalar = |key: &str| -> Result<f64, CheckpointError> {
        let &i = by_name
            .get(key)
            .ok_or_else(|| CheckpointError::MissingTensor {
                name: key.to_string(),
            })?;
        used[i] = true;
        if !records[i].dims.is_empty() {
            return Err(CheckpointError::ShapeMismatch {
                name: key.to_string(),
                expected: vec![],
                got: records[i].dims.clone(),
            });
        }
        Ok(records[i].data[0])
    };

    let task = TaskKind::from_code(meta_usize(scalar("meta.task")?, "meta.task")? as u32)
        .ok_or_else(|| CheckpointError::Malformed {
            what: "meta.task".into(),
        })?;
    let variant =
        VariantKind::from_code(meta_usize(scalar("meta.variant")?, "meta.variant")? as u32)
            .ok_or_else(|| CheckpointError::Malformed {
                what: "meta.variant".into(),
            })?;
    let mut cfg = RunConfig::defaults(task, variant);
    cfg.d = meta_usize(scalar("meta.d")?, "meta.d")?;
    cfg.e = meta_usize(scalar("meta.e")?, "meta.e")?;
    cfg.lr = scalar("meta.lr")?;
    cfg.emb_lr = scalar("meta.emb_lr")?;
    cfg.l2 = scalar("meta.l2")?;
    cfg.dropout = scalar("meta.dropout")?;
    cfg.batch = meta_usize(scalar("meta.batch")?, "meta.batch")?;
    cfg.epochs = meta_usize(scalar("meta.epochs")?, "meta.epochs")?;
    cfg.seed = meta_usize(scalar("meta.seed")?, "meta.seed")? as u64;
    cfg.patience = meta_usize(scalar("meta.patience")?, "meta.patience")?;
    cfg.init_scale = scalar("meta.init_scale")?;
    cfg.forget_bias = scalar("meta.forget_bias")?;
    cfg.sim_hidden = meta_usize(scalar("meta.sim_hidden")?, "meta.sim_hidden")?;
    cfg.log_timing = scalar("meta.log_timing")? != 0.0;
    let vocab_size = meta_usize(scalar("meta.vocab_size")?, "meta.vocab_size")?;

    let mut model = ModelParams::new(&cfg, vocab_size, &mut Rng::new(cfg.seed));
    for t in model.net.tensors_mut() {
        let &i = by_name
            .get(t.name.as_str())
            .ok_or_else(|| CheckpointError::MissingTensor {
                name: t.name.clone(),
            })?;
        used[i] = true;
        let rec = &records[i];
        if rec.dims != t.dims {
            return Err(CheckpointError::ShapeMismatch {
                name: t.name.clone(),
                expected: t.dims.clone(),
                got: rec.dims.clone(),
            });
        }
        t.data.copy_from_slice(&rec.data);
    }
    {
        let &i = by_name
            .get("emb")
            .ok_or_else(|| CheckpointError::MissingTensor { name: "emb".into() })?;
        used[i] = true;
        let rec = &records[i];
        if rec.dims != [vocab_size, cfg.e] {
            return Err(CheckpointError::ShapeMismatch {
                name: "emb".into(),
                expected: vec![vocab_size, cfg.e],
                got: rec.dims.clone(),
            });
        }
        for (row, chunk) in model.emb.rows.iter_mut().zip(rec.data.chunks(cfg.e)) {
            row.as_mut_slice().copy_from_slice(chunk);
        }
    }
    if let Some(i) = used.iter().position(|&u| !u) {
        return Err(CheckpointError::UnknownTensor {
            name: records[i].name.clone(),
        });
    }

    let vp = vocab_path(path);
    let text = std::fs::read_to_string(&vp)?;
    let mut vocab = Vocab::new();
    for tok in text.lines().skip(1) {
        vocab.insert(tok);
    }
    if vocab.len() != vocab_size {
        return Err(CheckpointError::Malformed {
            what: format!(
                "vocab sidecar has {} tokens, checkpoint expects {}",
                vocab.len(),
                vocab_size
            ),
        });
    }
    Ok((model, vocab))
}

/// One line of the epoch log.
#[derive(Debug, Clone, Copy)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub seconds: f64,
}

pub const EPOCH_LOG_HEADER: &str = "epoch\ttrain_loss\tdev_metric\tseconds";

pub fn format_epoch_row(row: &EpochRow) -> String {
    format!(
        "{}\t{:.6}\t{:.6}\t{:.3}",
        row.epoch, row.train_loss, row.dev_metric, row.seconds
    )
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub stopped_early: bool,
    /// Total unsupervised examples skipped across all epochs.
    pub skipped: usize,
}

/// Run the training loop. One RNG (seeded from the config) drives epoch
/// shuffling and dropout, so a seed fully determines the run. The epoch's
/// train loss is the term-weighted mean of the per-batch losses; the dev
/// metric is accuracy (sentiment) or Pearson's r (relatedness, 0 when the
/// predictions are constant). Each improvement saves a checkpoint to
/// `ckpt` (so the file holds the best-dev model, which may not be the
/// final-epoch one), and `patience` consecutive non-improving epochs stop
/// the run early.
pub fn train_loop<F: FnMut(&EpochRow)>(
    m: &mut ModelParams,
    train: &[TrainExample],
    dev: &[EvalExample],
    vocab: &Vocab,
    ckpt: Option<&Path>,
    mut on_epoch: F,
) -> crate::Result<TrainOutcome> {
    if train.is_empty() {
        return Err(TrainError::NoExamples.into());
    }
    let cfg = m.cfg.clone();
    let mut rng = Rng::new(cfg.seed);
    let mut opt = AdaGrad::new(m);
    let mut g = Grads::zeros_like(m);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut out = TrainOutcome {
        rows: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_metric: f64::NEG_INFINITY,
        stopped_early: false,
        skipped: 0,
    };
    let mut bad_epochs = 0;
    for epoch in 1..=cfg.epochs {
        let t0 = Instant::now();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut term_sum = 0usize;
        for batch in order.chunks(cfg.batch.max(1)) {
            let stats = minibatch_loss_grad(m, train, batch, true, &mut rng, &mut g)?;
            out.skipped += stats.skipped;
            if stats.terms == 0 {
                continue;
            }
            loss_sum += stats.loss * stats.terms as f64;
            term_sum += stats.terms;
            adagrad_step(m, &g, &mut opt)?;
        }
        let train_loss = if term_sum > 0 {
            loss_sum / term_sum as f64
        } else {
            0.0
        };
        if !train_loss.is_finite() {
            return Err(TrainError::NonFinite {
                name: "epoch loss".into(),
            }
            .into());
        }
        let dev_metric = if dev.is_empty() {
            0.0
        } else {
            eval::dev_metric(m, dev)?
        };
        let row = EpochRow {
            epoch,
            train_loss,
            dev_metric,
            seconds: if cfg.log_timing {
                t0.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&row);
        out.rows.push(row);

        if dev_metric > out.best_metric {
            out.best_metric = dev_metric;
            out.best_epoch = epoch;
            bad_epochs = 0;
            if let Some(path) = ckpt {
                save_checkpoint(m, vocab, path)?;
            }
        } else {
            bad_epochs += 1;
            if bad_epochs >= cfg.patience {
                out.stopped_early = true;
                break;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadParams;
    use crate::trees::parse_constituency;

    fn toy_cfg(task: TaskKind, variant: VariantKind) -> RunConfig {
        let mut cfg = RunConfig::defaults(task, variant);
        cfg.d = 4;
        cfg.e = 3;
        cfg.sim_hidden = 5;
        cfg.dropout = 0.0;
        cfg.l2 = 0.0;
        cfg
    }

    #[test]
    fn dropout_eval_mode_is_identity_and_draws_nothing() {
        let h = Vector::from_slice(&[1.0, -2.0, 3.0]);
        let mut rng = Rng::new(7);
        let before = rng.clone();
        let (out, mask) = dropout_apply(&h, 0.5, &mut rng, false);
        assert_eq!(out.data, h.data);
        assert!(mask.data.iter().all(|&v| v == 1.0));
        let (out0, _) = dropout_apply(&h, 0.0, &mut rng, true);
        assert_eq!(out0.data, h.data);
        // No RNG state consumed by either call.
        let mut a = before;
        let mut b = rng;
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn dropout_scales_survivors_and_zeroes_about_half() {
        let dim = 10_000;
        let h = Vector {
            data: vec![1.0; dim],
        };
        let mut rng = Rng::new(42);
        let (out, mask) = dropout_apply(&h, 0.5, &mut rng, true);
        let zeros = mask.data.iter().filter(|&&v| v == 0.0).count();
        let frac = zeros as f64 / dim as f64;
        assert!((0.48..=0.52).contains(&frac), "zero fraction {frac}");
        for (o, mk) in out.data.iter().zip(&mask.data) {
            assert!(*mk == 0.0 || *mk == 2.0);
            assert_eq!(*o, *mk);
        }
        // Inverted scaling keeps the expectation: mean stays near 1.
        let mean = out.data.iter().sum::<f64>() / dim as f64;
        assert!((mean - 1.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn adagrad_first_two_unit_gradient_steps() {
        let mut cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::Lstm);
        cfg.lr = 0.05;
        let mut m = ModelParams::new(&cfg, 4, &mut Rng::new(1));
        let mut opt = AdaGrad::new(&m);
        let mut g = Grads::zeros_like(&m);
        let before: Vec<f64> = match &m.net.head {
            HeadParams::Classifier(c) => c.b.data.clone(),
            _ => unreachable!(),
        };
        let set_unit = |g: &mut Grads| match &mut g.net.head {
            HeadParams::Classifier(c) => c.b.data.fill(1.0),
            _ => unreachable!(),
        };
        set_unit(&mut g);
        adagrad_step(&mut m, &g, &mut opt).unwrap();
        let after1 = match &m.net.head {
            HeadParams::Classifier(c) => c.b.data.clone(),
            _ => unreachable!(),
        };
        for (b, a) in before.iter().zip(&after1) {
            assert!((a - b + 0.05).abs() < 1e-9, "first step should be -0.05");
        }
        set_unit(&mut g);
        adagrad_step(&mut m, &g, &mut opt).unwrap();
        let after2 = match &m.net.head {
            HeadParams::Classifier(c) => c.b.data.clone(),
            _ => unreachable!(),
        };
        for (a1, a2) in after1.iter().zip(&after2) {
            let want = 0.05 / 2f64.sqrt();
            assert!(
                (a1 - a2 - want).abs() < 1e-9,
                "second step should be -0.05/sqrt(2)"
            );
        }
        // Zero-gradient parameters never move (0 / (sqrt(0)+eps) = 0).
        let w0 = m.net.tensors()[0].data[0];
        let g_zero = Grads::zeros_like(&m);
        adagrad_step(&mut m, &g_zero, &mut opt).unwrap();
        assert_eq!(m.net.tensors()[0].data[0], w0);
    }

    #[test]
    fn adagrad_accumulators_grow_monotonically() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        let mut m = ModelParams::new(&cfg, 5, &mut Rng::new(3));
        let mut opt = AdaGrad::new(&m);
        let mut g = Grads::zeros_like(&m);
        let tree = parse_constituency("(3 (2 a) (1 b))").unwrap();
        let ex = vec![TrainExample::Tree {
            tree,
            ids: vec![1, 2],
        }];
        let mut rng = Rng::new(4);
        let mut prev: Vec<f64> = Vec::new();
        for step in 0..3 {
            minibatch_loss_grad(&m, &ex, &[0], true, &mut rng, &mut g).unwrap();
            adagrad_step(&mut m, &g, &mut opt).unwrap();
            let cur: Vec<f64> = opt
                .accum_net
                .tensors()
                .iter()
                .flat_map(|t| t.data.iter().copied())
                .collect();
            if step > 0 {
                for (p, c) in prev.iter().zip(&cur) {
                    assert!(c >= p, "accumulator decreased");
                }
            }
            prev = cur;
        }
    }

    #[test]
    fn frozen_embeddings_never_move() {
        let mut cfg = toy_cfg(TaskKind::Relatedness, VariantKind::ChildSumDep);
        cfg.emb_lr = 0.0;
        let mut m = ModelParams::new(&cfg, 5, &mut Rng::new(5));
        let rows_before: Vec<Vec<f64>> = m.emb.rows.iter().map(|r| r.data.clone()).collect();
        let mut opt = AdaGrad::new(&m);
        let mut g = Grads::zeros_like(&m);
        g.add_emb(2, &Vector::from_slice(&[1.0, 1.0, 1.0]));
        adagrad_step(&mut m, &g, &mut opt).unwrap();
        for (before, after) in rows_before.iter().zip(&m.emb.rows) {
            assert_eq!(*before, after.data);
        }

        // With a positive rate only the touched row moves.
        m.cfg.emb_lr = 0.1;
        adagrad_step(&mut m, &g, &mut opt).unwrap();
        for (i, (before, after)) in rows_before.iter().zip(&m.emb.rows).enumerate() {
            if i == 2 {
                assert_ne!(*before, after.data);
            } else {
                assert_eq!(*before, after.data);
            }
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected_by_name() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::Lstm);
        let mut m = ModelParams::new(&cfg, 4, &mut Rng::new(1));
        let mut opt = AdaGrad::new(&m);
        let mut g = Grads::zeros_like(&m);
        g.net.tensors_mut()[0].data[0] = f64::NAN;
        let err = adagrad_step(&mut m, &g, &mut opt).unwrap_err();
        match err {
            TrainError::NonFinite { name } => assert!(name.starts_with("enc.")),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn minibatch_averages_over_supervision_terms() {
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        let m = ModelParams::new(&cfg, 6, &mut Rng::new(8));
        // Example 0 has three labeled nodes, example 1 has one.
        let t0 = parse_constituency("(3 (2 a) (1 b))").unwrap();
        let mut t1 = parse_constituency("(4 (0 c) (0 d))").unwrap();
        t1.nodes[0].label = None;
        t1.nodes[1].label = None;
        let examples = vec![
            TrainExample::Tree {
                tree: t0,
                ids: vec![1, 2],
            },
            TrainExample::Tree {
                tree: t1,
                ids: vec![3, 4],
            },
        ];
        let mut g_batch = Grads::zeros_like(&m);
        let stats =
            minibatch_loss_grad(&m, &examples, &[0, 1], true, &mut Rng::new(1), &mut g_batch)
                .unwrap();
        assert_eq!(stats.terms, 4);
        assert_eq!(stats.skipped, 0);

        // Single-example sums, then divide by the total term count.
        let mut g_manual = Grads::zeros_like(&m);
        let s0 =
            example_loss_grad(&m, &examples[0], true, &mut Rng::new(9), &mut g_manual).unwrap();
        let s1 =
            example_loss_grad(&m, &examples[1], true, &mut Rng::new(9), &mut g_manual).unwrap();
        g_manual.scale(1.0 / 4.0);
        let want_loss = (s0.loss_sum + s1.loss_sum) / 4.0;
        assert!((stats.loss - want_loss).abs() < 1e-12);
        for (a, b) in g_batch.net.tensors().iter().zip(g_manual.net.tensors()) {
            for (x, y) in a.data.iter().zip(b.data.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l2_touches_net_but_not_embeddings() {
        let mut cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        cfg.l2 = 0.1;
        let m = ModelParams::new(&cfg, 6, &mut Rng::new(8));
        let tree = parse_constituency("(3 (2 a) (1 b))").unwrap();
        let examples = vec![TrainExample::Tree {
            tree,
            ids: vec![1, 2],
        }];
        let mut g_l2 = Grads::zeros_like(&m);
        let with =
            minibatch_loss_grad(&m, &examples, &[0], true, &mut Rng::new(1), &mut g_l2).unwrap();
        let mut m0 = m.clone();
        m0.cfg.l2 = 0.0;
        let mut g_plain = Grads::zeros_like(&m0);
        let without =
            minibatch_loss_grad(&m0, &examples, &[0], true, &mut Rng::new(1), &mut g_plain)
                .unwrap();
        let norm_sq: f64 = m
            .net
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum();
        assert!((with.loss - without.loss - 0.05 * norm_sq).abs() < 1e-12);
        for ((p, a), b) in m
            .net
            .tensors()
            .iter()
            .zip(g_l2.net.tensors())
            .zip(g_plain.net.tensors())
        {
            for k in 0..p.data.len() {
                assert!((a.data[k] - (b.data[k] + 0.1 * p.data[k])).abs() < 1e-12);
            }
        }
        // Embedding gradients carry no penalty term.
        for (row, grad) in &g_l2.emb {
            let plain = &g_plain.emb[row];
            for (x, y) in grad.data.iter().zip(&plain.data) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn count_params_reference_values() {
        assert_eq!(count_params(VariantKind::Lstm, 150, 300), 270_600);
        assert_eq!(count_params(VariantKind::BiLstm, 150, 300), 270_600);
        assert_eq!(count_params(VariantKind::ChildSumDep, 150, 300), 270_600);
        assert_eq!(count_params(VariantKind::Lstm2Layer, 150, 300), 451_200);
        assert_eq!(count_params(VariantKind::BiLstm2Layer, 150, 300), 451_200);
        assert_eq!(count_params(VariantKind::NaryConst, 150, 300), 405_600);
    }

    #[test]
    fn count_params_matches_constructed_encoders() {
        for variant in VariantKind::ALL {
            let cfg = toy_cfg(TaskKind::SentimentFine, variant);
            let m = ModelParams::new(&cfg, 3, &mut Rng::new(1));
            assert_eq!(
                m.net.encoder.n_params(),
                count_params(variant, cfg.d, cfg.e),
                "{variant}"
            );
        }
    }

    #[test]
    fn sentiment_examples_expand_spans_for_chains() {
        let trees = vec![parse_constituency("(3 (2 a) (1 b))").unwrap()];
        let vocab = build_vocab(&trees);
        let chain = sentiment_train_examples(&trees, &vocab, true);
        assert_eq!(chain.len(), 3);
        let spans: Vec<(Vec<usize>, u32)> = chain
            .iter()
            .map(|e| match e {
                TrainExample::Seq { ids, label } => (ids.clone(), *label),
                _ => panic!("chain mode should emit sequences"),
            })
            .collect();
        assert!(spans.contains(&(vec![vocab.lookup("a")], 2)));
        assert!(spans.contains(&(vec![vocab.lookup("b")], 1)));
        assert!(spans.contains(&(vec![vocab.lookup("a"), vocab.lookup("b")], 3)));

        let tree_mode = sentiment_train_examples(&trees, &vocab, false);
        assert_eq!(tree_mode.len(), 1);
        let evals = sentiment_eval_examples(&trees, &vocab, false);
        match &evals[0] {
            EvalExample::Root { gold, .. } => assert_eq!(*gold, 3),
            _ => panic!("tree mode should emit root examples"),
        }
    }

    #[test]
    fn relatedness_examples_require_aligned_files() {
        let pairs = vec![PairRecord {
            id: "1".into(),
            sentence_a: "a".into(),
            sentence_b: "b".into(),
            score: 3.0,
        }];
        let t = crate::trees::parse_dependency(&[(1, "a".to_string(), 0)]).unwrap();
        let err = relatedness_examples(
            &pairs,
            &[t.clone(), t.clone()],
            std::slice::from_ref(&t),
            &Vocab::new(),
        )
        .unwrap_err();
        match err {
            TrainError::PairCount {
                pairs: 1,
                a: 2,
                b: 1,
            } => {}
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let cfg = toy_cfg(TaskKind::Relatedness, VariantKind::ChildSumDep);
        let m = ModelParams::new(&cfg, 4, &mut Rng::new(11));
        let mut vocab = Vocab::new();
        for t in ["the", "cat", "sat"] {
            vocab.insert(t);
        }
        save_checkpoint(&m, &vocab, &p1).unwrap();
        let (loaded, loaded_vocab) = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded.cfg, m.cfg);
        for (a, b) in loaded.net.tensors().iter().zip(m.net.tensors()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.data, b.data);
        }
        for (a, b) in loaded.emb.rows.iter().zip(&m.emb.rows) {
            assert_eq!(a.data, b.data);
        }
        let tokens: Vec<&str> = loaded_vocab.tokens().collect();
        let want: Vec<&str> = vocab.tokens().collect();
        assert_eq!(tokens, want);

        save_checkpoint(&loaded, &loaded_vocab, &p2).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn checkpoint_rejects_damage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::Lstm);
        let vocab = Vocab::new();
        let m = ModelParams::new(&cfg, vocab.len(), &mut Rng::new(2));
        save_checkpoint(&m, &vocab, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        // Truncated mid-record.
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        std::fs::copy(vocab_path(&path), vocab_path(&cut)).unwrap();
        assert!(matches!(
            load_checkpoint(&cut).unwrap_err(),
            CheckpointError::Truncated
        ));

        // Wrong magic.
        let bad = dir.path().join("bad.ckpt");
        let mut flipped = bytes.clone();
        flipped[0] ^= 0xFF;
        std::fs::write(&bad, &flipped).unwrap();
        std::fs::copy(vocab_path(&path), vocab_path(&bad)).unwrap();
        assert!(matches!(
            load_checkpoint(&bad).unwrap_err(),
            CheckpointError::BadMagic
        ));

        // meta.d patched to 5: every encoder tensor now has the wrong shape.
        let pat: Vec<u8> = [6u32.to_le_bytes().as_slice(), b"meta.d"].concat();
        let pos = bytes
            .windows(pat.len())
            .position(|w| w == pat)
            .expect("meta.d record present");
        let val_at = pos + pat.len() + 4;
        let mut patched = bytes.clone();
        patched[val_at..val_at + 8].copy_from_slice(&5.0f64.to_le_bytes());
        let shp = dir.path().join("shp.ckpt");
        std::fs::write(&shp, &patched).unwrap();
        std::fs::copy(vocab_path(&path), vocab_path(&shp)).unwrap();
        assert!(matches!(
            load_checkpoint(&shp).unwrap_err(),
            CheckpointError::ShapeMismatch { .. }
        ));

        // An extra record is reported, not silently ignored.
        let extra = dir.path().join("extra.ckpt");
        let mut appended = bytes.clone();
        write_record(&mut appended, "mystery", &[2], &[1.0, 2.0]).unwrap();
        std::fs::write(&extra, &appended).unwrap();
        std::fs::copy(vocab_path(&path), vocab_path(&extra)).unwrap();
        match load_checkpoint(&extra).unwrap_err() {
            CheckpointError::UnknownTensor { name } => assert_eq!(name, "mystery"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn train_loop_is_deterministic_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("best.ckpt");
        let trees = vec![
            parse_constituency("(3 (2 a) (1 b))").unwrap(),
            parse_constituency("(1 (0 c) (2 d))").unwrap(),
            parse_constituency("(4 (3 a) (2 d))").unwrap(),
        ];
        let vocab = build_vocab(&trees);
        let mut cfg = toy_cfg(TaskKind::SentimentFine, VariantKind::NaryConst);
        cfg.epochs = 3;
        cfg.batch = 2;
        cfg.log_timing = false;
        let train = sentiment_train_examples(&trees, &vocab, false);
        let dev = sentiment_eval_examples(&trees, &vocab, false);

        let run = |cfg: &RunConfig| -> Vec<String> {
            let mut m = ModelParams::new(cfg, vocab.len(), &mut Rng::new(cfg.seed));
            let mut lines = Vec::new();
            let out = train_loop(&mut m, &train, &dev, &vocab, Some(&path), |row| {
                lines.push(format_epoch_row(row))
            })
            .unwrap();
            assert_eq!(out.rows.len(), lines.len());
            lines
        };
        let first = run(&cfg);
        let second = run(&cfg);
        assert_eq!(first, second);
        assert_eq!(first.len(), 3);
        assert!(path.exists());
        assert!(vocab_path(&path).exists());
        let (loaded, _) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.cfg, cfg);
    }
}

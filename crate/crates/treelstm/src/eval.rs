//! Evaluation: accuracy, Pearson/Spearman/MSE, sentence-length breakdowns,
//! and nearest-neighbor retrieval over sentence representations.

use crate::embeddings::EmbeddingTable;
use crate::heads::similarity_forward;
use crate::model::{encode_sentence, predict, EvalExample, HeadParams, ModelParams};
use crate::tensor::Vector;
use crate::trees::Tree;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prediction/gold length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("metric needs at least {need} points, got {got}")]
    TooFew { need: usize, got: usize },
    /// Correlation is undefined when either series is constant; the MSE is
    /// still well-defined and travels with the error.
    #[error("correlation undefined for constant input (mse = {mse})")]
    ConstantInput { mse: f64 },
    #[error("nearest-neighbor model scoring needs a relatedness model")]
    WrongHead,
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            a: pred.len(),
            b: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Centered correlation; `None` when either side has zero variance.
fn pearson_opt(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// 1-based ranks with ties sharing the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && xs[idx[end]] == xs[idx[start]] {
            end += 1;
        }
        // Positions start..end (0-based) share rank mean(start+1 ..= end).
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

#[derive(Debug, Clone, Copy)]
pub struct Regression {
    pub pearson: f64,
    pub spearman: f64,
    pub mse: f64,
}

/// Pearson's r, Spearman's rho (average ranks for ties), and MSE.
pub fn regression_metrics(yhat: &[f64], y: &[f64]) -> Result<Regression, EvalError> {
    if yhat.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            a: yhat.len(),
            b: y.len(),
        });
    }
    if yhat.len() < 2 {
        return Err(EvalError::TooFew {
            need: 2,
            got: yhat.len(),
        });
    }
    let mse = yhat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / yhat.len() as f64;
    let pearson = pearson_opt(yhat, y).ok_or(EvalError::ConstantInput { mse })?;
    let spearman = pearson_opt(&average_ranks(yhat), &average_ranks(y))
        .ok_or(EvalError::ConstantInput { mse })?;
    Ok(Regression {
        pearson,
        spearman,
        mse,
    })
}

/// One row of a length-binned breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinRow {
    pub center: usize,
    pub value: f64,
    pub count: usize,
}

pub const BIN_HEADER: &str = "ell\tvalue\tcount";

pub fn format_bin_rows(rows: &[BinRow]) -> String {
    rows.iter()
        .map(|r| format!("{}\t{:.6}\t{}", r.center, r.value, r.count))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Integer bin centers from the smallest observed length up to
/// `max_center` (or the largest length). A length belongs to center `ell`
/// when |length - ell| <= half_width; the final center additionally
/// absorbs everything longer, so no example falls outside all bins.
fn bin_members(
    lengths: &[f64],
    half_width: usize,
    max_center: Option<usize>,
) -> Vec<(usize, Vec<usize>)> {
    if lengths.is_empty() {
        return Vec::new();
    }
    let min = lengths.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = lengths.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = min.floor() as usize;
    let hi = max_center.unwrap_or(max.ceil() as usize).max(lo);
    let hw = half_width as f64;
    let mut out = Vec::new();
    for center in lo..=hi {
        let c = center as f64;
        let members: Vec<usize> = lengths
            .iter()
            .enumerate()
            .filter(|(_, &len)| {
                if center == hi {
                    len >= c - hw
                } else {
                    (len - c).abs() <= hw
                }
            })
            .map(|(i, _)| i)
            .collect();
        if !members.is_empty() {
            out.push((center, members));
        }
    }
    out
}

/// Per-length-bin mean of 0/1 correctness flags.
pub fn length_binned_accuracy(
    lengths: &[f64],
    correct: &[bool],
    half_width: usize,
    max_center: Option<usize>,
) -> Result<Vec<BinRow>, EvalError> {
    if lengths.len() != correct.len() {
        return Err(EvalError::LengthMismatch {
            a: lengths.len(),
            b: correct.len(),
        });
    }
    Ok(bin_members(lengths, half_width, max_center)
        .into_iter()
        .map(|(center, members)| {
            let hits = members.iter().filter(|&&i| correct[i]).count();
            BinRow {
                center,
                value: hits as f64 / members.len() as f64,
                count: members.len(),
            }
        })
        .collect())
}

/// Per-length-bin Pearson's r. Bins where the correlation is undefined
/// (fewer than two members, or constant values) are omitted along with
/// empty ones.
pub fn length_binned_pearson(
    lengths: &[f64],
    yhat: &[f64],
    y: &[f64],
    half_width: usize,
    max_center: Option<usize>,
) -> Result<Vec<BinRow>, EvalError> {
    if lengths.len() != yhat.len() || lengths.len() != y.len() {
        return Err(EvalError::LengthMismatch {
            a: lengths.len(),
            b: yhat.len().min(y.len()),
        });
    }
    let mut rows = Vec::new();
    for (center, members) in bin_members(lengths, half_width, max_center) {
        if members.len() < 2 {
            continue;
        }
        let a: Vec<f64> = members.iter().map(|&i| yhat[i]).collect();
        let b: Vec<f64> = members.iter().map(|&i| y[i]).collect();
        if let Some(r) = pearson_opt(&a, &b) {
            rows.push(BinRow {
                center,
                value: r,
                count: members.len(),
            });
        }
    }
    Ok(rows)
}

/// Sentence length an example contributes to a binned breakdown: token
/// count, or the mean of the two token counts for a pair.
pub fn example_length(ex: &EvalExample) -> f64 {
    match ex {
        EvalExample::Root { tree, .. } => tree.sentence_len() as f64,
        EvalExample::Seq { ids, .. } => ids.len() as f64,
        EvalExample::Pair { tree_a, tree_b, .. } => {
            (tree_a.sentence_len() + tree_b.sentence_len()) as f64 / 2.0
        }
    }
}

pub fn cosine(a: &Vector, b: &Vector) -> f64 {
    let na = a.norm_sq().sqrt();
    let nb = b.norm_sq().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(b) / (na * nb)
}

/// Mean of the word vectors for a token-id sequence.
pub fn mean_vector(table: &EmbeddingTable, ids: &[usize]) -> Vector {
    let mut out = Vector::zeros(table.dim);
    for &id in ids {
        out.add_assign(table.lookup(id));
    }
    if !ids.is_empty() {
        out = out.scale(1.0 / ids.len() as f64);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub score: f64,
}

fn top_k(mut scored: Vec<Neighbor>, k: usize) -> Vec<Neighbor> {
    // Stable sort: equal scores keep corpus order.
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(k);
    scored
}

/// Baseline retrieval: rank corpus sentences by cosine similarity between
/// mean word vectors.
pub fn nearest_baseline(
    table: &EmbeddingTable,
    corpus: &[Vec<usize>],
    query: &[usize],
    k: usize,
) -> Result<Vec<Neighbor>, EvalError> {
    if corpus.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 });
    }
    let q = mean_vector(table, query);
    let scored = corpus
        .iter()
        .enumerate()
        .map(|(index, ids)| Neighbor {
            index,
            score: cosine(&mean_vector(table, ids), &q),
        })
        .collect();
    Ok(top_k(scored, k))
}

/// Model retrieval: rank corpus sentences by the trained relatedness score
/// against the query (scores lie strictly inside (1, K)).
pub fn nearest_model(
    m: &ModelParams,
    corpus: &[(Tree, Vec<usize>)],
    query: &(Tree, Vec<usize>),
    k: usize,
) -> crate::Result<Vec<Neighbor>> {
    let head = match &m.net.head {
        HeadParams::Similarity(s) => s,
        HeadParams::Classifier(_) => return Err(EvalError::WrongHead.into()),
    };
    if corpus.is_empty() {
        return Err(EvalError::TooFew { need: 1, got: 0 }.into());
    }
    let hq = encode_sentence(m, &query.0, &query.1)?;
    let mut scored = Vec::with_capacity(corpus.len());
    for (index, (tree, ids)) in corpus.iter().enumerate() {
        let h = encode_sentence(m, tree, ids)?;
        let score = similarity_forward(head, &h, &hq)?.yhat;
        scored.push(Neighbor { index, score });
    }
    Ok(top_k(scored, k))
}

#[derive(Debug, Clone, Copy)]
pub enum TaskMetrics {
    Classification { accuracy: f64 },
    Regression(Regression),
}

/// Model predictions over an eval set, one value per example (class index
/// or relatedness score).
pub fn predictions(m: &ModelParams, set: &[EvalExample]) -> crate::Result<Vec<f64>> {
    set.iter().map(|ex| predict(m, ex)).collect()
}

pub fn gold_values(set: &[EvalExample]) -> Vec<f64> {
    set.iter()
        .map(|ex| match ex {
            EvalExample::Root { gold, .. } | EvalExample::Seq { gold, .. } => *gold as f64,
            EvalExample::Pair { gold, .. } => *gold,
        })
        .collect()
}

/// Task-appropriate metrics for a model over an eval set.
pub fn evaluate(m: &ModelParams, set: &[EvalExample]) -> crate::Result<TaskMetrics> {
    let yhat = predictions(m, set)?;
    let gold = gold_values(set);
    if m.cfg.task.is_sentiment() {
        let pred: Vec<usize> = yhat.iter().map(|&v| v as usize).collect();
        let gold: Vec<usize> = gold.iter().map(|&v| v as usize).collect();
        Ok(TaskMetrics::Classification {
            accuracy: accuracy(&pred, &gold)?,
        })
    } else {
        Ok(TaskMetrics::Regression(regression_metrics(&yhat, &gold)?))
    }
}

/// Scalar used for model selection: accuracy for sentiment, Pearson's r
/// for relatedness. A constant-prediction dev pass scores 0 rather than
/// aborting the run.
pub fn dev_metric(m: &ModelParams, set: &[EvalExample]) -> crate::Result<f64> {
    match evaluate(m, set) {
        Ok(TaskMetrics::Classification { accuracy }) => Ok(accuracy),
        Ok(TaskMetrics::Regression(r)) => Ok(r.pearson),
        Err(crate::Error::Eval(EvalError::ConstantInput { .. })) => Ok(0.0),
        Err(e) => Err(e),
    }
}

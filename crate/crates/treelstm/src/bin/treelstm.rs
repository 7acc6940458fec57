//! Command-line front end: train, eval, gradcheck, count-params, nn.
//!
//! Exit codes partition failures: 1 configuration/usage, 2 data or I/O,
//! 3 numeric (divergence, failed gradient check, undefined correlation).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use treelstm::config::{self, RunConfig};
use treelstm::embeddings::{EmbeddingTable, Vocab};
use treelstm::eval::{
    self, format_bin_rows, length_binned_accuracy, length_binned_pearson, EvalError, Neighbor,
    TaskMetrics, BIN_HEADER,
};
use treelstm::gradcheck::{run_check, REL_ERR_LIMIT};
use treelstm::model::{EvalExample, ModelParams};
use treelstm::train::{
    self, build_vocab, count_params, load_checkpoint, relatedness_examples,
    sentiment_eval_examples, sentiment_train_examples, tree_ids, TrainError, EPOCH_LOG_HEADER,
};
use treelstm::trees::{
    self, parse_constituency, parse_dependency, read_constituency, read_dependency, read_pairs,
    read_spans, Tree,
};
use treelstm::{Error, Rng, TaskKind, VariantKind};

#[derive(Parser)]
#[command(
    name = "treelstm",
    version,
    about = "Tree-structured LSTM training and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

// One short-lived instance; variant size imbalance is irrelevant here.
#[allow(clippy::large_enum_variant)]
#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write the best-dev checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test set.
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print composition-function parameter counts.
    CountParams(CountParamsArgs),
    /// Nearest-neighbor sentence retrieval.
    Nn(NnArgs),
}

/// Hyperparameter overrides. Precedence: built-in defaults, then the
/// config file, then these flags.
#[derive(Args, Default)]
struct ConfigFlags {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task: sentiment-binary, sentiment-fine, relatedness.
    #[arg(long)]
    task: Option<String>,
    /// Variant: lstm, bilstm, lstm-2layer, bilstm-2layer, childsum-dep, nary-const.
    #[arg(long)]
    variant: Option<String>,
    /// Memory dimension.
    #[arg(long)]
    d: Option<String>,
    /// Word-vector dimension.
    #[arg(long)]
    e: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Embedding learning rate (0 freezes the word vectors).
    #[arg(long)]
    emb_lr: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    init_scale: Option<String>,
    #[arg(long)]
    forget_bias: Option<String>,
    #[arg(long)]
    sim_hidden: Option<String>,
    /// `false` prints 0.000 in the seconds column for reproducible logs.
    #[arg(long)]
    log_timing: Option<String>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut push = |key: &str, v: &Option<String>| {
            if let Some(v) = v {
                out.push((key.to_string(), v.clone()));
            }
        };
        push("task", &self.task);
        push("variant", &self.variant);
        push("d", &self.d);
        push("e", &self.e);
        push("lr", &self.lr);
        push("emb_lr", &self.emb_lr);
        push("l2", &self.l2);
        push("dropout", &self.dropout);
        push("batch", &self.batch);
        push("epochs", &self.epochs);
        push("seed", &self.seed);
        push("patience", &self.patience);
        push("init_scale", &self.init_scale);
        push("forget_bias", &self.forget_bias);
        push("sim_hidden", &self.sim_hidden);
        push("log_timing", &self.log_timing);
        out
    }

    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut pairs = Vec::new();
        if let Some(path) = &self.config {
            let text = read_file_string(path)?;
            pairs.extend(config::parse_config_file(&text)?);
        }
        pairs.extend(self.pairs());
        Ok(config::resolve(&pairs)?)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigFlags,
    /// Sentiment training trees (s-expressions; CoNLL for childsum-dep).
    #[arg(long)]
    train: Option<PathBuf>,
    /// Span-label file for dependency-tree sentiment training data.
    #[arg(long)]
    train_spans: Option<PathBuf>,
    /// Sentiment dev trees (defaults to the training set).
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    dev_spans: Option<PathBuf>,
    /// Relatedness score TSV (pair_ID / sentence_A / sentence_B / relatedness_score).
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Left-sentence trees, aligned with the score rows.
    #[arg(long)]
    trees_a: Option<PathBuf>,
    /// Right-sentence trees, aligned with the score rows.
    #[arg(long)]
    trees_b: Option<PathBuf>,
    #[arg(long)]
    dev_pairs: Option<PathBuf>,
    #[arg(long)]
    dev_trees_a: Option<PathBuf>,
    #[arg(long)]
    dev_trees_b: Option<PathBuf>,
    /// Pretrained word vectors (text: token then components, space-separated).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Where to write the best-dev checkpoint.
    #[arg(long, default_value = "model.ckpt")]
    checkpoint: PathBuf,
    /// Epoch log file (TSV: epoch, train loss, dev metric, seconds).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path; with --seeds it must contain `{seed}`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Sentiment test trees.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    test_spans: Option<PathBuf>,
    /// Relatedness test scores + trees.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    trees_a: Option<PathBuf>,
    #[arg(long)]
    trees_b: Option<PathBuf>,
    /// Seed list ("1,2,3" or "1..5"): evaluates one checkpoint per seed
    /// and prints mean and standard deviation per metric.
    #[arg(long)]
    seeds: Option<String>,
    /// Also print a sentence-length breakdown (half-width-2 windows).
    #[arg(long)]
    lengths: bool,
    /// Final bin center for --lengths; longer sentences batch into it.
    #[arg(long)]
    max_center: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Variant to check, or `all`.
    #[arg(long, default_value = "all")]
    variant: String,
    /// Head to check: classifier, similarity, or `both`.
    #[arg(long, default_value = "both")]
    head: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Deliberately corrupt one analytic gradient (harness self-test).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct CountParamsArgs {
    /// Variant name, or `all` for a table.
    #[arg(long)]
    variant: String,
    #[arg(long, default_value_t = 150)]
    d: usize,
    #[arg(long, default_value_t = 300)]
    e: usize,
}

#[derive(Args)]
struct NnArgs {
    /// Baseline mode: `mean` ranks by cosine of mean word vectors.
    #[arg(long)]
    baseline: Option<String>,
    /// Model mode: score sentences with a relatedness checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Corpus: one sentence per line (baseline) or a tree file (model).
    #[arg(long)]
    corpus: PathBuf,
    /// Query sentence (whitespace-tokenized).
    #[arg(long)]
    query: String,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Word vectors for baseline mode.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Seed for randomly-initialized out-of-file vectors.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
        Cmd::CountParams(args) => cmd_count_params(args),
        Cmd::Nn(args) => cmd_nn(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_class(&e))
        }
    }
}

fn exit_class(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 1,
        Error::Eval(EvalError::WrongHead) => 1,
        Error::Io { .. } | Error::Tree(_) | Error::Embedding(_) | Error::Checkpoint(_) => 2,
        Error::Train(TrainError::NonFinite { .. }) => 3,
        Error::Train(_) => 2,
        Error::Eval(EvalError::ConstantInput { .. }) => 3,
        Error::Eval(_) => 2,
        Error::Tensor(_) | Error::Cell(_) | Error::Head(_) => 3,
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(config::ConfigError::Invalid(msg.into()))
}

fn open_file(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn read_file_string(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Sentiment trees for a variant: s-expression files carry labels inline;
/// dependency files need a span-label sidecar projected onto nodes.
fn load_sentiment_trees(
    variant: VariantKind,
    path: &Path,
    spans: Option<&Path>,
) -> Result<Vec<Tree>, Error> {
    if variant == VariantKind::ChildSumDep {
        let spans_path = spans.ok_or_else(|| {
            config_err("dependency sentiment data needs --train-spans/--dev-spans/--test-spans")
        })?;
        let mut trees = read_dependency(open_file(path)?)?;
        let groups = read_spans(open_file(spans_path)?)?;
        if groups.len() != trees.len() {
            return Err(config_err(format!(
                "{} span groups for {} trees",
                groups.len(),
                trees.len()
            )));
        }
        for (tree, group) in trees.iter_mut().zip(&groups) {
            trees::project_labels(tree, group);
        }
        Ok(trees)
    } else {
        Ok(read_constituency(open_file(path)?)?)
    }
}

struct SentimentData {
    train_trees: Vec<Tree>,
    dev_trees: Vec<Tree>,
}

struct PairData {
    pairs: Vec<trees::PairRecord>,
    trees_a: Vec<Tree>,
    trees_b: Vec<Tree>,
}

fn load_pairs(
    variant: VariantKind,
    pairs: &Path,
    trees_a: &Path,
    trees_b: &Path,
) -> Result<PairData, Error> {
    let read_side = |p: &Path| -> Result<Vec<Tree>, Error> {
        if variant == VariantKind::NaryConst {
            Ok(read_constituency(open_file(p)?)?)
        } else {
            Ok(read_dependency(open_file(p)?)?)
        }
    };
    Ok(PairData {
        pairs: read_pairs(open_file(pairs)?)?,
        trees_a: read_side(trees_a)?,
        trees_b: read_side(trees_b)?,
    })
}

fn cmd_train(args: TrainArgs) -> Result<u8, Error> {
    let cfg = args.cfg.resolve()?;
    print!("{}", cfg.echo());

    let chain = !cfg.variant.is_tree();
    let (vocab, train_ex, dev_ex) = if cfg.task.is_sentiment() {
        let train_path = args
            .train
            .as_deref()
            .ok_or_else(|| config_err("sentiment training needs --train"))?;
        let data = SentimentData {
            train_trees: load_sentiment_trees(
                cfg.variant,
                train_path,
                args.train_spans.as_deref(),
            )?,
            dev_trees: match args.dev.as_deref() {
                Some(p) => load_sentiment_trees(cfg.variant, p, args.dev_spans.as_deref())?,
                None => Vec::new(),
            },
        };
        let vocab = build_vocab(&data.train_trees);
        let train_ex = sentiment_train_examples(&data.train_trees, &vocab, chain);
        let dev_trees = if data.dev_trees.is_empty() {
            &data.train_trees
        } else {
            &data.dev_trees
        };
        let dev_ex = sentiment_eval_examples(dev_trees, &vocab, chain);
        (vocab, train_ex, dev_ex)
    } else {
        let (pairs, ta, tb) = match (&args.pairs, &args.trees_a, &args.trees_b) {
            (Some(p), Some(a), Some(b)) => (p, a, b),
            _ => {
                return Err(config_err(
                    "relatedness training needs --pairs, --trees-a, and --trees-b",
                ))
            }
        };
        let data = load_pairs(cfg.variant, pairs, ta, tb)?;
        let vocab = build_vocab(data.trees_a.iter().chain(&data.trees_b));
        let (train_ex, train_dev) =
            relatedness_examples(&data.pairs, &data.trees_a, &data.trees_b, &vocab)?;
        let dev_ex = match (&args.dev_pairs, &args.dev_trees_a, &args.dev_trees_b) {
            (Some(p), Some(a), Some(b)) => {
                let dev = load_pairs(cfg.variant, p, a, b)?;
                relatedness_examples(&dev.pairs, &dev.trees_a, &dev.trees_b, &vocab)?.1
            }
            _ => train_dev,
        };
        (vocab, train_ex, dev_ex)
    };

    let mut model = ModelParams::new(&cfg, vocab.len(), &mut Rng::new(cfg.seed));
    if let Some(emb_path) = &args.embeddings {
        let coverage = model.emb.load_pretrained(open_file(emb_path)?, &vocab)?;
        println!(
            "embeddings: {}/{} vocabulary words covered ({:.1}%)",
            coverage.found,
            coverage.vocab_size,
            100.0 * coverage.rate()
        );
    }

    let mut log_file = match &args.log {
        Some(p) => Some(File::create(p).map_err(|e| Error::io(p.display().to_string(), e))?),
        None => None,
    };
    let mut log_line = |line: &str| {
        println!("{line}");
        if let Some(f) = log_file.as_mut() {
            // Log writes follow stdout; failures surface at the final flush.
            let _ = writeln!(f, "{line}");
        }
    };
    log_line(EPOCH_LOG_HEADER);
    let outcome = train::train_loop(
        &mut model,
        &train_ex,
        &dev_ex,
        &vocab,
        Some(&args.checkpoint),
        |row| log_line(&train::format_epoch_row(row)),
    )?;
    if let Some(f) = log_file.as_mut() {
        f.flush()
            .map_err(|e| Error::io(args.log.as_ref().unwrap().display().to_string(), e))?;
    }
    if outcome.skipped > 0 {
        eprintln!(
            "warning: {} example visits carried no supervision and were skipped",
            outcome.skipped
        );
    }
    println!(
        "best epoch {} (dev metric {:.6}); checkpoint {}",
        outcome.best_epoch,
        outcome.best_metric,
        args.checkpoint.display()
    );
    Ok(0)
}

/// Test examples for an already-trained model, using its checkpoint vocab.
fn load_eval_set(
    cfg: &RunConfig,
    vocab: &Vocab,
    args: &EvalArgs,
) -> Result<Vec<EvalExample>, Error> {
    if cfg.task.is_sentiment() {
        let path = args
            .test
            .as_deref()
            .ok_or_else(|| config_err("sentiment eval needs --test"))?;
        let trees = load_sentiment_trees(cfg.variant, path, args.test_spans.as_deref())?;
        Ok(sentiment_eval_examples(
            &trees,
            vocab,
            !cfg.variant.is_tree(),
        ))
    } else {
        let (pairs, ta, tb) = match (&args.pairs, &args.trees_a, &args.trees_b) {
            (Some(p), Some(a), Some(b)) => (p, a, b),
            _ => {
                return Err(config_err(
                    "relatedness eval needs --pairs, --trees-a, and --trees-b",
                ))
            }
        };
        let data = load_pairs(cfg.variant, pairs, ta, tb)?;
        Ok(relatedness_examples(&data.pairs, &data.trees_a, &data.trees_b, vocab)?.1)
    }
}

fn parse_seed_list(spec: &str) -> Result<Vec<u64>, Error> {
    let bad = || config_err(format!("cannot parse seed list `{spec}`"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

fn metric_rows(metrics: &TaskMetrics) -> Vec<(&'static str, f64)> {
    match metrics {
        TaskMetrics::Classification { accuracy } => vec![("accuracy", *accuracy)],
        TaskMetrics::Regression(r) => vec![
            ("pearson", r.pearson),
            ("spearman", r.spearman),
            ("mse", r.mse),
        ],
    }
}

fn cmd_eval(args: EvalArgs) -> Result<u8, Error> {
    let seeds = match &args.seeds {
        Some(spec) => Some(parse_seed_list(spec)?),
        None => None,
    };
    let paths: Vec<PathBuf> = match &seeds {
        Some(list) => {
            let pattern = args.checkpoint.display().to_string();
            if !pattern.contains("{seed}") {
                return Err(config_err(
                    "--seeds needs a checkpoint path containing `{seed}`",
                ));
            }
            list.iter()
                .map(|s| PathBuf::from(pattern.replace("{seed}", &s.to_string())))
                .collect()
        }
        None => vec![args.checkpoint.clone()],
    };

    let mut per_run: Vec<Vec<(&'static str, f64)>> = Vec::new();
    let mut echoed = false;
    for path in &paths {
        let (model, vocab) = load_checkpoint(path)?;
        if !echoed {
            print!("{}", model.cfg.echo());
            echoed = true;
        }
        let set = load_eval_set(&model.cfg, &vocab, &args)?;
        let metrics = eval::evaluate(&model, &set)?;
        per_run.push(metric_rows(&metrics));

        if args.lengths && paths.len() == 1 {
            let lengths: Vec<f64> = set.iter().map(eval::example_length).collect();
            let yhat = eval::predictions(&model, &set)?;
            let gold = eval::gold_values(&set);
            let rows = if model.cfg.task.is_sentiment() {
                let correct: Vec<bool> = yhat
                    .iter()
                    .zip(&gold)
                    .map(|(a, b)| (*a as usize) == (*b as usize))
                    .collect();
                length_binned_accuracy(&lengths, &correct, 2, args.max_center)?
            } else {
                length_binned_pearson(&lengths, &yhat, &gold, 2, args.max_center)?
            };
            println!("{BIN_HEADER}");
            if !rows.is_empty() {
                println!("{}", format_bin_rows(&rows));
            }
        }
    }

    if per_run.len() == 1 {
        for (name, value) in &per_run[0] {
            println!("{name}\t{value:.6}");
        }
    } else {
        // Mean and sample standard deviation across seeds, per metric.
        let names: Vec<&str> = per_run[0].iter().map(|(n, _)| *n).collect();
        println!("metric\tmean\tstd");
        for (j, name) in names.iter().enumerate() {
            let vals: Vec<f64> = per_run.iter().map(|r| r[j].1).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            println!("{name}\t{mean:.6}\t{:.6}", var.sqrt());
        }
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<u8, Error> {
    let variants: Vec<VariantKind> = if args.variant == "all" {
        VariantKind::ALL.to_vec()
    } else {
        vec![args.variant.parse().map_err(|e: String| config_err(e))?]
    };
    let heads: Vec<TaskKind> = match args.head.as_str() {
        "classifier" => vec![TaskKind::SentimentFine],
        "similarity" => vec![TaskKind::Relatedness],
        "both" => vec![TaskKind::SentimentFine, TaskKind::Relatedness],
        other => return Err(config_err(format!("unknown head `{other}`"))),
    };

    let mut failure: Option<(String, f64)> = None;
    for &variant in &variants {
        for &task in &heads {
            let head_name = if task.is_sentiment() {
                "classifier"
            } else {
                "similarity"
            };
            println!("# variant={variant} head={head_name} seed={}", args.seed);
            let report = run_check(task, variant, args.seed, args.corrupt)?;
            for group in &report.groups {
                println!("{}\t{:.3e}", group.name, group.rel_err);
            }
            println!("worst\t{:.3e}", report.worst());
            if !report.passed() {
                let worst = report
                    .groups
                    .iter()
                    .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
                    .unwrap();
                failure.get_or_insert((
                    format!("{variant}/{head_name}/{}", worst.name),
                    worst.rel_err,
                ));
            }
        }
    }
    if let Some((name, err)) = failure {
        eprintln!("gradient check failed: {name} relative error {err:.3e} > {REL_ERR_LIMIT:e}");
        return Ok(3);
    }
    Ok(0)
}

fn cmd_count_params(args: CountParamsArgs) -> Result<u8, Error> {
    if args.variant == "all" {
        for variant in VariantKind::ALL {
            println!("{variant}\t{}", count_params(variant, args.d, args.e));
        }
    } else {
        let variant: VariantKind = args.variant.parse().map_err(|e: String| config_err(e))?;
        println!("{}", count_params(variant, args.d, args.e));
    }
    Ok(0)
}

/// Synthetic tree for a raw query sentence: a head-final chain for
/// dependency models, a right-branching binary tree for constituency ones.
fn query_tree(tokens: &[&str], constituency: bool) -> Result<Tree, Error> {
    if tokens.is_empty() {
        return Err(config_err("--query must contain at least one token"));
    }
    if constituency {
        let mut sexpr = format!("(0 {})", tokens[tokens.len() - 1]);
        for tok in tokens[..tokens.len() - 1].iter().rev() {
            sexpr = format!("(0 (0 {tok}) {sexpr})");
        }
        Ok(parse_constituency(&sexpr)?)
    } else {
        let n = tokens.len();
        let rows: Vec<(usize, String, usize)> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (i + 1, t.to_string(), if i + 1 == n { 0 } else { i + 2 }))
            .collect();
        Ok(parse_dependency(&rows)?)
    }
}

fn print_neighbors(neighbors: &[Neighbor], sentences: &[String]) {
    for n in neighbors {
        println!("{:.4}\t{}", n.score, sentences[n.index]);
    }
}

fn cmd_nn(args: NnArgs) -> Result<u8, Error> {
    match (&args.baseline, &args.checkpoint) {
        (Some(mode), None) => {
            if mode != "mean" {
                return Err(config_err(format!("unknown baseline `{mode}`")));
            }
            let emb_path = args
                .embeddings
                .as_deref()
                .ok_or_else(|| config_err("baseline mode needs --embeddings"))?;
            let corpus_text = read_file_string(&args.corpus)?;
            let corpus_tokens: Vec<Vec<&str>> = corpus_text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| l.split_whitespace().collect())
                .collect();
            let query_tokens: Vec<&str> = args.query.split_whitespace().collect();
            let mut vocab = Vocab::new();
            for tok in corpus_tokens.iter().flatten().chain(&query_tokens) {
                vocab.insert(tok);
            }
            let dim = embedding_file_dim(emb_path)?;
            let mut table =
                EmbeddingTable::random(vocab.len(), dim, 0.05, &mut Rng::new(args.seed));
            table.load_pretrained(open_file(emb_path)?, &vocab)?;
            let corpus_ids: Vec<Vec<usize>> = corpus_tokens
                .iter()
                .map(|toks| toks.iter().map(|t| vocab.lookup(t)).collect())
                .collect();
            let query_ids: Vec<usize> = query_tokens.iter().map(|t| vocab.lookup(t)).collect();
            if args.k == 0 {
                return Ok(0);
            }
            let got = eval::nearest_baseline(&table, &corpus_ids, &query_ids, args.k)?;
            let sentences: Vec<String> = corpus_tokens.iter().map(|toks| toks.join(" ")).collect();
            print_neighbors(&got, &sentences);
            Ok(0)
        }
        (None, Some(ckpt)) => {
            let (model, vocab) = load_checkpoint(ckpt)?;
            let constituency = model.cfg.variant == VariantKind::NaryConst;
            let trees = if constituency {
                read_constituency(open_file(&args.corpus)?)?
            } else {
                read_dependency(open_file(&args.corpus)?)?
            };
            let corpus: Vec<(Tree, Vec<usize>)> = trees
                .into_iter()
                .map(|t| {
                    let ids = tree_ids(&t, &vocab);
                    (t, ids)
                })
                .collect();
            let query_tokens: Vec<&str> = args.query.split_whitespace().collect();
            let qt = query_tree(&query_tokens, constituency)?;
            let qids = tree_ids(&qt, &vocab);
            if args.k == 0 {
                return Ok(0);
            }
            let got = eval::nearest_model(&model, &corpus, &(qt, qids), args.k)?;
            let sentences: Vec<String> = corpus.iter().map(|(t, _)| t.tokens.join(" ")).collect();
            print_neighbors(&got, &sentences);
            Ok(0)
        }
        _ => Err(config_err(
            "nn needs exactly one of --baseline mean or --checkpoint",
        )),
    }
}

fn embedding_file_dim(path: &Path) -> Result<usize, Error> {
    let reader = open_file(path)?;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let fields = line.split_whitespace().count();
        if fields > 1 {
            return Ok(fields - 1);
        }
    }
    Err(Error::Embedding(
        treelstm::embeddings::EmbeddingError::Empty,
    ))
}

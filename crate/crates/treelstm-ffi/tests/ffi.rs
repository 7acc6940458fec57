//! Drives the C entry points end to end: trains tiny models on the bundled
//! toy data through the library, saves checkpoints, then loads and queries
//! them through the FFI surface exactly as a C caller would.

use std::ffi::{CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::ptr;

use treelstm::config::{RunConfig, TaskKind, VariantKind};
use treelstm::model::ModelParams;
use treelstm::tensor::Rng;
use treelstm::train::{
    build_vocab, relatedness_examples, sentiment_eval_examples, sentiment_train_examples,
    train_loop,
};
use treelstm::trees::{read_constituency, read_dependency, read_pairs};

use treelstm_ffi::{
    tlstm_classify_sexpr, tlstm_count_params, tlstm_last_error, tlstm_model_free, tlstm_model_load,
    tlstm_relatedness_conll, tlstm_sparse_target, tlstm_version, TlstmModel, TLSTM_ERR_ARG,
    TLSTM_ERR_DATA, TLSTM_OK,
};

fn toy_path(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/toy")
        .join(file)
}

fn open(path: &Path) -> BufReader<File> {
    BufReader::new(File::open(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(tlstm_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn load(path: &Path) -> *mut TlstmModel {
    let cpath = c(&path.display().to_string());
    let mut handle: *mut TlstmModel = ptr::null_mut();
    let rc = unsafe { tlstm_model_load(cpath.as_ptr(), &mut handle) };
    assert_eq!(rc, TLSTM_OK, "load {}: {}", path.display(), last_error());
    assert!(!handle.is_null());
    handle
}

/// Overfit the toy treebank so classifications are deterministic facts.
fn train_sentiment_checkpoint(dir: &Path) -> PathBuf {
    let trees = read_constituency(open(&toy_path("sentiment_trees.txt"))).unwrap();
    let mut cfg = RunConfig::defaults(TaskKind::SentimentBinary, VariantKind::NaryConst);
    cfg.d = 20;
    cfg.e = 16;
    cfg.batch = 5;
    cfg.epochs = 30;
    cfg.patience = 30;
    cfg.dropout = 0.0;
    cfg.log_timing = false;
    let vocab = build_vocab(&trees);
    let train = sentiment_train_examples(&trees, &vocab, false);
    let dev = sentiment_eval_examples(&trees, &vocab, false);
    let mut model = ModelParams::new(&cfg, vocab.len(), &mut Rng::new(cfg.seed));
    let ckpt = dir.join("sentiment.ckpt");
    let outcome = train_loop(&mut model, &train, &dev, &vocab, Some(&ckpt), |_| {}).unwrap();
    assert_eq!(outcome.best_metric, 1.0, "toy treebank must overfit");
    ckpt
}

fn train_relatedness_checkpoint(dir: &Path) -> PathBuf {
    let pairs = read_pairs(open(&toy_path("pairs.tsv"))).unwrap();
    let trees_a = read_dependency(open(&toy_path("pairs_a.conll"))).unwrap();
    let trees_b = read_dependency(open(&toy_path("pairs_b.conll"))).unwrap();
    let vocab = build_vocab(trees_a.iter().chain(&trees_b));
    let mut cfg = RunConfig::defaults(TaskKind::Relatedness, VariantKind::ChildSumDep);
    cfg.d = 16;
    cfg.e = 12;
    cfg.batch = 5;
    cfg.epochs = 80;
    cfg.patience = 80;
    cfg.emb_lr = 0.1;
    cfg.log_timing = false;
    let (train, dev) = relatedness_examples(&pairs, &trees_a, &trees_b, &vocab).unwrap();
    let mut model = ModelParams::new(&cfg, vocab.len(), &mut Rng::new(cfg.seed));
    let ckpt = dir.join("relatedness.ckpt");
    train_loop(&mut model, &train, &dev, &vocab, Some(&ckpt), |_| {}).unwrap();
    ckpt
}

#[test]
fn version_is_the_package_version() {
    let v = unsafe { CStr::from_ptr(tlstm_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn load_rejects_null_and_missing_paths() {
    let mut handle: *mut TlstmModel = ptr::null_mut();
    let rc = unsafe { tlstm_model_load(ptr::null(), &mut handle) };
    assert_eq!(rc, TLSTM_ERR_ARG);
    assert!(last_error().contains("null"));

    let missing = c("/no/such/model.ckpt");
    let rc = unsafe { tlstm_model_load(missing.as_ptr(), &mut handle) };
    assert_eq!(rc, TLSTM_ERR_DATA);
    assert!(!last_error().is_empty());
    assert!(handle.is_null(), "failed load must not write a handle");
}

#[test]
fn classify_matches_training_labels() {
    let dir = tempfile::tempdir().unwrap();
    let handle = load(&train_sentiment_checkpoint(dir.path()));

    // Every bundled tree is classified back to its own root label.
    let text = std::fs::read_to_string(toy_path("sentiment_trees.txt")).unwrap();
    let trees = read_constituency(text.as_bytes()).unwrap();
    for (line, tree) in text.lines().zip(&trees) {
        let gold = tree.nodes[tree.root].label.expect("labeled root") as i32;
        let sexpr = c(line);
        let mut class = -1i32;
        let rc = unsafe { tlstm_classify_sexpr(handle, sexpr.as_ptr(), &mut class) };
        assert_eq!(rc, TLSTM_OK, "{}", last_error());
        assert_eq!(class, gold, "line `{line}`");
    }

    // Malformed s-expression surfaces as a data error, not a crash.
    let bad = c("(1 (1 good");
    let mut class = -1i32;
    let rc = unsafe { tlstm_classify_sexpr(handle, bad.as_ptr(), &mut class) };
    assert_eq!(rc, TLSTM_ERR_DATA);

    unsafe { tlstm_model_free(handle) };
    unsafe { tlstm_model_free(ptr::null_mut()) }; // null free is a no-op
}

#[test]
fn relatedness_scores_track_pair_similarity() {
    let dir = tempfile::tempdir().unwrap();
    let handle = load(&train_relatedness_checkpoint(dir.path()));

    let blocks = |file: &str| -> Vec<String> {
        std::fs::read_to_string(toy_path(file))
            .unwrap()
            .split("\n\n")
            .map(|b| b.trim_matches('\n').to_string())
            .filter(|b| !b.is_empty())
            .collect()
    };
    let a = blocks("pairs_a.conll");
    let b = blocks("pairs_b.conll");
    let pairs = read_pairs(open(&toy_path("pairs.tsv"))).unwrap();
    let score_of = |idx: usize| -> f64 {
        let ca = c(&a[idx]);
        let cb = c(&b[idx]);
        let mut score = f64::NAN;
        let rc = unsafe { tlstm_relatedness_conll(handle, ca.as_ptr(), cb.as_ptr(), &mut score) };
        assert_eq!(rc, TLSTM_OK, "pair {idx}: {}", last_error());
        assert!(score > 1.0 && score < 5.0, "score {score} out of (1,5)");
        score
    };

    let hi = pairs.iter().position(|p| p.score == 5.0).unwrap();
    let lo = pairs.iter().position(|p| p.score == 1.0).unwrap();
    assert!(
        score_of(hi) > score_of(lo),
        "an identical pair must outscore an unrelated one"
    );

    // Sentiment queries against a relatedness handle are an argument error.
    let sexpr = c("(0 (0 cat) (0 runs))");
    let mut class = -1i32;
    let rc = unsafe { tlstm_classify_sexpr(handle, sexpr.as_ptr(), &mut class) };
    assert_eq!(rc, TLSTM_ERR_ARG);
    assert!(last_error().contains("not a sentiment model"));

    unsafe { tlstm_model_free(handle) };
}

#[test]
fn count_params_matches_documented_convention() {
    let lstm = c("lstm");
    assert_eq!(
        unsafe { tlstm_count_params(lstm.as_ptr(), 150, 300) },
        270_600
    );
    let nary = c("nary-const");
    assert_eq!(
        unsafe { tlstm_count_params(nary.as_ptr(), 150, 300) },
        405_600
    );
    let unknown = c("qlstm");
    assert_eq!(unsafe { tlstm_count_params(unknown.as_ptr(), 150, 300) }, 0);
    assert!(last_error().contains("qlstm"));
    assert_eq!(unsafe { tlstm_count_params(ptr::null(), 150, 300) }, 0);
}

#[test]
fn sparse_target_round_trips_scores() {
    let mut out = [0.0f64; 5];
    let rc = unsafe { tlstm_sparse_target(3.6, 5, out.as_mut_ptr()) };
    assert_eq!(rc, TLSTM_OK);
    let sum: f64 = out.iter().sum();
    let dot: f64 = out
        .iter()
        .enumerate()
        .map(|(j, p)| (j + 1) as f64 * p)
        .sum();
    assert!((sum - 1.0).abs() <= 1e-12);
    assert!((dot - 3.6).abs() <= 1e-12);

    let rc = unsafe { tlstm_sparse_target(0.5, 5, out.as_mut_ptr()) };
    assert_ne!(rc, TLSTM_OK, "out-of-range score must fail");
    assert!(!last_error().is_empty());
    let rc = unsafe { tlstm_sparse_target(2.0, 0, out.as_mut_ptr()) };
    assert_eq!(rc, TLSTM_ERR_ARG);
    let rc = unsafe { tlstm_sparse_target(2.0, 5, ptr::null_mut()) };
    assert_eq!(rc, TLSTM_ERR_ARG);
}

#[test]
fn generated_header_declares_the_api() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/treelstm.h");
    let text =
        std::fs::read_to_string(&header).unwrap_or_else(|e| panic!("{}: {e}", header.display()));
    for symbol in [
        "tlstm_model_load",
        "tlstm_model_free",
        "tlstm_classify_sexpr",
        "tlstm_relatedness_conll",
        "tlstm_count_params",
        "tlstm_sparse_target",
        "tlstm_last_error",
        "tlstm_version",
        "TLSTM_OK",
    ] {
        assert!(text.contains(symbol), "header missing {symbol}");
    }
}

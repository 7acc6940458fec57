//! End-to-end contract tests for the `treelstm` binary: exit-code classes,
//! help output, config echo round-trip and precedence, and the train/eval/
//! gradcheck/count-params/nn surfaces on the bundled toy data.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use treelstm::config::{self, RunConfig, TaskKind, VariantKind};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_treelstm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn treelstm")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn toy(file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/toy")
        .join(file)
        .display()
        .to_string()
}

#[test]
fn help_exits_zero_everywhere() {
    let top = run(&["--help"]);
    assert_eq!(code(&top), 0);
    let text = stdout(&top);
    for sub in ["train", "eval", "gradcheck", "count-params", "nn"] {
        assert!(text.contains(sub), "top-level help should list {sub}");
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help should exit 0");
        assert!(!stdout(&out).is_empty());
    }
}

#[test]
fn unknown_flag_exits_one_with_usage() {
    let out = run(&["train", "--bogus-flag", "1"]);
    assert_eq!(code(&out), 1);
    let err = stderr(&out);
    assert!(
        err.contains("Usage") || err.contains("usage"),
        "expected usage text, got: {err}"
    );
}

#[test]
fn missing_data_file_exits_two_with_path() {
    let out = run(&[
        "train",
        "--task",
        "sentiment-binary",
        "--variant",
        "nary-const",
        "--train",
        "/no/such/treebank.txt",
    ]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("/no/such/treebank.txt"),
        "error should name the missing path: {}",
        stderr(&out)
    );
}

#[test]
fn missing_embedding_file_exits_two_with_path() {
    let out = run(&[
        "nn",
        "--baseline",
        "mean",
        "--corpus",
        &toy("sentences.txt"),
        "--query",
        "good fun",
        "--embeddings",
        "/no/such/vectors.txt",
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("/no/such/vectors.txt"));
}

#[test]
fn corrupt_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("junk.ckpt");
    fs::write(&ckpt, b"definitely not a checkpoint").unwrap();
    let out = run(&[
        "eval",
        "--checkpoint",
        &ckpt.display().to_string(),
        "--test",
        &toy("sentiment_trees.txt"),
    ]);
    assert_eq!(code(&out), 2, "stderr: {}", stderr(&out));
}

#[test]
fn gradcheck_passes_and_repeats_identically() {
    let args = [
        "gradcheck",
        "--variant",
        "lstm",
        "--head",
        "classifier",
        "--seed",
        "1",
    ];
    let first = run(&args);
    assert_eq!(code(&first), 0, "stderr: {}", stderr(&first));
    let text = stdout(&first);
    assert!(text.contains("# variant=lstm head=classifier seed=1"));
    assert!(text.contains("worst\t"));
    assert!(
        text.lines().any(|l| l.starts_with("enc.")),
        "per-group lines expected: {text}"
    );
    let second = run(&args);
    assert_eq!(stdout(&second), text, "same seed must print same errors");
}

#[test]
fn gradcheck_corrupt_hook_exits_three() {
    let out = run(&[
        "gradcheck",
        "--variant",
        "lstm",
        "--head",
        "classifier",
        "--seed",
        "1",
        "--corrupt",
    ]);
    assert_eq!(code(&out), 3);
    assert!(
        stderr(&out).contains("enc.") || stderr(&out).contains("head."),
        "failure should name the offending group: {}",
        stderr(&out)
    );
}

#[test]
fn count_params_table_covers_all_variants() {
    let out = run(&[
        "count-params",
        "--variant",
        "all",
        "--d",
        "150",
        "--e",
        "300",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for line in [
        "lstm\t270600",
        "bilstm\t270600",
        "childsum-dep\t270600",
        "lstm-2layer\t451200",
        "bilstm-2layer\t451200",
        "nary-const\t405600",
    ] {
        assert!(text.contains(line), "missing `{line}` in:\n{text}");
    }
}

#[test]
fn nn_baseline_ranks_query_sentence_first() {
    let out = run(&[
        "nn",
        "--baseline",
        "mean",
        "--corpus",
        &toy("sentences.txt"),
        "--query",
        "good fun",
        "--embeddings",
        &toy("mini_embeddings.txt"),
        "--k",
        "3",
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let first = text.lines().next().expect("at least one neighbor");
    assert!(
        first.starts_with("1.0000\t") && first.ends_with("good fun"),
        "query should match itself first: {first}"
    );
    assert_eq!(text.lines().count(), 3);

    let empty = run(&[
        "nn",
        "--baseline",
        "mean",
        "--corpus",
        &toy("sentences.txt"),
        "--query",
        "good fun",
        "--embeddings",
        &toy("mini_embeddings.txt"),
        "--k",
        "0",
    ]);
    assert_eq!(code(&empty), 0);
    assert!(stdout(&empty).is_empty(), "--k 0 must print nothing");
}

/// Flags override the config file, which overrides defaults; the echo block
/// a run prints parses back to the identical resolved configuration.
#[test]
fn config_precedence_and_echo_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_file = dir.path().join("run.cfg");
    fs::write(
        &cfg_file,
        "task = sentiment-binary\nvariant = nary-const\nlr = 0.77\nepochs = 3\n",
    )
    .unwrap();
    // No --train: the command fails after echoing the resolved config, which
    // keeps this test independent of any training time.
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_file)
        .args(["--lr", "0.99", "--seed", "7"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1, "missing --train is a usage error");
    let echo = stdout(&out);
    assert!(echo.contains("lr = 0.99"), "flag must beat file: {echo}");
    assert!(
        echo.contains("epochs = 3"),
        "file must beat default: {echo}"
    );
    assert!(echo.contains("seed = 7"));
    assert!(echo.contains("d = 150"), "default survives: {echo}");

    let pairs = config::parse_config_file(&echo).expect("echo parses as config");
    let round = config::resolve(&pairs).expect("echo resolves");
    let mut want = RunConfig::defaults(TaskKind::SentimentBinary, VariantKind::NaryConst);
    want.lr = 0.99;
    want.epochs = 3;
    want.seed = 7;
    assert_eq!(round, want);
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_file = dir.path().join("bad.cfg");
    fs::write(&cfg_file, "task = relatedness\nvariant = lstm\nwidth = 9\n").unwrap();
    let out = bin()
        .args(["train", "--config"])
        .arg(&cfg_file)
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("width"), "stderr: {}", stderr(&out));
}

fn train_toy_sentiment(dir: &Path, seed: &str, ckpt_name: &str) -> (PathBuf, PathBuf, Output) {
    let ckpt = dir.join(ckpt_name);
    let log = dir.join(format!("{ckpt_name}.log"));
    let out = bin()
        .args([
            "train",
            "--task",
            "sentiment-binary",
            "--variant",
            "nary-const",
            "--d",
            "20",
            "--e",
            "16",
            "--lr",
            "0.05",
            "--batch",
            "5",
            "--epochs",
            "30",
            "--patience",
            "30",
            "--dropout",
            "0",
            "--log-timing",
            "false",
            "--seed",
            seed,
            "--train",
            &toy("sentiment_trees.txt"),
        ])
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--log")
        .arg(&log)
        .output()
        .expect("spawn train");
    (ckpt, log, out)
}

#[test]
fn train_then_eval_on_toy_data() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, log, out) = train_toy_sentiment(dir.path(), "1", "model.ckpt");
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("task = sentiment-binary"), "echo missing");
    assert!(text.contains("epoch\ttrain_loss\tdev_metric\tseconds"));
    assert!(text.contains("best epoch"));
    assert!(ckpt.exists() && log.exists());
    let log_text = fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch\ttrain_loss\tdev_metric\tseconds\n"));
    // Every stdout epoch row also landed in the log file.
    for line in text.lines().filter(|l| {
        l.split('\t').count() == 4 && l.split('\t').next().unwrap().parse::<usize>().is_ok()
    }) {
        assert!(log_text.contains(line), "log missing row {line}");
    }

    // The overfit model classifies its own training roots perfectly.
    let eval = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .args(["--test", &toy("sentiment_trees.txt")])
        .output()
        .unwrap();
    assert_eq!(code(&eval), 0, "stderr: {}", stderr(&eval));
    let eval_text = stdout(&eval);
    assert!(
        eval_text.contains("accuracy\t1.000000"),
        "expected perfect accuracy: {eval_text}"
    );

    // Length-binned accuracy table rides on the same checkpoint.
    let binned = bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .args(["--test", &toy("sentiment_trees.txt"), "--lengths"])
        .output()
        .unwrap();
    assert_eq!(code(&binned), 0);
    let btext = stdout(&binned);
    assert!(btext.contains("ell\tvalue\tcount"), "bin header: {btext}");
}

#[test]
fn eval_multi_seed_reports_mean_and_std() {
    let dir = tempfile::tempdir().unwrap();
    let (c1, _, out1) = train_toy_sentiment(dir.path(), "1", "model1.ckpt");
    let (_c2, _, out2) = train_toy_sentiment(dir.path(), "2", "model2.ckpt");
    assert_eq!(code(&out1), 0);
    assert_eq!(code(&out2), 0);
    assert!(c1.exists());

    let pattern = dir.path().join("model{seed}.ckpt");
    let out = bin()
        .args(["eval", "--seeds", "1,2", "--checkpoint"])
        .arg(&pattern)
        .args(["--test", &toy("sentiment_trees.txt")])
        .output()
        .unwrap();
    assert_eq!(code(&out), 0, "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("metric\tmean\tstd"), "got: {text}");
    assert!(
        text.lines().any(|l| l.starts_with("accuracy\t")),
        "got: {text}"
    );

    // --seeds without a {seed} placeholder in the path is a usage error.
    let bad = bin()
        .args(["eval", "--seeds", "1,2", "--checkpoint"])
        .arg(dir.path().join("model1.ckpt"))
        .args(["--test", &toy("sentiment_trees.txt")])
        .output()
        .unwrap();
    assert_eq!(code(&bad), 1, "stderr: {}", stderr(&bad));
}

//! Run configuration: every hyperparameter, resolvable from defaults, a
//! flat `key = value` config file, and command-line overrides, in that
//! precedence order. The resolved config echoes back as `key = value`
//! lines that parse into an identical configuration.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cells::CellKind;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{key}`")]
    UnknownKey { key: String },
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("config line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("missing required key `{key}` (set it in the config file or as a flag)")]
    MissingKey { key: &'static str },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    SentimentBinary,
    SentimentFine,
    Relatedness,
}

impl TaskKind {
    /// Output arity: label count for sentiment, rank count K for relatedness.
    pub fn classes(&self) -> usize {
        match self {
            TaskKind::SentimentBinary => 2,
            TaskKind::SentimentFine => 5,
            TaskKind::Relatedness => 5,
        }
    }

    pub fn is_sentiment(&self) -> bool {
        !matches!(self, TaskKind::Relatedness)
    }

    /// Stable integer code used in checkpoint metadata.
    pub fn code(&self) -> u32 {
        match self {
            TaskKind::SentimentBinary => 0,
            TaskKind::SentimentFine => 1,
            TaskKind::Relatedness => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(TaskKind::SentimentBinary),
            1 => Some(TaskKind::SentimentFine),
            2 => Some(TaskKind::Relatedness),
            _ => None,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::SentimentBinary => "sentiment-binary",
            TaskKind::SentimentFine => "sentiment-fine",
            TaskKind::Relatedness => "relatedness",
        })
    }
}

impl FromStr for TaskKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sentiment-binary" => Ok(TaskKind::SentimentBinary),
            "sentiment-fine" => Ok(TaskKind::SentimentFine),
            "relatedness" => Ok(TaskKind::Relatedness),
            other => Err(format!(
                "`{other}` is not one of sentiment-binary, sentiment-fine, relatedness"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Lstm,
    BiLstm,
    Lstm2Layer,
    BiLstm2Layer,
    ChildSumDep,
    NaryConst,
}

impl VariantKind {
    pub const ALL: [VariantKind; 6] = [
        VariantKind::Lstm,
        VariantKind::BiLstm,
        VariantKind::Lstm2Layer,
        VariantKind::BiLstm2Layer,
        VariantKind::ChildSumDep,
        VariantKind::NaryConst,
    ];

    pub fn is_tree(&self) -> bool {
        matches!(self, VariantKind::ChildSumDep | VariantKind::NaryConst)
    }

    pub fn bidirectional(&self) -> bool {
        matches!(self, VariantKind::BiLstm | VariantKind::BiLstm2Layer)
    }

    pub fn layers(&self) -> usize {
        match self {
            VariantKind::Lstm2Layer | VariantKind::BiLstm2Layer => 2,
            _ => 1,
        }
    }

    /// Cell kind for tree variants; the binary constituency cell keeps the
    /// full k×l forget-gate grid.
    pub fn cell_kind(&self) -> Option<CellKind> {
        match self {
            VariantKind::ChildSumDep => Some(CellKind::ChildSum),
            VariantKind::NaryConst => Some(CellKind::Nary {
                arity: 2,
                off_diagonal: true,
            }),
            _ => None,
        }
    }

    /// Dimension of the representation a head reads.
    pub fn out_dim(&self, d: usize) -> usize {
        if self.bidirectional() {
            2 * d
        } else {
            d
        }
    }

    /// Stable integer code used in checkpoint metadata; indexes [`ALL`](Self::ALL).
    pub fn code(&self) -> u32 {
        Self::ALL.iter().position(|v| v == self).unwrap() as u32
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantKind::Lstm => "lstm",
            VariantKind::BiLstm => "bilstm",
            VariantKind::Lstm2Layer => "lstm-2layer",
            VariantKind::BiLstm2Layer => "bilstm-2layer",
            VariantKind::ChildSumDep => "childsum-dep",
            VariantKind::NaryConst => "nary-const",
        })
    }
}

impl FromStr for VariantKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lstm" => Ok(VariantKind::Lstm),
            "bilstm" => Ok(VariantKind::BiLstm),
            "lstm-2layer" => Ok(VariantKind::Lstm2Layer),
            "bilstm-2layer" => Ok(VariantKind::BiLstm2Layer),
            "childsum-dep" => Ok(VariantKind::ChildSumDep),
            "nary-const" => Ok(VariantKind::NaryConst),
            other => Err(format!(
                "`{other}` is not one of lstm, bilstm, lstm-2layer, bilstm-2layer, \
                 childsum-dep, nary-const"
            )),
        }
    }
}

/// Fully-resolved hyperparameters for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskKind,
    pub variant: VariantKind,
    pub d: usize,
    pub e: usize,
    pub lr: f64,
    /// Embedding learning rate; 0 freezes the word vectors.
    pub emb_lr: f64,
    pub l2: f64,
    pub dropout: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub patience: usize,
    pub init_scale: f64,
    pub forget_bias: f64,
    pub sim_hidden: usize,
    /// When false, the epoch log's seconds column prints 0.000 so that two
    /// identically-seeded runs produce byte-identical logs.
    pub log_timing: bool,
}

impl RunConfig {
    /// Task-aware defaults: sentiment runs tune embeddings (lr 0.1) and use
    /// dropout 0.5 at the classifier; relatedness runs freeze embeddings
    /// and use no dropout.
    pub fn defaults(task: TaskKind, variant: VariantKind) -> Self {
        let sentiment = task.is_sentiment();
        RunConfig {
            task,
            variant,
            d: 150,
            e: 300,
            lr: 0.05,
            emb_lr: if sentiment { 0.1 } else { 0.0 },
            l2: 1e-4,
            dropout: if sentiment { 0.5 } else { 0.0 },
            batch: 25,
            epochs: 20,
            seed: 1,
            patience: 10,
            init_scale: 0.05,
            forget_bias: 1.0,
            sim_hidden: 50,
            log_timing: true,
        }
    }

    pub fn classes(&self) -> usize {
        self.task.classes()
    }

    /// Apply one `key = value` override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| ConfigError::InvalidValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        match key {
            "task" => self.task = parse(key, value)?,
            "variant" => self.variant = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "e" => self.e = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "emb_lr" => self.emb_lr = parse(key, value)?,
            "l2" => self.l2 = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "init_scale" => self.init_scale = parse(key, value)?,
            "forget_bias" => self.forget_bias = parse(key, value)?,
            "sim_hidden" => self.sim_hidden = parse(key, value)?,
            "log_timing" => self.log_timing = parse(key, value)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.d == 0 || self.e == 0 || self.sim_hidden == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.batch == 0 || self.epochs == 0 {
            return bad("batch and epochs must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.emb_lr < 0.0 || !self.emb_lr.is_finite() {
            return bad(format!("emb_lr must be non-negative, got {}", self.emb_lr));
        }
        if self.l2 < 0.0 || !self.l2.is_finite() {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad(format!(
                "init_scale must be positive, got {}",
                self.init_scale
            ));
        }
        if !self.forget_bias.is_finite() {
            return bad(format!(
                "forget_bias must be finite, got {}",
                self.forget_bias
            ));
        }
        Ok(())
    }

    /// Fixed-order `key = value` listing; parsing it back yields `self`.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("task", self.task.to_string()),
            ("variant", self.variant.to_string()),
            ("d", self.d.to_string()),
            ("e", self.e.to_string()),
            ("lr", self.lr.to_string()),
            ("emb_lr", self.emb_lr.to_string()),
            ("l2", self.l2.to_string()),
            ("dropout", self.dropout.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("patience", self.patience.to_string()),
            ("init_scale", self.init_scale.to_string()),
            ("forget_bias", self.forget_bias.to_string()),
            ("sim_hidden", self.sim_hidden.to_string()),
            ("log_timing", self.log_timing.to_string()),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

/// Parse a flat config file into ordered `(key, value)` pairs: one
/// `key = value` per line, `#` comments and blank lines skipped.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or(ConfigError::BadLine { line: lineno + 1 })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Resolve ordered override pairs (earlier = lower precedence) into a full
/// configuration. `task` and `variant` must appear somewhere; everything
/// else falls back to task-aware defaults.
pub fn resolve(pairs: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let last = |key: &str| pairs.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v);
    let task: TaskKind = last("task")
        .ok_or(ConfigError::MissingKey { key: "task" })?
        .parse()
        .map_err(|reason| ConfigError::InvalidValue {
            key: "task".into(),
            value: last("task").unwrap().clone(),
            reason,
        })?;
    let variant: VariantKind = last("variant")
        .ok_or(ConfigError::MissingKey { key: "variant" })?
        .parse()
        .map_err(|reason| ConfigError::InvalidValue {
            key: "variant".into(),
            value: last("variant").unwrap().clone(),
            reason,
        })?;
    let mut cfg = RunConfig::defaults(task, variant);
    for (k, v) in pairs {
        cfg.apply(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

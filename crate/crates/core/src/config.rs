use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoders::{Aggregator, CandidateActivation, Updater};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Mhrc,
    Relation,
    Graph2Seq,
    Dual2Seq,
}

named_enum!(Task {
    Mhrc => "mhrc",
    Relation => "relation",
    Graph2Seq => "graph2seq",
    Dual2Seq => "dual2seq",
});

impl Task {
    pub fn is_generation(self) -> bool {
        matches!(self, Task::Graph2Seq | Task::Dual2Seq)
    }
}

/// Which encoder a head runs over its input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    /// Graph recurrent network.
    Grn,
    /// Bidirectional LSTM over a token sequence (the linearized graph for
    /// generation, the node order for relations, the passages alone for
    /// reading comprehension).
    Bilstm,
    /// Bidirectional DAG-LSTM (relations) or coreference-augmented passage
    /// DAG-LSTM (reading comprehension).
    Dag,
}

named_enum!(EncoderKind {
    Grn => "grn",
    Bilstm => "bilstm",
    Dag => "dag",
});

/// Everything a run needs: model shape, optimization, decoding and paths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub task: Task,
    pub encoder: EncoderKind,
    pub aggregator: Aggregator,
    pub updater: Updater,
    pub attention_heads: usize,
    pub steps: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub label_dim: usize,
    /// Character LSTM width; 0 disables character features.
    pub char_dim: usize,
    pub max_chars: usize,
    pub attention_dim: usize,
    /// Incoming neighbors kept per node when loading graphs; 0 keeps all.
    pub max_neighbors: usize,
    pub tau_l: usize,
    pub tau_s: usize,
    pub candidate_activation: CandidateActivation,
    pub coverage: bool,
    pub copy: bool,
    pub dropout: f64,
    pub lr: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beam: usize,
    pub max_decode_len: usize,
    pub min_count: usize,
    pub seed: u64,
    pub freeze_embeddings: bool,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "task",
    "encoder",
    "aggregator",
    "updater",
    "attention_heads",
    "steps",
    "embed_dim",
    "hidden_dim",
    "label_dim",
    "char_dim",
    "max_chars",
    "attention_dim",
    "max_neighbors",
    "tau_l",
    "tau_s",
    "candidate_activation",
    "coverage",
    "copy",
    "dropout",
    "lr",
    "l2",
    "batch_size",
    "epochs",
    "beam",
    "max_decode_len",
    "min_count",
    "seed",
    "freeze_embeddings",
    "train",
    "dev",
    "out",
    "embeddings",
];

impl TrainConfig {
    pub fn for_task(task: Task) -> Self {
        let base = TrainConfig {
            task,
            encoder: EncoderKind::Grn,
            aggregator: Aggregator::DirectedLabeled,
            updater: Updater::Lstm,
            attention_heads: 1,
            steps: 3,
            embed_dim: 300,
            hidden_dim: 300,
            label_dim: 50,
            char_dim: 0,
            max_chars: 20,
            attention_dim: 300,
            max_neighbors: 0,
            tau_l: 200,
            tau_s: 20,
            candidate_activation: CandidateActivation::default(),
            coverage: false,
            copy: false,
            dropout: 0.1,
            lr: 0.001,
            l2: 0.0,
            batch_size: 32,
            epochs: 20,
            beam: 1,
            max_decode_len: 100,
            min_count: 1,
            seed: 1,
            freeze_embeddings: false,
            train: None,
            dev: None,
            out: None,
            embeddings: None,
        };
        match task {
            Task::Mhrc => TrainConfig {
                aggregator: Aggregator::UndirectedSum,
                max_neighbors: 200,
                l2: 1e-8,
                ..base
            },
            Task::Relation => TrainConfig {
                steps: 5,
                hidden_dim: 150,
                attention_dim: 150,
                label_dim: 3,
                dropout: 0.3,
                batch_size: 8,
                ..base
            },
            Task::Graph2Seq => TrainConfig {
                steps: 9,
                max_neighbors: 10,
                char_dim: 100,
                coverage: true,
                copy: true,
                beam: 5,
                ..base
            },
            Task::Dual2Seq => TrainConfig {
                steps: 10,
                max_neighbors: 6,
                dropout: 0.2,
                lr: 0.0005,
                batch_size: 128,
                beam: 5,
                epochs: 30,
                ..base
            },
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}` expects a number, got `{v}`")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config(format!(
                    "`{key}` expects true or false, got `{v}`"
                ))),
            }
        }
        fn path(v: &str) -> Option<PathBuf> {
            (!v.is_empty()).then(|| PathBuf::from(v))
        }
        let v = value.trim();
        match key {
            "task" => self.task = v.parse()?,
            "encoder" => self.encoder = v.parse()?,
            "aggregator" => self.aggregator = v.parse()?,
            "updater" => self.updater = v.parse()?,
            "attention_heads" => self.attention_heads = num(key, v)?,
            "steps" => self.steps = num(key, v)?,
            "embed_dim" => self.embed_dim = num(key, v)?,
            "hidden_dim" => self.hidden_dim = num(key, v)?,
            "label_dim" => self.label_dim = num(key, v)?,
            "char_dim" => self.char_dim = num(key, v)?,
            "max_chars" => self.max_chars = num(key, v)?,
            "attention_dim" => self.attention_dim = num(key, v)?,
            "max_neighbors" => self.max_neighbors = num(key, v)?,
            "tau_l" => self.tau_l = num(key, v)?,
            "tau_s" => self.tau_s = num(key, v)?,
            "candidate_activation" => self.candidate_activation = v.parse()?,
            "coverage" => self.coverage = flag(key, v)?,
            "copy" => self.copy = flag(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "l2" => self.l2 = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "beam" => self.beam = num(key, v)?,
            "max_decode_len" => self.max_decode_len = num(key, v)?,
            "min_count" => self.min_count = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "freeze_embeddings" => self.freeze_embeddings = flag(key, v)?,
            "train" => self.train = path(v),
            "dev" => self.dev = path(v),
            "out" => self.out = path(v),
            "embeddings" => self.embeddings = path(v),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        fn path(p: &Option<PathBuf>) -> String {
            p.as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        }
        Ok(match key {
            "task" => self.task.to_string(),
            "encoder" => self.encoder.to_string(),
            "aggregator" => self.aggregator.to_string(),
            "updater" => self.updater.to_string(),
            "attention_heads" => self.attention_heads.to_string(),
            "steps" => self.steps.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "label_dim" => self.label_dim.to_string(),
            "char_dim" => self.char_dim.to_string(),
            "max_chars" => self.max_chars.to_string(),
            "attention_dim" => self.attention_dim.to_string(),
            "max_neighbors" => self.max_neighbors.to_string(),
            "tau_l" => self.tau_l.to_string(),
            "tau_s" => self.tau_s.to_string(),
            "candidate_activation" => self.candidate_activation.to_string(),
            "coverage" => self.coverage.to_string(),
            "copy" => self.copy.to_string(),
            "dropout" => self.dropout.to_string(),
            "lr" => self.lr.to_string(),
            "l2" => self.l2.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "beam" => self.beam.to_string(),
            "max_decode_len" => self.max_decode_len.to_string(),
            "min_count" => self.min_count.to_string(),
            "seed" => self.seed.to_string(),
            "freeze_embeddings" => self.freeze_embeddings.to_string(),
            "train" => path(&self.train),
            "dev" => path(&self.dev),
            "out" => path(&self.out),
            "embeddings" => path(&self.embeddings),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        })
    }

    /// Builds a config from `key = value` pairs in order. The task is read
    /// first (default `mhrc`) so that its defaults apply before any other
    /// key.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let task = match pairs.iter().rev().find(|(k, _)| *k == "task") {
            Some((_, v)) => v.trim().parse()?,
            None => Task::Mhrc,
        };
        let mut cfg = TrainConfig::for_task(task);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses the `key = value` line format; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        TrainConfig::parse(&std::fs::read_to_string(path)?)
    }

    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("attention_dim", self.attention_dim),
            ("attention_heads", self.attention_heads),
            ("label_dim", self.label_dim),
            ("max_chars", self.max_chars),
            ("batch_size", self.batch_size),
            ("beam", self.beam),
            ("max_decode_len", self.max_decode_len),
            ("min_count", self.min_count),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::Config(format!(
                "l2 must be nonnegative, got {}",
                self.l2
            )));
        }
        if self.tau_s >= self.tau_l {
            return Err(Error::Config("tau_s must be smaller than tau_l".into()));
        }
        match (self.task, self.encoder) {
            (Task::Graph2Seq, EncoderKind::Dag)
            | (Task::Dual2Seq, EncoderKind::Dag | EncoderKind::Bilstm) => {
                return Err(Error::Config(format!(
                    "encoder `{}` is not available for task `{}`",
                    self.encoder, self.task
                )))
            }
            _ => {}
        }
        if self.copy && self.task == Task::Dual2Seq {
            return Err(Error::Config("copy is only available for graph2seq".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_task(Task::Mhrc)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

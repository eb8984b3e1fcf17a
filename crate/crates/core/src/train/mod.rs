//! Losses, batch gradients, evaluation and the training loop.

mod loss;

pub use loss::{classification_loss, l2_penalty, sequence_loss, PROB_FLOOR};

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::encoders::read_word_vectors;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::graph::{read_graph_jsonl, TaskInstance};
use crate::heads::{
    teacher_forced, DecodeOptions, Example, ExampleKind, Model, Prediction, Vocabs,
};
use crate::tensor::{
    adam_step, load_checkpoint, save_checkpoint, AdamConfig, Gradients, ParamStore, Tape,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_FILE: &str = "config.txt";
pub const VOCAB_FILE: &str = "vocab.json";
pub const METRICS_FILE: &str = "metrics.csv";

/// Mean loss and mean gradient of one mini-batch, l2 term included.
#[derive(Debug, Clone)]
pub struct BatchResult {
    pub loss: f64,
    pub grads: Gradients,
}

/// Evaluates every example on its own training tape (dropout seeded by
/// `seeds[i]`), then sums gradients in example order so the result does not
/// depend on how the work was scheduled.
pub fn batch_gradients(
    model: &Model,
    store: &ParamStore,
    batch: &[&Example],
    seeds: &[u64],
    l2: f64,
    exec: &Exec,
) -> Result<BatchResult> {
    if batch.is_empty() || batch.len() != seeds.len() {
        return Err(Error::invalid(
            "batch and seed lists must be non-empty and equally long",
        ));
    }
    let items: Vec<(&Example, u64)> = batch.iter().copied().zip(seeds.iter().copied()).collect();
    let results = exec.map(&items, |&(ex, seed)| -> Result<(f64, Gradients)> {
        let tape = Tape::training(store, seed);
        let loss = model.loss(&tape, ex)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {value} on example `{}`",
                ex.id
            )));
        }
        Ok((value, tape.gradients(loss)?))
    });
    let mut total = 0.0;
    let mut grads = Gradients::zeros_like(store);
    for r in results {
        let (l, g) = r?;
        total += l;
        grads.add_assign(&g);
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    let mut loss = total * scale;
    if l2 > 0.0 {
        grads.add_l2(store, l2);
        loss += l2 * store.squared_norm();
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(BatchResult { loss, grads })
}

/// Mean unregularized loss on evaluation tapes.
pub fn mean_loss(
    model: &Model,
    store: &ParamStore,
    examples: &[Example],
    exec: &Exec,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let losses = exec.map(examples, |ex| {
        let tape = Tape::new(store);
        let l = model.loss(&tape, ex)?;
        Ok::<f64, Error>(tape.scalar(l))
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / examples.len() as f64)
}

/// Fraction of examples whose predicted class is the gold one.
pub fn accuracy(
    model: &Model,
    store: &ParamStore,
    examples: &[Example],
    exec: &Exec,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let opts = DecodeOptions {
        beam: 1,
        max_len: 1,
    };
    let hits = exec.map(examples, |ex| -> Result<bool> {
        let gold = model
            .gold_class(ex)?
            .ok_or_else(|| Error::invalid(format!("example `{}` has no gold class", ex.id)))?;
        match model.predict(store, ex, &Exec::sequential(), opts)? {
            Prediction::Class { index, .. } => Ok(index == gold),
            Prediction::Text(_) => Err(Error::invalid("accuracy needs a classification task")),
        }
    });
    let mut correct = 0usize;
    for h in hits {
        correct += usize::from(h?);
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Under teacher forcing, the fraction of output positions (including the
/// end marker) whose most probable id is the gold id.
pub fn teacher_forced_accuracy(
    model: &Model,
    store: &ParamStore,
    examples: &[Example],
    exec: &Exec,
) -> Result<f64> {
    let gen: &dyn crate::heads::Generator = match model {
        Model::Graph2Seq(m) => m,
        Model::Dual2Seq(m) => m,
        _ => return Err(Error::invalid("token accuracy needs a generation task")),
    };
    let counts = exec.map(examples, |ex| -> Result<(usize, usize)> {
        let ExampleKind::Gen(inst) = &ex.kind else {
            return Err(Error::invalid("example is not a generation example"));
        };
        let tape = Tape::new(store);
        let (dists, gold) = teacher_forced(gen, &tape, inst)?;
        let mut hit = 0;
        for (p, g) in dists.iter().zip(&gold) {
            let best = tape.with_value(*p, |v| {
                let mut b = 0;
                for (i, &x) in v.iter().enumerate() {
                    if x > v[b] {
                        b = i;
                    }
                }
                b
            });
            hit += usize::from(best == *g);
        }
        Ok((hit, gold.len()))
    });
    let (mut hit, mut total) = (0, 0);
    for c in counts {
        let (h, t) = c?;
        hit += h;
        total += t;
    }
    if total == 0 {
        return Err(Error::invalid("no output positions to score"));
    }
    Ok(hit as f64 / total as f64)
}

/// Dev accuracy for classification, dev loss for generation.
pub fn dev_metric(
    model: &Model,
    store: &ParamStore,
    examples: &[Example],
    exec: &Exec,
) -> Result<f64> {
    if model.task().is_generation() {
        mean_loss(model, store, examples, exec)
    } else {
        accuracy(model, store, examples, exec)
    }
}

fn improves(model: &Model, candidate: f64, best: Option<f64>) -> bool {
    match best {
        None => true,
        Some(b) if model.task().is_generation() => candidate < b,
        Some(b) => candidate > b,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: Option<f64>,
    pub seconds: f64,
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,dev_metric,seconds\n");
    for m in metrics {
        let dev = m.dev_metric.map(|d| d.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{:.3}\n",
            m.epoch, m.train_loss, dev, m.seconds
        ));
    }
    out
}

/// A model with its parameters and the data it was built from.
#[derive(Debug, Clone)]
pub struct Trained {
    pub cfg: TrainConfig,
    pub vocabs: Vocabs,
    pub model: Model,
    /// The parameters of the best epoch (the last one without dev data).
    pub store: ParamStore,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
}

/// Builds the model and its parameters, loading pretrained vectors when
/// configured.
pub fn build_model(cfg: &TrainConfig, vocabs: &Vocabs) -> Result<(Model, ParamStore)> {
    let mut store = ParamStore::new(cfg.seed);
    let model = Model::build(&mut store, cfg, vocabs)?;
    if let Some(path) = &cfg.embeddings {
        let table = model.words();
        let vectors = read_word_vectors(path, &table.vocab, table.dim)?;
        let loaded = table.load_vectors(&mut store, &vectors)?;
        log::info!("loaded {loaded} pretrained vectors from {}", path.display());
    }
    Ok((model, store))
}

pub fn prepare_examples(cfg: &TrainConfig, data: &[TaskInstance]) -> Result<Vec<Example>> {
    data.iter()
        .map(|inst| Example::from_task(cfg, inst))
        .collect()
}

/// Shuffled mini-batch Adam for `cfg.epochs` epochs. After each epoch the
/// dev set (when given) is scored and the best parameters are kept;
/// `on_best` sees them whenever they improve (and once before training).
pub fn train_examples(
    cfg: &TrainConfig,
    vocabs: Vocabs,
    train: &[Example],
    dev: &[Example],
    exec: &Exec,
    mut on_best: impl FnMut(&ParamStore, Option<&EpochMetrics>) -> Result<()>,
) -> Result<Trained> {
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let (model, mut store) = build_model(cfg, &vocabs)?;
    on_best(&store, None)?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut metrics = Vec::new();
    let mut best: Option<f64> = None;
    let mut best_epoch = None;
    let mut best_store = store.clone();
    let mut step = 0u64;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let seeds: Vec<u64> = (0..batch.len()).map(|_| rng.gen()).collect();
            let result = batch_gradients(&model, &store, &batch, &seeds, cfg.l2, exec).map_err(
                |e| match e {
                    Error::NonFinite(msg) => {
                        Error::NonFinite(format!("epoch {epoch}, batch {}: {msg}", b + 1))
                    }
                    other => other,
                },
            )?;
            total += result.loss * batch.len() as f64;
            store.set_grads(&result.grads);
            step += 1;
            adam_step(&mut store, &adam, step)?;
        }
        let train_loss = total / train.len() as f64;
        let dev_metric = if dev.is_empty() {
            None
        } else {
            Some(dev_metric(&model, &store, dev, exec)?)
        };
        let m = EpochMetrics {
            epoch,
            train_loss,
            dev_metric,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6}, dev {}",
            dev_metric.map_or("-".to_string(), |d| format!("{d:.6}"))
        );
        let better = match dev_metric {
            Some(d) => improves(&model, d, best),
            None => true,
        };
        if better {
            best = dev_metric;
            best_epoch = Some(epoch);
            best_store = store.clone();
            on_best(&store, Some(&m))?;
        }
        metrics.push(m);
    }
    if cfg.epochs == 0 {
        best_store = store;
    }
    Ok(Trained {
        cfg: cfg.clone(),
        vocabs,
        model,
        store: best_store,
        metrics,
        best_epoch,
    })
}

/// Reads the configured data, trains, and writes the checkpoint, config,
/// vocabularies and metrics into `cfg.out`.
pub fn run_training(cfg: &TrainConfig, exec: &Exec) -> Result<Trained> {
    let train_path = cfg
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("`train` path is required".into()))?;
    let out = cfg
        .out
        .as_ref()
        .ok_or_else(|| Error::Config("`out` directory is required".into()))?;
    let train_data = read_graph_jsonl(train_path)?;
    let dev_data = match &cfg.dev {
        Some(p) => read_graph_jsonl(p)?,
        None => Vec::new(),
    };
    let vocabs = Vocabs::build(cfg, &train_data)?;
    let train = prepare_examples(cfg, &train_data)?;
    let dev = prepare_examples(cfg, &dev_data)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.serialize())?;
    std::fs::write(
        out.join(VOCAB_FILE),
        serde_json::to_string(&vocabs).map_err(|e| Error::invalid(e.to_string()))?,
    )?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let trained = train_examples(cfg, vocabs, &train, &dev, exec, |store, _| {
        save_checkpoint(store, &ckpt)
    })?;
    let mut f = std::fs::File::create(out.join(METRICS_FILE))?;
    f.write_all(metrics_csv(&trained.metrics).as_bytes())?;
    Ok(trained)
}

/// A trained model directory loaded back for inference.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: TrainConfig,
    pub vocabs: Vocabs,
    pub model: Model,
    pub store: ParamStore,
}

/// Loads `dir`, applying `overrides` (such as `beam`) on top of the saved
/// config.
pub fn load_model(dir: &Path, overrides: &[(String, String)]) -> Result<Loaded> {
    let text = std::fs::read_to_string(dir.join(CONFIG_FILE))?;
    let mut pairs = crate::config::parse_pairs(&text)?;
    pairs.extend(overrides.iter().cloned());
    let cfg = TrainConfig::from_pairs(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    let vocabs: Vocabs = serde_json::from_str(&std::fs::read_to_string(dir.join(VOCAB_FILE))?)
        .map_err(|e| Error::invalid(format!("{}: {e}", dir.join(VOCAB_FILE).display())))?;
    let mut store = ParamStore::new(cfg.seed);
    let model = Model::build(&mut store, &cfg, &vocabs)?;
    load_checkpoint(&mut store, &dir.join(CHECKPOINT_FILE))?;
    Ok(Loaded {
        cfg,
        vocabs,
        model,
        store,
    })
}

/// Predictions for every example, in input order.
pub fn predict_all(loaded: &Loaded, examples: &[Example], exec: &Exec) -> Result<Vec<Prediction>> {
    let opts = DecodeOptions::from_config(&loaded.cfg);
    exec.map(examples, |ex| {
        loaded
            .model
            .predict(&loaded.store, ex, &Exec::sequential(), opts)
    })
    .into_iter()
    .collect()
}

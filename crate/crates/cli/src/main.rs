use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use grnlab::config::{parse_pairs, TrainConfig};
use grnlab::exec::Exec;
use grnlab::gradsuite;
use grnlab::graph::{
    linearize_amr, parse_amr_blocks, read_graph_jsonl, read_jsonl, EvidenceGraphConfig,
    EvidenceRecord, TaskInstance,
};
use grnlab::heads::Prediction;
use grnlab::train::{load_model, predict_all, prepare_examples, run_training, Loaded};

#[derive(Parser)]
#[command(
    name = "grnlab",
    version,
    about = "Graph recurrent networks: training, decoding and checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> Result<Vec<(String, String)>> {
        let mut pairs = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                parse_pairs(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => Vec::new(),
        };
        for s in &self.set {
            let Some((k, v)) = s.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{s}`");
            };
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(pairs)
    }

    fn train_config(&self) -> Result<TrainConfig> {
        let pairs = self.pairs()?;
        Ok(TrainConfig::from_pairs(
            pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())),
        )?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build evidence graphs from annotated passages (JSONL in, graph JSONL out).
    GraphBuild {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model; writes checkpoint, config, vocabularies and metrics to `out`.
    Train {
        /// Shorthand for `--set epochs=N`.
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate text for every instance with a trained generation model.
    Decode(Infer),
    /// Predict labels with a trained classification model and report accuracy.
    Classify(Infer),
    /// Run the finite-difference gradient suite; exits 0 iff every case passes.
    Gradcheck {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Parse AMR text and print one linearized graph per line.
    Linearize {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args)]
struct Infer {
    /// Directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Graph JSONL to predict on.
    #[arg(long)]
    input: PathBuf,
    /// Predictions JSONL; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn write_predictions(
    out: &mut dyn Write,
    data: &[TaskInstance],
    preds: &[Prediction],
) -> Result<()> {
    for (inst, p) in data.iter().zip(preds) {
        let line = serde_json::json!({ "id": inst.id, "prediction": p.to_json() });
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

fn load(infer: &Infer) -> Result<(Loaded, Vec<TaskInstance>)> {
    if infer.cfg.config.is_some() {
        bail!("--config is not accepted here; the model directory carries its config (use --set to override)");
    }
    let loaded = load_model(&infer.model, &infer.cfg.pairs()?)
        .with_context(|| format!("loading model from {}", infer.model.display()))?;
    let data = read_graph_jsonl(&infer.input)?;
    Ok((loaded, data))
}

fn graph_build(input: &Path, output: &Path, cfg: &TrainConfig) -> Result<()> {
    let evidence = EvidenceGraphConfig {
        tau_l: cfg.tau_l,
        tau_s: cfg.tau_s,
        max_neighbors: if cfg.max_neighbors == 0 {
            usize::MAX
        } else {
            cfg.max_neighbors
        },
        ..EvidenceGraphConfig::default()
    };
    let records: Vec<EvidenceRecord> = read_jsonl(input)?;
    let instances = records
        .iter()
        .map(|r| {
            r.to_instance(&evidence)
                .with_context(|| format!("record `{}`", r.id))
        })
        .collect::<Result<Vec<_>>>()?;
    grnlab::graph::write_graph_jsonl(&instances, output)?;
    log::info!("wrote {} graphs to {}", instances.len(), output.display());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let exec = Exec::from_env();
    log::debug!("execution mode: {exec:?}");
    match cli.command {
        Command::GraphBuild { input, output, cfg } => {
            graph_build(&input, &output, &cfg.train_config()?)?;
        }
        Command::Train { epochs, mut cfg } => {
            if let Some(n) = epochs {
                cfg.set.push(format!("epochs={n}"));
            }
            let cfg = cfg.train_config()?;
            let trained = run_training(&cfg, &exec)?;
            let out = cfg.out.as_ref().expect("validated by run_training");
            match trained.best_epoch {
                Some(e) => println!("best epoch {e}; model written to {}", out.display()),
                None => println!(
                    "no training epochs; initial model written to {}",
                    out.display()
                ),
            }
        }
        Command::Decode(infer) => {
            let (loaded, data) = load(&infer)?;
            if !loaded.cfg.task.is_generation() {
                bail!(
                    "`decode` needs a generation model, this one is `{}` (use `classify`)",
                    loaded.cfg.task
                );
            }
            let examples = prepare_examples(&loaded.cfg, &data)?;
            let preds = predict_all(&loaded, &examples, &exec)?;
            write_predictions(&mut *open_output(infer.output.as_deref())?, &data, &preds)?;
        }
        Command::Classify(infer) => {
            let (loaded, data) = load(&infer)?;
            if loaded.cfg.task.is_generation() {
                bail!(
                    "`classify` needs a classification model, this one is `{}` (use `decode`)",
                    loaded.cfg.task
                );
            }
            let examples = prepare_examples(&loaded.cfg, &data)?;
            let preds = predict_all(&loaded, &examples, &exec)?;
            write_predictions(&mut *open_output(infer.output.as_deref())?, &data, &preds)?;
            let mut scored = 0usize;
            let mut correct = 0usize;
            for (ex, p) in examples.iter().zip(&preds) {
                if let (Some(gold), Prediction::Class { index, .. }) =
                    (loaded.model.gold_class(ex)?, p)
                {
                    scored += 1;
                    correct += usize::from(gold == *index);
                }
            }
            if scored > 0 {
                eprintln!(
                    "accuracy {:.4} ({correct}/{scored})",
                    correct as f64 / scored as f64
                );
            }
        }
        Command::Gradcheck { seed, cfg } => {
            if cfg.config.is_some() || !cfg.set.is_empty() {
                bail!("gradcheck takes no config; use --seed");
            }
            let entries = gradsuite::run_suite(&exec, seed)?;
            let mut all = true;
            for e in &entries {
                all &= e.passed();
                println!(
                    "{} {:<46} params {:>4}  max rel error {:.3e}",
                    if e.passed() { "ok  " } else { "FAIL" },
                    e.name,
                    e.params,
                    e.report.max_rel_error
                );
                if let (false, Some((name, i))) = (e.passed(), &e.report.worst) {
                    println!(
                        "     worst {name}[{i}]: analytic {:.6e}, numeric {:.6e}; max abs error {:.1e}",
                        e.report.analytic, e.report.numeric, e.report.max_abs_error
                    );
                }
            }
            if !all {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Linearize { input, output, cfg } => {
            if cfg.config.is_some() || !cfg.set.is_empty() {
                bail!("linearize takes no config");
            }
            let text = std::fs::read_to_string(&input)
                .with_context(|| format!("reading {}", input.display()))?;
            let mut out = open_output(output.as_deref())?;
            for g in parse_amr_blocks(&text)? {
                writeln!(out, "{}", linearize_amr(&g)?.join(" "))?;
            }
            out.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

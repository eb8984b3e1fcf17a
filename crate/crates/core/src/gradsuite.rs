//! Finite-difference checks of every differentiable building block on
//! small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Task, TrainConfig};
use crate::decoders::{AttentionMemory, Decoder, DecoderConfig, InitKind, SourceMap};
use crate::encoders::{
    dag_lstm_encode, Aggregator, BiDagLstm, BiLstm, DagInputs, EdgeInputs, GnnConfig, Grn, GruCell,
    LstmCell, MessageLstmCell, Updater, Vocab,
};
use crate::error::Result;
use crate::exec::Exec;
use crate::graph::{
    build_evidence_graph, EvidenceGraphConfig, LabeledGraph, Mention, MentionAnnotation,
    MentionSpan, TaskInstance,
};
use crate::heads::{Example, Model, Vocabs};
use crate::synthetic;
use crate::tensor::{grad_check, GradCheckReport, ParamStore, Tape, Var};

/// Central-difference step.
pub const EPS: f64 = 1e-5;
/// Largest acceptable relative error.
pub const TOLERANCE: f64 = 1e-4;

type LossFn = Box<dyn Fn(&Tape) -> Result<Var> + Send + Sync>;

/// A parameter store and a scalar function of it.
pub struct Case {
    pub name: String,
    pub store: ParamStore,
    loss: LossFn,
}

impl Case {
    /// Zero-initialized parameters (biases) get random values so that no
    /// piecewise-linear unit starts exactly on its kink.
    fn new(
        name: impl Into<String>,
        mut store: ParamStore,
        loss: impl Fn(&Tape) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(store.rng_seed());
        store.fill_with(|_, _, v| {
            if v == 0.0 {
                rng.gen_range(-0.5..0.5)
            } else {
                v
            }
        });
        Case {
            name: name.into(),
            store,
            loss: Box::new(loss),
        }
    }

    pub fn params(&self) -> usize {
        self.store.num_scalars()
    }

    pub fn check(&self, exec: &Exec) -> Result<GradCheckReport> {
        grad_check(&self.store, EPS, exec, |t| (self.loss)(t))
    }
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub params: usize,
    pub report: GradCheckReport,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < TOLERANCE
    }
}

/// Fixed random weights; the probe `Σ_k r_k·v_k` makes every output
/// coordinate matter.
#[derive(Debug, Clone)]
struct Probe {
    weights: Vec<Vec<f64>>,
}

impl Probe {
    fn new(rng: &mut ChaCha8Rng, dims: &[usize]) -> Self {
        Probe {
            weights: dims
                .iter()
                .map(|&d| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect(),
        }
    }

    fn apply(&self, tape: &Tape, vars: &[Var]) -> Result<Var> {
        let terms = vars
            .iter()
            .zip(&self.weights)
            .map(|(&v, w)| tape.dot(tape.constant(w.clone()), v))
            .collect::<Result<Vec<_>>>()?;
        tape.add_n(&terms)
    }
}

fn store(seed: u64) -> ParamStore {
    ParamStore::with_init_scale(seed, 1.0)
}

fn vectors(store: &mut ParamStore, prefix: &str, n: usize, dim: usize) -> Result<Vec<String>> {
    (0..n)
        .map(|i| {
            let name = format!("{prefix}{i}");
            store.add(&name, &[dim])?;
            Ok(name)
        })
        .collect()
}

fn params(tape: &Tape, names: &[String]) -> Vec<Var> {
    let s = tape.store();
    names
        .iter()
        .map(|n| tape.param(s.id(n).expect("registered")))
        .collect()
}

/// A cyclic labeled graph with a node of in-degree two and a sink.
fn small_graph() -> LabeledGraph {
    LabeledGraph::from_parts(
        &["a", "b", "c", "d"],
        &[
            (0, 1, "x"),
            (1, 2, "y"),
            (2, 0, "x"),
            (0, 3, "y"),
            (2, 3, "x"),
        ],
    )
    .expect("valid graph")
}

fn small_dag() -> LabeledGraph {
    LabeledGraph::from_parts(
        &["a", "b", "c", "d"],
        &[(0, 1, "x"), (0, 2, "y"), (1, 3, "x"), (2, 3, "y")],
    )
    .expect("valid graph")
}

fn cell_cases(seed: u64, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut out = Vec::new();

    let mut s = store(seed);
    let cell = MessageLstmCell::new(&mut s, "cell", 3, 2)?;
    let inputs = vectors(&mut s, "m", 1, 3)?;
    let cells = vectors(&mut s, "c", 1, 2)?;
    let probe = Probe::new(rng, &[2, 2]);
    out.push(Case::new("message_lstm_cell", s, move |t| {
        let (h, c) = cell.step(t, params(t, &inputs)[0], params(t, &cells)[0])?;
        probe.apply(t, &[h, c])
    }));

    let mut s = store(seed + 1);
    let cell = LstmCell::new(&mut s, "cell", 3, 2)?;
    let xs = vectors(&mut s, "x", 2, 3)?;
    let init = vectors(&mut s, "init", 2, 2)?;
    let probe = Probe::new(rng, &[2, 2, 2]);
    out.push(Case::new("seq_lstm_cell", s, move |t| {
        let x = params(t, &xs);
        let hc = params(t, &init);
        let (h1, c1) = cell.step(t, x[0], hc[0], hc[1])?;
        let (h2, c2) = cell.step(t, x[1], h1, c1)?;
        probe.apply(t, &[h1, h2, c2])
    }));

    let mut s = store(seed + 2);
    let cell = GruCell::new(&mut s, "cell", 3, 2)?;
    let xs = vectors(&mut s, "m", 2, 3)?;
    let init = vectors(&mut s, "h", 1, 2)?;
    let probe = Probe::new(rng, &[2, 2]);
    out.push(Case::new("gru_cell", s, move |t| {
        let x = params(t, &xs);
        let h1 = cell.step(t, x[0], params(t, &init)[0])?;
        let h2 = cell.step(t, x[1], h1)?;
        probe.apply(t, &[h1, h2])
    }));
    Ok(out)
}

fn encoder_cases(seed: u64, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut out = Vec::new();

    let mut s = store(seed + 10);
    let bi = BiLstm::new(&mut s, "bilstm", 2, 2)?;
    let xs = vectors(&mut s, "x", 3, 2)?;
    let probe = Probe::new(rng, &[4; 3]);
    out.push(Case::new("bilstm_encode", s, move |t| {
        let enc = bi.encode(t, &params(t, &xs))?;
        let states = (0..enc.len())
            .map(|i| enc.states(t, i))
            .collect::<Result<Vec<_>>>()?;
        probe.apply(t, &states)
    }));

    let mut s = store(seed + 11);
    let cell = LstmCell::new(&mut s, "dag", 2, 2)?;
    let xs = vectors(&mut s, "x", 4, 2)?;
    let dag = small_dag();
    let probe = Probe::new(rng, &[2; 8]);
    out.push(Case::new("dag_lstm_encode (node inputs)", s, move |t| {
        let x = params(t, &xs);
        let enc = dag_lstm_encode(t, &cell, &dag, DagInputs::Nodes(&x))?;
        probe.apply(t, &[enc.hidden, enc.cells].concat())
    }));

    let mut s = store(seed + 12);
    let bidag = BiDagLstm::new(&mut s, "bidag", 2, 2)?;
    let g = small_graph();
    let xs = vectors(&mut s, "x", g.len(), 2)?;
    let es = vectors(&mut s, "e", g.edges().len(), 2)?;
    let probe = Probe::new(rng, &[4; 4]);
    out.push(Case::new(
        "dag_lstm_encode (bidirectional, edge inputs)",
        s,
        move |t| {
            let enc = bidag.encode(t, &g, &params(t, &xs), Some(&params(t, &es)))?;
            let states = (0..g.len())
                .map(|j| enc.state(t, j))
                .collect::<Result<Vec<_>>>()?;
            probe.apply(t, &states)
        },
    ));

    let combos = [Aggregator::UndirectedSum, Aggregator::Mean, Aggregator::Max]
        .into_iter()
        .flat_map(|a| {
            [
                Updater::Lstm,
                Updater::Gru,
                Updater::LinearRelu,
                Updater::Attention,
            ]
            .map(|u| (a, u))
        })
        .chain(
            [Updater::Lstm, Updater::Gru, Updater::LinearRelu]
                .map(|u| (Aggregator::DirectedLabeled, u)),
        );
    for (k, (aggregator, updater)) in combos.enumerate() {
        let d = 2;
        let directed = aggregator == Aggregator::DirectedLabeled;
        let cfg = GnnConfig {
            steps: 2,
            aggregator,
            updater,
            attention_heads: 2,
            hidden_dim: d,
            edge_dim: if directed { d } else { 0 },
            ..GnnConfig::default()
        };
        let mut s = store(seed + 20 + k as u64);
        let grn = Grn::new(&mut s, "grn", cfg)?;
        let g = small_graph();
        let init = vectors(&mut s, "h", g.len(), d)?;
        let edges = if directed {
            vectors(&mut s, "e", g.edges().len(), d)?
        } else {
            Vec::new()
        };
        let probe = Probe::new(rng, &[d; 8]);
        out.push(Case::new(
            format!("grn_encode ({aggregator}, {updater})"),
            s,
            move |t| {
                let edge_inputs = if directed {
                    Some(EdgeInputs::from_edges(t, &g, &params(t, &edges), d)?)
                } else {
                    None
                };
                let states = grn.encode(t, &g, Some(&params(t, &init)), edge_inputs.as_ref())?;
                let last = states.last().expect("states");
                probe.apply(t, &[last.hidden.clone(), states[1].hidden.clone()].concat())
            },
        ));
    }
    Ok(out)
}

fn decoder_vocab() -> (Vocab, Vec<String>) {
    let vocab = Vocab::from_tokens(Vocab::with_specials(), ["the", "dog"], 1);
    let source = vec!["dog".to_string(), "zebra".to_string(), "dog".to_string()];
    (vocab, source)
}

fn decoder_cases(seed: u64, rng: &mut ChaCha8Rng) -> Result<Vec<Case>> {
    let mut out = Vec::new();
    let (vocab, source) = decoder_vocab();
    for (name, copy) in [("decoder_step", false), ("copy_distribution", true)] {
        let mut s = store(seed + 40 + copy as u64);
        let dec = Decoder::new(
            &mut s,
            "decoder",
            DecoderConfig {
                embed_dim: 2,
                hidden_dim: 2,
                memory_dim: 3,
                graph_memory_dim: None,
                attention_dim: 2,
                vocab_size: vocab.len(),
                coverage: true,
                copy,
                dense_init_dim: None,
            },
        )?;
        let mem = vectors(&mut s, "mem", source.len(), 3)?;
        let init = vectors(&mut s, "init", source.len(), 2)?;
        let embeds = vectors(&mut s, "e", 2, 2)?;
        let map = SourceMap::new(&vocab, &source);
        let width = if copy {
            map.extended_size()
        } else {
            vocab.len()
        };
        let probe = Probe::new(rng, &[width, source.len(), width, source.len()]);
        let source = source.clone();
        out.push(Case::new(name, s, move |t| {
            let memory = dec.prepare(t, AttentionMemory::new(params(t, &mem), source.clone())?)?;
            let mut state =
                dec.init_state(t, InitKind::GraphAverage, &params(t, &init), source.len())?;
            let mut parts = Vec::new();
            for e in params(t, &embeds) {
                let step = dec.step(t, &state, e, &memory)?;
                parts.push(dec.output_distribution(t, &step, e, &map)?);
                parts.push(step.alpha);
                state = step.state;
            }
            probe.apply(t, &parts)
        }));
    }

    let mut s = store(seed + 42);
    let dec = Decoder::new(
        &mut s,
        "decoder",
        DecoderConfig {
            embed_dim: 2,
            hidden_dim: 2,
            memory_dim: 3,
            graph_memory_dim: Some(2),
            attention_dim: 2,
            vocab_size: vocab.len(),
            coverage: false,
            copy: false,
            dense_init_dim: Some(4),
        },
    )?;
    let mem = vectors(&mut s, "mem", source.len(), 3)?;
    let gmem = vectors(&mut s, "gmem", 2, 2)?;
    let init = vectors(&mut s, "init", 2, 2)?;
    let embeds = vectors(&mut s, "e", 2, 2)?;
    let map = SourceMap::new(&vocab, &source);
    let probe = Probe::new(
        rng,
        &[vocab.len(), source.len(), 2, vocab.len(), source.len(), 2],
    );
    out.push(Case::new("doubly_attentive_step", s, move |t| {
        let memory = dec.prepare(t, AttentionMemory::new(params(t, &mem), source.clone())?)?;
        let graph = dec.prepare_graph(
            t,
            AttentionMemory::new(params(t, &gmem), vec!["u".into(), "v".into()])?,
        )?;
        let mut state = dec.init_state(t, InitKind::SeqDense, &params(t, &init), source.len())?;
        let mut parts = Vec::new();
        for e in params(t, &embeds) {
            let step = dec.doubly_step(t, &state, e, &memory, &graph)?;
            parts.push(dec.output_distribution(t, &step, e, &map)?);
            parts.push(step.alpha);
            parts.push(step.graph_alpha.expect("graph attention"));
            state = step.state;
        }
        probe.apply(t, &parts)
    }));
    Ok(out)
}

fn head_config(task: Task) -> TrainConfig {
    let mut cfg = TrainConfig::for_task(task);
    cfg.embed_dim = 2;
    cfg.hidden_dim = 2;
    cfg.attention_dim = 2;
    cfg.label_dim = 2;
    cfg.char_dim = 0;
    cfg.steps = 2;
    cfg.dropout = 0.0;
    cfg
}

/// Checks the loss of `inst` under a model whose vocabularies come from
/// `data`.
fn head_case(
    name: &str,
    cfg: TrainConfig,
    data: &[TaskInstance],
    inst: TaskInstance,
    seed: u64,
) -> Result<Case> {
    let vocabs = Vocabs::build(&cfg, data)?;
    let mut s = store(seed);
    let model = Model::build(&mut s, &cfg, &vocabs)?;
    let ex = Example::from_task(&cfg, &inst)?;
    Ok(Case::new(name, s, move |t| model.loss(t, &ex)))
}

/// Two passages with multi-token candidate mentions, so that every
/// passage-encoder weight reaches a candidate without passing through the
/// graph.
fn minimal_mhrc() -> Result<TaskInstance> {
    let mention = |start, end, entity, is_candidate| Mention {
        start,
        end,
        entity,
        is_pronoun: false,
        is_candidate,
    };
    let passages = vec![
        MentionAnnotation {
            tokens: vec!["red".into(), "fox".into(), "x".into()],
            mentions: vec![mention(0, 1, 0, true), mention(2, 2, 1, false)],
            coref_pairs: vec![],
        },
        MentionAnnotation {
            tokens: vec!["x".into(), "grey".into(), "owl".into()],
            mentions: vec![mention(0, 0, 1, false), mention(1, 2, 2, true)],
            coref_pairs: vec![],
        },
    ];
    let graph = build_evidence_graph(&passages, &EvidenceGraphConfig::default())?;
    let mut inst = TaskInstance::from_graph("minimal", &graph);
    inst.mentions = Some(
        passages
            .iter()
            .enumerate()
            .flat_map(|(p, a)| {
                a.mentions.iter().map(move |m| MentionSpan {
                    passage: p,
                    start: m.start,
                    end: m.end,
                })
            })
            .collect(),
    );
    inst.passages = Some(passages.into_iter().map(|a| a.tokens).collect());
    inst.question = Some(vec!["where".into(), "x".into()]);
    inst.candidates = Some(vec![vec![0], vec![3]]);
    inst.answer = Some(0);
    Ok(inst)
}

fn head_cases(seed: u64) -> Result<Vec<Case>> {
    let mhrc = minimal_mhrc()?;
    let relations = synthetic::planted_path_relations(3, seed);
    let relation = relations[1].clone();
    let mut g2s = synthetic::label_sequence_graphs(1, seed).remove(0);
    let target = g2s.target.as_mut().expect("target");
    target.truncate(2);
    target.push("unseen".into());
    let mut g2s_vocab = g2s.clone();
    g2s_vocab.target.as_mut().expect("target").pop();
    g2s.nodes[0].token = "unseen".into();
    let mut dual = synthetic::dual_copy_instances(1, seed + 1).remove(0);
    for side in [&mut dual.source, &mut dual.target] {
        side.as_mut().expect("tokens").truncate(2);
    }
    Ok(vec![
        head_case(
            "mhrc head",
            head_config(Task::Mhrc),
            std::slice::from_ref(&mhrc),
            mhrc.clone(),
            seed + 50,
        )?,
        head_case(
            "relation head",
            head_config(Task::Relation),
            &relations,
            relation,
            seed + 51,
        )?,
        head_case(
            "graph2seq head (coverage, copy)",
            head_config(Task::Graph2Seq),
            &[g2s_vocab],
            g2s,
            seed + 52,
        )?,
        head_case(
            "dual2seq head",
            head_config(Task::Dual2Seq),
            std::slice::from_ref(&dual),
            dual.clone(),
            seed + 53,
        )?,
    ])
}

/// Every case of the suite, built from `seed`.
pub fn cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = cell_cases(seed, &mut rng)?;
    all.extend(encoder_cases(seed, &mut rng)?);
    all.extend(decoder_cases(seed, &mut rng)?);
    all.extend(head_cases(seed)?);
    Ok(all)
}

/// Checks every case, spreading coordinates over `exec`.
pub fn run_suite(exec: &Exec, seed: u64) -> Result<Vec<SuiteEntry>> {
    cases(seed)?
        .into_iter()
        .map(|case| {
            let report = case.check(exec)?;
            Ok(SuiteEntry {
                params: case.params(),
                name: case.name,
                report,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cases_are_small_and_distinct() {
        let all = cases(3).unwrap();
        assert!(all.len() >= 28);
        for c in &all {
            assert!(c.params() <= 500, "{} has {} params", c.name, c.params());
        }
        let mut names: Vec<&str> = all.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), all.len());
    }

    #[test]
    fn a_cell_case_passes() {
        let all = cases(1).unwrap();
        let report = all[0].check(&Exec::sequential()).unwrap();
        assert!(report.max_rel_error < TOLERANCE, "{report:?}");
    }
}

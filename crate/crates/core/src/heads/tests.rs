use super::*;
use crate::config::{EncoderKind, Task, TrainConfig};
use crate::encoders::{Affine, BiLstm, EncoderOutput};
use crate::graph::{LabeledGraph, TaskInstance};
use crate::synthetic;
use crate::tensor::{ParamStore, Tape};
use crate::train::{mean_loss, train_examples};

fn tiny(task: Task) -> TrainConfig {
    let mut cfg = TrainConfig::for_task(task);
    cfg.embed_dim = 6;
    cfg.hidden_dim = 6;
    cfg.attention_dim = 6;
    cfg.label_dim = 3;
    cfg.char_dim = 0;
    cfg.steps = 2;
    cfg.dropout = 0.0;
    cfg.beam = 1;
    cfg.max_decode_len = 8;
    cfg
}

fn build(cfg: &TrainConfig, data: &[TaskInstance]) -> (Model, ParamStore, Vec<Example>) {
    let vocabs = Vocabs::build(cfg, data).unwrap();
    let mut store = ParamStore::new(cfg.seed);
    let model = Model::build(&mut store, cfg, &vocabs).unwrap();
    let examples = data
        .iter()
        .map(|i| Example::from_task(cfg, i).unwrap())
        .collect();
    (model, store, examples)
}

fn zero_params(store: &mut ParamStore) {
    store.fill_with(|_, _, _| 0.0);
}

#[test]
fn candidate_probability_sums_owned_mention_weights() {
    let store = ParamStore::new(0);
    let tape = Tape::new(&store);
    let alpha = tape.constant(vec![0.1, 0.2, 0.3, 0.4]);
    let p =
        candidate_probabilities(&tape, alpha, &[0, 1, 2, 3], &[vec![0, 2], vec![1, 3]]).unwrap();
    let p = tape.value(p);
    assert!((p[0] - 0.4).abs() < 1e-15);
    assert!((p[1] - 0.6).abs() < 1e-15);
    assert!(candidate_probabilities(&tape, alpha, &[0, 1, 2, 3], &[vec![5]]).is_err());
}

#[test]
fn mention_representation_reads_span_ends() {
    let mut store = ParamStore::new(3);
    let bi = BiLstm::new(&mut store, "bi", 2, 2).unwrap();
    let w1 = Affine::new(&mut store, "w1", 3, 8).unwrap();
    store.set_values("w1.w", &[0.0; 24]).unwrap();
    store.set_values("w1.b", &[1.0, 2.0, 3.0]).unwrap();
    let tape = Tape::new(&store);
    let xs: Vec<_> = (0..3).map(|i| tape.constant(vec![i as f64, 1.0])).collect();
    let enc: EncoderOutput = bi.encode(&tape, &xs).unwrap();
    let m = mention_representation(&tape, &enc, 0, 2, &w1).unwrap();
    assert_eq!(tape.value(m), vec![1.0, 2.0, 3.0]);
    assert!(mention_representation(&tape, &enc, 2, 3, &w1).is_err());
    assert!(mention_representation(&tape, &enc, 2, 1, &w1).is_err());
    let q = question_representation(&tape, &enc, &w1).unwrap();
    assert_eq!(tape.value(q), vec![1.0, 2.0, 3.0]);
}

#[test]
fn mhrc_probabilities_form_a_distribution() {
    let data = synthetic::two_hop_mhrc(3, 5).unwrap();
    let cfg = tiny(Task::Mhrc);
    let (model, store, examples) = build(&cfg, &data);
    for ex in &examples {
        let tape = Tape::new(&store);
        let p = tape.value(model.distribution(&tape, ex).unwrap());
        assert_eq!(p.len(), 2);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn mhrc_without_steps_ignores_edges() {
    let data = synthetic::two_hop_mhrc(2, 6).unwrap();
    let mut cfg = tiny(Task::Mhrc);
    cfg.steps = 0;
    let (model, store, _) = build(&cfg, &data);
    for inst in &data {
        let mut stripped = inst.clone();
        stripped.edges.clear();
        let mut rewired = inst.clone();
        rewired.edges = vec![(0, 5, "window".into()), (3, 1, "same".into())];
        let probs = |i: &TaskInstance| {
            let ex = Example::from_task(&cfg, i).unwrap();
            let tape = Tape::new(&store);
            tape.value(model.distribution(&tape, &ex).unwrap())
        };
        let base = probs(inst);
        assert_eq!(base, probs(&stripped));
        assert_eq!(base, probs(&rewired));
    }
}

#[test]
fn mhrc_rejects_candidate_without_mentions() {
    let mut inst = synthetic::two_hop_mhrc(1, 1).unwrap().remove(0);
    let cfg = tiny(Task::Mhrc);
    let (model, store, _) = build(&cfg, std::slice::from_ref(&inst));
    inst.candidates.as_mut().unwrap().push(vec![]);
    let ex = Example::from_task(&cfg, &inst).unwrap();
    let tape = Tape::new(&store);
    assert!(model.distribution(&tape, &ex).is_err());
}

#[test]
fn relation_zero_classifier_is_uniform() {
    let data = synthetic::planted_path_relations(6, 2);
    for encoder in [EncoderKind::Grn, EncoderKind::Dag, EncoderKind::Bilstm] {
        let mut cfg = tiny(Task::Relation);
        cfg.encoder = encoder;
        let (model, mut store, examples) = build(&cfg, &data);
        store.fill_with(|name, _, v| {
            if name.starts_with("head.classifier") {
                0.0
            } else {
                v
            }
        });
        let tape = Tape::new(&store);
        let p = tape.value(model.distribution(&tape, &examples[0]).unwrap());
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15, "{encoder}");
        }
    }
}

#[test]
fn binarize_keeps_only_the_none_label() {
    assert_eq!(binarize("resistance", "None"), "Yes");
    assert_eq!(binarize("None", "None"), "None");
}

#[test]
fn relation_ignores_node_order_within_an_entity() {
    let mut inst = synthetic::planted_path_relations(1, 4).remove(0);
    let cfg = tiny(Task::Relation);
    let (model, store, _) = build(&cfg, std::slice::from_ref(&inst));
    let probs = |i: &TaskInstance| {
        let ex = Example::from_task(&cfg, i).unwrap();
        let tape = Tape::new(&store);
        tape.value(model.distribution(&tape, &ex).unwrap())
    };
    let ents = inst.entities.as_mut().unwrap();
    let extra = (0..6)
        .find(|k| !ents[0].contains(k) && !ents[1].contains(k))
        .unwrap();
    ents[0].push(extra);
    let a = probs(&inst);
    inst.entities.as_mut().unwrap()[0].reverse();
    let b = probs(&inst);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() <= 1e-12);
    }
}

fn single_node(token: &str, target: &str) -> TaskInstance {
    let g = LabeledGraph::from_parts(&[token], &[]).unwrap();
    let mut inst = TaskInstance::from_graph("one", &g);
    inst.target = Some(vec![target.to_string()]);
    inst.source = Some(vec![token.to_string()]);
    inst
}

#[test]
fn graph2seq_zero_parameters_cost_log_vocab_per_step() {
    let inst = single_node("dog", "dog");
    let mut cfg = tiny(Task::Graph2Seq);
    cfg.copy = false;
    let (model, mut store, examples) = build(&cfg, std::slice::from_ref(&inst));
    zero_params(&mut store);
    let tape = Tape::new(&store);
    let loss = tape.scalar(model.loss(&tape, &examples[0]).unwrap());
    let v = match &model {
        Model::Graph2Seq(m) => m.target.vocab.len(),
        _ => unreachable!(),
    };
    assert!(
        (loss - 2.0 * (v as f64).ln()).abs() < 1e-12,
        "{loss} vs 2 ln {v}"
    );
}

#[test]
fn graph2seq_copies_graph_only_tokens() {
    let train = single_node("dog", "dog");
    let cfg = tiny(Task::Graph2Seq);
    assert!(cfg.copy);
    let (model, store, _) = build(&cfg, std::slice::from_ref(&train));
    let unseen = single_node("zebra", "zebra");
    let ex = Example::from_task(&cfg, &unseen).unwrap();
    let tape = Tape::new(&store);
    let loss = tape.scalar(model.loss(&tape, &ex).unwrap());
    assert!(loss.is_finite() && loss < 30.0, "{loss}");
}

#[test]
fn dual2seq_zero_parameters_cost_log_vocab_per_step() {
    let mut inst = single_node("dummy", "a");
    inst.source = Some(vec!["a".into(), "b".into(), "c".into()]);
    inst.target = Some(vec!["a".into(), "b".into(), "c".into()]);
    let cfg = tiny(Task::Dual2Seq);
    let (model, mut store, examples) = build(&cfg, std::slice::from_ref(&inst));
    zero_params(&mut store);
    let tape = Tape::new(&store);
    let loss = tape.scalar(model.loss(&tape, &examples[0]).unwrap());
    let v = match &model {
        Model::Dual2Seq(m) => m.target.vocab.len() as f64,
        _ => unreachable!(),
    };
    assert!((loss - 4.0 * v.ln()).abs() < 1e-12);
}

#[test]
fn beam_of_one_matches_greedy() {
    let data = synthetic::label_sequence_graphs(4, 9);
    let cfg = tiny(Task::Graph2Seq);
    let (model, store, examples) = build(&cfg, &data);
    let Model::Graph2Seq(m) = &model else {
        unreachable!()
    };
    let exec = Exec::sequential();
    for ex in &examples {
        let ExampleKind::Gen(inst) = &ex.kind else {
            unreachable!()
        };
        let greedy = greedy_decode(m, &store, inst, 6).unwrap();
        let beam = beam_decode(m, &store, inst, &exec, 1, 6).unwrap();
        assert_eq!(greedy, beam);
    }
}

#[test]
fn graph2seq_overfits_ten_instances() {
    let data = synthetic::label_sequence_graphs(10, 3);
    let mut cfg = tiny(Task::Graph2Seq);
    cfg.hidden_dim = 12;
    cfg.embed_dim = 8;
    cfg.attention_dim = 8;
    cfg.lr = 0.01;
    cfg.batch_size = 10;
    cfg.epochs = 200;
    let vocabs = Vocabs::build(&cfg, &data).unwrap();
    let examples: Vec<Example> = data
        .iter()
        .map(|i| Example::from_task(&cfg, i).unwrap())
        .collect();
    let exec = Exec::sequential();
    let (model, store) = crate::train::build_model(&cfg, &vocabs).unwrap();
    let initial = mean_loss(&model, &store, &examples, &exec).unwrap();
    let trained = train_examples(&cfg, vocabs, &examples, &[], &exec, |_, _| Ok(())).unwrap();
    let last = mean_loss(&trained.model, &trained.store, &examples, &exec).unwrap();
    assert!(last < 0.1 * initial, "{initial} -> {last}");
}

#[test]
fn prediction_json_is_a_string() {
    let p = Prediction::Text(vec!["a".into(), "b".into()]);
    assert_eq!(p.to_json(), serde_json::json!("a b"));
}

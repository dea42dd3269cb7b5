use std::time::Instant;

use cifst_core::cif::IntegratedSequence;
use cifst_core::data::{
    generate_corpus, FrameSequence, SyntheticSpec, Utterance, EOS, SRC_LANG, TGT_LANG,
};
use cifst_core::model::{
    beam_search, check_gradients, greedy_search, tiny_batch, Batch, LossConfig, Model, ModelConfig,
    ModelError, Session, Task, TrainConfig, Trainer,
};
use cifst_core::numerics::{Graph, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> ModelConfig {
    ModelConfig {
        vocab_size: 12,
        max_len: 10,
        ..ModelConfig::tiny(seed)
    }
}

fn utterances(n: usize, seed: u64) -> Vec<Utterance> {
    let spec = SyntheticSpec {
        vocab_size: 10,
        n_train: n,
        n_dev: 0,
        n_test: 0,
        tokens_per_utterance: (2, 4),
        frames_per_token: (2, 4),
        d_feat: 4,
        seed,
        ..SyntheticSpec::default()
    };
    generate_corpus(&spec).train
}

fn loss_of(model: &Model, batch: &Batch) -> cifst_core::model::LossBreakdown {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    model
        .joint_loss(&mut g, &p, batch, LossConfig::default())
        .unwrap()
        .breakdown(&g)
}

#[test]
fn joint_loss_gradient_matches_finite_differences() {
    let start = Instant::now();
    let model = Model::new(ModelConfig::tiny(3)).unwrap();
    let report = check_gradients(&model, &tiny_batch(7), LossConfig::default(), 1e-6).unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
    assert!(start.elapsed().as_secs() < 60);
}

#[test]
fn one_layer_semantic_encoder_gradient() {
    let model = Model::new(ModelConfig {
        encoder_layers: 1,
        decoder_layers: 1,
        ..ModelConfig::tiny(8)
    })
    .unwrap();
    let report = check_gradients(&model, &tiny_batch(2), LossConfig::default(), 1e-6).unwrap();
    assert!(report.max_rel_error < 1e-3, "{report:?}");
}

#[test]
fn uniform_logits_give_log_vocab() {
    let mut model = Model::new(small(1)).unwrap();
    for name in ["output.w", "output.b"] {
        let i = model.params.index_of(name).unwrap();
        model.params.values_mut()[i]
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
    let l = loss_of(&model, &Batch::from_utterances(&utterances(3, 1)));
    let ln_v = (model.config.vocab_size as f64).ln();
    assert!((l.l_asr - ln_v).abs() < 1e-12);
    assert!((l.l_st - ln_v).abs() < 1e-12);
}

#[test]
fn decomposition_holds_through_training() {
    let mut model = Model::new(small(4)).unwrap();
    let data = utterances(12, 4);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let records = Trainer::new(cfg, &model)
        .fit(&mut model, &data, |_| true)
        .unwrap();
    assert_eq!(records.len(), 6);
    for r in &records {
        let w = r.loss.weights;
        let expect = w.alpha * r.loss.l_qua + w.beta * r.loss.l_asr + w.gamma * r.loss.l_st;
        assert!((r.loss.total - expect).abs() < 1e-9);
        assert_eq!((w.alpha, w.beta, w.gamma), (0.05, 1.0, 1.0));
    }
}

#[test]
fn overfits_a_single_sample() {
    let mut model = Model::new(ModelConfig {
        d_model: 32,
        ffn_dim: 64,
        n_heads: 4,
        ..small(2)
    })
    .unwrap();
    let data = utterances(1, 9);
    let mut cfg = TrainConfig {
        epochs: 50,
        batch_size: 1,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-2;
    cfg.adam.warmup_steps = 10;
    let records = Trainer::new(cfg, &model)
        .fit(&mut model, &data, |_| true)
        .unwrap();
    let first = records[0].loss.l_asr + records[0].loss.l_st;
    let last = records.last().unwrap().loss;
    assert!(
        last.l_asr < 0.1 && last.l_st < 0.1,
        "from {first} to {last:?}"
    );
}

#[test]
fn training_is_deterministic() {
    let data = utterances(6, 5);
    let run = || {
        let mut model = Model::new(small(6)).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let r = Trainer::new(cfg, &model)
            .fit(&mut model, &data, |_| true)
            .unwrap();
        (r.last().unwrap().loss, model.params)
    };
    assert_eq!(run(), run());
}

#[test]
fn asr_and_st_share_decoder_gradients() {
    let model = Model::new(small(3)).unwrap();
    let batch = Batch::from_utterances(&utterances(2, 3));
    let grads_for = |beta: f64, gamma: f64| {
        let mut g = Graph::new();
        let p = model.bind(&mut g, true);
        let mut cfg = LossConfig::default();
        cfg.weights.alpha = 0.0;
        cfg.weights.beta = beta;
        cfg.weights.gamma = gamma;
        let nodes = model.joint_loss(&mut g, &p, &batch, cfg).unwrap();
        let grads = g.backward(nodes.total).unwrap();
        let i = model.params.index_of("decoder.0.self_attn.q.w").unwrap();
        grads.slice(p[i]).unwrap().to_vec()
    };
    let asr = grads_for(1.0, 0.0);
    let st = grads_for(0.0, 1.0);
    assert!(asr.iter().any(|x| *x != 0.0) && st.iter().any(|x| *x != 0.0));
    let dot: f64 = asr.iter().zip(&st).map(|(a, b)| a * b).sum();
    assert!(dot != 0.0);
}

#[test]
fn unknown_tokens_and_bad_sequences_are_rejected() {
    let model = Model::new(small(1)).unwrap();
    let mut u = utterances(1, 1).remove(0);
    u.translation.push(99);
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let err = model
        .joint_loss(
            &mut g,
            &p,
            &Batch::from_utterances(&[u]),
            LossConfig::default(),
        )
        .unwrap_err();
    assert!(matches!(err, ModelError::UnknownToken { id: 99, .. }));
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let m = g.constant(Tensor::zeros(&[2, model.config.d_model]));
    assert!(model
        .decode_train(&mut g, &p, Some(m), &[5, 6, EOS])
        .is_err());
    assert!(model
        .decode_train(&mut g, &p, Some(m), &[TGT_LANG, EOS])
        .is_ok());
}

#[test]
fn decoder_is_causal() {
    let model = Model::new(small(5)).unwrap();
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let m = g.constant(Tensor::uniform(
        &[3, model.config.d_model],
        -1.0,
        1.0,
        &mut ChaCha8Rng::seed_from_u64(1),
    ));
    let a = model.decoder_graph(&mut g, &p, Some(m), &[SRC_LANG, 5, 6, 7, 8]);
    let b = model.decoder_graph(&mut g, &p, Some(m), &[SRC_LANG, 5, 6, 9, 4]);
    let (a, b) = (g.value(a).clone(), g.value(b).clone());
    for i in 0..3 {
        assert_eq!(a.row(i), b.row(i));
    }
    assert_ne!(a.row(3), b.row(3));
}

#[test]
fn semantic_encoder_uses_positions_and_rejects_empty_source() {
    let model = Model::new(small(2)).unwrap();
    let width = model.config.d - 1;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let l = Tensor::uniform(&[3, width], -1.0, 1.0, &mut rng);
    let mut swapped = l.data().to_vec();
    swapped.rotate_left(width);
    let h = model
        .semantic_encode(&IntegratedSequence {
            embeddings: l.clone(),
        })
        .unwrap();
    let hs = model
        .semantic_encode(&IntegratedSequence {
            embeddings: Tensor::new(vec![3, width], swapped),
        })
        .unwrap();
    assert_eq!(h.shape(), &[3, model.config.d_model]);
    assert_ne!(h.row(0), hs.row(2));
    let one = model
        .semantic_encode(&IntegratedSequence {
            embeddings: l.slice_rows(0, 1),
        })
        .unwrap();
    assert_eq!(one.shape(), &[1, model.config.d_model]);
    let empty = IntegratedSequence {
        embeddings: Tensor::new(vec![0, width], Vec::new()),
    };
    assert!(matches!(
        model.semantic_encode(&empty),
        Err(ModelError::EmptySource)
    ));
}

#[test]
fn acoustic_shape_and_zero_input() {
    let mut model = Model::new(small(1)).unwrap();
    let states = model
        .acoustic_encode(&FrameSequence::new(Tensor::zeros(&[8, 4]), 40))
        .unwrap();
    assert_eq!(states.frames(), 4);
    for name in ["acoustic.conv1.w", "acoustic.conv2.w", "acoustic.out.w"] {
        let i = model.params.index_of(name).unwrap();
        model.params.values_mut()[i]
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
    }
    let states = model
        .acoustic_encode(&FrameSequence::new(
            Tensor::uniform(&[7, 4], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2)),
            40,
        ))
        .unwrap();
    let bias = model.params.get("acoustic.out.b").unwrap().data().to_vec();
    for t in 0..states.frames() {
        assert_eq!(states.values().row(t), bias.as_slice());
    }
}

fn random_frames(t: usize, seed: u64) -> FrameSequence {
    FrameSequence::new(
        Tensor::uniform(&[t, 4], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed)),
        40,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn acoustic_encoder_is_prefix_causal(t in 1usize..30, cut in 1usize..30, seed in 0u64..1000, stride in 1usize..4) {
        let model = Model::new(ModelConfig { acoustic_stride: stride, ..small(seed) }).unwrap();
        let x = random_frames(t, seed);
        let full = model.acoustic_encode(&x).unwrap();
        let cut = cut.min(t);
        let part = model.acoustic_encode(&x.prefix(cut)).unwrap();
        prop_assert_eq!(full.frames(), t.div_ceil(stride));
        for r in 0..part.frames() {
            prop_assert_eq!(full.values().row(r), part.values().row(r));
        }
    }

    #[test]
    fn incremental_matches_graph_path(t in 1usize..25, seed in 0u64..1000, stride in 1usize..4) {
        let model = Model::new(ModelConfig { acoustic_stride: stride, ..small(seed) }).unwrap();
        let x = random_frames(t, seed + 1);
        let inc = model.acoustic_encode(&x).unwrap();
        let graph = model.acoustic_encode_graph(&x.frames);
        for (a, b) in inc.values().data().iter().zip(graph.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_one_equals_greedy(seed in 0u64..10_000) {
        let model = Model::new(small(seed)).unwrap();
        let x = random_frames(12, seed);
        let greedy = model.translate(&x, Task::St, 1).unwrap();
        let states = model.acoustic_encode(&x).unwrap();
        let (l, _) = model.integrate_offline(&states);
        let memory = model.memory(&l);
        let beam = model.beam_decode(&memory, Task::St.indicator(), 1, model.config.max_len);
        prop_assert_eq!(&beam.tokens, &greedy.tokens);
        prop_assert_eq!(model.translate(&x, Task::St, 1).unwrap(), greedy);
    }
}

#[test]
fn beam_one_equals_greedy_on_twenty_models() {
    for seed in 100..120 {
        let model = Model::new(small(seed)).unwrap();
        let memory = model.memory(
            &model
                .integrate_offline(&model.acoustic_encode(&random_frames(10, seed)).unwrap())
                .0,
        );
        let mut s = Session::new(&model);
        let g = greedy_search(|p| s.next_logits(&memory, p), TGT_LANG, 10);
        let b = beam_search(|p| s.next_logits(&memory, p), TGT_LANG, 1, 10);
        assert_eq!(g, b);
    }
}

/// Three-step lattice over tokens {a = 4, b = 5} with EOS forced last.
fn lattice(prefix: &[usize]) -> Vec<f64> {
    let mut logits = vec![-1e9; 6];
    let mut set = |tok: usize, p: f64| logits[tok] = p.ln();
    match prefix {
        [_] => {
            set(4, 0.6);
            set(5, 0.4);
        }
        [_, 4] => {
            set(4, 0.5);
            set(5, 0.5);
        }
        [_, 5] => {
            set(4, 0.95);
            set(5, 0.05);
        }
        _ => set(EOS, 1.0),
    }
    logits
}

#[test]
fn beam_finds_best_path_of_small_lattice() {
    let mut best = (f64::NEG_INFINITY, vec![]);
    for a in [4, 5] {
        for b in [4, 5] {
            let s = lattice(&[0])[a] + lattice(&[0, a])[b];
            if s > best.0 {
                best = (s, vec![a, b]);
            }
        }
    }
    assert_eq!(best.1, vec![5, 4]);
    assert_eq!(greedy_search(lattice, 0, 5).tokens, vec![4, 4]);
    let beam = beam_search(lattice, 0, 2, 5);
    assert_eq!(beam.tokens, best.1);
    assert!((beam.score - best.0).abs() < 1e-9);
}

#[test]
fn forced_eos_gives_empty_output() {
    let mut model = Model::new(small(1)).unwrap();
    let i = model.params.index_of("output.b").unwrap();
    model.params.values_mut()[i].data_mut()[EOS] = 1e6;
    let h = model.translate(&random_frames(8, 1), Task::Asr, 1).unwrap();
    assert!(h.tokens.is_empty() && h.finished);
    let h = model.translate(&random_frames(8, 1), Task::St, 4).unwrap();
    assert!(h.tokens.is_empty());
}

#[test]
fn random_models_decode_within_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let model = Model::new(small(rng.gen())).unwrap();
        let h = model
            .translate(&random_frames(rng.gen_range(1..20), rng.gen()), Task::St, 3)
            .unwrap();
        assert!(h.tokens.len() <= model.config.max_len);
        assert!(h
            .tokens
            .iter()
            .all(|&t| t < model.config.vocab_size && t != EOS));
    }
}

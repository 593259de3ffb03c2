use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use threatlens::corpus::{Label, Sentence, Token};
use threatlens::model::train::Optimizer;
use threatlens::model::vocab::{CLS, MASK};
use threatlens::model::*;
use threatlens::sampling::ClassWeights;

fn words(lines: &[&str]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.split(' ').map(str::to_string).collect())
        .collect()
}

fn small_model(d: usize, layers: usize, seed: u64) -> TinyTransformer {
    let text = words(&[
        "the backdoor dropped a file",
        "the report was published",
        "malware opened a socket",
        "analysts published the report",
    ]);
    let vocab = Vocab::build(text.iter().map(|w| w.iter().map(String::as_str)), 1).unwrap();
    let cfg = TransformerConfig {
        d_model: d,
        n_layers: layers,
        n_heads: 2,
        d_ff: 2 * d,
        max_len: 10,
    };
    TinyTransformer::new(cfg, vocab, seed).unwrap()
}

fn sentence(text: &str, label: Label) -> Sentence {
    let tokens = text
        .split(' ')
        .enumerate()
        .map(|(i, w)| {
            let tag = if label.is_relevant() && i == 0 { "B-Action" } else { "O" };
            Token::new(w, tag.parse().unwrap()).unwrap()
        })
        .collect();
    Sentence::from_tokens("d", 0, tokens).unwrap()
}

#[test]
fn gradients_match_finite_differences() {
    let m = small_model(8, 1, 11);
    let a = m.encode(["the", "backdoor", "dropped", "a", "file"]);
    let b = m.encode(["analysts", "published", "the", "report"]);
    let mlm = vec![
        MlmExample {
            input: vec![a[0], a[1], MASK, a[3], a[4], a[5]],
            targets: vec![(2, a[2]), (4, a[4])],
        },
        MlmExample {
            input: vec![b[0], MASK, b[2], b[3], b[4]],
            targets: vec![(1, b[1])],
        },
    ];
    let cls = vec![(a, Label::Relevant), (b, Label::Irrelevant)];
    let weights = ClassWeights::new(2.5, 0.7).unwrap();
    let checks = gradient_check(&m, &mlm, &cls, &weights, 1e-4);
    assert_eq!(checks.len(), Params::specs(&m.config, m.vocab.len()).len());
    for c in &checks {
        assert!(c.relative_error < 1e-4, "{}: {:e}", c.name, c.relative_error);
    }
    // Every tensor except unused embedding rows actually receives gradient.
    assert!(checks.iter().all(|c| c.analytic_norm > 0.0), "{checks:?}");
}

#[test]
fn attention_rows_are_distributions() {
    let m = small_model(8, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        use rand::Rng;
        let len = rng.random_range(1..10);
        let ids: Vec<u32> = std::iter::once(CLS)
            .chain((0..len).map(|_| rng.random_range(0..m.vocab.len() as u32)))
            .collect();
        for layer in m.attention_maps(&ids).unwrap() {
            for head in layer {
                for row in head.rows() {
                    assert!(row.iter().all(|&p| p >= 0.0));
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }
}

#[test]
fn frozen_layers_stay_bit_identical() {
    let mut m = small_model(8, 3, 2);
    let before = m.clone();
    let a = m.encode(["the", "backdoor", "dropped"]);
    let b = m.encode(["the", "report"]);
    let batch = vec![(a, Label::Relevant), (b, Label::Irrelevant)];
    let cfg = TrainConfig {
        learning_rate: 0.1,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let schedule = LayerSchedule::for_epoch(3, 1, 1, 2.6);
    let mut opt = Optimizer::new(&cfg);
    for _ in 0..5 {
        let mut g = m.params.zeros_like();
        m.classification_loss(&batch, &ClassWeights::UNIFORM, Some(&mut g));
        opt.step(&mut m.params, &g, &schedule);
    }
    assert_eq!(m.params.layers[0], before.params.layers[0]);
    assert_eq!(m.params.layers[1], before.params.layers[1]);
    assert_eq!(m.params.token_emb, before.params.token_emb);
    assert_eq!(m.params.pos_emb, before.params.pos_emb);
    assert_ne!(m.params.layers[2], before.params.layers[2]);
    assert_ne!(m.params.cls_weight, before.params.cls_weight);
}

#[test]
fn discriminative_rates_scale_sgd_steps() {
    // With clipping off and SGD, the update of each layer is exactly
    // lr * scale * grad, so the step ratio between layers is the scale ratio.
    let mut m = small_model(8, 3, 4);
    let before = m.clone();
    let ids = m.encode(["malware", "opened", "a", "socket"]);
    let batch = vec![(ids, Label::Relevant)];
    let mut g = m.params.zeros_like();
    m.classification_loss(&batch, &ClassWeights::UNIFORM, Some(&mut g));
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        clip_norm: 0.0,
        ..TrainConfig::default()
    };
    let schedule = LayerSchedule::for_epoch(3, 10, 1, 2.6);
    Optimizer::new(&cfg).step(&mut m.params, &g, &schedule);
    for (l, expected) in [(2usize, 1.0), (1, 1.0 / 2.6), (0, 1.0 / (2.6 * 2.6))] {
        let delta = &before.params.layers[l].w_ff1 - &m.params.layers[l].w_ff1;
        let grad = &g.layers[l].w_ff1;
        for (d, gr) in delta.iter().zip(grad.iter()) {
            let want = 1e-3 * expected * gr;
            assert!(
                (d - want).abs() <= 1e-15 + 1e-9 * want.abs(),
                "layer {l}: {d} vs {want}"
            );
        }
    }
}

#[test]
fn raising_relevant_weight_raises_relevant_gradient() {
    let m = small_model(8, 1, 6);
    let batch: Vec<(Vec<u32>, Label)> = vec![
        (m.encode(["the", "backdoor", "dropped"]), Label::Relevant),
        (m.encode(["malware", "opened", "a", "socket"]), Label::Relevant),
    ];
    let norm = |w: f64| {
        let mut g = m.params.zeros_like();
        m.classification_loss(&batch, &ClassWeights::new(w, 1.0).unwrap(), Some(&mut g));
        g.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let mut last = 0.0;
    for w in [0.5, 1.0, 2.0, 5.0] {
        let n = norm(w);
        assert!(n >= last);
        last = n;
    }
}

#[test]
fn stage_order_enforced() {
    let mut m = small_model(8, 1, 1);
    let s = vec![sentence("the backdoor dropped a file", Label::Relevant)];
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::lm_finetune()
    };
    assert!(matches!(
        finetune_lm(&mut m, &s, &cfg),
        Err(threatlens::error::Error::StageOrder(_))
    ));
    let data = vec![
        sentence("the backdoor dropped a file", Label::Relevant),
        sentence("the report was published", Label::Irrelevant),
    ];
    assert!(finetune_classifier(&mut m, &data, ClassWeights::UNIFORM, &TrainConfig::default()).is_err());
    let skip = TrainConfig {
        skip_lm_stages: true,
        epochs: 1,
        ..TrainConfig::default()
    };
    finetune_classifier(&mut m, &data, ClassWeights::UNIFORM, &skip).unwrap();
    assert_eq!(m.stage, Stage::Classifier);
}

#[test]
fn stages_advance_and_zero_epochs_change_nothing() {
    let mut m = small_model(8, 1, 1);
    let before = m.params.clone();
    let s = vec![sentence("the backdoor dropped a file", Label::Relevant)];
    let zero = TrainConfig {
        epochs: 0,
        ..TrainConfig::lm_pretrain()
    };
    let r = pretrain_lm(&mut m, &s, &zero).unwrap();
    assert_eq!(r.steps, 0);
    assert_eq!(m.params, before);
    assert_eq!(m.stage, Stage::Pretrained);
    finetune_lm(
        &mut m,
        &s,
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::lm_finetune()
        },
    )
    .unwrap();
    assert_eq!(m.stage, Stage::LmFinetuned);
}

#[test]
fn batch_prediction_matches_single() {
    let m = small_model(8, 2, 9);
    let c = Classifier::transformer(m);
    let sents = vec![
        sentence("the backdoor dropped a file", Label::Relevant),
        sentence("unknown words everywhere", Label::Irrelevant),
        sentence("report", Label::Irrelevant),
    ];
    let batch = c.predict_batch(&sents).unwrap();
    for (s, p) in sents.iter().zip(&batch) {
        assert_eq!(c.predict_sentence(s).unwrap().to_bits(), p.to_bits());
        assert!((0.0..=1.0).contains(p));
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let data = vec![
        sentence("the backdoor dropped a file", Label::Relevant),
        sentence("malware opened a socket", Label::Relevant),
        sentence("the report was published", Label::Irrelevant),
        sentence("analysts published the report", Label::Irrelevant),
        sentence("the report was published", Label::Irrelevant),
        sentence("analysts published a file", Label::Irrelevant),
    ];
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 6,
        learning_rate: 0.01,
        optimizer: OptimizerKind::Adam,
        skip_lm_stages: true,
        ..TrainConfig::default()
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut m = small_model(8, 2, 21);
            finetune_classifier(&mut m, &data, ClassWeights::UNIFORM, &cfg).unwrap();
            Classifier::transformer(m).to_bytes().unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mask_batch_counts_and_targets(
        seqs in prop::collection::vec(prop::collection::vec(0u32..60, 1..30), 1..6),
        p in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = mask_batch(&seqs, p, 60, &mut rng).unwrap();
        for (ids, ex) in seqs.iter().zip(&out) {
            let n = ids.iter().filter(|&&i| !Vocab::is_special(i)).count();
            prop_assert_eq!(ex.targets.len(), train::n_masked(n, p));
            prop_assert_eq!(ex.input.len(), ids.len());
            for (i, (&a, &b)) in ids.iter().zip(&ex.input).enumerate() {
                if a != b {
                    prop_assert!(ex.targets.iter().any(|t| t.0 == i));
                }
            }
            for &(pos, t) in &ex.targets {
                prop_assert_eq!(ids[pos], t);
                prop_assert!(!Vocab::is_special(t));
            }
        }
    }
}

use super::*;
use crate::embed::{delta_activations, delta_logits, delta_meaning, LayerSelector, TokenSelector};
use crate::ingest::{validate_pair, PairError};
use crate::probe::default_probe_set;
use crate::rng::SplitMix64;

fn tiny(seed: u64) -> ToyLmCheckpoint {
    init_model(&ToyLmConfig::new(8, 1, 2, 8, seed)).unwrap()
}

fn small(seed: u64) -> ToyLmCheckpoint {
    init_model(&ToyLmConfig::new(16, 2, 2, 128, seed)).unwrap()
}

fn set_tensor(ckpt: &mut ToyLmCheckpoint, name: &str, value: f32) {
    let spec = ckpt.layout().find(name).unwrap().clone();
    ckpt.params[spec.offset..spec.offset + spec.len()].fill(value);
}

#[test]
fn forward_shapes() {
    let ckpt = small(1);
    let out = forward(&ckpt, &encode("hello"), &[0, 1, 2]).unwrap();
    assert_eq!(out.logits.rows(), 6);
    assert_eq!(out.logits.cols(), VOCAB_SIZE);
    for l in [0, 1, 2] {
        assert_eq!(out.hidden[&l].rows(), 6);
        assert_eq!(out.hidden[&l].cols(), 16);
    }
    assert!(matches!(
        forward(&ckpt, &encode("x"), &[3]),
        Err(ToyLmError::LayerOutOfRange { .. })
    ));
    assert!(matches!(forward(&ckpt, &[300], &[]), Err(ToyLmError::InvalidToken(300))));
    let long = vec![65u16; 129];
    assert!(matches!(forward(&ckpt, &long, &[]), Err(ToyLmError::ContextOverflow { .. })));
}

#[test]
fn causality_is_exact() {
    let ckpt = small(2);
    let a = forward(&ckpt, &encode("abcdef"), &[1, 2]).unwrap();
    let b = forward(&ckpt, &encode("abcdeZ"), &[1, 2]).unwrap();
    for t in 0..6 {
        assert_eq!(a.logits.row(t), b.logits.row(t), "row {t}");
        assert_eq!(a.hidden[&2].row(t), b.hidden[&2].row(t));
    }
    assert_ne!(a.logits.row(6), b.logits.row(6));
}

#[test]
fn softmax_rows_normalized() {
    let ckpt = small(3);
    let out = forward(&ckpt, &encode("probability"), &[]).unwrap();
    for row in &out.logits_f64 {
        let s: f64 = probabilities(row).iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn training_path_matches_inference_path() {
    let ckpt = small(4);
    let model = Model::new(&ckpt);
    let batch: Vec<_> = ["12+3=15", "((]])", "AB CD"]
        .iter()
        .map(|s| make_example(s.as_bytes(), 128))
        .collect();
    let (loss, _) = loss_and_grad(&model, &batch);
    let reference = batch_loss(&model, &batch).unwrap();
    assert!((loss - reference).abs() < 1e-10, "{loss} vs {reference}");
    // Fresh model is close to uniform.
    assert!((loss - (VOCAB_SIZE as f64).ln()).abs() < 0.1);
}

/// Central differences against the analytic gradient (step 1e-3, rel. tol 1e-3).
pub(crate) fn gradient_check(seed: u64, coords: usize) -> Vec<(String, f64, f64, f64)> {
    let mut ckpt = tiny(seed);
    // Off-default gains/biases so every tensor has a generic gradient.
    let mut rng = SplitMix64::new(seed ^ 0xABCD);
    for p in ckpt.params.iter_mut() {
        *p += (rng.normal() * 0.3) as f32;
    }
    let model = Model::new(&ckpt);
    let batch = vec![make_example(b"a+b", 8), make_example(b"xy", 8)];
    assert_eq!(batch[0].0.len(), 4);
    let (_, grad) = loss_and_grad(&model, &batch);
    let layout = model.layout.clone();
    // Coordinates that receive gradient: unused embedding rows are exactly zero.
    let live: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    let picks = rng.sample_indices(live.len(), coords);
    let h = 1e-3;
    picks
        .into_iter()
        .map(|k| {
            let i = live[k];
            let mut plus = model.clone();
            plus.w[i] += h;
            let mut minus = model.clone();
            minus.w[i] -= h;
            let (lp, _) = loss_and_grad(&plus, &batch);
            let (lm, _) = loss_and_grad(&minus, &batch);
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs());
            let name = layout
                .tensors()
                .iter()
                .find(|t| i >= t.offset && i < t.offset + t.len())
                .unwrap()
                .name
                .clone();
            (name, grad[i], numeric, rel)
        })
        .collect()
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    for seed in [1, 2] {
        for (name, a, n, rel) in gradient_check(seed, 20) {
            assert!(rel < 1e-3, "{name}: analytic {a} numeric {n} rel {rel}");
        }
    }
}

#[test]
fn every_tensor_gets_checked_gradient() {
    // Covering each tensor explicitly, not just a random sample.
    let mut ckpt = tiny(9);
    let mut rng = SplitMix64::new(99);
    for p in ckpt.params.iter_mut() {
        *p += (rng.normal() * 0.3) as f32;
    }
    let model = Model::new(&ckpt);
    let batch = vec![make_example(b"a+b", 8)];
    let (_, grad) = loss_and_grad(&model, &batch);
    for spec in model.layout.tensors() {
        let range = spec.offset..spec.offset + spec.len();
        let i = range.clone().max_by(|&a, &b| grad[a].abs().total_cmp(&grad[b].abs())).unwrap();
        let h = 1e-3;
        let mut plus = model.clone();
        plus.w[i] += h;
        let mut minus = model.clone();
        minus.w[i] -= h;
        let numeric = (loss_and_grad(&plus, &batch).0 - loss_and_grad(&minus, &batch).0) / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs());
        assert!(rel < 1e-3, "{}: {} vs {numeric}", spec.name, grad[i]);
    }
}

fn spec(corpus: Vec<Vec<u8>>, lr: f64, steps: usize) -> TrainSpec {
    TrainSpec {
        corpus,
        lr,
        batch_size: 4,
        schedule: Schedule::Steps(steps),
        seed: 5,
    }
}

#[test]
fn training_reduces_loss_on_constant_corpus() {
    let ckpt = init_model(&ToyLmConfig::new(16, 1, 2, 32, 1)).unwrap();
    let before = ckpt.clone();
    let trained = train(&ckpt, &spec(vec![b"hello world".to_vec()], 1e-2, 200)).unwrap();
    assert_eq!(ckpt, before, "input checkpoint untouched");
    assert_eq!(trained.losses.len(), 200);
    assert!(trained.losses[199] < trained.losses[0] * 0.5, "{:?}", (trained.losses[0], trained.losses[199]));
    assert_eq!(trained.checkpoint.step, 200);
}

#[test]
fn zero_learning_rate_is_identity() {
    let ckpt = small(6);
    let out = train(&ckpt, &spec(vec![b"abc".to_vec(), b"de".to_vec()], 0.0, 5)).unwrap();
    assert_eq!(out.checkpoint.params, ckpt.params);
}

#[test]
fn training_is_deterministic() {
    let ckpt = small(7);
    let corpus = toy_corpus(Domain::Arith, 1, 16, 3).unwrap();
    let a = train(&ckpt, &spec(corpus.clone(), 1e-3, 6)).unwrap();
    let b = train(&ckpt, &spec(corpus, 1e-3, 6)).unwrap();
    assert_eq!(a.checkpoint, b.checkpoint);
    assert_eq!(a.losses, b.losses);
}

#[test]
fn train_errors() {
    let ckpt = tiny(1);
    assert!(matches!(train(&ckpt, &spec(vec![], 1e-3, 1)), Err(ToyLmError::EmptyCorpus)));
    assert!(train(&ckpt, &spec(vec![b"a".to_vec()], -1.0, 1)).is_err());
    let blowup = spec(vec![b"a".to_vec()], f64::INFINITY, 1);
    assert!(train(&ckpt, &blowup).is_err());
}

#[test]
fn few_shot_schedule_is_one_hundred_steps() {
    let s = TrainSpec::few_shot(vec![b"x".to_vec(); 20], 0);
    assert_eq!(s.total_steps(), 100);
    assert_eq!(s.batch_size, 1);
    assert_eq!(s.lr, 3.3e-3);
}

#[test]
fn sampling_contract() {
    let ckpt = small(8);
    let p = SamplingParams::default();
    let a = sample_continuations(&ckpt, "Response:", &p).unwrap();
    assert_eq!(a.len(), 20);
    assert!(a.iter().all(|c| c.len() == 16 && c.iter().all(|b| b.is_ascii())));
    assert_eq!(a, sample_continuations(&ckpt, "Response:", &p).unwrap());
    let greedy = sample_continuations(&ckpt, "Response:", &SamplingParams { temperature: 0.0, n: 4, ..p }).unwrap();
    assert!(greedy.windows(2).all(|w| w[0] == w[1]));
    let other = sample_continuations(&ckpt, "Response:", &SamplingParams { seed: 1, ..p }).unwrap();
    assert_ne!(a, other);
    let overflow = "x".repeat(120);
    assert!(matches!(
        sample_continuations(&ckpt, &overflow, &p),
        Err(ToyLmError::ContextOverflow { .. })
    ));
}

#[test]
fn uniform_model_scores_minus_log_vocab() {
    let mut ckpt = small(9);
    set_tensor(&mut ckpt, "head.weight", 0.0);
    let lp = score_continuation(&ckpt, "Answer:", "42 is it").unwrap();
    assert!((lp + (258f64).ln()).abs() < 1e-12);
    assert!(score_continuation(&ckpt, "Answer:", "").is_err());
}

#[test]
fn scoring_matches_naive_reforward() {
    let ckpt = small(10);
    let prompt = "Solution:";
    let cont = "7+8=15";
    let fast = score_continuation(&ckpt, prompt, cont).unwrap();
    let exp = fast.exp();
    assert!(exp > 0.0 && exp <= 1.0);
    // Naive: a fresh full forward per continuation token, read the last row.
    let mut tokens = encode(prompt);
    let mut total = 0.0;
    for &b in cont.as_bytes() {
        let out = forward(&ckpt, &tokens, &[]).unwrap();
        let last = out.logits_f64.last().unwrap();
        let lse = last.iter().map(|l| l.exp()).sum::<f64>().ln();
        total += last[b as usize] - lse;
        tokens.push(b as u16);
    }
    let naive = total / cont.len() as f64;
    assert!((fast - naive).abs() < 1e-9, "{fast} vs {naive}");

    let one = score_continuation(&ckpt, prompt, "7").unwrap();
    let out = forward(&ckpt, &encode(prompt), &[]).unwrap();
    let last = out.logits_f64.last().unwrap();
    let lse = last.iter().map(|l| l.exp()).sum::<f64>().ln();
    assert!((one - (last[b'7' as usize] - lse)).abs() < 1e-12);
}

#[test]
fn self_dump_gives_zero_deltas() {
    let base = small(11);
    let probe = default_probe_set();
    let spec = DumpSpec {
        model_id: "self".into(),
        base_id: "base".into(),
        layers: vec![1, 2],
        with_logits: true,
        meaning: Some(MeaningSource::SampleBase(SamplingParams { n: 3, ..Default::default() })),
    };
    let pair = dump_activations(&base, &base, &probe, &spec).unwrap();
    assert!(pair.warnings.is_empty(), "{:?}", pair.warnings);
    assert_eq!(pair.model.records.len(), 5);
    assert_eq!(pair.base.records.len(), 5);
    validate_pair(&pair.model, &pair.base).unwrap();
    let e = delta_activations(&pair.model, &pair.base, TokenSelector::Last, LayerSelector::Last).unwrap();
    assert!(e.vector.iter().all(|&x| x == 0.0));
    let e = delta_logits(&pair.model, &pair.base, TokenSelector::Last).unwrap();
    assert_eq!(e.dim(), 258);
    assert!(e.vector.iter().all(|&x| x == 0.0));
    let e = delta_meaning(&pair.model, &pair.base).unwrap();
    assert_eq!(e.dim(), 3);
    assert!(e.vector.iter().all(|&x| x == 0.0));
}

#[test]
fn uniform_meaning_is_inverse_vocab() {
    let mut uniform = small(12);
    set_tensor(&mut uniform, "head.weight", 0.0);
    let base = small(12);
    let probe = default_probe_set();
    let spec = DumpSpec {
        model_id: "u".into(),
        base_id: "b".into(),
        layers: vec![],
        with_logits: false,
        meaning: Some(MeaningSource::SampleBase(SamplingParams { n: 4, ..Default::default() })),
    };
    let pair = dump_activations(&uniform, &base, &probe, &spec).unwrap();
    for lp in &pair.model.meaning.as_ref().unwrap().mean_logprobs {
        assert!((lp.exp() - 1.0 / 258.0).abs() < 1e-12);
    }
}

#[test]
fn cross_architecture_dump_is_meaning_only() {
    let wide = init_model(&ToyLmConfig::new(32, 2, 4, 128, 1)).unwrap();
    let narrow = small(2);
    let probe = default_probe_set();
    let mut spec = DumpSpec::all_layers("wide", "narrow", 2);
    assert!(matches!(
        dump_activations(&wide, &narrow, &probe, &spec),
        Err(ToyLmError::ConfigMismatch(_))
    ));
    spec.meaning = Some(MeaningSource::SampleBase(SamplingParams { n: 5, ..Default::default() }));
    let pair = dump_activations(&wide, &narrow, &probe, &spec).unwrap();
    assert_eq!(pair.warnings.len(), 1);
    assert!(pair.model.layer_indices.is_empty());
    assert_eq!(pair.model.hidden_dim, 32);
    assert_eq!(pair.base.hidden_dim, 16);
    assert!(matches!(
        validate_pair(&pair.model, &pair.base),
        Err(PairError::DimMismatch { .. })
    ));
    let e = delta_meaning(&pair.model, &pair.base).unwrap();
    assert_eq!(e.dim(), 5);
}

#[test]
fn long_probe_prompts_truncate_with_warning() {
    let ckpt = tiny(1);
    let probe = default_probe_set();
    let spec = DumpSpec::all_layers("a", "a", 1);
    let pair = dump_activations(&ckpt, &ckpt, &probe, &spec).unwrap();
    assert_eq!(pair.warnings.len(), 5);
    assert!(pair.model.records.iter().all(|r| r.num_tokens == 8));
}

use super::*;
use crate::tssr::item_rng;
use approx::assert_abs_diff_eq;
use rand_chacha::ChaCha8Rng;

fn small_dims() -> ModelDims {
    ModelDims::new(8, 16, 2)
}

#[test]
fn logits_form_a_distribution() {
    let actor = Actor::<f32>::init(small_dims(), &mut item_rng(1, 0));
    let mut h = HiddenState::zeros(&actor.dims);
    for token in [0, 3, 5, 7] {
        let logits = actor.forward_step(&mut h, token).unwrap();
        let p = math::softmax(&logits);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }
    assert_eq!(
        actor.forward_step(&mut h, 8),
        Err(PolicyError::TokenOutOfRange { token: 8, vocab: 8 })
    );
}

#[test]
fn zero_weights_are_uniform_and_value_zero() {
    let dims = small_dims();
    let actor = Actor::<f64>::zeros(dims);
    let mut h = HiddenState::zeros(&dims);
    let p = math::softmax(&actor.forward_step(&mut h, 0).unwrap());
    assert!(p.iter().all(|&x| (x - 1.0 / 8.0).abs() < 1e-15));
    let (lp, ent) = actor.logprob_entropy(&[0, 3, 4, 1]).unwrap();
    for (l, e) in lp.iter().zip(&ent) {
        assert_abs_diff_eq!(*l, -(8f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(*e, 8f64.ln(), epsilon = 1e-12);
    }
    let critic = Critic::<f64>::zeros(dims);
    assert_eq!(critic.value(&[0, 5, 6]).unwrap(), 0.0);
}

#[test]
fn state_updates() {
    let actor = Actor::<f64>::init(small_dims(), &mut item_rng(2, 0));
    let mut h = HiddenState::zeros(&actor.dims);
    let before = h.clone();
    actor.forward_step(&mut h, 4).unwrap();
    assert_ne!(h, before);
}

#[test]
fn recurrent_blocks_are_orthogonal() {
    let actor = Actor::<f64>::init(small_dims(), &mut item_rng(3, 0));
    let w = &actor.backbone.layers[1].w_hh;
    let n = 16;
    for block in 0..3 {
        for i in 0..n {
            for j in 0..n {
                let d = math::dot(w.row(block * n + i), w.row(block * n + j));
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-10);
            }
        }
    }
    assert!(actor.backbone.layers[0].b_ih.data.iter().all(|&b| b == 0.0));
}

#[test]
fn sampling_respects_cap_and_rescoring_matches() {
    let actor = Actor::<f32>::init(small_dims(), &mut item_rng(4, 0));
    for s in 0..50 {
        let sample = actor.sample_sequence(&mut item_rng(5, s), 60);
        assert!(sample.tokens.len() <= 60);
        assert_eq!(sample.tokens[0], BOS_INDEX);
        assert_eq!(sample.log_probs.len(), sample.tokens.len() - 1);
        let again = actor.sample_sequence(&mut item_rng(5, s), 60);
        assert_eq!(again, sample);
        let (lp, ent) = actor.logprob_entropy(&sample.tokens).unwrap();
        for (a, b) in lp.iter().zip(&sample.log_probs) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert!(ent.iter().all(|&e| e >= 0.0));
    }
    let short = actor.sample_sequence(&mut item_rng(6, 0), 3);
    assert!(short.tokens.len() <= 3);
}

#[test]
fn single_step_draws_follow_softmax() {
    let logits = [0.5f64, -1.0, 1.5, 0.0, -0.5];
    let lp = math::log_softmax(&logits);
    let n = 100_000;
    let mut counts = [0usize; 5];
    let mut rng = item_rng(7, 0);
    for _ in 0..n {
        counts[sample_categorical(&lp, &mut rng)] += 1;
    }
    let chi2: f64 = (0..5)
        .map(|i| {
            let e = lp[i].exp() * n as f64;
            (counts[i] as f64 - e).powi(2) / e
        })
        .sum();
    // 99th percentile of chi-square with 4 degrees of freedom.
    assert!(chi2 < 13.277, "chi2 = {chi2}");
}

#[test]
fn single_and_double_precision_agree() {
    for seed in 0..5 {
        let a64 = Actor::<f64>::init(small_dims(), &mut item_rng(8, seed));
        let a32: Actor<f32> = a64.cast();
        let tokens = [0usize, 3, 4, 5, 6, 7, 3, 2];
        let t64 = a64.trace::<ChaCha8Rng>(&tokens, None).unwrap();
        let t32 = a32.trace::<ChaCha8Rng>(&tokens, None).unwrap();
        for (l64, l32) in t64.logits.iter().zip(&t32.logits) {
            for (x, y) in l64.iter().zip(l32) {
                let rel = (x - f64::from(*y)).abs() / x.abs().max(1e-3);
                assert!(rel < 1e-3, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn values_are_finite_and_pure() {
    let dims = ModelDims::new(8, 16, 2);
    let actor = Actor::<f32>::init(dims, &mut item_rng(9, 0));
    let critic = Critic::from_actor(&actor, &mut item_rng(9, 1));
    assert_eq!(critic.backbone, actor.backbone);
    let mut rng = item_rng(10, 0);
    for _ in 0..10_000 {
        let len = rng.gen_range(1..=60);
        let mut prefix = vec![BOS_INDEX];
        prefix.extend((1..len).map(|_| rng.gen_range(0..8)));
        let v = critic.value(&prefix).unwrap();
        assert!(v.is_finite());
    }
    let p = [0usize, 4, 4, 6];
    assert_eq!(critic.value(&p).unwrap(), critic.value(&p).unwrap());
    let trace = critic.trace(&p).unwrap();
    assert_eq!(*trace.values.last().unwrap(), critic.value(&p).unwrap());
}

#[test]
fn parameter_count_depends_only_on_dims() {
    let dims = ModelDims::new(8, 16, 2);
    let a = Actor::<f32>::init(dims, &mut item_rng(1, 1));
    let b = Actor::<f32>::zeros(dims);
    let expected = 8 * 16 + (48 * 16 + 48 * 16 + 96) + (48 * 16 + 48 * 16 + 96) + 8 * 32 + 8;
    assert_eq!(a.parameter_count(), expected);
    assert_eq!(b.parameter_count(), expected);
    let all = ModelDims {
        head_input: HeadInput::AllLayers,
        ..dims
    };
    assert_eq!(Actor::<f32>::zeros(all).head_w.shape, [8, 48]);
}

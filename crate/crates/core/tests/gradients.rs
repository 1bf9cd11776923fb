mod support;

use cdcma_core::agent::{prior_weighted_softmax, Cama, CamaGrads, MsgRef, Pooling, Variant};
use cdcma_core::training::losses::{self, PolicyGradient};
use cdcma_nn::Parameterized;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::*;

#[test]
fn every_loss_matches_finite_differences() {
    for seed in [1, 2, 3] {
        for (name, r) in check_all(seed) {
            assert!(r.checked > 0, "{name}: nothing checked");
            assert!(r.max_rel < 1e-4, "{name} seed {seed}: relative error {}", r.max_rel);
        }
    }
}

#[test]
fn ablated_pooling_paths_match_finite_differences() {
    for v in [Variant::PlainAttention, Variant::NoCama] {
        let f = Fixture::new(9, v, 3);
        let r = check_actor(&f, PolicyGradient::Expected, 0.0);
        assert!(r.max_rel < 1e-4, "{v}: {}", r.max_rel);
    }
}

#[test]
fn zero_discount_targets_are_rewards() {
    let f = Fixture::new(4, Variant::Full, 5);
    let batch = f.batch();
    let next = f.next_actions(0);
    let y = losses::full_critic_targets(&f.target, &f.full_target, &batch, &next, 0.0).unwrap();
    let want: Vec<f64> = f.records.iter().flat_map(|r| r.rewards.clone()).collect();
    assert_eq!(y, want);
    let yg = losses::gain_critic_targets(&f.gain_target, &f.layout, &batch, &next, 0.0).unwrap();
    let mut k = 0;
    for r in &f.records {
        for i in 0..N {
            for _ in 0..(N - 1) * 2 {
                assert_eq!(yg[k], r.rewards[i]);
                k += 1;
            }
        }
    }
}

#[test]
fn critic_at_fixed_point_has_zero_loss() {
    let f = Fixture::new(5, Variant::Full, 3);
    let batch = f.batch();
    let x = losses::full_critic_inputs(&f.nets, &batch).unwrap();
    let y = f.full.predict(&x).unwrap().into_vec();
    let (l, g) = losses::full_critic_loss(&f.full, &x, &y).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.is_zero());
}

#[test]
fn absent_message_rows_give_equal_present_and_absent_losses() {
    let mut f = Fixture::new(6, Variant::Full, 2);
    for r in &mut f.records {
        r.consumed = vec![Vec::new(); N];
        r.next_consumed = vec![Vec::new(); N];
    }
    let batch = f.batch();
    let next = f.next_actions(3);
    let x = losses::gain_critic_inputs(&f.layout, &batch).unwrap();
    let y = losses::gain_critic_targets(&f.gain_target, &f.layout, &batch, &next, 0.96).unwrap();
    let q = f.gain.predict(&x).unwrap().into_vec();
    for k in (0..q.len()).step_by(2) {
        assert_eq!(x.row(k), x.row(k + 1));
        assert_eq!((q[k] - y[k]).powi(2), (q[k + 1] - y[k + 1]).powi(2));
    }
}

#[test]
fn zero_values_give_zero_actor_gradient() {
    let f = Fixture::new(7, Variant::Full, 3);
    let batch = f.batch();
    let q = vec![vec![0.0; 5]; batch.len() * N];
    for mode in [PolicyGradient::Expected, PolicyGradient::Sampled] {
        let (l, g) = losses::actor_loss(&f.nets, &batch, &q, mode, 0.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.actor.is_zero() && g.encoder.is_zero());
        assert!(g.cama.param_slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }
}

#[test]
fn symmetric_values_give_reproducible_finite_encoder_gradient() {
    let f = Fixture::new(8, Variant::Full, 3);
    let batch = f.batch();
    let q = vec![vec![0.5; 5]; batch.len() * N];
    let (_, a) = losses::actor_loss(&f.nets, &batch, &q, PolicyGradient::Expected, 0.1).unwrap();
    let (_, b) = losses::actor_loss(&f.nets, &batch, &q, PolicyGradient::Expected, 0.1).unwrap();
    assert_eq!(a, b);
    assert!(a.encoder.flat_params().iter().all(|v| v.is_finite()));
}

#[test]
fn static_world_and_zero_head_give_zero_residual_loss() {
    let mut f = Fixture::new(10, Variant::Full, 3);
    for r in &mut f.records {
        r.next_obs = r.obs.clone();
    }
    let zeros = vec![0.0; f.nets.residual.param_count()];
    f.nets.residual.set_flat_params(&zeros).unwrap();
    let batch = f.batch();
    let (x, y) = losses::residual_batch(&f.nets, &batch).unwrap();
    assert_eq!(losses::residual_loss(&f.nets.residual, &x, &y).unwrap().0, 0.0);
}

#[test]
fn confident_correct_predictions_give_near_zero_cross_entropy() {
    // a head whose last-layer bias strongly favours action 2, with labels all 2
    let f = Fixture::new(11, Variant::Full, 3);
    let batch = f.batch();
    let (x, labels) = losses::action_pred_batch(&f.nets, &batch).unwrap();
    let mut head = f.nets.action_pred.clone();
    let mut p = head.flat_params();
    let len = p.len();
    for v in p.iter_mut() {
        *v = 0.0;
    }
    p[len - 5 + 2] = 60.0;
    head.set_flat_params(&p).unwrap();
    let twos = vec![2; labels.len()];
    let (l, _) = losses::action_pred_loss(&head, x.as_ref(), &twos, batch.len() * N).unwrap();
    assert!(l < 1e-20, "{l}");
}

#[test]
fn dcos_loss_special_cases() {
    let f = Fixture::new(12, Variant::Full, 4);
    let batch = f.batch();
    let targets = losses::build_cgdc_targets(&f.gain, &f.layout, &batch, 0.3, 1.0).unwrap();
    let x = losses::dcos_inputs(&f.nets, &batch).unwrap();
    let mut zero = f.nets.dcos.clone();
    let z = vec![0.0; zero.param_count()];
    zero.set_flat_params(&z).unwrap();
    let (l, _) = losses::dcos_loss(&zero, &x, &targets).unwrap();
    let sum_sq: f64 = targets.iter().flatten().flatten().map(|t| t.target * t.target).sum();
    assert!((l - sum_sq / batch.len() as f64).abs() < 1e-12);

    // a predictor that already outputs the targets
    let out = f.nets.dcos.predict(&x).unwrap();
    let mut exact = targets.clone();
    for (b, per) in exact.iter_mut().enumerate() {
        for (i, list) in per.iter_mut().enumerate() {
            for t in list.iter_mut() {
                t.target = out.get(b * N + i, t.sender);
            }
        }
    }
    assert_eq!(losses::dcos_loss(&f.nets.dcos, &x, &exact).unwrap().0, 0.0);
}

fn cama_loss(c: &Cama, e: &[f64], msgs: &[MsgRef<'_>], w: &[f64], pooling: Pooling) -> f64 {
    let t = c.aggregate(e, msgs, pooling, 0.8).unwrap();
    t.output.iter().zip(w).map(|(a, b)| a * b).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Attention backward against central differences for weights and the
    /// query embedding, across sender counts and widths up to 8.
    #[test]
    fn attention_backward(seed in 0u64..1000, senders in 1usize..4, dk in 1usize..5, de in 1usize..6, dm in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cama = Cama::random(dk, de, dm, &mut rng);
        let e: Vec<f64> = (0..de).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let payloads: Vec<Vec<f64>> = (0..senders).map(|_| (0..dm).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let priors: Vec<f64> = (0..senders).map(|_| rng.gen_range(0.05..3.0)).collect();
        let msgs: Vec<MsgRef<'_>> = payloads.iter().zip(&priors).enumerate()
            .map(|(j, (p, &c))| MsgRef { sender: j, payload: p, prior: c }).collect();
        let w: Vec<f64> = (0..dm).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let trace = cama.aggregate(&e, &msgs, Pooling::Prior, 0.8).unwrap();
        let mut g = CamaGrads::zeros_like(&cama);
        let de_an = cama.backward(&trace, &w, &mut g);
        let r = fd_check(&cama.flat_params(), &g.flat_params(), |p| {
            let mut c = cama.clone();
            c.set_flat_params(p).unwrap();
            cama_loss(&c, &e, &msgs, &w, Pooling::Prior)
        });
        prop_assert!(r.max_rel < 1e-4, "weights {}", r.max_rel);
        let r = fd_check(&e, &de_an, |x| cama_loss(&cama, x, &msgs, &w, Pooling::Prior));
        prop_assert!(r.max_rel < 1e-4, "embedding {}", r.max_rel);
    }

    #[test]
    fn attention_weights_are_a_distribution(scores in prop::collection::vec(-50.0f64..50.0, 1..6), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let priors: Vec<f64> = scores.iter().map(|_| rng.gen_range(1e-3..5.0)).collect();
        let a = prior_weighted_softmax(&scores, &priors, 0.5).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(a.iter().all(|&v| v >= 0.0));
    }
}

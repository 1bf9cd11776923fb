mod support;

use cdcma_core::agent::{prior_weighted_softmax, Cama, MsgRef, Pooling};
use cdcma_core::cgdc::tabular::{evaluate, lipschitz_constant, sample_return, value_loss_bound, JointPolicy, MessageUse};
use cdcma_core::cgdc::{
    self, calibrate_lambda0, delay_cost, gain_surrogate, info_gap, policy_tv, tempered_policy, CgdcScore, GainLayout,
    PairContext, RunningMeans,
};
use cdcma_core::env::N_ACTIONS;
use cdcma_nn::ops::softmax;
use cdcma_nn::{Activation, Dense, Matrix, Mlp};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{cama_grid, games};

const LAYOUT: GainLayout = GainLayout {
    n_agents: 3,
    obs_dim: 2,
    msg_dim: 3,
};

fn random_critic(seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mlp::random(&[LAYOUT.input_dim(), 8, 8, 1], Activation::Relu, Activation::Identity, &mut rng).unwrap()
}

struct Ctx {
    obs: Vec<Vec<f64>>,
    actions: Vec<usize>,
    receiver: usize,
    sender: usize,
}

impl Ctx {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let receiver = rng.gen_range(0..3);
        let sender = (receiver + rng.gen_range(1..3)) % 3;
        Ctx {
            obs: (0..3).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
            actions: (0..3).map(|_| rng.gen_range(0..N_ACTIONS)).collect(),
            receiver,
            sender,
        }
    }

    fn pair(&self) -> PairContext<'_> {
        PairContext {
            receiver: self.receiver,
            sender: self.sender,
            obs: &self.obs,
            actions: &self.actions,
        }
    }
}

fn msg(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

/// Independent row builder following the documented layout.
fn oracle_row(ctx: &Ctx, a: usize, m: Option<&[f64]>) -> Vec<f64> {
    let mut row = vec![0.0; N_ACTIONS];
    row[a] = 1.0;
    for k in (0..3).filter(|&k| k != ctx.sender) {
        row.extend_from_slice(&ctx.obs[k]);
    }
    for k in (0..3).filter(|&k| k != ctx.sender && k != ctx.receiver) {
        let mut oh = vec![0.0; N_ACTIONS];
        oh[ctx.actions[k]] = 1.0;
        row.extend(oh);
    }
    match m {
        Some(p) => {
            row.extend_from_slice(p);
            row.push(1.0);
        }
        None => row.extend([0.0; 4]),
    }
    for who in [ctx.receiver, ctx.sender] {
        let mut oh = vec![0.0; 3];
        oh[who] = 1.0;
        row.extend(oh);
    }
    row
}

#[test]
fn gain_bound_holds_on_twenty_games() {
    for (k, t) in games::gain_tables(20).iter().enumerate() {
        assert!((t.bound - 50.0).abs() < 1e-9);
        assert!(t.max_abs <= t.bound, "game {k}: {} > {}", t.max_abs, t.bound);
        assert!(t.gain.iter().all(|g| g.is_finite()));
    }
}

#[test]
fn ignored_messages_have_zero_gain() {
    for seed in 0..5 {
        let g = games::instance(seed);
        let deaf = g.receiver.ignoring_messages();
        let t = cgdc::tabular::exact_gain(&g.game, &g.sender, &deaf).unwrap();
        assert!(t.max_abs <= 1e-12, "{}", t.max_abs);
    }
}

#[test]
fn exact_values_agree_with_monte_carlo() {
    let g = games::instance(77);
    let policy = JointPolicy {
        sender: &g.sender,
        receiver: &g.receiver,
        usage: MessageUse::Delayed,
    };
    let ev = evaluate(&g.game, &policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // γ^600 < 1e-10, so truncation is far below the Monte-Carlo error
    let horizon = 600;
    for x in [0, g.game.n_augmented() / 2, g.game.n_augmented() - 1] {
        let (ai, aj) = (rng.gen_range(0..g.game.n_actions_i), rng.gen_range(0..g.game.n_actions_j));
        let n = 2000;
        let samples: Vec<f64> = (0..n).map(|_| sample_return(&g.game, &policy, x, ai, aj, horizon, &mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        let exact = ev.q(x, ai, aj);
        assert!((mean - exact).abs() <= 3.0 * se, "state {x}: mc {mean} ± {se}, exact {exact}");
    }
}

#[test]
fn value_loss_bound_holds_on_fifty_games() {
    for (k, b) in games::bound_checks(50).iter().enumerate() {
        assert!(b.holds && b.lhs <= b.rhs, "game {k}: {} > {}", b.lhs, b.rhs);
        assert!((b.lipschitz - 50.0).abs() < 1e-9);
    }
}

#[test]
fn identical_branches_give_a_zero_bound() {
    let g = games::instance(3);
    let deaf = g.receiver.ignoring_messages();
    let b = value_loss_bound(&g.game, &g.sender, &deaf, lipschitz_constant(1.0, 0.96)).unwrap();
    assert!(b.lhs.abs() <= 1e-10 && b.rhs == 0.0, "{b:?}");
}

#[test]
fn bound_rhs_is_linear_in_lipschitz_constant() {
    let g = games::instance(11);
    let a = value_loss_bound(&g.game, &g.sender, &g.receiver, 1.0).unwrap();
    let b = value_loss_bound(&g.game, &g.sender, &g.receiver, 7.5).unwrap();
    assert!((b.rhs - 7.5 * a.rhs).abs() <= 1e-12 * b.rhs.abs().max(1.0));
    assert_eq!(a.lhs, b.lhs);
}

#[test]
fn cama_weights_maximize_the_regularized_objective() {
    for senders in [2, 3] {
        for seed in 0..100 {
            let tv = cama_grid::instance_tv(seed, senders);
            assert!(tv <= 1e-3, "{senders} senders, seed {seed}: tv {tv}");
        }
    }
}

#[test]
fn equal_priors_reduce_to_plain_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cama = Cama::random(4, 5, 3, &mut rng);
    let e: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let payloads: Vec<Vec<f64>> = (0..3).map(|_| msg(&mut rng)).collect();
    let refs = |c: f64| -> Vec<MsgRef<'_>> {
        payloads.iter().enumerate().map(|(j, p)| MsgRef { sender: j, payload: p, prior: c }).collect()
    };
    let with_prior = cama.aggregate(&e, &refs(0.37), Pooling::Prior, 0.9).unwrap();
    let plain = cama.aggregate(&e, &refs(0.37), Pooling::Uniform, 0.9).unwrap();
    for (a, b) in with_prior.alpha.iter().zip(&plain.alpha) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in with_prior.output.iter().zip(&plain.output) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn small_beta_recovers_the_prior() {
    let priors = [0.2, 1.3, 0.5];
    let a = prior_weighted_softmax(&[3.0, -1.0, 0.5], &priors, 1e-8).unwrap();
    let total: f64 = priors.iter().sum();
    for (x, c) in a.iter().zip(priors) {
        assert!((x - c / total).abs() <= 1e-6);
    }
    let two = prior_weighted_softmax(&[0.4, 0.4], &[2.0, 1.0], 1.0).unwrap();
    assert!((two[0] - 2.0 / 3.0).abs() < 1e-15 && (two[1] - 1.0 / 3.0).abs() < 1e-15);
    assert!(prior_weighted_softmax(&[0.0, 0.0], &[1.0, 0.0], 1.0).is_err());
}

#[test]
fn tempered_policy_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ctx = Ctx::random(&mut rng);
    let critic = random_critic(4);
    let m = msg(&mut rng);
    let uniform = tempered_policy(&critic, &LAYOUT, &ctx.pair(), Some(&m), 0.0).unwrap();
    assert!(uniform.iter().all(|&p| (p - 0.2).abs() < 1e-15));
    // a critic that ignores its input
    let flat = Mlp::zeros(&[LAYOUT.input_dim(), 4, 1], Activation::Relu, Activation::Identity).unwrap();
    let p = tempered_policy(&flat, &LAYOUT, &ctx.pair(), Some(&m), 3.0).unwrap();
    assert!(p.iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

/// `Q(a, m) = 5 + w_a·m_0` when `|w_a·m_0| < 5`: one hidden unit per action
/// that only switches on for its own one-hot slot.
fn interaction_critic(w: [f64; N_ACTIONS]) -> Mlp {
    let d = LAYOUT.input_dim();
    let payload = N_ACTIONS + 2 * LAYOUT.obs_dim + N_ACTIONS;
    let big = 100.0;
    let mut w1 = vec![0.0; N_ACTIONS * d];
    let mut b1 = vec![0.0; N_ACTIONS];
    for a in 0..N_ACTIONS {
        w1[a * d + a] = big;
        w1[a * d + payload] = w[a];
        b1[a] = 5.0 - big;
    }
    Mlp::from_layers(vec![
        Dense::from_parts(d, N_ACTIONS, Activation::Relu, w1, Some(b1)).unwrap(),
        Dense::from_parts(N_ACTIONS, 1, Activation::Identity, vec![1.0; N_ACTIONS], Some(vec![0.0])).unwrap(),
    ])
    .unwrap()
}

#[test]
fn sharper_temperature_raises_cost_when_argmaxes_differ() {
    let critic = interaction_critic([1.0, 0.0, -0.5, 0.2, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ctx = Ctx::random(&mut rng);
    let tar = [1.0, 0.3, -0.2];
    let recv = [-1.0, 0.7, 0.9];
    let q = cgdc::action_values(&critic, &LAYOUT, &ctx.pair(), Some(&tar)).unwrap();
    assert!((q[0] - 6.0).abs() < 1e-12 && (q[2] - 4.5).abs() < 1e-12);
    let costs: Vec<f64> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&eta| delay_cost(&critic, &LAYOUT, &ctx.pair(), Some(&tar), Some(&recv), eta).unwrap())
        .collect();
    assert!(costs[0] < costs[1] && costs[1] < costs[2], "{costs:?}");
}

#[test]
fn gain_surrogate_matches_straight_line_recomputation() {
    let critic = random_critic(6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..1000 {
        let ctx = Ctx::random(&mut rng);
        let m = msg(&mut rng);
        let a = ctx.actions[ctx.receiver];
        let present = critic.predict_one(&oracle_row(&ctx, a, Some(&m))).unwrap()[0];
        let absent = critic.predict_one(&oracle_row(&ctx, a, None)).unwrap()[0];
        let g = gain_surrogate(&critic, &LAYOUT, &ctx.pair(), Some(&m)).unwrap();
        assert!((g - (present - absent)).abs() <= 1e-12);
        assert_eq!(gain_surrogate(&critic, &LAYOUT, &ctx.pair(), None).unwrap(), 0.0);
    }
}

#[test]
fn gain_surrogate_is_antisymmetric_in_the_two_evaluations() {
    let critic = random_critic(7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ctx = Ctx::random(&mut rng);
    let m = msg(&mut rng);
    let a = ctx.actions[ctx.receiver];
    let x = Matrix::from_rows(&[oracle_row(&ctx, a, None), oracle_row(&ctx, a, Some(&m))]).unwrap();
    let q = critic.predict(&x).unwrap().into_vec();
    let g = gain_surrogate(&critic, &LAYOUT, &ctx.pair(), Some(&m)).unwrap();
    assert!((g + (q[0] - q[1])).abs() <= 1e-12);
}

#[test]
fn delay_cost_is_nonnegative_on_random_contexts() {
    let critic = random_critic(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..10_000 {
        let ctx = Ctx::random(&mut rng);
        let tar = msg(&mut rng);
        let recv = if k % 5 == 0 { None } else { Some(msg(&mut rng)) };
        let eta = rng.gen_range(0.0..3.0);
        let c = delay_cost(&critic, &LAYOUT, &ctx.pair(), Some(&tar), recv.as_deref(), eta).unwrap();
        assert!(c >= 0.0, "{c}");
        if k % 100 == 0 {
            assert_eq!(delay_cost(&critic, &LAYOUT, &ctx.pair(), Some(&tar), Some(&tar), eta).unwrap(), 0.0);
        }
    }
}

#[test]
fn pinsker_holds_for_actor_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let actor = Mlp::random(&[6, 8, N_ACTIONS], Activation::Relu, Activation::Identity, &mut rng).unwrap();
    for _ in 0..10_000 {
        let local: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let policy = |m: Option<&[f64]>| {
            let mut x = local.clone();
            x.extend_from_slice(m.unwrap_or(&[0.0; 3]));
            Ok(softmax(&actor.predict_one(&x).unwrap(), 1.0).unwrap())
        };
        let (a, b) = (msg(&mut rng), msg(&mut rng));
        let kl = info_gap(policy, Some(&a), Some(&b)).unwrap();
        let tv = policy_tv(policy, Some(&a), Some(&b)).unwrap();
        assert!(kl >= 0.0);
        assert!(tv <= (kl / 2.0).sqrt() + 1e-12, "tv {tv} kl {kl}");
        assert_eq!(info_gap(policy, Some(&a), Some(&a)).unwrap(), 0.0);
    }
}

#[test]
fn incremental_calibration_matches_two_pass_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let batch: Vec<(f64, f64)> = (0..5000).map(|_| (rng.gen_range(-1.0..2.0), rng.gen_range(0.0..0.5))).collect();
    let mut acc = RunningMeans::default();
    for &(g, c) in &batch {
        acc.push(g, c);
    }
    let mg = batch.iter().map(|b| b.0).sum::<f64>() / batch.len() as f64;
    let mc = batch.iter().map(|b| b.1).sum::<f64>() / batch.len() as f64;
    assert!((acc.mean_gain - mg).abs() <= 1e-12);
    assert!((acc.mean_cost - mc).abs() <= 1e-12);
    let l = calibrate_lambda0(&batch).unwrap().value();
    assert!((l - mg / mc).abs() <= 1e-9 * (mg / mc).abs());
}

proptest! {
    #[test]
    fn score_is_linear_and_monotone_in_lambda(g in -5.0f64..5.0, c in 0.0f64..5.0, l1 in 0.0f64..10.0, l2 in 0.0f64..10.0) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let a = CgdcScore::new(g, c, lo).unwrap();
        let b = CgdcScore::new(g, c, hi).unwrap();
        prop_assert!(b.score <= a.score);
        prop_assert!((a.score - (g - lo * c)).abs() <= 1e-12);
        prop_assert_eq!(CgdcScore::new(g, c, 0.0).unwrap().score, g);
    }

    #[test]
    fn prior_rescaling_leaves_weights_unchanged(scores in prop::collection::vec(-5.0f64..5.0, 1..6), scale in 1e-3f64..1e3, seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let priors: Vec<f64> = scores.iter().map(|_| rng.gen_range(0.01..4.0)).collect();
        let scaled: Vec<f64> = priors.iter().map(|c| c * scale).collect();
        let a = prior_weighted_softmax(&scores, &priors, 0.7).unwrap();
        let b = prior_weighted_softmax(&scores, &scaled, 0.7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }
}

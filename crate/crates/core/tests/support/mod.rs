//! Shared fixtures and the finite-difference oracle for loss gradients.
#![allow(dead_code)]

pub mod cama_grid;
pub mod channel_oracle;
pub mod games;

use cdcma_core::agent::{AgentConfig, AgentNets, Variant};
use cdcma_core::cgdc::GainLayout;
use cdcma_core::training::losses::{self, PolicyGradient};
use cdcma_core::training::{Received, TransitionRecord};
use cdcma_nn::{Activation, Mlp, Parameterized};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const N: usize = 3;
pub const OBS: usize = 4;
pub const EMB: usize = 4;

pub fn small_config(variant: Variant) -> AgentConfig {
    let mut c = AgentConfig::new(N, OBS);
    c.embed_dim = EMB;
    c.hidden = 6;
    c.key_dim = 3;
    c.beta = 0.7;
    c.horizon = 2;
    c.d_max = 2;
    c.variant = variant;
    c
}

pub fn small_critic(input: usize, rng: &mut ChaCha8Rng) -> Mlp {
    Mlp::random(&[input, 7, 5, 1], Activation::Relu, Activation::Identity, rng).unwrap()
}

fn vecr(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn mailbox(rng: &mut ChaCha8Rng) -> Vec<Vec<Received>> {
    let mut out = Vec::with_capacity(N);
    for i in 0..N {
        let mut list = Vec::new();
        for j in (0..N).filter(|&j| j != i) {
            if rng.gen_bool(0.6) {
                list.push(Received {
                    sender: j,
                    payload: vecr(rng, EMB),
                    prior: rng.gen_range(0.1..2.0),
                });
            }
        }
        out.push(list);
    }
    out
}

pub fn random_record(rng: &mut ChaCha8Rng) -> TransitionRecord {
    let rows = |rng: &mut ChaCha8Rng, w: usize| (0..N).map(|_| vecr(rng, w)).collect::<Vec<_>>();
    let done = rng.gen_bool(0.2);
    TransitionRecord {
        obs: rows(rng, OBS),
        prev_embedding: rows(rng, EMB).into_iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect(),
        actions: (0..N).map(|_| rng.gen_range(0..5)).collect(),
        rewards: vecr(rng, N),
        next_obs: rows(rng, OBS),
        done,
        heard: mailbox(rng),
        consumed: mailbox(rng),
        next_consumed: if done { vec![Vec::new(); N] } else { mailbox(rng) },
        embeddings: rows(rng, EMB).into_iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect(),
    }
}

pub struct Fixture {
    pub nets: AgentNets,
    pub target: AgentNets,
    pub full: Mlp,
    pub full_target: Mlp,
    pub gain: Mlp,
    pub gain_target: Mlp,
    pub layout: GainLayout,
    pub records: Vec<TransitionRecord>,
}

impl Fixture {
    pub fn new(seed: u64, variant: Variant, batch: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_config(variant);
        let nets = AgentNets::new(cfg.clone(), &mut rng).unwrap();
        let target = AgentNets::new(cfg, &mut rng).unwrap();
        let layout = GainLayout {
            n_agents: N,
            obs_dim: OBS,
            msg_dim: EMB,
        };
        let fdim = losses::full_input_dim(N, OBS, EMB);
        Fixture {
            nets,
            target,
            full: small_critic(fdim, &mut rng),
            full_target: small_critic(fdim, &mut rng),
            gain: small_critic(layout.input_dim(), &mut rng),
            gain_target: small_critic(layout.input_dim(), &mut rng),
            layout,
            records: (0..batch).map(|_| random_record(&mut rng)).collect(),
        }
    }

    pub fn batch(&self) -> Vec<&TransitionRecord> {
        self.records.iter().collect()
    }

    pub fn next_actions(&self, seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.records
            .iter()
            .map(|r| losses::next_actions(&self.target, r, &mut rng).unwrap())
            .collect()
    }
}

/// Worst relative error between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Central differences with step `h = 1e-5` over every coordinate of
/// `base`. Coordinates where analytic and numeric values agree to 1e-7 in
/// absolute terms are counted as matching without a relative test; the
/// relative error is `|a − n| / max(|a| + |n|, 1e-6)`.
pub fn fd_check<F: FnMut(&[f64]) -> f64>(base: &[f64], analytic: &[f64], mut loss: F) -> FdReport {
    assert_eq!(base.len(), analytic.len(), "gradient layout mismatch");
    let h = 1e-5;
    let mut report = FdReport {
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
        max_abs: 0.0,
    };
    let mut p = base.to_vec();
    for k in 0..base.len() {
        p[k] = base[k] + h;
        let up = loss(&p);
        p[k] = base[k] - h;
        let down = loss(&p);
        p[k] = base[k];
        let fd = (up - down) / (2.0 * h);
        let a = analytic[k];
        report.checked += 1;
        report.max_abs = report.max_abs.max((fd - a).abs());
        if (fd - a).abs() <= 1e-7 {
            report.skipped += 1;
            continue;
        }
        let rel = (fd - a).abs() / (fd.abs() + a.abs()).max(1e-6);
        report.max_rel = report.max_rel.max(rel);
    }
    report
}

fn with_params<P: Parameterized + Clone>(p: &P, flat: &[f64]) -> P {
    let mut q = p.clone();
    q.set_flat_params(flat).unwrap();
    q
}

pub fn check_full_critic(f: &Fixture, gamma: f64) -> FdReport {
    let batch = f.batch();
    let next = f.next_actions(11);
    let x = losses::full_critic_inputs(&f.nets, &batch).unwrap();
    let y = losses::full_critic_targets(&f.target, &f.full_target, &batch, &next, gamma).unwrap();
    let (_, g) = losses::full_critic_loss(&f.full, &x, &y).unwrap();
    fd_check(&f.full.flat_params(), &g.flat_params(), |p| {
        losses::full_critic_loss(&with_params(&f.full, p), &x, &y).unwrap().0
    })
}

pub fn check_gain_critic(f: &Fixture, gamma: f64) -> FdReport {
    let batch = f.batch();
    let next = f.next_actions(12);
    let x = losses::gain_critic_inputs(&f.layout, &batch).unwrap();
    let y = losses::gain_critic_targets(&f.gain_target, &f.layout, &batch, &next, gamma).unwrap();
    let (_, g) = losses::gain_critic_loss(&f.gain, &x, &y, batch.len()).unwrap();
    fd_check(&f.gain.flat_params(), &g.flat_params(), |p| {
        losses::gain_critic_loss(&with_params(&f.gain, p), &x, &y, batch.len()).unwrap().0
    })
}

/// Actor loss gradient over encoder, attention and actor parameters jointly.
pub fn check_actor(f: &Fixture, mode: PolicyGradient, entropy: f64) -> FdReport {
    let batch = f.batch();
    let q = losses::actor_action_values(&f.nets, &f.full, &batch).unwrap();
    let (_, g) = losses::actor_loss(&f.nets, &batch, &q, mode, entropy).unwrap();
    let ne = f.nets.encoder.param_count();
    let nc = f.nets.cama.param_count();
    let base = [f.nets.encoder.flat_params(), f.nets.cama.flat_params(), f.nets.actor.flat_params()].concat();
    let analytic = [g.encoder.flat_params(), g.cama.flat_params(), g.actor.flat_params()].concat();
    fd_check(&base, &analytic, |p| {
        let mut nets = f.nets.clone();
        nets.encoder.set_flat_params(&p[..ne]).unwrap();
        nets.cama.set_flat_params(&p[ne..ne + nc]).unwrap();
        nets.actor.set_flat_params(&p[ne + nc..]).unwrap();
        losses::actor_loss(&nets, &batch, &q, mode, entropy).unwrap().0
    })
}

pub fn check_residual(f: &Fixture) -> FdReport {
    let batch = f.batch();
    let (x, y) = losses::residual_batch(&f.nets, &batch).unwrap();
    let (_, g) = losses::residual_loss(&f.nets.residual, &x, &y).unwrap();
    fd_check(&f.nets.residual.flat_params(), &g.flat_params(), |p| {
        losses::residual_loss(&with_params(&f.nets.residual, p), &x, &y).unwrap().0
    })
}

pub fn check_action_pred(f: &Fixture) -> FdReport {
    let batch = f.batch();
    let (x, labels) = losses::action_pred_batch(&f.nets, &batch).unwrap();
    let per = batch.len() * N;
    let (_, g) = losses::action_pred_loss(&f.nets.action_pred, x.as_ref(), &labels, per).unwrap();
    fd_check(&f.nets.action_pred.flat_params(), &g.flat_params(), |p| {
        losses::action_pred_loss(&with_params(&f.nets.action_pred, p), x.as_ref(), &labels, per)
            .unwrap()
            .0
    })
}

pub fn check_dcos(f: &Fixture, lambda: f64) -> FdReport {
    let batch = f.batch();
    let targets = losses::build_cgdc_targets(&f.gain, &f.layout, &batch, lambda, 1.0).unwrap();
    let x = losses::dcos_inputs(&f.nets, &batch).unwrap();
    let (_, g) = losses::dcos_loss(&f.nets.dcos, &x, &targets).unwrap();
    fd_check(&f.nets.dcos.flat_params(), &g.flat_params(), |p| {
        losses::dcos_loss(&with_params(&f.nets.dcos, p), &x, &targets).unwrap().0
    })
}

/// Every loss on one fixture, labelled.
pub fn check_all(seed: u64) -> Vec<(&'static str, FdReport)> {
    let f = Fixture::new(seed, Variant::Full, 4);
    vec![
        ("full critic TD", check_full_critic(&f, 0.96)),
        ("gain critic TD", check_gain_critic(&f, 0.96)),
        ("policy gradient (expected)", check_actor(&f, PolicyGradient::Expected, 0.05)),
        ("policy gradient (score function)", check_actor(&f, PolicyGradient::Sampled, 0.05)),
        ("observation residual", check_residual(&f)),
        ("teammate action cross-entropy", check_action_pred(&f)),
        ("partner score regression", check_dcos(&f, 0.5)),
    ]
}

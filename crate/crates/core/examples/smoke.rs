//! Short training run printing evaluation points, useful for timing.
use std::time::Instant;

use cdcma_core::agent::{AgentConfig, Variant};
use cdcma_core::channel::{DelaySpec, Difficulty};
use cdcma_core::env::TaskConfig;
use cdcma_core::training::{TrainConfig, Trainer};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let episodes: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let variant: Variant = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(Variant::Full);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let task = TaskConfig::cooperative_navigation(3);
    let mut agent = AgentConfig::new(3, task.obs_dim());
    agent.variant = variant;
    let delay = DelaySpec::from_difficulty(Difficulty::Easy, 5).unwrap();
    let mut cfg = TrainConfig::new(seed, task, agent, delay);
    cfg.episodes = episodes;
    let env_f = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    cfg.updates_per_episode = env_f("UPE", 1.0) as usize;
    cfg.batch_size = env_f("BATCH", 32.0) as usize;
    cfg.lr_critic = env_f("LRC", 1e-2);
    cfg.lr_actor = env_f("LRA", 1e-3);
    cfg.entropy = env_f("ENT", 0.01);
    let mut env = cdcma_core::env::ParticleEnv::new(cfg.task.clone()).unwrap();
    let rand = cdcma_core::training::random_policy_returns(&mut env, &Trainer::final_eval_seeds(seed, 100)).unwrap();
    let (rm, rs) = cdcma_core::training::mean_std(&rand);
    println!("random {rm:.3} ± {rs:.3}");
    let mut t = Trainer::new(cfg).unwrap();
    let start = Instant::now();
    t.train(|p| {
        println!(
            "ep {:5} reward {:8.2} ± {:6.2} full {:.4} gain {:.4} actor {:.4} res {:.4} ap {:.4} dcos {:.4} g {:.4} c {:.4} lam {:.3} req {:.3} gap {:.4} t {:.1}s",
            p.episode, p.mean_reward, p.std_reward, p.losses.full_critic, p.losses.gain_critic, p.losses.actor,
            p.losses.residual, p.losses.action_pred, p.losses.dcos, p.losses.mean_gain, p.losses.mean_cost,
            p.lambda, p.request_rate, p.policy_gap, start.elapsed().as_secs_f64()
        )
    })
    .unwrap();
    let (m, s, _) = t.final_evaluation(100).unwrap();
    println!("final {m:.3} ± {s:.3} in {:.1}s", start.elapsed().as_secs_f64());
}

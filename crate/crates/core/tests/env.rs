use cdcma_core::env::{
    reward_of, Body, MultiAgentEnv, ParticleEnv, Task, TaskConfig, WorldState, ACCEL, DAMPING, DT, N_ACTIONS,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line navigation reward: landmark coverage plus collisions.
fn cn_reward(s: &WorldState) -> f64 {
    let mut total = 0.0;
    for l in &s.targets {
        let mut best = f64::MAX;
        for a in &s.agents {
            let d = ((a.pos[0] - l.pos[0]).powi(2) + (a.pos[1] - l.pos[1]).powi(2)).sqrt();
            if d < best {
                best = d;
            }
        }
        total += best;
    }
    let mut hits = 0.0;
    for x in 0..s.agents.len() {
        for y in x + 1..s.agents.len() {
            let (p, q) = (s.agents[x].pos, s.agents[y].pos);
            if ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() < 0.1 {
                hits += 1.0;
            }
        }
    }
    -total / s.agents.len() as f64 - 0.25 * hits
}

fn pp_reward(s: &WorldState) -> f64 {
    let mut best = f64::MAX;
    let mut caught = 0.0;
    for a in &s.agents {
        for p in &s.targets {
            let d = ((a.pos[0] - p.pos[0]).powi(2) + (a.pos[1] - p.pos[1]).powi(2)).sqrt();
            best = best.min(d);
            if d < 0.1 {
                caught += 1.0;
            }
        }
    }
    -best + caught
}

#[test]
fn rewards_match_straight_line_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (cfg, oracle) in [
        (TaskConfig::cooperative_navigation(3), cn_reward as fn(&WorldState) -> f64),
        (TaskConfig::predator_prey(3), pp_reward),
    ] {
        let mut env = ParticleEnv::new(cfg.clone()).unwrap();
        let mut done = true;
        for _ in 0..1000 {
            if done {
                env.reset(rng.gen());
            }
            let acts: Vec<usize> = (0..3).map(|_| rng.gen_range(0..N_ACTIONS)).collect();
            let out = env.step(&acts).unwrap();
            let want = oracle(env.state());
            assert!(out.rewards.iter().all(|&r| (r - want).abs() <= 1e-12), "{:?} vs {want}", out.rewards);
            done = out.done;
        }
    }
}

#[test]
fn dense_collisions_are_counted() {
    let mut env = ParticleEnv::new(TaskConfig::cooperative_navigation(3)).unwrap();
    env.reset(0);
    let mut s = env.state().clone();
    s.agents[0].pos = [0.0, 0.0];
    s.agents[1].pos = [0.05, 0.0];
    s.agents[2].pos = [0.0, 0.05];
    for (l, a) in s.targets.iter_mut().zip(&s.agents) {
        l.pos = a.pos;
    }
    // every landmark covered, all three pairs colliding
    assert_eq!(reward_of(Task::CooperativeNavigation, &s), -0.75);
}

#[test]
fn same_seed_same_layout_and_documented_dims() {
    for cfg in [TaskConfig::cooperative_navigation(3), TaskConfig::predator_prey(4)] {
        let mut a = ParticleEnv::new(cfg.clone()).unwrap();
        let mut b = ParticleEnv::new(cfg.clone()).unwrap();
        let oa = a.reset(42);
        assert_eq!(oa, b.reset(42));
        assert_eq!(a.state(), b.state());
        let expect = match cfg.task {
            Task::CooperativeNavigation => 4 + 2 * cfg.n_targets,
            Task::PredatorPrey => 16,
        };
        assert!(oa.iter().all(|o| o.len() == expect));
        assert_ne!(a.reset(43), oa);
    }
}

#[test]
fn episodes_last_sixty_steps_and_then_refuse() {
    let mut env = ParticleEnv::new(TaskConfig::predator_prey(3)).unwrap();
    env.reset(5);
    for t in 1..=60 {
        let out = env.step(&[0, 1, 2]).unwrap();
        assert_eq!(out.done, t == 60);
        assert!(out.rewards.windows(2).all(|w| w[0] == w[1]));
    }
    assert!(env.step(&[0, 1, 2]).is_err());
    assert!(ParticleEnv::new(TaskConfig::cooperative_navigation(1)).is_err());
}

#[test]
fn dynamics_follow_damped_euler_steps() {
    let mut env = ParticleEnv::new(TaskConfig::cooperative_navigation(2)).unwrap();
    env.reset(0);
    let mut s = env.state().clone();
    s.agents[0] = Body { pos: [0.0, 0.0], vel: [0.1, -0.2] };
    env.set_state(s).unwrap();
    env.step(&[3, 4]).unwrap();
    let b = env.state().agents[0];
    let vx = DAMPING * 0.1 + ACCEL * DT;
    let vy = DAMPING * -0.2;
    assert!((b.vel[0] - vx).abs() < 1e-15 && (b.vel[1] - vy).abs() < 1e-15);
    assert!((b.pos[0] - vx * DT).abs() < 1e-15 && (b.pos[1] - vy * DT).abs() < 1e-15);
}

/// Moving teammates around must not change an agent's observation.
#[test]
fn observations_carry_no_teammate_features() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for cfg in [TaskConfig::cooperative_navigation(3), TaskConfig::predator_prey(3)] {
        let mut env = ParticleEnv::new(cfg).unwrap();
        for _ in 0..200 {
            env.reset(rng.gen());
            let base = env.state().clone();
            let before = env.observations();
            for i in 0..3 {
                let mut s = base.clone();
                for (k, a) in s.agents.iter_mut().enumerate() {
                    if k != i {
                        a.pos = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                        a.vel = [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)];
                    }
                }
                env.set_state(s).unwrap();
                assert_eq!(env.observations()[i], before[i]);
            }
            env.set_state(base).unwrap();
        }
    }
}

#[test]
fn prey_noise_is_seeded() {
    let run = |seed| {
        let mut env = ParticleEnv::new(TaskConfig::predator_prey(3)).unwrap();
        env.reset(seed);
        for _ in 0..20 {
            env.step(&[4, 4, 4]).unwrap();
        }
        env.state().clone()
    };
    assert_eq!(run(3), run(3));
    assert_ne!(run(3).targets, run(4).targets);
}

proptest! {
    #[test]
    fn positions_stay_in_the_arena(seed in any::<u64>(), acts in prop::collection::vec(0usize..5, 3..180)) {
        let mut env = ParticleEnv::new(TaskConfig::cooperative_navigation(3)).unwrap();
        env.reset(seed);
        for chunk in acts.chunks_exact(3).take(60) {
            env.step(chunk).unwrap();
            for b in &env.state().agents {
                prop_assert!(b.pos.iter().all(|p| (-1.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn transitions_are_deterministic(seed in any::<u64>(), acts in prop::collection::vec(0usize..5, 30)) {
        let run = || {
            let mut env = ParticleEnv::new(TaskConfig::predator_prey(3)).unwrap();
            env.reset(seed);
            let mut rewards = Vec::new();
            for chunk in acts.chunks_exact(3) {
                rewards.push(env.step(chunk).unwrap().rewards[0]);
            }
            (env.state().clone(), rewards)
        };
        prop_assert_eq!(run(), run());
    }
}

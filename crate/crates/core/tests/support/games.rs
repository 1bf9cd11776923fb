//! Random enumerable two-agent games with a delayed channel.

use cdcma_core::cgdc::tabular::{
    exact_gain, lipschitz_constant, value_loss_bound, BoundCheck, GainTable, ReceiverPolicy, SenderPolicy,
    TabularGame,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GAMMA: f64 = 0.96;

pub struct Instance {
    pub game: TabularGame,
    pub sender: SenderPolicy,
    pub receiver: ReceiverPolicy,
}

/// 2–4 states, a receiver that sees fewer observations than there are
/// states, 2–3 actions each and a random delay PMF over `1..=D`, `D ≤ 3`.
pub fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_states = rng.gen_range(2..=4);
    let n_obs = rng.gen_range(1..n_states);
    let n_actions = rng.gen_range(2..=3);
    let d = rng.gen_range(1..=3);
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = w.iter().sum();
    let pmf = w.iter().map(|v| v / total).collect();
    let game = TabularGame::random(&mut rng, n_states, n_obs, n_actions, pmf, GAMMA);
    let sender = SenderPolicy::random(&game, &mut rng);
    let scale = rng.gen_range(0.5..4.0);
    let receiver = ReceiverPolicy::random(&game, scale, &mut rng);
    Instance { game, sender, receiver }
}

pub fn gain_tables(count: u64) -> Vec<GainTable> {
    (0..count)
        .map(|k| {
            let g = instance(1000 + k);
            exact_gain(&g.game, &g.sender, &g.receiver).expect("enumerable game")
        })
        .collect()
}

pub fn bound_checks(count: u64) -> Vec<BoundCheck> {
    (0..count)
        .map(|k| {
            let g = instance(5000 + k);
            let l = lipschitz_constant(g.game.r_max, g.game.gamma);
            value_loss_bound(&g.game, &g.sender, &g.receiver, l).expect("enumerable game")
        })
        .collect()
}

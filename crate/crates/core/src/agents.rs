//! Agent strategies as (representation, decode, update): tabular Q-learning,
//! state-indexed UCB, random initializations, and the per-state Q-value
//! rescaling that puts pretrained tables on a common scale.
//!
//! Tables are indexed by (previous round's price pair, own current price).
//! The update for the action chosen at the previous state uses the reward
//! realized in the new state and bootstraps on the new state's row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Benchmarks;
use crate::values::{action_values, state_values, PolicyTable, RepeatedGame};
use crate::{Error, Result};

/// Default pretraining cap on UCB visit counts per state-action cell.
pub const UCB_COUNT_CAP: f64 = 5_000.0;

/// Tabular Q representation with its exploration schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row-major `n_states x n_actions` action values.
    pub q: Vec<f64>,
    /// Learning rate in (0, 1].
    pub alpha: f64,
    /// Exploration rate in [0, 1] (current value of the schedule).
    pub epsilon: f64,
    /// Exponential decay rate of the exploration schedule.
    pub epsilon_decay: f64,
    /// Discount factor.
    pub gamma: f64,
}

impl QTable {
    pub fn new(n_states: usize, n_actions: usize, alpha: f64, epsilon: f64, epsilon_decay: f64, gamma: f64) -> Self {
        QTable {
            n_states,
            n_actions,
            q: vec![0.0; n_states * n_actions],
            alpha,
            epsilon,
            epsilon_decay,
            gamma,
        }
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Greedy action with lowest-index tie-break.
    #[inline]
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_next(&self, s: usize) -> f64 {
        let row = self.row(s);
        row.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Exploration rate after `t` rounds of exponential decay.
    pub fn epsilon_at(&self, t: u64) -> f64 {
        self.epsilon * (-self.epsilon_decay * t as f64).exp()
    }
}

/// Greedy-with-exploration decode of a Q row at one state: the argmax with
/// probability `1 - epsilon`, uniform over the grid otherwise.
pub fn q_decode_action(z: &QTable, s: usize, epsilon: f64, rng: &mut impl Rng) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..z.n_actions)
    } else {
        z.argmax(s)
    }
}

/// Full policy table of the decode rule at a fixed exploration rate: mass
/// `1 - epsilon` on the argmax plus `epsilon / |P|` everywhere.
pub fn q_decode(z: &QTable, n_opp: usize, epsilon: f64) -> PolicyTable {
    let n_own = z.n_actions;
    assert_eq!(z.n_states, n_own * n_opp);
    let mut dist = vec![epsilon / n_own as f64; z.n_states * n_own];
    for s in 0..z.n_states {
        dist[s * n_own + z.argmax(s)] += 1.0 - epsilon;
    }
    PolicyTable::from_rows(n_own, n_opp, dist).expect("decode rows are valid distributions")
}

/// One Q-learning update. Touches exactly one cell and reports whether the
/// per-state argmax changed.
pub fn q_update(z: &mut QTable, prev_state: usize, action: usize, reward: f64, next_state: usize) -> Result<bool> {
    if prev_state >= z.n_states || next_state >= z.n_states || action >= z.n_actions {
        return Err(Error::invalid("q_update index out of range"));
    }
    let old_argmax = z.argmax(prev_state);
    let target = reward + z.gamma * z.max_next(next_state);
    let cell = prev_state * z.n_actions + action;
    z.q[cell] += z.alpha * (target - z.q[cell]);
    Ok(z.argmax(prev_state) != old_argmax)
}

/// State-indexed UCB representation: cumulative reward mass and real-valued
/// visit mass per state-action cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcbTable {
    pub n_states: usize,
    pub n_actions: usize,
    pub counts: Vec<f64>,
    pub rewards: Vec<f64>,
    /// Test-time discount on visit and reward increments, in [0, 1].
    pub alpha: f64,
    /// Pretraining cap on per-cell visit counts.
    pub count_cap: f64,
}

/// Which update semantics apply: pretraining uses unit increments under the
/// count cap, test time uses the configured discount with no cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UcbPhase {
    Pretrain,
    Test,
}

impl UcbTable {
    pub fn new(n_states: usize, n_actions: usize, alpha: f64) -> Self {
        UcbTable {
            n_states,
            n_actions,
            counts: vec![0.0; n_states * n_actions],
            rewards: vec![0.0; n_states * n_actions],
            alpha,
            count_cap: UCB_COUNT_CAP,
        }
    }

    /// Upper confidence index of one state row; unvisited actions carry an
    /// infinite bonus.
    pub fn ucb_row(&self, s: usize) -> Vec<f64> {
        let base = s * self.n_actions;
        let state_count: f64 = self.counts[base..base + self.n_actions].iter().sum();
        (0..self.n_actions)
            .map(|a| {
                let c = self.counts[base + a];
                if c <= 0.0 {
                    f64::INFINITY
                } else {
                    self.rewards[base + a] / c + (2.0 * state_count.ln() / c).sqrt()
                }
            })
            .collect()
    }

    /// Argmax of the UCB index with lowest-index tie-break.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.ucb_row(s);
        let mut best = 0;
        for (a, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Deterministic decode of the whole UCB table.
pub fn ucb_decode(z: &UcbTable, n_opp: usize) -> PolicyTable {
    let n_own = z.n_actions;
    assert_eq!(z.n_states, n_own * n_opp);
    let actions: Vec<usize> = (0..z.n_states).map(|s| z.argmax(s)).collect();
    PolicyTable::deterministic(n_own, n_opp, &actions)
}

/// One UCB update: `count += alpha_phase`, `rewards += alpha_phase * reward`.
/// During pretraining, a cell at the count cap skips both increments so its
/// mean stays fixed. Reports whether the state's argmax changed.
pub fn ucb_update(z: &mut UcbTable, prev_state: usize, action: usize, reward: f64, phase: UcbPhase) -> Result<bool> {
    if prev_state >= z.n_states || action >= z.n_actions {
        return Err(Error::invalid("ucb_update index out of range"));
    }
    let old_argmax = z.argmax(prev_state);
    let cell = prev_state * z.n_actions + action;
    match phase {
        UcbPhase::Pretrain => {
            if z.counts[cell] < z.count_cap {
                z.counts[cell] = (z.counts[cell] + 1.0).min(z.count_cap);
                z.rewards[cell] += reward;
            }
        }
        UcbPhase::Test => {
            z.counts[cell] += z.alpha;
            z.rewards[cell] += z.alpha * reward;
        }
    }
    Ok(z.argmax(prev_state) != old_argmax)
}

/// Q table with i.i.d. uniform entries over `[lo, hi]`.
pub fn random_q_init(
    rng: &mut impl Rng,
    n_states: usize,
    n_actions: usize,
    interval: (f64, f64),
    gamma: f64,
) -> Result<QTable> {
    let (lo, hi) = interval;
    if !(lo <= hi) {
        return Err(Error::invalid(format!("empty Q-init interval [{lo}, {hi}]")));
    }
    let mut z = QTable::new(n_states, n_actions, 0.0, 0.0, 0.0, gamma);
    for cell in z.q.iter_mut() {
        *cell = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    }
    Ok(z)
}

/// UCB table with counts uniform in `[0, count_cap]` and cumulative rewards
/// chosen so each cell's mean reward is uniform over the stage-profit range.
pub fn random_ucb_init(
    rng: &mut impl Rng,
    n_states: usize,
    n_actions: usize,
    profit_range: (f64, f64),
    alpha: f64,
) -> Result<UcbTable> {
    let (lo, hi) = profit_range;
    if !(lo <= hi) {
        return Err(Error::invalid(format!("empty profit range [{lo}, {hi}]")));
    }
    let mut z = UcbTable::new(n_states, n_actions, alpha);
    for cell in 0..n_states * n_actions {
        let count = rng.gen_range(0.0..=UCB_COUNT_CAP);
        let mean = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        z.counts[cell] = count;
        z.rewards[cell] = mean * count;
    }
    Ok(z)
}

/// Rescale a pretrained Q table so that tables across policies share a
/// common scale while preserving each state's argmax and within-state
/// ordering.
///
/// Per state, the raw row is mapped affinely onto
/// `[min_a Q(s, a), V(s)]` (the true action-value extremes of the converged
/// policy against its pretraining partner), then shifted so that the
/// maximum argmax entry over states equals `Q^N + f (Q^M - Q^N)`, with
/// `Q^N = r-bar^N / (1 - gamma)` and `Q^M = r-bar^M / (1 - gamma)`. `f = 1`
/// is the optimistic initialization, `f = 0` the pessimistic one.
pub fn rescale_q(
    z_raw: &QTable,
    pi: &PolicyTable,
    pi_partner: &PolicyTable,
    f: f64,
    game: &RepeatedGame,
    benchmarks: &Benchmarks,
    player: usize,
) -> Result<QTable> {
    if z_raw.n_states != game.n_states(player) || z_raw.n_actions != game.n_actions[player] {
        return Err(Error::GridMismatch("raw table does not match the game".into()));
    }
    let values = state_values(game, player, pi, pi_partner)?;
    let q_true = action_values(game, player, &values, pi_partner);
    let q_n = benchmarks.q_competitive(game.gamma);
    let q_m = benchmarks.q_monopoly(game.gamma);
    let target_top = q_n + f * (q_m - q_n);
    let v_max = values.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = target_top - v_max;

    let n_a = z_raw.n_actions;
    let mut out = z_raw.clone();
    for s in 0..z_raw.n_states {
        let raw = z_raw.row(s);
        let raw_min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        let raw_max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let q_row = &q_true[s * n_a..(s + 1) * n_a];
        let q_min = q_row.iter().copied().fold(f64::INFINITY, f64::min);
        let span = raw_max - raw_min;
        if span <= 0.0 {
            // Degenerate but legal: a flat raw row maps to the target
            // minimum wholesale.
            log::warn!("rescale_q: flat raw row at state {s}; mapping the row to its target minimum");
            for a in 0..n_a {
                out.q[s * n_a + a] = q_min + shift;
            }
            continue;
        }
        let scale = (values.v[s] - q_min) / span;
        if scale <= 0.0 {
            log::warn!("rescale_q: non-positive scale at state {s}; within-state ordering collapses");
        }
        for a in 0..n_a {
            out.q[s * n_a + a] = shift + q_min + (raw[a] - raw_min) * scale;
        }
    }
    Ok(out)
}

/// How a strategy adapts at test time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    /// Learning rate (Q) or update discount (UCB).
    pub alpha: f64,
    /// Rescaling factor for pretrained Q tables.
    pub f: f64,
    /// Test-time exploration schedule; zero by default.
    pub epsilon: f64,
    pub epsilon_decay: f64,
}

impl Default for Adaptation {
    fn default() -> Self {
        Adaptation {
            alpha: 0.0,
            f: 1.0,
            epsilon: 0.0,
            epsilon_decay: 0.0,
        }
    }
}

impl Adaptation {
    pub fn q(alpha: f64, f: f64) -> Self {
        Adaptation {
            alpha,
            f,
            ..Default::default()
        }
    }
}

/// A mutable representation plus the identity of its decode/update rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Representation {
    Q(QTable),
    Ucb(UcbTable),
}

/// One playable strategy instance: a representation, its adaptation
/// parameters, and provenance for the redraw rule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Strategy {
    pub representation: Representation,
    pub adaptation: Adaptation,
    /// Pool id of the initial policy, if drawn from a pool.
    pub policy_id: Option<u32>,
    /// Pool id of the jointly pretrained partner, if any.
    pub partner_id: Option<u32>,
    /// Meta-strategy label this instance was sampled for.
    pub meta_label: String,
}

impl Strategy {
    /// Action at a state; `t` drives the exploration schedule.
    pub fn act(&self, state: usize, t: u64, rng: &mut impl Rng) -> usize {
        match &self.representation {
            Representation::Q(z) => {
                let eps = self.adaptation.epsilon * (-self.adaptation.epsilon_decay * t as f64).exp();
                q_decode_action(z, state, eps, rng)
            }
            Representation::Ucb(z) => z.argmax(state),
        }
    }

    /// Test-time update; returns whether the previous state's argmax moved.
    pub fn update(&mut self, prev_state: usize, action: usize, reward: f64, next_state: usize) -> Result<bool> {
        match &mut self.representation {
            Representation::Q(z) => q_update(z, prev_state, action, reward, next_state),
            Representation::Ucb(z) => ucb_update(z, prev_state, action, reward, UcbPhase::Test),
        }
    }

    /// Decoded greedy policy of the current representation.
    pub fn policy(&self, n_opp: usize) -> PolicyTable {
        match &self.representation {
            Representation::Q(z) => q_decode(z, n_opp, 0.0),
            Representation::Ucb(z) => ucb_decode(z, n_opp),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Benchmarks, GridPair, PricingEnv};
    use crate::seed::derive_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_q() -> QTable {
        let mut z = QTable::new(4, 4, 0.5, 0.1, 0.0, 0.95);
        for (i, cell) in z.q.iter_mut().enumerate() {
            *cell = (i % 7) as f64 * 0.1;
        }
        z
    }

    #[test]
    fn q_decode_pure_exploitation_is_argmax() {
        let z = small_q();
        let pol = q_decode(&z, 1, 0.0);
        for s in 0..4 {
            assert_eq!(pol.row(s)[z.argmax(s)], 1.0);
        }
    }

    #[test]
    fn q_decode_full_exploration_is_uniform() {
        let z = small_q();
        let pol = q_decode(&z, 1, 1.0);
        for s in 0..4 {
            for &p in pol.row(s) {
                assert_abs_diff_eq!(p, 0.25, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn q_decode_mixes_argmax_and_uniform() {
        let mut z = QTable::new(4, 4, 0.5, 0.1, 0.0, 0.95);
        z.q[..4].copy_from_slice(&[0.0, 0.1, 0.9, 0.2]);
        let pol = q_decode(&z, 1, 0.1);
        let row = pol.row(0);
        assert_abs_diff_eq!(row[2], 0.925, epsilon = 1e-12);
        for a in [0, 1, 3] {
            assert_abs_diff_eq!(row[a], 0.025, epsilon = 1e-12);
        }
    }

    #[test]
    fn q_update_arithmetic() {
        let mut z = QTable::new(2, 2, 0.5, 0.0, 0.0, 0.95);
        z.q = vec![6.0, 0.0, 6.8, 6.5];
        q_update(&mut z, 0, 0, 0.34, 1).unwrap();
        assert_abs_diff_eq!(z.q[0], 6.40, epsilon = 1e-12);
        // No other cell changed.
        assert_eq!(&z.q[1..], &[0.0, 6.8, 6.5]);
    }

    #[test]
    fn q_update_alpha_extremes() {
        let mut frozen = small_q();
        frozen.alpha = 0.0;
        let before = frozen.q.clone();
        q_update(&mut frozen, 1, 2, 0.7, 3).unwrap();
        assert_eq!(frozen.q, before);

        let mut replace = small_q();
        replace.alpha = 1.0;
        let m = replace.max_next(3);
        q_update(&mut replace, 1, 2, 0.7, 3).unwrap();
        assert_abs_diff_eq!(replace.q[1 * 4 + 2], 0.7 + 0.95 * m, epsilon = 1e-12);
    }

    #[test]
    fn q_update_rejects_bad_indices() {
        let mut z = small_q();
        assert!(q_update(&mut z, 4, 0, 0.0, 0).is_err());
        assert!(q_update(&mut z, 0, 4, 0.0, 0).is_err());
        assert!(q_update(&mut z, 0, 0, 0.0, 9).is_err());
    }

    #[test]
    fn ucb_unvisited_actions_win() {
        let z = UcbTable::new(2, 3, 0.5);
        // All counts zero: lowest index everywhere.
        assert_eq!(z.argmax(0), 0);
        assert_eq!(z.argmax(1), 0);
    }

    #[test]
    fn ucb_bonus_dominates_rare_arm() {
        let mut z = UcbTable::new(1, 2, 0.5);
        z.counts = vec![5000.0, 1.0];
        z.rewards = vec![1500.0, 0.34];
        let row = z.ucb_row(0);
        assert!(row[1] > row[0], "bonus should dominate: {row:?}");
        assert!(row[1] > 4.0 && row[1] < 5.0);
        assert_eq!(z.argmax(0), 1);
    }

    #[test]
    fn ucb_equal_cells_tie_break_low() {
        let mut z = UcbTable::new(1, 3, 0.5);
        z.counts = vec![10.0; 3];
        z.rewards = vec![3.0; 3];
        assert_eq!(z.argmax(0), 0);
    }

    #[test]
    fn ucb_pretrain_cap_freezes_cell() {
        let mut z = UcbTable::new(1, 2, 0.5);
        z.counts[0] = 5000.0;
        z.rewards[0] = 1700.0;
        ucb_update(&mut z, 0, 0, 0.34, UcbPhase::Pretrain).unwrap();
        assert_eq!(z.counts[0], 5000.0);
        assert_eq!(z.rewards[0], 1700.0);
        // Below the cap both masses move.
        ucb_update(&mut z, 0, 1, 0.34, UcbPhase::Pretrain).unwrap();
        assert_eq!(z.counts[1], 1.0);
        assert_abs_diff_eq!(z.rewards[1], 0.34, epsilon = 1e-15);
    }

    #[test]
    fn ucb_test_phase_discounts() {
        let mut z = UcbTable::new(1, 2, 0.005);
        ucb_update(&mut z, 0, 0, 0.34, UcbPhase::Test).unwrap();
        assert_abs_diff_eq!(z.counts[0], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(z.rewards[0], 0.0017, epsilon = 1e-15);
        let mut frozen = UcbTable::new(1, 2, 0.0);
        frozen.counts = vec![3.0, 4.0];
        let before = frozen.clone();
        ucb_update(&mut frozen, 0, 1, 0.5, UcbPhase::Test).unwrap();
        assert_eq!(frozen, before);
    }

    #[test]
    fn random_inits_are_seed_deterministic() {
        let mut a = derive_rng(42, "init", &[0]);
        let mut b = derive_rng(42, "init", &[0]);
        let za = random_q_init(&mut a, 16, 4, (4.4, 6.8), 0.95).unwrap();
        let zb = random_q_init(&mut b, 16, 4, (4.4, 6.8), 0.95).unwrap();
        assert_eq!(za, zb);
        let ua = random_ucb_init(&mut a, 16, 4, (0.0, 0.4), 0.005).unwrap();
        let ub = random_ucb_init(&mut b, 16, 4, (0.0, 0.4), 0.005).unwrap();
        assert_eq!(ua, ub);
    }

    #[test]
    fn random_q_degenerate_interval_is_constant() {
        let mut rng = derive_rng(1, "init", &[]);
        let z = random_q_init(&mut rng, 4, 2, (6.8, 6.8), 0.95).unwrap();
        assert!(z.q.iter().all(|&x| x == 6.8));
        assert_eq!(z.argmax(0), 0);
        assert!(random_q_init(&mut rng, 4, 2, (1.0, 0.0), 0.95).is_err());
    }

    #[test]
    fn random_q_mean_matches_midpoint() {
        let mut rng = derive_rng(9, "init-audit", &[]);
        let (lo, hi) = (4.4, 6.8);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n / 8 {
            let z = random_q_init(&mut rng, 2, 4, (lo, hi), 0.95).unwrap();
            sum += z.q.iter().sum::<f64>();
        }
        let mean = sum / n as f64;
        let sigma = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * sigma);
    }

    #[test]
    fn random_ucb_means_stay_in_profit_range() {
        let mut rng = derive_rng(10, "ucb-audit", &[]);
        for _ in 0..200 {
            let z = random_ucb_init(&mut rng, 4, 4, (0.1, 0.4), 0.5).unwrap();
            for cell in 0..16 {
                assert!(z.counts[cell] >= 0.0 && z.counts[cell] <= UCB_COUNT_CAP);
                if z.counts[cell] > 0.0 {
                    let mean = z.rewards[cell] / z.counts[cell];
                    assert!((0.1 - 1e-9..=0.4 + 1e-9).contains(&mean));
                }
            }
        }
    }

    /// Pretrained-like fixture: take the best response to a fixed partner
    /// (so the greedy action is value-consistent, as after convergence) and
    /// perturb each row by a random increasing affine map.
    fn rescale_fixture() -> (RepeatedGame, Benchmarks, QTable, PolicyTable, PolicyTable) {
        let env = PricingEnv::default();
        let b = Benchmarks::solve(&env).unwrap();
        let grids = GridPair::build(&b, 4).unwrap();
        let game = RepeatedGame::pricing(&env, &grids).unwrap();
        let partner_actions: Vec<usize> = (0..16).map(|s| (s * 3 + 1) % 4).collect();
        let partner = PolicyTable::deterministic(4, 4, &partner_actions);
        let br = crate::values::best_response(&game, 0, &partner).unwrap();
        let mut z = QTable::new(16, 4, 0.15, 0.0, 0.0, env.gamma);
        let mut rng = derive_rng(77, "rescale", &[]);
        for s in 0..16 {
            let scale: f64 = rng.gen_range(0.2..3.0);
            let offset: f64 = rng.gen_range(-2.0..2.0);
            for a in 0..4 {
                z.q[s * 4 + a] = br.action_values[s * 4 + a] * scale + offset;
            }
        }
        let pi = q_decode(&z, 4, 0.0);
        assert_eq!(pi, br.policy);
        (game, b, z, pi, partner)
    }

    #[test]
    fn rescale_preserves_argmax_and_hits_target_top() {
        let (game, b, z, pi, partner) = rescale_fixture();
        for f in [0.0, 0.5, 1.0] {
            let out = rescale_q(&z, &pi, &partner, f, &game, &b, 0).unwrap();
            let mut top = f64::NEG_INFINITY;
            for s in 0..16 {
                assert_eq!(out.argmax(s), z.argmax(s), "argmax flipped at state {s}");
                top = top.max(out.row(s)[out.argmax(s)]);
            }
            let q_n = b.q_competitive(game.gamma);
            let q_m = b.q_monopoly(game.gamma);
            assert_abs_diff_eq!(top, q_n + f * (q_m - q_n), epsilon = 1e-8);
        }
    }

    #[test]
    fn rescale_preserves_within_state_order() {
        let (game, b, z, pi, partner) = rescale_fixture();
        let out = rescale_q(&z, &pi, &partner, 0.5, &game, &b, 0).unwrap();
        for s in 0..16 {
            let raw = z.row(s);
            let scaled = out.row(s);
            for a in 0..4 {
                for a2 in 0..4 {
                    if raw[a] > raw[a2] {
                        assert!(scaled[a] > scaled[a2] - 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn rescale_flat_row_maps_to_target_min() {
        let (game, b, mut z, _, partner) = rescale_fixture();
        for a in 0..4 {
            z.q[a] = 1.0;
        }
        let pi = q_decode(&z, 4, 0.0);
        let out = rescale_q(&z, &pi, &partner, 1.0, &game, &b, 0).unwrap();
        let row = out.row(0);
        assert!(row.iter().all(|&x| (x - row[0]).abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn q_update_touches_one_cell(
            seed in 0u64..1000,
            s in 0usize..4,
            a in 0usize..4,
            r in -1.0f64..1.0,
            ns in 0usize..4,
        ) {
            let mut rng = derive_rng(seed, "prop-q", &[]);
            let mut z = random_q_init(&mut rng, 4, 4, (0.0, 1.0), 0.9).unwrap();
            z.alpha = 0.3;
            let before = z.q.clone();
            q_update(&mut z, s, a, r, ns).unwrap();
            let mut diffs = 0;
            for (i, (x, y)) in before.iter().zip(&z.q).enumerate() {
                if x != y {
                    diffs += 1;
                    prop_assert_eq!(i, s * 4 + a);
                }
            }
            prop_assert!(diffs <= 1);
        }

        #[test]
        fn ucb_mean_term_is_scale_invariant(
            seed in 0u64..1000,
            k in 0.01f64..100.0,
        ) {
            let mut rng = derive_rng(seed, "prop-ucb", &[]);
            let mut z = random_ucb_init(&mut rng, 2, 3, (0.0, 1.0), 1.0).unwrap();
            for c in z.counts.iter_mut() {
                *c += 1.0; // make every arm visited
            }
            let mut scaled = z.clone();
            for c in scaled.counts.iter_mut() {
                *c *= k;
            }
            for r in scaled.rewards.iter_mut() {
                *r *= k;
            }
            for s in 0..2 {
                let base = s * 3;
                for a in 0..3 {
                    let mean = z.rewards[base + a] / z.counts[base + a];
                    let mean_scaled = scaled.rewards[base + a] / scaled.counts[base + a];
                    prop_assert!((mean - mean_scaled).abs() < 1e-9);
                }
            }
        }
    }
}

//! State spaces, policy tables, exact state-value solving, best responses
//! via value iteration, and the paired-cooperativeness / cooperative-
//! robustness metrics.
//!
//! A state is one round of prices `(own, opponent)` from the acting player's
//! perspective; the same physical round is state `(p_j, p_-j)` for one
//! player and `(p_-j, p_j)` for the other. All solvers work on a
//! [`RepeatedGame`], which is just the pair of stage payoff tables plus the
//! discount factor, so the prisoner's dilemma fixture and the pricing game
//! share one code path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{GridPair, PricingEnv};
use crate::{Error, Result};

/// Residual bound that every returned value vector must satisfy.
pub const VALUE_RESIDUAL_TOL: f64 = 1e-9;
/// Sup-norm convergence threshold for best-response value iteration.
pub const BR_SWEEP_TOL: f64 = 1e-10;
/// Sweep cap for best-response value iteration.
pub const BR_SWEEP_CAP: usize = 100_000;
/// Two actions tie in a best response when their action values differ by
/// less than this.
pub const BR_TIE_TOL: f64 = 1e-8;
/// Exhaustive worst-case search runs while the product of per-state tie
/// counts stays at or below this; beyond it, coordinate descent takes over.
pub const TIE_ENUM_CAP: u64 = 4096;

/// A repeated two-player stage game in per-player perspective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedGame {
    /// Number of actions per player.
    pub n_actions: [usize; 2],
    /// `payoff[j][own * n_opp + opp]`: player `j`'s stage payoff when it
    /// plays its own action index `own` and the opponent plays `opp`.
    pub payoff: [Vec<f64>; 2],
    /// Discount factor in [0, 1).
    pub gamma: f64,
}

impl RepeatedGame {
    /// Build the pricing base game from an environment and per-player grids.
    pub fn pricing(env: &PricingEnv, grids: &GridPair) -> Result<Self> {
        env.validate()?;
        let (n1, n2) = (grids.n_actions(0), grids.n_actions(1));
        let mut payoff = [vec![0.0; n1 * n2], vec![0.0; n2 * n1]];
        for i in 0..n1 {
            for k in 0..n2 {
                let r = env.stage_profit([grids.grids[0].prices[i], grids.grids[1].prices[k]])?;
                payoff[0][i * n2 + k] = r[0];
                payoff[1][k * n1 + i] = r[1];
            }
        }
        Ok(RepeatedGame {
            n_actions: [n1, n2],
            payoff,
            gamma: env.gamma,
        })
    }

    /// Build a symmetric game from a single own-perspective payoff table
    /// (`table[own][opp]`).
    pub fn symmetric(table: &[Vec<f64>], gamma: f64) -> Result<Self> {
        let n = table.len();
        if n == 0 || table.iter().any(|row| row.len() != n) {
            return Err(Error::invalid("payoff table must be square and non-empty"));
        }
        let flat: Vec<f64> = table.iter().flatten().copied().collect();
        Ok(RepeatedGame {
            n_actions: [n, n],
            payoff: [flat.clone(), flat],
            gamma,
        })
    }

    /// The prisoner's dilemma test fixture: actions (Cooperate, Defect) with
    /// payoffs R=3, S=0, T=5, P=1.
    pub fn prisoners_dilemma(gamma: f64) -> Self {
        RepeatedGame::symmetric(&[vec![3.0, 0.0], vec![5.0, 1.0]], gamma).unwrap()
    }

    /// Number of states from player `j`'s perspective.
    pub fn n_states(&self, player: usize) -> usize {
        self.n_actions[player] * self.n_actions[1 - player]
    }

    /// State index from player `j`'s perspective.
    #[inline]
    pub fn state(&self, player: usize, own: usize, opp: usize) -> usize {
        own * self.n_actions[1 - player] + opp
    }

    /// The same physical round seen from the opponent's perspective.
    #[inline]
    pub fn swap_state(&self, player: usize, s: usize) -> usize {
        let n_opp = self.n_actions[1 - player];
        let (own, opp) = (s / n_opp, s % n_opp);
        opp * self.n_actions[player] + own
    }

    /// Stage payoff of player `j` at one of its states.
    #[inline]
    pub fn reward(&self, player: usize, s: usize) -> f64 {
        self.payoff[player][s]
    }

    pub fn min_payoff(&self, player: usize) -> f64 {
        self.payoff[player].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_payoff(&self, player: usize) -> f64 {
        self.payoff[player].iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// A per-state action distribution over the owner's grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub n_own: usize,
    pub n_opp: usize,
    /// Row-major `(n_own * n_opp) x n_own` matrix of action probabilities.
    dist: Vec<f64>,
}

impl PolicyTable {
    pub fn from_rows(n_own: usize, n_opp: usize, dist: Vec<f64>) -> Result<Self> {
        let table = PolicyTable { n_own, n_opp, dist };
        table.validate()?;
        Ok(table)
    }

    /// Deterministic policy from one action index per state.
    pub fn deterministic(n_own: usize, n_opp: usize, actions: &[usize]) -> Self {
        assert_eq!(actions.len(), n_own * n_opp);
        let mut dist = vec![0.0; n_own * n_opp * n_own];
        for (s, &a) in actions.iter().enumerate() {
            assert!(a < n_own);
            dist[s * n_own + a] = 1.0;
        }
        PolicyTable { n_own, n_opp, dist }
    }

    /// Uniform policy over the owner's grid.
    pub fn uniform(n_own: usize, n_opp: usize) -> Self {
        let p = 1.0 / n_own as f64;
        PolicyTable {
            n_own,
            n_opp,
            dist: vec![p; n_own * n_opp * n_own],
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_own * self.n_opp
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.dist[s * self.n_own..(s + 1) * self.n_own]
    }

    /// Greedy action per state for a deterministic table, `None` if any row
    /// is stochastic.
    pub fn as_deterministic(&self) -> Option<Vec<usize>> {
        let mut actions = Vec::with_capacity(self.n_states());
        for s in 0..self.n_states() {
            let row = self.row(s);
            let a = row.iter().position(|&p| p == 1.0)?;
            if row.iter().enumerate().any(|(i, &p)| i != a && p != 0.0) {
                return None;
            }
            actions.push(a);
        }
        Some(actions)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dist.len() != self.n_own * self.n_opp * self.n_own {
            return Err(Error::invalid("policy table has inconsistent dimensions"));
        }
        for s in 0..self.n_states() {
            let row = self.row(s);
            if row.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) {
                return Err(Error::invalid(format!("policy row {s} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("policy row {s} sums to {sum}, not 1")));
            }
        }
        Ok(())
    }

    fn check_role(&self, game: &RepeatedGame, player: usize) -> Result<()> {
        if self.n_own != game.n_actions[player] || self.n_opp != game.n_actions[1 - player] {
            return Err(Error::GridMismatch(format!(
                "policy is {}x{} but player {player} needs {}x{}",
                self.n_own,
                self.n_opp,
                game.n_actions[player],
                game.n_actions[1 - player]
            )));
        }
        Ok(())
    }
}

/// Per-state discounted expected returns for one player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub v: Vec<f64>,
}

impl ValueVector {
    pub fn mean(&self) -> Result<f64> {
        mean_state_value(self)
    }
}

/// Uniform average of a value vector over all states.
pub fn mean_state_value(v: &ValueVector) -> Result<f64> {
    if v.v.is_empty() {
        return Err(Error::invalid("cannot average an empty state space"));
    }
    Ok(v.v.iter().sum::<f64>() / v.v.len() as f64)
}

/// Exact state values of `pi` (playing role `player`) against `pi_opp`.
///
/// Solves the linear system `(I - gamma T) V = r`, where `T` is the
/// state-transition matrix induced by the policy pair, then verifies the
/// fixed-point residual and applies iterative refinement if needed.
pub fn state_values(
    game: &RepeatedGame,
    player: usize,
    pi: &PolicyTable,
    pi_opp: &PolicyTable,
) -> Result<ValueVector> {
    pi.check_role(game, player)?;
    pi_opp.check_role(game, 1 - player)?;
    let n_own = game.n_actions[player];
    let n_opp = game.n_actions[1 - player];
    let n = n_own * n_opp;

    let mut system = DMatrix::<f64>::zeros(n, n);
    for s in 0..n {
        system[(s, s)] += 1.0;
        let own_row = pi.row(s);
        let opp_row = pi_opp.row(game.swap_state(player, s));
        for (a, &pa) in own_row.iter().enumerate() {
            if pa == 0.0 {
                continue;
            }
            for (b, &pb) in opp_row.iter().enumerate() {
                if pb == 0.0 {
                    continue;
                }
                system[(s, a * n_opp + b)] -= game.gamma * pa * pb;
            }
        }
    }
    let r = DVector::from_fn(n, |s, _| game.reward(player, s));
    let lu = system.clone().lu();
    let mut v = lu
        .solve(&r)
        .ok_or_else(|| Error::invalid("singular value system; check gamma < 1"))?;

    // Iterative refinement until the Bellman residual clears the bound.
    for _ in 0..8 {
        let residual = &r - &system * &v;
        if residual.amax() < VALUE_RESIDUAL_TOL {
            break;
        }
        if let Some(correction) = lu.solve(&residual) {
            v += correction;
        } else {
            break;
        }
    }
    let residual = (&r - &system * &v).amax();
    if residual >= VALUE_RESIDUAL_TOL {
        return Err(Error::NoConvergence {
            context: "state-value residual above tolerance after refinement".into(),
            iterations: 8,
            residual,
        });
    }
    Ok(ValueVector { v: v.data.into() })
}

/// Mean state values of a policy pair interacting with one another:
/// `(V-bar of pi_a vs pi_b, V-bar of pi_b vs pi_a)`.
pub fn paired_cooperativeness(
    game: &RepeatedGame,
    pi_a: &PolicyTable,
    pi_b: &PolicyTable,
) -> Result<(f64, f64)> {
    let va = state_values(game, 0, pi_a, pi_b)?;
    let vb = state_values(game, 1, pi_b, pi_a)?;
    Ok((va.mean()?, vb.mean()?))
}

/// A best response to a fixed opponent policy.
#[derive(Debug, Clone)]
pub struct BestResponse {
    /// Greedy policy, lowest action index on ties.
    pub policy: PolicyTable,
    /// Exact values of the greedy policy (equal to the optimal values).
    pub values: ValueVector,
    /// Optimal action values `Q*(s, a)`, row-major.
    pub action_values: Vec<f64>,
    /// Per state, the actions within [`BR_TIE_TOL`] of the best.
    pub tied_actions: Vec<Vec<usize>>,
}

/// Action values of a fixed value vector: `Q(s, a) = r(s) + gamma *
/// E_{b ~ pi_opp}[ V((a, b)) ]`. The stage reward accrues at `s` before the
/// transition, so it is action-independent.
fn action_values_from(
    game: &RepeatedGame,
    player: usize,
    v: &[f64],
    pi_opp: &PolicyTable,
) -> Vec<f64> {
    let n_own = game.n_actions[player];
    let n_opp = game.n_actions[1 - player];
    let n = n_own * n_opp;
    let mut q = vec![0.0; n * n_own];
    for s in 0..n {
        let opp_row = pi_opp.row(game.swap_state(player, s));
        let r = game.reward(player, s);
        for a in 0..n_own {
            let mut cont = 0.0;
            for (b, &pb) in opp_row.iter().enumerate() {
                if pb != 0.0 {
                    cont += pb * v[a * n_opp + b];
                }
            }
            q[s * n_own + a] = r + game.gamma * cont;
        }
    }
    q
}

/// Public wrapper over the action-value computation for a solved policy.
pub fn action_values(
    game: &RepeatedGame,
    player: usize,
    values: &ValueVector,
    pi_opp: &PolicyTable,
) -> Vec<f64> {
    action_values_from(game, player, &values.v, pi_opp)
}

fn greedy_from_q(q: &[f64], n_states: usize, n_own: usize) -> Vec<usize> {
    (0..n_states)
        .map(|s| {
            let row = &q[s * n_own..(s + 1) * n_own];
            let mut best = 0;
            for (a, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = a;
                }
            }
            best
        })
        .collect()
}

/// Best response of `player` to a fixed opponent policy, by value iteration
/// on `V*(s) = r(s) + gamma max_a E_b[V*((a, b))]` followed by an exact
/// linear solve of the resulting greedy policy.
pub fn best_response(
    game: &RepeatedGame,
    player: usize,
    pi_opp: &PolicyTable,
) -> Result<BestResponse> {
    pi_opp.check_role(game, 1 - player)?;
    let n_own = game.n_actions[player];
    let n_opp = game.n_actions[1 - player];
    let n = n_own * n_opp;

    let opp_rows: Vec<&[f64]> = (0..n).map(|s| pi_opp.row(game.swap_state(player, s))).collect();
    let mut v = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    let mut sweeps = 0;
    let mut delta = f64::INFINITY;
    while sweeps < BR_SWEEP_CAP {
        sweeps += 1;
        delta = 0.0f64;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..n_own {
                let mut cont = 0.0;
                for (b, &pb) in opp_rows[s].iter().enumerate() {
                    if pb != 0.0 {
                        cont += pb * v[a * n_opp + b];
                    }
                }
                best = best.max(cont);
            }
            next[s] = game.reward(player, s) + game.gamma * best;
            delta = delta.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if delta < BR_SWEEP_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            context: "best-response value iteration".into(),
            iterations: sweeps,
            residual: delta,
        });
    }

    // Polish with exact solves: extract the greedy policy, solve it
    // exactly, and repeat until the greedy choice is stable.
    let mut q = action_values_from(game, player, &v, pi_opp);
    let mut actions = greedy_from_q(&q, n, n_own);
    for _ in 0..64 {
        let policy = PolicyTable::deterministic(n_own, n_opp, &actions);
        let exact = state_values(game, player, &policy, pi_opp)?;
        q = action_values_from(game, player, &exact.v, pi_opp);
        let improved = greedy_from_q(&q, n, n_own);
        if improved == actions {
            let tied_actions = (0..n)
                .map(|s| {
                    let row = &q[s * n_own..(s + 1) * n_own];
                    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    (0..n_own).filter(|&a| best - row[a] < BR_TIE_TOL).collect()
                })
                .collect();
            return Ok(BestResponse {
                policy,
                values: exact,
                action_values: q,
                tied_actions,
            });
        }
        actions = improved;
    }
    Err(Error::NoConvergence {
        context: "greedy polish of the best response did not stabilize".into(),
        iterations: 64,
        residual: delta,
    })
}

/// Cooperative robustness of a policy: its mean state value against the
/// worst-case best response, paired with that response's value against it.
/// Returns `(V-bar of pi vs pi_b, V-bar of pi_b vs pi, pi_b)`.
///
/// All greedy selections from the tied action sets are optimal, so the
/// responder's own value is selection-independent; the worst case minimizes
/// the *defender's* mean value over the tied set — exhaustively while the
/// number of combinations is small, by coordinate descent beyond that.
pub fn cooperative_robustness(
    game: &RepeatedGame,
    player: usize,
    pi: &PolicyTable,
) -> Result<(f64, f64, PolicyTable)> {
    pi.check_role(game, player)?;
    let responder = 1 - player;
    let br = best_response(game, responder, pi)?;
    let v_responder = br.values.mean()?;
    let n_states = game.n_states(responder);
    let n_own = game.n_actions[responder];

    let combinations: u64 = br
        .tied_actions
        .iter()
        .map(|t| t.len() as u64)
        .try_fold(1u64, u64::checked_mul)
        .unwrap_or(u64::MAX);

    let defender_mean = |actions: &[usize]| -> Result<f64> {
        let cand = PolicyTable::deterministic(n_own, game.n_actions[player], actions);
        state_values(game, player, pi, &cand)?.mean()
    };

    let mut best_actions: Vec<usize> = br.policy.as_deterministic().expect("greedy policy is deterministic");
    let mut best_mean = defender_mean(&best_actions)?;

    if combinations <= TIE_ENUM_CAP {
        let mut idx = vec![0usize; n_states];
        loop {
            let actions: Vec<usize> = (0..n_states).map(|s| br.tied_actions[s][idx[s]]).collect();
            let mean = defender_mean(&actions)?;
            if mean < best_mean - 1e-12 {
                best_mean = mean;
                best_actions = actions;
            }
            // Mixed-radix increment over the tie sets.
            let mut s = 0;
            loop {
                if s == n_states {
                    break;
                }
                idx[s] += 1;
                if idx[s] < br.tied_actions[s].len() {
                    break;
                }
                idx[s] = 0;
                s += 1;
            }
            if s == n_states {
                break;
            }
        }
    } else {
        // Coordinate descent over states: re-solve after each single-state
        // change, keep strict improvements, stop on a full stale pass.
        loop {
            let mut improved = false;
            for s in 0..n_states {
                if br.tied_actions[s].len() == 1 {
                    continue;
                }
                let current = best_actions[s];
                for &a in &br.tied_actions[s] {
                    if a == current {
                        continue;
                    }
                    let mut cand = best_actions.clone();
                    cand[s] = a;
                    let mean = defender_mean(&cand)?;
                    if mean < best_mean - 1e-12 {
                        best_mean = mean;
                        best_actions = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }

    let pi_b = PolicyTable::deterministic(n_own, game.n_actions[player], &best_actions);
    Ok((best_mean, v_responder, pi_b))
}

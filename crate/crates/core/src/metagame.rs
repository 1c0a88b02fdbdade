//! Empirical meta-game sampling: draw strategies from meta-strategies,
//! simulate two-player base games over random initial states, and estimate
//! payoff bi-matrices.
//!
//! Every random stream is derived from `(master seed, label, indices)`, and
//! cell results land in preallocated slots, so results are byte-identical
//! regardless of the worker count.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{
    random_q_init, random_ucb_init, rescale_q, Adaptation, Representation, Strategy,
};
use crate::env::{Benchmarks, GridPair, PricingEnv};
use crate::pretrain::{Algorithm, Category, PolicyPool};
use crate::seed::derive_rng;
use crate::values::{PolicyTable, RepeatedGame};
use crate::{Error, Result};

/// Cap on redraw attempts before concluding the pool is too small.
pub const REDRAW_CAP: usize = 1_000;

/// A family of strategies: an initial-policy category paired with an
/// adaptation rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaStrategy {
    /// Display label, e.g. "RC 0.005".
    pub label: String,
    pub category: Category,
    pub adaptation: Adaptation,
    pub algorithm: Algorithm,
}

impl MetaStrategy {
    pub fn q(category: Category, alpha: f64, f: f64) -> Self {
        MetaStrategy {
            label: format!("{category} {alpha}"),
            category,
            adaptation: Adaptation::q(alpha, f),
            algorithm: Algorithm::Q,
        }
    }

    pub fn ucb(category: Category, alpha: f64) -> Self {
        MetaStrategy {
            label: format!("{category} {alpha}"),
            category,
            adaptation: Adaptation {
                alpha,
                ..Adaptation::default()
            },
            algorithm: Algorithm::Ucb,
        }
    }
}

/// Per-cell run statistics of one meta iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    /// Mean per-round payoff of each base run, (row, col).
    pub run_payoffs: Vec<[f64; 2]>,
    /// Cumulative payoff totals of each run.
    pub run_totals: Vec<[f64; 2]>,
    /// Initial state (row perspective) of each run.
    pub run_s0: Vec<usize>,
    /// Argmax changes accumulated over all runs, per player.
    pub update_counts: [u64; 2],
    /// Decoded policies of the drawn instances before any adaptation.
    pub initial_policies: [PolicyTable; 2],
    /// Decoded end-of-horizon policies from the last run.
    pub final_policies: [PolicyTable; 2],
    /// Mean payoff (averaged over the two players and all runs) at evenly
    /// spaced horizon prefixes.
    pub mean_payoff_series: Vec<f64>,
}

/// One sampled empirical meta-game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaGameResult {
    pub meta_iter: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major `M_row x M_col` matrix of (row payoff, col payoff), each
    /// the mean per-round payoff over runs.
    pub payoff: Vec<[f64; 2]>,
    pub per_cell: Vec<CellStats>,
    /// Drawn pool ids per meta-strategy (None for random initializations).
    pub sampled_row_ids: Vec<Option<u32>>,
    pub sampled_col_ids: Vec<Option<u32>>,
    pub horizon: u64,
    pub n_base: usize,
}

impl MetaGameResult {
    pub fn n_rows(&self) -> usize {
        self.row_labels.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> &CellStats {
        &self.per_cell[row * self.n_cols() + col]
    }

    pub fn payoff_at(&self, row: usize, col: usize) -> [f64; 2] {
        self.payoff[row * self.n_cols() + col]
    }
}

/// Sampling options of Algorithm-style meta-game estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetagameOptions {
    pub n_meta: usize,
    pub n_base: usize,
    pub horizon: u64,
    /// Share one initial state across all profiles of a (meta iteration,
    /// run) pair. Refines the estimator without changing marginals.
    pub share_initial_state: bool,
    /// Reuse one drawn instance across meta-strategies of the same
    /// category within a meta iteration.
    pub share_category_instance: bool,
    /// Number of evenly spaced horizon prefixes kept in the payoff series.
    pub series_points: usize,
}

impl Default for MetagameOptions {
    fn default() -> Self {
        MetagameOptions {
            n_meta: 40,
            n_base: 100,
            horizon: 10_000,
            share_initial_state: true,
            share_category_instance: false,
            series_points: 100,
        }
    }
}

/// Everything needed to draw instances from one pool.
pub struct DrawContext<'a> {
    pub pool: &'a PolicyPool,
    pub game: RepeatedGame,
    pub benchmarks: Benchmarks,
}

impl<'a> DrawContext<'a> {
    pub fn new(pool: &'a PolicyPool) -> Result<Self> {
        let game = RepeatedGame::pricing(&pool.env, &pool.grids)?;
        let benchmarks = Benchmarks::solve(&pool.env)?;
        Ok(DrawContext {
            pool,
            game,
            benchmarks,
        })
    }
}

/// Build a playable instance from one pool entry: the raw representation
/// with the meta-strategy's adaptation installed, Q tables rescaled by `f`.
pub fn instantiate_entry(
    ctx: &DrawContext,
    id: u32,
    adaptation: &Adaptation,
    rescale: bool,
    meta_label: &str,
) -> Result<Strategy> {
    let entry = ctx
        .pool
        .entry(id)
        .ok_or_else(|| Error::PoolFormat(format!("unknown pool id {id}")))?;
    let role = (entry.id % 2) as usize;
    let representation = match &entry.raw {
        Representation::Q(z) => {
            let mut z = if rescale {
                let partner = ctx
                    .pool
                    .entry(entry.partner_id)
                    .ok_or_else(|| Error::PoolFormat(format!("dangling partner id {}", entry.partner_id)))?;
                rescale_q(
                    z,
                    &entry.policy,
                    &partner.policy,
                    adaptation.f,
                    &ctx.game,
                    &ctx.benchmarks,
                    role,
                )?
            } else {
                z.clone()
            };
            z.alpha = adaptation.alpha;
            z.epsilon = adaptation.epsilon;
            z.epsilon_decay = adaptation.epsilon_decay;
            Representation::Q(z)
        }
        Representation::Ucb(z) => {
            let mut z = z.clone();
            z.alpha = adaptation.alpha;
            Representation::Ucb(z)
        }
    };
    Ok(Strategy {
        representation,
        adaptation: adaptation.clone(),
        policy_id: Some(entry.id),
        partner_id: Some(entry.partner_id),
        meta_label: meta_label.to_string(),
    })
}

fn random_instance(ctx: &DrawContext, meta: &MetaStrategy, rng: &mut impl Rng) -> Result<Strategy> {
    let n_states = ctx.game.n_states(0);
    let n_actions = ctx.game.n_actions[0];
    let gamma = ctx.pool.env.gamma;
    let representation = match meta.algorithm {
        Algorithm::Q => {
            let interval = (
                ctx.benchmarks.q_competitive(gamma),
                ctx.benchmarks.q_monopoly(gamma),
            );
            let mut z = random_q_init(rng, n_states, n_actions, interval, gamma)?;
            z.alpha = meta.adaptation.alpha;
            z.epsilon = meta.adaptation.epsilon;
            z.epsilon_decay = meta.adaptation.epsilon_decay;
            Representation::Q(z)
        }
        Algorithm::Ucb => {
            let range = (ctx.game.min_payoff(0), ctx.game.max_payoff(0));
            let mut z = random_ucb_init(rng, n_states, n_actions, range, meta.adaptation.alpha)?;
            z.alpha = meta.adaptation.alpha;
            Representation::Ucb(z)
        }
    };
    Ok(Strategy {
        representation,
        adaptation: meta.adaptation.clone(),
        policy_id: None,
        partner_id: None,
        meta_label: meta.label.clone(),
    })
}

/// Uniformly draw one strategy for a meta-strategy, redrawing while the
/// candidate id or its pretraining partner is forbidden.
pub fn draw_strategy(
    meta: &MetaStrategy,
    ctx: &DrawContext,
    rng: &mut impl Rng,
    forbidden_ids: &[u32],
) -> Result<Strategy> {
    if meta.category == Category::Rd {
        return random_instance(ctx, meta, rng);
    }
    if meta.algorithm != ctx.pool.algorithm {
        return Err(Error::invalid(format!(
            "meta-strategy '{}' is {} but the pool holds {} policies",
            meta.label, meta.algorithm, ctx.pool.algorithm
        )));
    }
    let ids = ctx.pool.category_ids(meta.category);
    if ids.is_empty() {
        return Err(Error::EmptyCategory(meta.category.to_string()));
    }
    for _ in 0..REDRAW_CAP {
        let id = ids[rng.gen_range(0..ids.len())];
        let entry = ctx.pool.entry(id).expect("category ids exist");
        if forbidden_ids.contains(&id) || forbidden_ids.contains(&entry.partner_id) {
            continue;
        }
        let rescale = matches!(entry.raw, Representation::Q(_));
        return instantiate_entry(ctx, id, &meta.adaptation, rescale, &meta.label);
    }
    Err(Error::RedrawExhausted(meta.label.clone()))
}

/// Outcome of simulating one strategy profile.
#[derive(Debug, Clone)]
pub struct ProfileRun {
    /// Stage payoffs realized each round, (player a, player b).
    pub payoffs: Vec<[f64; 2]>,
    /// Cumulative argmax-change counts per round.
    pub update_series: Vec<[u32; 2]>,
    /// The strategies after the horizon, representations included.
    pub final_strategies: [Strategy; 2],
}

impl ProfileRun {
    /// Mean per-round payoff over the prefix `0..t`.
    pub fn mean_prefix(&self, t: usize) -> [f64; 2] {
        let t = t.min(self.payoffs.len()).max(1);
        let mut sum = [0.0; 2];
        for round in &self.payoffs[..t] {
            sum[0] += round[0];
            sum[1] += round[1];
        }
        [sum[0] / t as f64, sum[1] / t as f64]
    }
}

/// Core simulation loop shared by the collecting and streaming paths.
///
/// Each round both agents decode an action from the previous round's
/// state, the new state's profits are paid, and both update.
fn run_profile_inner(
    strat_a: &mut Strategy,
    strat_b: &mut Strategy,
    game: &RepeatedGame,
    s0: usize,
    horizon: u64,
    rng: &mut impl Rng,
    mut on_round: impl FnMut(u64, [f64; 2], [u64; 2]),
) -> Result<()> {
    if horizon == 0 {
        return Err(Error::invalid("profile horizon must be positive"));
    }
    let n = [game.n_actions[0], game.n_actions[1]];
    if s0 >= n[0] * n[1] {
        return Err(Error::invalid(format!("initial state {s0} out of range")));
    }
    let mut state = [s0, game.swap_state(0, s0)];
    let mut updates = [0u64; 2];
    for t in 0..horizon {
        let a = [strat_a.act(state[0], t, rng), strat_b.act(state[1], t, rng)];
        let next = [a[0] * n[1] + a[1], a[1] * n[0] + a[0]];
        let rewards = [game.reward(0, next[0]), game.reward(1, next[1])];
        if strat_a.update(state[0], a[0], rewards[0], next[0])? {
            updates[0] += 1;
        }
        if strat_b.update(state[1], a[1], rewards[1], next[1])? {
            updates[1] += 1;
        }
        state = next;
        on_round(t, rewards, updates);
    }
    Ok(())
}

/// Simulate one profile from a given initial state, collecting the full
/// per-round payoff and update-count series.
pub fn simulate_profile(
    strat_a: &Strategy,
    strat_b: &Strategy,
    game: &RepeatedGame,
    s0: usize,
    horizon: u64,
    rng: &mut impl Rng,
) -> Result<ProfileRun> {
    check_profile_grids(strat_a, strat_b, game)?;
    let mut a = strat_a.clone();
    let mut b = strat_b.clone();
    let mut payoffs = Vec::with_capacity(horizon as usize);
    let mut update_series = Vec::with_capacity(horizon as usize);
    run_profile_inner(&mut a, &mut b, game, s0, horizon, rng, |_, r, u| {
        payoffs.push(r);
        update_series.push([u[0] as u32, u[1] as u32]);
    })?;
    Ok(ProfileRun {
        payoffs,
        update_series,
        final_strategies: [a, b],
    })
}

fn check_profile_grids(strat_a: &Strategy, strat_b: &Strategy, game: &RepeatedGame) -> Result<()> {
    let dims = |s: &Strategy| match &s.representation {
        Representation::Q(z) => (z.n_states, z.n_actions),
        Representation::Ucb(z) => (z.n_states, z.n_actions),
    };
    let (sa, aa) = dims(strat_a);
    let (sb, ab) = dims(strat_b);
    let n = [game.n_actions[0], game.n_actions[1]];
    if aa != n[0] || sa != n[0] * n[1] || ab != n[1] || sb != n[0] * n[1] {
        return Err(Error::GridMismatch(format!(
            "profile tables ({sa}x{aa}, {sb}x{ab}) do not match the game grids {n:?}"
        )));
    }
    Ok(())
}

struct CellJob {
    meta_iter: usize,
    row: usize,
    col: usize,
}

/// Run the full meta-game estimation.
///
/// Per meta iteration one strategy is drawn per meta-strategy (per role in
/// asymmetric games); all row x col profiles are then simulated over
/// `n_base` fresh initial states. Within any single profile, the two
/// instances never share a policy id or a partner link; conflicting
/// profiles redraw the column instance from a dedicated stream.
pub fn run_metagame(
    env: &PricingEnv,
    grids: &GridPair,
    metas_row: &[MetaStrategy],
    metas_col: &[MetaStrategy],
    pools: &[&PolicyPool],
    master_seed: u64,
    options: &MetagameOptions,
) -> Result<Vec<MetaGameResult>> {
    if metas_row.is_empty() || metas_col.is_empty() {
        return Err(Error::Config("meta-strategy list is empty".into()));
    }
    if pools.is_empty() || pools.len() > 2 {
        return Err(Error::Config("expected one pool (symmetric) or two pools (one per role)".into()));
    }
    let game = RepeatedGame::pricing(env, grids)?;
    let ctx_row = DrawContext::new(pools[0])?;
    let ctx_col = DrawContext::new(pools[pools.len() - 1])?;
    for (role, ctx) in [(0usize, &ctx_row), (1, &ctx_col)] {
        if ctx.pool.grids.n_actions(role) != grids.n_actions(role) {
            return Err(Error::GridMismatch(format!(
                "pool for role {role} has {} prices, the game needs {}",
                ctx.pool.grids.n_actions(role),
                grids.n_actions(role)
            )));
        }
    }

    let (m_rows, m_cols) = (metas_row.len(), metas_col.len());
    let mut results = Vec::with_capacity(options.n_meta);

    for meta_iter in 0..options.n_meta {
        // Draw this iteration's strategy set, one instance per
        // meta-strategy and role.
        let draw_role = |role: usize, metas: &[MetaStrategy], ctx: &DrawContext| -> Result<Vec<Strategy>> {
            let mut drawn: Vec<Strategy> = Vec::with_capacity(metas.len());
            let mut per_category: std::collections::HashMap<Category, usize> = Default::default();
            for (m, meta) in metas.iter().enumerate() {
                if options.share_category_instance {
                    if let Some(&idx) = per_category.get(&meta.category) {
                        let reused = Strategy {
                            adaptation: meta.adaptation.clone(),
                            meta_label: meta.label.clone(),
                            ..drawn[idx].clone()
                        };
                        // Reinstall this meta's adaptation on the shared id.
                        let strat = if let Some(id) = reused.policy_id {
                            instantiate_entry(
                                ctx,
                                id,
                                &meta.adaptation,
                                matches!(reused.representation, Representation::Q(_)),
                                &meta.label,
                            )?
                        } else {
                            reused
                        };
                        drawn.push(strat);
                        continue;
                    }
                    per_category.insert(meta.category, m);
                }
                let mut rng = derive_rng(master_seed, "metagame-draw", &[meta_iter as u64, role as u64, m as u64]);
                drawn.push(draw_strategy(meta, ctx, &mut rng, &[])?);
            }
            Ok(drawn)
        };
        let row_instances = draw_role(0, metas_row, &ctx_row)?;
        let col_instances = draw_role(1, metas_col, &ctx_col)?;

        // Resolve per-profile conflicts (same id or partnered policies,
        // or literally identical random draws on the diagonal).
        let mut profile_cols: Vec<Vec<Strategy>> = Vec::with_capacity(m_rows);
        for (r, row_inst) in row_instances.iter().enumerate() {
            let mut cols = Vec::with_capacity(m_cols);
            for (c, col_inst) in col_instances.iter().enumerate() {
                let conflict = match (row_inst.policy_id, col_inst.policy_id) {
                    (Some(a), Some(b)) => a == b || row_inst.partner_id == Some(b),
                    // Two random initializations collide only when they came
                    // from the same draw stream (same meta index, symmetric
                    // single-pool run).
                    (None, None) => pools.len() == 1 && r == c && metas_row[r] == metas_col[c],
                    _ => false,
                };
                if conflict {
                    let mut rng = derive_rng(
                        master_seed,
                        "metagame-redraw",
                        &[meta_iter as u64, r as u64, c as u64],
                    );
                    let forbidden: Vec<u32> = row_inst
                        .policy_id
                        .into_iter()
                        .chain(row_inst.partner_id)
                        .collect();
                    cols.push(draw_strategy(&metas_col[c], &ctx_col, &mut rng, &forbidden)?);
                } else {
                    cols.push(col_inst.clone());
                }
            }
            profile_cols.push(cols);
        }

        // Shared initial states for this iteration.
        let shared_s0: Vec<usize> = (0..options.n_base)
            .map(|run| {
                let mut rng = derive_rng(master_seed, "metagame-s0", &[meta_iter as u64, run as u64]);
                rng.gen_range(0..game.n_states(0))
            })
            .collect();

        let jobs: Vec<CellJob> = (0..m_rows)
            .flat_map(|row| (0..m_cols).map(move |col| CellJob { meta_iter, row, col }))
            .collect();

        let cells: Vec<Result<CellStats>> = jobs
            .par_iter()
            .map(|job| {
                simulate_cell(
                    &game,
                    &row_instances[job.row],
                    &profile_cols[job.row][job.col],
                    job,
                    &shared_s0,
                    master_seed,
                    options,
                )
            })
            .collect();

        let mut per_cell = Vec::with_capacity(m_rows * m_cols);
        for cell in cells {
            per_cell.push(cell?);
        }
        let payoff: Vec<[f64; 2]> = per_cell
            .iter()
            .map(|c| {
                let n = c.run_payoffs.len().max(1) as f64;
                let sum = c
                    .run_payoffs
                    .iter()
                    .fold([0.0; 2], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
                [sum[0] / n, sum[1] / n]
            })
            .collect();

        results.push(MetaGameResult {
            meta_iter,
            row_labels: metas_row.iter().map(|m| m.label.clone()).collect(),
            col_labels: metas_col.iter().map(|m| m.label.clone()).collect(),
            payoff,
            per_cell,
            sampled_row_ids: row_instances.iter().map(|s| s.policy_id).collect(),
            sampled_col_ids: col_instances.iter().map(|s| s.policy_id).collect(),
            horizon: options.horizon,
            n_base: options.n_base,
        });
    }
    Ok(results)
}

fn simulate_cell(
    game: &RepeatedGame,
    row_instance: &Strategy,
    col_instance: &Strategy,
    job: &CellJob,
    shared_s0: &[usize],
    master_seed: u64,
    options: &MetagameOptions,
) -> Result<CellStats> {
    let n_runs = shared_s0.len();
    let horizon = options.horizon;
    let points = options.series_points.clamp(1, horizon as usize);
    let stride = horizon.div_ceil(points as u64);

    let mut run_payoffs = Vec::with_capacity(n_runs);
    let mut run_totals = Vec::with_capacity(n_runs);
    let mut run_s0 = Vec::with_capacity(n_runs);
    let mut update_counts = [0u64; 2];
    let mut series_sum = vec![0.0; horizon.div_ceil(stride) as usize];
    let initial_policies = [
        row_instance.policy(game.n_actions[1]),
        col_instance.policy(game.n_actions[0]),
    ];
    let mut final_policies = None;

    for run in 0..n_runs {
        let s0 = if options.share_initial_state {
            shared_s0[run]
        } else {
            let mut rng = derive_rng(
                master_seed,
                "metagame-s0-cell",
                &[job.meta_iter as u64, run as u64, job.row as u64, job.col as u64],
            );
            rng.gen_range(0..game.n_states(0))
        };
        let mut rng = derive_rng(
            master_seed,
            "metagame-sim",
            &[job.meta_iter as u64, job.row as u64, job.col as u64, run as u64],
        );
        let mut a = row_instance.clone();
        let mut b = col_instance.clone();
        let mut sum = [0.0f64; 2];
        let mut last_updates = [0u64; 2];
        {
            let series = &mut series_sum;
            run_profile_inner(&mut a, &mut b, game, s0, horizon, &mut rng, |t, r, u| {
                sum[0] += r[0];
                sum[1] += r[1];
                last_updates = u;
                if (t + 1) % stride == 0 || t + 1 == horizon {
                    let idx = (t / stride) as usize;
                    series[idx] += 0.5 * (sum[0] + sum[1]) / (t + 1) as f64;
                }
            })?;
        }
        run_totals.push(sum);
        run_payoffs.push([sum[0] / horizon as f64, sum[1] / horizon as f64]);
        run_s0.push(s0);
        update_counts[0] += last_updates[0];
        update_counts[1] += last_updates[1];
        if run + 1 == n_runs {
            final_policies = Some([
                a.policy(game.n_actions[1]),
                b.policy(game.n_actions[0]),
            ]);
        }
    }

    for v in series_sum.iter_mut() {
        *v /= n_runs as f64;
    }
    Ok(CellStats {
        run_payoffs,
        run_totals,
        run_s0,
        update_counts,
        initial_policies,
        final_policies: final_policies.expect("at least one run"),
        mean_payoff_series: series_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretrain::{build_pool, HyperRanges, PretrainConfig, TertileMethod};
    use approx::assert_abs_diff_eq;

    fn desk_pool() -> (PricingEnv, GridPair, PolicyPool) {
        let env = PricingEnv::default();
        let b = Benchmarks::solve(&env).unwrap();
        let grids = GridPair::build(&b, 4).unwrap();
        let config = PretrainConfig {
            algorithm: Algorithm::Q,
            n_pairs: 30,
            ranges: HyperRanges {
                alpha: (0.05, 0.25),
                epsilon0: (1.0, 1.0),
                delta: (2e-4, 8e-4),
                count_cap: 200.0,
            },
            convergence_window: 2_000,
            round_cap: 400_000,
            tertile_method: TertileMethod::Range,
        };
        let pool = build_pool(&env, &grids, &config, 1234).unwrap();
        (env, grids, pool)
    }

    fn frozen_monopoly_strategy(game: &RepeatedGame) -> Strategy {
        // A deterministic table absorbing at the top price with alpha 0.
        let n = game.n_actions[0];
        let mut z = crate::agents::QTable::new(n * n, n, 0.0, 0.0, 0.0, game.gamma);
        for s in 0..n * n {
            z.q[s * n + (n - 1)] = 1.0;
        }
        Strategy {
            representation: Representation::Q(z),
            adaptation: Adaptation::q(0.0, 1.0),
            policy_id: None,
            partner_id: None,
            meta_label: "frozen".into(),
        }
    }

    #[test]
    fn frozen_absorbing_profile_pays_the_monopoly_profit() {
        let env = PricingEnv::default();
        let b = Benchmarks::solve(&env).unwrap();
        let grids = GridPair::build(&b, 4).unwrap();
        let game = RepeatedGame::pricing(&env, &grids).unwrap();
        let strat = frozen_monopoly_strategy(&game);
        let s0 = game.state(0, 3, 3);
        let mut rng = derive_rng(0, "test", &[]);
        let run = simulate_profile(&strat, &strat, &game, s0, 500, &mut rng).unwrap();
        let r_top = game.reward(0, s0);
        assert_abs_diff_eq!(r_top, b.r_bar_monopoly, epsilon = 1e-9);
        for t in [1usize, 10, 499] {
            let m = run.mean_prefix(t + 1);
            assert_abs_diff_eq!(m[0], r_top, epsilon = 1e-12);
            assert_abs_diff_eq!(m[1], r_top, epsilon = 1e-12);
        }
        assert_eq!(run.update_series.last().unwrap(), &[0, 0]);
    }

    #[test]
    fn deterministic_mirror_on_symmetric_env() {
        let (env, grids, pool) = desk_pool();
        let game = RepeatedGame::pricing(&env, &grids).unwrap();
        let ctx = DrawContext::new(&pool).unwrap();
        let a = instantiate_entry(&ctx, 0, &Adaptation::q(0.05, 1.0), true, "a").unwrap();
        let b = instantiate_entry(&ctx, 2, &Adaptation::q(0.05, 1.0), true, "b").unwrap();
        let s0 = game.state(0, 1, 2);
        let swapped = game.state(0, 2, 1);
        let mut rng = derive_rng(7, "mirror", &[]);
        let run_ab = simulate_profile(&a, &b, &game, s0, 200, &mut rng).unwrap();
        let run_ba = simulate_profile(&b, &a, &game, swapped, 200, &mut rng).unwrap();
        for t in 0..200 {
            assert_abs_diff_eq!(run_ab.payoffs[t][0], run_ba.payoffs[t][1], epsilon = 1e-12);
            assert_abs_diff_eq!(run_ab.payoffs[t][1], run_ba.payoffs[t][0], epsilon = 1e-12);
        }
    }

    #[test]
    fn horizon_prefix_consistency() {
        let (env, grids, pool) = desk_pool();
        let game = RepeatedGame::pricing(&env, &grids).unwrap();
        let ctx = DrawContext::new(&pool).unwrap();
        // Exploration on, so the rng stream matters.
        let adaptation = Adaptation {
            alpha: 0.1,
            f: 1.0,
            epsilon: 0.2,
            epsilon_decay: 1e-3,
        };
        let a = instantiate_entry(&ctx, 0, &adaptation, true, "a").unwrap();
        let b = instantiate_entry(&ctx, 2, &adaptation, true, "b").unwrap();
        let long = simulate_profile(&a, &b, &game, 0, 200, &mut derive_rng(3, "p", &[])).unwrap();
        let short = simulate_profile(&a, &b, &game, 0, 60, &mut derive_rng(3, "p", &[])).unwrap();
        assert_eq!(&long.payoffs[..60], &short.payoffs[..]);
        assert_eq!(&long.update_series[..60], &short.update_series[..]);
    }

    #[test]
    fn draw_respects_forbidden_ids() {
        let (_, _, pool) = desk_pool();
        let ctx = DrawContext::new(&pool).unwrap();
        let meta = MetaStrategy::q(Category::Rc, 0.05, 1.0);
        let rc_ids = pool.category_ids(Category::Rc);
        assert!(!rc_ids.is_empty());
        let mut rng = derive_rng(5, "draw", &[]);
        for _ in 0..200 {
            let forbidden = [rc_ids[0], pool.entry(rc_ids[0]).unwrap().partner_id];
            let s = draw_strategy(&meta, &ctx, &mut rng, &forbidden).unwrap();
            let id = s.policy_id.unwrap();
            assert!(!forbidden.contains(&id));
            assert!(rc_ids.contains(&id));
        }
    }

    #[test]
    fn draw_errors_on_empty_or_exhausted_pools() {
        let (env, grids, mut pool) = desk_pool();
        let ctx = DrawContext::new(&pool).unwrap();
        let meta = MetaStrategy::q(Category::Uncategorized, 0.05, 1.0);
        let mut rng = derive_rng(6, "draw", &[]);
        // Uncategorized is never drawable as a category with members here.
        if pool.category_ids(Category::Uncategorized).is_empty() {
            assert!(matches!(
                draw_strategy(&meta, &ctx, &mut rng, &[]),
                Err(Error::EmptyCategory(_))
            ));
        }
        // A two-entry pool of partners with both ids forbidden exhausts.
        pool.entries.truncate(2);
        pool.entries[0].category = Category::Rc;
        pool.entries[1].category = Category::Rc;
        let _ = (&env, &grids);
        let ctx = DrawContext::new(&pool).unwrap();
        let meta = MetaStrategy::q(Category::Rc, 0.05, 1.0);
        let err = draw_strategy(&meta, &ctx, &mut rng, &[0, 1]).unwrap_err();
        assert!(matches!(err, Error::RedrawExhausted(_)));
    }

    #[test]
    fn rd_meta_ignores_the_pool() {
        let (_, _, pool) = desk_pool();
        let ctx = DrawContext::new(&pool).unwrap();
        let meta = MetaStrategy::q(Category::Rd, 0.5, 1.0);
        let mut rng = derive_rng(8, "draw", &[]);
        let s = draw_strategy(&meta, &ctx, &mut rng, &[]).unwrap();
        assert_eq!(s.policy_id, None);
        match &s.representation {
            Representation::Q(z) => {
                let lo = ctx.benchmarks.q_competitive(0.95);
                let hi = ctx.benchmarks.q_monopoly(0.95);
                assert!(z.q.iter().all(|&x| x >= lo && x <= hi));
            }
            _ => panic!("expected a Q table"),
        }
    }

    #[test]
    fn category_draws_are_uniform() {
        let (_, _, pool) = desk_pool();
        let ctx = DrawContext::new(&pool).unwrap();
        let meta = MetaStrategy::q(Category::C, 0.05, 1.0);
        let ids = pool.category_ids(Category::C);
        let mut counts = std::collections::HashMap::new();
        let mut rng = derive_rng(9, "uniform", &[]);
        let n = 10_000;
        for _ in 0..n {
            let s = draw_strategy(&meta, &ctx, &mut rng, &[]).unwrap();
            *counts.entry(s.policy_id.unwrap()).or_insert(0usize) += 1;
        }
        let expect = n as f64 / ids.len() as f64;
        let sigma = (expect * (1.0 - 1.0 / ids.len() as f64)).sqrt();
        for id in ids {
            let c = *counts.get(&id).unwrap_or(&0) as f64;
            assert!(
                (c - expect).abs() < 4.0 * sigma,
                "id {id}: {c} vs {expect} +- {sigma}"
            );
        }
    }

    #[test]
    fn single_run_metagame_equals_direct_simulation() {
        let (env, grids, pool) = desk_pool();
        let game = RepeatedGame::pricing(&env, &grids).unwrap();
        let metas = vec![
            MetaStrategy::q(Category::C, 0.05, 1.0),
            MetaStrategy::q(Category::Rc, 0.005, 1.0),
        ];
        let options = MetagameOptions {
            n_meta: 1,
            n_base: 1,
            horizon: 300,
            share_initial_state: true,
            share_category_instance: false,
            series_points: 10,
        };
        let results =
            run_metagame(&env, &grids, &metas, &metas, &[&pool], 77, &options).unwrap();
        assert_eq!(results.len(), 1);
        let res = &results[0];

        // Recompute cell (0, 1) by hand with the same derived streams.
        let ctx = DrawContext::new(&pool).unwrap();
        let mut rng = derive_rng(77, "metagame-draw", &[0, 0, 0]);
        let row = draw_strategy(&metas[0], &ctx, &mut rng, &[]).unwrap();
        let mut rng = derive_rng(77, "metagame-draw", &[0, 1, 1]);
        let col = draw_strategy(&metas[1], &ctx, &mut rng, &[]).unwrap();
        assert_eq!(res.sampled_row_ids[0], row.policy_id);
        assert_eq!(res.sampled_col_ids[1], col.policy_id);
        // The (0,1) profile conflicts only if the ids collide; mirror the
        // production rule.
        let col = if row.policy_id == col.policy_id
            || row.partner_id == col.policy_id
        {
            let mut rng = derive_rng(77, "metagame-redraw", &[0, 0, 1]);
            let forbidden: Vec<u32> =
                row.policy_id.into_iter().chain(row.partner_id).collect();
            draw_strategy(&metas[1], &ctx, &mut rng, &forbidden).unwrap()
        } else {
            col
        };
        let s0 = {
            let mut rng = derive_rng(77, "metagame-s0", &[0, 0]);
            rng.gen_range(0..game.n_states(0))
        };
        let mut sim_rng = derive_rng(77, "metagame-sim", &[0, 0, 1, 0]);
        let direct = simulate_profile(&row, &col, &game, s0, 300, &mut sim_rng).unwrap();
        let mean = direct.mean_prefix(300);
        let got = res.payoff_at(0, 1);
        assert_abs_diff_eq!(got[0], mean[0], epsilon = 1e-12);
        assert_abs_diff_eq!(got[1], mean[1], epsilon = 1e-12);
        assert_eq!(res.cell(0, 1).run_s0, vec![s0]);
    }

    #[test]
    fn profiles_never_pair_partners() {
        let (env, grids, pool) = desk_pool();
        let metas = vec![
            MetaStrategy::q(Category::C, 0.5, 1.0),
            MetaStrategy::q(Category::C, 0.05, 1.0),
            MetaStrategy::q(Category::Rc, 0.05, 1.0),
        ];
        let options = MetagameOptions {
            n_meta: 6,
            n_base: 2,
            horizon: 50,
            share_initial_state: true,
            share_category_instance: false,
            series_points: 5,
        };
        let results =
            run_metagame(&env, &grids, &metas, &metas, &[&pool], 123, &options).unwrap();
        // The sampled ids are per meta-strategy; the per-profile rule is
        // enforced internally. Rerun the conflict detection on provenance:
        // diagonal profiles with identical draws must have been redrawn,
        // which we can observe through the cell payoffs being generated
        // from distinct policies (no exact self-play symmetry expected).
        for res in &results {
            for (m, id) in res.sampled_row_ids.iter().enumerate() {
                let id = id.unwrap();
                let partner = pool.entry(id).unwrap().partner_id;
                // The column instance actually used in the diagonal profile
                // is not the row instance: its redraw stream avoids id and
                // partner. We can't read it back directly, but the invariant
                // is testable through draw_strategy determinism.
                let mut rng = derive_rng(123, "metagame-redraw", &[res.meta_iter as u64, m as u64, m as u64]);
                let redrawn = draw_strategy(&metas[m], &DrawContext::new(&pool).unwrap(), &mut rng, &[id, partner]).unwrap();
                assert_ne!(redrawn.policy_id, Some(id));
                assert_ne!(redrawn.policy_id, Some(partner));
            }
        }
    }

    #[test]
    fn metagame_is_thread_count_independent() {
        let (env, grids, pool) = desk_pool();
        let metas = vec![
            MetaStrategy::q(Category::C, 0.5, 1.0),
            MetaStrategy::q(Category::Rc, 0.005, 1.0),
        ];
        let options = MetagameOptions {
            n_meta: 2,
            n_base: 3,
            horizon: 100,
            share_initial_state: true,
            share_category_instance: false,
            series_points: 4,
        };
        let run_with_threads = |threads: usize| {
            let pool_t = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool_t.install(|| run_metagame(&env, &grids, &metas, &metas, &[&pool], 9, &options).unwrap())
        };
        let one = run_with_threads(1);
        let eight = run_with_threads(8);
        assert_eq!(
            serde_json::to_vec(&one).unwrap(),
            serde_json::to_vec(&eight).unwrap()
        );
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let (env, grids, pool) = desk_pool();
        let game = RepeatedGame::pricing(&env, &grids).unwrap();
        let ctx = DrawContext::new(&pool).unwrap();
        let a = instantiate_entry(&ctx, 0, &Adaptation::q(0.0, 1.0), true, "a").unwrap();
        let mut rng = derive_rng(1, "z", &[]);
        assert!(simulate_profile(&a, &a, &game, 0, 0, &mut rng).is_err());
    }
}

//! Joint pretraining of policy pairs to convergence, hyperparameter
//! sampling, policy-pool persistence, and LC/C/RC categorization.
//!
//! Pretraining is always symmetric: both agents share hyperparameters and
//! the environment must have equal costs and qualities. Asymmetric test
//! games draw from two pools, one pretrained per role.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agents::{
    q_decode, q_update, ucb_decode, ucb_update, QTable, Representation, UcbPhase, UcbTable,
};
use crate::env::{GridPair, PricingEnv};
use crate::seed::derive_rng;
use crate::values::{cooperative_robustness, paired_cooperativeness, PolicyTable, RepeatedGame};
use crate::{Error, Result};

pub const POOL_FORMAT_VERSION: u32 = 1;
/// Default cap on pretraining rounds before a pair is flagged non-converged.
pub const DEFAULT_ROUND_CAP: u64 = 5_000_000;
/// Default number of consecutive rounds both greedy policies must stay
/// unchanged to declare convergence.
pub const DEFAULT_CONVERGENCE_WINDOW: u64 = 25_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Q,
    Ucb,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Algorithm::Q => write!(f, "q"),
            Algorithm::Ucb => write!(f, "ucb"),
        }
    }
}

/// Strategic category of a pretrained initial policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Category {
    /// Less colluding: bottom third in PC, middle third in CR.
    Lc,
    /// Colluding but exploitable: top third in PC, bottom third in CR.
    C,
    /// Robustly colluding: top third in both.
    Rc,
    /// Randomly initialized (never stored in pools; a meta-strategy tag).
    Rd,
    Uncategorized,
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Category::Lc => "LC",
            Category::C => "C",
            Category::Rc => "RC",
            Category::Rd => "RD",
            Category::Uncategorized => "uncategorized",
        };
        write!(f, "{s}")
    }
}

/// Sampled pretraining hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HyperParams {
    Q {
        alpha: f64,
        epsilon0: f64,
        delta: f64,
        gamma: f64,
    },
    Ucb {
        count_cap: f64,
        gamma: f64,
    },
}

/// Uniform sampling ranges for the randomized hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRanges {
    pub alpha: (f64, f64),
    pub epsilon0: (f64, f64),
    pub delta: (f64, f64),
    pub count_cap: f64,
}

impl Default for HyperRanges {
    fn default() -> Self {
        HyperRanges {
            alpha: (0.05, 0.25),
            epsilon0: (1.0, 1.0),
            delta: (5e-6, 2e-5),
            count_cap: crate::agents::UCB_COUNT_CAP,
        }
    }
}

/// Independent uniform draws per randomized field; the discount factor is
/// fixed at the configured value.
pub fn sample_hyperparams(
    algorithm: Algorithm,
    rng: &mut impl Rng,
    ranges: &HyperRanges,
    gamma: f64,
) -> Result<HyperParams> {
    let mut draw = |(lo, hi): (f64, f64)| -> Result<f64> {
        if !(lo <= hi) {
            return Err(Error::invalid(format!("empty hyperparameter range [{lo}, {hi}]")));
        }
        Ok(if lo == hi { lo } else { rng.gen_range(lo..hi) })
    };
    Ok(match algorithm {
        Algorithm::Q => HyperParams::Q {
            alpha: draw(ranges.alpha)?,
            epsilon0: draw(ranges.epsilon0)?,
            delta: draw(ranges.delta)?,
            gamma,
        },
        Algorithm::Ucb => HyperParams::Ucb {
            count_cap: ranges.count_cap,
            gamma,
        },
    })
}

/// One pretrained policy with its provenance and characterization scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoolEntry {
    pub id: u32,
    pub policy: PolicyTable,
    pub raw: Representation,
    pub partner_id: u32,
    pub seed: u64,
    pub hyperparams: HyperParams,
    pub pc_self: Option<f64>,
    pub cr_self: Option<f64>,
    pub cr_opp: Option<f64>,
    pub category: Category,
    pub algorithm: Algorithm,
    pub converged: bool,
    pub rounds: u64,
    pub final_epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TertileMethod {
    /// Thirds of the min-max span per axis.
    Range,
    /// Rank tertiles per axis.
    Rank,
}

/// A pool of pretrained policies plus everything needed to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPool {
    pub format_version: u32,
    pub algorithm: Algorithm,
    pub env: PricingEnv,
    pub env_hash: String,
    pub grids: GridPair,
    pub ranges: HyperRanges,
    pub convergence_window: u64,
    pub tertile_method: TertileMethod,
    pub entries: Vec<PolicyPoolEntry>,
}

impl PolicyPool {
    pub fn entry(&self, id: u32) -> Option<&PolicyPoolEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Ids of converged entries carrying the given category label.
    pub fn category_ids(&self, category: Category) -> Vec<u32> {
        self.entries
            .iter()
            .filter(|e| e.converged && e.category == category)
            .map(|e| e.id)
            .collect()
    }

    /// Stable content hash of the canonical serialization.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("pool serializes");
        hex_digest(&bytes)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of an environment's canonical serialization, used to tie pools and
/// cached benchmarks to their configuration.
pub fn env_hash(env: &PricingEnv) -> String {
    hex_digest(&serde_json::to_vec(env).expect("env serializes"))
}

/// Result of jointly pretraining one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedPair {
    pub raw: [Representation; 2],
    pub policy: [PolicyTable; 2],
    pub hyperparams: HyperParams,
    pub seed: u64,
    pub rounds: u64,
    pub converged: bool,
    pub final_epsilon: f64,
}

/// Jointly pretrain two agents with identical hyperparameters from a
/// uniformly random initial state until both greedy policies have been
/// stable for `convergence_window` consecutive rounds.
pub fn pretrain_pair(
    algorithm: Algorithm,
    hyperparams: &HyperParams,
    env: &PricingEnv,
    game: &RepeatedGame,
    seed: u64,
    convergence_window: u64,
    round_cap: u64,
) -> Result<PretrainedPair> {
    if !env.is_symmetric() {
        return Err(Error::invalid(
            "pretraining requires a symmetric environment; asymmetric games draw from per-role pools",
        ));
    }
    let mut rng = derive_rng(seed, "pretrain-pair", &[]);
    match (algorithm, hyperparams) {
        (Algorithm::Q, HyperParams::Q { alpha, epsilon0, delta, gamma }) => pretrain_q_pair(
            game,
            [*alpha, *epsilon0, *delta, *gamma],
            seed,
            &mut rng,
            convergence_window,
            round_cap,
            hyperparams,
        ),
        (Algorithm::Ucb, HyperParams::Ucb { count_cap, .. }) => pretrain_ucb_pair(
            game,
            *count_cap,
            seed,
            &mut rng,
            convergence_window,
            round_cap,
            hyperparams,
        ),
        _ => Err(Error::invalid("hyperparameter record does not match the algorithm")),
    }
}

/// Initial Q-values: the discounted stage payoff against a uniformly random
/// opponent, identical across states.
fn uniform_opponent_q_init(game: &RepeatedGame, player: usize, gamma: f64) -> Vec<f64> {
    let n_own = game.n_actions[player];
    let n_opp = game.n_actions[1 - player];
    let n_states = n_own * n_opp;
    let mut per_action = vec![0.0; n_own];
    for (a, slot) in per_action.iter_mut().enumerate() {
        let mut sum = 0.0;
        for b in 0..n_opp {
            sum += game.reward(player, a * n_opp + b);
        }
        *slot = sum / n_opp as f64 / (1.0 - gamma);
    }
    let mut q = vec![0.0; n_states * n_own];
    for s in 0..n_states {
        q[s * n_own..(s + 1) * n_own].copy_from_slice(&per_action);
    }
    q
}

fn pretrain_q_pair(
    game: &RepeatedGame,
    [alpha, epsilon0, delta, gamma]: [f64; 4],
    seed: u64,
    rng: &mut impl Rng,
    convergence_window: u64,
    round_cap: u64,
    hyperparams: &HyperParams,
) -> Result<PretrainedPair> {
    let n = [game.n_actions[0], game.n_actions[1]];
    let mut tables: [QTable; 2] = [
        QTable::new(n[0] * n[1], n[0], alpha, epsilon0, delta, gamma),
        QTable::new(n[1] * n[0], n[1], alpha, epsilon0, delta, gamma),
    ];
    tables[0].q = uniform_opponent_q_init(game, 0, gamma);
    tables[1].q = uniform_opponent_q_init(game, 1, gamma);

    let mut actions = [rng.gen_range(0..n[0]), rng.gen_range(0..n[1])];
    let mut stable: u64 = 0;
    let mut rounds: u64 = 0;
    let mut converged = false;
    let mut epsilon = epsilon0;

    while rounds < round_cap {
        epsilon = epsilon0 * (-delta * rounds as f64).exp();
        let prev = actions;
        let prev_state = [prev[0] * n[1] + prev[1], prev[1] * n[0] + prev[0]];
        for j in 0..2 {
            actions[j] = if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
                rng.gen_range(0..n[j])
            } else {
                tables[j].argmax(prev_state[j])
            };
        }
        let next_state = [actions[0] * n[1] + actions[1], actions[1] * n[0] + actions[0]];
        let mut flipped = false;
        for j in 0..2 {
            let reward = game.reward(j, next_state[j]);
            flipped |= q_update(&mut tables[j], prev_state[j], actions[j], reward, next_state[j])?;
        }
        rounds += 1;
        if flipped {
            stable = 0;
        } else {
            stable += 1;
            if stable >= convergence_window {
                converged = true;
                break;
            }
        }
    }

    let policy = [q_decode(&tables[0], n[1], 0.0), q_decode(&tables[1], n[0], 0.0)];
    let [t0, t1] = tables;
    Ok(PretrainedPair {
        raw: [Representation::Q(t0), Representation::Q(t1)],
        policy,
        hyperparams: hyperparams.clone(),
        seed,
        rounds,
        converged,
        final_epsilon: epsilon,
    })
}

fn pretrain_ucb_pair(
    game: &RepeatedGame,
    count_cap: f64,
    seed: u64,
    rng: &mut impl Rng,
    convergence_window: u64,
    round_cap: u64,
    hyperparams: &HyperParams,
) -> Result<PretrainedPair> {
    let n = [game.n_actions[0], game.n_actions[1]];
    let mut tables: [UcbTable; 2] = [
        UcbTable::new(n[0] * n[1], n[0], 1.0),
        UcbTable::new(n[1] * n[0], n[1], 1.0),
    ];
    for t in tables.iter_mut() {
        t.count_cap = count_cap;
    }

    let mut actions = [rng.gen_range(0..n[0]), rng.gen_range(0..n[1])];
    let mut stable: u64 = 0;
    let mut rounds: u64 = 0;
    let mut converged = false;

    while rounds < round_cap {
        let prev = actions;
        let prev_state = [prev[0] * n[1] + prev[1], prev[1] * n[0] + prev[0]];
        for j in 0..2 {
            actions[j] = tables[j].argmax(prev_state[j]);
        }
        let next_state = [actions[0] * n[1] + actions[1], actions[1] * n[0] + actions[0]];
        let mut flipped = false;
        for j in 0..2 {
            let reward = game.reward(j, next_state[j]);
            flipped |= ucb_update(&mut tables[j], prev_state[j], actions[j], reward, UcbPhase::Pretrain)?;
        }
        rounds += 1;
        if flipped {
            stable = 0;
        } else {
            stable += 1;
            if stable >= convergence_window {
                converged = true;
                break;
            }
        }
    }

    let policy = [ucb_decode(&tables[0], n[1]), ucb_decode(&tables[1], n[0])];
    let [t0, t1] = tables;
    Ok(PretrainedPair {
        raw: [Representation::Ucb(t0), Representation::Ucb(t1)],
        policy,
        hyperparams: hyperparams.clone(),
        seed,
        rounds,
        converged,
        final_epsilon: 0.0,
    })
}

/// Configuration of a pool build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub algorithm: Algorithm,
    pub n_pairs: usize,
    pub ranges: HyperRanges,
    pub convergence_window: u64,
    pub round_cap: u64,
    pub tertile_method: TertileMethod,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            algorithm: Algorithm::Q,
            n_pairs: 500,
            ranges: HyperRanges::default(),
            convergence_window: DEFAULT_CONVERGENCE_WINDOW,
            round_cap: DEFAULT_ROUND_CAP,
            tertile_method: TertileMethod::Range,
        }
    }
}

/// Pretrain `n_pairs` pairs in parallel, characterize every entry, and
/// categorize the pool. Pair `k` uses the derived seed stream
/// `(master, "pretrain-*", k)`, so the pool is reproducible and independent
/// of the worker count.
pub fn build_pool(
    env: &PricingEnv,
    grids: &GridPair,
    config: &PretrainConfig,
    master_seed: u64,
) -> Result<PolicyPool> {
    let game = RepeatedGame::pricing(env, grids)?;
    let pairs: Vec<Result<PretrainedPair>> = (0..config.n_pairs)
        .into_par_iter()
        .map(|k| {
            let mut hp_rng = derive_rng(master_seed, "pretrain-hyper", &[k as u64]);
            let hp = sample_hyperparams(config.algorithm, &mut hp_rng, &config.ranges, env.gamma)?;
            let mut seed_rng = derive_rng(master_seed, "pretrain-seed", &[k as u64]);
            let pair_seed: u64 = seed_rng.gen();
            pretrain_pair(
                config.algorithm,
                &hp,
                env,
                &game,
                pair_seed,
                config.convergence_window,
                config.round_cap,
            )
        })
        .collect();

    let mut entries = Vec::with_capacity(config.n_pairs * 2);
    for (k, pair) in pairs.into_iter().enumerate() {
        let pair = pair?;
        let base = (2 * k) as u32;
        for j in 0..2 {
            entries.push(PolicyPoolEntry {
                id: base + j as u32,
                policy: pair.policy[j].clone(),
                raw: pair.raw[j].clone(),
                partner_id: base + (1 - j) as u32,
                seed: pair.seed,
                hyperparams: pair.hyperparams.clone(),
                pc_self: None,
                cr_self: None,
                cr_opp: None,
                category: Category::Uncategorized,
                algorithm: config.algorithm,
                converged: pair.converged,
                rounds: pair.rounds,
                final_epsilon: pair.final_epsilon,
            });
        }
    }

    let mut pool = PolicyPool {
        format_version: POOL_FORMAT_VERSION,
        algorithm: config.algorithm,
        env: env.clone(),
        env_hash: env_hash(env),
        grids: grids.clone(),
        ranges: config.ranges.clone(),
        convergence_window: config.convergence_window,
        tertile_method: config.tertile_method,
        entries,
    };
    characterize_pool(&mut pool)?;
    categorize(&mut pool)?;
    Ok(pool)
}

/// Populate PC and CR scores for every entry. PC pairs each entry with its
/// pretraining partner; CR solves the worst-case best response.
pub fn characterize_pool(pool: &mut PolicyPool) -> Result<()> {
    let game = RepeatedGame::pricing(&pool.env, &pool.grids)?;
    let snapshot = pool.entries.clone();
    let scores: Vec<Result<(f64, f64, f64)>> = snapshot
        .par_iter()
        .map(|entry| {
            let partner = snapshot
                .iter()
                .find(|e| e.id == entry.partner_id)
                .ok_or_else(|| Error::PoolFormat(format!("dangling partner id {}", entry.partner_id)))?;
            // Entries sit in the role given by their position in the pair.
            let role = (entry.id % 2) as usize;
            let pc_self = if role == 0 {
                paired_cooperativeness(&game, &entry.policy, &partner.policy)?.0
            } else {
                paired_cooperativeness(&game, &partner.policy, &entry.policy)?.1
            };
            let (cr_self, cr_opp, _) = cooperative_robustness(&game, role, &entry.policy)?;
            Ok((pc_self, cr_self, cr_opp))
        })
        .collect();
    for (entry, score) in pool.entries.iter_mut().zip(scores) {
        let (pc, cr_s, cr_o) = score?;
        entry.pc_self = Some(pc);
        entry.cr_self = Some(cr_s);
        entry.cr_opp = Some(cr_o);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Third {
    Low,
    Mid,
    High,
}

fn range_third(x: f64, min: f64, max: f64) -> Third {
    let range = max - min;
    let low_cut = min + range / 3.0;
    let high_cut = max - range / 3.0;
    if x < low_cut {
        Third::Low
    } else if x < high_cut {
        Third::Mid
    } else {
        Third::High
    }
}

/// Assign LC/C/RC labels from the characterization scores.
///
/// Thirds are taken over the converged entries of this pool, either as
/// thirds of the min-max span per axis (the default) or as rank tertiles.
pub fn categorize(pool: &mut PolicyPool) -> Result<()> {
    let scored: Vec<(usize, f64, f64)> = pool
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.converged)
        .map(|(i, e)| {
            let pc = e.pc_self.ok_or_else(|| Error::PoolFormat("categorize before characterize".into()))?;
            let cr = e.cr_self.ok_or_else(|| Error::PoolFormat("categorize before characterize".into()))?;
            Ok((i, pc, cr))
        })
        .collect::<Result<_>>()?;
    if scored.is_empty() {
        return Ok(());
    }

    let thirds: Vec<(usize, Third, Third)> = match pool.tertile_method {
        TertileMethod::Range => {
            let (pc_min, pc_max) = min_max(scored.iter().map(|t| t.1));
            let (cr_min, cr_max) = min_max(scored.iter().map(|t| t.2));
            if pc_max - pc_min < 1e-12 || cr_max - cr_min < 1e-12 {
                log::warn!("categorize: degenerate score range; all entries left uncategorized");
                for e in pool.entries.iter_mut() {
                    e.category = Category::Uncategorized;
                }
                return Ok(());
            }
            scored
                .iter()
                .map(|&(i, pc, cr)| (i, range_third(pc, pc_min, pc_max), range_third(cr, cr_min, cr_max)))
                .collect()
        }
        TertileMethod::Rank => {
            let n = scored.len();
            let pc_ranks = ranks_of(scored.iter().map(|t| t.1).collect());
            let cr_ranks = ranks_of(scored.iter().map(|t| t.2).collect());
            let rank_third = move |r: usize| -> Third {
                if 3 * r < n {
                    Third::Low
                } else if 3 * r >= 2 * n {
                    Third::High
                } else {
                    Third::Mid
                }
            };
            scored
                .iter()
                .enumerate()
                .map(|(pos, &(i, _, _))| (i, rank_third(pc_ranks[pos]), rank_third(cr_ranks[pos])))
                .collect()
        }
    };

    for (i, pc_third, cr_third) in thirds {
        pool.entries[i].category = match (pc_third, cr_third) {
            (Third::Low, Third::Mid) => Category::Lc,
            (Third::High, Third::Low) => Category::C,
            (Third::High, Third::High) => Category::Rc,
            _ => Category::Uncategorized,
        };
    }
    Ok(())
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x), hi.max(x))
    })
}

/// Rank of each element within its vector (0 = smallest).
fn ranks_of(values: Vec<f64>) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0; values.len()];
    for (rank, &idx) in order.iter().enumerate() {
        ranks[idx] = rank;
    }
    ranks
}

/// Write a pool as versioned JSON.
pub fn save_pool(pool: &PolicyPool, path: &std::path::Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let bytes = serde_json::to_vec_pretty(pool)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Load and validate a pool: version, id uniqueness, and partner symmetry.
pub fn load_pool(path: &std::path::Path) -> Result<PolicyPool> {
    let bytes = std::fs::read(path)?;
    let pool: PolicyPool = serde_json::from_slice(&bytes)
        .map_err(|e| Error::PoolFormat(format!("corrupt pool file {}: {e}", path.display())))?;
    if pool.format_version != POOL_FORMAT_VERSION {
        return Err(Error::PoolFormat(format!(
            "pool format version {} is not supported (expected {POOL_FORMAT_VERSION})",
            pool.format_version
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for e in &pool.entries {
        if !seen.insert(e.id) {
            return Err(Error::PoolFormat(format!("duplicate entry id {}", e.id)));
        }
    }
    for e in &pool.entries {
        let partner = pool
            .entry(e.partner_id)
            .ok_or_else(|| Error::PoolFormat(format!("entry {} has dangling partner id {}", e.id, e.partner_id)))?;
        if partner.partner_id != e.id {
            return Err(Error::PoolFormat(format!(
                "partner link of entry {} is not symmetric",
                e.id
            )));
        }
    }
    Ok(pool)
}

//! The logit-demand stage game: demand and profit evaluation, competitive and
//! collusive benchmark solvers, price-grid construction, and the Collusion
//! Index.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Damping factor for the competitive fixed-point iteration.
const COMPETITIVE_DAMPING: f64 = 0.5;
/// Price-change tolerance for both benchmark solvers.
const SOLVER_TOL: f64 = 1e-10;
/// Iteration cap for the competitive fixed point.
const COMPETITIVE_CAP: usize = 10_000;
/// Coordinate-ascent sweeps for the collusive solver.
const MONOPOLY_SWEEP_CAP: usize = 500;

/// Stage-game parameters of the two-player logit-demand pricing game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricingEnv {
    /// Product quality index per firm.
    pub quality: [f64; 2],
    /// Quality index of the outside good.
    pub outside_quality: f64,
    /// Horizontal differentiation scale, strictly positive.
    pub mu: f64,
    /// Marginal cost per firm.
    pub costs: [f64; 2],
    /// Discount factor in [0, 1).
    pub gamma: f64,
}

impl Default for PricingEnv {
    fn default() -> Self {
        PricingEnv {
            quality: [2.0, 2.0],
            outside_quality: 0.0,
            mu: 0.25,
            costs: [1.0, 1.0],
            gamma: 0.95,
        }
    }
}

impl PricingEnv {
    pub fn with_costs(costs: [f64; 2]) -> Self {
        PricingEnv {
            costs,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidEnv(format!("mu must be positive, got {}", self.mu)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidEnv(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        for (j, c) in self.costs.iter().enumerate() {
            if !c.is_finite() || *c < 0.0 {
                return Err(Error::InvalidEnv(format!("cost of firm {j} must be finite and non-negative")));
            }
        }
        if self.quality.iter().any(|a| !a.is_finite()) || !self.outside_quality.is_finite() {
            return Err(Error::InvalidEnv("quality indices must be finite".into()));
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.costs[0] == self.costs[1] && self.quality[0] == self.quality[1]
    }

    /// Logit demand for both products at the given price pair.
    ///
    /// Rejects non-finite prices and exponent overflow instead of silently
    /// saturating.
    pub fn demand(&self, prices: [f64; 2]) -> Result<[f64; 2]> {
        let mut exps = [0.0f64; 2];
        for j in 0..2 {
            if !prices[j].is_finite() {
                return Err(Error::invalid(format!("price of firm {j} is not finite: {}", prices[j])));
            }
            let x = (self.quality[j] - prices[j]) / self.mu;
            if x > 700.0 {
                return Err(Error::invalid(format!(
                    "demand exponent overflow for firm {j}: (a - p)/mu = {x}"
                )));
            }
            exps[j] = x.exp();
        }
        let outside = (self.outside_quality / self.mu).exp();
        let denom = exps[0] + exps[1] + outside;
        Ok([exps[0] / denom, exps[1] / denom])
    }

    /// Per-firm stage profit `(p_j - c_j) * d_j` at the given price pair.
    pub fn stage_profit(&self, prices: [f64; 2]) -> Result<[f64; 2]> {
        let d = self.demand(prices)?;
        Ok([
            (prices[0] - self.costs[0]) * d[0],
            (prices[1] - self.costs[1]) * d[1],
        ])
    }

    fn joint_profit(&self, prices: [f64; 2]) -> f64 {
        self.stage_profit(prices).map(|r| r[0] + r[1]).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Benchmark prices and payoffs of the stage game: the competitive
/// (stage-game Nash) point and the collusive (joint-profit) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmarks {
    pub p_competitive: [f64; 2],
    pub p_monopoly: [f64; 2],
    pub r_competitive: [f64; 2],
    pub r_monopoly: [f64; 2],
    pub r_bar_competitive: f64,
    pub r_bar_monopoly: f64,
}

impl Benchmarks {
    /// Solve both benchmarks for an environment.
    pub fn solve(env: &PricingEnv) -> Result<Self> {
        env.validate()?;
        let (p_competitive, r_competitive) = solve_competitive(env)?;
        let (p_monopoly, r_monopoly) = solve_monopoly(env, p_competitive, r_competitive)?;
        let b = Benchmarks {
            p_competitive,
            p_monopoly,
            r_bar_competitive: 0.5 * (r_competitive[0] + r_competitive[1]),
            r_bar_monopoly: 0.5 * (r_monopoly[0] + r_monopoly[1]),
            r_competitive,
            r_monopoly,
        };
        if b.r_bar_monopoly <= b.r_bar_competitive {
            return Err(Error::InvalidEnv(
                "collusive benchmark does not improve on the competitive one".into(),
            ));
        }
        Ok(b)
    }

    /// Theoretical discounted return of absorbing at the competitive state.
    pub fn q_competitive(&self, gamma: f64) -> f64 {
        self.r_bar_competitive / (1.0 - gamma)
    }

    /// Theoretical discounted return of absorbing at the collusive state.
    pub fn q_monopoly(&self, gamma: f64) -> f64 {
        self.r_bar_monopoly / (1.0 - gamma)
    }
}

/// Collusion Index: 0 at the competitive benchmark, 1 at the collusive
/// outcome. Values outside [0, 1] are reported as-is; exploitative and
/// subcompetitive outcomes legitimately fall outside the interval.
pub fn coi(mean_payoff: f64, benchmarks: &Benchmarks) -> Result<f64> {
    let range = benchmarks.r_bar_monopoly - benchmarks.r_bar_competitive;
    if range.abs() < 1e-15 {
        return Err(Error::DegenerateBenchmarks);
    }
    Ok((mean_payoff - benchmarks.r_bar_competitive) / range)
}

/// Solve the stage-game Nash point by damped simultaneous fixed-point
/// iteration on the first-order conditions.
///
/// The logit profit FOC rearranges to `p_j = c_j + mu / (1 - d_j)`, which is
/// a smooth contraction in the studied parameter region.
pub fn solve_competitive(env: &PricingEnv) -> Result<([f64; 2], [f64; 2])> {
    env.validate()?;
    let mut p = [env.costs[0] + env.mu, env.costs[1] + env.mu];
    let mut residual = f64::INFINITY;
    for _ in 0..COMPETITIVE_CAP {
        let d = env.demand(p)?;
        let target = [
            env.costs[0] + env.mu / (1.0 - d[0]),
            env.costs[1] + env.mu / (1.0 - d[1]),
        ];
        let next = [
            (1.0 - COMPETITIVE_DAMPING) * p[0] + COMPETITIVE_DAMPING * target[0],
            (1.0 - COMPETITIVE_DAMPING) * p[1] + COMPETITIVE_DAMPING * target[1],
        ];
        residual = (next[0] - p[0]).abs().max((next[1] - p[1]).abs());
        p = next;
        if residual < SOLVER_TOL {
            verify_competitive(env, p)?;
            let r = env.stage_profit(p)?;
            return Ok((p, r));
        }
    }
    Err(Error::NoConvergence {
        context: format!("competitive fixed point stalled at p = {p:?}"),
        iterations: COMPETITIVE_CAP,
        residual,
    })
}

/// Grid-free local deviation check: each firm's best scalar response to the
/// other's candidate price must coincide with its own candidate price.
fn verify_competitive(env: &PricingEnv, p: [f64; 2]) -> Result<()> {
    for j in 0..2 {
        let best = golden_section(env.costs[j], env.costs[j] + 5.0 * env.mu + 5.0, 1e-12, |x| {
            let mut q = p;
            q[j] = x;
            env.stage_profit(q).map(|r| r[j]).unwrap_or(f64::NEG_INFINITY)
        });
        if (best - p[j]).abs() > 1e-6 {
            return Err(Error::NoConvergence {
                context: format!(
                    "competitive point failed the deviation check for firm {j}: best response {best} vs {p:?}"
                ),
                iterations: COMPETITIVE_CAP,
                residual: (best - p[j]).abs(),
            });
        }
    }
    Ok(())
}

/// Solve the collusive benchmark.
///
/// With symmetric costs and qualities this is plain joint-profit
/// maximization by coordinate ascent with golden-section line search. With
/// asymmetric firms the unconstrained joint optimum shifts nearly all profit
/// to the low-cost firm, which is not a meaningful per-firm collusion
/// anchor; the collusive point is instead the joint-profit maximizer subject
/// to both firms gaining equally over their competitive payoffs.
pub fn solve_monopoly(
    env: &PricingEnv,
    p_competitive: [f64; 2],
    r_competitive: [f64; 2],
) -> Result<([f64; 2], [f64; 2])> {
    env.validate()?;
    if env.is_symmetric() {
        let p = maximize_joint(env, p_competitive)?;
        // Symmetric optimum: average the coordinates to remove ascent noise.
        let pm = 0.5 * (p[0] + p[1]);
        let p = [pm, pm];
        let r = env.stage_profit(p)?;
        return Ok((p, r));
    }
    let p = maximize_joint_equal_gain(env, p_competitive, r_competitive)?;
    let r = env.stage_profit(p)?;
    Ok((p, r))
}

/// Coordinate ascent on joint profit, golden-section line search per
/// coordinate.
fn maximize_joint(env: &PricingEnv, start: [f64; 2]) -> Result<[f64; 2]> {
    let mut p = start;
    let hi = [
        env.costs[0] + 20.0 * env.mu + 1.0,
        env.costs[1] + 20.0 * env.mu + 1.0,
    ];
    let mut value = env.joint_profit(p);
    for _ in 0..MONOPOLY_SWEEP_CAP {
        let prev = p;
        for j in 0..2 {
            p[j] = golden_section(env.costs[j], hi[j], 1e-13, |x| {
                let mut q = p;
                q[j] = x;
                env.joint_profit(q)
            });
        }
        let next_value = env.joint_profit(p);
        // Position resolution bottoms out near sqrt(f64 eps) at a flat
        // maximum; the objective itself converges to machine precision.
        let moved = (p[0] - prev[0]).abs().max((p[1] - prev[1]).abs());
        if next_value - value < SOLVER_TOL && moved < 1e-7 {
            return Ok(p);
        }
        value = next_value;
    }
    Err(Error::NoConvergence {
        context: format!("joint-profit ascent stalled at p = {p:?}"),
        iterations: MONOPOLY_SWEEP_CAP,
        residual: f64::NAN,
    })
}

/// Joint-profit maximization along the equal-gain curve
/// `r_1(p) - r_1^N == r_2(p) - r_2^N`.
///
/// The outer search runs over the first firm's price; the inner bisection
/// recovers the second price that balances the gains.
fn maximize_joint_equal_gain(
    env: &PricingEnv,
    p_competitive: [f64; 2],
    r_competitive: [f64; 2],
) -> Result<[f64; 2]> {
    // The equal-gain locus passes through the competitive point and has an
    // equal-loss branch below it; `balance` returns the root with the
    // highest joint profit.
    let balance = |p1: f64| -> Option<f64> {
        let gap = |p2: f64| {
            let r = env.stage_profit([p1, p2]).unwrap_or([f64::NAN; 2]);
            (r[0] - r_competitive[0]) - (r[1] - r_competitive[1])
        };
        let lo = env.costs[1];
        let hi = env.costs[1] + 20.0 * env.mu + 1.0;
        let steps = 800;
        let mut best: Option<(f64, f64)> = None;
        let mut prev_x = lo;
        let mut prev_g = gap(lo);
        for i in 1..=steps {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            let g = gap(x);
            if prev_g * g <= 0.0 && (prev_g != 0.0 || g != 0.0) {
                let (mut a, mut b) = (prev_x, x);
                let mut ga = prev_g;
                for _ in 0..200 {
                    let m = 0.5 * (a + b);
                    let gm = gap(m);
                    if gm == 0.0 || (b - a) < 1e-13 {
                        break;
                    }
                    if ga * gm < 0.0 {
                        b = m;
                    } else {
                        a = m;
                        ga = gm;
                    }
                }
                let root = 0.5 * (a + b);
                let joint = env.joint_profit([p1, root]);
                if best.map_or(true, |(_, j)| joint > j) {
                    best = Some((root, joint));
                }
            }
            prev_x = x;
            prev_g = g;
        }
        best.map(|(root, _)| root)
    };

    let objective = |p1: f64| -> f64 {
        match balance(p1) {
            Some(p2) => env.joint_profit([p1, p2]),
            None => f64::NEG_INFINITY,
        }
    };

    // Coarse scan to bracket the maximum, then golden-section refinement.
    let lo = p_competitive[0];
    let hi = env.costs[0] + 20.0 * env.mu + 1.0;
    let steps = 240;
    let mut best_i = 0;
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..=steps {
        let x = lo + (hi - lo) * i as f64 / steps as f64;
        let val = objective(x);
        if val > best_val {
            best_val = val;
            best_i = i;
        }
    }
    if !best_val.is_finite() {
        return Err(Error::NoConvergence {
            context: "no equal-gain point improves on the competitive benchmark".into(),
            iterations: steps,
            residual: f64::NAN,
        });
    }
    let bracket_lo = lo + (hi - lo) * best_i.saturating_sub(1) as f64 / steps as f64;
    let bracket_hi = lo + (hi - lo) * (best_i + 1).min(steps) as f64 / steps as f64;
    let p1 = golden_section(bracket_lo, bracket_hi, 1e-12, objective);
    let p2 = balance(p1).ok_or_else(|| Error::NoConvergence {
        context: "equal-gain balance curve lost inside the line search".into(),
        iterations: MONOPOLY_SWEEP_CAP,
        residual: f64::NAN,
    })?;
    Ok([p1, p2])
}

/// Golden-section search for the maximum of a unimodal function on [lo, hi].
fn golden_section(lo: f64, hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// A per-player discretized action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceGrid {
    /// Strictly increasing allowed prices.
    pub prices: Vec<f64>,
    /// Grid step.
    pub step: f64,
}

impl PriceGrid {
    /// Build the grid `{ p^N + (k - 1) xi : k in 0..n }` with
    /// `xi = (p^M - p^N) / (n - 2)`: one undercut step below the competitive
    /// price, the competitive price at index 1, and the collusive price at
    /// the top.
    pub fn build(p_competitive: f64, p_monopoly: f64, n_discrete: usize) -> Result<Self> {
        if n_discrete < 3 {
            return Err(Error::invalid(format!(
                "price grid needs at least 3 points, got {n_discrete}"
            )));
        }
        if p_monopoly <= p_competitive {
            return Err(Error::invalid(
                "collusive price must exceed the competitive price".to_string(),
            ));
        }
        let step = (p_monopoly - p_competitive) / (n_discrete - 2) as f64;
        let prices = (0..n_discrete)
            .map(|k| p_competitive + (k as f64 - 1.0) * step)
            .collect();
        Ok(PriceGrid { prices, step })
    }

    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Index of the grid point nearest to `price`, with the distance to it.
    pub fn nearest(&self, price: f64) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.prices.iter().enumerate() {
            let d = (price - p).abs();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Both players' grids for a base game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPair {
    pub grids: [PriceGrid; 2],
}

impl GridPair {
    /// Per-player grids from per-player benchmark prices.
    pub fn build(benchmarks: &Benchmarks, n_discrete: usize) -> Result<Self> {
        Ok(GridPair {
            grids: [
                PriceGrid::build(benchmarks.p_competitive[0], benchmarks.p_monopoly[0], n_discrete)?,
                PriceGrid::build(benchmarks.p_competitive[1], benchmarks.p_monopoly[1], n_discrete)?,
            ],
        })
    }

    pub fn n_actions(&self, player: usize) -> usize {
        self.grids[player].len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn env_c(costs: [f64; 2]) -> PricingEnv {
        PricingEnv::with_costs(costs)
    }

    #[test]
    fn demand_at_symmetric_prices_splits_evenly() {
        // Exponents vanish at p = a; each product and the outside good get 1/3.
        let env = env_c([1.0, 1.0]);
        let d = env.demand([2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(d[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d[1], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn demand_matches_closed_form() {
        // d_1 = exp(8 - 4 p_1) / (exp(8 - 4 p_1) + exp(8 - 4 p_2) + 1) at the
        // default parameters.
        let env = env_c([1.0, 1.0]);
        for &(p1, p2) in &[(1.5, 2.0), (1.473, 1.925), (0.9, 3.1)] {
            let d = env.demand([p1, p2]).unwrap();
            let e1 = (8.0 - 4.0 * p1_f(p1)).exp();
            let e2 = (8.0 - 4.0 * p1_f(p2)).exp();
            assert_abs_diff_eq!(d[0], e1 / (e1 + e2 + 1.0), epsilon = 1e-14);
            assert_abs_diff_eq!(d[1], e2 / (e1 + e2 + 1.0), epsilon = 1e-14);
        }
        fn p1_f(p: f64) -> f64 {
            p
        }
    }

    #[test]
    fn demand_rejects_bad_prices() {
        let env = env_c([1.0, 1.0]);
        assert!(env.demand([f64::NAN, 1.0]).is_err());
        assert!(env.demand([1.0, f64::INFINITY]).is_err());
        assert!(env.demand([-1e6, 1.0]).is_err());
    }

    #[test]
    fn zero_margin_means_zero_profit() {
        let env = env_c([1.0, 0.8]);
        for opp in [0.9, 1.5, 2.5] {
            let r = env.stage_profit([1.0, opp]).unwrap();
            assert_eq!(r[0], 0.0);
            let r = env.stage_profit([opp, 0.8]).unwrap();
            assert_eq!(r[1], 0.0);
        }
    }

    #[test]
    fn competitive_benchmark_symmetric_costs() {
        let (p, r) = solve_competitive(&env_c([1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(p[0], 1.47293, epsilon = 5e-5);
        assert_abs_diff_eq!(p[1], p[0], epsilon = 1e-9);
        assert_abs_diff_eq!(0.5 * (r[0] + r[1]), 0.2229, epsilon = 5e-4);

        let (_, r) = solve_competitive(&env_c([0.8, 0.8])).unwrap();
        assert_abs_diff_eq!(0.5 * (r[0] + r[1]), 0.2364, epsilon = 5e-4);
    }

    #[test]
    fn competitive_point_is_a_fixed_point_of_best_responses() {
        for costs in [[1.0, 1.0], [0.8, 0.8], [1.0, 0.8]] {
            let env = env_c(costs);
            let (p, _) = solve_competitive(&env).unwrap();
            // verify_competitive already ran; re-check the FOC residual here.
            let d = env.demand(p).unwrap();
            for j in 0..2 {
                let foc = p[j] - env.costs[j] - env.mu / (1.0 - d[j]);
                assert!(foc.abs() < 1e-8, "firm {j} FOC residual {foc}");
            }
        }
    }

    #[test]
    fn monopoly_benchmark_symmetric_costs() {
        let env = env_c([1.0, 1.0]);
        let b = Benchmarks::solve(&env).unwrap();
        assert_abs_diff_eq!(b.p_monopoly[0], 1.92498, epsilon = 5e-5);
        assert_abs_diff_eq!(b.r_bar_monopoly, 0.3375, epsilon = 5e-4);

        let b = Benchmarks::solve(&env_c([0.8, 0.8])).unwrap();
        assert_abs_diff_eq!(b.r_bar_monopoly, 0.4124, epsilon = 5e-4);
    }

    #[test]
    fn monopoly_dominates_audit_grid() {
        let env = env_c([1.0, 1.0]);
        let b = Benchmarks::solve(&env).unwrap();
        let mut best = f64::NEG_INFINITY;
        for i in 0..200 {
            for k in 0..200 {
                let p = [
                    1.0 + 1.5 * i as f64 / 199.0,
                    1.0 + 1.5 * k as f64 / 199.0,
                ];
                let r = env.stage_profit(p).unwrap();
                best = best.max(0.5 * (r[0] + r[1]));
            }
        }
        assert!(b.r_bar_monopoly >= best - 1e-9);
    }

    #[test]
    fn asymmetric_benchmarks_balance_gains() {
        let env = env_c([1.0, 0.8]);
        let b = Benchmarks::solve(&env).unwrap();
        assert_abs_diff_eq!(b.r_competitive[0], 0.1745, epsilon = 5e-4);
        assert_abs_diff_eq!(b.r_competitive[1], 0.3028, epsilon = 5e-4);
        assert_abs_diff_eq!(b.r_monopoly[0], 0.3135, epsilon = 5e-4);
        assert_abs_diff_eq!(b.r_monopoly[1], 0.4418, epsilon = 5e-4);
        let gain = [
            b.r_monopoly[0] - b.r_competitive[0],
            b.r_monopoly[1] - b.r_competitive[1],
        ];
        assert_abs_diff_eq!(gain[0], gain[1], epsilon = 1e-8);
    }

    #[test]
    fn grid_construction_matches_definition() {
        let g = PriceGrid::build(1.0, 2.0, 4).unwrap();
        assert_eq!(g.prices.len(), 4);
        assert_abs_diff_eq!(g.step, 0.5, epsilon = 1e-15);
        for (have, want) in g.prices.iter().zip([0.5, 1.0, 1.5, 2.0]) {
            assert_abs_diff_eq!(*have, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn grid_from_solved_benchmarks() {
        let b = Benchmarks::solve(&env_c([1.0, 1.0])).unwrap();
        let g = PriceGrid::build(b.p_competitive[0], b.p_monopoly[0], 15).unwrap();
        assert_eq!(g.len(), 15);
        assert_abs_diff_eq!(g.step, 0.03477, epsilon = 5e-5);
        // Index 1 is the competitive price exactly; the top is the collusive price.
        assert_eq!(g.prices[1], b.p_competitive[0]);
        assert_abs_diff_eq!(g.prices[14], b.p_monopoly[0], epsilon = 1e-12);
        // Span identity.
        assert_abs_diff_eq!(
            g.prices[14] - g.prices[0],
            14.0 * g.step,
            epsilon = 1e-12
        );
    }

    #[test]
    fn grid_rejects_tiny_sizes() {
        assert!(PriceGrid::build(1.0, 2.0, 2).is_err());
        assert!(PriceGrid::build(1.0, 2.0, 3).is_ok());
    }

    #[test]
    fn coi_endpoints() {
        let b = Benchmarks::solve(&env_c([1.0, 1.0])).unwrap();
        assert_abs_diff_eq!(coi(b.r_bar_competitive, &b).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coi(b.r_bar_monopoly, &b).unwrap(), 1.0, epsilon = 1e-12);
        // Values outside the interval are not clamped.
        assert!(coi(0.10, &b).unwrap() < 0.0);
        // At the rounded (0.22, 0.34) anchors the midpoint 0.28 sits at 50%.
        let rounded = Benchmarks {
            r_bar_competitive: 0.22,
            r_bar_monopoly: 0.34,
            ..b
        };
        assert_abs_diff_eq!(coi(0.28, &rounded).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn demand_monotone_in_own_price() {
        let env = env_c([1.0, 1.0]);
        let opp = 1.7;
        let mut last = f64::INFINITY;
        for i in 0..100 {
            let p = 1.0 + 1.5 * i as f64 / 99.0;
            let d = env.demand([p, opp]).unwrap();
            assert!(d[0] < last);
            last = d[0];
        }
    }

    #[test]
    fn demand_shares_sum_to_one_with_outside_good() {
        let env = env_c([1.0, 0.8]);
        let d = env.demand([1.3, 1.6]).unwrap();
        let outside = (env.outside_quality / env.mu).exp();
        let e1 = ((env.quality[0] - 1.3) / env.mu).exp();
        let e2 = ((env.quality[1] - 1.6) / env.mu).exp();
        let outside_share = outside / (e1 + e2 + outside);
        assert_abs_diff_eq!(d[0] + d[1] + outside_share, 1.0, epsilon = 1e-12);
    }
}

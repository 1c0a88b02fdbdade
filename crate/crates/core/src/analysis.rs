//! Game-analysis statistics over sampled meta-games: Nash enumeration,
//! max-entropy selection, NE-regret, uniform scores on the collusion-index
//! scale, weighted best-response graphs, adaptation deltas, and confidence
//! intervals.

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::Benchmarks;
use crate::metagame::MetaGameResult;
use crate::values::{cooperative_robustness, paired_cooperativeness, RepeatedGame};
use crate::{Error, Result};

/// Largest meta-game the support-enumeration solver accepts.
pub const MAX_NASH_SIZE: usize = 16;
/// Default acceptance tolerance for exact payoff matrices.
pub const DEFAULT_NE_TOL: f64 = 1e-6;
/// Two equilibria are duplicates below this L-infinity distance.
const NE_DEDUP_TOL: f64 = 1e-6;

/// A two-player payoff matrix in row-major layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bimatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row player's payoffs.
    pub row: Vec<f64>,
    /// Column player's payoffs.
    pub col: Vec<f64>,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl Bimatrix {
    pub fn new(n_rows: usize, n_cols: usize, row: Vec<f64>, col: Vec<f64>) -> Result<Self> {
        if row.len() != n_rows * n_cols || col.len() != n_rows * n_cols {
            return Err(Error::invalid("bimatrix payoff length mismatch"));
        }
        Ok(Bimatrix {
            n_rows,
            n_cols,
            row,
            col,
            row_labels: (0..n_rows).map(|i| format!("row{i}")).collect(),
            col_labels: (0..n_cols).map(|j| format!("col{j}")).collect(),
        })
    }

    pub fn with_labels(mut self, rows: Vec<String>, cols: Vec<String>) -> Self {
        self.row_labels = rows;
        self.col_labels = cols;
        self
    }

    #[inline]
    pub fn row_at(&self, i: usize, j: usize) -> f64 {
        self.row[i * self.n_cols + j]
    }

    #[inline]
    pub fn col_at(&self, i: usize, j: usize) -> f64 {
        self.col[i * self.n_cols + j]
    }

    /// Mean payoff matrix over sampled meta-games.
    pub fn mean_of(results: &[MetaGameResult]) -> Result<Self> {
        let first = results.first().ok_or_else(|| Error::invalid("no meta-games"))?;
        let (m, n) = (first.n_rows(), first.n_cols());
        let mut row = vec![0.0; m * n];
        let mut col = vec![0.0; m * n];
        for res in results {
            if res.n_rows() != m || res.n_cols() != n {
                return Err(Error::invalid("meta-games have inconsistent shapes"));
            }
            for (k, p) in res.payoff.iter().enumerate() {
                row[k] += p[0];
                col[k] += p[1];
            }
        }
        let scale = 1.0 / results.len() as f64;
        row.iter_mut().for_each(|x| *x *= scale);
        col.iter_mut().for_each(|x| *x *= scale);
        Ok(Bimatrix::new(m, n, row, col)?
            .with_labels(first.row_labels.clone(), first.col_labels.clone()))
    }

    /// One bimatrix per sampled meta-game.
    pub fn per_iteration(results: &[MetaGameResult]) -> Result<Vec<Self>> {
        results
            .iter()
            .map(|res| {
                let row = res.payoff.iter().map(|p| p[0]).collect();
                let col = res.payoff.iter().map(|p| p[1]).collect();
                Ok(Bimatrix::new(res.n_rows(), res.n_cols(), row, col)?
                    .with_labels(res.row_labels.clone(), res.col_labels.clone()))
            })
            .collect()
    }

    /// Average the matrix with its role swap. The estimator of a symmetric
    /// game is exchangeable in expectation; symmetrizing removes sampling
    /// asymmetry.
    pub fn symmetrized(&self) -> Result<Self> {
        if self.n_rows != self.n_cols {
            return Err(Error::invalid("cannot symmetrize a rectangular bimatrix"));
        }
        let n = self.n_rows;
        let mut row = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                row[i * n + j] = 0.5 * (self.row_at(i, j) + self.col_at(j, i));
            }
        }
        let col = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                row[j * n + i]
            })
            .collect();
        Ok(Bimatrix::new(n, n, row, col)?
            .with_labels(self.row_labels.clone(), self.col_labels.clone()))
    }
}

/// A mixed-strategy profile over the meta-strategy sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedProfile {
    pub row_mix: Vec<f64>,
    pub col_mix: Vec<f64>,
    /// Sum of the row and column Shannon entropies, in nats.
    pub entropy: f64,
    pub symmetric: bool,
}

impl MixedProfile {
    pub fn new(row_mix: Vec<f64>, col_mix: Vec<f64>) -> Self {
        let entropy = shannon(&row_mix) + shannon(&col_mix);
        let symmetric = row_mix.len() == col_mix.len()
            && row_mix
                .iter()
                .zip(&col_mix)
                .all(|(a, b)| (a - b).abs() < 1e-9);
        MixedProfile {
            row_mix,
            col_mix,
            entropy,
            symmetric,
        }
    }

    pub fn support(&self, mix: &[f64]) -> Vec<usize> {
        mix.iter()
            .enumerate()
            .filter(|(_, &p)| p > 1e-9)
            .map(|(i, _)| i)
            .collect()
    }
}

fn shannon(mix: &[f64]) -> f64 {
    -mix.iter()
        .filter(|&&p| p > 1e-12)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Largest unilateral deviation gain of either role at the given profile.
pub fn epsilon_of(bm: &Bimatrix, row_mix: &[f64], col_mix: &[f64]) -> f64 {
    let mut row_value = 0.0;
    let mut col_value = 0.0;
    let mut row_best = f64::NEG_INFINITY;
    let mut col_best = f64::NEG_INFINITY;
    for i in 0..bm.n_rows {
        let mut payoff = 0.0;
        for j in 0..bm.n_cols {
            payoff += col_mix[j] * bm.row_at(i, j);
        }
        row_best = row_best.max(payoff);
        row_value += row_mix[i] * payoff;
    }
    for j in 0..bm.n_cols {
        let mut payoff = 0.0;
        for i in 0..bm.n_rows {
            payoff += row_mix[i] * bm.col_at(i, j);
        }
        col_best = col_best.max(payoff);
        col_value += col_mix[j] * payoff;
    }
    (row_best - row_value).max(col_best - col_value)
}

/// Enumerate mixed equilibria by support enumeration over equal-size
/// support pairs, solving the indifference systems and keeping every
/// candidate whose unilateral deviation gain is at most `tol`.
///
/// Singular indifference systems are skipped and near-duplicate equilibria
/// are merged, which handles the degeneracies of rounded empirical
/// matrices.
pub fn find_nash(bm: &Bimatrix, tol: f64) -> Result<Vec<MixedProfile>> {
    let (m, n) = (bm.n_rows, bm.n_cols);
    if m > MAX_NASH_SIZE || n > MAX_NASH_SIZE {
        return Err(Error::UnsupportedSize(m.max(n)));
    }
    if bm.row.iter().chain(&bm.col).any(|x| !x.is_finite()) {
        return Err(Error::invalid("payoff matrix contains non-finite entries"));
    }
    let mut found: Vec<MixedProfile> = Vec::new();
    for k in 1..=m.min(n) {
        for row_support in (0..m).combinations(k) {
            for col_support in (0..n).combinations(k) {
                let col_mix = match solve_indifference(bm, &row_support, &col_support, true) {
                    Some(y) => y,
                    None => continue,
                };
                let row_mix = match solve_indifference(bm, &row_support, &col_support, false) {
                    Some(x) => x,
                    None => continue,
                };
                if epsilon_of(bm, &row_mix, &col_mix) > tol {
                    continue;
                }
                let candidate = MixedProfile::new(row_mix, col_mix);
                let duplicate = found.iter().any(|ne| {
                    ne.row_mix
                        .iter()
                        .zip(&candidate.row_mix)
                        .chain(ne.col_mix.iter().zip(&candidate.col_mix))
                        .all(|(a, b)| (a - b).abs() < NE_DEDUP_TOL)
                });
                if !duplicate {
                    found.push(candidate);
                }
            }
        }
    }
    Ok(found)
}

/// Solve one side's indifference system: the opponent mix that makes every
/// support action of this side equally good, restricted to the opponent's
/// support. Returns `None` for singular or infeasible systems.
fn solve_indifference(
    bm: &Bimatrix,
    row_support: &[usize],
    col_support: &[usize],
    for_col_mix: bool,
) -> Option<Vec<f64>> {
    let k = row_support.len();
    let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
    let mut b = DVector::<f64>::zeros(k + 1);
    if for_col_mix {
        // Unknown y over the column support makes the row support indifferent.
        for (r, &i) in row_support.iter().enumerate() {
            for (c, &j) in col_support.iter().enumerate() {
                a[(r, c)] = bm.row_at(i, j);
            }
            a[(r, k)] = -1.0;
        }
    } else {
        // Unknown x over the row support makes the column support indifferent.
        for (r, &j) in col_support.iter().enumerate() {
            for (c, &i) in row_support.iter().enumerate() {
                a[(r, c)] = bm.col_at(i, j);
            }
            a[(r, k)] = -1.0;
        }
    }
    for c in 0..k {
        a[(k, c)] = 1.0;
    }
    b[k] = 1.0;
    let solution = a.lu().solve(&b)?;
    let mut mix = vec![0.0; if for_col_mix { bm.n_cols } else { bm.n_rows }];
    let support = if for_col_mix { col_support } else { row_support };
    let mut total = 0.0;
    for (c, &idx) in support.iter().enumerate() {
        let p = solution[c];
        if p < -1e-9 || !p.is_finite() {
            return None;
        }
        let p = p.max(0.0);
        mix[idx] = p;
        total += p;
    }
    if total <= 0.0 {
        return None;
    }
    for p in mix.iter_mut() {
        *p /= total;
    }
    Some(mix)
}

/// Select the equilibrium with the highest entropy. Symmetric games
/// restrict to symmetric equilibria first and fall back to the full set if
/// none exists. Ties break deterministically by the lexicographically
/// smallest mix.
pub fn max_entropy_ne(nes: &[MixedProfile], symmetric_game: bool) -> Result<MixedProfile> {
    if nes.is_empty() {
        return Err(Error::invalid("empty equilibrium set"));
    }
    let symmetric: Vec<&MixedProfile> = nes.iter().filter(|ne| ne.symmetric).collect();
    let candidates: Vec<&MixedProfile> = if symmetric_game && !symmetric.is_empty() {
        symmetric
    } else {
        nes.iter().collect()
    };
    let best = candidates
        .into_iter()
        .max_by(|a, b| {
            a.entropy
                .partial_cmp(&b.entropy)
                .unwrap()
                .then_with(|| {
                    b.row_mix
                        .partial_cmp(&a.row_mix)
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        })
        .expect("non-empty candidates");
    Ok(best.clone())
}

/// NE-regret per pure meta-strategy: the payoff lost by playing it against
/// the equilibrium mix instead of the equilibrium itself. Returned per
/// role as `(regret, 95% CI half-width)`; the CI comes from per-iteration
/// matrices when provided.
pub fn ne_regret(
    bm: &Bimatrix,
    sigma: &MixedProfile,
    samples: Option<&[Bimatrix]>,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    if sigma.row_mix.len() != bm.n_rows || sigma.col_mix.len() != bm.n_cols {
        return Err(Error::invalid("profile dimensions do not match the matrix"));
    }
    let point = regret_point(bm, sigma);
    let cis = match samples {
        Some(mats) if mats.len() >= 2 => {
            let per_iter: Vec<(Vec<f64>, Vec<f64>)> =
                mats.iter().map(|m| regret_point(m, sigma)).collect();
            let ci_of = |role: usize, j: usize| {
                let xs: Vec<f64> = per_iter
                    .iter()
                    .map(|p| if role == 0 { p.0[j] } else { p.1[j] })
                    .collect();
                confidence_interval(&xs, 0.95).map(|(_, hw)| hw)
            };
            let row: Result<Vec<f64>> = (0..bm.n_rows).map(|j| ci_of(0, j)).collect();
            let col: Result<Vec<f64>> = (0..bm.n_cols).map(|j| ci_of(1, j)).collect();
            (row?, col?)
        }
        _ => (vec![0.0; bm.n_rows], vec![0.0; bm.n_cols]),
    };
    Ok((
        point.0.into_iter().zip(cis.0).collect(),
        point.1.into_iter().zip(cis.1).collect(),
    ))
}

fn regret_point(bm: &Bimatrix, sigma: &MixedProfile) -> (Vec<f64>, Vec<f64>) {
    let mut eq_row = 0.0;
    let mut eq_col = 0.0;
    let mut row_payoffs = vec![0.0; bm.n_rows];
    let mut col_payoffs = vec![0.0; bm.n_cols];
    for i in 0..bm.n_rows {
        for j in 0..bm.n_cols {
            row_payoffs[i] += sigma.col_mix[j] * bm.row_at(i, j);
            col_payoffs[j] += sigma.row_mix[i] * bm.col_at(i, j);
        }
    }
    for i in 0..bm.n_rows {
        eq_row += sigma.row_mix[i] * row_payoffs[i];
    }
    for j in 0..bm.n_cols {
        eq_col += sigma.col_mix[j] * col_payoffs[j];
    }
    (
        row_payoffs.iter().map(|p| eq_row - p).collect(),
        col_payoffs.iter().map(|p| eq_col - p).collect(),
    )
}

/// Uniform score per meta-strategy and role: the expected payoff against a
/// uniformly drawn opponent, plus its conversion to the collusion-index
/// scale in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformScore {
    pub score: f64,
    pub coi_percent: f64,
    pub ci: f64,
}

pub fn uniform_score(
    bm: &Bimatrix,
    benchmarks: &Benchmarks,
    samples: Option<&[Bimatrix]>,
) -> Result<(Vec<UniformScore>, Vec<UniformScore>)> {
    let anchors = [
        (benchmarks.r_competitive[0], benchmarks.r_monopoly[0]),
        (benchmarks.r_competitive[1], benchmarks.r_monopoly[1]),
    ];
    for (lo, hi) in anchors {
        if (hi - lo).abs() < 1e-15 {
            return Err(Error::DegenerateBenchmarks);
        }
    }
    let convert = |x: f64, role: usize| {
        let (lo, hi) = anchors[role];
        (x - lo) / (hi - lo) * 100.0
    };
    let point = score_point(bm);
    let cis: (Vec<f64>, Vec<f64>) = match samples {
        Some(mats) if mats.len() >= 2 => {
            let per_iter: Vec<(Vec<f64>, Vec<f64>)> = mats.iter().map(score_point).collect();
            let ci_of = |role: usize, j: usize| -> Result<f64> {
                let xs: Vec<f64> = per_iter
                    .iter()
                    .map(|p| {
                        convert(if role == 0 { p.0[j] } else { p.1[j] }, role)
                    })
                    .collect();
                confidence_interval(&xs, 0.95).map(|(_, hw)| hw)
            };
            (
                (0..bm.n_rows).map(|j| ci_of(0, j)).collect::<Result<_>>()?,
                (0..bm.n_cols).map(|j| ci_of(1, j)).collect::<Result<_>>()?,
            )
        }
        _ => (vec![0.0; bm.n_rows], vec![0.0; bm.n_cols]),
    };
    let rows = point
        .0
        .into_iter()
        .zip(cis.0)
        .map(|(s, ci)| UniformScore {
            score: s,
            coi_percent: convert(s, 0),
            ci,
        })
        .collect();
    let cols = point
        .1
        .into_iter()
        .zip(cis.1)
        .map(|(s, ci)| UniformScore {
            score: s,
            coi_percent: convert(s, 1),
            ci,
        })
        .collect();
    Ok((rows, cols))
}

fn score_point(bm: &Bimatrix) -> (Vec<f64>, Vec<f64>) {
    let rows = (0..bm.n_rows)
        .map(|i| (0..bm.n_cols).map(|j| bm.row_at(i, j)).sum::<f64>() / bm.n_cols as f64)
        .collect();
    let cols = (0..bm.n_cols)
        .map(|j| (0..bm.n_rows).map(|i| bm.col_at(i, j)).sum::<f64>() / bm.n_rows as f64)
        .collect();
    (rows, cols)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphRole {
    Row,
    Col,
    Aggregate,
}

/// Weighted best-response graph: edge `(u -> v)` accumulates `u`'s payoff
/// against `v` normalized by the best achievable payoff against `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrGraph {
    pub nodes: Vec<String>,
    /// Dense edge weights, `weights[u * nodes.len() + v]` for `u -> v`.
    pub weights: Vec<f64>,
    pub role: GraphRole,
}

impl BrGraph {
    pub fn weight(&self, u: usize, v: usize) -> f64 {
        self.weights[u * self.nodes.len() + v]
    }
}

/// Build the per-role best-response graphs over all sampled meta-games,
/// plus their aggregate for symmetric environments.
pub fn br_graph(results: &[MetaGameResult], symmetric_env: bool) -> Result<Vec<BrGraph>> {
    let mats = Bimatrix::per_iteration(results)?;
    let first = mats.first().ok_or_else(|| Error::invalid("no meta-games"))?;
    let (m, n) = (first.n_rows, first.n_cols);
    let mut row_graph = vec![0.0; m * m];
    let mut col_graph = vec![0.0; n * n];
    for bm in &mats {
        // Row responders: for each opponent column v, normalize by the best
        // row payoff against v.
        for v in 0..n {
            let column: Vec<f64> = (0..m).map(|u| bm.row_at(u, v)).collect();
            accumulate_scores(&mut row_graph, &column, v, m);
        }
        // Column responders: for each opponent row u, normalize by the best
        // column payoff against u.
        for u in 0..m {
            let row: Vec<f64> = (0..n).map(|v| bm.col_at(u, v)).collect();
            accumulate_scores(&mut col_graph, &row, u, n);
        }
    }
    let mut graphs = vec![
        BrGraph {
            nodes: first.row_labels.clone(),
            weights: row_graph.clone(),
            role: GraphRole::Row,
        },
        BrGraph {
            nodes: first.col_labels.clone(),
            weights: col_graph.clone(),
            role: GraphRole::Col,
        },
    ];
    if symmetric_env && m == n {
        let weights = row_graph
            .iter()
            .zip(&col_graph)
            .map(|(a, b)| a + b)
            .collect();
        graphs.push(BrGraph {
            nodes: first.row_labels.clone(),
            weights,
            role: GraphRole::Aggregate,
        });
    }
    Ok(graphs)
}

/// Add one meta-game's best-response scores against opponent `v`:
/// `score(u) = payoff_u / max_u' payoff_u'`, falling back to min-shifted
/// normalization when payoffs are not positive.
fn accumulate_scores(graph: &mut [f64], payoffs: &[f64], v: usize, n_nodes: usize) {
    let max = payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max > 0.0 {
        for (u, &p) in payoffs.iter().enumerate() {
            graph[u * n_nodes + v] += p / max;
        }
    } else {
        let min = payoffs.iter().copied().fold(f64::INFINITY, f64::min);
        log::warn!("br_graph: non-positive best payoff against node {v}; using min-shifted scores");
        let span = max - min;
        for (u, &p) in payoffs.iter().enumerate() {
            graph[u * n_nodes + v] += if span > 0.0 { (p - min) / span } else { 1.0 };
        }
    }
}

/// Changes in paired cooperativeness and cooperative robustness between a
/// cell's initial and end-of-horizon policy pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMetrics {
    /// PC change per player.
    pub d_pc: [f64; 2],
    /// Change of each player's own CR component (its value against the
    /// worst-case best response).
    pub d_cr_self: [f64; 2],
    /// Change of the responder-side CR component.
    pub d_cr_opp: [f64; 2],
}

/// Per-cell adaptation deltas for one sampled meta-game.
pub fn delta_metrics(result: &MetaGameResult, game: &RepeatedGame) -> Result<Vec<DeltaMetrics>> {
    let cells: Vec<Result<DeltaMetrics>> = result
        .per_cell
        .par_iter()
        .map(|cell| {
            let init = &cell.initial_policies;
            let fin = &cell.final_policies;
            let pc0 = paired_cooperativeness(game, &init[0], &init[1])?;
            let pc1 = paired_cooperativeness(game, &fin[0], &fin[1])?;
            let mut d_cr_self = [0.0; 2];
            let mut d_cr_opp = [0.0; 2];
            for role in 0..2 {
                let (s0, o0, _) = cooperative_robustness(game, role, &init[role])?;
                let (s1, o1, _) = cooperative_robustness(game, role, &fin[role])?;
                d_cr_self[role] = s1 - s0;
                d_cr_opp[role] = o1 - o0;
            }
            Ok(DeltaMetrics {
                d_pc: [pc1.0 - pc0.0, pc1.1 - pc0.1],
                d_cr_self,
                d_cr_opp,
            })
        })
        .collect();
    cells.into_iter().collect()
}

/// Normal-approximation confidence interval: `(mean, z * sd / sqrt(n))`.
pub fn confidence_interval(samples: &[f64], level: f64) -> Result<(f64, f64)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::invalid("confidence interval needs at least two samples"));
    }
    let z = match level {
        l if (l - 0.90).abs() < 1e-12 => 1.6449,
        l if (l - 0.95).abs() < 1e-12 => 1.96,
        l if (l - 0.99).abs() < 1e-12 => 2.5758,
        other => {
            return Err(Error::invalid(format!(
                "unsupported confidence level {other}; use 0.90, 0.95, or 0.99"
            )))
        }
    };
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mean, z * (var / n as f64).sqrt()))
}

//! Exact and entropic 2-Wasserstein machinery between equal-size
//! uniform-weight empirical measures.
//!
//! The exact solver is a dense shortest-augmenting-path assignment
//! (Jonker-Volgenant style, O(N³)); for uniform weights the optimum is a
//! permutation and the cost is d₂² exactly. 1-dimensional clouds take the
//! sort-based shortcut. The entropic solver is a log-domain Sinkhorn used
//! for diagnostics only — it never enters the coupling dynamics.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{dist_sq, Mat};
use crate::model::ParticleCloud;
use crate::par;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("cloud sizes differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("cloud dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("clouds are empty")]
    Empty,
    #[error("assignment problem infeasible (non-finite costs?)")]
    Infeasible,
    #[error("Sinkhorn did not converge in {iterations} iterations (marginal error {marginal_error:.3e})")]
    NonConvergence { iterations: usize, marginal_error: f64 },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Coupling between two equal-size uniform clouds: a permutation π with
/// its quadratic cost (1/N) Σ |x_i - y_{π(i)}|².
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportPlan {
    /// pairing[i] = index into the target cloud matched with source point i
    pub pairing: Vec<usize>,
    pub cost: f64,
    pub source_time: f64,
    pub target_time: f64,
}

impl TransportPlan {
    pub fn identity(n: usize, source_time: f64, target_time: f64, cost: f64) -> Self {
        TransportPlan { pairing: (0..n).collect(), cost, source_time, target_time }
    }

    /// CSV serialization: `# cost=<decimal>` header plus `i,pi_i` rows.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# cost={}", self.cost);
        s.push_str("i,pi_i\n");
        for (i, j) in self.pairing.iter().enumerate() {
            let _ = writeln!(s, "{i},{j}");
        }
        s
    }

    pub fn from_csv_str(text: &str) -> Result<Self, TransportError> {
        let mut lines = text.lines();
        let head = lines.next().ok_or_else(|| TransportError::Parse("empty".into()))?;
        let cost: f64 = head
            .strip_prefix("# cost=")
            .ok_or_else(|| TransportError::Parse(format!("bad header `{head}`")))?
            .parse()
            .map_err(|e| TransportError::Parse(format!("{e}")))?;
        let cols = lines.next().unwrap_or_default();
        if cols != "i,pi_i" {
            return Err(TransportError::Parse(format!("bad column header `{cols}`")));
        }
        let mut pairing = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let (i, j) = line
                .split_once(',')
                .ok_or_else(|| TransportError::Parse(format!("bad row `{line}`")))?;
            let i: usize = i.parse().map_err(|e| TransportError::Parse(format!("{e}")))?;
            let j: usize = j.parse().map_err(|e| TransportError::Parse(format!("{e}")))?;
            if i != pairing.len() {
                return Err(TransportError::Parse(format!("row index {i} out of order")));
            }
            pairing.push(j);
        }
        Ok(TransportPlan { pairing, cost, source_time: 0.0, target_time: 0.0 })
    }
}

/// Quadratic cost of a pairing.
pub fn pairing_cost(a: &ParticleCloud, b: &ParticleCloud, pairing: &[usize]) -> f64 {
    let mut acc = 0.0;
    for (i, &j) in pairing.iter().enumerate() {
        acc += dist_sq(a.point(i), b.point(j));
    }
    acc / a.len() as f64
}

/// True iff the pairing is a bijection and the recorded cost matches the
/// recomputed quadratic cost to 1e-12 (and does not beat the identity
/// pairing check built into the invariants).
pub fn validate_plan(plan: &TransportPlan, a: &ParticleCloud, b: &ParticleCloud) -> bool {
    let n = a.len();
    if plan.pairing.len() != n || b.len() != n || a.n_dim() != b.n_dim() {
        return false;
    }
    let mut seen = vec![false; n];
    for &j in &plan.pairing {
        if j >= n || seen[j] {
            return false;
        }
        seen[j] = true;
    }
    let recomputed = pairing_cost(a, b, &plan.pairing);
    (recomputed - plan.cost).abs() <= 1e-12 * (1.0 + recomputed.abs())
}

/// Globally optimal assignment under squared Euclidean cost.
/// Returns (d₂², plan). Ties are broken toward the lowest index, so runs
/// are deterministic.
pub fn w2_exact(
    a: &ParticleCloud,
    b: &ParticleCloud,
) -> Result<(f64, TransportPlan), TransportError> {
    check_pair(a, b)?;
    let n = a.len();
    let pairing = if a.n_dim() == 1 {
        assign_sorted_1d(a, b)
    } else {
        let cost = cost_matrix(a, b);
        solve_assignment(n, &cost)?
    };
    let cost = pairing_cost(a, b, &pairing);
    let plan = TransportPlan {
        pairing,
        cost,
        source_time: a.time,
        target_time: b.time,
    };
    Ok((cost, plan))
}

fn check_pair(a: &ParticleCloud, b: &ParticleCloud) -> Result<(), TransportError> {
    if a.is_empty() || b.is_empty() {
        return Err(TransportError::Empty);
    }
    if a.len() != b.len() {
        return Err(TransportError::SizeMismatch(a.len(), b.len()));
    }
    if a.n_dim() != b.n_dim() {
        return Err(TransportError::DimensionMismatch(a.n_dim(), b.n_dim()));
    }
    Ok(())
}

fn cost_matrix(a: &ParticleCloud, b: &ParticleCloud) -> Vec<f64> {
    let n = a.len();
    let rows = par::map_indexed(n, |i| {
        let mut row = Vec::with_capacity(n);
        let pi = a.point(i);
        for j in 0..n {
            row.push(dist_sq(pi, b.point(j)));
        }
        row
    });
    rows.into_iter().flatten().collect()
}

/// In one dimension the optimal coupling pairs order statistics.
fn assign_sorted_1d(a: &ParticleCloud, b: &ParticleCloud) -> Vec<usize> {
    let n = a.len();
    let mut ia: Vec<usize> = (0..n).collect();
    let mut ib: Vec<usize> = (0..n).collect();
    ia.sort_by(|&p, &q| a.point(p)[0].partial_cmp(&a.point(q)[0]).unwrap().then(p.cmp(&q)));
    ib.sort_by(|&p, &q| b.point(p)[0].partial_cmp(&b.point(q)[0]).unwrap().then(p.cmp(&q)));
    let mut pairing = vec![0usize; n];
    for r in 0..n {
        pairing[ia[r]] = ib[r];
    }
    pairing
}

/// Dense shortest-augmenting-path assignment on an n×n cost matrix
/// (row-major). Returns pairing[row] = column.
fn solve_assignment(n: usize, cost: &[f64]) -> Result<Vec<usize>, TransportError> {
    const UNSET: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut row_of_col = vec![UNSET; n];
    let mut col_of_row = vec![UNSET; n];

    let mut shortest = vec![0.0f64; n];
    let mut path = vec![UNSET; n];
    let mut visited_col = vec![false; n];
    let mut visited_row = vec![false; n];

    for cur_row in 0..n {
        shortest.iter_mut().for_each(|x| *x = f64::INFINITY);
        path.iter_mut().for_each(|x| *x = UNSET);
        visited_col.iter_mut().for_each(|x| *x = false);
        visited_row.iter_mut().for_each(|x| *x = false);

        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let mut sink = UNSET;
        while sink == UNSET {
            visited_row[i] = true;
            let mut lowest = f64::INFINITY;
            let mut j_low = UNSET;
            let base = i * n;
            for j in 0..n {
                if visited_col[j] {
                    continue;
                }
                let r = min_val + cost[base + j] - u[i] - v[j];
                if r < shortest[j] {
                    shortest[j] = r;
                    path[j] = i;
                }
                // strict < keeps the lowest column index on ties
                if shortest[j] < lowest || (shortest[j] == lowest && j_low != UNSET && row_of_col[j] == UNSET && row_of_col[j_low] != UNSET)
                {
                    lowest = shortest[j];
                    j_low = j;
                }
            }
            if j_low == UNSET || !lowest.is_finite() {
                return Err(TransportError::Infeasible);
            }
            min_val = lowest;
            if row_of_col[j_low] == UNSET {
                sink = j_low;
            } else {
                i = row_of_col[j_low];
            }
            visited_col[j_low] = true;
        }

        u[cur_row] += min_val;
        for r in 0..n {
            if visited_row[r] && r != cur_row {
                u[r] += min_val - shortest[col_of_row[r]];
            }
        }
        for j in 0..n {
            if visited_col[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let i = path[j];
            row_of_col[j] = i;
            std::mem::swap(&mut col_of_row[i], &mut j);
            if i == cur_row {
                break;
            }
        }
    }
    Ok(col_of_row)
}

/// Exhaustive minimum over all N! pairings; reference implementation for
/// small N (guarded at N ≤ 10).
pub fn brute_force_w2(a: &ParticleCloud, b: &ParticleCloud) -> (f64, Vec<usize>) {
    let n = a.len();
    assert!(n == b.len() && n <= 10, "brute force limited to N<=10");
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (f64::INFINITY, perm.clone());
    permute(&mut perm, 0, &mut |p| {
        let c = pairing_cost(a, b, p);
        if c < best.0 {
            best = (c, p.to_vec());
        }
    });
    best
}

fn permute(arr: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == arr.len() {
        visit(arr);
        return;
    }
    for i in k..arr.len() {
        arr.swap(k, i);
        permute(arr, k + 1, visit);
        arr.swap(k, i);
    }
}

/// Result of the entropic solver.
#[derive(Debug, Clone)]
pub struct EntropicResult {
    pub cost: f64,
    pub coupling: Mat,
    pub iterations: usize,
    pub marginal_error: f64,
}

/// Log-domain Sinkhorn with uniform marginals. Converges when both
/// marginals of the coupling are within 1e-6 of 1/N.
pub fn w2_entropic(
    a: &ParticleCloud,
    b: &ParticleCloud,
    reg: f64,
    max_iters: usize,
) -> Result<EntropicResult, TransportError> {
    check_pair(a, b)?;
    assert!(reg > 0.0, "w2_entropic: reg <= 0");
    let n = a.len();
    let cost = cost_matrix(a, b);
    let log_w = (1.0 / n as f64).ln();
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let tol = 1e-6;
    let mut marginal_error = f64::INFINITY;
    let mut iterations = 0;

    let logsumexp = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let collected: Vec<f64> = vals.collect();
        let m = collected.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        m + collected.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    };

    for it in 0..max_iters {
        iterations = it + 1;
        for i in 0..n {
            let base = i * n;
            let lse = logsumexp(&mut (0..n).map(|j| (g[j] - cost[base + j]) / reg));
            f[i] = reg * (log_w - lse);
        }
        for j in 0..n {
            let lse = logsumexp(&mut (0..n).map(|i| (f[i] - cost[i * n + j]) / reg));
            g[j] = reg * (log_w - lse);
        }
        // marginal error of the implied coupling
        let mut err: f64 = 0.0;
        for i in 0..n {
            let base = i * n;
            let row: f64 =
                (0..n).map(|j| ((f[i] + g[j] - cost[base + j]) / reg).exp()).sum();
            err = err.max((row - 1.0 / n as f64).abs());
        }
        for j in 0..n {
            let col: f64 =
                (0..n).map(|i| ((f[i] + g[j] - cost[i * n + j]) / reg).exp()).sum();
            err = err.max((col - 1.0 / n as f64).abs());
        }
        marginal_error = err;
        if err < tol {
            break;
        }
    }

    if marginal_error >= tol {
        return Err(TransportError::NonConvergence { iterations, marginal_error });
    }

    let mut coupling = Mat::zeros(n, n);
    let mut total_cost = 0.0;
    for i in 0..n {
        for j in 0..n {
            let p = ((f[i] + g[j] - cost[i * n + j]) / reg).exp();
            *coupling.at_mut(i, j) = p;
            total_cost += p * cost[i * n + j];
        }
    }
    Ok(EntropicResult { cost: total_cost, coupling, iterations, marginal_error })
}

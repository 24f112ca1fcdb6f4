//! Top-k index sets and the minimal divergence needed to break β-overlap.
//!
//! Indices are ordered by value descending with ties broken by the smaller
//! index, so every top-k set has exactly k members.

use crate::distribution::AttentionVector;
use crate::divergence::log_sum_exp;
use crate::error::{Error, Result};

/// Largest vector length accepted by [`brute_force_min_divergence`].
pub const ORACLE_MAX_LEN: usize = 5;

/// All indices of `w` sorted by value descending, ties by index ascending.
pub fn descending_order(w: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    idx
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    Ok(())
}

/// The k indices of the largest entries, largest first.
pub fn topk_set(w: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, w.len())?;
    let mut order = descending_order(w);
    order.truncate(k);
    Ok(order)
}

/// `|T_k(a) ∩ T_k(b)| / k`.
pub fn overlap_ratio(a: &[f64], b: &[f64], k: usize) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let ta = topk_set(a, k)?;
    let tb = topk_set(b, k)?;
    let shared = ta.iter().filter(|i| tb.contains(i)).count();
    Ok(shared as f64 / k as f64)
}

/// Minimum number of top-k replacements that drops the overlap below β:
/// `⌊(1−β)k⌋ + 1`.
pub fn min_changes(k: usize, beta: f64) -> usize {
    // the epsilon keeps e.g. (1 − 0.9)·10 from flooring to 0
    let k0 = ((1.0 - beta) * k as f64 + 1e-9).floor() as usize + 1;
    k0.min(k)
}

/// Boundary structure of `w` for a (k, β) overlap requirement.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKContext {
    pub k: usize,
    pub beta: f64,
    pub k0: usize,
    /// All token indices in descending order of `w`.
    pub order: Vec<usize>,
    /// The last k0 indices inside the top-k followed by the first k0 outside.
    pub boundary: Vec<usize>,
}

impl TopKContext {
    pub fn n(&self) -> usize {
        self.order.len()
    }

    /// Sorted-position range of the boundary set.
    fn boundary_positions(&self) -> std::ops::Range<usize> {
        self.k - self.k0..self.k + self.k0
    }
}

pub fn make_context(w: &AttentionVector, k: usize, beta: f64) -> Result<TopKContext> {
    let n = w.len();
    check_k(k, n)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1], got {beta}")));
    }
    let k0 = min_changes(k, beta);
    if k + k0 > n {
        return Err(Error::NotEnoughTokens { k, k0, n });
    }
    let order = descending_order(w.as_slice());
    let boundary = order[k - k0..k + k0].to_vec();
    Ok(TopKContext {
        k,
        beta,
        k0,
        order,
        boundary,
    })
}

fn check_context(w: &[f64], ctx: &TopKContext, alpha: f64) -> Result<()> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be a finite value > 1, got {alpha}")));
    }
    if ctx.order.len() != w.len() {
        return Err(Error::LengthMismatch(ctx.order.len(), w.len()));
    }
    if ctx.k0 == 0 || ctx.k + ctx.k0 > w.len() {
        return Err(Error::NotEnoughTokens {
            k: ctx.k,
            k0: ctx.k0,
            n: w.len(),
        });
    }
    Ok(())
}

/// Pieces shared by the closed form and its minimizer.
struct BoundaryTerms {
    /// `ln s` with `s = (Σ_{i∈S} w_i^α)^{1/α}`; `−∞` when S carries no mass.
    ln_s: f64,
    /// Mass outside S.
    rest: f64,
    /// `2·k0`.
    width: f64,
}

fn boundary_terms(w: &[f64], ctx: &TopKContext, alpha: f64) -> BoundaryTerms {
    let range = ctx.boundary_positions();
    let logs: Vec<f64> = ctx.order[range.clone()]
        .iter()
        .map(|&i| w[i])
        .filter(|&v| v > 0.0)
        .map(|v| alpha * v.ln())
        .collect();
    let ln_s = if logs.is_empty() {
        f64::NEG_INFINITY
    } else {
        log_sum_exp(&logs) / alpha
    };
    let rest: f64 = ctx
        .order
        .iter()
        .enumerate()
        .filter(|(pos, _)| !range.contains(pos))
        .map(|(_, &i)| w[i])
        .sum();
    BoundaryTerms {
        ln_s,
        rest,
        width: 2.0 * ctx.k0 as f64,
    }
}

/// Closed-form divergence of the tied-boundary minimizer:
///
/// `α/(α−1) · ln(2k0·s + (2k0)^{1/α}·Σ_{i∉S} w_i) − ln(2k0)/(α−1)`.
pub fn min_divergence_to_break(w: &AttentionVector, ctx: &TopKContext, alpha: f64) -> Result<f64> {
    let w = w.as_slice();
    check_context(w, ctx, alpha)?;
    let t = boundary_terms(w, ctx, alpha);
    let ln_width = t.width.ln();
    // ln(2k0·s + (2k0)^{1/α}·rest), kept in log space for large α
    let mut parts = vec![ln_width + t.ln_s];
    if t.rest > 0.0 {
        parts.push(ln_width / alpha + t.rest.ln());
    }
    let ln_z = log_sum_exp(&parts);
    let value = alpha / (alpha - 1.0) * ln_z - ln_width / (alpha - 1.0);
    Ok(value.max(0.0))
}

/// The tied-boundary minimizer: every index in S takes the same value and
/// the remaining indices stay proportional to `w`.
pub fn worst_case_q(w: &AttentionVector, ctx: &TopKContext, alpha: f64) -> Result<AttentionVector> {
    let ws = w.as_slice();
    check_context(ws, ctx, alpha)?;
    let t = boundary_terms(ws, ctx, alpha);
    let s = t.ln_s.exp();
    let outside_scale = t.width.powf(1.0 / alpha);
    let denom = t.width * s + outside_scale * t.rest;
    if !(denom > 0.0) {
        return Err(Error::ZeroVector);
    }
    let mut q: Vec<f64> = ws.iter().map(|&v| outside_scale * v / denom).collect();
    let tied = s / denom;
    for &i in &ctx.boundary {
        q[i] = tied;
    }
    AttentionVector::new(q)
}

/// Exhaustive grid oracle for [`min_divergence_to_break`].
///
/// Minimizes `D_α(w ‖ q)` over `q ∈ {c / grid_points : Σc = grid_points}` whose
/// top-k shares at most `k − k0` indices with the top-k of `w`. Ties in `q` are
/// resolved against the indices of `w`'s top-k, which searches the closure of
/// the violating set (its infimum equals that of the strict set).
///
/// Partial sums of the (positive) divergence terms prune the enumeration.
pub fn brute_force_min_divergence(
    w: &AttentionVector,
    ctx: &TopKContext,
    alpha: f64,
    grid_points: usize,
) -> Result<f64> {
    let ws = w.as_slice();
    let n = ws.len();
    if n > ORACLE_MAX_LEN {
        return Err(Error::OracleTooLarge { n, max: ORACLE_MAX_LEN });
    }
    if grid_points < 2 {
        return Err(Error::ResolutionTooCoarse);
    }
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be a finite value > 1, got {alpha}")));
    }
    if ctx.order.len() != n {
        return Err(Error::LengthMismatch(ctx.order.len(), n));
    }
    check_k(ctx.k, n)?;

    // independent of ctx.order: recompute w's top-k directly
    let mut in_top = vec![false; n];
    for i in topk_set(ws, ctx.k)? {
        in_top[i] = true;
    }

    // term[i][c] = w_i^α · (c/G)^{1−α}
    let g = grid_points as f64;
    let term: Vec<Vec<f64>> = ws
        .iter()
        .map(|&wi| {
            (0..=grid_points)
                .map(|c| {
                    if wi == 0.0 {
                        0.0
                    } else if c == 0 {
                        f64::INFINITY
                    } else {
                        wi.powf(alpha) * (c as f64 / g).powf(1.0 - alpha)
                    }
                })
                .collect()
        })
        .collect();

    let mut search = OracleSearch {
        term: &term,
        in_top: &in_top,
        k: ctx.k,
        k0: ctx.k0,
        counts: vec![0; n],
        best: f64::INFINITY,
    };
    search.descend(0, grid_points, 0.0);
    if !search.best.is_finite() {
        return Err(Error::NoViolatingQ);
    }
    Ok((search.best.ln() / (alpha - 1.0)).max(0.0))
}

struct OracleSearch<'a> {
    term: &'a [Vec<f64>],
    in_top: &'a [bool],
    k: usize,
    k0: usize,
    counts: Vec<usize>,
    best: f64,
}

impl OracleSearch<'_> {
    fn descend(&mut self, i: usize, remaining: usize, partial: f64) {
        let n = self.counts.len();
        if i == n - 1 {
            let total = partial + self.term[i][remaining];
            if total < self.best {
                self.counts[i] = remaining;
                if self.violates() {
                    self.best = total;
                }
            }
            return;
        }
        for c in 0..=remaining {
            let p = partial + self.term[i][c];
            if p >= self.best {
                continue;
            }
            self.counts[i] = c;
            self.descend(i + 1, remaining - c, p);
        }
    }

    fn violates(&self) -> bool {
        let n = self.counts.len();
        let mut idx: Vec<usize> = (0..n).collect();
        // ties favour indices outside w's top-k
        idx.sort_by(|&a, &b| {
            self.counts[b]
                .cmp(&self.counts[a])
                .then(self.in_top[a].cmp(&self.in_top[b]))
                .then(a.cmp(&b))
        });
        let kept = idx[..self.k].iter().filter(|&&i| self.in_top[i]).count();
        self.k - kept >= self.k0
    }
}

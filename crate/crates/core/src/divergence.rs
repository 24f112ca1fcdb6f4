//! Rényi divergences and the supremum over the order α.
//!
//! All logarithms are natural.

use crate::error::{Error, Result};

/// Golden-section steps performed per refinement round in [`sup_over_alpha`].
pub const GOLDEN_STEPS_PER_ROUND: usize = 8;

/// Default number of refinement rounds after the grid sweep.
pub const DEFAULT_REFINE_ROUNDS: usize = 3;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::invalid(format!("alpha must be a finite value > 1, got {alpha}")));
    }
    Ok(())
}

/// Order-α Rényi divergence `D_α(p ‖ q) = 1/(α−1) · ln Σ q_i (p_i/q_i)^α`.
///
/// Terms with `p_i = 0` contribute nothing; `p_i > 0 = q_i` gives `+∞`.
pub fn renyi_divergence(p: impl AsRef<[f64]>, q: impl AsRef<[f64]>, alpha: f64) -> Result<f64> {
    let (p, q) = (p.as_ref(), q.as_ref());
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    check_alpha(alpha)?;
    // log-sum-exp over α ln p_i + (1−α) ln q_i
    let mut logs = Vec::with_capacity(p.len());
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Ok(f64::INFINITY);
        }
        logs.push(alpha * pi.ln() + (1.0 - alpha) * qi.ln());
    }
    if logs.is_empty() {
        return Err(Error::ZeroVector);
    }
    let d = log_sum_exp(&logs) / (alpha - 1.0);
    // D_α ≥ 0 for probability vectors; rounding can leave a tiny negative.
    Ok(d.max(0.0))
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Upper bound `α‖μ‖² / (2σ²)` on `D_α(N(0, σ²I) ‖ N(μ, σ²I))` (attained with equality).
pub fn gaussian_renyi_bound(shift_l2: f64, sigma: f64, alpha: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    if !(shift_l2 >= 0.0) {
        return Err(Error::invalid(format!("shift must be >= 0, got {shift_l2}")));
    }
    check_alpha(alpha)?;
    Ok(alpha * shift_l2 * shift_l2 / (2.0 * sigma * sigma))
}

/// Largest divergence budget under which the top class cannot change:
///
/// `−ln(1 − p1 − p2 + 2·((p1^{1−α} + p2^{1−α})/2)^{1/(1−α)})`.
///
/// `p2 = 0` uses the limit of the power mean (zero), giving `−ln(1 − p1)`.
pub fn prediction_threshold(p1: f64, p2: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) || p2 > p1 {
        return Err(Error::invalid(format!(
            "need 1 >= p1 >= p2 >= 0, got p1 = {p1}, p2 = {p2}"
        )));
    }
    if p1 + p2 > 1.0 + 1e-12 {
        return Err(Error::invalid(format!("p1 + p2 = {} exceeds 1", p1 + p2)));
    }
    if p1 == p2 {
        return Ok(0.0);
    }
    let power_mean = if p2 == 0.0 {
        0.0
    } else {
        // M_r(p1, p2) with r = 1 − α < 0, evaluated in log space
        let r = 1.0 - alpha;
        let log_mean = (log_sum_exp(&[r * p1.ln(), r * p2.ln()]) - std::f64::consts::LN_2) / r;
        log_mean.exp()
    };
    let arg = (1.0 - p1 - p2) + 2.0 * power_mean;
    if arg <= 0.0 {
        if p1 >= 1.0 {
            return Ok(f64::INFINITY);
        }
        return Err(Error::ThresholdUndefined(arg));
    }
    Ok((-arg.ln()).max(0.0))
}

/// Outcome of a supremum search over α.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaSweepResult {
    pub best_alpha: f64,
    pub best_value: f64,
    /// Every non-NaN evaluation, grid points first, then refinement points.
    pub samples: Vec<(f64, f64)>,
}

/// Default α grid: 64 points with `α − 1` log-spaced, covering `(1.001, 500]`.
pub fn default_alpha_grid() -> Vec<f64> {
    log_spaced_alpha_grid(1e-3, 499.0, 64)
}

/// `count` points with `α − 1` log-spaced in `(lo, hi]`.
pub fn log_spaced_alpha_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (1..=count)
        .map(|i| 1.0 + (a + (b - a) * i as f64 / count as f64).exp())
        .collect()
}

pub fn validate_alpha_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("alpha grid is empty"));
    }
    for w in grid.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::invalid("alpha grid must be strictly increasing"));
        }
    }
    for &a in grid {
        check_alpha(a)?;
    }
    Ok(())
}

/// Maximizes `evaluator` over `grid`, then refines around the best grid point
/// with `refine_rounds` rounds of golden-section search.
///
/// The bounds this is used for are sound at every α, so the result is a valid
/// (possibly conservative) estimate of the supremum even when the objective is
/// not unimodal.
pub fn sup_over_alpha<F>(evaluator: F, grid: &[f64], refine_rounds: usize) -> Result<AlphaSweepResult>
where
    F: Fn(f64) -> f64,
{
    validate_alpha_grid(grid)?;
    let mut samples = Vec::with_capacity(grid.len() + refine_rounds * GOLDEN_STEPS_PER_ROUND + 2);
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, &a) in grid.iter().enumerate() {
        let v = evaluator(a);
        if v.is_nan() {
            continue;
        }
        samples.push((a, v));
        if best.is_none_or(|(_, _, bv)| v > bv) {
            best = Some((i, a, v));
        }
    }
    let (idx, mut best_alpha, mut best_value) = best.ok_or(Error::AllSamplesNan)?;

    if refine_rounds > 0 && best_value.is_finite() && grid.len() > 1 {
        let mut lo = grid[idx.saturating_sub(1)];
        let mut hi = grid[(idx + 1).min(grid.len() - 1)];
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut eval = |a: f64, samples: &mut Vec<(f64, f64)>| {
            let v = evaluator(a);
            if !v.is_nan() {
                samples.push((a, v));
                if v > best_value {
                    best_value = v;
                    best_alpha = a;
                }
            }
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        let mut fc = eval(c, &mut samples);
        let mut fd = eval(d, &mut samples);
        for _ in 0..refine_rounds * GOLDEN_STEPS_PER_ROUND {
            if fc >= fd {
                hi = d;
                d = c;
                fd = fc;
                c = hi - inv_phi * (hi - lo);
                fc = eval(c, &mut samples);
            } else {
                lo = c;
                c = d;
                fc = fd;
                d = lo + inv_phi * (hi - lo);
                fd = eval(d, &mut samples);
            }
        }
    }

    Ok(AlphaSweepResult {
        best_alpha,
        best_value,
        samples,
    })
}

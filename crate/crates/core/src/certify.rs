//! Monte-Carlo smoothing and the faithful-region radius.
//!
//! Draw `i ∈ 1..=m` uses the noise seed `seed ^ i`, so every draw is a pure
//! function of its index. Draws may run in parallel; all sums run in index
//! order afterwards, which makes results independent of the thread count.

use std::path::Path;
use std::str::FromStr;

use statrs::distribution::{Beta, ContinuousCDF};

use crate::dds::{DdsConfig, Denoiser, NoiseSchedule, DEFAULT_RANGE_SCALE};
use crate::distribution::{normalize_simplex, AttentionVector, PredictionDistribution};
use crate::divergence::{
    default_alpha_grid, gaussian_renyi_bound, prediction_threshold, sup_over_alpha, validate_alpha_grid,
    DEFAULT_REFINE_ROUNDS,
};
use crate::error::{Error, Result};
use crate::tensor::Image;
use crate::topk::{make_context, min_divergence_to_break};
use crate::vit::AttentionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L2,
    Linf,
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Norm::L2),
            "linf" => Ok(Norm::Linf),
            _ => Err(Error::invalid(format!("unknown norm {s:?} (expected l2 or linf)"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L2 => "l2",
            Norm::Linf => "linf",
        })
    }
}

/// Divisor turning an ℓ2 radius into an ℓ∞ radius.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinfDivisor {
    /// `√d`, the default.
    SqrtD,
    /// `d`; strictly more conservative for `d > 1`.
    D,
}

impl FromStr for LinfDivisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt_d" => Ok(LinfDivisor::SqrtD),
            "d" => Ok(LinfDivisor::D),
            _ => Err(Error::invalid(format!(
                "unknown linf divisor {s:?} (expected sqrt_d or d)"
            ))),
        }
    }
}

/// How `p1` and `p2` are taken from the vote counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConfidenceMode {
    /// Raw frequencies.
    Plugin,
    /// Clopper-Pearson bounds: lower limit for `p1`, upper limit for `p2`.
    BinomialCi { level: f64 },
}

impl FromStr for ConfidenceMode {
    type Err = Error;

    /// `plugin` or `binomial:LEVEL`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "plugin" {
            return Ok(ConfidenceMode::Plugin);
        }
        if let Some(level) = s.strip_prefix("binomial:") {
            let level: f64 = level
                .parse()
                .map_err(|_| Error::invalid(format!("bad confidence level in {s:?}")))?;
            if !(level > 0.0 && level < 1.0) {
                return Err(Error::invalid(format!(
                    "confidence level must lie in (0, 1), got {level}"
                )));
            }
            return Ok(ConfidenceMode::BinomialCi { level });
        }
        Err(Error::invalid(format!("unknown confidence mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertParams {
    pub sigma: f64,
    pub m: usize,
    pub k: usize,
    pub beta: f64,
    pub norm: Norm,
    pub linf_div: LinfDivisor,
    pub alpha_grid: Vec<f64>,
    pub refine_rounds: usize,
    pub seed: u64,
    pub confidence: ConfidenceMode,
}

impl CertParams {
    /// ℓ2, plug-in frequencies, default α grid, seed 0.
    pub fn new(sigma: f64, m: usize, k: usize, beta: f64) -> Self {
        CertParams {
            sigma,
            m,
            k,
            beta,
            norm: Norm::L2,
            linf_div: LinfDivisor::SqrtD,
            alpha_grid: default_alpha_grid(),
            refine_rounds: DEFAULT_REFINE_ROUNDS,
            seed: 0,
            confidence: ConfidenceMode::Plugin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        validate_alpha_grid(&self.alpha_grid)
    }
}

/// Empirical smoothed prediction and averaged attention.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedEstimate {
    pub p_hat: PredictionDistribution,
    pub counts: Vec<u64>,
    pub w_tilde: AttentionVector,
    pub m: usize,
    pub seed: u64,
}

/// Model, denoiser and noise level: everything needed to evaluate the
/// smoothed model at an input.
#[derive(Clone, Copy)]
pub struct SmoothedPipeline<'a> {
    pub model: &'a dyn AttentionModel,
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub sigma: f64,
    pub range_scale: f64,
}

/// Outputs of a single draw.
struct Draw {
    probs: PredictionDistribution,
    attention: AttentionVector,
}

impl<'a> SmoothedPipeline<'a> {
    pub fn new(
        model: &'a dyn AttentionModel,
        denoiser: &'a dyn Denoiser,
        schedule: &'a NoiseSchedule,
        sigma: f64,
    ) -> Self {
        SmoothedPipeline {
            model,
            denoiser,
            schedule,
            sigma,
            range_scale: DEFAULT_RANGE_SCALE,
        }
    }

    fn dds(&self) -> DdsConfig<'a> {
        DdsConfig {
            sigma: self.sigma,
            schedule: self.schedule,
            denoiser: self.denoiser,
            range_scale: self.range_scale,
        }
    }

    fn draws(&self, x: &Image, m: usize, seed: u64) -> Result<Vec<Draw>> {
        if m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        let cfg = self.dds();
        let t_star = cfg.timestep()?;
        let one = |i: u64| -> Result<Draw> {
            let run = || {
                let noisy = x.with_pixels(cfg.apply_at(&x.pixels, t_star, seed ^ i)?)?;
                let (probs, attention) = self.model.forward(&noisy)?;
                Ok(Draw { probs, attention })
            };
            run().map_err(|e| Error::Draw {
                index: i,
                source: Box::new(e),
            })
        };
        let range = 1..=m as u64;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            range.into_par_iter().map(one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            range.map(one).collect()
        }
    }

    /// Vote counts, then the mean attention renormalized.
    pub fn estimate(&self, x: &Image, m: usize, seed: u64) -> Result<SmoothedEstimate> {
        let draws = self.draws(x, m, seed)?;
        let classes = draws[0].probs.len();
        let mut counts = vec![0u64; classes];
        let mut w_sum = vec![0.0; draws[0].attention.len()];
        for d in &draws {
            counts[d.probs.argmax()] += 1;
            for (s, v) in w_sum.iter_mut().zip(d.attention.as_slice()) {
                *s += v;
            }
        }
        let inv = 1.0 / m as f64;
        let w_mean: Vec<f64> = w_sum.iter().map(|s| s * inv).collect();
        Ok(SmoothedEstimate {
            p_hat: PredictionDistribution::from_counts(&counts)?,
            counts,
            w_tilde: normalize_simplex(&w_mean)?,
            m,
            seed,
        })
    }

    /// Per-draw attention vectors in draw order, for visualization.
    pub fn attention_draws(&self, x: &Image, m: usize, seed: u64) -> Result<Vec<AttentionVector>> {
        Ok(self.draws(x, m, seed)?.into_iter().map(|d| d.attention).collect())
    }

    /// Mean class probabilities and mean attention over `m` draws; the smooth
    /// surrogates attacked by PGD.
    pub fn soft_outputs(&self, x: &Image, m: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
        let draws = self.draws(x, m, seed)?;
        let inv = 1.0 / m as f64;
        let mut probs = vec![0.0; draws[0].probs.len()];
        let mut att = vec![0.0; draws[0].attention.len()];
        for d in &draws {
            for (s, v) in probs.iter_mut().zip(d.probs.as_slice()) {
                *s += v * inv;
            }
            for (s, v) in att.iter_mut().zip(d.attention.as_slice()) {
                *s += v * inv;
            }
        }
        Ok((probs, att))
    }
}

pub fn estimate_smoothed(pipeline: &SmoothedPipeline<'_>, x: &Image, m: usize, seed: u64) -> Result<SmoothedEstimate> {
    pipeline.estimate(x, m, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificationResult {
    pub p_hat: PredictionDistribution,
    pub w_tilde: AttentionVector,
    /// Smoothed class (argmax of the vote counts).
    pub class: usize,
    /// Top-class probability used in the bound (a lower limit in CI mode).
    pub p1: f64,
    /// Runner-up probability used in the bound (an upper limit in CI mode).
    pub p2: f64,
    pub p_bound: f64,
    pub q_bound: f64,
    pub r_faithful: f64,
    /// NaN when the bound is 0 or ∞ for reasons that do not depend on α.
    pub best_alpha_p: f64,
    pub best_alpha_q: f64,
    pub norm: Norm,
    pub argmax_certified: bool,
}

/// Two-sided Clopper-Pearson interval for `successes` out of `trials`.
pub fn clopper_pearson(successes: u64, trials: u64, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::invalid(format!("bad binomial counts {successes}/{trials}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let tail = (1.0 - level) / 2.0;
    let (s, n) = (successes as f64, trials as f64);
    let beta = |a: f64, b: f64| Beta::new(a, b).map_err(|e| Error::Invariant(e.to_string()));
    let lo = if successes == 0 {
        0.0
    } else {
        beta(s, n - s + 1.0)?.inverse_cdf(tail)
    };
    let hi = if successes == trials {
        1.0
    } else {
        beta(s + 1.0, n - s)?.inverse_cdf(1.0 - tail)
    };
    Ok((lo, hi))
}

/// The two largest vote counts, largest first; ties keep the smaller class.
fn top_two_counts(counts: &[u64]) -> (usize, u64, u64) {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    let second = counts
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    (best, counts[best], second)
}

fn radius(sigma: f64, value: f64, alpha: f64) -> f64 {
    sigma * (2.0 * value / alpha).sqrt()
}

/// Bounds `P`, `Q` and `R = min(P, Q)` for an estimate; `d` is the pixel count.
pub fn faithful_region(est: &SmoothedEstimate, params: &CertParams, d: usize) -> Result<CertificationResult> {
    params.validate()?;
    if d == 0 {
        return Err(Error::invalid("input dimension must be positive"));
    }
    let sigma = params.sigma;
    let (class, c1, c2) = top_two_counts(&est.counts);
    let m = est.counts.iter().sum::<u64>();
    let (p1, p2) = match params.confidence {
        ConfidenceMode::Plugin => (c1 as f64 / m as f64, c2 as f64 / m as f64),
        ConfidenceMode::BinomialCi { level } => {
            let lo = clopper_pearson(c1, m, level)?.0;
            let hi = clopper_pearson(c2, m, level)?.1;
            (lo, hi.min(1.0 - lo))
        }
    };

    let (mut p_bound, mut best_alpha_p) = (0.0, f64::NAN);
    if p1 > p2 {
        let sweep = sup_over_alpha(
            |a| match prediction_threshold(p1, p2, a) {
                Ok(t) => radius(sigma, t, a),
                Err(_) => f64::NAN,
            },
            &params.alpha_grid,
            params.refine_rounds,
        )?;
        p_bound = sweep.best_value;
        best_alpha_p = sweep.best_alpha;
    }

    let (mut q_bound, mut best_alpha_q) = (f64::INFINITY, f64::NAN);
    match make_context(&est.w_tilde, params.k, params.beta) {
        Ok(ctx) => {
            let sweep = sup_over_alpha(
                |a| match min_divergence_to_break(&est.w_tilde, &ctx, a) {
                    Ok(v) => radius(sigma, v, a),
                    Err(_) => f64::NAN,
                },
                &params.alpha_grid,
                params.refine_rounds,
            )?;
            q_bound = sweep.best_value;
            best_alpha_q = sweep.best_alpha;
        }
        // fewer than k0 tokens outside the top-k: the overlap cannot drop below β
        Err(Error::NotEnoughTokens { k, n, .. }) if k <= n => {}
        Err(e) => return Err(e),
    }

    let r_l2 = p_bound.min(q_bound);
    let argmax_certified = p1 > p2 && p_bound > 0.0 && (r_l2.is_finite() || p_bound.is_infinite()) && {
        // γ at the certified radius against the threshold at the best α
        let a = best_alpha_p;
        let thr = prediction_threshold(p1, p2, a).unwrap_or(0.0);
        if r_l2.is_infinite() {
            thr.is_infinite()
        } else {
            gaussian_renyi_bound(r_l2, sigma, a)? <= thr * (1.0 + 1e-12)
        }
    };

    let divisor = match (params.norm, params.linf_div) {
        (Norm::L2, _) => 1.0,
        (Norm::Linf, LinfDivisor::SqrtD) => (d as f64).sqrt(),
        (Norm::Linf, LinfDivisor::D) => d as f64,
    };
    let (p_bound, q_bound) = (p_bound / divisor, q_bound / divisor);
    Ok(CertificationResult {
        p_hat: est.p_hat.clone(),
        w_tilde: est.w_tilde.clone(),
        class,
        p1,
        p2,
        p_bound,
        q_bound,
        r_faithful: p_bound.min(q_bound),
        best_alpha_p,
        best_alpha_q,
        norm: params.norm,
        argmax_certified,
    })
}

/// Estimate with `params.m` draws and `params.seed`, then bound.
pub fn certify_input(pipeline: &SmoothedPipeline<'_>, x: &Image, params: &CertParams) -> Result<CertificationResult> {
    params.validate()?;
    if pipeline.sigma != params.sigma {
        return Err(Error::invalid(format!(
            "pipeline sigma {} differs from certification sigma {}",
            pipeline.sigma, params.sigma
        )));
    }
    let est = pipeline.estimate(x, params.m, params.seed)?;
    faithful_region(&est, params, x.len())
}

/// One line of a certification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CertRow {
    pub input_id: String,
    pub sigma: f64,
    pub m: usize,
    pub k: usize,
    pub beta: f64,
    pub norm: Norm,
    pub p1: f64,
    pub p2: f64,
    pub p_bound: f64,
    pub q_bound: f64,
    pub r_faithful: f64,
    pub best_alpha_p: f64,
    pub best_alpha_q: f64,
    pub argmax_certified: bool,
}

pub const CERT_HEADER: [&str; 14] = [
    "input_id",
    "sigma",
    "m",
    "k",
    "beta",
    "norm",
    "p1",
    "p2",
    "P_bound",
    "Q_bound",
    "R_faithful",
    "best_alpha_P",
    "best_alpha_Q",
    "argmax_certified",
];

impl CertRow {
    pub fn new(input_id: impl Into<String>, params: &CertParams, r: &CertificationResult) -> Self {
        CertRow {
            input_id: input_id.into(),
            sigma: params.sigma,
            m: params.m,
            k: params.k,
            beta: params.beta,
            norm: r.norm,
            p1: r.p1,
            p2: r.p2,
            p_bound: r.p_bound,
            q_bound: r.q_bound,
            r_faithful: r.r_faithful,
            best_alpha_p: r.best_alpha_p,
            best_alpha_q: r.best_alpha_q,
            argmax_certified: r.argmax_certified,
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.input_id.clone(),
            format!("{:?}", self.sigma),
            self.m.to_string(),
            self.k.to_string(),
            format!("{:?}", self.beta),
            self.norm.to_string(),
            format!("{:?}", self.p1),
            format!("{:?}", self.p2),
            format!("{:?}", self.p_bound),
            format!("{:?}", self.q_bound),
            format!("{:?}", self.r_faithful),
            format!("{:?}", self.best_alpha_p),
            format!("{:?}", self.best_alpha_q),
            self.argmax_certified.to_string(),
        ]
    }
}

pub fn write_cert_csv(path: impl AsRef<Path>, rows: &[CertRow]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CERT_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_cert_csv(path: impl AsRef<Path>) -> Result<Vec<CertRow>> {
    let path = path.as_ref();
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let bad = |what: &str| Error::invalid(format!("{}: {what}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CERT_HEADER.iter().copied()) {
        return Err(bad("not a certification report (header mismatch)"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .map_err(|_| bad(&format!("bad number {:?} in column {}", &rec[i], CERT_HEADER[i])))
        };
        let u = |i: usize| -> Result<usize> {
            rec[i]
                .parse()
                .map_err(|_| bad(&format!("bad integer {:?} in column {}", &rec[i], CERT_HEADER[i])))
        };
        rows.push(CertRow {
            input_id: rec[0].to_string(),
            sigma: f(1)?,
            m: u(2)?,
            k: u(3)?,
            beta: f(4)?,
            norm: rec[5].parse()?,
            p1: f(6)?,
            p2: f(7)?,
            p_bound: f(8)?,
            q_bound: f(9)?,
            r_faithful: f(10)?,
            best_alpha_p: f(11)?,
            best_alpha_q: f(12)?,
            argmax_certified: rec[13]
                .parse()
                .map_err(|_| bad(&format!("bad boolean {:?}", &rec[13])))?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn estimate(counts: Vec<u64>, w: &[f64]) -> SmoothedEstimate {
        SmoothedEstimate {
            p_hat: PredictionDistribution::from_counts(&counts).unwrap(),
            counts,
            w_tilde: normalize_simplex(w).unwrap(),
            m: 100,
            seed: 0,
        }
    }

    const W: [f64; 8] = [0.3, 0.2, 0.15, 0.12, 0.1, 0.07, 0.04, 0.02];

    #[test]
    fn tied_votes_give_zero_p() {
        let r = faithful_region(&estimate(vec![50, 50], &W), &CertParams::new(0.25, 100, 2, 0.5), 64).unwrap();
        assert_eq!(r.p_bound, 0.0);
        assert_eq!(r.r_faithful, 0.0);
        assert!(!r.argmax_certified);
    }

    #[test]
    fn unanimous_votes_give_infinite_p() {
        let r = faithful_region(&estimate(vec![100, 0], &W), &CertParams::new(0.25, 100, 2, 0.5), 64).unwrap();
        assert_eq!(r.p_bound, f64::INFINITY);
        assert_eq!(r.r_faithful, r.q_bound);
        assert!(r.q_bound.is_finite() && r.q_bound > 0.0);
        assert!(r.argmax_certified);
    }

    #[test]
    fn full_topk_cannot_break() {
        let r = faithful_region(&estimate(vec![90, 10], &W), &CertParams::new(0.25, 100, 8, 1.0), 64).unwrap();
        assert_eq!(r.q_bound, f64::INFINITY);
        assert!(r.best_alpha_q.is_nan());
        assert_eq!(r.r_faithful, r.p_bound);
    }

    #[test]
    fn linf_divisors() {
        let est = estimate(vec![95, 5], &W);
        let mut params = CertParams::new(0.25, 100, 2, 0.5);
        let l2 = faithful_region(&est, &params, 64).unwrap();
        params.norm = Norm::Linf;
        let linf = faithful_region(&est, &params, 64).unwrap();
        assert!((linf.r_faithful - l2.r_faithful / 8.0).abs() < 1e-15);
        let one = faithful_region(&est, &params, 1).unwrap();
        assert_eq!(one.r_faithful, l2.r_faithful);
        params.linf_div = LinfDivisor::D;
        let lit = faithful_region(&est, &params, 64).unwrap();
        assert!((lit.r_faithful - l2.r_faithful / 64.0).abs() < 1e-15);
    }

    #[test]
    fn clopper_pearson_reference_values() {
        // closed forms at the extremes: lo = (α/2)^{1/n} for s = n
        let (lo, hi) = clopper_pearson(10, 10, 0.95).unwrap();
        assert!((lo - 0.025f64.powf(0.1)).abs() < 1e-9);
        assert_eq!(hi, 1.0);
        let (lo, hi) = clopper_pearson(0, 10, 0.95).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
        let (lo, hi) = clopper_pearson(5, 10, 0.95).unwrap();
        assert!(lo < 0.5 && hi > 0.5 && (lo + hi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn binomial_mode_is_more_conservative() {
        let est = estimate(vec![95, 5], &W);
        let mut params = CertParams::new(0.25, 100, 2, 0.5);
        let plug = faithful_region(&est, &params, 64).unwrap();
        params.confidence = ConfidenceMode::BinomialCi { level: 0.99 };
        let ci = faithful_region(&est, &params, 64).unwrap();
        assert!(ci.p1 < plug.p1 && ci.p2 > plug.p2);
        assert!(ci.p_bound < plug.p_bound);
        assert_eq!(ci.q_bound, plug.q_bound);
    }

    #[test]
    fn parse_modes() {
        assert_eq!("plugin".parse::<ConfidenceMode>().unwrap(), ConfidenceMode::Plugin);
        assert_eq!(
            "binomial:0.99".parse::<ConfidenceMode>().unwrap(),
            ConfidenceMode::BinomialCi { level: 0.99 }
        );
        assert!("binomial:1.5".parse::<ConfidenceMode>().is_err());
        assert!("l3".parse::<Norm>().is_err());
        assert_eq!("d".parse::<LinfDivisor>().unwrap(), LinfDivisor::D);
    }

    #[test]
    fn csv_round_trip() {
        let est = estimate(vec![100, 0], &W);
        let params = CertParams::new(0.25, 100, 8, 1.0);
        let r = faithful_region(&est, &params, 64).unwrap();
        let row = CertRow::new("img_0001", &params, &r);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cert.csv");
        write_cert_csv(&p, std::slice::from_ref(&row)).unwrap();
        let back = read_cert_csv(&p).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].input_id, row.input_id);
        assert_eq!(back[0].r_faithful, row.r_faithful);
        assert!(back[0].best_alpha_q.is_nan());
    }
}

//! Projected gradient ascent against black-box losses, and empirical checks
//! of certified radii.
//!
//! Gradients are central finite differences, so any pipeline can be attacked,
//! including the smoothed one. Smoothed losses reuse a fixed set of noise
//! seeds at every evaluation (common random numbers); without that, the
//! difference quotients would be dominated by Monte-Carlo noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::certify::{CertParams, CertificationResult, Norm, SmoothedPipeline};
use crate::distribution::AttentionVector;
use crate::error::{Error, Result};
use crate::tensor::Image;
use crate::topk::{overlap_ratio, topk_set};

pub const DEFAULT_FD_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    FlipPrediction,
    BreakTopK,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::FlipPrediction => "flip_prediction",
            Objective::BreakTopK => "break_topk",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub radius: f64,
    pub steps: usize,
    pub step_size: f64,
    pub norm: Norm,
    pub objective: Objective,
    pub seed: u64,
    /// Start from a uniform point in the ball instead of the input itself.
    pub random_start: bool,
    pub fd_step: f64,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius >= 0.0) || !self.radius.is_finite() {
            return Err(Error::invalid(format!(
                "radius must be finite and >= 0, got {}",
                self.radius
            )));
        }
        if self.radius > 0.0 && self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if !(self.step_size > 0.0) && self.radius > 0.0 {
            return Err(Error::invalid(format!("step size must be > 0, got {}", self.step_size)));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::invalid(format!(
                "finite-difference step must be > 0, got {}",
                self.fd_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub x_adv: Image,
    pub loss: f64,
}

pub fn norm_of(v: &[f64], norm: Norm) -> f64 {
    match norm {
        Norm::L2 => v.iter().map(|d| d * d).sum::<f64>().sqrt(),
        Norm::Linf => v.iter().fold(0.0, |m, d| f64::max(m, d.abs())),
    }
}

/// Projects `x + δ` back into the ball around `x` and then into `[0, 1]`.
fn project(x: &[f64], cand: &mut [f64], radius: f64, norm: Norm) {
    match norm {
        Norm::Linf => {
            for (c, &o) in cand.iter_mut().zip(x) {
                *c = c.clamp(o - radius, o + radius);
            }
        }
        Norm::L2 => {
            let n = cand.iter().zip(x).map(|(c, o)| (c - o) * (c - o)).sum::<f64>().sqrt();
            if n > radius {
                let s = radius / n;
                for (c, &o) in cand.iter_mut().zip(x) {
                    *c = o + (*c - o) * s;
                }
            }
        }
    }
    // x itself lies in the box, so clamping only shrinks each |δ_i|
    for c in cand.iter_mut() {
        *c = c.clamp(0.0, 1.0);
    }
}

fn random_start(x: &[f64], radius: f64, norm: Norm, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = x.len();
    let delta: Vec<f64> = match norm {
        Norm::Linf => (0..d).map(|_| rng.random_range(-radius..=radius)).collect(),
        Norm::L2 => {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm_of(&g, Norm::L2);
            let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
            g.iter().map(|v| v * r / n).collect()
        }
    };
    let mut out: Vec<f64> = x.iter().zip(&delta).map(|(a, b)| a + b).collect();
    project(x, &mut out, radius, norm);
    out
}

fn finite_gradient<F>(loss: &F, x: &Image, h: f64) -> Result<Vec<f64>>
where
    F: Fn(&Image) -> Result<f64> + Sync,
{
    let partial = |j: usize| -> Result<f64> {
        let mut plus = x.clone();
        plus.pixels[j] += h;
        let mut minus = x.clone();
        minus.pixels[j] -= h;
        Ok((loss(&plus)? - loss(&minus)?) / (2.0 * h))
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..x.len()).into_par_iter().map(partial).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..x.len()).map(partial).collect()
    }
}

/// Maximizes `loss` over the ball of `cfg.radius` around `x` intersected with
/// `[0, 1]^d`; returns the best iterate seen (the start included).
pub fn pgd_attack<F>(loss: F, x: &Image, cfg: &AttackConfig) -> Result<AttackOutcome>
where
    F: Fn(&Image) -> Result<f64> + Sync,
{
    cfg.validate()?;
    let origin = &x.pixels;
    let eval = |img: &Image, iter: usize| -> Result<f64> {
        let v = loss(img)?;
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss(iter));
        }
        Ok(v)
    };
    let mut cur = if cfg.random_start && cfg.radius > 0.0 {
        x.with_pixels(random_start(origin, cfg.radius, cfg.norm, cfg.seed))?
    } else {
        x.clone()
    };
    let mut best = AttackOutcome {
        loss: eval(&cur, 0)?,
        x_adv: cur.clone(),
    };
    if cfg.radius == 0.0 {
        return Ok(best);
    }
    for iter in 1..=cfg.steps {
        let g = finite_gradient(&loss, &cur, cfg.fd_step)?;
        let mut next = cur.pixels.clone();
        match cfg.norm {
            Norm::Linf => {
                for (v, gi) in next.iter_mut().zip(&g) {
                    if *gi != 0.0 {
                        *v += cfg.step_size * gi.signum();
                    }
                }
            }
            Norm::L2 => {
                let n = norm_of(&g, Norm::L2);
                if n > 0.0 {
                    for (v, gi) in next.iter_mut().zip(&g) {
                        *v += cfg.step_size * gi / n;
                    }
                }
            }
        }
        project(origin, &mut next, cfg.radius, cfg.norm);
        cur = x.with_pixels(next)?;
        let l = eval(&cur, iter)?;
        if l > best.loss {
            best = AttackOutcome {
                loss: l,
                x_adv: cur.clone(),
            };
        }
    }
    Ok(best)
}

/// `Σ_{i ∈ reference_topk} candidate_i`: the candidate's mass on the reference
/// top-k set. Higher means more overlap.
pub fn soft_overlap(candidate: &[f64], reference_topk: &[usize]) -> f64 {
    reference_topk.iter().map(|&i| candidate[i]).sum()
}

/// `1 − soft overlap` of the smoothed mean attention with the top-k of
/// `reference`, over `m` fixed draws seeded from `seed`.
pub fn break_topk_loss<'a>(
    pipeline: &'a SmoothedPipeline<'a>,
    reference: &AttentionVector,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<impl Fn(&Image) -> Result<f64> + Sync + 'a> {
    let top = topk_set(reference.as_slice(), k)?;
    Ok(move |img: &Image| {
        let (_, att) = pipeline.soft_outputs(img, m, seed)?;
        Ok(1.0 - soft_overlap(&att, &top))
    })
}

/// Margin of the best other class over `class` in the smoothed mean
/// probabilities; positive once the soft prediction has flipped.
pub fn flip_loss<'a>(
    pipeline: &'a SmoothedPipeline<'a>,
    class: usize,
    m: usize,
    seed: u64,
) -> impl Fn(&Image) -> Result<f64> + Sync + 'a {
    move |img: &Image| {
        let (probs, _) = pipeline.soft_outputs(img, m, seed)?;
        let other = probs
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != class)
            .map(|(_, &p)| p)
            .fold(0.0, f64::max);
        Ok(other - probs[class])
    }
}

/// Attack budget for [`verify_region`].
#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub factors: Vec<f64>,
    pub attempts: usize,
    pub steps: usize,
    /// Step size as a fraction of the attack radius.
    pub step_frac: f64,
    /// Draws per loss evaluation during the attack.
    pub attack_m: usize,
    pub fd_step: f64,
    pub seed: u64,
}

impl VerifySettings {
    pub fn new(factors: Vec<f64>, attempts: usize) -> Self {
        VerifySettings {
            factors,
            attempts,
            steps: 10,
            step_frac: 0.25,
            attack_m: 8,
            fd_step: DEFAULT_FD_STEP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorOutcome {
    pub factor: f64,
    pub objective: Objective,
    pub attempts: usize,
    pub successes: usize,
}

impl FactorOutcome {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.attempts as f64
    }
}

/// Whether `x_adv` changes the smoothed class or drops the top-k overlap
/// below β, re-estimated with the certification draws.
pub fn breaks_certificate(
    pipeline: &SmoothedPipeline<'_>,
    x_adv: &Image,
    params: &CertParams,
    cert: &CertificationResult,
) -> Result<bool> {
    let est = pipeline.estimate(x_adv, params.m, params.seed)?;
    let (class, _) = top_class(&est.counts);
    if class != cert.class {
        return Ok(true);
    }
    let v = overlap_ratio(cert.w_tilde.as_slice(), est.w_tilde.as_slice(), params.k)?;
    Ok(v < params.beta)
}

fn top_class(counts: &[u64]) -> (usize, u64) {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    (best, counts[best])
}

/// Attacks `x` at each `factor · R` with both objectives.
///
/// Factors run in ascending order and an attempt that succeeded inside a
/// smaller ball counts as a success for every larger one, since the same
/// perturbation is admissible there. Rows come out sorted by factor, then
/// objective.
pub fn verify_region(
    pipeline: &SmoothedPipeline<'_>,
    x: &Image,
    params: &CertParams,
    cert: &CertificationResult,
    settings: &VerifySettings,
) -> Result<Vec<FactorOutcome>> {
    if settings.factors.is_empty() {
        return Err(Error::invalid("no factors given"));
    }
    if settings.attempts == 0 {
        return Err(Error::invalid("attempts must be at least 1"));
    }
    if let Some(f) = settings.factors.iter().find(|f| !(**f >= 0.0) || !f.is_finite()) {
        return Err(Error::invalid(format!("factor must be finite and >= 0, got {f}")));
    }
    let r = cert.r_faithful;
    if !r.is_finite() {
        return Err(Error::invalid("certified radius is not finite; nothing to verify"));
    }
    let mut factors = settings.factors.clone();
    factors.sort_by(f64::total_cmp);
    factors.dedup();

    let objectives = [Objective::FlipPrediction, Objective::BreakTopK];
    let flip = flip_loss(pipeline, cert.class, settings.attack_m, settings.seed);
    let topk = break_topk_loss(pipeline, &cert.w_tilde, params.k, settings.attack_m, settings.seed)?;
    let mut broken = vec![[false; 2]; settings.attempts];
    let mut out = Vec::new();
    for (fi, &factor) in factors.iter().enumerate() {
        let radius = factor * r;
        for (oi, &objective) in objectives.iter().enumerate() {
            let mut successes = 0;
            for (a, done) in broken.iter_mut().enumerate() {
                if !done[oi] && radius > 0.0 {
                    let cfg = AttackConfig {
                        radius,
                        steps: settings.steps,
                        step_size: settings.step_frac * radius,
                        norm: params.norm,
                        objective,
                        seed: settings.seed ^ ((fi as u64) << 32 | (oi as u64) << 24 | a as u64),
                        random_start: a > 0,
                        fd_step: settings.fd_step,
                    };
                    let adv = match objective {
                        Objective::FlipPrediction => pgd_attack(&flip, x, &cfg)?,
                        Objective::BreakTopK => pgd_attack(&topk, x, &cfg)?,
                    };
                    done[oi] = breaks_certificate(pipeline, &adv.x_adv, params, cert)?;
                }
                successes += usize::from(done[oi]);
            }
            out.push(FactorOutcome {
                factor,
                objective,
                attempts: settings.attempts,
                successes,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(radius: f64, norm: Norm) -> AttackConfig {
        AttackConfig {
            radius,
            steps: 10,
            step_size: radius / 4.0,
            norm,
            objective: Objective::FlipPrediction,
            seed: 3,
            random_start: true,
            fd_step: DEFAULT_FD_STEP,
        }
    }

    fn quadratic(target: Vec<f64>) -> impl Fn(&Image) -> Result<f64> + Sync {
        move |img: &Image| {
            Ok(-img
                .pixels
                .iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>())
        }
    }

    #[test]
    fn zero_radius_returns_input() {
        let x = Image::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = pgd_attack(quadratic(vec![1.0; 4]), &x, &cfg(0.0, Norm::L2)).unwrap();
        assert_eq!(out.x_adv, x);
    }

    #[test]
    fn stays_in_ball_and_box() {
        let x = Image::new(2, 3, vec![0.0, 0.5, 1.0, 0.2, 0.9, 0.4]).unwrap();
        let target = vec![1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        for norm in [Norm::L2, Norm::Linf] {
            for radius in [0.05, 0.3, 2.0] {
                let out = pgd_attack(quadratic(target.clone()), &x, &cfg(radius, norm)).unwrap();
                let delta: Vec<f64> = out.x_adv.pixels.iter().zip(&x.pixels).map(|(a, b)| a - b).collect();
                assert!(norm_of(&delta, norm) <= radius + 1e-9);
                assert!(out.x_adv.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn ascends_a_quadratic() {
        let x = Image::new(1, 4, vec![0.5; 4]).unwrap();
        let loss = quadratic(vec![0.9, 0.1, 0.7, 0.6]);
        let start = loss(&x).unwrap();
        for norm in [Norm::L2, Norm::Linf] {
            let mut c = cfg(0.2, norm);
            c.random_start = false;
            let out = pgd_attack(&loss, &x, &c).unwrap();
            assert!(out.loss >= start);
            assert!(out.loss > start + 0.05);
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let x = Image::new(1, 2, vec![0.5, 0.5]).unwrap();
        let err = pgd_attack(|_: &Image| Ok(f64::NAN), &x, &cfg(0.1, Norm::L2)).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss(0)));
    }

    #[test]
    fn soft_overlap_examples() {
        let reference = [0.4, 0.3, 0.2, 0.1];
        let top = topk_set(&reference, 2).unwrap();
        assert!((soft_overlap(&reference, &top) - 0.7).abs() < 1e-15);
        assert_eq!(soft_overlap(&[0.0, 0.0, 0.5, 0.5], &top), 0.0);
        // the reference maximizes its own soft overlap among its permutations
        for perm in [[0.1, 0.2, 0.3, 0.4], [0.3, 0.4, 0.1, 0.2], [0.4, 0.2, 0.3, 0.1]] {
            assert!(soft_overlap(&perm, &top) <= soft_overlap(&reference, &top));
        }
    }
}

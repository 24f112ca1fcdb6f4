//! Denoised diffusion smoothing: Gaussian noise, timestep matching under a
//! linear DDPM schedule, scaling, and one-shot denoising.
//!
//! Pixels live in `[0, 1]`. Denoisers work in a centred domain
//! `y = range_scale · (x − ½)`; with the default `range_scale = 2` that is the
//! `[−1, 1]` range diffusion models are trained on, and the effective noise
//! level the schedule has to match is `σ' = range_scale · σ`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Image, Tensor};

pub const DEFAULT_BETA_1: f64 = 1e-4;
pub const DEFAULT_BETA_N: f64 = 0.02;
pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_RANGE_SCALE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// `β_i` linear from `beta1` to `beta_n` over `steps` steps, `ᾱ_t = Π_{i≤t}(1 − β_i)`.
pub fn linear_schedule(beta1: f64, beta_n: f64, steps: usize) -> Result<NoiseSchedule> {
    if !(0.0 < beta1 && beta1 < beta_n && beta_n < 1.0) {
        return Err(Error::invalid(format!(
            "need 0 < beta1 < betaN < 1, got {beta1}, {beta_n}"
        )));
    }
    if steps < 2 {
        return Err(Error::invalid("schedule needs at least 2 steps"));
    }
    let step = (beta_n - beta1) / (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps).map(|i| beta1 + i as f64 * step).collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &betas {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule { betas, alpha_bar })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        linear_schedule(DEFAULT_BETA_1, DEFAULT_BETA_N, DEFAULT_STEPS).expect("default schedule")
    }
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// `ᾱ_t` for `t ∈ 1..=N`; `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    /// Equivalent smoothing variance `(1 − ᾱ_t) / ᾱ_t` at step `t`.
    pub fn noise_level(&self, t: usize) -> f64 {
        let a = self.alpha_bar(t);
        (1.0 - a) / a
    }
}

/// Diffusion timestep whose noise level matches `σ' = sigma · range_scale`.
///
/// Returns the smallest `t` with `(1 − ᾱ_t)/ᾱ_t ≥ σ'²`, or 0 (no denoising)
/// when `σ'²` is below the level of the first step.
pub fn timestep_for_sigma(s: &NoiseSchedule, sigma: f64, range_scale: f64) -> Result<usize> {
    if !(sigma >= 0.0) || !(range_scale > 0.0) {
        return Err(Error::invalid(format!(
            "need sigma >= 0 and range_scale > 0, got {sigma}, {range_scale}"
        )));
    }
    let scaled = sigma * range_scale;
    let target = scaled * scaled;
    let n = s.steps();
    if target > s.noise_level(n) {
        return Err(Error::SigmaExceedsSchedule {
            scaled_sigma: scaled,
            max_sigma: s.noise_level(n).sqrt(),
        });
    }
    if target < s.noise_level(1) {
        return Ok(0);
    }
    // noise_level is increasing in t
    let t = s.alpha_bar.partition_point(|&a| (1.0 - a) / a < target);
    Ok(t + 1)
}

/// One-shot denoiser: maps a scaled noisy observation `x_t` at step `t` to an
/// estimate of the clean signal, both in the centred denoiser domain.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>>;
}

/// Undoes the `√ᾱ_t` scaling and nothing else.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let scale = schedule.alpha_bar(t).sqrt();
        Ok(x_t.iter().map(|v| v / scale).collect())
    }
}

pub fn identity_denoiser() -> IdentityDenoiser {
    IdentityDenoiser
}

/// Posterior mean under an isotropic Gaussian prior `N(prior_mean, prior_var·I)`.
#[derive(Debug, Clone)]
pub struct ShrinkageDenoiser {
    prior_mean: Vec<f64>,
    prior_var: f64,
}

impl ShrinkageDenoiser {
    pub fn prior_mean(&self) -> &[f64] {
        &self.prior_mean
    }

    pub fn prior_var(&self) -> f64 {
        self.prior_var
    }

    /// Builds the prior from pixel-domain statistics, converting them to the
    /// denoiser domain used by [`dds_transform`].
    pub fn from_pixel_prior(mean: &[f64], var: f64, range_scale: f64) -> Result<Self> {
        let m: Vec<f64> = mean.iter().map(|v| range_scale * (v - 0.5)).collect();
        shrinkage_denoiser(&Tensor::from_f64(vec![m.len()], &m)?, var * range_scale * range_scale)
    }
}

pub fn shrinkage_denoiser(prior_mean: &Tensor, prior_var: f64) -> Result<ShrinkageDenoiser> {
    if !(prior_var > 0.0) || !prior_var.is_finite() {
        return Err(Error::invalid(format!("prior_var must be > 0, got {prior_var}")));
    }
    Ok(ShrinkageDenoiser {
        prior_mean: prior_mean.to_f64(),
        prior_var,
    })
}

impl Denoiser for ShrinkageDenoiser {
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if x_t.len() != self.prior_mean.len() {
            return Err(Error::LengthMismatch(x_t.len(), self.prior_mean.len()));
        }
        let scale = schedule.alpha_bar(t).sqrt();
        let noise_var = schedule.noise_level(t);
        let weight = self.prior_var / (self.prior_var + noise_var);
        Ok(x_t
            .iter()
            .zip(&self.prior_mean)
            .map(|(&v, &mu)| weight * (v / scale) + (1.0 - weight) * mu)
            .collect())
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        (**self).denoise(x_t, t, schedule)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn denoise(&self, x_t: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        (**self).denoise(x_t, t, schedule)
    }
}

/// `N(0, σ²I)` draw of length `len`, fully determined by `seed`.
pub fn gaussian_noise(len: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect()
}

/// Settings of the smoothing transform that stay fixed across draws.
#[derive(Clone, Copy)]
pub struct DdsConfig<'a> {
    pub sigma: f64,
    pub schedule: &'a NoiseSchedule,
    pub denoiser: &'a dyn Denoiser,
    pub range_scale: f64,
}

impl DdsConfig<'_> {
    pub fn timestep(&self) -> Result<usize> {
        timestep_for_sigma(self.schedule, self.sigma, self.range_scale)
    }

    /// Applies the transform with a precomputed timestep.
    pub fn apply_at(&self, x: &[f64], t_star: usize, seed: u64) -> Result<Vec<f64>> {
        let noise = gaussian_noise(x.len(), self.sigma, seed);
        let noisy: Vec<f64> = x.iter().zip(&noise).map(|(a, b)| a + b).collect();
        if t_star == 0 {
            return Ok(noisy);
        }
        let rs = self.range_scale;
        let scale = self.schedule.alpha_bar(t_star).sqrt();
        let x_t: Vec<f64> = noisy.iter().map(|v| scale * rs * (v - 0.5)).collect();
        let est = self.denoiser.denoise(&x_t, t_star, self.schedule)?;
        if est.len() != x.len() {
            return Err(Error::LengthMismatch(est.len(), x.len()));
        }
        if let Some(i) = est.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(est.into_iter().map(|v| v / rs + 0.5).collect())
    }
}

/// Noise, scale by `√ᾱ_{t*}`, denoise, map back to pixels.
pub fn dds_transform(x: &Image, cfg: &DdsConfig<'_>, seed: u64) -> Result<Image> {
    let t_star = cfg.timestep()?;
    x.with_pixels(cfg.apply_at(&x.pixels, t_star, seed)?)
}

/// Max-fuse with lowest-value drop: zero the lowest `drop_frac` of each map,
/// take the elementwise maximum, then min-max rescale to `[0, 1]`.
///
/// A constant fused map carries no structure and comes back as all zeros.
pub fn fuse_maps(maps: &[Tensor], drop_frac: f64) -> Result<Tensor> {
    let first = maps.first().ok_or_else(|| Error::invalid("no maps to fuse"))?;
    if !(0.0..1.0).contains(&drop_frac) {
        return Err(Error::invalid(format!("drop_frac must lie in [0, 1), got {drop_frac}")));
    }
    let shape = first.shape().to_vec();
    let len = first.numel();
    let n_drop = (drop_frac * len as f64).floor() as usize;
    let mut fused = vec![f64::NEG_INFINITY; len];
    for m in maps {
        if m.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                shape: shape.clone(),
                expected: len,
                actual: m.numel(),
            });
        }
        let mut vals = m.to_f64();
        let mut order: Vec<usize> = (0..len).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        for &i in &order[..n_drop] {
            vals[i] = 0.0;
        }
        for (f, v) in fused.iter_mut().zip(vals) {
            *f = f.max(v);
        }
    }
    let lo = fused.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = fused.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let out: Vec<f64> = if hi > lo {
        fused.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; len]
    };
    Tensor::from_f64(shape, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_schedule_values() {
        let s = NoiseSchedule::default();
        assert_eq!(s.steps(), 1000);
        assert!((s.alpha_bar(1) - 0.9999).abs() < 1e-15);
        // cumulative product at 50 digits (mpmath)
        assert!((s.alpha_bar(2) - 0.999_780_092_072_072_1).abs() < 1e-15);
        assert!((s.betas()[999] - 0.02).abs() < 1e-15);
    }

    #[test]
    fn two_step_schedule() {
        let s = linear_schedule(0.1, 0.3, 2).unwrap();
        assert_eq!(s.alpha_bar(1), 0.9);
        assert!((s.alpha_bar(2) - 0.9 * 0.7).abs() < 1e-15);
    }

    #[test]
    fn schedule_rejects_bad_params() {
        assert!(linear_schedule(0.0, 0.02, 10).is_err());
        assert!(linear_schedule(0.03, 0.02, 10).is_err());
        assert!(linear_schedule(1e-4, 1.0, 10).is_err());
        assert!(linear_schedule(1e-4, 0.02, 1).is_err());
    }

    #[test]
    fn alpha_bar_strictly_decreasing() {
        let s = NoiseSchedule::default();
        for t in 1..=s.steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.alpha_bar(t) > 0.0);
        }
    }

    #[test]
    fn timestep_lookup() {
        let s = NoiseSchedule::default();
        assert_eq!(timestep_for_sigma(&s, 0.0, 2.0).unwrap(), 0);
        assert_eq!(timestep_for_sigma(&s, 1e-4, 2.0).unwrap(), 0);
        assert!(matches!(
            timestep_for_sigma(&s, 100.0, 2.0),
            Err(Error::SigmaExceedsSchedule { .. })
        ));
        let mut prev = 0;
        for i in 1..=100 {
            let sigma = i as f64 * 0.02;
            let t = timestep_for_sigma(&s, sigma, 2.0).unwrap();
            assert!(t >= prev);
            prev = t;
            let target = (2.0 * sigma) * (2.0 * sigma);
            let gap = s.noise_level(t) - s.noise_level(t.saturating_sub(1));
            assert!((s.noise_level(t) - target).abs() <= gap);
        }
    }

    #[test]
    fn identity_round_trip() {
        let s = NoiseSchedule::default();
        let x = Image::new(2, 2, vec![0.1, 0.5, 0.9, 0.3]).unwrap();
        let cfg = DdsConfig {
            sigma: 0.1,
            schedule: &s,
            denoiser: &IdentityDenoiser,
            range_scale: 2.0,
        };
        assert!(cfg.timestep().unwrap() > 0);
        let out = dds_transform(&x, &cfg, 7).unwrap();
        let noise = gaussian_noise(4, 0.1, 7);
        for ((o, xi), n) in out.pixels.iter().zip(&x.pixels).zip(&noise) {
            assert!((o - (xi + n)).abs() < 1e-12);
        }
        assert_eq!(out, dds_transform(&x, &cfg, 7).unwrap());
        assert_ne!(out, dds_transform(&x, &cfg, 8).unwrap());
    }

    #[test]
    fn zero_timestep_returns_noisy_input() {
        let s = NoiseSchedule::default();
        let x = Image::filled(2, 2, 0.5);
        let cfg = DdsConfig {
            sigma: 1e-5,
            schedule: &s,
            denoiser: &IdentityDenoiser,
            range_scale: 2.0,
        };
        assert_eq!(cfg.timestep().unwrap(), 0);
        let out = dds_transform(&x, &cfg, 3).unwrap();
        let noise = gaussian_noise(4, 1e-5, 3);
        for (o, n) in out.pixels.iter().zip(&noise) {
            assert_eq!(*o, 0.5 + n);
        }
    }

    #[test]
    fn shrinkage_limits() {
        let s = NoiseSchedule::default();
        let mean = Tensor::from_f64(vec![3], &[0.2, -0.1, 0.4]).unwrap();
        let t = 200;
        let x_t = vec![0.5, 0.1, -0.3];
        let unscaled: Vec<f64> = x_t.iter().map(|v| v / s.alpha_bar(t).sqrt()).collect();

        let wide = shrinkage_denoiser(&mean, 1e12).unwrap();
        let out = wide.denoise(&x_t, t, &s).unwrap();
        for (a, b) in out.iter().zip(&unscaled) {
            assert!((a - b).abs() < 1e-9);
        }

        let narrow = shrinkage_denoiser(&mean, 1e-12).unwrap();
        let out = narrow.denoise(&x_t, t, &s).unwrap();
        for (a, b) in out.iter().zip(mean.to_f64()) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(shrinkage_denoiser(&mean, 0.0).is_err());
        assert!(wide.denoise(&x_t[..2], t, &s).is_err());
    }

    #[test]
    fn shrinkage_equal_weights() {
        // find t with noise level ≈ 1, then put prior_var at exactly that level
        let s = NoiseSchedule::default();
        let t = timestep_for_sigma(&s, 1.0, 1.0).unwrap();
        let var = s.noise_level(t);
        let mean = Tensor::from_f64(vec![1], &[0.0]).unwrap();
        let d = shrinkage_denoiser(&mean, var).unwrap();
        let x_t = [s.alpha_bar(t).sqrt() * 2.0];
        let out = d.denoise(&x_t, t, &s).unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn shrinkage_reduces_error_on_gaussian_prior_data() {
        use rand::Rng;
        let s = NoiseSchedule::default();
        let n = 64;
        let prior_mean = vec![0.5; n];
        let prior_var = 0.01;
        let sigma = 0.2;
        let shrink = ShrinkageDenoiser::from_pixel_prior(&prior_mean, prior_var, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut err_id, mut err_sh) = (0.0, 0.0);
        for draw in 0..100u64 {
            let x: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    0.5 + prior_var.sqrt() * z
                })
                .collect();
            let img = Image::new(8, 8, x.clone()).unwrap();
            let _ = rng.random::<u8>();
            for (den, acc) in [
                (&IdentityDenoiser as &dyn Denoiser, &mut err_id),
                (&shrink as &dyn Denoiser, &mut err_sh),
            ] {
                let cfg = DdsConfig {
                    sigma,
                    schedule: &s,
                    denoiser: den,
                    range_scale: 2.0,
                };
                let out = dds_transform(&img, &cfg, draw).unwrap();
                *acc += out.pixels.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        assert!(err_sh < err_id, "shrinkage {err_sh} vs identity {err_id}");
    }

    #[test]
    fn fuse_examples() {
        let a = Tensor::from_f64(vec![4], &[0.2, 0.6, 1.0, 0.4]).unwrap();
        let single = fuse_maps(std::slice::from_ref(&a), 0.0).unwrap();
        let expected = [0.0, 0.5, 1.0, 0.25];
        for (x, e) in single.to_f64().iter().zip(expected) {
            assert!((x - e).abs() < 1e-6);
        }
        assert_eq!(fuse_maps(&[a.clone(), a.clone()], 0.0).unwrap(), single);

        let p = Tensor::from_f64(vec![2], &[1.0, 0.0]).unwrap();
        let q = Tensor::from_f64(vec![2], &[0.0, 1.0]).unwrap();
        assert_eq!(fuse_maps(&[p, q], 0.0).unwrap().to_f64(), vec![0.0, 0.0]);

        assert!(fuse_maps(&[], 0.1).is_err());
        assert!(fuse_maps(std::slice::from_ref(&a), 1.0).is_err());
    }

    #[test]
    fn fuse_drops_lowest_values() {
        let a = Tensor::from_f64(vec![10], &[0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4]).unwrap();
        let out = fuse_maps(&[a], 0.1).unwrap().to_f64();
        assert_eq!(out[0], 0.0);
        assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((out[9] - 1.0).abs() < 1e-6);
    }
}

//! Saliency-map quality scores against ground-truth masks, and the
//! pixel-erasure perturbation test.

use crate::certify::SmoothedPipeline;
use crate::error::{Error, Result};
use crate::tensor::Image;

pub const DEFAULT_SFAITH_EPS: f64 = 0.01;

/// Fractions of pixels erased by the perturbation test: 10 %, 20 %, …, 90 %.
pub fn default_fractions() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::invalid("empty map"));
    }
    Ok(())
}

/// `N / (Σ|M_gt − M_p| + eps)`.
pub fn s_faith(m_gt: &[f64], m_p: &[f64], eps: f64) -> Result<f64> {
    same_len(m_gt, m_p)?;
    let diff: f64 = m_gt.iter().zip(m_p).map(|(a, b)| (a - b).abs()).sum();
    Ok(m_gt.len() as f64 / (diff + eps))
}

/// `map > mean(map)`; a constant map is all background.
pub fn binarize_at_mean(map: &[f64]) -> Vec<bool> {
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    map.iter().map(|&v| v > mean).collect()
}

fn mask_bits(mask: &[f64]) -> Vec<bool> {
    mask.iter().map(|&v| v > 0.5).collect()
}

pub fn pixel_accuracy(map: &[f64], mask: &[f64]) -> Result<f64> {
    same_len(map, mask)?;
    let pred = binarize_at_mean(map);
    let hits = pred.iter().zip(mask_bits(mask)).filter(|(p, m)| **p == *m).count();
    Ok(hits as f64 / map.len() as f64)
}

/// IoU averaged over the foreground and background classes; a class absent
/// from both prediction and mask scores 1.
pub fn miou(map: &[f64], mask: &[f64]) -> Result<f64> {
    same_len(map, mask)?;
    let pred = binarize_at_mean(map);
    let truth = mask_bits(mask);
    let iou = |class: bool| {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&p, &t) in pred.iter().zip(&truth) {
            inter += usize::from(p == class && t == class);
            union += usize::from(p == class || t == class);
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    };
    Ok((iou(true) + iou(false)) / 2.0)
}

pub fn mask_is_empty(mask: &[f64]) -> bool {
    !mask.iter().any(|&v| v > 0.5)
}

/// Area under the precision-recall curve with map values as scores.
///
/// Each distinct score is a threshold (`score ≥ t` is positive); the curve
/// starts at recall 0, precision 1 and is integrated with the trapezoid rule.
/// An empty mask has no positives and scores 0 (see [`mask_is_empty`]).
pub fn average_precision(map: &[f64], mask: &[f64]) -> Result<f64> {
    same_len(map, mask)?;
    let truth = mask_bits(mask);
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Ok(0.0);
    }
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| map[b].total_cmp(&map[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_r, mut prev_p) = (0.0, 1.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        // take every pixel tied at this score
        let t = map[order[i]];
        while i < order.len() && map[order[i]] == t {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let r = tp as f64 / positives as f64;
        let p = tp as f64 / (tp + fp) as f64;
        area += (r - prev_r) * (p + prev_p) / 2.0;
        prev_r = r;
        prev_p = p;
    }
    Ok(area.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbationMode {
    /// Erase the most salient pixels first.
    Positive,
    /// Erase the least salient pixels first.
    Negative,
}

impl std::fmt::Display for PerturbationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PerturbationMode::Positive => "positive",
            PerturbationMode::Negative => "negative",
        })
    }
}

/// Sets `round(fraction · N)` pixels to 0, ordered by saliency (ties by index).
pub fn erase_fraction(x: &Image, saliency: &[f64], fraction: f64, mode: PerturbationMode) -> Result<Image> {
    same_len(&x.pixels, saliency)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    match mode {
        PerturbationMode::Positive => order.sort_by(|&a, &b| saliency[b].total_cmp(&saliency[a]).then(a.cmp(&b))),
        PerturbationMode::Negative => order.sort_by(|&a, &b| saliency[a].total_cmp(&saliency[b]).then(a.cmp(&b))),
    }
    let count = (fraction * x.len() as f64).round() as usize;
    let mut out = x.clone();
    for &i in &order[..count] {
        out.pixels[i] = 0.0;
    }
    Ok(out)
}

/// 1 where the smoothed prediction after erasure equals `clean_class`, else 0.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_test(
    pipeline: &SmoothedPipeline<'_>,
    saliency: &[f64],
    x: &Image,
    mode: PerturbationMode,
    fractions: &[f64],
    m: usize,
    seed: u64,
    clean_class: usize,
) -> Result<Vec<f64>> {
    fractions
        .iter()
        .map(|&f| {
            let erased = erase_fraction(x, saliency, f, mode)?;
            let est = pipeline.estimate(&erased, m, seed)?;
            Ok(if est.p_hat.argmax() == clean_class { 1.0 } else { 0.0 })
        })
        .collect()
}

/// `100 ×` mean correctness over the curve.
pub fn p_auc(curve: &[f64]) -> Result<f64> {
    if curve.is_empty() {
        return Err(Error::invalid("empty perturbation curve"));
    }
    Ok(100.0 * curve.iter().sum::<f64>() / curve.len() as f64)
}

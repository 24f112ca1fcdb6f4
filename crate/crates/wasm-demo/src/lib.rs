//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions hold the logic
//! and are what the native tests call.

use attncert::certify::{certify_input, CertParams, SmoothedPipeline};
use attncert::data::gen_synthetic_dataset;
use attncert::dds::{IdentityDenoiser, NoiseSchedule};
use attncert::divergence::{default_alpha_grid, prediction_threshold, sup_over_alpha, DEFAULT_REFINE_ROUNDS};
use attncert::topk::{make_context, min_divergence_to_break, worst_case_q};
use attncert::vit::{fit_head, init_params, upsample_patches, AttentionMode, ToyViT, ViTDims};
use attncert::{AttentionVector, Image};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

type DemoResult = Result<Value, String>;

fn radius(sigma: f64, value: f64, alpha: f64) -> f64 {
    sigma * (2.0 * value / alpha).sqrt()
}

/// JSON has no infinities; they become `null`.
fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn curve(samples: &[(f64, f64)]) -> Value {
    let mut pts = samples.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Value::Array(pts.iter().map(|&(a, r)| json!([a, finite(r)])).collect())
}

/// Prediction radius as a function of α for top-two probabilities.
pub fn alpha_curve_json(p1: f64, p2: f64, sigma: f64) -> DemoResult {
    if !(sigma > 0.0) {
        return Err(format!("sigma must be > 0, got {sigma}"));
    }
    if !(p1 > p2) {
        return Ok(json!({ "radius": 0.0, "best_alpha": null, "curve": [] }));
    }
    let sweep = sup_over_alpha(
        |a| prediction_threshold(p1, p2, a).map_or(f64::NAN, |t| radius(sigma, t, a)),
        &default_alpha_grid(),
        DEFAULT_REFINE_ROUNDS,
    )
    .map_err(|e| e.to_string())?;
    Ok(json!({
        "radius": finite(sweep.best_value),
        "best_alpha": sweep.best_alpha,
        "curve": curve(&sweep.samples),
    }))
}

/// Boundary set, tied minimizer and top-k radius for an attention vector.
pub fn topk_certificate_json(weights: &[f64], k: usize, beta: f64, sigma: f64, alpha: f64) -> DemoResult {
    let w = AttentionVector::new(weights.to_vec()).map_err(|e| e.to_string())?;
    let ctx = make_context(&w, k, beta).map_err(|e| e.to_string())?;
    let divergence = min_divergence_to_break(&w, &ctx, alpha).map_err(|e| e.to_string())?;
    let q = worst_case_q(&w, &ctx, alpha).map_err(|e| e.to_string())?;
    let sweep = sup_over_alpha(
        |a| min_divergence_to_break(&w, &ctx, a).map_or(f64::NAN, |v| radius(sigma, v, a)),
        &default_alpha_grid(),
        DEFAULT_REFINE_ROUNDS,
    )
    .map_err(|e| e.to_string())?;
    Ok(json!({
        "k0": ctx.k0,
        "boundary": ctx.boundary,
        "divergence": divergence,
        "worst_case_q": q.as_slice(),
        "radius": finite(sweep.best_value),
        "best_alpha": sweep.best_alpha,
        "curve": curve(&sweep.samples),
    }))
}

/// Trains the 16×16 toy model on a small synthetic set, then certifies one
/// freshly generated image.
pub fn certify_synthetic_json(index: usize, sigma: f64, m: usize, k: usize, beta: f64) -> DemoResult {
    const SIZE: usize = 16;
    let err = |e: attncert::Error| e.to_string();
    if m == 0 || m > 20_000 {
        return Err("m must lie in 1..=20000".into());
    }
    let dims = ViTDims {
        image_height: SIZE,
        image_width: SIZE,
        patch_size: 4,
        q: 8,
        layers: 2,
        classes: 2,
    };
    let mut params = init_params(0, dims).map_err(err)?;
    let train = gen_synthetic_dataset(100, SIZE, 100).map_err(err)?;
    let images: Vec<Image> = train.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    params.w_head = fit_head(&params, &images, &labels, 1e-3).map_err(err)?;
    let model = ToyViT {
        params,
        mode: AttentionMode::ClsLast,
    };
    let sample = gen_synthetic_dataset(index + 1, SIZE, 7)
        .map_err(err)?
        .pop()
        .expect("index + 1 samples");
    let (den, sched) = (IdentityDenoiser, NoiseSchedule::default());
    let pipe = SmoothedPipeline::new(&model, &den, &sched, sigma);
    let cp = CertParams::new(sigma, m, k, beta);
    let r = certify_input(&pipe, &sample.image, &cp).map_err(err)?;
    let heat = upsample_patches(r.w_tilde.as_slice(), SIZE, SIZE, 4).map_err(err)?;
    Ok(json!({
        "size": SIZE,
        "label": sample.label,
        "pixels": sample.image.pixels,
        "mask": sample.mask.pixels,
        "attention": heat.pixels,
        "class": r.class,
        "p1": r.p1,
        "p2": r.p2,
        "P": finite(r.p_bound),
        "Q": finite(r.q_bound),
        "R": finite(r.r_faithful),
    }))
}

fn to_js(r: DemoResult) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn alpha_curve(p1: f64, p2: f64, sigma: f64) -> Result<String, JsError> {
    to_js(alpha_curve_json(p1, p2, sigma))
}

#[wasm_bindgen]
pub fn topk_certificate(weights: Vec<f64>, k: usize, beta: f64, sigma: f64, alpha: f64) -> Result<String, JsError> {
    to_js(topk_certificate_json(&weights, k, beta, sigma, alpha))
}

#[wasm_bindgen]
pub fn certify_synthetic(index: usize, sigma: f64, m: usize, k: usize, beta: f64) -> Result<String, JsError> {
    to_js(certify_synthetic_json(index, sigma, m, k, beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_curve_peaks_at_reported_radius() {
        let v = alpha_curve_json(0.9, 0.1, 0.25).unwrap();
        let r = v["radius"].as_f64().unwrap();
        let pts = v["curve"].as_array().unwrap();
        assert!(pts.len() > 64);
        let top = pts.iter().map(|p| p[1].as_f64().unwrap()).fold(0.0, f64::max);
        assert_eq!(top, r);
        assert_eq!(alpha_curve_json(0.5, 0.5, 0.25).unwrap()["radius"], 0.0);
        assert!(alpha_curve_json(0.9, 0.1, 0.0).is_err());
    }

    #[test]
    fn topk_certificate_fields() {
        let v = topk_certificate_json(&[0.4, 0.3, 0.2, 0.1], 1, 1.0, 0.25, 2.0).unwrap();
        assert_eq!(v["k0"], 1);
        assert_eq!(v["boundary"], json!([0, 1]));
        let q: Vec<f64> = v["worst_case_q"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(q[0], q[1]);
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v["radius"].as_f64().unwrap() > 0.0);
        assert!(topk_certificate_json(&[0.5, 0.5], 2, 0.5, 0.25, 2.0).is_err());
    }

    #[test]
    fn certify_synthetic_is_deterministic() {
        let a = certify_synthetic_json(3, 0.25, 64, 4, 0.75).unwrap();
        let b = certify_synthetic_json(3, 0.25, 64, 4, 0.75).unwrap();
        assert_eq!(a, b);
        assert_eq!(a["pixels"].as_array().unwrap().len(), 256);
        assert_eq!(a["label"], 1);
        assert!(certify_synthetic_json(0, 0.25, 0, 4, 0.75).is_err());
    }
}

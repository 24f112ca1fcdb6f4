mod common;

use attncert::attack::{pgd_attack, verify_region, AttackConfig, Objective, VerifySettings, DEFAULT_FD_STEP};
use attncert::certify::{certify_input, CertParams, Norm, SmoothedPipeline};
use attncert::dds::{IdentityDenoiser, NoiseSchedule};
use attncert::metrics::{
    average_precision, erase_fraction, p_auc, perturbation_test, pixel_accuracy, PerturbationMode,
};
use attncert::vit::AttentionMode;

#[test]
fn verify_region_rows_are_cumulative() {
    let model = common::trained_model(16, AttentionMode::ClsLast);
    let (den, sched) = (IdentityDenoiser, NoiseSchedule::default());
    let pipe = SmoothedPipeline::new(&model, &den, &sched, 0.25);
    let params = CertParams::new(0.25, 256, 4, 0.75);
    let x = &common::eval_set(1, 16)[0].image;
    let cert = certify_input(&pipe, x, &params).unwrap();
    let mut settings = VerifySettings::new(vec![4.0, 0.0, 16.0], 2);
    settings.steps = 2;
    settings.attack_m = 2;
    let rows = verify_region(&pipe, x, &params, &cert, &settings).unwrap();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].factor, 0.0);
    assert_eq!(rows[0].successes + rows[1].successes, 0);
    for obj in [Objective::FlipPrediction, Objective::BreakTopK] {
        let s: Vec<_> = rows
            .iter()
            .filter(|r| r.objective == obj)
            .map(|r| r.successes)
            .collect();
        assert!(s.windows(2).all(|w| w[0] <= w[1]), "{obj}: {s:?}");
    }
    assert!(verify_region(&pipe, x, &params, &cert, &VerifySettings::new(vec![], 1)).is_err());
}

#[test]
fn linf_attack_respects_box_and_radius() {
    let target: Vec<f64> = (0..16).map(|i| (i % 2) as f64).collect();
    let loss = |img: &attncert::Image| Ok(-img.pixels.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>());
    let x = attncert::Image::filled(4, 4, 0.95);
    let cfg = AttackConfig {
        radius: 0.1,
        steps: 5,
        step_size: 0.05,
        norm: Norm::Linf,
        objective: Objective::FlipPrediction,
        seed: 1,
        random_start: false,
        fd_step: DEFAULT_FD_STEP,
    };
    let out = pgd_attack(loss, &x, &cfg).unwrap();
    for (i, (&a, &o)) in out.x_adv.pixels.iter().zip(&x.pixels).enumerate() {
        assert!((0.0..=1.0).contains(&a));
        assert!((a - o).abs() <= 0.1 + 1e-12);
        let want = if i % 2 == 1 { 1.0 } else { 0.85 };
        assert!((a - want).abs() < 1e-9, "pixel {i}: {a}");
    }
}

#[test]
fn oracle_saliency_scores_perfectly() {
    for s in common::eval_set(10, 16) {
        assert_eq!(pixel_accuracy(&s.mask.pixels, &s.mask.pixels).unwrap(), 1.0);
        assert_eq!(average_precision(&s.mask.pixels, &s.mask.pixels).unwrap(), 1.0);
    }
}

#[test]
fn erasing_everything_gives_a_constant_image() {
    let s = &common::eval_set(1, 16)[0];
    let blank = erase_fraction(&s.image, &s.mask.pixels, 1.0, PerturbationMode::Positive).unwrap();
    assert!(blank.pixels.iter().all(|&v| v == 0.0));
}

#[test]
fn perturbation_curve_shape() {
    let model = common::trained_model(16, AttentionMode::ClsLast);
    let (den, sched) = (IdentityDenoiser, NoiseSchedule::default());
    let pipe = SmoothedPipeline::new(&model, &den, &sched, 0.25);
    let s = &common::eval_set(1, 16)[0];
    let clean = pipe.estimate(&s.image, 64, 0).unwrap().p_hat.argmax();
    let fr = [0.0, 0.5];
    let curve = perturbation_test(
        &pipe,
        &s.mask.pixels,
        &s.image,
        PerturbationMode::Negative,
        &fr,
        64,
        0,
        clean,
    )
    .unwrap();
    assert_eq!(curve[0], 1.0);
    assert!(curve.iter().all(|&v| v == 0.0 || v == 1.0));
    assert!((0.0..=100.0).contains(&p_auc(&curve).unwrap()));
}

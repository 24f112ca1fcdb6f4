use std::path::Path;

use attncert::attack::{verify_region, VerifySettings};
use attncert::certify::{
    certify_input, read_cert_csv, write_cert_csv, CertParams, CertRow, ConfidenceMode, LinfDivisor, Norm,
    SmoothedPipeline,
};
use attncert::data::{gen_synthetic_dataset, read_dataset, write_dataset, Sample};
use attncert::dds::{fuse_maps, timestep_for_sigma, Denoiser, IdentityDenoiser, NoiseSchedule, ShrinkageDenoiser};
use attncert::metrics::{
    average_precision, default_fractions, mask_is_empty, miou, p_auc, perturbation_test, pixel_accuracy, s_faith,
    PerturbationMode, DEFAULT_SFAITH_EPS,
};
use attncert::vit::{fit_head, forward, init_params, upsample_patches, AttentionMode, ToyViT, ToyViTParams, ViTDims};
use attncert::{write_tensor, Image, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cli::{CertifyArgs, EvalArgs, FitHeadArgs, GenDataArgs, InitModelArgs, PipelineArgs, VerifyArgs};
use crate::error::{data, usage, CliError, CliResult};
use crate::record::{dataset_fingerprint, meta_path, model_fingerprint, RunRecord};

fn parse_flag<T: std::str::FromStr<Err = attncert::Error>>(flag: &str, v: &str) -> CliResult<T> {
    v.parse().map_err(|e: attncert::Error| usage(format!("--{flag}: {e}")))
}

fn must_exist(flag: &str, path: &Path) -> CliResult<()> {
    if !path.exists() {
        return Err(usage(format!("--{flag}: {} does not exist", path.display())));
    }
    Ok(())
}

/// The directory that will hold `out` must already exist.
fn check_output_file(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(usage(format!("--out: directory {} does not exist", dir.display())))
        }
        _ if path.is_dir() => Err(usage(format!("--out: {} is a directory", path.display()))),
        _ => Ok(()),
    }
}

fn write_csv<R: AsRef<[String]>>(path: &Path, header: &[&str], rows: &[R]) -> CliResult<()> {
    let err = |e: csv::Error| data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r.as_ref()).map_err(err)?;
    }
    w.flush().map_err(|e| data(format!("{}: {e}", path.display())))
}

pub fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let samples = gen_synthetic_dataset(a.count, a.size, a.seed)?;
    write_dataset(&a.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), a.out.display());
    Ok(())
}

pub fn init_model(a: &InitModelArgs) -> CliResult<()> {
    let dims = ViTDims {
        image_height: a.size,
        image_width: a.size,
        patch_size: a.patch,
        q: a.q,
        layers: a.layers,
        classes: a.classes,
    };
    init_params(a.seed, dims)?.save(&a.out)?;
    println!("wrote model to {}", a.out.display());
    Ok(())
}

pub fn fit_head_cmd(a: &FitHeadArgs) -> CliResult<()> {
    must_exist("model", &a.model)?;
    must_exist("data", &a.data)?;
    let mut params = ToyViTParams::load(&a.model)?;
    let samples = read_dataset(&a.data)?;
    let images: Vec<Image> = samples.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    params.w_head = fit_head(&params, &images, &labels, a.ridge)?;
    let correct = images
        .par_iter()
        .zip(&labels)
        .map(|(x, &y)| {
            Ok(usize::from(
                forward(x, &params, AttentionMode::ClsLast)?.0.argmax() == y,
            ))
        })
        .collect::<attncert::Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    params.save(&a.out)?;
    println!(
        "training accuracy {:.4} on {} samples; wrote model to {}",
        correct as f64 / samples.len() as f64,
        samples.len(),
        a.out.display()
    );
    Ok(())
}

/// Model, denoiser, schedule and data behind a smoothing pipeline.
struct Setup {
    model: ToyViT,
    denoiser: Box<dyn Denoiser>,
    schedule: NoiseSchedule,
    samples: Vec<Sample>,
    sigma: f64,
    range_scale: f64,
}

impl Setup {
    fn load(a: &PipelineArgs) -> CliResult<Self> {
        let mode: AttentionMode = parse_flag("attention", &a.attention)?;
        must_exist("model", &a.model)?;
        must_exist("input", &a.input)?;
        let schedule = NoiseSchedule::default();
        if !(a.range_scale > 0.0) || !a.range_scale.is_finite() {
            return Err(usage(format!("--range-scale must be > 0, got {}", a.range_scale)));
        }
        timestep_for_sigma(&schedule, a.sigma, a.range_scale).map_err(|e| usage(format!("--sigma: {e}")))?;
        let params = ToyViTParams::load(&a.model)?;
        let samples = read_dataset(&a.input)?;
        let pixels = samples[0].image.len();
        let denoiser: Box<dyn Denoiser> = match a.denoiser.as_str() {
            "identity" => Box::new(IdentityDenoiser),
            "shrinkage" => Box::new(
                ShrinkageDenoiser::from_pixel_prior(&vec![a.prior_mean; pixels], a.prior_var, a.range_scale)
                    .map_err(|e| usage(format!("shrinkage prior: {e}")))?,
            ),
            other => {
                return Err(usage(format!(
                    "--denoiser: unknown denoiser {other:?} (expected identity or shrinkage)"
                )))
            }
        };
        Ok(Setup {
            model: ToyViT { params, mode },
            denoiser,
            schedule,
            samples,
            sigma: a.sigma,
            range_scale: a.range_scale,
        })
    }

    fn pipeline(&self) -> SmoothedPipeline<'_> {
        let mut p = SmoothedPipeline::new(&self.model, self.denoiser.as_ref(), &self.schedule, self.sigma);
        p.range_scale = self.range_scale;
        p
    }
}

fn cert_params(a: &CertifyArgs) -> CliResult<CertParams> {
    let mut p = CertParams::new(a.pipeline.sigma, a.m, a.k, a.beta);
    p.norm = parse_flag::<Norm>("norm", &a.norm)?;
    p.linf_div = parse_flag::<LinfDivisor>("linf-div", &a.linf_div)?;
    p.confidence = parse_flag::<ConfidenceMode>("ci", &a.ci)?;
    p.seed = a.seed;
    p.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

/// Runs every sample, keeping input order; the first failure (if any) is
/// returned after all rows are known.
fn per_sample<T: Send>(
    samples: &[Sample],
    f: impl Fn(usize, &Sample) -> CliResult<T> + Sync,
) -> (Vec<T>, Option<CliError>) {
    let results: Vec<CliResult<T>> = samples.par_iter().enumerate().map(|(i, s)| f(i, s)).collect();
    let mut ok = Vec::new();
    let mut first = None;
    for (s, r) in samples.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => {
                eprintln!("error: {}: {e}", s.id);
                first.get_or_insert(e);
            }
        }
    }
    (ok, first)
}

pub fn certify(a: &CertifyArgs) -> CliResult<()> {
    let params = cert_params(a)?;
    check_output_file(&a.out)?;
    let setup = Setup::load(&a.pipeline)?;
    let pipe = setup.pipeline();
    let (rows, failure) = per_sample(&setup.samples, |_, s| {
        let r = certify_input(&pipe, &s.image, &params)?;
        Ok(CertRow::new(&s.id, &params, &r))
    });
    write_cert_csv(&a.out, &rows)?;

    let canonical = |p: &Path| p.canonicalize().map_err(|e| data(format!("{}: {e}", p.display())));
    let mut rec = RunRecord::default();
    rec.set("model", canonical(&a.pipeline.model)?.display());
    rec.set("model_sha256", model_fingerprint(&setup.model.params)?);
    rec.set("input", canonical(&a.pipeline.input)?.display());
    rec.set("input_sha256", dataset_fingerprint(&setup.samples)?);
    rec.set("attention", &a.pipeline.attention);
    rec.set("denoiser", &a.pipeline.denoiser);
    rec.set("prior_mean", format!("{:?}", a.pipeline.prior_mean));
    rec.set("prior_var", format!("{:?}", a.pipeline.prior_var));
    rec.set("sigma", format!("{:?}", a.pipeline.sigma));
    rec.set("range_scale", format!("{:?}", a.pipeline.range_scale));
    rec.set("m", a.m);
    rec.set("k", a.k);
    rec.set("beta", format!("{:?}", a.beta));
    rec.set("norm", &a.norm);
    rec.set("linf_div", &a.linf_div);
    rec.set("ci", &a.ci);
    rec.set("seed", a.seed);
    rec.write(&meta_path(&a.out))?;

    let certified = rows.iter().filter(|r| r.r_faithful > 0.0).count();
    println!(
        "certified {certified}/{} inputs; wrote {}",
        setup.samples.len(),
        a.out.display()
    );
    failure.map_or(Ok(()), Err)
}

pub const VERIFY_HEADER: [&str; 5] = ["input_id", "factor", "objective", "attempts", "successes"];

pub fn verify(a: &VerifyArgs) -> CliResult<()> {
    must_exist("cert-report", &a.cert_report)?;
    check_output_file(&a.out)?;
    if a.factors.is_empty() {
        return Err(usage("--factors: no factors given"));
    }
    if a.attempts == 0 {
        return Err(usage("--attempts must be at least 1"));
    }
    let meta = meta_path(&a.cert_report);
    let rec = RunRecord::read(&meta)?;
    let pipeline_args = PipelineArgs {
        model: rec.get("model")?.into(),
        attention: rec.get("attention")?.to_string(),
        denoiser: rec.get("denoiser")?.to_string(),
        prior_mean: rec.parse("prior_mean")?,
        prior_var: rec.parse("prior_var")?,
        sigma: rec.parse("sigma")?,
        range_scale: rec.parse("range_scale")?,
        input: rec.get("input")?.into(),
    };
    let cert_args = CertifyArgs {
        pipeline: pipeline_args.clone(),
        m: rec.parse("m")?,
        k: rec.parse("k")?,
        beta: rec.parse("beta")?,
        norm: rec.get("norm")?.to_string(),
        linf_div: rec.get("linf_div")?.to_string(),
        ci: rec.get("ci")?.to_string(),
        seed: rec.parse("seed")?,
        out: a.cert_report.clone(),
    };
    let params = cert_params(&cert_args)?;
    let setup = Setup::load(&pipeline_args)?;
    if model_fingerprint(&setup.model.params)? != rec.get("model_sha256")? {
        return Err(data(format!(
            "{}: stale report, model has changed",
            a.cert_report.display()
        )));
    }
    if dataset_fingerprint(&setup.samples)? != rec.get("input_sha256")? {
        return Err(data(format!(
            "{}: stale report, input data has changed",
            a.cert_report.display()
        )));
    }
    let rows = read_cert_csv(&a.cert_report)?;
    let mut jobs = Vec::with_capacity(rows.len());
    for row in &rows {
        let sample = setup
            .samples
            .iter()
            .find(|s| s.id == row.input_id)
            .ok_or_else(|| data(format!("stale report: input {} not in dataset", row.input_id)))?;
        jobs.push((row, sample.clone()));
    }

    let mut settings = VerifySettings::new(a.factors.clone(), a.attempts);
    settings.steps = a.steps;
    settings.attack_m = a.attack_m;
    settings.seed = a.seed;
    let pipe = setup.pipeline();
    let samples: Vec<Sample> = jobs.iter().map(|(_, s)| s.clone()).collect();
    let (results, failure) = per_sample(&samples, |i, s| {
        let row = jobs[i].0;
        let cert = certify_input(&pipe, &s.image, &params)?;
        if format!("{:?}", cert.r_faithful) != format!("{:?}", row.r_faithful) {
            return Err(data(format!(
                "stale report: recomputed radius {:?} differs from reported {:?}",
                cert.r_faithful, row.r_faithful
            )));
        }
        if !cert.r_faithful.is_finite() {
            eprintln!("note: {}: unbounded radius, skipped", s.id);
            return Ok(Vec::new());
        }
        let out = verify_region(&pipe, &s.image, &params, &cert, &settings)?;
        Ok(out
            .into_iter()
            .map(|o| {
                vec![
                    s.id.clone(),
                    format!("{:?}", o.factor),
                    o.objective.to_string(),
                    o.attempts.to_string(),
                    o.successes.to_string(),
                ]
            })
            .collect())
    });
    let lines: Vec<Vec<String>> = results.into_iter().flatten().collect();
    write_csv(&a.out, &VERIFY_HEADER, &lines)?;
    println!("wrote {} rows to {}", lines.len(), a.out.display());
    failure.map_or(Ok(()), Err)
}

pub const METRICS_HEADER: [&str; 4] = ["input_id", "metric", "value", "note"];
const ALL_METRICS: [&str; 6] = [
    "pixel_accuracy",
    "miou",
    "average_precision",
    "p_auc_pos",
    "p_auc_neg",
    "s_faith",
];
const SALIENCY_MODES: [&str; 5] = ["raw", "rollout", "smoothed", "oracle", "random"];
const FUSE_DROP: f64 = 0.1;

fn parse_metrics(spec: &str) -> CliResult<Vec<&'static str>> {
    if spec == "all" {
        return Ok(ALL_METRICS.to_vec());
    }
    spec.split(',')
        .map(|m| {
            ALL_METRICS
                .iter()
                .find(|&&k| k == m.trim())
                .copied()
                .ok_or_else(|| usage(format!("--metrics: unknown metric {m:?}")))
        })
        .collect()
}

struct Saliency<'a> {
    setup: &'a Setup,
    mode: &'a str,
    m: usize,
    seed: u64,
}

impl Saliency<'_> {
    fn upsample(&self, x: &Image, w: &[f64]) -> CliResult<Image> {
        Ok(upsample_patches(
            w,
            x.height,
            x.width,
            self.setup.model.params.patch_size,
        )?)
    }

    fn map(&self, index: usize, s: &Sample, x: &Image) -> CliResult<Vec<f64>> {
        let params = &self.setup.model.params;
        let w = match self.mode {
            "raw" => forward(x, params, AttentionMode::ClsLast)?.1,
            "rollout" => forward(x, params, AttentionMode::ClsRollout)?.1,
            "smoothed" => self.setup.pipeline().estimate(x, self.m, self.seed)?.w_tilde,
            "oracle" => return Ok(s.mask.pixels.clone()),
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(2 * index as u64);
                return Ok((0..x.len()).map(|_| rng.random::<f64>()).collect());
            }
        };
        Ok(self.upsample(x, w.as_slice())?.pixels)
    }

    /// Max-fuse of the per-draw maps for the smoothed mode, otherwise the
    /// rescaled map itself.
    fn fused(&self, x: &Image, map: &[f64]) -> CliResult<Tensor> {
        let shape = vec![x.height, x.width];
        let maps: Vec<Tensor> = if self.mode == "smoothed" {
            self.setup
                .pipeline()
                .attention_draws(x, self.m, self.seed)?
                .iter()
                .map(|w| self.upsample(x, w.as_slice())?.to_tensor().map_err(CliError::from))
                .collect::<CliResult<_>>()?
        } else {
            vec![Tensor::from_f64(shape, map)?]
        };
        Ok(fuse_maps(&maps, FUSE_DROP)?)
    }
}

fn perturbed(x: &Image, radius: f64, seed: u64, index: usize) -> CliResult<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * index as u64 + 1);
    let pixels = x
        .pixels
        .iter()
        .map(|&v| (v + rng.random_range(-radius..=radius)).clamp(0.0, 1.0))
        .collect();
    Ok(x.with_pixels(pixels)?)
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    if !SALIENCY_MODES.contains(&a.saliency_mode.as_str()) {
        return Err(usage(format!(
            "--saliency-mode: unknown mode {:?} (expected one of {})",
            a.saliency_mode,
            SALIENCY_MODES.join(", ")
        )));
    }
    let metrics = parse_metrics(&a.metrics)?;
    if a.m == 0 {
        return Err(usage("--m must be at least 1"));
    }
    if !(a.perturb_radius >= 0.0) || !a.perturb_radius.is_finite() {
        return Err(usage(format!(
            "--perturb-radius must be >= 0, got {}",
            a.perturb_radius
        )));
    }
    check_output_file(&a.out)?;
    if let Some(dir) = &a.dump_maps {
        std::fs::create_dir_all(dir).map_err(|e| usage(format!("--dump-maps: {}: {e}", dir.display())))?;
    }
    let setup = Setup::load(&a.pipeline)?;
    let sal = Saliency {
        setup: &setup,
        mode: &a.saliency_mode,
        m: a.m,
        seed: a.seed,
    };
    let pipe = setup.pipeline();
    let fractions = default_fractions();

    let (results, failure) = per_sample(&setup.samples, |i, s| {
        let x = &s.image;
        let map = sal.map(i, s, x)?;
        let mask = &s.mask.pixels;
        let clean_class = pipe.estimate(x, a.m, a.seed)?.p_hat.argmax();
        let mut rows = Vec::new();
        for &metric in &metrics {
            let mut note = String::new();
            let value = match metric {
                "pixel_accuracy" => pixel_accuracy(&map, mask)?,
                "miou" => miou(&map, mask)?,
                "average_precision" => {
                    if mask_is_empty(mask) {
                        note = "empty_mask".into();
                    }
                    average_precision(&map, mask)?
                }
                "p_auc_pos" | "p_auc_neg" => {
                    let mode = if metric == "p_auc_pos" {
                        PerturbationMode::Positive
                    } else {
                        PerturbationMode::Negative
                    };
                    p_auc(&perturbation_test(
                        &pipe,
                        &map,
                        x,
                        mode,
                        &fractions,
                        a.m,
                        a.seed,
                        clean_class,
                    )?)?
                }
                _ => {
                    let moved = perturbed(x, a.perturb_radius, a.seed, i)?;
                    s_faith(&map, &sal.map(i, s, &moved)?, DEFAULT_SFAITH_EPS)?
                }
            };
            rows.push(vec![s.id.clone(), metric.to_string(), format!("{value:?}"), note]);
        }
        if let Some(dir) = &a.dump_maps {
            write_tensor(
                &Tensor::from_f64(vec![x.height, x.width], &map)?,
                dir.join(format!("{}_saliency.fvtn", s.id)),
            )?;
            write_tensor(&sal.fused(x, &map)?, dir.join(format!("{}_fused.fvtn", s.id)))?;
        }
        Ok(rows)
    });
    let lines: Vec<Vec<String>> = results.into_iter().flatten().collect();
    write_csv(&a.out, &METRICS_HEADER, &lines)?;
    println!("wrote {} rows to {}", lines.len(), a.out.display());
    failure.map_or(Ok(()), Err)
}

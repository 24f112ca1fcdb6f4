//! Certified faithful regions for attention-based image models.
//!
//! A model maps an image to a class distribution and an attention vector over
//! patches. Smoothing the model with denoised Gaussian noise yields radii
//! within which both the smoothed top class and the top-k attention indices
//! provably stay put; [`certify`] computes them, [`attack`] probes them
//! empirically and [`metrics`] scores saliency maps.

pub mod attack;
pub mod certify;
pub mod data;
pub mod dds;
pub mod distribution;
pub mod divergence;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod topk;
pub mod vit;

pub use certify::{
    certify_input, estimate_smoothed, faithful_region, CertParams, CertificationResult, ConfidenceMode, LinfDivisor,
    Norm, SmoothedEstimate, SmoothedPipeline,
};
pub use dds::{dds_transform, fuse_maps, linear_schedule, timestep_for_sigma, Denoiser, NoiseSchedule};
pub use distribution::{normalize_simplex, AttentionVector, PredictionDistribution};
pub use divergence::{prediction_threshold, renyi_divergence, sup_over_alpha};
pub use error::{Error, ErrorKind, Result};
pub use tensor::{read_tensor, write_tensor, Image, Tensor};
pub use topk::{
    brute_force_min_divergence, make_context, min_divergence_to_break, overlap_ratio, topk_set, worst_case_q,
};
pub use vit::{AttentionMode, AttentionModel, ToyViT, ToyViTParams};

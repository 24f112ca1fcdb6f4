#![allow(dead_code)]

use attncert::data::{gen_synthetic_dataset, Sample};
use attncert::vit::{fit_head, init_params, AttentionMode, ToyViT, ViTDims};

pub fn dims(size: usize) -> ViTDims {
    ViTDims {
        image_height: size,
        image_width: size,
        patch_size: 4,
        q: 8,
        layers: 2,
        classes: 2,
    }
}

/// Toy model with a head fitted on 200 synthetic training images.
pub fn trained_model(size: usize, mode: AttentionMode) -> ToyViT {
    let mut params = init_params(0, dims(size)).unwrap();
    let train = gen_synthetic_dataset(200, size, 100).unwrap();
    let images: Vec<_> = train.iter().map(|s| s.image.clone()).collect();
    let labels: Vec<_> = train.iter().map(|s| s.label).collect();
    params.w_head = fit_head(&params, &images, &labels, 1e-3).unwrap();
    ToyViT { params, mode }
}

pub fn eval_set(count: usize, size: usize) -> Vec<Sample> {
    gen_synthetic_dataset(count, size, 7).unwrap()
}

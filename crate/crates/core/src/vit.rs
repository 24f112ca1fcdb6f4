//! A small single-head ViT-style model over image patches.
//!
//! Tokens are stored as rows (`n × q`). Layer `l` computes
//! `A = softmax_rows(Q Kᵀ / √q)` with `Q = X W_Qᵀ`, `K = X W_Kᵀ`, `V = X W_Vᵀ`
//! and `Z = A V W_L`; the layer output is `X + Z` standardized per token. The projection
//! matrices are shared across layers. Token 0 is the summary token; its final
//! feature feeds the linear head and its attention row is the attention vector.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::distribution::{normalize_simplex, softmax_in_place, AttentionVector, PredictionDistribution};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Image, Tensor};

const NORM_EPS: f64 = 1e-6;
pub const MANIFEST_FILE: &str = "manifest.txt";

/// How the summary token's attention is turned into a vector over patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    /// Summary row of the last layer's attention matrix.
    ClsLast,
    /// Summary row of the product `A_L ⋯ A_1`.
    ClsRollout,
}

impl std::str::FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "cls_last" => Ok(AttentionMode::ClsLast),
            "rollout" | "cls_rollout" => Ok(AttentionMode::ClsRollout),
            _ => Err(Error::invalid(format!("unknown attention mode {s:?}"))),
        }
    }
}

/// Sizes needed to initialize a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViTDims {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub q: usize,
    pub layers: usize,
    pub classes: usize,
}

impl ViTDims {
    pub fn patch_count(&self) -> Result<usize> {
        let p = self.patch_size;
        if p == 0 || !self.image_height.is_multiple_of(p) || !self.image_width.is_multiple_of(p) {
            return Err(Error::invalid(format!(
                "{}x{} image is not divisible into {p}x{p} patches",
                self.image_height, self.image_width
            )));
        }
        Ok((self.image_height / p) * (self.image_width / p))
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [r, c] => Ok(Matrix {
                rows: r,
                cols: c,
                data: t.to_f64(),
            }),
            _ => Err(Error::invalid(format!("expected a matrix, got shape {:?}", t.shape()))),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_f64(vec![self.rows, self.cols], &self.data)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (dst, &b) in o.iter_mut().zip(other.row(k)) {
                    *dst += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = self.row(i).iter().zip(other.row(j)).map(|(a, b)| a * b).sum();
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyViTParams {
    pub patch_size: usize,
    pub q: usize,
    /// Token count including the summary token.
    pub n: usize,
    pub layers: usize,
    pub classes: usize,
    pub seed: u64,
    /// `patch_size² × q`.
    pub w_embed: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_l: Matrix,
    /// `q × classes`.
    pub w_head: Matrix,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Matrix { rows, cols, data }
}

/// Entries drawn i.i.d. `N(0, 1)/√q` from ChaCha8 seeded with `seed`, in the
/// order `W_embed, W_Q, W_K, W_V, W_L, W_head`, each row-major, then rounded
/// to `f32` so the in-memory model equals its saved form.
pub fn init_params(seed: u64, dims: ViTDims) -> Result<ToyViTParams> {
    let patches = dims.patch_count()?;
    if dims.q == 0 || dims.layers == 0 || dims.classes == 0 {
        return Err(Error::invalid("q, layers and classes must be positive"));
    }
    let (p2, q) = (dims.patch_size * dims.patch_size, dims.q);
    let scale = 1.0 / (q as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ToyViTParams {
        patch_size: dims.patch_size,
        q,
        n: patches + 1,
        layers: dims.layers,
        classes: dims.classes,
        seed,
        w_embed: random_matrix(&mut rng, p2, q, scale),
        w_q: random_matrix(&mut rng, q, q, scale),
        w_k: random_matrix(&mut rng, q, q, scale),
        w_v: random_matrix(&mut rng, q, q, scale),
        w_l: random_matrix(&mut rng, q, q, scale),
        w_head: random_matrix(&mut rng, q, dims.classes, scale),
    }
    .quantized())
}

impl ToyViTParams {
    pub fn patch_count(&self) -> usize {
        self.n - 1
    }

    fn validate(&self) -> Result<()> {
        let (p2, q) = (self.patch_size * self.patch_size, self.q);
        let checks = [
            ("w_embed", &self.w_embed, p2, q),
            ("w_q", &self.w_q, q, q),
            ("w_k", &self.w_k, q, q),
            ("w_v", &self.w_v, q, q),
            ("w_l", &self.w_l, q, q),
            ("w_head", &self.w_head, q, self.classes),
        ];
        for (name, m, r, c) in checks {
            if m.rows != r || m.cols != c {
                return Err(Error::invalid(format!(
                    "{name} has shape [{}, {}], expected [{r}, {c}]",
                    m.rows, m.cols
                )));
            }
        }
        if self.n < 2 || self.layers == 0 {
            return Err(Error::invalid("model needs at least one patch and one layer"));
        }
        Ok(())
    }

    /// Writes one FVTN file per matrix plus `manifest.txt`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, m) in self.matrices() {
            write_tensor(&m.to_tensor()?, dir.join(format!("{name}.fvtn")))?;
        }
        let manifest = format!(
            "patch_size = {}\nq = {}\nn = {}\nlayers = {}\nclasses = {}\nseed = {}\n",
            self.patch_size, self.q, self.n, self.layers, self.classes, self.seed
        );
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let kv = parse_key_values(&text).map_err(|msg| Error::invalid(format!("{}: {msg}", path.display())))?;
        let get = |key: &str| -> Result<u64> {
            let v = kv
                .get(key)
                .ok_or_else(|| Error::invalid(format!("{}: missing key {key}", path.display())))?;
            v.parse()
                .map_err(|_| Error::invalid(format!("{}: bad value for {key}: {v:?}", path.display())))
        };
        for key in kv.keys() {
            if !["patch_size", "q", "n", "layers", "classes", "seed"].contains(&key.as_str()) {
                return Err(Error::invalid(format!("{}: unknown key {key}", path.display())));
            }
        }
        let load = |name: &str| Matrix::from_tensor(&read_tensor(dir.join(format!("{name}.fvtn")))?);
        let params = ToyViTParams {
            patch_size: get("patch_size")? as usize,
            q: get("q")? as usize,
            n: get("n")? as usize,
            layers: get("layers")? as usize,
            classes: get("classes")? as usize,
            seed: get("seed")?,
            w_embed: load("w_embed")?,
            w_q: load("w_q")?,
            w_k: load("w_k")?,
            w_v: load("w_v")?,
            w_l: load("w_l")?,
            w_head: load("w_head")?,
        };
        params.validate()?;
        Ok(params)
    }

    /// Every weight matrix with its file stem, in initialization order.
    pub fn matrices(&self) -> [(&'static str, &Matrix); 6] {
        [
            ("w_embed", &self.w_embed),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_l", &self.w_l),
            ("w_head", &self.w_head),
        ]
    }

    /// Rounds every weight to `f32`, matching what a save/load cycle produces.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for m in [
            &mut out.w_embed,
            &mut out.w_q,
            &mut out.w_k,
            &mut out.w_v,
            &mut out.w_l,
            &mut out.w_head,
        ] {
            for v in &mut m.data {
                *v = f64::from(*v as f32);
            }
        }
        out
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> std::result::Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`", no + 1))?;
        let k = k.trim().to_string();
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key {k}", no + 1));
        }
    }
    Ok(out)
}

/// Token matrix (`n × q`): summary token `1/√q` in row 0, then each patch
/// (row-major patch order, row-major pixels) times `W_embed`.
pub fn patchify(image: &Image, params: &ToyViTParams) -> Result<Matrix> {
    let p = params.patch_size;
    if !image.height.is_multiple_of(p) || !image.width.is_multiple_of(p) {
        return Err(Error::invalid(format!(
            "{}x{} image is not divisible into {p}x{p} patches",
            image.height, image.width
        )));
    }
    let (ph, pw) = (image.height / p, image.width / p);
    if ph * pw != params.patch_count() {
        return Err(Error::invalid(format!(
            "image has {} patches, model expects {}",
            ph * pw,
            params.patch_count()
        )));
    }
    let q = params.q;
    let mut patches = Matrix::zeros(ph * pw, p * p);
    for py in 0..ph {
        for px in 0..pw {
            let row = py * pw + px;
            for dy in 0..p {
                let src = (py * p + dy) * image.width + px * p;
                let dst = row * p * p + dy * p;
                patches.data[dst..dst + p].copy_from_slice(&image.pixels[src..src + p]);
            }
        }
    }
    let embedded = patches.matmul(&params.w_embed);
    let mut x = Matrix::zeros(params.n, q);
    x.data[..q].fill(1.0 / (q as f64).sqrt());
    x.data[q..].copy_from_slice(&embedded.data);
    Ok(x)
}

/// One attention layer: returns `(Z, A)`.
pub fn self_attention(x: &Matrix, params: &ToyViTParams) -> (Matrix, Matrix) {
    let qm = x.matmul_t(&params.w_q);
    let km = x.matmul_t(&params.w_k);
    let vm = x.matmul_t(&params.w_v);
    let mut a = qm.matmul_t(&km);
    let scale = 1.0 / (params.q as f64).sqrt();
    for i in 0..a.rows {
        let row = &mut a.data[i * a.cols..(i + 1) * a.cols];
        for v in row.iter_mut() {
            *v *= scale;
        }
        softmax_in_place(row);
    }
    let z = a.matmul(&vm).matmul(&params.w_l);
    (z, a)
}

/// Per-token mean-centering and unit-variance scaling.
fn standardize_rows(m: &mut Matrix) {
    let c = m.cols as f64;
    for i in 0..m.rows {
        let row = &mut m.data[i * m.cols..(i + 1) * m.cols];
        let mean = row.iter().sum::<f64>() / c;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
}

/// Summary-token attention over patches from the per-layer matrices.
pub fn attention_vector(layers: &[Matrix], mode: AttentionMode) -> Result<AttentionVector> {
    let last = layers.last().ok_or_else(|| Error::invalid("no attention layers"))?;
    let row: Vec<f64> = match mode {
        AttentionMode::ClsLast => last.row(0).to_vec(),
        AttentionMode::ClsRollout => {
            // row 0 of A_L ⋯ A_1, propagated as a row vector from the left
            let mut r = last.row(0).to_vec();
            for a in layers[..layers.len() - 1].iter().rev() {
                let mut next = vec![0.0; a.cols];
                for (k, &rk) in r.iter().enumerate() {
                    for (dst, &v) in next.iter_mut().zip(a.row(k)) {
                        *dst += rk * v;
                    }
                }
                r = next;
            }
            r
        }
    };
    normalize_simplex(&row[1..])
}

/// Everything one forward pass produces.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub prediction: PredictionDistribution,
    pub attentions: Vec<Matrix>,
    /// Final summary-token feature (input to the head).
    pub summary: Vec<f64>,
}

pub fn forward_trace(image: &Image, params: &ToyViTParams) -> Result<ForwardTrace> {
    run_layers(image, params, true)
}

/// Runs every layer. With `full_last == false` the last layer only computes
/// the summary token's row, which is all the head and the attention vector
/// read; the arithmetic for that row is the same either way.
fn run_layers(image: &Image, params: &ToyViTParams, full_last: bool) -> Result<ForwardTrace> {
    let mut x = patchify(image, params)?;
    let mut attentions = Vec::with_capacity(params.layers);
    for layer in 0..params.layers {
        let (mut z, a) = if full_last || layer + 1 < params.layers {
            self_attention(&x, params)
        } else {
            summary_attention(&x, params)
        };
        for (zi, xi) in z.data.iter_mut().zip(&x.data) {
            *zi += xi;
        }
        standardize_rows(&mut z);
        attentions.push(a);
        x = z;
    }
    let summary = x.row(0).to_vec();
    let mut logits = vec![0.0; params.classes];
    for (i, &s) in summary.iter().enumerate() {
        for (l, &w) in logits.iter_mut().zip(params.w_head.row(i)) {
            *l += s * w;
        }
    }
    softmax_in_place(&mut logits);
    Ok(ForwardTrace {
        prediction: PredictionDistribution::new(logits)?,
        attentions,
        summary,
    })
}

/// Row 0 of [`self_attention`]: `(z_0, a_0)` as `1 × ·` matrices.
fn summary_attention(x: &Matrix, params: &ToyViTParams) -> (Matrix, Matrix) {
    let x0 = Matrix {
        rows: 1,
        cols: x.cols,
        data: x.row(0).to_vec(),
    };
    let qm = x0.matmul_t(&params.w_q);
    let km = x.matmul_t(&params.w_k);
    let vm = x.matmul_t(&params.w_v);
    let mut a = qm.matmul_t(&km);
    let scale = 1.0 / (params.q as f64).sqrt();
    for v in a.data.iter_mut() {
        *v *= scale;
    }
    softmax_in_place(&mut a.data);
    let z = a.matmul(&vm).matmul(&params.w_l);
    (z, a)
}

pub fn forward(
    image: &Image,
    params: &ToyViTParams,
    mode: AttentionMode,
) -> Result<(PredictionDistribution, AttentionVector)> {
    let trace = run_layers(image, params, false)?;
    let w = attention_vector(&trace.attentions, mode)?;
    Ok((trace.prediction, w))
}

/// Anything that maps an image to a prediction and an attention vector.
pub trait AttentionModel: Sync {
    fn forward(&self, image: &Image) -> Result<(PredictionDistribution, AttentionVector)>;

    /// Length of the attention vector.
    fn tokens(&self) -> usize;

    /// Side length in pixels of the square region each token covers.
    fn patch_size(&self) -> usize;
}

/// A parameter set bound to an attention extraction mode.
#[derive(Debug, Clone)]
pub struct ToyViT {
    pub params: ToyViTParams,
    pub mode: AttentionMode,
}

impl AttentionModel for ToyViT {
    fn forward(&self, image: &Image) -> Result<(PredictionDistribution, AttentionVector)> {
        forward(image, &self.params, self.mode)
    }

    fn tokens(&self) -> usize {
        self.params.patch_count()
    }

    fn patch_size(&self) -> usize {
        self.params.patch_size
    }
}

/// Ridge least-squares fit of `W_head` to one-hot labels on the final
/// summary features of `images`.
pub fn fit_head(params: &ToyViTParams, images: &[Image], labels: &[usize], ridge: f64) -> Result<Matrix> {
    if images.len() != labels.len() {
        return Err(Error::LengthMismatch(images.len(), labels.len()));
    }
    if images.is_empty() {
        return Err(Error::invalid("no training images"));
    }
    if !(ridge > 0.0) {
        return Err(Error::invalid(format!("ridge must be > 0, got {ridge}")));
    }
    let (q, g) = (params.q, params.classes);
    let mut gram = Matrix::zeros(q, q);
    let mut rhs = Matrix::zeros(q, g);
    for (img, &label) in images.iter().zip(labels) {
        if label >= g {
            return Err(Error::invalid(format!("label {label} outside 0..{g}")));
        }
        let f = forward_trace(img, params)?.summary;
        for i in 0..q {
            for j in 0..q {
                gram.data[i * q + j] += f[i] * f[j];
            }
            rhs.data[i * g + label] += f[i];
        }
    }
    for i in 0..q {
        gram.data[i * q + i] += ridge;
    }
    let chol = cholesky(&gram)?;
    let mut w = Matrix::zeros(q, g);
    for c in 0..g {
        let b: Vec<f64> = (0..q).map(|i| rhs.get(i, c)).collect();
        let x = cholesky_solve(&chol, &b);
        for (i, xi) in x.iter().enumerate() {
            w.data[i * g + c] = *xi;
        }
    }
    Ok(w)
}

/// Lower-triangular `L` with `L Lᵀ = m`.
fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows;
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l.get(i, k) * l.get(j, k)).sum();
            if i == j {
                let d = m.get(i, i) - s;
                if !(d > 0.0) {
                    return Err(Error::Invariant("normal equations not positive definite".into()));
                }
                l.data[i * n + i] = d.sqrt();
            } else {
                l.data[i * n + j] = (m.get(i, j) - s) / l.get(j, j);
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l.get(i, k) * y[k]).sum();
        y[i] = (b[i] - s) / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l.get(k, i) * x[k]).sum();
        x[i] = (y[i] - s) / l.get(i, i);
    }
    x
}

/// Spreads per-patch weights over their pixels (row-major patch order).
pub fn upsample_patches(weights: &[f64], height: usize, width: usize, patch: usize) -> Result<Image> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::invalid("image size not divisible by patch size"));
    }
    let pw = width / patch;
    if weights.len() != (height / patch) * pw {
        return Err(Error::LengthMismatch(weights.len(), (height / patch) * pw));
    }
    let pixels = (0..height * width)
        .map(|i| weights[(i / width / patch) * pw + (i % width) / patch])
        .collect();
    Image::new(height, width, pixels)
}

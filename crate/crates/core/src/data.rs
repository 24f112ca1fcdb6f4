//! Synthetic left/right blob images with ground-truth masks.
//!
//! Image `i` has label `i % 2` (0 = blob in the left half, 1 = right half),
//! a background drawn from `U[0, 0.3)` and a rectangular blob drawn from
//! `U[0.7, 1.0)`. Each image uses its own ChaCha8 stream of the dataset seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{read_tensor, write_tensor, Image};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: [&str; 4] = ["id", "image", "mask", "label"];

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: usize,
    /// 1 on blob pixels, 0 elsewhere.
    pub mask: Image,
}

pub fn sample_id(i: usize) -> String {
    format!("img_{i:04}")
}

pub fn gen_synthetic_dataset(count: usize, image_size: usize, seed: u64) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::invalid("count must be positive"));
    }
    if image_size < 4 || !image_size.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "image size must be an even number >= 4, got {image_size}"
        )));
    }
    (0..count).map(|i| gen_sample(i, image_size, seed)).collect()
}

fn gen_sample(i: usize, size: usize, seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    let label = i % 2;
    let half = size / 2;
    let bw = rng.random_range((size / 4).max(1)..=(3 * size / 8).max(1));
    let bh = rng.random_range((size / 4).max(1)..=half);
    let x0 = label * half + rng.random_range(0..=half - bw);
    let y0 = rng.random_range(0..=size - bh);
    let mut pixels = Vec::with_capacity(size * size);
    let mut mask = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let inside = (x0..x0 + bw).contains(&x) && (y0..y0 + bh).contains(&y);
            let v = if inside {
                rng.random_range(0.7..1.0)
            } else {
                rng.random_range(0.0..0.3)
            };
            pixels.push(v);
            mask.push(if inside { 1.0 } else { 0.0 });
        }
    }
    Ok(Sample {
        id: sample_id(i),
        image: Image::new(size, size, pixels)?.quantized(),
        label,
        mask: Image::new(size, size, mask)?,
    })
}

/// Writes `<id>.fvtn`, `<id>_mask.fvtn` per sample and `manifest.csv`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let csv_err = |source| Error::Csv {
        path: path.clone(),
        source,
    };
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for s in samples {
        let image = format!("{}.fvtn", s.id);
        let mask = format!("{}_mask.fvtn", s.id);
        write_tensor(&s.image.to_tensor()?, dir.join(&image))?;
        write_tensor(&s.mask.to_tensor()?, dir.join(&mask))?;
        w.write_record([s.id.as_str(), &image, &mask, &s.label.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Resolves a dataset argument to its manifest: either a directory holding
/// `manifest.csv` or the manifest file itself.
pub fn manifest_path(path: impl AsRef<Path>) -> PathBuf {
    let path = path.as_ref();
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads every sample listed in a manifest; file names resolve relative to it.
pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let manifest = manifest_path(path);
    let base = manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
    let csv_err = |source| Error::Csv {
        path: manifest.clone(),
        source,
    };
    let mut r = csv::Reader::from_path(&manifest).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::invalid(format!(
            "{}: expected header {}",
            manifest.display(),
            MANIFEST_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let label = rec[3]
            .parse()
            .map_err(|_| Error::invalid(format!("{}: bad label {:?}", manifest.display(), &rec[3])))?;
        out.push(Sample {
            id: rec[0].to_string(),
            image: Image::from_tensor(&read_tensor(base.join(&rec[1]))?)?,
            label,
            mask: Image::from_tensor(&read_tensor(base.join(&rec[2]))?)?,
        });
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{}: no samples", manifest.display())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_balanced() {
        let a = gen_synthetic_dataset(11, 16, 5).unwrap();
        assert_eq!(a, gen_synthetic_dataset(11, 16, 5).unwrap());
        assert_ne!(a, gen_synthetic_dataset(11, 16, 6).unwrap());
        let ones = a.iter().filter(|s| s.label == 1).count();
        assert!((ones as i64 - (11 - ones) as i64).abs() <= 1);
    }

    #[test]
    fn blob_is_brighter_and_in_the_right_half() {
        for s in gen_synthetic_dataset(40, 16, 1).unwrap() {
            let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
            for (i, (&v, &m)) in s.image.pixels.iter().zip(&s.mask.pixels).enumerate() {
                if m > 0.5 {
                    fg += v;
                    nf += 1;
                    let x = i % 16;
                    assert_eq!(x / 8, s.label);
                } else {
                    bg += v;
                    nb += 1;
                }
            }
            assert!(nf > 0 && nb > 0);
            assert!(fg / nf as f64 > bg / nb as f64);
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        let err = gen_synthetic_dataset(0, 16, 1).unwrap_err();
        assert_eq!(err.to_string(), "invalid argument: count must be positive");
        assert!(gen_synthetic_dataset(1, 7, 1).is_err());
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = gen_synthetic_dataset(3, 8, 2).unwrap();
        write_dataset(dir.path(), &data).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), data);
        assert_eq!(read_dataset(dir.path().join(MANIFEST_FILE)).unwrap(), data);
    }
}

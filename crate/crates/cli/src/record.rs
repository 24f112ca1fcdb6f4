//! The `<report>.meta` run record written by `certify` and read by `verify`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use attncert::data::Sample;
use attncert::vit::{parse_key_values, ToyViTParams};
use sha2::{Digest, Sha256};

use crate::error::{data, CliResult};

pub fn meta_path(report: &Path) -> PathBuf {
    let mut s = report.as_os_str().to_os_string();
    s.push(".meta");
    PathBuf::from(s)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 over the model's hyperparameters and exact weight bits.
pub fn model_fingerprint(p: &ToyViTParams) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(format!(
        "{} {} {} {} {} {}\n",
        p.patch_size, p.q, p.n, p.layers, p.classes, p.seed
    ));
    for (name, m) in p.matrices() {
        h.update(name.as_bytes());
        h.update(m.to_tensor()?.to_bytes());
    }
    Ok(hex(&h.finalize()))
}

/// SHA-256 over every sample's id, label, image and mask.
pub fn dataset_fingerprint(samples: &[Sample]) -> CliResult<String> {
    let mut h = Sha256::new();
    for s in samples {
        h.update(format!("{} {}\n", s.id, s.label));
        h.update(s.image.to_tensor()?.to_bytes());
        h.update(s.mask.to_tensor()?.to_bytes());
    }
    Ok(hex(&h.finalize()))
}

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord(pub BTreeMap<String, String>);

impl RunRecord {
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> CliResult<&str> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| data(format!("run record is missing {key:?}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> CliResult<T> {
        let v = self.get(key)?;
        v.parse()
            .map_err(|_| data(format!("run record: bad value for {key}: {v:?}")))
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text: String = self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        std::fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| data(format!("{}: cannot read run record: {e}", path.display())))?;
        parse_key_values(&text)
            .map(RunRecord)
            .map_err(|e| data(format!("{}: {e}", path.display())))
    }
}

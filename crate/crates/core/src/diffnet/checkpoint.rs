//! On-disk parameter checkpoints.
//!
//! A checkpoint directory holds `manifest.txt` (UTF-8 `key = value` lines)
//! and one `<tensor path>.f64` blob per tensor: raw little-endian float64,
//! row-major. The manifest records the format version, free-form metadata
//! (seed, activation names, hyperparameters) and the shape of every tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::mlp::{Activation, Dense, MlpParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

fn valid_path(p: &str) -> bool {
    !p.is_empty()
        && p.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'))
        && !p.starts_with('.')
}

pub(crate) fn parse_kv(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("line {} has no '='", n + 1),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub(crate) fn write_f64_blob(path: &Path, data: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f64_blob(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::CorruptBlob {
            path: path.to_path_buf(),
            detail: format!("expected {} bytes, found {}", expected * 8, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("checkpoint metadata lacks '{key}'")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Config(format!("checkpoint metadata '{key}' is malformed")))
    }

    pub fn put(&mut self, path: &str, t: &Tensor) {
        assert!(valid_path(path), "invalid tensor path {path:?}");
        self.tensors.insert(path.to_string(), t.clone());
    }

    pub fn tensor(&self, path: &str) -> Result<&Tensor> {
        self.tensors
            .get(path)
            .ok_or_else(|| Error::Config(format!("checkpoint lacks tensor '{path}'")))
    }

    pub fn put_mlp(&mut self, prefix: &str, mlp: &MlpParams) {
        self.set_meta(&format!("activation.{prefix}"), mlp.activation_names());
        for (i, l) in mlp.layers.iter().enumerate() {
            self.put(&format!("{prefix}.l{i}.weight"), &l.weight);
            self.put(&format!("{prefix}.l{i}.bias"), &l.bias);
        }
    }

    pub fn get_mlp(&self, prefix: &str) -> Result<MlpParams> {
        let acts = self.meta(&format!("activation.{prefix}"))?;
        let mut layers = Vec::new();
        for (i, name) in acts.split(',').enumerate() {
            let activation = Activation::from_name(name)
                .ok_or_else(|| Error::Config(format!("unknown activation '{name}'")))?;
            layers.push(Dense {
                weight: self.tensor(&format!("{prefix}.l{i}.weight"))?.clone(),
                bias: self.tensor(&format!("{prefix}.l{i}.bias"))?.clone(),
                activation,
            });
        }
        let mlp = MlpParams { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = format!("format_version = {CHECKPOINT_VERSION}\n");
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta.{k} = {v}\n"));
        }
        for (path, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(ToString::to_string).collect();
            manifest.push_str(&format!("tensor.{path} = {}\n", dims.join("x")));
            write_f64_blob(&dir.join(format!("{path}.f64")), t.data())?;
        }
        let mpath = dir.join(MANIFEST);
        fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath: PathBuf = dir.join(MANIFEST);
        if !mpath.exists() {
            return Err(Error::MissingCheckpoint(dir.to_path_buf()));
        }
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let kv = parse_kv(&text, &mpath)?;
        let version: u32 = kv
            .get("format_version")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Manifest {
                path: mpath.clone(),
                detail: "missing format_version".into(),
            })?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                path: mpath,
                expected: CHECKPOINT_VERSION,
                found: version,
            });
        }
        let mut ck = Checkpoint::new();
        for (k, v) in &kv {
            if let Some(m) = k.strip_prefix("meta.") {
                ck.meta.insert(m.to_string(), v.clone());
            } else if let Some(p) = k.strip_prefix("tensor.") {
                let shape: Vec<usize> = v
                    .split('x')
                    .map(|d| d.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Manifest {
                        path: mpath.clone(),
                        detail: format!("bad shape '{v}' for {p}"),
                    })?;
                let n = shape.iter().product();
                let data = read_f64_blob(&dir.join(format!("{p}.f64")), n)?;
                ck.tensors.insert(p.to_string(), Tensor::new(shape, data)?);
            }
        }
        Ok(ck)
    }
}

//! MPS checkpoints: one binary file per site plus `manifest.json`.
//!
//! Site files hold three little-endian `u64` dimensions followed by the
//! tensor entries in row-major order as `(re, im)` double pairs.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Mps;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    #[serde(rename = "L")]
    pub length: usize,
    pub bond_dims: Vec<usize>,
    pub ortho_center: Option<usize>,
    pub norm: f64,
    pub tau: f64,
}

fn site_file(dir: &Path, k: usize) -> std::path::PathBuf {
    dir.join(format!("site_{k:04}.bin"))
}

pub fn write_checkpoint(mps: &Mps, dir: &Path, tau: f64) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir)?;
    for (k, a) in mps.tensors().iter().enumerate() {
        let (l, d, r) = a.dim();
        let mut bytes = Vec::with_capacity(24 + 16 * a.len());
        for n in [l, d, r] {
            bytes.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for v in a.iter() {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        fs::write(site_file(dir, k), bytes)?;
    }
    let manifest = CheckpointManifest {
        length: mps.length(),
        bond_dims: mps.bond_dims(),
        ortho_center: mps.ortho_center(),
        norm: mps.norm(),
        tau,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_checkpoint(dir: &Path) -> Result<(Mps, CheckpointManifest)> {
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut tensors = Vec::with_capacity(manifest.length);
    for k in 0..manifest.length {
        let path = site_file(dir, k);
        let bytes = fs::read(&path)?;
        let bad = |reason: String| Error::Format {
            path: path.display().to_string(),
            reason,
        };
        if bytes.len() < 24 {
            return Err(bad("truncated header".into()));
        }
        let dim = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes")) as usize;
        let (l, d, r) = (dim(0), dim(1), dim(2));
        let count = l
            .checked_mul(d)
            .and_then(|x| x.checked_mul(r))
            .ok_or_else(|| bad("shape overflow".into()))?;
        if bytes.len() != 24 + 16 * count {
            return Err(bad(format!(
                "expected {} bytes, found {}",
                24 + 16 * count,
                bytes.len()
            )));
        }
        let data: Vec<C64> = bytes[24..]
            .chunks_exact(16)
            .map(|c| {
                C64::new(
                    f64::from_le_bytes(c[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(c[8..].try_into().expect("8 bytes")),
                )
            })
            .collect();
        tensors.push(Array3::from_shape_vec((l, d, r), data).expect("shape checked"));
    }
    let mut mps = Mps::from_tensors(tensors)?;
    if mps.bond_dims() != manifest.bond_dims {
        return Err(Error::Format {
            path: dir.display().to_string(),
            reason: "bond dimensions disagree with manifest".into(),
        });
    }
    mps.set_ortho_center(manifest.ortho_center);
    Ok((mps, manifest))
}

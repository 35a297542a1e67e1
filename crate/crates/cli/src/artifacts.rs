//! On-disk layout of posterior draws: flat little-endian `f64` matrices
//! described by a JSON sidecar.

use std::fs;
use std::path::Path;

use psbart::data::Profile;
use psbart::sampler::{LatentDraws, PosteriorDraws};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SIDECAR_FILE: &str = "draws.json";
pub const F_FILE: &str = "draws.f64";
pub const SIGMA2_FILE: &str = "sigma2.f64";
pub const LATENT_FILE: &str = "latent.f64";

const DTYPE: &str = "f64-le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub file: String,
    pub dtype: String,
    /// `[rows, cols]`, stored row-major.
    pub shape: [usize; 2],
    pub column_order: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub seed: u64,
    pub mesh: Vec<f64>,
    pub profiles: Vec<Profile>,
    pub projected: bool,
    pub f: Matrix,
    pub sigma2: Matrix,
    pub latent: Option<Matrix>,
    /// Data rows whose responses were imputed, in latent column order.
    pub latent_rows: Vec<usize>,
}

pub fn write_f64s(path: &Path, values: &[f64]) -> Result<(), CliError> {
    let mut bytes = Vec::with_capacity(8 * values.len());
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.len() != 8 * expected {
        return Err(CliError::Integrity(format!(
            "{} holds {} bytes, sidecar implies {}",
            path.display(),
            bytes.len(),
            8 * expected
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes the draw matrices and sidecar; returns the file names written.
pub fn write_draws(dir: &Path, draws: &PosteriorDraws, seed: u64) -> Result<Vec<String>, CliError> {
    let matrix = |file: &str, cols: usize, order: &str| Matrix {
        file: file.into(),
        dtype: DTYPE.into(),
        shape: [draws.n_draws, cols],
        column_order: order.into(),
    };
    write_f64s(&dir.join(F_FILE), &draws.f)?;
    write_f64s(&dir.join(SIGMA2_FILE), &draws.sigma2)?;
    let mut files = vec![F_FILE.to_string(), SIGMA2_FILE.to_string()];
    let latent = match &draws.latent {
        Some(l) => {
            write_f64s(&dir.join(LATENT_FILE), &l.values)?;
            files.push(LATENT_FILE.into());
            Some(matrix(LATENT_FILE, l.rows.len(), "latent_rows"))
        }
        None => None,
    };
    let sidecar = Sidecar {
        seed,
        mesh: draws.mesh.clone(),
        profiles: draws.profiles.clone(),
        projected: draws.projected,
        f: matrix(F_FILE, draws.n_cols(), "profile * len(mesh) + mesh index"),
        sigma2: matrix(SIGMA2_FILE, 1, "sigma2"),
        latent,
        latent_rows: draws.latent.as_ref().map(|l| l.rows.clone()).unwrap_or_default(),
    };
    let path = dir.join(SIDECAR_FILE);
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| CliError::format("sidecar", e))?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    files.push(SIDECAR_FILE.into());
    Ok(files)
}

pub fn read_draws(dir: &Path) -> Result<PosteriorDraws, CliError> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| CliError::format("sidecar", e))?;
    for m in [Some(&sidecar.f), Some(&sidecar.sigma2), sidecar.latent.as_ref()].into_iter().flatten() {
        if m.dtype != DTYPE {
            return Err(CliError::format("sidecar", format!("unsupported dtype `{}`", m.dtype)));
        }
    }
    let [n_draws, cols] = sidecar.f.shape;
    if cols != sidecar.mesh.len() * sidecar.profiles.len() || sidecar.sigma2.shape != [n_draws, 1] {
        return Err(CliError::Integrity("sidecar shapes disagree with its grid".into()));
    }
    let f = read_f64s(&dir.join(&sidecar.f.file), n_draws * cols)?;
    let sigma2 = read_f64s(&dir.join(&sidecar.sigma2.file), n_draws)?;
    let latent = match &sidecar.latent {
        Some(m) => {
            if m.shape != [n_draws, sidecar.latent_rows.len()] {
                return Err(CliError::Integrity("latent shape disagrees with its rows".into()));
            }
            Some(LatentDraws {
                rows: sidecar.latent_rows.clone(),
                values: read_f64s(&dir.join(&m.file), n_draws * sidecar.latent_rows.len())?,
            })
        }
        None => None,
    };
    let draws = PosteriorDraws {
        mesh: sidecar.mesh,
        profiles: sidecar.profiles,
        n_draws,
        f,
        sigma2,
        latent,
        projected: sidecar.projected,
    };
    draws.validate()?;
    Ok(draws)
}

/// Writes a CSV table with a fixed header.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::format("csv", e))?;
    w.write_record(header).map_err(|e| CliError::format("csv", e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::format("csv", e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

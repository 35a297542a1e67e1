//! Domain types, delimited-text ingestion, coarsening indicators and
//! response standardization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PsbartError, Result};

/// Grid unit for coarsening checks, as a fraction of the coarsening width.
/// With `c = 0.1` kg this is one gram.
const GRID_UNITS_PER_WIDTH: i64 = 1000;

/// Snapping tolerance, as a fraction of the coarsening width.
const SNAP_TOLERANCE: f64 = 1e-9;

/// Ordered, strictly increasing set of target-covariate values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TargetMesh {
    values: Vec<f64>,
}

impl TargetMesh {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(PsbartError::Mesh(format!(
                "mesh needs at least 2 points, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(PsbartError::Mesh("mesh contains non-finite values".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PsbartError::Mesh(
                "mesh must be strictly increasing without duplicates".into(),
            ));
        }
        Ok(Self { values })
    }

    /// The integer mesh `start, start + 1, ..., end`.
    pub fn integer_range(start: i64, end: i64) -> Result<Self> {
        Self::new((start..=end).map(|v| v as f64).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn min_spacing(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the mesh point equal to `t`, within a relative tolerance of
    /// the smallest spacing.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.min_spacing();
        let pos = self.values.partition_point(|&v| v < t - tol);
        match self.values.get(pos) {
            Some(&v) if (v - t).abs() <= tol => Some(pos),
            _ => None,
        }
    }

    pub fn require_index(&self, t: f64) -> Result<usize> {
        self.index_of(t)
            .ok_or_else(|| PsbartError::Mesh(format!("t = {t} is not a mesh point")))
    }
}

impl TryFrom<Vec<f64>> for TargetMesh {
    type Error = PsbartError;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<TargetMesh> for Vec<f64> {
    fn from(mesh: TargetMesh) -> Self {
        mesh.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateKind {
    Continuous,
    /// Integer-coded levels `0..levels`.
    Categorical { levels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Continuous,
        }
    }

    pub fn categorical(name: impl Into<String>, levels: usize) -> Self {
        Self {
            name: name.into(),
            kind: CovariateKind::Categorical { levels },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub t: f64,
    /// Position of `t` in the dataset mesh.
    pub t_index: usize,
    pub x: Vec<f64>,
    /// Observed, possibly rounded, response.
    pub y_obs: f64,
    /// Whether `y_obs` sits on the coarsening grid.
    pub gamma: bool,
}

/// A covariate vector used to query the fitted surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub x: Vec<f64>,
    pub label: String,
}

impl Profile {
    pub fn new(x: Vec<f64>, label: impl Into<String>) -> Self {
        Self {
            x,
            label: label.into(),
        }
    }
}

/// An immutable set of observations over a common mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    mesh: TargetMesh,
    coarsening_width: Option<f64>,
    schema: Vec<CovariateSpec>,
}

impl Dataset {
    /// Builds a dataset from raw rows, computing `t_index` and `gamma`.
    ///
    /// A `coarsening_width` of `None` disables coarsening entirely (every
    /// `gamma` is zero).
    pub fn from_rows(
        rows: Vec<(f64, Vec<f64>, f64)>,
        mesh: TargetMesh,
        coarsening_width: Option<f64>,
        schema: Vec<CovariateSpec>,
    ) -> Result<Self> {
        if let Some(c) = coarsening_width {
            if !(c > 0.0) || !c.is_finite() {
                return Err(PsbartError::InvalidWidth(c));
            }
        }
        let observations = rows
            .into_iter()
            .enumerate()
            .map(|(row, (t, x, y))| {
                let t_index = mesh.index_of(t).ok_or_else(|| {
                    PsbartError::Mesh(format!("row {row}: t = {t} is not a mesh point"))
                })?;
                let gamma = match coarsening_width {
                    Some(c) => compute_gamma(y, c)?,
                    None => false,
                };
                Ok(Observation {
                    t,
                    t_index,
                    x,
                    y_obs: y,
                    gamma,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(observations, mesh, coarsening_width, schema)
    }

    /// Validates and wraps already-built observations.
    pub fn new(
        observations: Vec<Observation>,
        mesh: TargetMesh,
        coarsening_width: Option<f64>,
        schema: Vec<CovariateSpec>,
    ) -> Result<Self> {
        if let Some(c) = coarsening_width {
            if !(c > 0.0) || !c.is_finite() {
                return Err(PsbartError::InvalidWidth(c));
            }
        }
        for (row, obs) in observations.iter().enumerate() {
            if obs.x.len() != schema.len() {
                return Err(PsbartError::Schema(format!(
                    "row {row} has {} covariates, schema has {}",
                    obs.x.len(),
                    schema.len()
                )));
            }
            if mesh.index_of(obs.t) != Some(obs.t_index) {
                return Err(PsbartError::Mesh(format!(
                    "row {row}: t = {} does not match mesh index {}",
                    obs.t, obs.t_index
                )));
            }
            if !obs.y_obs.is_finite() || obs.x.iter().any(|v| !v.is_finite()) {
                return Err(PsbartError::Parse {
                    row,
                    message: "non-finite value".into(),
                });
            }
            if obs.gamma && coarsening_width.is_none() {
                return Err(PsbartError::Schema(format!(
                    "row {row} is flagged coarse but coarsening is disabled"
                )));
            }
        }
        Ok(Self {
            observations,
            mesh,
            coarsening_width,
            schema,
        })
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn mesh(&self) -> &TargetMesh {
        &self.mesh
    }

    pub fn coarsening_width(&self) -> Option<f64> {
        self.coarsening_width
    }

    pub fn schema(&self) -> &[CovariateSpec] {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn responses(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.y_obs).collect()
    }

    pub fn coarse_count(&self) -> usize {
        self.observations.iter().filter(|o| o.gamma).count()
    }

    /// Copy of this dataset restricted to the given rows.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            observations: rows.iter().map(|&i| self.observations[i].clone()).collect(),
            mesh: self.mesh.clone(),
            coarsening_width: self.coarsening_width,
            schema: self.schema.clone(),
        }
    }

    /// Copy of this dataset with coarsening switched off (all `gamma = 0`).
    pub fn without_coarsening(&self) -> Dataset {
        let mut out = self.clone();
        out.coarsening_width = None;
        for obs in &mut out.observations {
            obs.gamma = false;
        }
        out
    }

    /// Copy of this dataset with new responses, keeping `gamma` flags.
    pub fn with_responses(&self, y: &[f64]) -> Result<Dataset> {
        if y.len() != self.len() {
            return Err(PsbartError::InvalidInput(format!(
                "expected {} responses, got {}",
                self.len(),
                y.len()
            )));
        }
        let mut out = self.clone();
        for (obs, &v) in out.observations.iter_mut().zip(y) {
            if !v.is_finite() {
                return Err(PsbartError::InvalidInput(format!("non-finite response {v}")));
            }
            obs.y_obs = v;
            obs.gamma = match self.coarsening_width {
                Some(c) => compute_gamma(v, c)?,
                None => false,
            };
        }
        Ok(out)
    }
}

/// Whether `y_obs` lies on the grid spaced `c` apart.
///
/// Responses are snapped to integers in units of `c / 1000`; values that do
/// not snap within `1e-9 * c` are off-grid.
pub fn compute_gamma(y_obs: f64, c: f64) -> Result<bool> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(PsbartError::InvalidWidth(c));
    }
    let unit = c / GRID_UNITS_PER_WIDTH as f64;
    let scaled = y_obs / unit;
    if !scaled.is_finite() || scaled.abs() > 9.0e15 {
        return Ok(false);
    }
    let snapped = scaled.round();
    if (y_obs - snapped * unit).abs() > SNAP_TOLERANCE * c {
        return Ok(false);
    }
    Ok((snapped as i64).rem_euclid(GRID_UNITS_PER_WIDTH) == 0)
}

/// Affine response map `z = (y - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    /// Map sending `min(y)` to -0.5 and `max(y)` to +0.5.
    pub fn fit(y: &[f64]) -> Result<Self> {
        if y.len() < 2 {
            return Err(PsbartError::DegenerateScale(format!(
                "need at least 2 responses, got {}",
                y.len()
            )));
        }
        let (lo, hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        let scale = hi - lo;
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(PsbartError::DegenerateScale(
                "response vector is constant".into(),
            ));
        }
        Ok(Self {
            center: 0.5 * (lo + hi),
            scale,
        })
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.scale + self.center
    }

    /// Maps a variance on the standardized scale back to the raw scale.
    pub fn invert_variance(&self, v: f64) -> f64 {
        v * self.scale * self.scale
    }
}

/// Rescales responses to [-0.5, 0.5]; the coarsening width is rescaled by
/// the same factor and `gamma` flags are kept.
pub fn standardize_response(data: &Dataset) -> Result<(Dataset, Standardization)> {
    let std = Standardization::fit(&data.responses())?;
    let mut out = data.clone();
    for obs in &mut out.observations {
        obs.y_obs = std.apply(obs.y_obs);
    }
    out.coarsening_width = data.coarsening_width.map(|c| c / std.scale);
    Ok((out, std))
}

/// Column roles and options for [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    pub t_column: String,
    pub response_column: String,
    pub covariates: Vec<String>,
    /// Subset of `covariates` holding integer-coded levels.
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Coarsening width `c`; zero or absent disables coarsening.
    #[serde(default)]
    pub coarsening_width: Option<f64>,
    /// Explicit mesh; inferred from distinct `t` values when absent.
    #[serde(default)]
    pub mesh: Option<Vec<f64>>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl IngestConfig {
    /// Parses a TOML key-value file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PsbartError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PsbartError::Config(e.to_string()))
    }

    fn effective_width(&self) -> Result<Option<f64>> {
        match self.coarsening_width {
            None => Ok(None),
            Some(c) if c == 0.0 => Ok(None),
            Some(c) if c > 0.0 && c.is_finite() => Ok(Some(c)),
            Some(c) => Err(PsbartError::InvalidWidth(c)),
        }
    }
}

fn missing_token(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

/// Reads a delimited file with a header row into a [`Dataset`].
pub fn load_dataset(path: &Path, config: &IngestConfig) -> Result<Dataset> {
    let width = config.effective_width()?;
    let delimiter = u8::try_from(config.delimiter)
        .map_err(|_| PsbartError::Config("delimiter must be a single ASCII byte".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| PsbartError::Schema(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| PsbartError::Schema(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PsbartError::Schema(format!("missing column `{name}`")))
    };
    let t_col = column(&config.t_column)?;
    let y_col = column(&config.response_column)?;
    let x_cols = config
        .covariates
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;
    for cat in &config.categorical {
        if !config.covariates.contains(cat) {
            return Err(PsbartError::Schema(format!(
                "categorical column `{cat}` is not listed as a covariate"
            )));
        }
    }
    let is_cat: Vec<bool> = config
        .covariates
        .iter()
        .map(|c| config.categorical.contains(c))
        .collect();

    let mut rows = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| PsbartError::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |col: usize, what: &str| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            if missing_token(raw) {
                return Err(PsbartError::Parse {
                    row,
                    message: format!("missing value for {what}"),
                });
            }
            raw.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| PsbartError::Parse {
                    row,
                    message: format!("non-numeric {what} `{raw}`"),
                })
        };
        let t = field(t_col, &config.t_column)?;
        let y = field(y_col, "response")?;
        let mut x = Vec::with_capacity(x_cols.len());
        for (j, &col) in x_cols.iter().enumerate() {
            let v = field(col, &config.covariates[j])?;
            if is_cat[j] && (v < 0.0 || v.fract() != 0.0) {
                return Err(PsbartError::Parse {
                    row,
                    message: format!(
                        "categorical `{}` must be a nonnegative integer level, got {v}",
                        config.covariates[j]
                    ),
                });
            }
            x.push(v);
        }
        rows.push((t, x, y));
    }
    if rows.is_empty() {
        return Err(PsbartError::Schema("file has no data rows".into()));
    }

    let mesh = match &config.mesh {
        Some(values) => TargetMesh::new(values.clone())?,
        None => {
            let mut distinct: Vec<f64> = rows.iter().map(|(t, _, _)| *t).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            TargetMesh::new(distinct)?
        }
    };

    let schema = config
        .covariates
        .iter()
        .enumerate()
        .map(|(j, name)| {
            if is_cat[j] {
                let levels = rows
                    .iter()
                    .map(|(_, x, _)| x[j] as usize)
                    .max()
                    .unwrap_or(0)
                    + 1;
                CovariateSpec::categorical(name.clone(), levels)
            } else {
                CovariateSpec::continuous(name.clone())
            }
        })
        .collect();

    Dataset::from_rows(rows, mesh, width, schema)
}

use std::path::{Path, PathBuf};

use psbart::data::{load_dataset, CovariateKind, CovariateSpec, Dataset, IngestConfig, Profile};
use psbart::monotone::project_draws;
use psbart::sampler::{pool_draws, run_chains, SamplerConfig};
use psbart::summaries::{centroid_profile, contrast_grid};
use serde::{Deserialize, Serialize};

use crate::artifacts::write_draws;
use crate::error::CliError;
use crate::manifest::{create_dir, digest_inputs, RunManifest, MANIFEST_FILE};
use crate::FitArgs;

/// Contents of the `--config` TOML file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    data: IngestConfig,
    #[serde(default)]
    sampler: SamplerConfig,
    #[serde(default)]
    monotone: bool,
    #[serde(default)]
    contrast: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSpec {
    pub covariate: String,
    pub flag: usize,
    pub bases: Vec<Profile>,
}

/// Fully resolved fit request, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRun {
    pub data_path: PathBuf,
    pub ingest: IngestConfig,
    pub sampler: SamplerConfig,
    pub monotone: bool,
    pub chains: usize,
    /// Prediction grid.
    pub profiles: Vec<Profile>,
    pub contrast: Option<ContrastSpec>,
    /// Config and profile files the request was assembled from.
    pub sources: Vec<PathBuf>,
}

pub fn run(args: &FitArgs) -> Result<(), CliError> {
    let request = match &args.replay {
        Some(path) => {
            let (manifest, request) = RunManifest::read_config::<FitRun>(path, "fit")?;
            manifest.verify_inputs()?;
            request
        }
        None => assemble(args)?,
    };
    execute(&request, &args.out)?;
    Ok(())
}

fn assemble(args: &FitArgs) -> Result<FitRun, CliError> {
    let data_path = args.data.as_deref().ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let config_path = args.config.as_deref().ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let text = std::fs::read_to_string(config_path).map_err(|e| CliError::io(config_path, e))?;
    let file: ConfigFile = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", config_path.display())))?;

    let mut ingest = file.data;
    if let Some(c) = args.coarsening_width {
        ingest.coarsening_width = Some(c);
    }
    let mut sampler = file.sampler;
    if let Some(m) = args.trees {
        sampler.m = m;
    }
    if let Some(b) = args.burn {
        sampler.n_burn = b;
    }
    if let Some(s) = args.save {
        sampler.n_save = s;
    }
    if let Some(t) = args.thin {
        sampler.thin = t;
    }
    if let Some(seed) = args.seed {
        sampler.seed = seed;
    }
    if let Some(theta) = args.theta {
        sampler.gp.theta = Some(theta);
    }
    sampler.validate()?;
    if args.chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }

    let data = load_dataset(data_path, &ingest)?;
    let mut sources = vec![config_path.to_path_buf()];
    let bases = match &args.predict_profiles {
        Some(path) => {
            sources.push(path.clone());
            read_profiles(path, data.schema())?
        }
        None => vec![centroid_profile(&data)?],
    };
    let contrast_name = args.contrast.clone().or(file.contrast);
    let (profiles, contrast) = match contrast_name {
        Some(name) => {
            let flag = flag_index(data.schema(), &name)?;
            let grid = contrast_grid(&bases, flag)?;
            (grid, Some(ContrastSpec { covariate: name, flag, bases }))
        }
        None => (bases, None),
    };
    Ok(FitRun {
        data_path: std::fs::canonicalize(data_path).map_err(|e| CliError::io(data_path, e))?,
        ingest,
        sampler,
        monotone: args.monotone || file.monotone,
        chains: args.chains,
        profiles,
        contrast,
        sources,
    })
}

fn flag_index(schema: &[CovariateSpec], name: &str) -> Result<usize, CliError> {
    let j = schema
        .iter()
        .position(|s| s.name == name)
        .ok_or_else(|| CliError::Usage(format!("contrast covariate `{name}` is not in the data")))?;
    match schema[j].kind {
        CovariateKind::Categorical { levels } if levels <= 2 => Ok(j),
        _ => Err(CliError::Usage(format!("contrast covariate `{name}` must be a 0/1 categorical"))),
    }
}

/// Reads profiles from a CSV with one column per covariate and an optional
/// `label` column.
pub fn read_profiles(path: &Path, schema: &[CovariateSpec]) -> Result<Vec<Profile>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::format("profiles", e))?;
    let headers = reader.headers().map_err(|e| CliError::format("profiles", e))?.clone();
    let cols = schema
        .iter()
        .map(|s| {
            headers.iter().position(|h| h == s.name).ok_or_else(|| {
                CliError::format("profiles", format!("missing covariate column `{}`", s.name))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let label_col = headers.iter().position(|h| h == "label");
    let mut profiles = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::format("profiles", e))?;
        let x = cols
            .iter()
            .zip(schema)
            .map(|(&c, spec)| {
                let raw = record.get(c).unwrap_or("");
                let v: f64 = raw
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| CliError::format("profiles", format!("row {i}: bad `{}` value `{raw}`", spec.name)))?;
                if let CovariateKind::Categorical { levels } = spec.kind {
                    if v.fract() != 0.0 || v < 0.0 || v >= levels as f64 {
                        return Err(CliError::format(
                            "profiles",
                            format!("row {i}: `{}` = {v} is not a level below {levels}", spec.name),
                        ));
                    }
                }
                Ok(v)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let label = label_col
            .and_then(|c| record.get(c))
            .map(str::to_string)
            .unwrap_or_else(|| format!("profile{i}"));
        profiles.push(Profile::new(x, label));
    }
    if profiles.is_empty() {
        return Err(CliError::format("profiles", "no rows"));
    }
    Ok(profiles)
}

fn load(request: &FitRun) -> Result<Dataset, CliError> {
    Ok(load_dataset(&request.data_path, &request.ingest)?)
}

pub fn execute(request: &FitRun, out: &Path) -> Result<PathBuf, CliError> {
    let mut manifest = RunManifest::begin("fit", request.sampler.seed, request)?;
    let mut inputs: Vec<&Path> = vec![&request.data_path];
    inputs.extend(request.sources.iter().map(PathBuf::as_path));
    manifest.inputs = digest_inputs(&inputs)?;

    let data = load(request)?;
    let fits = run_chains(&data, &request.sampler, &request.profiles, request.chains)?;
    let chains: Vec<_> = fits.iter().map(|f| f.draws.clone()).collect();
    let mut draws = pool_draws(&chains)?;
    if request.monotone {
        project_draws(&mut draws)?;
    }
    let first = &fits[0];
    manifest.resolved = serde_json::json!({
        "settings": first.settings,
        "standardization": first.standardization,
        "moves": fits.iter().map(|f| f.moves).collect::<Vec<_>>(),
        "n": data.len(),
        "coarsened_rows": data.coarse_count(),
    });

    create_dir(out)?;
    let files = write_draws(out, &draws, request.sampler.seed)?;
    let path = manifest.finish(out, &files)?;
    println!(
        "wrote {} draws x {} profiles x {} mesh points to {} ({})",
        draws.n_draws,
        draws.n_profiles(),
        draws.t_len(),
        out.display(),
        MANIFEST_FILE
    );
    Ok(path)
}

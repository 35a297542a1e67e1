use psbart::sampler::chain_rng;
use psbart::summaries::{contrast, curve_band, envelope, prediction_band, Band};
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_draws, write_csv};
use crate::error::CliError;
use crate::fit::FitRun;
use crate::manifest::{create_dir, digest_inputs, RunManifest, MANIFEST_FILE};
use crate::SummarizeArgs;

pub const BANDS_FILE: &str = "bands.csv";
pub const CONTRASTS_FILE: &str = "contrasts.csv";
pub const ENVELOPE_FILE: &str = "envelope.csv";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SummarizeRun {
    run: String,
    level: f64,
    seed: u64,
}

fn band_rows(rows: &mut Vec<Vec<String>>, label: &str, kind: &str, level: f64, band: &Band) {
    for j in 0..band.mesh.len() {
        rows.push(vec![
            label.to_string(),
            kind.to_string(),
            level.to_string(),
            band.mesh[j].to_string(),
            band.mean[j].to_string(),
            band.lower[j].to_string(),
            band.upper[j].to_string(),
        ]);
    }
}

pub fn run(args: &SummarizeArgs) -> Result<(), CliError> {
    let manifest_path = args.run.join(MANIFEST_FILE);
    let (fit_manifest, request) = RunManifest::read_config::<FitRun>(&manifest_path, "fit")?;
    fit_manifest.verify_outputs(&args.run)?;
    let draws = read_draws(&args.run)?;
    if draws.profiles != request.profiles {
        return Err(CliError::Integrity("draw grid differs from the manifest's profiles".into()));
    }

    let config = SummarizeRun {
        run: args.run.display().to_string(),
        level: args.level,
        seed: args.seed,
    };
    let mut manifest = RunManifest::begin("summarize", args.seed, &config)?;
    manifest.inputs = digest_inputs(&[manifest_path.as_path()])?;

    let mut rng = chain_rng(args.seed, 0);
    let mut rows = Vec::new();
    for (p, profile) in draws.profiles.iter().enumerate() {
        band_rows(&mut rows, &profile.label, "function", args.level, &curve_band(&draws, p, args.level)?);
        let pred = prediction_band(&draws, p, args.level, &mut rng)?;
        band_rows(&mut rows, &profile.label, "prediction", args.level, &pred);
    }
    create_dir(&args.out)?;
    let header = ["profile", "band", "level", "t", "mean", "lower", "upper"];
    write_csv(&args.out.join(BANDS_FILE), &header, &rows)?;
    let mut files = vec![BANDS_FILE.to_string()];

    if let Some(spec) = &request.contrast {
        let mut rows = Vec::new();
        for base in &spec.bases {
            let c = contrast(&draws, spec.flag, base, args.level)?;
            let kind = if c.projected { "monotone" } else { "default" };
            band_rows(&mut rows, &c.label, kind, args.level, &c.band);
        }
        let header = ["base", "fit", "level", "t", "mean", "lower", "upper"];
        write_csv(&args.out.join(CONTRASTS_FILE), &header, &rows)?;

        let env = envelope(&draws, spec.flag, &spec.bases)?;
        let rows: Vec<Vec<String>> = (0..env.mesh.len())
            .map(|j| vec![env.mesh[j].to_string(), env.min[j].to_string(), env.max[j].to_string()])
            .collect();
        write_csv(&args.out.join(ENVELOPE_FILE), &["t", "min", "max"], &rows)?;
        files.push(CONTRASTS_FILE.into());
        files.push(ENVELOPE_FILE.into());
    }
    manifest.finish(&args.out, &files)?;
    println!("wrote {} to {}", files.join(", "), args.out.display());
    Ok(())
}

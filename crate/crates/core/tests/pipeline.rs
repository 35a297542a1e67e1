mod common;

use std::fs;

use psbart::data::{load_dataset, standardize_response, CovariateSpec, Dataset, IngestConfig, Profile, TargetMesh};
use psbart::monotone::{is_non_decreasing, project_draws};
use psbart::sampler::{chain_rng, run_mcmc, sample_truncated_normal, ModelSettings, Sampler, SamplerConfig};
use psbart::summaries::{centroid_profile, contrast, contrast_grid, curve_band, envelope, prediction_band};
use psbart::sim::{gen_monotone_dataset, Scenario, SimScenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_cfg(seed: u64) -> SamplerConfig {
    SamplerConfig {
        m: 20,
        n_burn: 100,
        n_save: 100,
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn csv_to_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut text = String::from("week,score,age,group\n");
    for _ in 0..200 {
        let t = rng.random_range(1..=6);
        let age: f64 = rng.random_range(20.0..40.0);
        let g = rng.random_range(0..2);
        let y = 0.5 * t as f64 + 0.02 * age + g as f64 + rng.random_range(-0.5..0.5);
        text += &format!("{t},{:.1},{age:.2},{g}\n", y);
    }
    fs::write(&path, text).unwrap();
    let cfg = IngestConfig::from_toml_str(
        "t_column = \"week\"\nresponse_column = \"score\"\ncovariates = [\"age\", \"group\"]\n\
         categorical = [\"group\"]\ncoarsening_width = 0.1\n",
    )
    .unwrap();
    let data = load_dataset(&path, &cfg).unwrap();
    assert_eq!(data.len(), 200);
    assert_eq!(data.mesh().values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    assert!(data.coarse_count() > 0);

    let centroid = centroid_profile(&data).unwrap();
    let grid = contrast_grid(std::slice::from_ref(&centroid), 1).unwrap();
    let mut out = run_mcmc(&data, &small_cfg(1), &grid).unwrap().draws;
    assert_eq!(out.n_draws, 100);
    assert!(out.latent.is_some());
    project_draws(&mut out).unwrap();
    for s in 0..out.n_draws {
        for p in 0..out.n_profiles() {
            assert!(is_non_decreasing(out.curve(s, p), 0.0));
        }
    }

    let band = curve_band(&out, 0, 0.95).unwrap();
    let pred = prediction_band(&out, 0, 0.95, &mut chain_rng(0, 0)).unwrap();
    for j in 0..band.mesh.len() {
        assert!(band.lower[j] <= band.mean[j] && band.mean[j] <= band.upper[j]);
        assert!(pred.upper[j] - pred.lower[j] > band.upper[j] - band.lower[j]);
    }
    let c = contrast(&out, 1, &centroid, 0.95).unwrap();
    assert!(c.projected);
    let env = envelope(&out, 1, &[centroid]).unwrap();
    assert_eq!(env.min, c.band.mean);
    assert_eq!(env.max, c.band.mean);
}

/// `f = g(t) - 1 * flag`: the contrast flag=1 minus flag=0 is -1.
#[test]
fn synthetic_contrast_recovers_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let noise = Normal::new(0.0, 0.25).unwrap();
    let rows = (0..2000)
        .map(|_| {
            let t = rng.random_range(1..=10) as f64;
            let x: f64 = rng.random_range(0.0..1.0);
            let flag = rng.random_range(0..2) as f64;
            let g = 2.0 + (t - 5.0).atan() + 0.5 * x;
            (t, vec![x, flag], g - flag + noise.sample(&mut rng))
        })
        .collect();
    let schema = vec![CovariateSpec::continuous("x"), CovariateSpec::categorical("flag", 2)];
    let data = Dataset::from_rows(rows, TargetMesh::integer_range(1, 10).unwrap(), None, schema).unwrap();
    let base = Profile::new(vec![0.5, 0.0], "v0");
    let grid = contrast_grid(std::slice::from_ref(&base), 1).unwrap();
    let cfg = SamplerConfig {
        m: 50,
        n_burn: 500,
        n_save: 500,
        seed: 9,
        ..SamplerConfig::default()
    };
    let mut draws = run_mcmc(&data, &cfg, &grid).unwrap().draws;
    project_draws(&mut draws).unwrap();
    let delta = contrast(&draws, 1, &base, 0.95).unwrap();
    for (t, d) in delta.band.mesh.iter().zip(&delta.band.mean) {
        assert!((d + 1.0).abs() <= 0.15, "Delta({t}) = {d}");
    }
}

/// Latent responses stay in their bins on the model scale after every
/// sweep, not only at saved iterations.
#[test]
fn latent_stays_in_bins_every_iteration() {
    let spec = SimScenario::standard(Scenario::Arctan, 200);
    let (exact, _) = gen_monotone_dataset(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let c = 0.25;
    let rows = exact
        .observations()
        .iter()
        .map(|o| (o.t, o.x.clone(), (o.y_obs / c).round() * c))
        .collect();
    let data = Dataset::from_rows(rows, Scenario::mesh(), Some(c), Scenario::schema()).unwrap();
    let (scaled, _) = standardize_response(&data).unwrap();
    let settings = ModelSettings::resolve(&small_cfg(5), &scaled).unwrap();
    let half = 0.5 * scaled.coarsening_width().unwrap();
    let mut sampler = Sampler::new(scaled, settings, chain_rng(5, 0)).unwrap();
    for _ in 0..200 {
        sampler.step().unwrap();
        for (o, &y) in sampler.data().observations().iter().zip(&sampler.state().y_latent) {
            if o.gamma {
                assert!(y >= o.y_obs - half && y < o.y_obs + half, "{y} outside bin of {}", o.y_obs);
            } else {
                assert_eq!(y, o.y_obs);
            }
        }
    }
}

/// Mean one bin width above the observed value, sd half a width.
#[test]
fn off_center_truncated_normal_moments() {
    let (y, c) = (4.0, 0.5);
    let (mean, sd, low, high) = (y + c, c / 2.0, y - c / 2.0, y + c / 2.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| sample_truncated_normal(mean, sd, low, high, &mut rng))
        .collect();
    assert!(draws.iter().all(|&v| v >= low && v < high));
    let (m, v, se_m, se_v) = common::sample_moments(&draws);
    let (em, ev) = common::truncated_moments(mean, sd, low, high);
    assert!((m - em).abs() < 3.0 * se_m, "mean {m} vs {em}");
    assert!((v - ev).abs() < 3.0 * se_v, "var {v} vs {ev}");
    assert!(m > y, "mass piles toward the upper edge");
}

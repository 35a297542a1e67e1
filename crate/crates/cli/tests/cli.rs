use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psbart::sim::{data_rng, gen_monotone_dataset, Scenario, SimScenario};
use serde_json::Value;
use tempfile::TempDir;

/// Interior-grid RMSE bound for the bundled known-truth fit.
const RECOVERY_RMSE: f64 = 0.25;

const CONFIG: &str = r#"
[data]
t_column = "t"
response_column = "y"
covariates = ["x1", "x2", "flag"]
categorical = ["flag"]
coarsening_width = 0.5

[sampler]
m = 20
n_burn = 60
n_save = 40
"#;

fn psbart(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psbart"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Scenario data with a 0/1 flag lowering the response by one unit,
/// responses rounded to the nearest 0.5.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let spec = SimScenario {
        scenario: Scenario::Sigmoid,
        noise_sd: 0.5,
        n: 300,
    };
    let (data, _) = gen_monotone_dataset(&spec, &mut data_rng(5)).unwrap();
    let mut csv = String::from("t,x1,x2,flag,y\n");
    for (i, o) in data.observations().iter().enumerate() {
        let flag = i % 2;
        let y = ((o.y_obs - flag as f64) / 0.5).round() * 0.5;
        csv += &format!("{},{},{},{flag},{y}\n", o.t, o.x[0], o.x[1]);
    }
    let data_path = dir.join("data.csv");
    fs::write(&data_path, csv).unwrap();
    let config_path = dir.join("fit.toml");
    fs::write(&config_path, CONFIG).unwrap();
    (data_path, config_path)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn output_digests(dir: &Path) -> BTreeMap<String, String> {
    serde_json::from_value(manifest(dir)["outputs"].clone()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect();
    (header, rows)
}

#[test]
fn fit_is_reproducible_from_seed_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let (data, config) = write_fixture(tmp.path());
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    for out in [&a, &b] {
        ok(psbart(&["fit", "--data", s(&data), "--config", s(&config), "--seed", "7", "--out", s(out)]));
    }
    let digests = output_digests(&a);
    assert_eq!(digests.len(), 4, "draws, sigma2, latent and sidecar");
    assert_eq!(digests, output_digests(&b));

    ok(psbart(&["fit", "--replay", s(&a.join("manifest.json")), "--out", s(&c)]));
    assert_eq!(digests, output_digests(&c));
    assert_eq!(manifest(&a)["seed"], 7);

    let other = tmp.path().join("other");
    ok(psbart(&["fit", "--data", s(&data), "--config", s(&config), "--seed", "8", "--out", s(&other)]));
    assert_ne!(digests["draws.f64"], output_digests(&other)["draws.f64"]);
}

#[test]
fn replay_refuses_changed_input() {
    let tmp = TempDir::new().unwrap();
    let (data, config) = write_fixture(tmp.path());
    let a = tmp.path().join("a");
    ok(psbart(&["fit", "--data", s(&data), "--config", s(&config), "--save", "5", "--out", s(&a)]));
    fs::write(&data, fs::read_to_string(&data).unwrap() + "5,1.0,0.5,0,3.0\n").unwrap();
    let out = psbart(&["fit", "--replay", s(&a.join("manifest.json")), "--out", s(&tmp.path().join("b"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "integrity");
}

#[test]
fn zero_width_disables_coarsening() {
    let tmp = TempDir::new().unwrap();
    let (data, config) = write_fixture(tmp.path());
    let zero = tmp.path().join("zero");
    ok(psbart(&[
        "fit", "--data", s(&data), "--config", s(&config), "--coarsening-width", "0", "--out", s(&zero),
    ]));
    assert!(!zero.join("latent.f64").exists());
    let m = manifest(&zero);
    assert_eq!(m["resolved"]["coarsened_rows"], 0);

    let plain = tmp.path().join("plain.toml");
    fs::write(&plain, CONFIG.replace("coarsening_width = 0.5\n", "")).unwrap();
    let reference = tmp.path().join("reference");
    ok(psbart(&["fit", "--data", s(&data), "--config", s(&plain), "--out", s(&reference)]));
    assert_eq!(
        fs::read(zero.join("draws.f64")).unwrap(),
        fs::read(reference.join("draws.f64")).unwrap()
    );
}

#[test]
fn summarize_writes_labeled_bands_and_contrasts() {
    let tmp = TempDir::new().unwrap();
    let (data, config) = write_fixture(tmp.path());
    let profiles = tmp.path().join("profiles.csv");
    fs::write(&profiles, "label,x1,x2,flag\nlow,0.7,0.2,0\nhigh,1.3,0.8,0\nmid,1.0,0.5,1\n").unwrap();
    let run = tmp.path().join("run");
    ok(psbart(&[
        "fit", "--data", s(&data), "--config", s(&config), "--predict-profiles", s(&profiles),
        "--contrast", "flag", "--monotone", "--out", s(&run),
    ]));
    let sum = tmp.path().join("sum");
    ok(psbart(&["summarize", "--run", s(&run), "--level", "0.9", "--out", s(&sum)]));

    let (header, rows) = csv_rows(&sum.join("bands.csv"));
    assert_eq!(header, ["profile", "band", "level", "t", "mean", "lower", "upper"]);
    // 3 bases x both flag levels x 10 mesh points x {function, prediction}
    assert_eq!(rows.len(), 3 * 2 * 10 * 2);
    for kind in ["function", "prediction"] {
        assert_eq!(rows.iter().filter(|r| r[1] == kind).count(), 60);
    }
    for r in &rows {
        let v: Vec<f64> = r[4..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= v[0] && v[0] <= v[2], "{r:?}");
    }
    let width = |kind: &str| -> f64 {
        rows.iter()
            .filter(|r| r[1] == kind)
            .map(|r| r[6].parse::<f64>().unwrap() - r[5].parse::<f64>().unwrap())
            .sum()
    };
    assert!(width("prediction") > width("function"));

    let (header, rows) = csv_rows(&sum.join("contrasts.csv"));
    assert_eq!(header, ["base", "fit", "level", "t", "mean", "lower", "upper"]);
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r[1] == "monotone"));
    let (header, rows) = csv_rows(&sum.join("envelope.csv"));
    assert_eq!(header, ["t", "min", "max"]);
    assert_eq!(rows.len(), 10);
    assert!(sum.join("manifest.json").exists());

    let again = tmp.path().join("again");
    ok(psbart(&["summarize", "--run", s(&run), "--level", "0.9", "--out", s(&again)]));
    assert_eq!(output_digests(&sum), output_digests(&again));
}

#[test]
fn summarize_detects_tampered_draws() {
    let tmp = TempDir::new().unwrap();
    let (data, config) = write_fixture(tmp.path());
    let run = tmp.path().join("run");
    ok(psbart(&["fit", "--data", s(&data), "--config", s(&config), "--save", "5", "--out", s(&run)]));
    let path = run.join("draws.f64");
    let mut bytes = fs::read(&path).unwrap();
    bytes[3] ^= 1;
    fs::write(&path, bytes).unwrap();
    let out = psbart(&["summarize", "--run", s(&run), "--out", s(&tmp.path().join("sum"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "integrity");
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let (data, config) = write_fixture(tmp.path());
    let out_dir = tmp.path().join("x");

    let out = psbart(&["simulate", "--study", "bogus", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["category"], "usage");

    let out = psbart(&["fit", "--data", s(&data), "--config", s(&config), "--trees", "0", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));

    let out = psbart(&[
        "fit", "--data", s(&data), "--config", s(&config), "--coarsening-width", "-1", "--out", s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "invalid_width");

    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "t,x1,x2,flag,y\n1,0.5,0.5,0,NA\n").unwrap();
    let out = psbart(&["fit", "--data", s(&bad), "--config", s(&config), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "parse");

    let out = psbart(&["summarize", "--run", s(&tmp.path().join("missing")), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn inflation_study_rows_and_replay() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    ok(psbart(&[
        "simulate", "--study", "mse-inflation", "--sigmas", "0.3,3", "--replicates", "20", "--seed", "3",
        "--out", s(&a),
    ]));
    let (header, rows) = csv_rows(&a.join("inflation.csv"));
    assert_eq!(header, ["x_dist", "k", "sigma", "mean_ratio", "se", "draws"]);
    // 2 sigmas x (2 x distributions x 2 neighbour counts)
    assert_eq!(rows.len(), 2 * 4);

    let b = tmp.path().join("b");
    ok(psbart(&["simulate", "--replay", s(&a.join("manifest.json")), "--out", s(&b)]));
    assert_eq!(output_digests(&a), output_digests(&b));
    assert_eq!(
        fs::read(a.join("inflation.csv")).unwrap(),
        fs::read(b.join("inflation.csv")).unwrap()
    );
}

#[test]
fn monotonicity_study_emits_table_rows() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    ok(psbart(&["simulate", "--study", "monotonicity", "--replicates", "1", "--out", s(&a)]));
    let (header, rows) = csv_rows(&a.join("table1.csv"));
    assert_eq!(header, ["Scenario", "MSE Default", "MSE Monotone", "Percent MSE Reduction"]);
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["Arctan", "Linear", "Sigmoid"]);
    let (_, reps) = csv_rows(&a.join("replicates.csv"));
    assert_eq!(reps.len(), 3);
}

#[test]
fn known_truth_fixture_is_recovered() {
    let tmp = TempDir::new().unwrap();
    let spec = SimScenario {
        scenario: Scenario::Sigmoid,
        noise_sd: 0.5,
        n: 500,
    };
    let (data, _) = gen_monotone_dataset(&spec, &mut data_rng(11)).unwrap();
    let mut csv = String::from("t,x1,x2,y\n");
    for o in data.observations() {
        csv += &format!("{},{},{},{}\n", o.t, o.x[0], o.x[1], o.y_obs);
    }
    let data_path = tmp.path().join("truth.csv");
    fs::write(&data_path, csv).unwrap();
    let config = tmp.path().join("fit.toml");
    fs::write(
        &config,
        "[data]\nt_column = \"t\"\nresponse_column = \"y\"\ncovariates = [\"x1\", \"x2\"]\n\
         [sampler]\nm = 50\nn_burn = 300\nn_save = 300\n",
    )
    .unwrap();
    let grid: Vec<[f64; 2]> = [0.7, 1.0, 1.3]
        .iter()
        .flat_map(|&a| [0.2, 0.5, 0.8].map(|b| [a, b]))
        .collect();
    let profiles = tmp.path().join("profiles.csv");
    let mut text = String::from("x1,x2\n");
    for [a, b] in &grid {
        text += &format!("{a},{b}\n");
    }
    fs::write(&profiles, text).unwrap();
    let run = tmp.path().join("run");
    ok(psbart(&[
        "fit", "--data", s(&data_path), "--config", s(&config), "--predict-profiles", s(&profiles),
        "--seed", "4", "--out", s(&run),
    ]));

    let sidecar: Value = serde_json::from_str(&fs::read_to_string(run.join("draws.json")).unwrap()).unwrap();
    let n_draws = sidecar["f"]["shape"][0].as_u64().unwrap() as usize;
    let f: Vec<f64> = fs::read(run.join("draws.f64"))
        .unwrap()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = 10;
    assert_eq!(f.len(), n_draws * grid.len() * t);
    let mut sse = 0.0;
    for (p, x) in grid.iter().enumerate() {
        let truth = Scenario::Sigmoid.curve(x);
        for (j, ft) in truth.iter().enumerate() {
            let mean = (0..n_draws).map(|d| f[d * grid.len() * t + p * t + j]).sum::<f64>() / n_draws as f64;
            sse += (mean - ft).powi(2);
        }
    }
    let rmse = (sse / (grid.len() * t) as f64).sqrt();
    assert!(rmse < RECOVERY_RMSE, "rmse {rmse}");
}

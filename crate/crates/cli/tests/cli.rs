use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use proptest::prelude::*;
use sgd_dmft::kernels::KernelFile;
use sgd_dmft_cli::{RunManifest, Table};
use tempfile::TempDir;

const SMALL: &str = r#"
seed = 3
[model]
alpha = 2.0
gamma = 0.1
lambda = 0.5
horizon = 6
m0 = 0.2
[solver]
n_paths = 400
theta_paths = 1000
max_sweeps = 20
[sim]
d = 60
n_seeds = 2
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sgd-dmft"));
    c.env_remove("DMFT_OUT_DIR");
    c
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn out_dir(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).display().to_string()
}

#[test]
fn solve_writes_kernels_curves_and_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let out = out_dir(&dir, "o");
    run(bin().args(["solve", "--config", &cfg, "--out", &out]));
    let table = Table::read(&Path::new(&out).join("theory.csv")).unwrap();
    assert_eq!(table.names, ["m", "C_theta", "cosine"]);
    assert_eq!(table.len(), 7);
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("solve_manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest.command, "solve");
    assert_eq!(manifest.seed, 3);
    assert!(manifest.version.starts_with('v'));
    assert!(manifest.outputs.contains(&"theory.csv".to_string()));
    assert!(manifest.converged.is_some());
}

#[test]
fn zero_step_size_gives_zero_kernels_and_flat_cosine() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("gamma = 0.1", "gamma = 0.0"));
    let out = out_dir(&dir, "o");
    run(bin().args(["solve", "--config", &cfg, "--out", &out]));
    let k = KernelFile::load(&Path::new(&out).join("kernels.json")).unwrap();
    assert!(k.noise_cov.iter().chain(&k.memory).all(|&x| x == 0.0));
    assert!(k.converged);
    let table = Table::read(&Path::new(&out).join("theory.csv")).unwrap();
    let cos = table.column("cosine").unwrap();
    assert!(cos.iter().all(|c| (c - cos[0]).abs() < 1e-12));
}

#[test]
fn missing_alpha_is_named() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &SMALL.replace("alpha = 2.0", ""));
    let out = bin()
        .args(["solve", "--config", &cfg, "--out", &out_dir(&dir, "o")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("model.alpha"));
}

#[test]
fn unknown_keys_are_listed() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace("m0 = 0.2", "m0 = 0.2\nlamda = 1.0") + "dd = 4\n";
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = bin()
        .args(["simulate", "--config", &cfg, "--out", &out_dir(&dir, "o")])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.lamda") && err.contains("sim.dd"), "{err}");
}

#[test]
fn two_step_simulation_has_three_rows() {
    let dir = TempDir::new().unwrap();
    let text = SMALL
        .replace("horizon = 6", "horizon = 2")
        .replace("n_seeds = 2", "n_seeds = 1");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = out_dir(&dir, "o");
    run(bin().args(["simulate", "--config", &cfg, "--out", &out]));
    let sim = Table::read(&Path::new(&out).join("sim.csv")).unwrap();
    assert_eq!(sim.t, [0, 1, 2]);
    assert_eq!(
        sim.names,
        ["m_mean", "m_sd", "C_mean", "C_sd", "cosine_mean", "cosine_sd", "loss_mean"]
    );
    assert!(Path::new(&out).join("sim_seed_0.csv").exists());
}

#[test]
fn reruns_and_manifest_replays_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", SMALL);
    let (a, b, c) = (out_dir(&dir, "a"), out_dir(&dir, "b"), out_dir(&dir, "c"));
    for out in [&a, &b] {
        run(bin().args(["simulate", "--config", &cfg, "--out", out, "--seed", "9"]));
        run(bin().args(["solve", "--config", &cfg, "--out", out, "--seed", "9"]));
    }
    let manifest = Path::new(&a).join("simulate_manifest.json").display().to_string();
    run(bin().args(["simulate", "--config", &manifest, "--out", &c]));
    let manifest = Path::new(&a).join("solve_manifest.json").display().to_string();
    run(bin().args(["solve", "--config", &manifest, "--out", &c]));
    for file in ["sim.csv", "sim_seed_1.csv", "theory.csv", "kernels.json"] {
        let first = fs::read(Path::new(&a).join(file)).unwrap();
        assert_eq!(first, fs::read(Path::new(&b).join(file)).unwrap(), "{file}");
        assert_eq!(first, fs::read(Path::new(&c).join(file)).unwrap(), "{file} replay");
    }
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let text = SMALL.replace("n_seeds = 2", "n_seeds = 1");
    let cfg = write_config(dir.path(), "c.toml", &text);
    let out = out_dir(&dir, "env");
    run(bin()
        .env("DMFT_OUT_DIR", &out)
        .args(["simulate", "--config", &cfg]));
    assert!(Path::new(&out).join("sim.csv").exists());
}

#[test]
fn compare_verdicts() {
    let dir = TempDir::new().unwrap();
    let base = Table::new(&["m", "cosine"], vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.6, 0.7]]).unwrap();
    let mut shifted = base.clone();
    shifted.columns[1].iter_mut().for_each(|x| *x += 0.1);
    let p = dir.path();
    base.write(&p.join("a.csv")).unwrap();
    shifted.write(&p.join("b.csv")).unwrap();
    let a = p.join("a.csv").display().to_string();
    let b = p.join("b.csv").display().to_string();

    let same = run(bin().args(["compare", &a, &a, "--tol", "0"]));
    let text = String::from_utf8_lossy(&same.stdout);
    assert!(text.contains("PASS") && text.contains("max deviation 0.000000e0"), "{text}");

    let loose = run(bin().args(["compare", &a, &b, "--tol", "0.05"]));
    let text = String::from_utf8_lossy(&loose.stdout);
    assert!(text.contains("FAIL") && text.contains("1.000000e-1"), "{text}");

    let strict = bin()
        .args(["compare", &a, &b, "--tol", "0.05", "--strict"])
        .output()
        .unwrap();
    assert_eq!(strict.status.code(), Some(1));

    let mut short = base.clone();
    short.t.pop();
    short.columns.iter_mut().for_each(|c| {
        c.pop();
    });
    short.write(&p.join("s.csv")).unwrap();
    let s = p.join("s.csv").display().to_string();
    let grid = bin().args(["compare", &a, &s]).output().unwrap();
    assert!(!grid.status.success());
    assert!(String::from_utf8_lossy(&grid.stderr).contains("grids differ"));
}

#[test]
fn split_with_zero_step_is_flat() {
    let dir = TempDir::new().unwrap();
    let text = "[split]\ngamma = 0.0\nsteps = 5\n";
    let cfg = write_config(dir.path(), "c.toml", text);
    let out = out_dir(&dir, "o");
    let res = run(bin().args(["split", "--config", &cfg, "--out", &out]));
    assert!(String::from_utf8_lossy(&res.stdout).contains("PASS"));
    let dev = Table::read(&Path::new(&out).join("split_compare.csv")).unwrap();
    assert!(dev.columns[0].iter().all(|&x| x == 0.0));
    let theory = Table::read(&Path::new(&out).join("split_theory.csv")).unwrap();
    let rho = theory.column("rho").unwrap();
    assert!(rho.iter().all(|&r| r == rho[0]));
}

#[test]
fn split_linear_theory_matches_closed_form() {
    let dir = TempDir::new().unwrap();
    let text = "[split]\nlink = \"linear\"\ngamma = 0.1\nsteps = 20\nrho0 = 1.0\n";
    let cfg = write_config(dir.path(), "c.toml", text);
    let out = out_dir(&dir, "o");
    run(bin().args(["split", "--config", &cfg, "--out", &out]));
    let theory = Table::read(&Path::new(&out).join("split_theory.csv")).unwrap();
    let (alpha, g) = (0.5f64, 0.1f64);
    let mut rho = 1.0f64;
    for (t, r) in theory.column("rho").unwrap().iter().enumerate() {
        assert!((r - rho).abs() < 1e-10, "t={t}");
        rho *= (1.0 - g * alpha).powi(2) + g * g * alpha;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trips(cols in prop::collection::vec(
        prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 5),
        1..4,
    )) {
        let names: Vec<String> = (0..cols.len()).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let table = Table::new(&refs, cols).unwrap();
        let back = Table::from_csv(&table.to_csv()).unwrap();
        prop_assert_eq!(back, table);
    }
}

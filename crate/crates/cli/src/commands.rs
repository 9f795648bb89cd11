//! The four subcommands. Each writes its tables into `out` next to a
//! `<command>_manifest.json` that records everything needed to rerun it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sgd_dmft::finite_sim::{
    generate_dataset, initial_weights, run_algorithm, run_sample_split_gd, SimObservables,
};
use sgd_dmft::kernels::KernelFile;
use sgd_dmft::sample_splitting::scalar_dmft;
use sgd_dmft::solver::{solve_fixed_point, theory_curves};

use crate::config::ExperimentConfig;
use crate::table::{compare, Comparison, Table};

pub const VERSION: &str = env!("SGD_DMFT_VERSION");

/// Overrides shared by the subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub version: String,
    /// Start time, seconds since the Unix epoch.
    pub started_at: f64,
    pub wall_clock_seconds: f64,
    /// `None` for commands without an iteration.
    pub converged: Option<bool>,
    /// Verdict of the comparison, where there is one.
    pub passed: Option<bool>,
    pub outputs: Vec<String>,
}

struct Run {
    command: &'static str,
    out: PathBuf,
    started_at: f64,
    clock: Instant,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, out: &Path) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            command,
            out: out.to_path_buf(),
            started_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0.0, |d| d.as_secs_f64()),
            clock: Instant::now(),
            outputs: Vec::new(),
        })
    }

    fn table(&mut self, name: &str, table: &Table) -> Result<()> {
        table.write(&self.out.join(name))?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(
        self,
        config: serde_json::Value,
        seed: u64,
        converged: Option<bool>,
        passed: Option<bool>,
    ) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            config,
            seed,
            version: VERSION.to_string(),
            started_at: self.started_at,
            wall_clock_seconds: self.clock.elapsed().as_secs_f64(),
            converged,
            passed,
            outputs: self.outputs,
        };
        let path = self.out.join(format!("{}_manifest.json", self.command));
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(manifest)
    }
}

fn resolve(config: &ExperimentConfig, o: &Overrides) -> ExperimentConfig {
    let mut c = config.clone();
    if let Some(seed) = o.seed {
        c.set_seed(seed);
    }
    if let Some(paths) = o.paths {
        c.solver.n_paths = paths;
    }
    c
}

/// Solves the kernels and writes `kernels.json` and `theory.csv`.
/// Running out of sweeps is not an error; the manifest records it.
pub fn solve(config: &ExperimentConfig, o: &Overrides, out: &Path) -> Result<RunManifest> {
    let mut c = resolve(config, o);
    if let Some(tol) = o.tol {
        c.solver.tol = tol;
    }
    let params = c.model()?.clone();
    c.solver.validate()?;
    let mut run = Run::start("solve", out)?;
    let sol = solve_fixed_point(&params, &c.solver)?;
    let curves = theory_curves(&sol.kernels, &params, &c.solver)?;

    KernelFile::new(&sol.kernels, &params, &sol.trace, sol.converged)
        .save(&out.join("kernels.json"))
        .context("writing kernels.json")?;
    run.outputs.push("kernels.json".into());
    let table = Table::new(
        &["m", "C_theta", "cosine"],
        vec![curves.m, curves.c_theta, curves.cosine],
    )?;
    run.table("theory.csv", &table)?;
    run.finish(c.to_json(), c.seed, Some(sol.converged), None)
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `sim.n_seeds` independent finite-d runs (seeds `seed, seed+1, ..`)
/// and writes `sim.csv` plus one `sim_seed_<k>.csv` per run.
pub fn simulate(config: &ExperimentConfig, o: &Overrides, out: &Path) -> Result<RunManifest> {
    let c = resolve(config, o);
    let params = c.model()?.clone();
    if c.sim.n_seeds == 0 || c.sim.d == 0 {
        bail!("sim.n_seeds and sim.d must be >= 1");
    }
    let d = c.sim.d;
    let n = ((params.alpha * d as f64).round() as usize).max(1);
    let mut run = Run::start("simulate", out)?;

    let mut runs: Vec<SimObservables> = Vec::with_capacity(c.sim.n_seeds);
    for k in 0..c.sim.n_seeds {
        let seed = c.seed + k as u64;
        let data = generate_dataset(n, d, seed, None)?;
        let w0 = initial_weights(&data, &params, c.sim.init, seed);
        let obs = run_algorithm(&c.sim.algorithm, &data, &params, w0, seed)?.observables;
        let table = Table::new(
            &["m", "C", "cosine", "loss"],
            vec![obs.m.clone(), obs.c.clone(), obs.cosine.clone(), obs.loss.clone()],
        )?;
        run.table(&format!("sim_seed_{k}.csv"), &table)?;
        runs.push(obs);
    }

    let steps = runs[0].len();
    let stat = |f: fn(&SimObservables) -> &Vec<f64>| -> (Vec<f64>, Vec<f64>) {
        (0..steps)
            .map(|t| mean_sd(&runs.iter().map(|r| f(r)[t]).collect::<Vec<_>>()))
            .unzip()
    };
    let (m_mean, m_sd) = stat(|r| &r.m);
    let (c_mean, c_sd) = stat(|r| &r.c);
    let (cos_mean, cos_sd) = stat(|r| &r.cosine);
    let (loss_mean, _) = stat(|r| &r.loss);
    let table = Table::new(
        &[
            "m_mean",
            "m_sd",
            "C_mean",
            "C_sd",
            "cosine_mean",
            "cosine_sd",
            "loss_mean",
        ],
        vec![m_mean, m_sd, c_mean, c_sd, cos_mean, cos_sd, loss_mean],
    )?;
    run.table("sim.csv", &table)?;
    run.finish(c.to_json(), c.seed, None, None)
}

/// Compares two tables column by column; see [`crate::table::compare`].
pub fn compare_files(reference: &Path, candidate: &Path, tolerance: f64) -> Result<Comparison> {
    compare(&Table::read(reference)?, &Table::read(candidate)?, tolerance)
}

/// Writes a comparison's per-step table and a manifest.
pub fn save_comparison(
    cmp: &Comparison,
    reference: &Path,
    candidate: &Path,
    out: &Path,
) -> Result<RunManifest> {
    let mut run = Run::start("compare", out)?;
    run.table("compare.csv", &cmp.per_step)?;
    let config = serde_json::json!({
        "reference": reference.display().to_string(),
        "candidate": candidate.display().to_string(),
        "tolerance": cmp.tolerance,
    });
    run.finish(config, 0, None, Some(cmp.passed))
}

/// Result of [`split`]: the two tables and their comparison.
#[derive(Debug, Clone)]
pub struct SplitOutcome {
    pub theory: Table,
    pub sim: Table,
    pub comparison: Comparison,
    pub manifest: RunManifest,
}

/// Scalar theory against `split.runs` sample-splitting runs. Writes
/// `split_theory.csv`, `split_sim.csv` and `split_compare.csv`. The verdict
/// uses `--tol` (default 0.1) on `rho` and `mean_abs`.
pub fn split(config: &ExperimentConfig, o: &Overrides, out: &Path) -> Result<SplitOutcome> {
    let c = resolve(config, o);
    let s = &c.split;
    if s.runs == 0 || s.n == 0 || s.d == 0 {
        bail!("split.runs, split.n and split.d must be >= 1");
    }
    let tolerance = o.tol.unwrap_or(0.1);
    let mut run = Run::start("split", out)?;
    let gamma = vec![s.gamma; s.steps];
    let link = s.link;

    let runs = (0..s.runs)
        .map(|r| {
            run_sample_split_gd(
                |z| link.first(z),
                &gamma,
                s.n,
                s.d,
                s.init_var,
                c.seed + r as u64,
            )
        })
        .collect::<sgd_dmft::Result<Vec<_>>>()?;
    let stat = |t: usize, f: fn(&sgd_dmft::finite_sim::SplitRun) -> &Vec<f64>| {
        mean_sd(&runs.iter().map(|r| f(r)[t]).collect::<Vec<_>>())
    };
    let (rho_mean, rho_sd): (Vec<f64>, Vec<f64>) =
        (0..=s.steps).map(|t| stat(t, |r| &r.rho_hat)).unzip();
    let (abs_mean, abs_sd): (Vec<f64>, Vec<f64>) =
        (0..=s.steps).map(|t| stat(t, |r| &r.mean_abs)).unzip();
    let rho0 = s.rho0.unwrap_or(rho_mean[0]);

    let alpha = s.n as f64 / s.d as f64;
    let state = scalar_dmft(
        |z| link.first(z),
        |z| link.second(z),
        alpha,
        &gamma,
        rho0,
        s.order,
    )?;
    let theory = Table::new(&["rho", "mean_abs"], vec![state.rho.clone(), state.mean_abs()])?;
    let sim = Table::new(
        &["rho_mean", "rho_sd", "mean_abs_mean", "mean_abs_sd"],
        vec![rho_mean, rho_sd, abs_mean, abs_sd],
    )?;
    let comparison = compare(&theory, &sim, tolerance)?;
    run.table("split_theory.csv", &theory)?;
    run.table("split_sim.csv", &sim)?;
    run.table("split_compare.csv", &comparison.per_step)?;
    let manifest = run.finish(c.to_json(), c.seed, None, Some(comparison.passed))?;
    Ok(SplitOutcome {
        theory,
        sim,
        comparison,
        manifest,
    })
}

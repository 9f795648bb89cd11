//! Experiment configuration: a TOML file with `[model]`, `[solver]`, `[sim]`
//! and `[split]` sections plus a top-level `seed`.
//!
//! Every key is checked against a fixed list before deserializing, so a typo
//! is reported together with all other unknown keys instead of being ignored.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sgd_dmft::finite_sim::{AlgorithmSpec, InitMode};
use sgd_dmft::numerics::DEFAULT_QUADRATURE_ORDER;
use sgd_dmft::{ModelParams, SolverConfig};

const TOP_KEYS: &[&str] = &["seed", "model", "solver", "sim", "split"];
const MODEL_KEYS: &[&str] = &[
    "alpha",
    "gamma",
    "lambda",
    "b",
    "temperature",
    "horizon",
    "loss",
    "m0",
    "c0",
    "grad_norm",
    "mask_mode",
];
const MODEL_REQUIRED: &[&str] = &["alpha", "gamma", "horizon"];
const SOLVER_KEYS: &[&str] = &[
    "n_paths",
    "damping",
    "max_sweeps",
    "tol",
    "psd_floor",
    "resample_each_sweep",
    "theta_paths",
];
const SIM_KEYS: &[&str] = &["d", "n_seeds", "init", "algorithm"];
const SPLIT_KEYS: &[&str] = &[
    "n", "d", "steps", "gamma", "link", "rho0", "init_var", "runs", "order",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub d: usize,
    pub n_seeds: usize,
    pub init: InitMode,
    pub algorithm: AlgorithmSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            d: 1000,
            n_seeds: 10,
            init: InitMode::Random,
            algorithm: AlgorithmSpec::Sgd,
        }
    }
}

/// The link `f'` of the sample-splitting model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    #[default]
    Tanh,
    Linear,
}

impl Link {
    pub fn first(self, z: f64) -> f64 {
        match self {
            Link::Tanh => z.tanh(),
            Link::Linear => z,
        }
    }

    pub fn second(self, z: f64) -> f64 {
        match self {
            Link::Tanh => 1.0 - z.tanh().powi(2),
            Link::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub n: usize,
    pub d: usize,
    pub steps: usize,
    pub gamma: f64,
    pub link: Link,
    /// Starting `ρ` for the scalar theory. Defaults to the mean empirical
    /// `ρ̂^0` of the runs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho0: Option<f64>,
    /// Variance of the i.i.d. initial weights in the finite runs.
    pub init_var: f64,
    pub runs: usize,
    pub order: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            n: 50,
            d: 100,
            steps: 50,
            gamma: 0.2,
            link: Link::Tanh,
            rho0: None,
            init_var: 1.0,
            runs: 1,
            order: DEFAULT_QUADRATURE_ORDER,
        }
    }
}

/// Fully resolved configuration. `solver.seed` is not a key of its own; the
/// top-level seed feeds every stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelParams>,
    pub solver: SolverConfig,
    pub sim: SimConfig,
    pub split: SplitConfig,
}

impl ExperimentConfig {
    /// Reads a TOML config, or the `config` object of a run manifest when
    /// the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value = if path.extension().is_some_and(|e| e == "json") {
            let manifest: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            let config = manifest
                .get("config")
                .ok_or_else(|| anyhow!("{} has no `config` object", path.display()))?;
            toml::Value::try_from(config)?
        } else {
            toml::Value::Table(
                text.parse::<toml::Table>()
                    .with_context(|| format!("parsing {}", path.display()))?,
            )
        };
        Self::from_value(value).with_context(|| format!("in {}", path.display()))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_value(toml::Value::Table(text.parse::<toml::Table>()?))
    }

    fn from_value(value: toml::Value) -> Result<Self> {
        let table = match value {
            toml::Value::Table(t) => t,
            _ => bail!("config must be a table"),
        };
        check_keys(&table)?;

        let seed = match table.get("seed") {
            None => 0,
            Some(v) => v
                .as_integer()
                .and_then(|s| u64::try_from(s).ok())
                .ok_or_else(|| anyhow!("`seed` must be a non-negative integer"))?,
        };
        let model = match table.get("model") {
            None => None,
            Some(m) => {
                let t = m.as_table().ok_or_else(|| anyhow!("`model` must be a table"))?;
                for key in MODEL_REQUIRED {
                    if !t.contains_key(*key) {
                        bail!("missing required key `model.{key}`");
                    }
                }
                let params: ModelParams = m.clone().try_into().context("in [model]")?;
                params.validate().context("in [model]")?;
                Some(params)
            }
        };
        let mut solver: SolverConfig = section(&table, "solver")?;
        solver.seed = seed;
        Ok(Self {
            seed,
            model,
            solver,
            sim: section(&table, "sim")?,
            split: section(&table, "split")?,
        })
    }

    pub fn model(&self) -> Result<&ModelParams> {
        self.model
            .as_ref()
            .ok_or_else(|| anyhow!("missing required key `model.alpha`: no [model] section"))
    }

    /// Applies a seed override to every place the seed lives.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.solver.seed = seed;
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        // The solver seed mirrors the top-level one and is not a config key.
        if let Some(solver) = v.get_mut("solver").and_then(|s| s.as_object_mut()) {
            solver.remove("seed");
        }
        v
    }
}

fn section<T>(table: &toml::Table, name: &str) -> Result<T>
where
    T: Default + for<'de> Deserialize<'de>,
{
    match table.get(name) {
        None => Ok(T::default()),
        Some(v) => v.clone().try_into().with_context(|| format!("in [{name}]")),
    }
}

fn check_keys(table: &toml::Table) -> Result<()> {
    let mut unknown = Vec::new();
    for (key, value) in table {
        let allowed = match key.as_str() {
            "model" => MODEL_KEYS,
            "solver" => SOLVER_KEYS,
            "sim" => SIM_KEYS,
            "split" => SPLIT_KEYS,
            k if TOP_KEYS.contains(&k) => continue,
            _ => {
                unknown.push(key.clone());
                continue;
            }
        };
        let Some(inner) = value.as_table() else {
            bail!("`{key}` must be a table");
        };
        for k in inner.keys() {
            if !allowed.contains(&k.as_str()) {
                unknown.push(format!("{key}.{k}"));
            }
        }
    }
    if !unknown.is_empty() {
        bail!("unknown config keys: {}", unknown.join(", "));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALIGNED: &str = r#"
seed = 4
[model]
alpha = 3.0
gamma = 0.1
lambda = 0.5
horizon = 30
m0 = 0.2
[solver]
n_paths = 2500
"#;

    #[test]
    fn parses_sections_and_defaults() {
        let c = ExperimentConfig::from_toml_str(ALIGNED).unwrap();
        let m = c.model().unwrap();
        assert_eq!((m.alpha, m.b, m.horizon), (3.0, 1.0, 30));
        assert_eq!(c.solver.seed, 4);
        assert_eq!(c.solver.damping, 0.7);
        assert_eq!(c.sim, SimConfig::default());
    }

    #[test]
    fn lists_every_unknown_key() {
        let text = format!("{ALIGNED}\nfoo = 1\n[sim]\ndd = 3\n");
        let text = text.replace("m0 = 0.2", "m0 = 0.2\nalhpa = 1");
        let err = ExperimentConfig::from_toml_str(&text).unwrap_err().to_string();
        for key in ["model.alhpa", "sim.dd", "foo"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn names_missing_required_key() {
        let err = ExperimentConfig::from_toml_str(&ALIGNED.replace("alpha = 3.0", ""))
            .unwrap_err()
            .to_string();
        assert!(err.contains("model.alpha"), "{err}");
    }

    #[test]
    fn solver_seed_is_not_a_key() {
        let err = ExperimentConfig::from_toml_str(&format!("{ALIGNED}seed = 3\n"));
        assert!(err.is_err());
    }

    #[test]
    fn json_form_reloads() {
        let mut c = ExperimentConfig::from_toml_str(ALIGNED).unwrap();
        c.sim.algorithm = AlgorithmSpec::Polyak { beta: 0.5 };
        c.split.rho0 = Some(0.7);
        let back =
            ExperimentConfig::from_value(toml::Value::try_from(c.to_json()).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}

//! Experiment configuration.
//!
//! A config is a TOML document with four sections. Unknown keys anywhere are
//! errors.
//!
//! ```toml
//! [topology]
//! kind = "complete"        # ring | path | grid | complete | star | random_regular | erdos_renyi | edge_list
//! n = 16
//!
//! [algorithm]
//! variant = "worst_case"   # worst_case | small_loss | bobw | linear
//! horizon = 10000
//! arms = 2
//! master_seed = 1
//! num_seeds = 20
//!
//! [environment]
//! resample = true
//! [environment.losses]
//! kind = "iid_uniform"
//!
//! [output]
//! dir = "out/run"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{EnvSpec, LinearEnvSpec};
use crate::error::{Error, Result};
use crate::graph::{build_topology, laplacian_weights, metropolis_weights, CommGraph, GossipMatrix, Topology};
use crate::learners::Tuning;
use crate::linear::ActionSet;

/// Which algorithm a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    WorstCase,
    SmallLoss,
    Bobw,
    Linear,
}

impl Variant {
    /// Rate schedule of the `K`-armed variants.
    pub fn tuning(self) -> Option<Tuning> {
        match self {
            Variant::WorstCase => Some(Tuning::WorstCase),
            Variant::SmallLoss => Some(Tuning::SmallLoss),
            Variant::Bobw => Some(Tuning::Bobw),
            Variant::Linear => None,
        }
    }

    pub fn is_linear(self) -> bool {
        self == Variant::Linear
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::WorstCase => "worst_case",
            Variant::SmallLoss => "small_loss",
            Variant::Bobw => "bobw",
            Variant::Linear => "linear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Ring,
    Path,
    Grid,
    Complete,
    Star,
    RandomRegular,
    ErdosRenyi,
    EdgeList,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightScheme {
    #[default]
    Metropolis,
    /// `I - (laziness / d_max) L`.
    Lazy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    pub kind: TopologyKind,
    pub n: Option<usize>,
    pub rows: Option<usize>,
    pub cols: Option<usize>,
    pub degree: Option<usize>,
    pub p: Option<f64>,
    /// Edge-list file for `kind = "edge_list"`.
    pub path: Option<PathBuf>,
    /// Seed of the randomized builders.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightScheme,
    #[serde(default = "default_laziness")]
    pub laziness: f64,
}

fn default_laziness() -> f64 {
    0.5
}

fn need<T: Copy>(v: Option<T>, key: &str, kind: TopologyKind) -> Result<T> {
    v.ok_or_else(|| Error::ConfigInvalid(format!("topology {kind:?} needs `{key}`")))
}

impl TopologySection {
    fn family(&self) -> Result<Option<Topology>> {
        let k = self.kind;
        Ok(Some(match k {
            TopologyKind::Ring => Topology::Ring { n: need(self.n, "n", k)? },
            TopologyKind::Path => Topology::Path { n: need(self.n, "n", k)? },
            TopologyKind::Complete => Topology::Complete { n: need(self.n, "n", k)? },
            TopologyKind::Star => Topology::Star { n: need(self.n, "n", k)? },
            TopologyKind::Grid => {
                Topology::Grid { rows: need(self.rows, "rows", k)?, cols: need(self.cols, "cols", k)? }
            }
            TopologyKind::RandomRegular => {
                Topology::RandomRegular { n: need(self.n, "n", k)?, degree: need(self.degree, "degree", k)? }
            }
            TopologyKind::ErdosRenyi => Topology::ErdosRenyi { n: need(self.n, "n", k)?, p: need(self.p, "p", k)? },
            TopologyKind::EdgeList => return Ok(None),
        }))
    }

    pub fn graph(&self) -> Result<CommGraph> {
        match self.family()? {
            Some(t) => build_topology(&t, self.seed),
            None => {
                let path =
                    self.path.as_ref().ok_or_else(|| Error::ConfigInvalid("topology edge_list needs `path`".into()))?;
                CommGraph::read_edge_list(path)
            }
        }
    }

    pub fn gossip_matrix(&self) -> Result<GossipMatrix> {
        let g = self.graph()?;
        match self.weights {
            WeightScheme::Metropolis => metropolis_weights(&g),
            WeightScheme::Lazy => laplacian_weights(&g, self.laziness),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    pub variant: Variant,
    /// `T`.
    pub horizon: usize,
    /// `K`. Optional for linear runs that read their action set from a file.
    pub arms: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub num_seeds: usize,
    /// Manual block length; marks the theory guarantee void.
    pub block_len: Option<usize>,
    pub kappa: Option<f64>,
    /// Learning-rate override. For `bobw` it replaces the cap of the entropy rate.
    pub eta: Option<f64>,
    /// Barrier-rate override. For `bobw` it replaces the Tsallis scale.
    pub gamma: Option<f64>,
    /// Spanner exploration override (linear only).
    pub beta: Option<f64>,
    /// `L*` for `small_loss`.
    pub l_star: Option<f64>,
    /// Compute `L*` from the first replay's environment.
    #[serde(default)]
    pub l_star_from_env: bool,
    /// Spanner size cap, default `3 d`.
    pub spanner_cap: Option<usize>,
    /// Parallel agent updates inside a replay.
    #[serde(default)]
    pub parallel: bool,
    /// Abort on invariant violations while the theory parameters are in force.
    #[serde(default)]
    pub strict: bool,
    /// Replay the ghost learner on exact averages.
    #[serde(default = "yes")]
    pub ghost: bool,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

/// Source of the linear action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionsSpec {
    /// `arms` unit vectors in `R^dim`.
    RandomUnit {
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

impl ActionsSpec {
    pub fn build(&self, arms: Option<usize>) -> Result<ActionSet> {
        match self {
            ActionsSpec::RandomUnit { dim, seed } => {
                let k = arms.ok_or_else(|| Error::ConfigInvalid("random_unit actions need `algorithm.arms`".into()))?;
                if *dim == 0 || k < 2 {
                    return Err(Error::ConfigInvalid("random_unit actions need dim >= 1 and arms >= 2".into()));
                }
                ActionSet::random_unit(k, *dim, *seed)
            }
            ActionsSpec::Csv { path } => {
                let omega = ActionSet::load(path)?;
                if let Some(k) = arms {
                    if k != omega.arms() {
                        return Err(Error::ConfigInvalid(format!(
                            "algorithm.arms = {k} but {} holds {} actions",
                            path.display(),
                            omega.arms()
                        )));
                    }
                }
                Ok(omega)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// Environment seed; defaults to the master seed.
    pub seed: Option<u64>,
    /// Draw a fresh environment for every replay.
    #[serde(default)]
    pub resample: bool,
    /// `K`-armed losses, default `iid_uniform`.
    pub losses: Option<EnvSpec>,
    /// Linear loss parameters.
    pub theta: Option<LinearEnvSpec>,
    /// Linear action set.
    pub actions: Option<ActionsSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory; nothing is written when absent.
    pub dir: Option<PathBuf>,
    /// Write one telemetry CSV per replay.
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "default_summary")]
    pub summary: String,
}

fn default_summary() -> String {
    "summary.json".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: None, csv: true, summary: default_summary() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: TopologySection,
    pub algorithm: AlgorithmSection,
    #[serde(default)]
    pub environment: EnvironmentSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text =
            std::fs::read_to_string(path.as_ref()).map_err(|e| invalid(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Number of agents implied by the topology section (`None` for edge lists).
    pub fn n_agents(&self) -> Option<usize> {
        self.topology.family().ok().flatten().map(|t| t.n_agents())
    }

    /// Environment spec of a `K`-armed run.
    pub fn losses(&self) -> EnvSpec {
        self.environment.losses.clone().unwrap_or(EnvSpec::IidUniform)
    }

    /// Checks everything that does not need the graph or the action set built.
    pub fn validate(&self) -> Result<()> {
        let a = &self.algorithm;
        let e = &self.environment;
        if a.horizon < 3 {
            return Err(invalid(format!("horizon {} must be at least 3", a.horizon)));
        }
        if a.num_seeds == 0 {
            return Err(invalid("num_seeds must be at least 1"));
        }
        self.topology.family()?;
        if let Some(0) = a.block_len {
            return Err(invalid("block_len must be positive"));
        }
        if let Some(k) = a.kappa {
            if !(0.0..1.0).contains(&k) {
                return Err(invalid(format!("kappa {k} must lie in [0, 1)")));
            }
        }
        for (name, v) in [("eta", a.eta), ("gamma", a.gamma)] {
            if let Some(x) = v {
                if !(x > 0.0 && x.is_finite()) {
                    return Err(invalid(format!("{name} = {x} must be positive and finite")));
                }
            }
        }
        if let Some(l) = a.l_star {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(invalid(format!("l_star = {l} must be nonnegative")));
            }
        }
        if (a.l_star.is_some() || a.l_star_from_env) && a.variant != Variant::SmallLoss {
            return Err(invalid("l_star applies to the small_loss variant only"));
        }
        if a.variant == Variant::SmallLoss && a.l_star.is_none() && !a.l_star_from_env {
            return Err(Error::MissingLStar);
        }
        if a.variant.is_linear() {
            if e.losses.is_some() {
                return Err(invalid("linear runs take `environment.theta`, not `environment.losses`"));
            }
            if e.theta.is_none() || e.actions.is_none() {
                return Err(invalid("linear runs need `environment.theta` and `environment.actions`"));
            }
            if a.gamma.is_some() {
                return Err(invalid("gamma does not apply to the linear variant"));
            }
            if let Some(b) = a.beta {
                if !(b > 0.0 && b < 1.0) {
                    return Err(invalid(format!("beta = {b} must lie in (0, 1)")));
                }
            }
        } else {
            let k = a.arms.ok_or_else(|| invalid("`algorithm.arms` is required"))?;
            if k < 2 {
                return Err(invalid(format!("arms = {k} must be at least 2")));
            }
            if e.theta.is_some() || e.actions.is_some() {
                return Err(invalid("theta and actions apply to the linear variant only"));
            }
            if a.beta.is_some() || a.spanner_cap.is_some() {
                return Err(invalid("beta and spanner_cap apply to the linear variant only"));
            }
            if a.variant == Variant::WorstCase && a.gamma.is_some() {
                return Err(invalid("gamma does not apply to the worst_case variant"));
            }
            if let Some(n) = self.n_agents() {
                self.losses().validate(n, k).map_err(|err| invalid(err.to_string()))?;
            }
        }
        Ok(())
    }
}

/// Parses `raw` as a TOML value, falling back to a plain string.
pub fn parse_value(raw: &str) -> toml::Value {
    let raw = raw.trim();
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets a dotted key such as `algorithm.horizon` in a config table.
pub fn set_key(table: &mut toml::Table, dotted: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = dotted.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("bad key `{dotted}`")));
    }
    let (last, path) = parts.split_last().expect("nonempty");
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(format!("`{p}` in `{dotted}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[topology]
kind = "complete"
n = 4

[algorithm]
variant = "worst_case"
horizon = 100
arms = 3
"#;

    #[test]
    fn minimal_config_defaults() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(c.algorithm.num_seeds, 1);
        assert!(c.algorithm.ghost);
        assert_eq!(c.losses(), EnvSpec::IidUniform);
        assert_eq!(c.output.summary, "summary.json");
        assert_eq!(c.n_agents(), Some(4));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = BASE.replace("arms = 3", "arms = 3\nhorizn = 5");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::ConfigInvalid(_))));
        let text = format!("{BASE}\n[environment.losses]\nkind = \"small_loss_regime\"\neps = 0.1\nepsilon = 2\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::ConfigInvalid(_))));
        let text = format!("{BASE}\n[extra]\nx = 1\n");
        assert!(matches!(ExperimentConfig::from_toml_str(&text), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn stochastic_env_parses() {
        let text = format!(
            "{BASE}\n[environment.losses]\nkind = \"stochastic\"\nmeans = [[0.1, 0.5, 0.5], [0.1, 0.5, 0.5], [0.1, 0.5, 0.5], [0.1, 0.5, 0.5]]\n"
        );
        let c = ExperimentConfig::from_toml_str(&text).unwrap();
        assert!(matches!(c.losses(), EnvSpec::Stochastic(_)));
    }

    #[test]
    fn variant_specific_checks() {
        let sl = BASE.replace("worst_case", "small_loss");
        assert!(matches!(ExperimentConfig::from_toml_str(&sl), Err(Error::MissingLStar)));
        let sl = sl.replace("arms = 3", "arms = 3\nl_star = 20.0");
        assert!(ExperimentConfig::from_toml_str(&sl).is_ok());
        let lin = BASE.replace("worst_case", "linear");
        assert!(matches!(ExperimentConfig::from_toml_str(&lin), Err(Error::ConfigInvalid(_))));
        let lin = format!(
            "{lin}\n[environment.theta]\nkind = \"iid_gaussian_normalized\"\nsignal = 1.0\nnoise = 0.5\n[environment.actions]\nkind = \"random_unit\"\ndim = 2\n"
        );
        assert!(ExperimentConfig::from_toml_str(&lin).is_ok());
        let bad = BASE.replace("arms = 3", "arms = 3\nbeta = 0.2");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = BASE.replace("horizon = 100", "horizon = 2");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
        let bad = BASE.replace("kind = \"complete\"", "kind = \"grid\"");
        assert!(ExperimentConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let mut t: toml::Table = toml::from_str(BASE).unwrap();
        set_key(&mut t, "algorithm.horizon", parse_value("250")).unwrap();
        set_key(&mut t, "algorithm.variant", parse_value("bobw")).unwrap();
        set_key(&mut t, "environment.losses.kind", parse_value("\"iid_uniform\"")).unwrap();
        let c = ExperimentConfig::from_table(t).unwrap();
        assert_eq!(c.algorithm.horizon, 250);
        assert_eq!(c.algorithm.variant, Variant::Bobw);
        assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(parse_value("[1, 2]").as_array().unwrap().len(), 2);
    }

    #[test]
    fn roundtrip_through_toml() {
        let c = ExperimentConfig::from_toml_str(BASE).unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }
}

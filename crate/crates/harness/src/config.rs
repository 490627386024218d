//! Experiment configuration files (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use rsbm_core::dual::DualSpec;
use rsbm_core::environment::{sample_environment, Environment, EnvironmentSpec, PotentialLaw};
use rsbm_core::pam::SemigroupBackend;
use rsbm_core::particle::BranchingSpec;
use rsbm_core::{LatticeBox, TestFunction};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, HarnessResult};

/// Every accepted key, printed by `rsbm --help`.
pub const KEY_REFERENCE: &str = "\
CONFIGURATION KEYS (TOML)
  experiment            lln | duality | moments | variance | persistence |
                        eigen_growth | assumption_norms | spde_compare
  [lattice]
    d                   dimension, 1 or 2
    n                   lattice scale (sites per unit length)
    n_grid              list of scales, for lln, duality and assumption_norms
    M                   box side length; (nM)^d sites on the torus
    M_grid              increasing list of box sides, for eigen_growth
    boundary            periodic (default) | dirichlet (eigen_growth, persistence only)
  [environment]
    dist                rademacher (default) | centered_uniform | two_point
    p                   probability of the upper atom for two_point
    seed                environment seed (default 0)
    count               number of environments, seeds seed..seed+count (default 1)
  [particles]
    rho                 scaling exponent; N = floor(n^rho) initial particles
    mode                binary (default) | offspring
    offspring_probs     p_0, p_1, ... for offspring mode (mean 1)
  [time]
    t_end               final time
    obs_times           observation times (default [t_end])
  [mc]
    replicas            Monte Carlo replicas (default 1000)
    base_seed           ensemble seed; replica r uses stream (base_seed, r) (default 0)
    max_threads         worker threads; falls back to RSBM_THREADS, then all cores
  [solver]
    backend             dense (default) | crank_nicolson
    dt_factor           Crank-Nicolson step times stiffness; SPDE step over dx^2 (default 0.25)
    picard_tol          FKPP Picard tolerance (default 1e-10)
  [observable]
    amplitude           test function exp(-|x|^2 / width^2) times amplitude (default 1)
    width               (default 0.5)
  [output]
    dir                 output directory
";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lln,
    Duality,
    Moments,
    Variance,
    Persistence,
    EigenGrowth,
    AssumptionNorms,
    SpdeCompare,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Lln => "lln",
            ExperimentKind::Duality => "duality",
            ExperimentKind::Moments => "moments",
            ExperimentKind::Variance => "variance",
            ExperimentKind::Persistence => "persistence",
            ExperimentKind::EigenGrowth => "eigen_growth",
            ExperimentKind::AssumptionNorms => "assumption_norms",
            ExperimentKind::SpdeCompare => "spde_compare",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    #[default]
    Periodic,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeBlock {
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<usize>>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub side: Option<usize>,
    #[serde(rename = "M_grid", default, skip_serializing_if = "Option::is_none")]
    pub side_grid: Option<Vec<usize>>,
    #[serde(default)]
    pub boundary: BoundaryKind,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    #[default]
    Rademacher,
    CenteredUniform,
    TwoPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentBlock {
    #[serde(default)]
    pub dist: Distribution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub count: usize,
}

impl Default for EnvironmentBlock {
    fn default() -> Self {
        Self {
            dist: Distribution::default(),
            p: None,
            seed: 0,
            count: 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    Binary,
    Offspring,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesBlock {
    pub rho: f64,
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offspring_probs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_times: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McBlock {
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_threads: Option<usize>,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            replicas: default_replicas(),
            base_seed: 0,
            max_threads: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendName {
    #[default]
    Dense,
    CrankNicolson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    #[serde(default)]
    pub backend: BackendName,
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    #[serde(default = "default_picard_tol")]
    pub picard_tol: f64,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            backend: BackendName::default(),
            dt_factor: default_dt_factor(),
            picard_tol: default_picard_tol(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableBlock {
    #[serde(default = "one_f64")]
    pub amplitude: f64,
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Default for ObservableBlock {
    fn default() -> Self {
        Self {
            amplitude: 1.0,
            width: default_width(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub lattice: LatticeBlock,
    #[serde(default)]
    pub environment: EnvironmentBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<ParticlesBlock>,
    pub time: TimeBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub observable: ObservableBlock,
    pub output: OutputBlock,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

fn default_replicas() -> usize {
    1000
}

fn default_dt_factor() -> f64 {
    0.25
}

fn default_picard_tol() -> f64 {
    1e-10
}

fn default_width() -> f64 {
    0.5
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> HarnessResult<Self> {
        let config: Self = toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> HarnessResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(msg) => invalid(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Canonical TOML of the effective configuration (after overrides).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// SHA-256 of [`Self::to_toml`], hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Scales from `n_grid`, or the single `n`.
    pub fn scales(&self) -> Vec<usize> {
        match (&self.lattice.n_grid, self.lattice.n) {
            (Some(grid), _) => grid.clone(),
            (None, Some(n)) => vec![n],
            (None, None) => Vec::new(),
        }
    }

    pub fn scale(&self) -> HarnessResult<usize> {
        self.lattice
            .n
            .or_else(|| self.lattice.n_grid.as_ref().and_then(|g| g.first().copied()))
            .ok_or_else(|| invalid("lattice.n is required"))
    }

    pub fn side(&self) -> HarnessResult<usize> {
        self.lattice.side.ok_or_else(|| invalid("lattice.M is required"))
    }

    pub fn obs_times(&self) -> Vec<f64> {
        self.time.obs_times.clone().unwrap_or_else(|| vec![self.time.t_end])
    }

    pub fn env_seeds(&self) -> Vec<u64> {
        (0..self.environment.count as u64).map(|k| self.environment.seed + k).collect()
    }

    pub fn law(&self) -> HarnessResult<PotentialLaw> {
        let law = match (self.environment.dist, self.environment.p) {
            (Distribution::Rademacher, None) => PotentialLaw::Rademacher,
            (Distribution::CenteredUniform, None) => PotentialLaw::CenteredUniform,
            (Distribution::TwoPoint, Some(p)) => PotentialLaw::TwoPoint { p },
            (Distribution::TwoPoint, None) => return Err(invalid("environment.p is required for two_point")),
            (_, Some(_)) => return Err(invalid("environment.p applies only to two_point")),
        };
        law.validate()?;
        Ok(law)
    }

    pub fn branching(&self) -> HarnessResult<BranchingSpec> {
        let block = self
            .particles
            .as_ref()
            .ok_or_else(|| invalid("[particles] block is required"))?;
        let spec = match (block.mode, &block.offspring_probs) {
            (ModeKind::Binary, None) => BranchingSpec::binary(block.rho),
            (ModeKind::Offspring, Some(probs)) => BranchingSpec::offspring(block.rho, probs.clone())?,
            (ModeKind::Binary, Some(_)) => return Err(invalid("offspring_probs requires mode = offspring")),
            (ModeKind::Offspring, None) => return Err(invalid("mode = offspring requires offspring_probs")),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn backend(&self) -> HarnessResult<SemigroupBackend> {
        let backend = match self.solver.backend {
            BackendName::Dense => SemigroupBackend::dense(),
            BackendName::CrankNicolson if self.solver.dt_factor > 0.0 => {
                SemigroupBackend::crank_nicolson(self.solver.dt_factor)
            }
            BackendName::CrankNicolson => return Err(invalid("solver.dt_factor must be positive")),
        };
        Ok(backend)
    }

    pub fn dual_spec(&self, kappa: f64) -> HarnessResult<DualSpec> {
        let spec = DualSpec {
            picard_tol: self.solver.picard_tol,
            ..DualSpec::new(kappa)?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn test_function(&self) -> TestFunction {
        TestFunction::gaussian(self.observable.amplitude, self.observable.width)
    }

    pub fn lattice_at(&self, n: usize, side: usize) -> HarnessResult<LatticeBox> {
        Ok(LatticeBox::periodic(self.lattice.d, n, side)?)
    }

    pub fn environment_at(&self, n: usize, side: usize, seed: u64) -> HarnessResult<Environment> {
        Ok(sample_environment(&EnvironmentSpec {
            law: self.law()?,
            lattice: self.lattice_at(n, side)?,
            seed,
        })?)
    }

    /// Threads from the config, else `RSBM_THREADS`.
    pub fn threads(&self) -> Option<usize> {
        self.mc.max_threads.or_else(|| {
            std::env::var("RSBM_THREADS")
                .ok()
                .and_then(|v| v.trim().parse().ok())
                .filter(|&t: &usize| t > 0)
        })
    }

    /// Checks every block the chosen experiment uses, building the lattices
    /// and module parameter sets without running anything. Module errors are
    /// reported as configuration errors.
    pub fn validate(&self) -> HarnessResult<()> {
        self.check().map_err(|e| match e {
            HarnessError::Core(inner) => invalid(inner.to_string()),
            other => other,
        })
    }

    fn check(&self) -> HarnessResult<()> {
        use ExperimentKind::*;
        let kind = self.experiment;
        let d = self.lattice.d;
        if !(1..=2).contains(&d) {
            return Err(invalid(format!("lattice.d = {d} must be 1 or 2")));
        }
        if self.lattice.n.is_some() && self.lattice.n_grid.is_some() {
            return Err(invalid("give lattice.n or lattice.n_grid, not both"));
        }
        if self.lattice.boundary == BoundaryKind::Dirichlet && !matches!(kind, EigenGrowth | Persistence) {
            return Err(invalid(format!(
                "boundary = dirichlet is not supported by {}; environments live on the torus",
                kind.name()
            )));
        }
        if !(self.time.t_end > 0.0) || !self.time.t_end.is_finite() {
            return Err(invalid("time.t_end must be positive"));
        }
        let obs = self.obs_times();
        if obs.is_empty()
            || obs.iter().any(|t| !(*t >= 0.0) || *t > self.time.t_end)
            || obs.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(invalid("time.obs_times must be increasing within [0, t_end]"));
        }
        if self.environment.count == 0 {
            return Err(invalid("environment.count must be >= 1"));
        }
        if self.mc.replicas < 2 {
            return Err(invalid("mc.replicas must be >= 2"));
        }
        if self.mc.max_threads == Some(0) {
            return Err(invalid("mc.max_threads must be >= 1"));
        }
        if !(self.observable.width > 0.0) {
            return Err(invalid("observable.width must be positive"));
        }
        self.law()?;
        self.backend()?;
        self.dual_spec(0.0)?;
        let scales = self.scales();
        if scales.is_empty() {
            return Err(invalid("lattice.n or lattice.n_grid is required"));
        }
        let needs_grid = matches!(kind, Lln | Duality);
        if needs_grid && (scales.len() < 2 || scales.windows(2).any(|w| w[1] <= w[0])) {
            return Err(invalid(format!("{} needs an increasing n_grid of length >= 2", kind.name())));
        }
        if matches!(kind, Lln | Moments | Variance | Persistence | SpdeCompare) {
            self.branching()?;
        }
        match kind {
            EigenGrowth => {
                let sides = self
                    .lattice
                    .side_grid
                    .as_ref()
                    .ok_or_else(|| invalid("eigen_growth needs lattice.M_grid"))?;
                if sides.is_empty() || sides.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("lattice.M_grid must be increasing"));
                }
                self.lattice_at(scales[0], *sides.last().expect("non-empty"))?;
            }
            _ => {
                let side = self.side()?;
                for &n in &scales {
                    self.lattice_at(n, side)?;
                }
            }
        }
        if kind == SpdeCompare {
            if d != 1 {
                return Err(invalid("spde_compare runs in d = 1 only"));
            }
            if !(self.solver.dt_factor > 0.0 && self.solver.dt_factor <= 0.25) {
                return Err(invalid("spde_compare needs 0 < solver.dt_factor <= 0.25 (dt = dt_factor dx^2)"));
            }
        }
        if kind == AssumptionNorms && d != 2 {
            return Err(invalid("assumption_norms probes the d = 2 enhancement; set lattice.d = 2"));
        }
        if kind == Persistence && obs[0] != 0.0 {
            return Err(invalid("persistence needs obs_times starting at 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "lln"
[lattice]
d = 1
n_grid = [4, 8]
M = 4
[particles]
rho = 1.5
[time]
t_end = 0.5
[output]
dir = "out"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.scales(), vec![4, 8]);
        assert_eq!(c.mc.replicas, 1000);
        assert_eq!(c.obs_times(), vec![0.5]);
        assert_eq!(c.solver.backend, BackendName::Dense);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("M = 4", "M = 4\nsize = 3");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(matches!(err, HarnessError::Config(ref m) if m.contains("size")), "{err}");
        assert!(ExperimentConfig::from_toml(&format!("{MINIMAL}\n[extra]\nx = 1\n")).is_err());
    }

    #[test]
    fn module_validation_applies() {
        for bad in [
            MINIMAL.replace("rho = 1.5", "rho = 1.5\nmode = \"offspring\"\noffspring_probs = [0.5, 0.5]"),
            MINIMAL.replace("n_grid = [4, 8]", "n_grid = [8, 4]"),
            MINIMAL.replace("M = 4", "M = 0"),
            MINIMAL.replace("t_end = 0.5", "t_end = 0.5\nobs_times = [0.25, 1.0]"),
            MINIMAL.replace("d = 1", "d = 3"),
        ] {
            assert!(matches!(ExperimentConfig::from_toml(&bad), Err(HarnessError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_effective_values() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.mc.base_seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(ExperimentConfig::from_toml(&a.to_toml()).unwrap(), a);
    }
}

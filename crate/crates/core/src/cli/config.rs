//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapt::{AfemConfig, Marking};
use crate::convnet::VerifyConfig;
use crate::error::{Error, Result};
use crate::mesh::GridHierarchy;
use crate::problems::{Disk, InclusionProblem};
use crate::solver::{OmegaRule, SolveOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub base: f64,
    pub disks: Vec<Disk>,
    pub load: f64,
    /// Fixed parameter vector for `run`; drawn from the seeded stream when absent.
    pub parameters: Option<Vec<f64>>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        let p = InclusionProblem::cookie();
        Self { base: p.base, disks: p.disks, load: p.load, parameters: None }
    }
}

impl ProblemConfig {
    pub fn problem(&self) -> InclusionProblem {
        InclusionProblem { base: self.base, disks: self.disks.clone(), load: self.load }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HierarchyConfig {
    pub coarse_nodes_per_side: usize,
    pub levels: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self { coarse_nodes_per_side: 5, levels: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_sweeps: usize,
    pub omega: OmegaRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolveOptions::default();
        Self { tol: s.tol, max_sweeps: s.max_sweeps, omega: OmegaRule::Gershgorin }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AfemSection {
    pub iterations: usize,
    /// Leading iterations that refine uniformly before marking takes over.
    pub uniform_steps: usize,
    pub marking: Marking,
}

impl Default for AfemSection {
    fn default() -> Self {
        Self { iterations: 3, uniform_steps: 0, marking: Marking::Doerfler { theta: 0.1 } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub seed: u64,
    pub count: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { seed: 0, count: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    /// Uniform refinements of the finest level used for the overkill solve.
    pub extra_levels: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { extra_levels: 2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub hierarchy: HierarchyConfig,
    pub solver: SolverConfig,
    pub afem: AfemSection,
    pub sampling: SamplingConfig,
    pub reference: ReferenceConfig,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.hierarchy()?;
        let p = &self.problem;
        if !(p.base > 0.0 && p.base.is_finite()) {
            return Err(Error::Config(format!("problem.base must be positive, got {}", p.base)));
        }
        if !p.load.is_finite() {
            return Err(Error::Config("problem.load must be finite".into()));
        }
        for d in &p.disks {
            if !(d.radius > 0.0 && d.radius.is_finite()) {
                return Err(Error::Config(format!("disk radius must be positive, got {}", d.radius)));
            }
        }
        if let Some(y) = &p.parameters {
            if y.len() != p.disks.len() || y.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!("problem.parameters needs {} values in [0, 1]", p.disks.len())));
            }
        }
        if !(self.solver.tol > 0.0) || self.solver.max_sweeps == 0 {
            return Err(Error::Config("solver.tol must be positive and solver.max_sweeps nonzero".into()));
        }
        if self.afem.iterations == 0 {
            return Err(Error::Config("afem.iterations must be at least 1".into()));
        }
        match self.afem.marking {
            Marking::Doerfler { theta } if !(theta > 0.0 && theta <= 1.0) => {
                return Err(Error::Config(format!("doerfler theta must lie in (0, 1], got {theta}")))
            }
            Marking::Threshold { fraction } if !(fraction >= 0.0 && fraction.is_finite()) => {
                return Err(Error::Config(format!("threshold fraction must be non-negative, got {fraction}")))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<GridHierarchy> {
        GridHierarchy::new(self.hierarchy.coarse_nodes_per_side, self.hierarchy.levels)
            .map_err(|e| Error::Config(format!("hierarchy: {e}")))
    }

    pub fn afem_config(&self) -> AfemConfig {
        AfemConfig {
            iterations: self.afem.iterations,
            uniform_steps: self.afem.uniform_steps,
            marking: self.afem.marking,
            solve: SolveOptions { tol: self.solver.tol, max_sweeps: self.solver.max_sweeps },
            omega: self.solver.omega,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring the output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputConfig::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        format!("{:x}", Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.hierarchy.levels, 4);
        assert_eq!(c.afem.marking, Marking::Doerfler { theta: 0.1 });
        assert_eq!(c.sampling.count, 100);
        let c = RunConfig::from_toml(
            r#"
            [solver]
            omega = { fixed = 0.125 }
            [afem]
            iterations = 1
            marking = { strategy = "threshold", fraction = 0.2 }
            [problem]
            parameters = [0.5, 0.25]
            "#,
        )
        .unwrap();
        assert_eq!(c.solver.omega, OmegaRule::Fixed(0.125));
        assert_eq!(c.afem.marking, Marking::Threshold { fraction: 0.2 });
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_toml("[solver]\ntolerance = 1e-8").is_err());
        assert!(RunConfig::from_toml("bogus = 1").is_err());
        assert!(RunConfig::from_toml("[afem]\nmarking = { strategy = \"doerfler\", theta = 0.1, extra = 1 }").is_err());
        assert!(RunConfig::from_toml("[hierarchy]\ncoarse_nodes_per_side = 2").is_err());
        assert!(RunConfig::from_toml("[afem]\nmarking = { strategy = \"doerfler\", theta = 1.5 }").is_err());
        assert!(RunConfig::from_toml("[problem]\nparameters = [0.5]").is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let mut a = RunConfig::default();
        let h = a.hash();
        a.output.dir = Some("elsewhere".into());
        assert_eq!(a.hash(), h);
        a.sampling.seed = 3;
        assert_ne!(a.hash(), h);
    }
}

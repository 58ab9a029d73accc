//! Per-sample adaptive and uniform runs with reference errors.

use serde::Serialize;

use super::config::RunConfig;
use crate::adapt::{afem, solve_on, Discretization};
use crate::assembly::compute_upsilon;
use crate::error::{Error, Result};
use crate::estimator::estimate;
use crate::field::{ActiveSet, Image, MultilevelField};
use crate::mesh::GridHierarchy;
use crate::problems::{sample_parameters, SampleRng};
use crate::reference::OverkillReference;
use crate::solver::SolveOptions;

/// Discrete data of one sample.
pub struct Sample {
    pub parameters: Vec<f64>,
    pub kappa: Image,
    pub disc: Discretization,
}

impl Sample {
    pub fn new(config: &RunConfig, g: &GridHierarchy, parameters: &[f64]) -> Result<Self> {
        let problem = config.problem.problem();
        let kappa = problem.discretize_kappa(g, parameters)?;
        let disc = Discretization {
            diffusion: compute_upsilon(g, &kappa)?,
            load: problem.load_image(g),
            rhs: problem.rhs(g)?,
        };
        Ok(Self { parameters: parameters.to_vec(), kappa, disc })
    }

    pub fn reference(&self, config: &RunConfig) -> Result<OverkillReference> {
        OverkillReference::solve(
            self.disc.diffusion.hierarchy(),
            &self.kappa,
            &self.disc.load,
            config.reference.extra_levels,
        )
    }
}

/// Parameter vectors of the seeded sample stream.
pub fn sample_stream(config: &RunConfig, count: usize) -> Vec<Vec<f64>> {
    sample_parameters(&mut SampleRng::new(config.sampling.seed), count, config.problem.disks.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StudyPoint {
    pub dofs: usize,
    pub h1_rel: f64,
    pub l2_rel: f64,
    pub energy_sq: f64,
    pub eta2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleStudy {
    pub parameters: Vec<f64>,
    pub adaptive: Vec<StudyPoint>,
    pub uniform: Vec<StudyPoint>,
}

/// Adaptive iterations and uniform levels `0..L` of one sample.
pub fn study_sample(config: &RunConfig, g: &GridHierarchy, parameters: &[f64]) -> Result<SampleStudy> {
    let sample = Sample::new(config, g, parameters)?;
    let reference = sample.reference(config)?;
    let afem_config = config.afem_config();
    let out = afem(&sample.disc, &afem_config, Some(&reference), |_| Ok(()))?;
    let adaptive = out
        .history
        .iter()
        .map(|r| StudyPoint {
            dofs: r.dimension,
            h1_rel: r.h1_rel_err.expect("reference given"),
            l2_rel: r.l2_rel_err.expect("reference given"),
            energy_sq: r.energy_err_sq.expect("reference given"),
            eta2: r.eta2_total,
        })
        .collect();
    let mut uniform = Vec::with_capacity(g.levels());
    let opts = SolveOptions { tol: config.solver.tol, max_sweeps: config.solver.max_sweeps };
    for k in 0..g.levels() {
        let masks = ActiveSet::uniform_up_to(g, k)?;
        let (u, sweeps, converged) =
            solve_on(&sample.disc, &masks, &MultilevelField::zeros(&masks), config.solver.omega, opts)?;
        if !converged {
            log::warn!("uniform level {k}: solver stopped after {sweeps} sweeps without reaching tolerance");
        }
        let e = reference.errors(&u)?;
        let n = g.n(k);
        uniform.push(StudyPoint {
            dofs: (n - 2) * (n - 2),
            h1_rel: e.h1_rel,
            l2_rel: e.l2_rel,
            energy_sq: e.energy_sq,
            eta2: estimate(&u, &sample.disc.load, &sample.disc.diffusion)?.total(),
        });
    }
    Ok(SampleStudy { parameters: parameters.to_vec(), adaptive, uniform })
}

pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// `study_sample` over the first `sampling.count` parameters, in stream order.
pub fn convstudy(config: &RunConfig, workers: usize) -> Result<Vec<SampleStudy>> {
    use rayon::prelude::*;
    let g = config.hierarchy()?;
    let params = sample_stream(config, config.sampling.count);
    worker_pool(workers)?.install(|| params.par_iter().map(|y| study_sample(config, &g, y)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub family: &'static str,
    pub step: usize,
    pub samples: usize,
    pub dofs_mean: f64,
    pub h1_mean: f64,
    pub h1_min: f64,
    pub h1_max: f64,
    pub l2_mean: f64,
    pub l2_min: f64,
    pub l2_max: f64,
}

fn summary(family: &'static str, step: usize, pts: &[StudyPoint]) -> SummaryRow {
    let n = pts.len() as f64;
    let mean = |f: fn(&StudyPoint) -> f64| pts.iter().map(f).sum::<f64>() / n;
    let min = |f: fn(&StudyPoint) -> f64| pts.iter().map(f).fold(f64::INFINITY, f64::min);
    let max = |f: fn(&StudyPoint) -> f64| pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    SummaryRow {
        family,
        step,
        samples: pts.len(),
        dofs_mean: mean(|p| p.dofs as f64),
        h1_mean: mean(|p| p.h1_rel),
        h1_min: min(|p| p.h1_rel),
        h1_max: max(|p| p.h1_rel),
        l2_mean: mean(|p| p.l2_rel),
        l2_min: min(|p| p.l2_rel),
        l2_max: max(|p| p.l2_rel),
    }
}

/// Mean, min and max per refinement step, adaptive rows first.
pub fn summarize(studies: &[SampleStudy]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (family, get) in [
        ("adaptive", (|s: &SampleStudy| &s.adaptive) as fn(&SampleStudy) -> &Vec<StudyPoint>),
        ("uniform", |s: &SampleStudy| &s.uniform),
    ] {
        let steps = studies.iter().map(|s| get(s).len()).min().unwrap_or(0);
        for step in 0..steps {
            let pts: Vec<StudyPoint> = studies.iter().map(|s| get(s)[step]).collect();
            rows.push(summary(family, step, &pts));
        }
    }
    rows
}

/// DOFs a curve of `(dofs, error)` points needs to reach `error`, by log-log
/// interpolation between consecutive points. `None` outside the curve's range.
pub fn dofs_at_error(curve: &[(f64, f64)], error: f64) -> Option<f64> {
    if let Some(&(d, e)) = curve.first() {
        if error >= e {
            return (error == e).then_some(d);
        }
    }
    for w in curve.windows(2) {
        let ((d0, e0), (d1, e1)) = (w[0], w[1]);
        if error <= e0 && error >= e1 {
            if e0 == e1 {
                return Some(d0);
            }
            let t = (e0.ln() - error.ln()) / (e0.ln() - e1.ln());
            return Some((d0.ln() + t * (d1.ln() - d0.ln())).exp());
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchedPoint {
    pub h1: f64,
    pub adaptive_dofs: f64,
    pub uniform_dofs: f64,
}

/// Mean curves compared at every error level of either curve reached by both.
pub fn matched_dofs(rows: &[SummaryRow]) -> Vec<MatchedPoint> {
    let curve = |fam: &str| -> Vec<(f64, f64)> {
        rows.iter().filter(|r| r.family == fam).map(|r| (r.dofs_mean, r.h1_mean)).collect()
    };
    let (a, u) = (curve("adaptive"), curve("uniform"));
    let mut levels: Vec<f64> = a.iter().chain(&u).map(|p| p.1).collect();
    levels.sort_by(|x, y| y.total_cmp(x));
    levels.dedup();
    levels
        .into_iter()
        .filter_map(|e| {
            Some(MatchedPoint { h1: e, adaptive_dofs: dofs_at_error(&a, e)?, uniform_dofs: dofs_at_error(&u, e)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loglog_interpolation() {
        let c = [(10.0, 1.0), (1000.0, 0.01)];
        assert_eq!(dofs_at_error(&c, 1.0), Some(10.0));
        assert!((dofs_at_error(&c, 0.1).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(dofs_at_error(&c, 2.0), None);
        assert_eq!(dofs_at_error(&c, 0.001), None);
    }

    #[test]
    fn uniform_family_improves_with_level() {
        let config = RunConfig::from_toml("[hierarchy]\nlevels = 3\n[afem]\niterations = 2").unwrap();
        let g = config.hierarchy().unwrap();
        let s = study_sample(&config, &g, &[0.3, 0.9]).unwrap();
        for w in s.uniform.windows(2) {
            assert!(w[1].h1_rel < w[0].h1_rel);
            assert!(w[1].energy_sq < w[0].energy_sq);
        }
        // the first adaptive space is the coarse level
        assert_eq!(s.adaptive[0].dofs, s.uniform[0].dofs);
        assert!((s.adaptive[0].h1_rel - s.uniform[0].h1_rel).abs() < 1e-8);
    }
}

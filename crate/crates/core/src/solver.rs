//! Local multilevel smoothing (LLMG) and reference solvers.
//!
//! One LLMG sweep visits levels `L-1, ..., 0` and then `0, ..., L-1`, applying a
//! damped Richardson step on every level. Fine-level contributions `ubar` are
//! updated on the way down and coarse-level contributions `utilde` on the way
//! up, so each step only touches its own level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_a_level, apply_a_level_transpose, assemble_global, compute_ubar, compute_utilde, function_energy,
    levelwise_apply, DiffusionField, RhsField,
};
use crate::error::{Error, Result};
use crate::field::{flatten_to_finest, prolongate, restrict_weighted, ActiveSet, Image, MultilevelField};
use crate::mesh::{shift, HAT_OVERLAP_OFFSETS};
use crate::sparse;

/// Power-iteration steps used to estimate the largest eigenvalue per level.
pub const POWER_ITERATIONS: usize = 50;
/// Relative safety margin applied to the power-iteration estimate.
pub const POWER_SAFETY: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OmegaRule {
    Gershgorin,
    PowerIteration,
    Fixed(f64),
}

/// Per-level damping factors `omega^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SmootherConfig {
    pub rule: OmegaRule,
    pub omegas: Vec<f64>,
    /// False when some `omega^k lambda_max(A^k) > 1` was detected.
    pub admissible: bool,
    pub warnings: Vec<String>,
}

fn gershgorin_bound(diff: &DiffusionField, masks: &ActiveSet, k: usize) -> f64 {
    let active = masks.active(k);
    let n = active.nrows();
    let mut best = 0.0f64;
    for ((a, b), &on) in active.indexed_iter() {
        if !on {
            continue;
        }
        let row: f64 = HAT_OVERLAP_OFFSETS
            .iter()
            .enumerate()
            .filter(|(_, &p)| shift((a, b), p, n).is_some_and(|s| active[s]))
            .map(|(t, _)| diff.entry(k, (a, b), t).abs())
            .sum();
        best = best.max(row);
    }
    best
}

fn restrict_to_active(mut v: Image, masks: &ActiveSet, k: usize) -> Image {
    v.zip_mut_with(masks.active(k), |x, &on| {
        if !on {
            *x = 0.0
        }
    });
    v
}

/// Rayleigh-quotient estimate of `lambda_max` of the level matrix on the active set.
pub fn power_estimate(diff: &DiffusionField, masks: &ActiveSet, k: usize, iterations: usize) -> Result<f64> {
    let active = masks.active(k);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed + k as u64);
    let mut x = Image::from_shape_fn(active.dim(), |i| if active[i] { rng.gen_range(0.5..1.5) } else { 0.0 });
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if nx == 0.0 {
            return Ok(0.0);
        }
        x /= nx;
        let y = restrict_to_active(apply_a_level(diff, masks, k, &x)?, masks, k);
        lambda = (&x * &y).sum();
        x = y;
    }
    Ok(lambda)
}

pub fn choose_omega(diff: &DiffusionField, masks: &ActiveSet, rule: OmegaRule) -> Result<SmootherConfig> {
    let levels = masks.levels();
    let mut omegas = Vec::with_capacity(levels);
    let mut warnings = Vec::new();
    let mut admissible = true;
    for k in 0..levels {
        if masks.level_dofs(k) == 0 {
            omegas.push(1.0);
            continue;
        }
        let omega = match rule {
            OmegaRule::Gershgorin => 1.0 / gershgorin_bound(diff, masks, k),
            OmegaRule::PowerIteration => {
                let lam = power_estimate(diff, masks, k, POWER_ITERATIONS)?;
                1.0 / (lam * (1.0 + POWER_SAFETY))
            }
            OmegaRule::Fixed(w) => {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::Config(format!("damping factor must be positive, got {w}")));
                }
                let lam = power_estimate(diff, masks, k, POWER_ITERATIONS)?;
                if w * lam > 1.0 {
                    admissible = false;
                    warnings.push(format!("level {k}: omega {w} exceeds 1/lambda_max (lambda_max >= {lam:.6e})"));
                }
                w
            }
        };
        if !(omega > 0.0 && omega.is_finite()) {
            return Err(Error::NonFinite(format!("damping factor on level {k}")));
        }
        omegas.push(omega);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SmootherConfig { rule, omegas, admissible, warnings })
}

fn check_pair(u: &MultilevelField, f: &MultilevelField, diff: &DiffusionField, s: &SmootherConfig) -> Result<()> {
    if u.masks() != f.masks() {
        return Err(Error::Shape("solution and right-hand side use different active sets".into()));
    }
    if u.hierarchy() != diff.hierarchy() {
        return Err(Error::Shape("field and diffusion belong to different hierarchies".into()));
    }
    if s.omegas.len() != u.levels() {
        return Err(Error::Shape(format!("{} damping factors for {} levels", s.omegas.len(), u.levels())));
    }
    Ok(())
}

fn smooth_level(
    u: &mut MultilevelField,
    f: &MultilevelField,
    diff: &DiffusionField,
    omega: f64,
    k: usize,
    utilde: &Image,
    ubar: &Image,
) -> Result<()> {
    let masks = u.masks().clone();
    if masks.level_dofs(k) == 0 {
        return Ok(());
    }
    let au = apply_a_level(diff, &masks, k, &(u.level(k) + utilde))?;
    let active = masks.active(k);
    let fk = f.level(k);
    let uk = u.level_mut(k);
    for ((i, &on), a) in active.indexed_iter().zip(au.iter()) {
        if on {
            let r = fk[i] - (a + ubar[i]);
            uk[i] += omega * r;
            if !uk[i].is_finite() {
                return Err(Error::NonFinite(format!("smoothing on level {k}")));
            }
        }
    }
    Ok(())
}

/// One LLMG sweep.
pub fn llmg_sweep(
    u: &MultilevelField,
    f: &MultilevelField,
    diff: &DiffusionField,
    smoother: &SmootherConfig,
) -> Result<MultilevelField> {
    check_pair(u, f, diff, smoother)?;
    let levels = u.levels();
    let masks = u.masks().clone();
    let mut u = u.clone();
    let mut ut = compute_utilde(&u)?;
    let mut ub = compute_ubar(&u, diff)?;
    for k in (0..levels).rev() {
        smooth_level(&mut u, f, diff, smoother.omegas[k], k, &ut[k], &ub[k])?;
        if k > 0 {
            let z = &ub[k] + &apply_a_level_transpose(diff, &masks, k, u.level(k))?;
            ub[k - 1] = restrict_weighted(&z, masks.closure(k), masks.closure(k - 1))?;
        }
    }
    for k in 0..levels {
        smooth_level(&mut u, f, diff, smoother.omegas[k], k, &ut[k], &ub[k])?;
        if k + 1 < levels {
            let z = &ut[k] + u.level(k);
            ut[k + 1] = prolongate(&z, masks.closure(k), masks.closure(k + 1))?;
        }
    }
    Ok(u)
}

/// Successive subspace correction over the given level order, evaluating the
/// full operator before every level step.
pub fn ssc_sweep(
    order: &[usize],
    u: &MultilevelField,
    f: &MultilevelField,
    diff: &DiffusionField,
    smoother: &SmootherConfig,
) -> Result<MultilevelField> {
    check_pair(u, f, diff, smoother)?;
    let mut u = u.clone();
    for &k in order {
        u.hierarchy().check_level(k)?;
        let au = levelwise_apply(&u, diff)?;
        let active = u.masks().active(k).clone();
        let omega = smoother.omegas[k];
        let fk = f.level(k).clone();
        let uk = u.level_mut(k);
        for (i, &on) in active.indexed_iter() {
            if on {
                uk[i] += omega * (fk[i] - au[k][i]);
            }
        }
        if !uk.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("subspace correction on level {k}")));
        }
    }
    Ok(u)
}

/// Local multigrid order `L-1..0, 0..L-1` through [`ssc_sweep`].
pub fn lmg_sweep(
    u: &MultilevelField,
    f: &MultilevelField,
    diff: &DiffusionField,
    smoother: &SmootherConfig,
) -> Result<MultilevelField> {
    let levels = u.levels();
    let order: Vec<usize> = (0..levels).rev().chain(0..levels).collect();
    ssc_sweep(&order, u, f, diff, smoother)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 200 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub sweeps: usize,
    pub status: SolveStatus,
    /// `||f - A u||_2 / ||f||_2` before the first sweep and after every sweep.
    pub residual_history: Vec<f64>,
    /// `||u - u_ref||_A` when an oracle solution was supplied.
    pub energy_error_history: Vec<f64>,
    /// Ratios of consecutive energy errors.
    pub contraction: Vec<f64>,
}

fn residual_norm(u: &MultilevelField, f: &MultilevelField, diff: &DiffusionField) -> Result<f64> {
    let au = levelwise_apply(u, diff)?;
    let mut s = 0.0;
    for k in 0..u.levels() {
        for ((i, &on), a) in u.masks().active(k).indexed_iter().zip(au[k].iter()) {
            if on {
                let r = f.level(k)[i] - a;
                s += r * r;
            }
        }
    }
    Ok(s.sqrt())
}

/// `||u - v||_A`, evaluated on finest-level nodal values so that redundant
/// multilevel coefficients cannot cancel.
pub fn energy_error(u: &MultilevelField, v: &MultilevelField, diff: &DiffusionField) -> Result<f64> {
    if u.hierarchy() != v.hierarchy() {
        return Err(Error::Shape("energy error needs fields on the same hierarchy".into()));
    }
    let e = flatten_to_finest(u) - flatten_to_finest(v);
    Ok(function_energy(diff, &e)?.sqrt())
}

/// `||u||_A`.
pub fn energy_norm(u: &MultilevelField, diff: &DiffusionField) -> Result<f64> {
    Ok(function_energy(diff, &flatten_to_finest(u))?.sqrt())
}

/// Repeats LLMG sweeps until the relative residual drops below `tol`.
pub fn llmg_solve(
    u0: &MultilevelField,
    f: &MultilevelField,
    diff: &DiffusionField,
    smoother: &SmootherConfig,
    options: SolveOptions,
    oracle: Option<&MultilevelField>,
) -> Result<(MultilevelField, SolveReport)> {
    check_pair(u0, f, diff, smoother)?;
    let fnorm = f.norm();
    let mut u = u0.clone();
    let mut report = SolveReport {
        sweeps: 0,
        status: SolveStatus::NotConverged,
        residual_history: Vec::new(),
        energy_error_history: Vec::new(),
        contraction: Vec::new(),
    };
    let rel = |r: f64| if fnorm > 0.0 { r / fnorm } else { r };
    report.residual_history.push(rel(residual_norm(&u, f, diff)?));
    if let Some(o) = oracle {
        report.energy_error_history.push(energy_error(&u, o, diff)?);
    }
    if *report.residual_history.last().expect("nonempty") <= options.tol {
        report.status = SolveStatus::Converged;
        return Ok((u, report));
    }
    for s in 1..=options.max_sweeps {
        u = llmg_sweep(&u, f, diff, smoother)?;
        report.sweeps = s;
        let r = rel(residual_norm(&u, f, diff)?);
        report.residual_history.push(r);
        if let Some(o) = oracle {
            let e = energy_error(&u, o, diff)?;
            let prev = *report.energy_error_history.last().expect("nonempty");
            report.contraction.push(if prev > 0.0 { e / prev } else { 0.0 });
            report.energy_error_history.push(e);
        }
        if r <= options.tol {
            report.status = SolveStatus::Converged;
            break;
        }
    }
    Ok((u, report))
}

/// Galerkin solution on the active set by preconditioned CG on the assembled
/// multilevel system (relative residual `1e-12`).
pub fn reference_solve(diff: &DiffusionField, masks: &ActiveSet, f: &RhsField) -> Result<MultilevelField> {
    let sys = assemble_global(diff, masks)?;
    let b = sys.rhs_vector(f);
    let (x, _) = sparse::pcg(&sys.matrix, &b, 1e-12, 50 * b.len().max(100))?;
    sys.to_field(masks, &x)
}

//! Seeded equivalence suite: every convolutional construction against the
//! direct implementation it realizes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::bank::StencilBank;
use super::estimate::{conv_estimate, conv_mark_refine};
use super::llmg::{conv_llmg_sweep, ConvLlmgState};
use super::ops::{conv_apply_a, conv_apply_a_transpose, conv_prolongate, conv_restrict, conv_translate, conv_upsilon};
use crate::adapt::{mark_threshold, refine, DEFAULT_THRESHOLD_FRACTION};
use crate::assembly::{apply_a_level, apply_a_level_transpose, assemble_rhs, compute_upsilon, DiffusionField};
use crate::error::Result;
use crate::estimator::estimate;
use crate::field::{prolongate, restrict_weighted, ActiveSet, Image, Mask, MultilevelField};
use crate::mesh::GridHierarchy;
use crate::problems::{sample_parameters, InclusionProblem, SampleRng};
use crate::solver::{choose_omega, llmg_sweep, OmegaRule};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyRow {
    pub name: String,
    pub cases: usize,
    /// Largest deviation observed (relative unless stated by the row).
    pub max_dev: f64,
    pub tol: f64,
}

impl VerifyRow {
    pub fn passed(&self) -> bool {
        self.max_dev <= self.tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub coarse_n: usize,
    pub levels: usize,
    /// Random cases per level for the operator rows.
    pub operator_cases: usize,
    pub sweep_cases: usize,
    pub sweeps: usize,
    pub estimator_cases: usize,
    pub mask_cases: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            coarse_n: 5,
            levels: 3,
            operator_cases: 50,
            sweep_cases: 10,
            sweeps: 10,
            estimator_cases: 20,
            mask_cases: 20,
        }
    }
}

/// Random interior masks with density `p` on every level.
pub fn random_active_set(g: &GridHierarchy, rng: &mut impl Rng, p: f64) -> Result<ActiveSet> {
    let masks = (0..g.levels())
        .map(|k| {
            let n = g.n(k);
            Mask::from_shape_fn((n, n), |i| g.is_interior(k, i) && rng.gen_bool(p))
        })
        .collect();
    ActiveSet::from_active(g, masks)
}

/// A random positive nodal coefficient within the cookie bounds.
pub fn random_kappa(g: &GridHierarchy, rng: &mut impl Rng) -> Image {
    let n = g.n(g.finest());
    Image::from_shape_fn((n, n), |_| rng.gen_range(0.1..2.1))
}

pub fn random_image(n: usize, rng: &mut impl Rng) -> Image {
    Image::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0))
}

pub fn random_field(masks: &ActiveSet, rng: &mut impl Rng) -> Result<MultilevelField> {
    let g = masks.hierarchy();
    let imgs = (0..g.levels()).map(|k| random_image(g.n(k), rng)).collect();
    MultilevelField::from_images_masked(masks, imgs)
}

fn max_abs(img: &Image) -> f64 {
    img.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn rel_dev(a: &Image, b: &Image) -> f64 {
    let d = max_abs(&(a - b));
    let s = max_abs(b);
    if s == 0.0 {
        d
    } else {
        d / s
    }
}

fn rng_for(seed: u64, row: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(row);
    r
}

/// Rows for `Abar^k`, its transpose, prolongation and restriction.
pub fn verify_operators(g: &GridHierarchy, seed: u64, cases: usize) -> Result<Vec<VerifyRow>> {
    let bank = StencilBank::build(g);
    let mut rng = rng_for(seed, 1);
    let mut dev = [0.0f64; 4];
    let mut counts = [0usize; 4];
    for k in 0..g.levels() {
        for _ in 0..cases {
            let p = rng.gen_range(0.05..0.95);
            let masks = random_active_set(g, &mut rng, p)?;
            let kappa = random_kappa(g, &mut rng);
            let diff = compute_upsilon(g, &kappa)?;
            let (_, ups) = conv_upsilon(&bank, g, &kappa)?;
            let v = random_image(g.n(k), &mut rng);
            let (active, closure) = (masks.active(k), masks.closure(k));
            let stack = conv_translate(&bank, &v, closure, active)?;
            let a = conv_apply_a(&bank, k, &stack, &ups[k], active)?;
            dev[0] = dev[0].max(rel_dev(&a, &apply_a_level(&diff, &masks, k, &v)?));
            let at = conv_apply_a_transpose(&bank, k, &v, &ups[k], active, closure)?;
            dev[1] = dev[1].max(rel_dev(&at, &apply_a_level_transpose(&diff, &masks, k, &v)?));
            counts[0] += 1;
            counts[1] += 1;
            if k + 1 < g.levels() {
                let fc = masks.closure(k + 1);
                let p = conv_prolongate(&bank, &v, closure, fc)?;
                dev[2] = dev[2].max(rel_dev(&p, &prolongate(&v, closure, fc)?));
                let w = random_image(g.n(k + 1), &mut rng);
                let r = conv_restrict(&bank, &w, fc, closure)?;
                dev[3] = dev[3].max(rel_dev(&r, &restrict_weighted(&w, fc, closure)?));
                counts[2] += 1;
                counts[3] += 1;
            }
        }
    }
    let names = ["apply_a", "apply_a_transpose", "prolongate", "restrict"];
    Ok(names
        .iter()
        .enumerate()
        .map(|(i, n)| VerifyRow { name: n.to_string(), cases: counts[i], max_dev: dev[i], tol: 1e-10 })
        .collect())
}

/// Max absolute deviation per sweep between the conv sweep and the solver.
pub fn verify_llmg(g: &GridHierarchy, seed: u64, cases: usize, sweeps: usize) -> Result<VerifyRow> {
    let bank = StencilBank::build(g);
    let mut rng = rng_for(seed, 2);
    let mut dev = 0.0f64;
    for _ in 0..cases {
        let p = rng.gen_range(0.2..0.9);
        let masks = random_active_set(g, &mut rng, p)?;
        let kappa = random_kappa(g, &mut rng);
        let diff = compute_upsilon(g, &kappa)?;
        let f = random_field(&masks, &mut rng)?;
        let smoother = choose_omega(&diff, &masks, OmegaRule::Gershgorin)?;
        let ups: Vec<_> = (0..g.levels()).map(|k| diff.upsilon(k).clone()).collect();
        let mut u = random_field(&masks, &mut rng)?;
        let mut state = ConvLlmgState::new(&bank, &u, &f, &ups, &smoother.omegas)?;
        for _ in 0..sweeps {
            u = llmg_sweep(&u, &f, &diff, &smoother)?;
            state = conv_llmg_sweep(&bank, &state)?;
            let c = state.solution()?;
            for k in 0..g.levels() {
                dev = dev.max(max_abs(&(c.level(k) - u.level(k))));
            }
        }
    }
    Ok(VerifyRow { name: "llmg_sweep".into(), cases, max_dev: dev, tol: 1e-11 })
}

fn cookie_diffusion(g: &GridHierarchy, y: &[f64]) -> Result<(DiffusionField, Image)> {
    let p = InclusionProblem::cookie();
    let kappa = p.discretize_kappa(g, y)?;
    Ok((compute_upsilon(g, &kappa)?, kappa))
}

/// Relative deviation of the conv estimator from the direct estimator.
pub fn verify_estimator(g: &GridHierarchy, seed: u64, cases: usize) -> Result<VerifyRow> {
    let bank = StencilBank::build(g);
    let mut rng = rng_for(seed, 3);
    let mut dev = 0.0f64;
    for _ in 0..cases {
        let p = rng.gen_range(0.1..0.9);
        let masks = random_active_set(g, &mut rng, p)?;
        let kappa = random_kappa(g, &mut rng);
        let diff = compute_upsilon(g, &kappa)?;
        let f = random_image(g.n(g.finest()), &mut rng);
        let u = random_field(&masks, &mut rng)?;
        let a = conv_estimate(&bank, &u, &kappa, &f)?;
        let b = estimate(&u, &f, &diff)?;
        let scale = b.max();
        for (x, y) in a.eta2.iter().zip(&b.eta2) {
            let d = (x - y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            dev = dev.max(if scale > 0.0 { d / scale } else { d });
        }
    }
    Ok(VerifyRow { name: "estimator".into(), cases, max_dev: dev, tol: 1e-10 })
}

/// Number of mark or active-mask entries that differ between the conv
/// construction and threshold marking plus refinement, on cookie samples.
pub fn verify_mark_refine(g: &GridHierarchy, seed: u64, cases: usize) -> Result<VerifyRow> {
    let bank = StencilBank::build(g);
    let problem = InclusionProblem::cookie();
    let mut rng = rng_for(seed, 4);
    let ys = sample_parameters(&mut SampleRng::new(seed), cases, problem.parameter_dim());
    let rhs = assemble_rhs(g, &problem.load_image(g))?;
    let mut mismatches = 0usize;
    for y in &ys {
        let (diff, _) = cookie_diffusion(g, y)?;
        let p = rng.gen_range(0.1..0.6);
        let masks = random_active_set(g, &mut rng, p)?;
        let f = rhs.on(&masks)?;
        let smoother = choose_omega(&diff, &masks, OmegaRule::Gershgorin)?;
        let mut u = MultilevelField::zeros(&masks);
        for _ in 0..5 {
            u = llmg_sweep(&u, &f, &diff, &smoother)?;
        }
        let est = estimate(&u, &problem.load_image(g), &diff)?;
        let delta = vec![DEFAULT_THRESHOLD_FRACTION * est.max(); g.levels()];
        let marks = mark_threshold(&est, &masks, &delta)?;
        let (refined, report) = refine(&masks, &marks)?;
        let conv = conv_mark_refine(&bank, &est.eta2, &delta, &masks)?;
        mismatches += conv.saturated.abs_diff(report.saturated);
        for (a, b) in conv.marks.iter().zip(&marks.marks) {
            mismatches += a.iter().zip(b.iter()).filter(|(x, y)| x != y).count();
        }
        for k in 0..g.levels() {
            mismatches += conv.masks.active(k).iter().zip(refined.active(k)).filter(|(x, y)| x != y).count();
        }
    }
    Ok(VerifyRow { name: "mark_refine (mismatched entries)".into(), cases, max_dev: mismatches as f64, tol: 0.0 })
}

pub fn run_suite(config: &VerifyConfig) -> Result<Vec<VerifyRow>> {
    let g = GridHierarchy::new(config.coarse_n, config.levels)?;
    let mut rows = verify_operators(&g, config.seed, config.operator_cases)?;
    rows.push(verify_llmg(&g, config.seed, config.sweep_cases, config.sweeps)?);
    rows.push(verify_estimator(&g, config.seed, config.estimator_cases)?);
    rows.push(verify_mark_refine(&g, config.seed, config.mask_cases)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_and_is_reproducible() {
        let config = VerifyConfig {
            operator_cases: 4,
            sweep_cases: 2,
            sweeps: 3,
            estimator_cases: 3,
            mask_cases: 3,
            ..Default::default()
        };
        let rows = run_suite(&config).unwrap();
        for r in &rows {
            assert!(r.passed(), "{r:?}");
        }
        assert_eq!(rows, run_suite(&config).unwrap());
    }

    #[test]
    fn empty_masks_pass_trivially() {
        let g = GridHierarchy::new(3, 2).unwrap();
        let bank = StencilBank::build(&g);
        let masks = random_active_set(&g, &mut ChaCha8Rng::seed_from_u64(0), 0.0).unwrap();
        assert_eq!(masks.dofs(), 0);
        let kappa = Image::from_elem((5, 5), 1.0);
        let (_, ups) = conv_upsilon(&bank, &g, &kappa).unwrap();
        let v = Image::from_elem((3, 3), 1.0);
        let stack = conv_translate(&bank, &v, masks.closure(0), masks.active(0)).unwrap();
        let a = conv_apply_a(&bank, 0, &stack, &ups[0], masks.active(0)).unwrap();
        assert!(a.iter().all(|&x| x == 0.0));
    }
}

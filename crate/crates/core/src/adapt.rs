//! Marking, refinement and the adaptive solve-estimate-mark-refine loop.

use serde::{Deserialize, Serialize};

use crate::assembly::{levelwise_apply, DiffusionField, RhsField};
use crate::error::{Error, Result};
use crate::estimator::{estimate, ErrorEstimate};
use crate::field::{ActiveSet, Image, MultilevelField, TriMask};
use crate::mesh::{GridHierarchy, Half, TriangleId};
use crate::reference::OverkillReference;
use crate::solver::{choose_omega, llmg_solve, OmegaRule, SolveOptions, SolveStatus};

/// Default relative threshold: mark where `eta^2 > 0.1 max eta^2`.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct MarkSet {
    pub marks: Vec<TriMask>,
}

impl MarkSet {
    pub fn empty(g: &GridHierarchy) -> Self {
        Self { marks: (0..g.levels()).map(|k| TriMask::from_elem((2, g.n(k), g.n(k)), false)).collect() }
    }

    pub fn count(&self) -> usize {
        self.marks.iter().map(|m| m.iter().filter(|&&b| b).count()).sum()
    }

    pub fn set(&mut self, id: TriangleId) {
        self.marks[id.level][[id.half.index(), id.node.0, id.node.1]] = true;
    }

    pub fn contains(&self, id: TriangleId) -> bool {
        self.marks[id.level][[id.half.index(), id.node.0, id.node.1]]
    }
}

/// Marks every leaf with `eta^2 > threshold[level]`.
pub fn mark_threshold(est: &ErrorEstimate, masks: &ActiveSet, thresholds: &[f64]) -> Result<MarkSet> {
    let g = masks.hierarchy();
    if thresholds.len() != g.levels() || est.eta2.len() != g.levels() {
        return Err(Error::Shape(format!("expected one threshold per level ({})", g.levels())));
    }
    let mut out = MarkSet::empty(g);
    for (id, e) in est.entries(masks) {
        if e > thresholds[id.level] {
            out.set(id);
        }
    }
    Ok(out)
}

/// The same threshold `fraction * max eta^2` on every level.
pub fn default_thresholds(est: &ErrorEstimate, fraction: f64) -> Vec<f64> {
    vec![fraction * est.max(); est.eta2.len()]
}

/// Smallest set of leaves, taken by decreasing `eta^2` (ties by level, node,
/// half), whose indicators sum to at least `theta` times the total.
pub fn mark_doerfler(est: &ErrorEstimate, masks: &ActiveSet, theta: f64) -> Result<MarkSet> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Config(format!("bulk parameter must lie in (0, 1], got {theta}")));
    }
    let mut entries = est.entries(masks);
    let total: f64 = entries.iter().map(|(_, e)| e).sum();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = MarkSet::empty(masks.hierarchy());
    let goal = theta * total;
    let mut acc = 0.0;
    for (id, e) in entries {
        if acc >= goal {
            break;
        }
        out.set(id);
        acc += e;
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefineReport {
    pub added: usize,
    /// Marks on the finest level that could not be refined.
    pub saturated: usize,
}

/// Fine-level node offsets (relative to `2 * owner`) of the six lattice points
/// of a triangle: its vertices and edge midpoints.
pub fn refinement_footprint(half: Half) -> [(usize, usize); 6] {
    let v = half.vertices().map(|(a, b)| (a as usize, b as usize));
    [
        (2 * v[0].0, 2 * v[0].1),
        (2 * v[1].0, 2 * v[1].1),
        (2 * v[2].0, 2 * v[2].1),
        (v[0].0 + v[1].0, v[0].1 + v[1].1),
        (v[1].0 + v[2].0, v[1].1 + v[2].1),
        (v[2].0 + v[0].0, v[2].1 + v[0].1),
    ]
}

/// Activates every interior hat of the next level whose support overlaps a
/// marked triangle with positive area.
pub fn refine(masks: &ActiveSet, marks: &MarkSet) -> Result<(ActiveSet, RefineReport)> {
    let g = masks.hierarchy();
    if marks.marks.len() != g.levels() {
        return Err(Error::Shape("mark set does not match the hierarchy".into()));
    }
    let mut active = masks.active_masks();
    let mut report = RefineReport::default();
    for (k, m) in marks.marks.iter().enumerate() {
        for ((q, a, b), &on) in m.indexed_iter() {
            if !on {
                continue;
            }
            if !masks.leaves(k)[[q, a, b]] {
                return Err(Error::OutOfRange(format!("marked triangle ({k}, ({a}, {b}), {q}) is not a leaf")));
            }
            if k + 1 >= g.levels() {
                report.saturated += 1;
                continue;
            }
            for (da, db) in refinement_footprint(Half::ALL[q]) {
                let node = (2 * a + da, 2 * b + db);
                if g.is_interior(k + 1, node) && !active[k + 1][node] {
                    active[k + 1][node] = true;
                    report.added += 1;
                }
            }
        }
    }
    Ok((ActiveSet::from_active(g, active)?, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Marking {
    /// Bulk criterion with parameter `theta`.
    Doerfler { theta: f64 },
    /// `eta^2 > fraction * max eta^2`.
    Threshold { fraction: f64 },
}

impl Default for Marking {
    fn default() -> Self {
        Marking::Doerfler { theta: 0.1 }
    }
}

/// Every leaf of the composite partition.
pub fn mark_all(masks: &ActiveSet) -> MarkSet {
    MarkSet { marks: (0..masks.levels()).map(|k| masks.leaves(k).clone()).collect() }
}

pub fn mark(est: &ErrorEstimate, masks: &ActiveSet, marking: Marking) -> Result<MarkSet> {
    match marking {
        Marking::Doerfler { theta } => mark_doerfler(est, masks, theta),
        Marking::Threshold { fraction } => mark_threshold(est, masks, &default_thresholds(est, fraction)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AfemConfig {
    pub iterations: usize,
    /// Leading iterations that refine every leaf instead of marking.
    pub uniform_steps: usize,
    pub marking: Marking,
    pub solve: SolveOptions,
    pub omega: OmegaRule,
}

impl Default for AfemConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            uniform_steps: 0,
            marking: Marking::default(),
            solve: SolveOptions::default(),
            omega: OmegaRule::Gershgorin,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Active multilevel coefficients.
    pub dofs: usize,
    /// Dimension of the spanned space.
    pub dimension: usize,
    pub eta2_total: f64,
    pub h1_rel_err: Option<f64>,
    pub l2_rel_err: Option<f64>,
    pub energy_err_sq: Option<f64>,
    pub marked: usize,
    pub sweeps: usize,
    pub converged: bool,
    pub saturated: usize,
}

/// State after the solve and estimate of one adaptive iteration.
pub struct IterationState<'a> {
    pub record: &'a IterationRecord,
    pub u: &'a MultilevelField,
    pub estimate: &'a ErrorEstimate,
    pub marks: &'a MarkSet,
}

#[derive(Clone, Debug)]
pub struct AfemOutcome {
    pub u: MultilevelField,
    pub estimate: ErrorEstimate,
    pub history: Vec<IterationRecord>,
    /// Active set after the final refinement.
    pub next_masks: ActiveSet,
}

/// Problem data shared by all iterations: the discrete coefficient and load.
pub struct Discretization {
    pub diffusion: DiffusionField,
    pub load: Image,
    pub rhs: RhsField,
}

/// Solves on `masks` starting from `u0` (carried over onto `masks`).
pub fn solve_on(
    disc: &Discretization,
    masks: &ActiveSet,
    u0: &MultilevelField,
    omega: OmegaRule,
    options: SolveOptions,
) -> Result<(MultilevelField, usize, bool)> {
    let u = u0.with_masks(masks)?;
    let f = disc.rhs.on(masks)?;
    let au = levelwise_apply(&u, &disc.diffusion)?;
    let r = MultilevelField::from_images_masked(masks, (0..masks.levels()).map(|k| f.level(k) - &au[k]).collect())?;
    let fnorm = f.norm();
    let rnorm = r.norm();
    let smoother = choose_omega(&disc.diffusion, masks, omega)?;
    // solve A v = f - A u for the correction, stopping relative to ||f||
    let tol = if rnorm > 0.0 { options.tol * fnorm / rnorm } else { options.tol };
    let (v, report) = llmg_solve(
        &MultilevelField::zeros(masks),
        &r,
        &disc.diffusion,
        &smoother,
        SolveOptions { tol, max_sweeps: options.max_sweeps },
        None,
    )?;
    let mut out = u;
    out.axpy(1.0, &v)?;
    Ok((out, report.sweeps, report.status == SolveStatus::Converged))
}

/// `iterations` rounds of solve, estimate, mark and refine, starting from the
/// full coarse level. The first `uniform_steps` rounds refine uniformly.
pub fn afem(
    disc: &Discretization,
    config: &AfemConfig,
    reference: Option<&OverkillReference>,
    mut observer: impl FnMut(&IterationState) -> Result<()>,
) -> Result<AfemOutcome> {
    if config.iterations == 0 {
        return Err(Error::Config("at least one adaptive iteration is required".into()));
    }
    let g = disc.diffusion.hierarchy();
    let mut masks = ActiveSet::coarse_only(g)?;
    let mut u = MultilevelField::zeros(&masks);
    let mut history = Vec::new();
    let mut last = None;
    for it in 1..=config.iterations {
        let (sol, sweeps, converged) = solve_on(disc, &masks, &u, config.omega, config.solve)?;
        if !converged {
            log::warn!("iteration {it}: solver stopped after {sweeps} sweeps without reaching tolerance");
        }
        u = sol;
        let est = estimate(&u, &disc.load, &disc.diffusion)?;
        let marks = if it <= config.uniform_steps { mark_all(&masks) } else { mark(&est, &masks, config.marking)? };
        let (next, rep) = refine(&masks, &marks)?;
        if rep.saturated > 0 {
            log::warn!("iteration {it}: {} marked triangles already lie on the finest level", rep.saturated);
        }
        let errs = reference.map(|r| r.errors(&u)).transpose()?;
        let record = IterationRecord {
            iteration: it,
            dofs: masks.dofs(),
            dimension: masks.dimension(),
            eta2_total: est.total(),
            h1_rel_err: errs.map(|e| e.h1_rel),
            l2_rel_err: errs.map(|e| e.l2_rel),
            energy_err_sq: errs.map(|e| e.energy_sq),
            marked: marks.count(),
            sweeps,
            converged,
            saturated: rep.saturated,
        };
        observer(&IterationState { record: &record, u: &u, estimate: &est, marks: &marks })?;
        history.push(record);
        masks = next;
        last = Some(est);
    }
    Ok(AfemOutcome { u, estimate: last.expect("at least one iteration"), history, next_masks: masks })
}

//! Weight counts of the unrolled convolutional pipeline.

use serde::Serialize;

use super::bank::StencilBank;
use super::kernel::ConvKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    Upsilon,
    SolverInput,
    Sweep,
    Estimator,
    MarkRefine,
}

/// Every kernel application of one adaptive step with `sweeps` solver sweeps,
/// in execution order. Each application is its own layer, so shared weights
/// are counted once per use.
pub fn pipeline_plan(bank: &StencilBank, sweeps: usize) -> Vec<(Stage, &ConvKernel)> {
    let levels = bank.levels();
    let mut plan = vec![(Stage::Upsilon, &bank.triangle_integral)];
    plan.extend((1..levels).map(|_| (Stage::Upsilon, &bank.children)));
    plan.extend((0..levels).map(|_| (Stage::Upsilon, &bank.upsilon_shift)));

    for k in 0..levels {
        if k > 0 {
            plan.push((Stage::SolverInput, &bank.prolongation));
        }
        plan.push((Stage::SolverInput, &bank.translation));
        plan.push((Stage::SolverInput, &bank.translation));
    }

    for _ in 0..sweeps {
        let smooth = |plan: &mut Vec<_>, k: usize| {
            plan.extend(bank.operator[k].iter().map(|kern| (Stage::Sweep, kern)));
            plan.push((Stage::Sweep, &bank.translation));
        };
        for k in (0..levels).rev() {
            smooth(&mut plan, k);
            if k > 0 {
                plan.push((Stage::Sweep, &bank.operator_transpose[k]));
                plan.push((Stage::Sweep, &bank.translation));
                plan.push((Stage::Sweep, &bank.restriction));
                plan.push((Stage::Sweep, &bank.translation));
            }
        }
        for k in 0..levels {
            smooth(&mut plan, k);
            if k + 1 < levels {
                plan.push((Stage::Sweep, &bank.translation));
                plan.push((Stage::Sweep, &bank.prolongation));
                plan.push((Stage::Sweep, &bank.translation));
            }
        }
    }

    let e = &bank.estimator;
    plan.extend((1..levels).map(|_| (Stage::Estimator, &bank.prolongation)));
    for kern in [
        &e.gradient,
        &e.gradient,
        &e.vertex_sum,
        &e.vertex_sum,
        &e.residual,
        &e.jump,
        &e.neighbour,
        &e.edge_ends,
        &e.jump_sum,
    ] {
        plan.push((Stage::Estimator, kern));
    }
    for _ in 1..levels {
        plan.push((Stage::Estimator, &bank.residual_aggregation));
        plan.push((Stage::Estimator, &bank.jump_aggregation));
    }
    plan.extend((1..levels).map(|_| (Stage::MarkRefine, &bank.refinement)));
    plan
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParameterCount {
    pub upsilon: usize,
    pub solver_input: usize,
    pub sweeps: usize,
    pub estimator: usize,
    pub mark_refine: usize,
    pub total: usize,
}

pub fn parameter_count(bank: &StencilBank, sweeps: usize) -> ParameterCount {
    let mut c = ParameterCount::default();
    for (stage, kern) in pipeline_plan(bank, sweeps) {
        let p = kern.parameter_count();
        match stage {
            Stage::Upsilon => c.upsilon += p,
            Stage::SolverInput => c.solver_input += p,
            Stage::Sweep => c.sweeps += p,
            Stage::Estimator => c.estimator += p,
            Stage::MarkRefine => c.mark_refine += p,
        }
        c.total += p;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::GridHierarchy;

    fn total(levels: usize, sweeps: usize) -> usize {
        parameter_count(&StencilBank::build(&GridHierarchy::new(5, levels).unwrap()), sweeps).total
    }

    #[test]
    fn counts_are_affine_in_levels_and_sweeps() {
        for m in [5, 10] {
            assert_eq!(total(3, m) - total(2, m), total(4, m) - total(3, m));
        }
        for l in [2, 3, 4] {
            assert_eq!(total(l, 10) - total(l, 5), total(l, 5) - total(l, 0));
        }
    }

    #[test]
    fn single_sweep_budget() {
        // per level: two smoothings of 42 + 63, plus the transfer blocks
        let bank = StencilBank::build(&GridHierarchy::new(5, 1).unwrap());
        assert_eq!(parameter_count(&bank, 1).sweeps, 2 * (42 + 63));
    }
}

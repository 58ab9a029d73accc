//! Overkill reference solutions and error norms.
//!
//! The reference solves the same discrete data (`kappa_h` and `f_h` as
//! finest-level piecewise linear functions) on a lattice refined `extra` more
//! times, so the only difference to a multilevel solution is discretization.

use crate::assembly::{lattice_mass, lattice_stiffness};
use crate::error::{Error, Result};
use crate::field::{flatten_to_finest, prolongate_uniform, Image, MultilevelField};
use crate::mesh::GridHierarchy;
use crate::sparse::{self, SparseMatrix};

#[derive(Clone, Debug)]
pub struct OverkillReference {
    hierarchy: GridHierarchy,
    extra: usize,
    n: usize,
    solution: Vec<f64>,
    stiffness: SparseMatrix,
    laplace: SparseMatrix,
    mass: SparseMatrix,
    h1_norm: f64,
    l2_norm: f64,
    energy_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldErrors {
    pub h1_rel: f64,
    pub l2_rel: f64,
    /// `||u_ref - u||_A^2`.
    pub energy_sq: f64,
}

fn refine_image(img: &Image, times: usize) -> Image {
    let mut out = img.clone();
    for _ in 0..times {
        out = prolongate_uniform(&out);
    }
    out
}

/// Dirichlet restriction: the submatrix on interior lattice nodes.
fn interior_block(a: &SparseMatrix, n: usize) -> (SparseMatrix, Vec<usize>) {
    let interior = |i: usize| {
        let (x, y) = (i / n, i % n);
        x > 0 && y > 0 && x < n - 1 && y < n - 1
    };
    let mut map = vec![usize::MAX; n * n];
    let mut nodes = Vec::new();
    for i in 0..n * n {
        if interior(i) {
            map[i] = nodes.len();
            nodes.push(i);
        }
    }
    let mut entries = Vec::new();
    for (r, row) in a.outer_iterator().enumerate() {
        if map[r] == usize::MAX {
            continue;
        }
        for (c, v) in row.iter() {
            if map[c] != usize::MAX {
                entries.push((map[r], map[c], *v));
            }
        }
    }
    (sparse::from_triplets(nodes.len(), nodes.len(), &entries), nodes)
}

fn h1_sq(lap: &SparseMatrix, mass: &SparseMatrix, e: &[f64]) -> f64 {
    sparse::quadratic_form(lap, e) + sparse::quadratic_form(mass, e)
}

impl OverkillReference {
    pub fn solve(g: &GridHierarchy, kappa_fine: &Image, f_fine: &Image, extra: usize) -> Result<Self> {
        let nf = g.n(g.finest());
        if kappa_fine.dim() != (nf, nf) || f_fine.dim() != (nf, nf) {
            return Err(Error::Shape("reference data must live on the finest level".into()));
        }
        let kappa = refine_image(kappa_fine, extra);
        let f = refine_image(f_fine, extra);
        let n = kappa.nrows();
        let stiffness = lattice_stiffness(n, &kappa);
        let laplace = lattice_stiffness(n, &Image::from_elem((n, n), 1.0));
        let mass = lattice_mass(n);
        let load = sparse::matvec(&mass, f.as_slice().expect("standard layout"));
        let (block, nodes) = interior_block(&stiffness, n);
        let b: Vec<f64> = nodes.iter().map(|&i| load[i]).collect();
        let (x, _) = sparse::pcg(&block, &b, 1e-12, 20 * nodes.len())?;
        let mut solution = vec![0.0; n * n];
        for (&i, v) in nodes.iter().zip(x) {
            solution[i] = v;
        }
        let h1_norm = h1_sq(&laplace, &mass, &solution).sqrt();
        let l2_norm = sparse::quadratic_form(&mass, &solution).sqrt();
        let energy_norm = sparse::quadratic_form(&stiffness, &solution).sqrt();
        Ok(Self { hierarchy: g.clone(), extra, n, solution, stiffness, laplace, mass, h1_norm, l2_norm, energy_norm })
    }

    pub fn nodes_per_side(&self) -> usize {
        self.n
    }

    pub fn energy_norm(&self) -> f64 {
        self.energy_norm
    }

    pub fn h1_norm(&self) -> f64 {
        self.h1_norm
    }

    pub fn errors(&self, u: &MultilevelField) -> Result<FieldErrors> {
        if u.hierarchy() != &self.hierarchy {
            return Err(Error::Shape("field belongs to a different hierarchy than the reference".into()));
        }
        let fine = refine_image(&flatten_to_finest(u), self.extra);
        let e: Vec<f64> = self.solution.iter().zip(fine.iter()).map(|(r, v)| r - v).collect();
        Ok(FieldErrors {
            h1_rel: h1_sq(&self.laplace, &self.mass, &e).sqrt() / self.h1_norm,
            l2_rel: sparse::quadratic_form(&self.mass, &e).sqrt() / self.l2_norm,
            energy_sq: sparse::quadratic_form(&self.stiffness, &e),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{interpolate, ActiveSet};
    use crate::problems::InclusionProblem;
    use crate::solver::{choose_omega, llmg_solve, OmegaRule, SolveOptions};

    #[test]
    fn reference_of_own_space_has_zero_error() {
        // zero extra refinement: the reference is the finest uniform Galerkin solution
        let g = GridHierarchy::new(5, 2).unwrap();
        let p = InclusionProblem::cookie();
        let y = [0.4, 0.8];
        let kappa = p.discretize_kappa(&g, &y).unwrap();
        let f = p.load_image(&g);
        let r = OverkillReference::solve(&g, &kappa, &f, 0).unwrap();
        let masks = ActiveSet::full(&g).unwrap();
        let diff = p.diffusion(&g, &y).unwrap();
        let rhs = p.rhs(&g).unwrap().on(&masks).unwrap();
        let s = choose_omega(&diff, &masks, OmegaRule::Gershgorin).unwrap();
        let opts = SolveOptions { tol: 1e-13, max_sweeps: 400 };
        let (u, _) = llmg_solve(&MultilevelField::zeros(&masks), &rhs, &diff, &s, opts, None).unwrap();
        let e = r.errors(&u).unwrap();
        assert!(e.h1_rel < 1e-10, "{e:?}");
    }

    #[test]
    fn errors_of_zero_field_are_one() {
        let g = GridHierarchy::new(5, 1).unwrap();
        let kappa = Image::from_elem((5, 5), 1.0);
        let f = interpolate(&g, 0, |_, _| 1.0);
        let r = OverkillReference::solve(&g, &kappa, &f, 2).unwrap();
        let u = MultilevelField::zeros(&ActiveSet::full(&g).unwrap());
        let e = r.errors(&u).unwrap();
        assert!((e.h1_rel - 1.0).abs() < 1e-14 && (e.l2_rel - 1.0).abs() < 1e-14);
        assert!((e.energy_sq.sqrt() - r.energy_norm()).abs() < 1e-14);
    }
}

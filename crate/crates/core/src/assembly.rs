//! Diffusion integrals, level operators and the levelwise identity
//! `Q_k A u = Abar^k (u^k + utilde^k) + ubar^k` restricted to the active set.
//!
//! `Abar^k` maps closure values to active rows. Its entries are
//! `a(phi_i, phi_j) = sum_l Upsilon_l(i) G_k(l, j - i)` where `Upsilon_l(i)` is
//! the integral of `kappa_h` over the `l`-th triangle around `i` and `G_k` is the
//! constant gradient product of the two hats on that triangle.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::field::{prolongate, restrict_uniform, restrict_weighted, ActiveSet, Image, MultilevelField, TriImage};
use crate::mesh::{shift, GridHierarchy, Half, Node, HAT_OVERLAP_OFFSETS, NODE_PATCH};
use crate::sparse::{self, SparseMatrix};

type Point = (f64, f64);

/// Gradients of the three barycentric functions of a triangle.
pub fn barycentric_gradients(v: [Point; 3]) -> [Point; 3] {
    let det = (v[1].0 - v[0].0) * (v[2].1 - v[0].1) - (v[2].0 - v[0].0) * (v[1].1 - v[0].1);
    let g = |a: usize, b: usize| ((v[a].1 - v[b].1) / det, (v[b].0 - v[a].0) / det);
    [g(1, 2), g(2, 0), g(0, 1)]
}

pub fn triangle_area(v: [Point; 3]) -> f64 {
    0.5 * ((v[1].0 - v[0].0) * (v[2].1 - v[0].1) - (v[2].0 - v[0].0) * (v[1].1 - v[0].1)).abs()
}

/// `int_T <grad phi_0, grad phi_p>` over the `l`-th patch triangle of a node,
/// for mesh width `h`. Independent of `h`.
pub fn patch_gradient_integral(l: usize, p: (isize, isize), h: f64) -> f64 {
    let (owner, half) = NODE_PATCH[l];
    let verts = half.vertices().map(|(a, b)| (owner.0 + a, owner.1 + b));
    let coords = verts.map(|(a, b)| (a as f64 * h, b as f64 * h));
    let grads = barycentric_gradients(coords);
    let me = verts.iter().position(|&v| v == (0, 0)).expect("patch triangle contains its node");
    match verts.iter().position(|&v| v == p) {
        Some(other) => triangle_area(coords) * (grads[me].0 * grads[other].0 + grads[me].1 * grads[other].1),
        None => 0.0,
    }
}

/// Reference constants `C[l][t] = int_{T^l} <grad phi_i, grad phi_{i + p_t}>`.
pub fn stencil_constants() -> [[f64; 7]; 6] {
    let mut c = [[0.0; 7]; 6];
    for (l, row) in c.iter_mut().enumerate() {
        for (t, &p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
            row[t] = patch_gradient_integral(l, p, 1.0);
        }
    }
    c
}

/// Gradient products on level `k`: the reference constants divided by the
/// triangle area, so that `sum_l Upsilon_l G(l, t)` is a stiffness entry.
pub fn level_stencil(g: &GridHierarchy, k: usize) -> [[f64; 7]; 6] {
    let area = g.triangle_area(k);
    stencil_constants().map(|row| row.map(|c| c / area))
}

/// Integrals of the finest-level nodal interpolant of `kappa` over every
/// triangle of every level.
#[derive(Clone, Debug)]
pub struct DiffusionField {
    hierarchy: GridHierarchy,
    kappa: Image,
    triangles: Vec<TriImage>,
    upsilon: Vec<Array3<f64>>,
    stencils: Vec<[[f64; 7]; 6]>,
}

impl DiffusionField {
    pub fn hierarchy(&self) -> &GridHierarchy {
        &self.hierarchy
    }

    /// Nodal values of `kappa_h` on the finest level.
    pub fn kappa(&self) -> &Image {
        &self.kappa
    }

    /// Per-level `(2, n, n)` image of triangle integrals indexed by owner node.
    pub fn triangle_integrals(&self, k: usize) -> &TriImage {
        &self.triangles[k]
    }

    /// Per-level `(6, n, n)` image: channel `l` at node `i` is the integral over
    /// the `l`-th triangle of the patch of `i` (zero where it does not exist).
    pub fn upsilon(&self, k: usize) -> &Array3<f64> {
        &self.upsilon[k]
    }

    pub fn stencil(&self, k: usize) -> &[[f64; 7]; 6] {
        &self.stencils[k]
    }

    /// Stiffness entry `a(phi_i^k, phi_{i+p_t}^k)`.
    pub fn entry(&self, k: usize, node: Node, t: usize) -> f64 {
        let ups = &self.upsilon[k];
        (0..6).map(|l| ups[[l, node.0, node.1]] * self.stencils[k][l][t]).sum()
    }
}

pub fn compute_upsilon(g: &GridHierarchy, kappa_fine: &Image) -> Result<DiffusionField> {
    let fine = g.finest();
    let n = g.n(fine);
    if kappa_fine.dim() != (n, n) {
        return Err(Error::Shape(format!("kappa has shape {:?}, expected ({n}, {n})", kappa_fine.dim())));
    }
    if let Some(v) = kappa_fine.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("diffusion coefficient ({v})")));
    }
    if let Some(v) = kappa_fine.iter().find(|&&v| v <= 0.0) {
        return Err(Error::Ellipticity(format!("nodal value {v} is not positive")));
    }
    let mut triangles = vec![TriImage::zeros((2, 1, 1)); g.levels()];
    let area = g.triangle_area(fine);
    let mut t = TriImage::zeros((2, n, n));
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            for half in Half::ALL {
                let s: f64 = half.vertices().iter().map(|v| kappa_fine[[a + v.0 as usize, b + v.1 as usize]]).sum();
                t[[half.index(), a, b]] = area / 3.0 * s;
            }
        }
    }
    triangles[fine] = t;
    for k in (0..fine).rev() {
        let nk = g.n(k);
        let finer = &triangles[k + 1];
        let mut t = TriImage::zeros((2, nk, nk));
        for a in 0..nk - 1 {
            for b in 0..nk - 1 {
                for half in Half::ALL {
                    t[[half.index(), a, b]] = half
                        .children()
                        .iter()
                        .map(|(off, ch)| finer[[ch.index(), 2 * a + off.0 as usize, 2 * b + off.1 as usize]])
                        .sum();
                }
            }
        }
        triangles[k] = t;
    }
    let upsilon = triangles
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let nk = g.n(k);
            let mut u = Array3::zeros((6, nk, nk));
            for a in 0..nk {
                for b in 0..nk {
                    for (l, (off, half)) in NODE_PATCH.iter().enumerate() {
                        if let Some(o) = shift((a, b), *off, nk) {
                            if g.owns_square(k, o) {
                                u[[l, a, b]] = t[[half.index(), o.0, o.1]];
                            }
                        }
                    }
                }
            }
            u
        })
        .collect();
    let stencils = (0..g.levels()).map(|k| level_stencil(g, k)).collect();
    Ok(DiffusionField { hierarchy: g.clone(), kappa: kappa_fine.clone(), triangles, upsilon, stencils })
}

fn check_level_image(masks: &ActiveSet, k: usize, v: &Image) -> Result<()> {
    masks.hierarchy().check_level(k)?;
    let n = masks.hierarchy().n(k);
    if v.dim() != (n, n) {
        return Err(Error::Shape(format!("level {k} image has shape {:?}, expected ({n}, {n})", v.dim())));
    }
    Ok(())
}

/// `Abar^k v`: closure values in, active rows out (zero elsewhere).
pub fn apply_a_level(diff: &DiffusionField, masks: &ActiveSet, k: usize, v: &Image) -> Result<Image> {
    check_level_image(masks, k, v)?;
    let n = v.nrows();
    let active = masks.active(k);
    let closure = masks.closure(k);
    let ups = diff.upsilon(k);
    let st = diff.stencil(k);
    let mut out = Image::zeros((n, n));
    for ((a, b), &on) in active.indexed_iter() {
        if !on {
            continue;
        }
        let mut vals = [0.0; 7];
        for (t, &p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
            if let Some(s) = shift((a, b), p, n) {
                if closure[s] {
                    vals[t] = v[s];
                }
            }
        }
        let mut acc = 0.0;
        for l in 0..6 {
            let comb: f64 = st[l].iter().zip(&vals).map(|(c, x)| c * x).sum();
            acc += ups[[l, a, b]] * comb;
        }
        out[[a, b]] = acc;
    }
    Ok(out)
}

/// `(Abar^k)^T w`: active values in, closure values out.
pub fn apply_a_level_transpose(diff: &DiffusionField, masks: &ActiveSet, k: usize, w: &Image) -> Result<Image> {
    check_level_image(masks, k, w)?;
    let n = w.nrows();
    let active = masks.active(k);
    let closure = masks.closure(k);
    let ups = diff.upsilon(k);
    let st = diff.stencil(k);
    let mut out = Image::zeros((n, n));
    for ((a, b), &on) in active.indexed_iter() {
        if !on || w[[a, b]] == 0.0 {
            continue;
        }
        for (t, &p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
            if let Some(m) = shift((a, b), p, n) {
                if closure[m] {
                    let e: f64 = (0..6).map(|l| ups[[l, a, b]] * st[l][t]).sum();
                    out[m] += e * w[[a, b]];
                }
            }
        }
    }
    Ok(out)
}

/// Coarse-level contributions `utilde^k` on each closure.
pub fn compute_utilde(u: &MultilevelField) -> Result<Vec<Image>> {
    let masks = u.masks();
    let mut out = vec![Image::zeros(u.level(0).dim())];
    for k in 1..u.levels() {
        let prev = &out[k - 1] + u.level(k - 1);
        out.push(prolongate(&prev, masks.closure(k - 1), masks.closure(k))?);
    }
    Ok(out)
}

/// Fine-level contributions `ubar^k` on each closure.
pub fn compute_ubar(u: &MultilevelField, diff: &DiffusionField) -> Result<Vec<Image>> {
    let masks = u.masks();
    let levels = u.levels();
    let mut out: Vec<Image> = (0..levels).map(|k| Image::zeros(u.level(k).dim())).collect();
    for k in (1..levels).rev() {
        let z = &out[k] + &apply_a_level_transpose(diff, masks, k, u.level(k))?;
        out[k - 1] = restrict_weighted(&z, masks.closure(k), masks.closure(k - 1))?;
    }
    Ok(out)
}

/// `Q_k A u` for every level, evaluated through the levelwise identity.
pub fn levelwise_apply(u: &MultilevelField, diff: &DiffusionField) -> Result<Vec<Image>> {
    let ut = compute_utilde(u)?;
    let ub = compute_ubar(u, diff)?;
    let masks = u.masks();
    (0..u.levels())
        .map(|k| {
            let mut r = apply_a_level(diff, masks, k, &(u.level(k) + &ut[k]))?;
            for ((a, b), &on) in masks.active(k).indexed_iter() {
                if on {
                    r[[a, b]] += ub[k][[a, b]];
                }
            }
            Ok(r)
        })
        .collect()
}

/// The multilevel operator applied to `u`, as a field on the same active set.
pub fn apply_global(u: &MultilevelField, diff: &DiffusionField) -> Result<MultilevelField> {
    MultilevelField::from_images(u.masks(), levelwise_apply(u, diff)?)
}

/// `a(u, u)`.
pub fn energy(u: &MultilevelField, diff: &DiffusionField) -> Result<f64> {
    let au = levelwise_apply(u, diff)?;
    Ok(au.iter().zip(u.images()).map(|(a, b)| (a * b).sum()).sum())
}

/// `int kappa_h |grad w|^2` for finest-level nodal values `w`.
pub fn function_energy(diff: &DiffusionField, w: &Image) -> Result<f64> {
    let g = diff.hierarchy();
    let fine = g.finest();
    let n = g.n(fine);
    if w.dim() != (n, n) {
        return Err(Error::Shape(format!("expected a finest-level image of size {n}, got {:?}", w.dim())));
    }
    let h = g.h(fine);
    let tri = diff.triangle_integrals(fine);
    let mut s = 0.0;
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            let (w00, w10, w01, w11) = (w[[a, b]], w[[a + 1, b]], w[[a, b + 1]], w[[a + 1, b + 1]]);
            let (gx, gy) = ((w11 - w01) / h, (w01 - w00) / h);
            s += tri[[0, a, b]] * (gx * gx + gy * gy);
            let (gx, gy) = ((w10 - w00) / h, (w11 - w10) / h);
            s += tri[[1, a, b]] * (gx * gx + gy * gy);
        }
    }
    Ok(s)
}

/// Load vectors `int f_h phi_j^k` on every level (boundary entries zero).
#[derive(Clone, Debug, PartialEq)]
pub struct RhsField {
    levels: Vec<Image>,
}

impl RhsField {
    pub fn level(&self, k: usize) -> &Image {
        &self.levels[k]
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    /// Restriction to an active set.
    pub fn on(&self, masks: &ActiveSet) -> Result<MultilevelField> {
        MultilevelField::from_images_masked(masks, self.levels.clone())
    }
}

/// Gauss rule of degree 2 on a triangle (edge midpoints, equal weights).
const MIDPOINT_RULE: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

fn lattice_coords(h: f64, v: [Node; 3]) -> [Point; 3] {
    v.map(|(a, b)| (a as f64 * h, b as f64 * h))
}

/// Load vector of the finest level from nodal values of `f`, integrated with a
/// degree-2 rule per triangle; coarser levels follow by exact restriction.
pub fn assemble_rhs(g: &GridHierarchy, f_fine: &Image) -> Result<RhsField> {
    let fine = g.finest();
    let n = g.n(fine);
    if f_fine.dim() != (n, n) {
        return Err(Error::Shape(format!("load has shape {:?}, expected ({n}, {n})", f_fine.dim())));
    }
    let h = g.h(fine);
    let mut b = Image::zeros((n, n));
    for id in g.triangles(fine) {
        let v = g.triangle_vertices(id);
        let area = triangle_area(lattice_coords(h, v));
        for w in MIDPOINT_RULE {
            let fq: f64 = (0..3).map(|j| w[j] * f_fine[v[j]]).sum();
            for j in 0..3 {
                b[v[j]] += area / 3.0 * fq * w[j];
            }
        }
    }
    let mut levels = vec![b];
    for _ in 0..fine {
        let next = restrict_uniform(levels.last().expect("nonempty"))?;
        levels.push(next);
    }
    levels.reverse();
    for (k, l) in levels.iter_mut().enumerate() {
        for a in 0..l.nrows() {
            for bb in 0..l.ncols() {
                if !g.is_interior(k, (a, bb)) {
                    l[[a, bb]] = 0.0;
                }
            }
        }
    }
    Ok(RhsField { levels })
}

/// Stiffness matrix of `kappa` (nodal P1 on an `n x n` lattice, all nodes,
/// row-major `i1 * n + i2`), by a degree-2 rule per triangle.
pub fn lattice_stiffness(n: usize, kappa: &Image) -> SparseMatrix {
    let h = 1.0 / (n - 1) as f64;
    let mut entries = Vec::with_capacity(18 * n * n);
    let idx = |v: Node| v.0 * n + v.1;
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            for half in Half::ALL {
                let v = half.vertices().map(|o| (a + o.0 as usize, b + o.1 as usize));
                let c = lattice_coords(h, v);
                let area = triangle_area(c);
                let kint: f64 =
                    MIDPOINT_RULE.iter().map(|w| area / 3.0 * (0..3).map(|j| w[j] * kappa[v[j]]).sum::<f64>()).sum();
                let gr = barycentric_gradients(c);
                for i in 0..3 {
                    for j in 0..3 {
                        let d = gr[i].0 * gr[j].0 + gr[i].1 * gr[j].1;
                        entries.push((idx(v[i]), idx(v[j]), kint * d));
                    }
                }
            }
        }
    }
    sparse::from_triplets(n * n, n * n, &entries)
}

/// Mass matrix of the `n x n` lattice (all nodes, row-major `i1 * n + i2`).
pub fn lattice_mass(n: usize) -> SparseMatrix {
    let h = 1.0 / (n - 1) as f64;
    let area = 0.5 * h * h;
    let mut entries = Vec::with_capacity(18 * n * n);
    let idx = |v: Node| v.0 * n + v.1;
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            for half in Half::ALL {
                let v = half.vertices().map(|o| (a + o.0 as usize, b + o.1 as usize));
                for i in 0..3 {
                    for j in 0..3 {
                        let e = if i == j { area / 6.0 } else { area / 12.0 };
                        entries.push((idx(v[i]), idx(v[j]), e));
                    }
                }
            }
        }
    }
    sparse::from_triplets(n * n, n * n, &entries)
}

/// The multilevel Galerkin matrix `a(phi_i^k, phi_j^l)` over all active hats,
/// assembled through the finest-level stiffness matrix and the pointwise
/// values of every hat at finest nodes. Positive semi-definite: hats from
/// different levels may be linearly dependent.
#[derive(Clone, Debug)]
pub struct GlobalSystem {
    pub dofs: Vec<(usize, Node)>,
    pub matrix: SparseMatrix,
    /// Finest-level nodal values of every active hat (columns).
    pub embedding: SparseMatrix,
}

impl GlobalSystem {
    pub fn to_vector(&self, u: &MultilevelField) -> Vec<f64> {
        self.dofs.iter().map(|&(k, i)| u.level(k)[i]).collect()
    }

    pub fn to_field(&self, masks: &ActiveSet, x: &[f64]) -> Result<MultilevelField> {
        let mut u = MultilevelField::zeros(masks);
        for (&(k, i), &v) in self.dofs.iter().zip(x) {
            u.level_mut(k)[i] = v;
        }
        MultilevelField::from_images(masks, u.into_images())
    }

    pub fn rhs_vector(&self, f: &RhsField) -> Vec<f64> {
        self.dofs.iter().map(|&(k, i)| f.level(k)[i]).collect()
    }
}

pub fn hat_embedding(g: &GridHierarchy, dofs: &[(usize, Node)]) -> Result<SparseMatrix> {
    let fine = g.finest();
    let nf = g.n(fine);
    let mut entries = Vec::new();
    for (col, &(k, node)) in dofs.iter().enumerate() {
        let r = 1usize << (fine - k);
        let lo = |c: usize| (c.saturating_sub(1)) * r;
        let hi = |c: usize| ((c + 1) * r).min(nf - 1);
        for a in lo(node.0)..=hi(node.0) {
            for b in lo(node.1)..=hi(node.1) {
                let (x, y) = g.node_coords(fine, (a, b));
                let v = g.hat_value(k, node, x, y)?;
                if v != 0.0 {
                    entries.push((a * nf + b, col, v));
                }
            }
        }
    }
    Ok(sparse::from_triplets(nf * nf, dofs.len(), &entries))
}

pub fn assemble_global(diff: &DiffusionField, masks: &ActiveSet) -> Result<GlobalSystem> {
    let g = masks.hierarchy();
    if g != diff.hierarchy() {
        return Err(Error::Shape("diffusion and active set belong to different hierarchies".into()));
    }
    let dofs = masks.dof_list();
    let k = lattice_stiffness(g.n(g.finest()), diff.kappa());
    let b = hat_embedding(g, &dofs)?;
    let kb: SparseMatrix = &k * &b.to_csr();
    let bt: SparseMatrix = b.transpose_view().to_csr();
    let matrix: SparseMatrix = &bt * &kb;
    Ok(GlobalSystem { dofs, matrix, embedding: b })
}

//! Coefficient images, active sets and multilevel fields.
//!
//! Images are `ndarray` arrays indexed `[i1, i2]` (x index first, row-major).
//! Triangle-indexed images carry a leading channel axis of length 2 holding
//! the upper-left and lower-right halves owned by each node.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::mesh::{shift, GridHierarchy, Half, Node, Offset, HAT_OVERLAP_OFFSETS};

pub type Image = Array2<f64>;
pub type Mask = Array2<bool>;
pub type TriMask = Array3<bool>;
pub type TriImage = Array3<f64>;

/// Fine offsets (relative to `2c`) and weights of the nodal interpolation of
/// the coarse hat at `c`.
pub const PROLONGATION_TAPS: [(Offset, f64); 7] =
    [((0, 0), 1.0), ((1, 0), 0.5), ((-1, 0), 0.5), ((0, 1), 0.5), ((0, -1), 0.5), ((1, 1), 0.5), ((-1, -1), 0.5)];

#[derive(Clone, Debug, PartialEq)]
pub struct LevelMask {
    pub active: Mask,
    pub closure: Mask,
}

/// Active hats on every level together with the derived closures and the
/// leaf triangles of the composite partition.
///
/// The closure of level `k` holds every node whose hat overlaps the support of
/// some active hat on level `k` or finer. When supports are nested this is the
/// active set dilated by the hat overlap stencil.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveSet {
    hierarchy: GridHierarchy,
    levels: Vec<LevelMask>,
    leaves: Vec<TriMask>,
}

impl ActiveSet {
    pub fn from_active(hierarchy: &GridHierarchy, active: Vec<Mask>) -> Result<Self> {
        if active.len() != hierarchy.levels() {
            return Err(Error::Shape(format!("expected {} level masks, got {}", hierarchy.levels(), active.len())));
        }
        for (k, m) in active.iter().enumerate() {
            let n = hierarchy.n(k);
            if m.dim() != (n, n) {
                return Err(Error::Shape(format!("level {k} mask has shape {:?}, expected ({n}, {n})", m.dim())));
            }
            for ((a, b), &on) in m.indexed_iter() {
                if on && !hierarchy.is_interior(k, (a, b)) {
                    return Err(Error::OutOfRange(format!("boundary node ({a}, {b}) marked active on level {k}")));
                }
            }
        }
        let touched = touched_triangles(hierarchy, &active);
        let leaves = leaf_triangles(hierarchy, &touched);
        let levels = active
            .into_iter()
            .zip(&touched)
            .enumerate()
            .map(|(k, (active, t))| {
                let n = hierarchy.n(k);
                let mut closure = Mask::from_elem((n, n), false);
                for ((q, a, b), &on) in t.indexed_iter() {
                    if on {
                        for v in Half::ALL[q].vertices() {
                            closure[[(a as isize + v.0) as usize, (b as isize + v.1) as usize]] = true;
                        }
                    }
                }
                LevelMask { active, closure }
            })
            .collect();
        Ok(Self { hierarchy: hierarchy.clone(), levels, leaves })
    }

    /// Every interior node active on levels `0..=last`, nothing beyond.
    pub fn uniform_up_to(hierarchy: &GridHierarchy, last: usize) -> Result<Self> {
        hierarchy.check_level(last)?;
        let masks = (0..hierarchy.levels())
            .map(|k| {
                let n = hierarchy.n(k);
                Mask::from_shape_fn((n, n), |(a, b)| k <= last && hierarchy.is_interior(k, (a, b)))
            })
            .collect();
        Self::from_active(hierarchy, masks)
    }

    pub fn full(hierarchy: &GridHierarchy) -> Result<Self> {
        Self::uniform_up_to(hierarchy, hierarchy.finest())
    }

    /// The starting space of the adaptive loop: the whole coarse level.
    pub fn coarse_only(hierarchy: &GridHierarchy) -> Result<Self> {
        Self::uniform_up_to(hierarchy, 0)
    }

    pub fn hierarchy(&self) -> &GridHierarchy {
        &self.hierarchy
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &LevelMask {
        &self.levels[k]
    }

    pub fn active(&self, k: usize) -> &Mask {
        &self.levels[k].active
    }

    pub fn closure(&self, k: usize) -> &Mask {
        &self.levels[k].closure
    }

    /// Leaf triangles of level `k` in the composite partition.
    pub fn leaves(&self, k: usize) -> &TriMask {
        &self.leaves[k]
    }

    pub fn active_masks(&self) -> Vec<Mask> {
        self.levels.iter().map(|l| l.active.clone()).collect()
    }

    pub fn level_dofs(&self, k: usize) -> usize {
        self.levels[k].active.iter().filter(|&&b| b).count()
    }

    /// Number of multilevel coefficients (active hats over all levels).
    pub fn dofs(&self) -> usize {
        (0..self.levels()).map(|k| self.level_dofs(k)).sum()
    }

    /// Dimension of the spanned finite element space. Hats on consecutive
    /// levels can be linearly dependent, so this may be below [`Self::dofs`].
    pub fn dimension(&self) -> usize {
        let Some(d) = self.deepest_active() else { return 0 };
        let n = self.hierarchy.n(d);
        // echelon rows of nodal values on level d, each with its pivot column
        let mut basis: Vec<(usize, Vec<f64>)> = Vec::new();
        for (k, node) in self.dof_list() {
            let mut img = Image::zeros((self.hierarchy.n(k), self.hierarchy.n(k)));
            img[node] = 1.0;
            for _ in k..d {
                img = prolongate_uniform(&img);
            }
            let mut row: Vec<f64> = img.iter().copied().collect();
            for (col, b) in &basis {
                let c = row[*col];
                if c != 0.0 {
                    row.iter_mut().zip(b).for_each(|(r, v)| *r -= c * v);
                }
            }
            let (col, &piv) =
                row.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).expect("nonempty image");
            if piv.abs() > 1e-9 {
                row.iter_mut().for_each(|r| *r /= piv);
                basis.push((col, row));
            }
        }
        debug_assert!(basis.len() <= (n - 2) * (n - 2));
        basis.len()
    }

    /// Deepest level that carries at least one active hat.
    pub fn deepest_active(&self) -> Option<usize> {
        (0..self.levels()).rev().find(|&k| self.level_dofs(k) > 0)
    }

    /// Active hats as (level, node), ordered by level then node.
    pub fn dof_list(&self) -> Vec<(usize, Node)> {
        let mut out = Vec::new();
        for (k, l) in self.levels.iter().enumerate() {
            for ((a, b), &on) in l.active.indexed_iter() {
                if on {
                    out.push((k, (a, b)));
                }
            }
        }
        out
    }
}

/// Triangles whose interior meets the support of an active hat on their level
/// or any finer level.
fn touched_triangles(g: &GridHierarchy, active: &[Mask]) -> Vec<TriMask> {
    let levels = g.levels();
    let mut touched: Vec<TriMask> = (0..levels)
        .map(|k| {
            let n = g.n(k);
            TriMask::from_elem((2, n, n), false)
        })
        .collect();
    for k in (0..levels).rev() {
        let n = g.n(k);
        for a in 0..n - 1 {
            for b in 0..n - 1 {
                for half in Half::ALL {
                    let mut on = half
                        .vertices()
                        .iter()
                        .any(|v| active[k][[(a as isize + v.0) as usize, (b as isize + v.1) as usize]]);
                    if !on && k + 1 < levels {
                        on = half.children().iter().any(|(off, ch)| {
                            touched[k + 1][[ch.index(), 2 * a + off.0 as usize, 2 * b + off.1 as usize]]
                        });
                    }
                    touched[k][[half.index(), a, b]] = on;
                }
            }
        }
    }
    touched
}

/// Composite partition: every coarse triangle is in the tree, and a tree
/// triangle is split into its children when any child is touched.
fn leaf_triangles(g: &GridHierarchy, touched: &[TriMask]) -> Vec<TriMask> {
    let levels = g.levels();
    let mut in_tree = TriMask::from_shape_fn((2, g.n(0), g.n(0)), |(_, a, b)| g.owns_square(0, (a, b)));
    let mut leaves = Vec::with_capacity(levels);
    for k in 0..levels {
        let n = g.n(k);
        let mut leaf = TriMask::from_elem((2, n, n), false);
        let mut next = if k + 1 < levels {
            let nf = g.n(k + 1);
            Some(TriMask::from_elem((2, nf, nf), false))
        } else {
            None
        };
        for ((q, a, b), &present) in in_tree.indexed_iter() {
            if !present {
                continue;
            }
            let half = Half::ALL[q];
            let split = match &next {
                Some(_) => half
                    .children()
                    .iter()
                    .any(|(off, ch)| touched[k + 1][[ch.index(), 2 * a + off.0 as usize, 2 * b + off.1 as usize]]),
                None => false,
            };
            if split {
                let nx = next.as_mut().expect("split implies a finer level");
                for (off, ch) in half.children() {
                    nx[[ch.index(), 2 * a + off.0 as usize, 2 * b + off.1 as usize]] = true;
                }
            } else {
                leaf[[q, a, b]] = true;
            }
        }
        leaves.push(leaf);
        if let Some(nx) = next {
            in_tree = nx;
        }
    }
    leaves
}

/// Coefficients of `u = sum_k sum_{i in I_V^k} u_i^k phi_i^k`; entries outside
/// the active set are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MultilevelField {
    masks: ActiveSet,
    coeffs: Vec<Image>,
}

impl MultilevelField {
    pub fn zeros(masks: &ActiveSet) -> Self {
        let g = masks.hierarchy();
        let coeffs = (0..g.levels()).map(|k| Image::zeros((g.n(k), g.n(k)))).collect();
        Self { masks: masks.clone(), coeffs }
    }

    pub fn from_images(masks: &ActiveSet, coeffs: Vec<Image>) -> Result<Self> {
        let g = masks.hierarchy();
        if coeffs.len() != g.levels() {
            return Err(Error::Shape(format!("expected {} coefficient images, got {}", g.levels(), coeffs.len())));
        }
        for (k, c) in coeffs.iter().enumerate() {
            let n = g.n(k);
            if c.dim() != (n, n) {
                return Err(Error::Shape(format!("level {k} image has shape {:?}, expected ({n}, {n})", c.dim())));
            }
            if c.iter().zip(masks.active(k)).any(|(&v, &on)| !on && v != 0.0) {
                return Err(Error::Shape(format!("level {k} has nonzero coefficients outside the active set")));
            }
        }
        Ok(Self { masks: masks.clone(), coeffs })
    }

    /// Like [`MultilevelField::from_images`] but zeroes entries outside the active set.
    pub fn from_images_masked(masks: &ActiveSet, mut coeffs: Vec<Image>) -> Result<Self> {
        for (k, c) in coeffs.iter_mut().enumerate() {
            if k < masks.levels() && c.dim() == masks.active(k).dim() {
                c.zip_mut_with(masks.active(k), |v, &on| {
                    if !on {
                        *v = 0.0
                    }
                });
            }
        }
        Self::from_images(masks, coeffs)
    }

    pub fn masks(&self) -> &ActiveSet {
        &self.masks
    }

    pub fn hierarchy(&self) -> &GridHierarchy {
        self.masks.hierarchy()
    }

    pub fn levels(&self) -> usize {
        self.coeffs.len()
    }

    pub fn level(&self, k: usize) -> &Image {
        &self.coeffs[k]
    }

    pub fn level_mut(&mut self, k: usize) -> &mut Image {
        &mut self.coeffs[k]
    }

    pub fn images(&self) -> &[Image] {
        &self.coeffs
    }

    pub fn into_images(self) -> Vec<Image> {
        self.coeffs
    }

    /// Re-expresses the same coefficients on a larger active set.
    pub fn with_masks(&self, masks: &ActiveSet) -> Result<Self> {
        if masks.hierarchy() != self.hierarchy() {
            return Err(Error::Shape("active sets belong to different hierarchies".into()));
        }
        Self::from_images(masks, self.coeffs.clone())
    }

    pub fn axpy(&mut self, alpha: f64, other: &MultilevelField) -> Result<()> {
        if other.masks.hierarchy() != self.masks.hierarchy() {
            return Err(Error::Shape("fields live on different hierarchies".into()));
        }
        for (k, (a, b)) in self.coeffs.iter_mut().zip(&other.coeffs).enumerate() {
            if b.iter().zip(self.masks.active(k)).any(|(&v, &on)| !on && v != 0.0) {
                return Err(Error::Shape(format!("level {k} update leaves the active set")));
            }
            a.scaled_add(alpha, b);
        }
        Ok(())
    }

    pub fn dot(&self, other: &MultilevelField) -> f64 {
        self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| (a * b).sum()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Stack of the seven overlap translations: channel `t` at `i` holds
/// `img[i + p_t]` where `mask[i]` is set, zero elsewhere.
pub fn translate(img: &Image, mask: &Mask) -> Result<Array3<f64>> {
    if img.dim() != mask.dim() {
        return Err(Error::Shape(format!("image {:?} vs mask {:?}", img.dim(), mask.dim())));
    }
    let n = img.nrows();
    let mut out = Array3::zeros((7, n, n));
    for ((a, b), &on) in mask.indexed_iter() {
        if !on {
            continue;
        }
        for (t, &p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
            if let Some(s) = shift((a, b), p, n) {
                out[[t, a, b]] = img[s];
            }
        }
    }
    Ok(out)
}

fn fine_size(coarse: usize) -> usize {
    2 * coarse - 1
}

fn coarse_size(fine: usize) -> Result<usize> {
    if fine % 2 == 0 || fine < 3 {
        return Err(Error::Shape(format!("{fine} nodes per side is not a refined grid")));
    }
    Ok((fine + 1) / 2)
}

/// Nodal interpolation onto the next finer level without masking.
pub fn prolongate_uniform(coarse: &Image) -> Image {
    let nc = coarse.nrows();
    let nf = fine_size(nc);
    let mut fine = Image::zeros((nf, nf));
    for ((a, b), &v) in coarse.indexed_iter() {
        if v == 0.0 {
            continue;
        }
        for (off, w) in PROLONGATION_TAPS {
            if let Some(m) = shift((2 * a, 2 * b), off, nf) {
                fine[m] += w * v;
            }
        }
    }
    fine
}

/// Transpose of [`prolongate_uniform`].
pub fn restrict_uniform(fine: &Image) -> Result<Image> {
    let nf = fine.nrows();
    let nc = coarse_size(nf)?;
    Ok(Image::from_shape_fn((nc, nc), |(a, b)| {
        PROLONGATION_TAPS.iter().filter_map(|&(off, w)| shift((2 * a, 2 * b), off, nf).map(|m| w * fine[m])).sum()
    }))
}

fn apply_mask(mut img: Image, mask: &Mask) -> Image {
    img.zip_mut_with(mask, |v, &on| {
        if !on {
            *v = 0.0
        }
    });
    img
}

/// `P_k`: coarse closure values interpolated to the fine closure.
pub fn prolongate(coarse: &Image, coarse_closure: &Mask, fine_closure: &Mask) -> Result<Image> {
    if coarse.dim() != coarse_closure.dim() || fine_closure.nrows() != fine_size(coarse.nrows()) {
        return Err(Error::Shape("prolongation operands have inconsistent sizes".into()));
    }
    let masked = apply_mask(coarse.clone(), coarse_closure);
    Ok(apply_mask(prolongate_uniform(&masked), fine_closure))
}

/// `P_k^T` with the same masks as [`prolongate`].
pub fn restrict_weighted(fine: &Image, fine_closure: &Mask, coarse_closure: &Mask) -> Result<Image> {
    if fine.dim() != fine_closure.dim() || coarse_size(fine.nrows())? != coarse_closure.nrows() {
        return Err(Error::Shape("restriction operands have inconsistent sizes".into()));
    }
    let masked = apply_mask(fine.clone(), fine_closure);
    Ok(apply_mask(restrict_uniform(&masked)?, coarse_closure))
}

/// Nodal coefficients of the field on the finest level.
pub fn flatten_to_finest(field: &MultilevelField) -> Image {
    let mut acc = field.level(0).clone();
    for k in 1..field.levels() {
        acc = prolongate_uniform(&acc) + field.level(k);
    }
    acc
}

/// Point values of the field, summing every level's piecewise linear part.
pub fn evaluate_field(field: &MultilevelField, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    let g = field.hierarchy();
    points
        .iter()
        .map(|&(x, y)| {
            let mut s = 0.0;
            for k in 0..field.levels() {
                let (id, w) = g.locate(k, x, y)?;
                for (v, wi) in g.triangle_vertices(id).iter().zip(w) {
                    s += wi * field.level(k)[*v];
                }
            }
            Ok(s)
        })
        .collect()
}

/// Nodal interpolant of a pointwise function on `level`.
pub fn interpolate(g: &GridHierarchy, level: usize, f: impl Fn(f64, f64) -> f64) -> Image {
    let n = g.n(level);
    Image::from_shape_fn((n, n), |(a, b)| {
        let (x, y) = g.node_coords(level, (a, b));
        f(x, y)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, n: usize) -> Image {
        Image::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_mask(rng: &mut impl Rng, g: &GridHierarchy, k: usize, p: f64) -> Mask {
        let n = g.n(k);
        Mask::from_shape_fn((n, n), |(a, b)| g.is_interior(k, (a, b)) && rng.gen_bool(p))
    }

    #[test]
    fn space_dimension_discounts_dependent_hats() {
        let g = GridHierarchy::new(5, 3).unwrap();
        assert_eq!(ActiveSet::coarse_only(&g).unwrap().dimension(), 9);
        let two = ActiveSet::uniform_up_to(&g, 1).unwrap();
        assert_eq!(two.dofs(), 9 + 49);
        assert_eq!(two.dimension(), 49);
        assert_eq!(ActiveSet::full(&g).unwrap().dimension(), 225);
        // a single fine hat is independent of the coarse space
        let mut active = ActiveSet::coarse_only(&g).unwrap().active_masks();
        active[1][[1, 1]] = true;
        let one = ActiveSet::from_active(&g, active).unwrap();
        assert_eq!(one.dimension(), 10);
    }

    #[test]
    fn prolongation_of_coarse_delta() {
        let g = GridHierarchy::new(3, 2).unwrap();
        let masks = ActiveSet::full(&g).unwrap();
        let mut c = Image::zeros((3, 3));
        c[[1, 1]] = 1.0;
        let f = prolongate(&c, masks.closure(0), masks.closure(1)).unwrap();
        let mut expected = Image::zeros((5, 5));
        expected[[2, 2]] = 1.0;
        for m in [(1, 2), (3, 2), (2, 1), (2, 3), (3, 3), (1, 1)] {
            expected[m] = 0.5;
        }
        assert_eq!(f, expected);
        assert_eq!(f[[1, 3]], 0.0);
        assert_eq!(f[[3, 1]], 0.0);
    }

    #[test]
    fn prolongation_is_pointwise_interpolation() {
        let g = GridHierarchy::new(5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_image(&mut rng, 5);
        let coarse = MultilevelField::from_images_masked(
            &ActiveSet::uniform_up_to(&g, 0).unwrap(),
            vec![c.clone(), Image::zeros((9, 9))],
        )
        .unwrap();
        let f = prolongate_uniform(&apply_mask(c, &Mask::from_shape_fn((5, 5), |n| g.is_interior(0, n))));
        for a in 0..9 {
            for b in 0..9 {
                let (x, y) = g.node_coords(1, (a, b));
                let v = evaluate_field(&coarse, &[(x, y)]).unwrap()[0];
                assert!((v - f[[a, b]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn translation_of_delta() {
        let mut img = Image::zeros((5, 5));
        img[[2, 2]] = 1.0;
        let mask = Mask::from_elem((5, 5), true);
        let s = translate(&img, &mask).unwrap();
        for (t, p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
            let at = ((2 - p.0) as usize, (2 - p.1) as usize);
            assert_eq!(s[[t, at.0, at.1]], 1.0);
            assert_eq!(s.index_axis(ndarray::Axis(0), t).sum(), 1.0);
        }
        let mut masked = mask.clone();
        masked[[2, 2]] = false;
        assert_eq!(translate(&img, &masked).unwrap()[[0, 2, 2]], 0.0);
    }

    #[test]
    fn closure_is_dilation_for_nested_single_level() {
        let g = GridHierarchy::new(5, 1).unwrap();
        let mut m = Mask::from_elem((5, 5), false);
        m[[1, 1]] = true;
        let set = ActiveSet::from_active(&g, vec![m]).unwrap();
        let mut expected = Mask::from_elem((5, 5), false);
        for p in HAT_OVERLAP_OFFSETS {
            expected[[(1 + p.0) as usize, (1 + p.1) as usize]] = true;
        }
        assert_eq!(set.closure(0), &expected);
    }

    #[test]
    fn rejects_boundary_nodes_and_bad_shapes() {
        let g = GridHierarchy::new(5, 1).unwrap();
        let mut m = Mask::from_elem((5, 5), false);
        m[[0, 2]] = true;
        assert!(ActiveSet::from_active(&g, vec![m]).is_err());
        assert!(ActiveSet::from_active(&g, vec![Mask::from_elem((4, 4), false)]).is_err());
    }

    #[test]
    fn leaves_partition_the_square() {
        let g = GridHierarchy::new(5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let masks: Vec<Mask> = (0..3).map(|k| random_mask(&mut rng, &g, k, 0.2)).collect();
            let set = ActiveSet::from_active(&g, masks).unwrap();
            let area: f64 =
                (0..3).map(|k| set.leaves(k).iter().filter(|&&b| b).count() as f64 * g.triangle_area(k)).sum();
            assert!((area - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn evaluate_matches_flattened_interpolant() {
        let g = GridHierarchy::new(5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let masks = ActiveSet::full(&g).unwrap();
        let imgs = (0..3).map(|k| random_image(&mut rng, g.n(k))).collect();
        let u = MultilevelField::from_images_masked(&masks, imgs).unwrap();
        let flat = flatten_to_finest(&u);
        for _ in 0..50 {
            let (x, y) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
            let (id, w) = g.locate(2, x, y).unwrap();
            let direct: f64 = g.triangle_vertices(id).iter().zip(w).map(|(v, wi)| wi * flat[*v]).sum();
            let v = evaluate_field(&u, &[(x, y)]).unwrap()[0];
            assert!((v - direct).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn restriction_is_adjoint_of_prolongation(seed in 0u64..1000, p in 0.05f64..0.9) {
            let g = GridHierarchy::new(5, 2).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let masks = vec![random_mask(&mut rng, &g, 0, p), random_mask(&mut rng, &g, 1, p)];
            let set = ActiveSet::from_active(&g, masks).unwrap();
            let x = random_image(&mut rng, 5);
            let y = random_image(&mut rng, 9);
            let px = prolongate(&x, set.closure(0), set.closure(1)).unwrap();
            let ry = restrict_weighted(&y, set.closure(1), set.closure(0)).unwrap();
            let lhs = (&px * &y).sum();
            let rhs = (&x * &ry).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn active_is_inside_closure(seed in 0u64..1000, p in 0.0f64..1.0) {
            let g = GridHierarchy::new(5, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let masks: Vec<Mask> = (0..3).map(|k| random_mask(&mut rng, &g, k, p)).collect();
            let set = ActiveSet::from_active(&g, masks).unwrap();
            for k in 0..3 {
                for (a, c) in set.active(k).iter().zip(set.closure(k)) {
                    prop_assert!(!a || *c);
                }
                for ((q, a, b), &leaf) in set.leaves(k).indexed_iter() {
                    prop_assert!(!leaf || g.owns_square(k, (a, b)));
                    let _ = q;
                }
            }
        }
    }
}

//! Error indicators, marking and refinement masks as convolutions and
//! elementwise products.

use ndarray::{s, Array3, Axis};

use super::bank::StencilBank;
use super::kernel::{conv_apply, heaviside};
use super::ops::{as_channels, channel, conv_flatten, indicator, owner_mask};
use crate::error::{Error, Result};
use crate::estimator::ErrorEstimate;
use crate::field::{ActiveSet, Image, Mask, MultilevelField, TriImage, TriMask};
use crate::mesh::GridHierarchy;

/// Unmasked `(r^2, j^2)` on the finest level from nodal `u`, `kappa` and `f`.
pub fn conv_finest_indicators(
    bank: &StencilBank,
    g: &GridHierarchy,
    u: &Image,
    kappa: &Image,
    f: &Image,
) -> Result<(TriImage, TriImage)> {
    let fine = g.finest();
    let n = g.n(fine);
    for img in [u, kappa, f] {
        if img.dim() != (n, n) {
            return Err(Error::Shape(format!("estimator input {:?}, expected ({n}, {n})", img.dim())));
        }
    }
    let e = &bank.estimator;
    let owners = owner_mask(g, fine);
    let gu = conv_apply(&e.gradient, &as_channels(u), Some(&owners))?;
    let gk = conv_apply(&e.gradient, &as_channels(kappa), Some(&owners))?;
    let s1 = conv_apply(&e.vertex_sum, &as_channels(f), Some(&owners))?;
    let s2 = conv_apply(&e.vertex_sum, &as_channels(&f.mapv(|v| v * v)), Some(&owners))?;

    // d = grad kappa . grad u per half, then the product channels
    let mut prods = Array3::zeros((8, n, n));
    for q in 0..2 {
        let d = &gu.slice(s![2 * q, .., ..]) * &gk.slice(s![2 * q, .., ..])
            + &gu.slice(s![2 * q + 1, .., ..]) * &gk.slice(s![2 * q + 1, .., ..]);
        let s1q = s1.index_axis(Axis(0), q);
        prods.index_axis_mut(Axis(0), q).assign(&s2.index_axis(Axis(0), q));
        prods.index_axis_mut(Axis(0), 2 + q).assign(&(&s1q * &s1q));
        prods.index_axis_mut(Axis(0), 4 + q).assign(&(&d * &s1q));
        prods.index_axis_mut(Axis(0), 6 + q).assign(&(&d * &d));
    }
    let r2 = conv_apply(&e.residual, &prods, Some(&owners))?;

    let jumps = conv_apply(&e.jump, &gu, Some(&owners))?;
    let exists = conv_apply(&e.neighbour, &as_channels(&indicator(&owners)), Some(&owners))?;
    let ends = conv_apply(&e.edge_ends, &as_channels(kappa), Some(&owners))?;
    let mut weighted = Array3::zeros((6, n, n));
    for c in 0..6 {
        let ka = ends.index_axis(Axis(0), 2 * c);
        let kb = ends.index_axis(Axis(0), 2 * c + 1);
        let quad = &ka * &ka + &ka * &kb + &kb * &kb;
        let jc = &jumps.index_axis(Axis(0), c) * &exists.index_axis(Axis(0), c);
        weighted.index_axis_mut(Axis(0), c).assign(&(&(&jc * &jc) * &quad));
    }
    let j2 = conv_apply(&e.jump_sum, &weighted, Some(&owners))?;
    Ok((r2, j2))
}

/// Indicators on every level, unmasked (coarser levels via the stride-2
/// aggregation kernels).
pub fn conv_indicator_levels(
    bank: &StencilBank,
    g: &GridHierarchy,
    u: &Image,
    kappa: &Image,
    f: &Image,
) -> Result<(Vec<TriImage>, Vec<TriImage>)> {
    let (r2f, j2f) = conv_finest_indicators(bank, g, u, kappa, f)?;
    let mut r2 = vec![r2f];
    let mut j2 = vec![j2f];
    for k in (0..g.finest()).rev() {
        let owners = owner_mask(g, k);
        let r = conv_apply(&bank.residual_aggregation, r2.last().expect("nonempty"), Some(&owners))?;
        let j = conv_apply(&bank.jump_aggregation, j2.last().expect("nonempty"), Some(&owners))?;
        r2.push(r);
        j2.push(j);
    }
    r2.reverse();
    j2.reverse();
    Ok((r2, j2))
}

fn mask_tri(mut img: TriImage, mask: &TriMask) -> TriImage {
    img.zip_mut_with(mask, |v, &on| {
        if !on {
            *v = 0.0
        }
    });
    img
}

/// Leaf-masked indicators of a multilevel field.
pub fn conv_estimate(bank: &StencilBank, u: &MultilevelField, kappa: &Image, f: &Image) -> Result<ErrorEstimate> {
    let g = u.hierarchy();
    let flat = conv_flatten(bank, u)?;
    let (r2, j2) = conv_indicator_levels(bank, g, &flat, kappa, f)?;
    let masks = u.masks();
    let r2: Vec<TriImage> = r2.into_iter().enumerate().map(|(k, r)| mask_tri(r, masks.leaves(k))).collect();
    let j2: Vec<TriImage> = j2.into_iter().enumerate().map(|(k, j)| mask_tri(j, masks.leaves(k))).collect();
    let eta2 = r2.iter().zip(&j2).map(|(r, j)| r + j).collect();
    Ok(ErrorEstimate { r2, j2, eta2 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvRefinement {
    pub marks: Vec<TriMask>,
    pub masks: ActiveSet,
    pub saturated: usize,
}

/// Heaviside marking `eta^2 > delta_k` on the leaves, then the transpose-strided
/// refinement kernel, a second Heaviside and the interior mask, joined with
/// the previous active set.
pub fn conv_mark_refine(
    bank: &StencilBank,
    eta2: &[TriImage],
    thresholds: &[f64],
    masks: &ActiveSet,
) -> Result<ConvRefinement> {
    let g = masks.hierarchy();
    let levels = g.levels();
    if eta2.len() != levels || thresholds.len() != levels {
        return Err(Error::Shape("one indicator image and threshold per level expected".into()));
    }
    let mut active = masks.active_masks();
    let mut marks = Vec::with_capacity(levels);
    let mut saturated = 0;
    for k in 0..levels {
        let leaves = masks.leaves(k);
        if eta2[k].dim() != leaves.dim() {
            return Err(Error::Shape(format!("level {k} indicator image has the wrong shape")));
        }
        let mut m = eta2[k].mapv(|e| heaviside(e - thresholds[k]));
        m.zip_mut_with(leaves, |v, &leaf| {
            if !leaf {
                *v = 0.0
            }
        });
        let marked = m.mapv(|v| v > 0.0);
        if k + 1 == levels {
            saturated = marked.iter().filter(|&&b| b).count();
        } else {
            let n = g.n(k + 1);
            let interior = Mask::from_shape_fn((n, n), |i| g.is_interior(k + 1, i));
            let hits = channel(&conv_apply(&bank.refinement, &m, Some(&interior))?, 0);
            active[k + 1].zip_mut_with(&hits, |a, &h| *a = *a || heaviside(h) > 0.0);
        }
        marks.push(marked);
    }
    Ok(ConvRefinement { marks, masks: ActiveSet::from_active(g, active)?, saturated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{aggregate_levels, finest_indicators};

    #[test]
    fn constant_fields_aggregate_by_sixteen_and_eight() {
        let g = GridHierarchy::new(3, 3).unwrap();
        let bank = StencilBank::build(&g);
        let n = g.n(2);
        let fine = TriImage::from_shape_fn((2, n, n), |(_, a, b)| if a < n - 1 && b < n - 1 { 1.0 } else { 0.0 });
        let r = conv_apply(&bank.residual_aggregation, &fine, Some(&owner_mask(&g, 1))).unwrap();
        let j = conv_apply(&bank.jump_aggregation, &fine, Some(&owner_mask(&g, 1))).unwrap();
        assert!(r.iter().zip(owner_mask(&g, 1).iter().cycle()).all(|(&v, &o)| if o { v == 16.0 } else { v == 0.0 }));
        assert!(j.iter().zip(owner_mask(&g, 1).iter().cycle()).all(|(&v, &o)| if o { v == 8.0 } else { v == 0.0 }));
        let oracle = aggregate_levels(3, fine, 4.0).unwrap();
        assert_eq!(oracle[1], r);
    }

    #[test]
    fn finest_indicators_match_oracle() {
        let g = GridHierarchy::new(5, 2).unwrap();
        let bank = StencilBank::build(&g);
        let u = Image::from_shape_fn((9, 9), |(a, b)| ((a * 5 + b * 3) % 7) as f64 * 0.1);
        let kappa = Image::from_shape_fn((9, 9), |(a, b)| 1.0 + ((a + 2 * b) % 3) as f64);
        let f = Image::from_shape_fn((9, 9), |(a, b)| (a as f64 - b as f64) * 0.2);
        let (r, j) = conv_finest_indicators(&bank, &g, &u, &kappa, &f).unwrap();
        let (ro, jo) = finest_indicators(&g, &u, &kappa, &f).unwrap();
        let scale = ro.iter().chain(jo.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((&r - &ro).iter().chain((&j - &jo).iter()).all(|d| d.abs() <= 1e-12 * scale));
    }

    #[test]
    fn below_threshold_marks_nothing() {
        let g = GridHierarchy::new(5, 2).unwrap();
        let bank = StencilBank::build(&g);
        let masks = ActiveSet::coarse_only(&g).unwrap();
        let eta2: Vec<TriImage> = (0..2).map(|k| TriImage::from_elem((2, g.n(k), g.n(k)), 0.5)).collect();
        let out = conv_mark_refine(&bank, &eta2, &[1.0, 1.0], &masks).unwrap();
        assert_eq!(out.masks, masks);
        assert!(out.marks.iter().all(|m| m.iter().all(|b| !b)));
    }
}

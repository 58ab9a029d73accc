//! Level operators as convolutions over translation stacks and `Upsilon` channels.

use ndarray::{Array3, Axis};

use super::bank::StencilBank;
use super::kernel::conv_apply;
use crate::error::{Error, Result};
use crate::field::{Image, Mask, MultilevelField, TriImage};
use crate::mesh::GridHierarchy;

pub(crate) fn as_channels(img: &Image) -> Array3<f64> {
    img.clone().insert_axis(Axis(0))
}

pub(crate) fn channel(img: &Array3<f64>, c: usize) -> Image {
    img.index_axis(Axis(0), c).to_owned()
}

pub(crate) fn mask_image(mut img: Image, mask: &Mask) -> Image {
    img.zip_mut_with(mask, |v, &on| {
        if !on {
            *v = 0.0
        }
    });
    img
}

pub(crate) fn indicator(mask: &Mask) -> Image {
    mask.mapv(|b| if b { 1.0 } else { 0.0 })
}

fn check_level(bank: &StencilBank, k: usize) -> Result<()> {
    if k >= bank.levels() {
        return Err(Error::LevelOutOfRange { level: k, levels: bank.levels() });
    }
    Ok(())
}

/// Seven-channel stack of `img` restricted to `source`, written at `target`
/// positions: channel `t` at `i` holds `img[i + p_t]` when that node is in `source`.
pub fn conv_translate(bank: &StencilBank, img: &Image, source: &Mask, target: &Mask) -> Result<Array3<f64>> {
    if img.dim() != source.dim() {
        return Err(Error::Shape(format!("image {:?} vs mask {:?}", img.dim(), source.dim())));
    }
    conv_apply(&bank.translation, &as_channels(&mask_image(img.clone(), source)), Some(target))
}

/// `Abar^k` from a translation stack of closure values and `Upsilon` channels:
/// `sum_l Upsilon_l * (stack conv K_l)` on the active mask.
pub fn conv_apply_a(
    bank: &StencilBank,
    k: usize,
    stack: &Array3<f64>,
    upsilon: &Array3<f64>,
    active: &Mask,
) -> Result<Image> {
    check_level(bank, k)?;
    let n = active.nrows();
    if stack.dim() != (7, n, n) || upsilon.dim() != (6, n, n) {
        return Err(Error::Shape("operator inputs do not match the level mask".into()));
    }
    let mut out = Image::zeros((n, n));
    for (l, kern) in bank.operator[k].iter().enumerate() {
        let y = conv_apply(kern, stack, Some(active))?;
        let prod = &upsilon.index_axis(Axis(0), l) * &y.index_axis(Axis(0), 0);
        out += &prod;
    }
    Ok(out)
}

/// `(Abar^k)^T w`: the six channels `Upsilon_l * w` on the active set gathered
/// back onto the closure by one `1x6x3x3` kernel.
pub fn conv_apply_a_transpose(
    bank: &StencilBank,
    k: usize,
    w: &Image,
    upsilon: &Array3<f64>,
    active: &Mask,
    closure: &Mask,
) -> Result<Image> {
    check_level(bank, k)?;
    let n = active.nrows();
    if w.dim() != (n, n) || upsilon.dim() != (6, n, n) || closure.dim() != (n, n) {
        return Err(Error::Shape("transpose operator inputs do not match the level mask".into()));
    }
    let wa = mask_image(w.clone(), active);
    let mut z = upsilon.clone();
    for mut ch in z.outer_iter_mut() {
        ch *= &wa;
    }
    Ok(channel(&conv_apply(&bank.operator_transpose[k], &z, Some(closure))?, 0))
}

/// Coarse closure values interpolated onto the fine closure.
pub fn conv_prolongate(
    bank: &StencilBank,
    coarse: &Image,
    coarse_closure: &Mask,
    fine_closure: &Mask,
) -> Result<Image> {
    if coarse.dim() != coarse_closure.dim() {
        return Err(Error::Shape("prolongation input does not match its mask".into()));
    }
    let x = as_channels(&mask_image(coarse.clone(), coarse_closure));
    Ok(channel(&conv_apply(&bank.prolongation, &x, Some(fine_closure))?, 0))
}

/// Transpose of [`conv_prolongate`] with the same masks.
pub fn conv_restrict(bank: &StencilBank, fine: &Image, fine_closure: &Mask, coarse_closure: &Mask) -> Result<Image> {
    if fine.dim() != fine_closure.dim() {
        return Err(Error::Shape("restriction input does not match its mask".into()));
    }
    let x = as_channels(&mask_image(fine.clone(), fine_closure));
    Ok(channel(&conv_apply(&bank.restriction, &x, Some(coarse_closure))?, 0))
}

/// Owner squares of a level: nodes with a square to their upper right.
pub fn owner_mask(g: &GridHierarchy, k: usize) -> Mask {
    let n = g.n(k);
    Mask::from_shape_fn((n, n), |i| g.owns_square(k, i))
}

/// Triangle integrals of `kappa_h` on every level and the `Upsilon` channels.
pub fn conv_upsilon(
    bank: &StencilBank,
    g: &GridHierarchy,
    kappa_fine: &Image,
) -> Result<(Vec<TriImage>, Vec<Array3<f64>>)> {
    let fine = g.finest();
    if kappa_fine.dim() != (g.n(fine), g.n(fine)) {
        return Err(Error::Shape("kappa must live on the finest level".into()));
    }
    let mut tri = vec![conv_apply(&bank.triangle_integral, &as_channels(kappa_fine), Some(&owner_mask(g, fine)))?];
    for k in (0..fine).rev() {
        let next = conv_apply(&bank.children, tri.last().expect("nonempty"), Some(&owner_mask(g, k)))?;
        tri.push(next);
    }
    tri.reverse();
    let ups = tri.iter().map(|t| conv_apply(&bank.upsilon_shift, t, None)).collect::<Result<_>>()?;
    Ok((tri, ups))
}

/// Finest nodal values of a multilevel field by unmasked interpolation.
pub fn conv_flatten(bank: &StencilBank, u: &MultilevelField) -> Result<Image> {
    let mut acc = as_channels(u.level(0));
    for k in 1..u.levels() {
        acc = conv_apply(&bank.prolongation, &acc, None)?;
        acc.index_axis_mut(Axis(0), 0).zip_mut_with(u.level(k), |a, &v| *a += v);
    }
    Ok(channel(&acc, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{apply_a_level, apply_a_level_transpose, compute_upsilon};
    use crate::field::{flatten_to_finest, prolongate, restrict_weighted, translate, ActiveSet};

    fn setup() -> (GridHierarchy, StencilBank, ActiveSet) {
        let g = GridHierarchy::new(5, 2).unwrap();
        let bank = StencilBank::build(&g);
        let masks = ActiveSet::full(&g).unwrap();
        (g, bank, masks)
    }

    #[test]
    fn unit_delta_gives_five_point_stencil() {
        let (g, bank, masks) = setup();
        let (_, ups) = conv_upsilon(&bank, &g, &Image::from_elem((9, 9), 1.0)).unwrap();
        let mut v = Image::zeros((5, 5));
        v[[2, 2]] = 1.0;
        let stack = conv_translate(&bank, &v, masks.closure(0), masks.active(0)).unwrap();
        let out = conv_apply_a(&bank, 0, &stack, &ups[0], masks.active(0)).unwrap();
        for ((a, b), &x) in out.indexed_iter() {
            let expected = match (a as isize - 2, b as isize - 2) {
                (0, 0) => 4.0,
                (1, 0) | (-1, 0) | (0, 1) | (0, -1) => -1.0,
                _ => 0.0,
            };
            assert!((x - expected).abs() < 1e-13, "({a}, {b}) = {x}");
        }
    }

    #[test]
    fn translation_matches_field_translate() {
        let (_, bank, masks) = setup();
        let v = Image::from_shape_fn((9, 9), |(a, b)| (a * 9 + b) as f64);
        let full = Mask::from_elem((9, 9), true);
        assert_eq!(conv_translate(&bank, &v, &full, masks.active(1)).unwrap(), translate(&v, masks.active(1)).unwrap());
    }

    #[test]
    fn zero_inputs_give_zero() {
        let (g, bank, masks) = setup();
        let kappa = Image::from_elem((9, 9), 0.5);
        let diff = compute_upsilon(&g, &kappa).unwrap();
        let z = Image::zeros((5, 5));
        assert!(conv_prolongate(&bank, &z, masks.closure(0), masks.closure(1)).unwrap().iter().all(|&v| v == 0.0));
        let at = conv_apply_a_transpose(&bank, 0, &z, diff.upsilon(0), masks.active(0), masks.closure(0)).unwrap();
        assert!(at.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operators_match_oracles_on_unit_grid() {
        let (g, bank, masks) = setup();
        let kappa = Image::from_shape_fn((9, 9), |(a, b)| 1.0 + 0.1 * (a + 2 * b) as f64);
        let diff = compute_upsilon(&g, &kappa).unwrap();
        let (tri, ups) = conv_upsilon(&bank, &g, &kappa).unwrap();
        for k in 0..2 {
            assert!((&tri[k] - diff.triangle_integrals(k)).iter().all(|d| d.abs() < 1e-14));
            assert!((&ups[k] - diff.upsilon(k)).iter().all(|d| d.abs() < 1e-14));
        }
        let v = Image::from_shape_fn((9, 9), |(a, b)| ((a * 7 + b * 3) % 5) as f64 - 2.0);
        let stack = conv_translate(&bank, &v, masks.closure(1), masks.active(1)).unwrap();
        let a = conv_apply_a(&bank, 1, &stack, &ups[1], masks.active(1)).unwrap();
        let oracle = apply_a_level(&diff, &masks, 1, &v).unwrap();
        assert!((&a - &oracle).iter().all(|d| d.abs() < 1e-12));
        let at = conv_apply_a_transpose(&bank, 1, &v, &ups[1], masks.active(1), masks.closure(1)).unwrap();
        let oracle = apply_a_level_transpose(&diff, &masks, 1, &v).unwrap();
        assert!((&at - &oracle).iter().all(|d| d.abs() < 1e-12));
        let c = Image::from_shape_fn((5, 5), |(a, b)| (a + b) as f64);
        let p = conv_prolongate(&bank, &c, masks.closure(0), masks.closure(1)).unwrap();
        assert_eq!(p, prolongate(&c, masks.closure(0), masks.closure(1)).unwrap());
        let r = conv_restrict(&bank, &v, masks.closure(1), masks.closure(0)).unwrap();
        assert_eq!(r, restrict_weighted(&v, masks.closure(1), masks.closure(0)).unwrap());
        let u = MultilevelField::from_images_masked(&masks, vec![c, v]).unwrap();
        assert_eq!(conv_flatten(&bank, &u).unwrap(), flatten_to_finest(&u));
    }
}

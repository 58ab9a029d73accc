//! Residual error indicators.
//!
//! On each finest triangle `T` with leg length `h_T`:
//! `r_T^2 = h_T^2 ||f_h + grad kappa_h . grad u_h||^2_{L2(T)}` and
//! `j_T^2 = h_T sum_{K in edges(T)} ||kappa_h [grad u_h . n]||^2_{L2(K)}`,
//! with boundary edges contributing nothing. Coarser triangles collect their
//! four children as `r^2 = 4 sum r_child^2` and `j^2 = 2 sum j_child^2`, which
//! rescales `h_T` and `h_T^2` to the coarse leg length.

use crate::assembly::DiffusionField;
use crate::error::{Error, Result};
use crate::field::{flatten_to_finest, ActiveSet, Image, MultilevelField, TriImage, TriMask};
use crate::mesh::{GridHierarchy, Half, TriangleId};

pub const RESIDUAL_AGGREGATION: f64 = 4.0;
pub const JUMP_AGGREGATION: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ErrorEstimate {
    /// Residual part on leaf triangles, per level.
    pub r2: Vec<TriImage>,
    /// Jump part on leaf triangles, per level.
    pub j2: Vec<TriImage>,
    /// `r2 + j2` on leaf triangles, per level.
    pub eta2: Vec<TriImage>,
}

impl ErrorEstimate {
    pub fn total(&self) -> f64 {
        self.eta2.iter().map(|e| e.sum()).sum()
    }

    pub fn max(&self) -> f64 {
        self.eta2.iter().flat_map(|e| e.iter()).fold(0.0f64, |m, &v| m.max(v))
    }

    /// `(triangle, eta^2)` for every leaf, ordered by level, node and half.
    pub fn entries(&self, masks: &ActiveSet) -> Vec<(TriangleId, f64)> {
        let mut out = Vec::new();
        for (k, e) in self.eta2.iter().enumerate() {
            let leaves = masks.leaves(k);
            let n = e.shape()[1];
            for a in 0..n {
                for b in 0..n {
                    for half in Half::ALL {
                        if leaves[[half.index(), a, b]] {
                            out.push((TriangleId::new(k, (a, b), half), e[[half.index(), a, b]]));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Constant gradient of a nodal image on the triangle `(half, a, b)`.
pub fn triangle_gradient(w: &Image, h: f64, half: Half, a: usize, b: usize) -> (f64, f64) {
    match half {
        Half::UpperLeft => ((w[[a + 1, b + 1]] - w[[a, b + 1]]) / h, (w[[a, b + 1]] - w[[a, b]]) / h),
        Half::LowerRight => ((w[[a + 1, b]] - w[[a, b]]) / h, (w[[a + 1, b + 1]] - w[[a + 1, b]]) / h),
    }
}

/// An edge of a triangle: neighbour (owner offset, half), outward unit normal,
/// length factor relative to `h`, and the two endpoint offsets.
pub struct EdgeSpec {
    pub neighbour: ((isize, isize), Half),
    pub normal: (f64, f64),
    pub length: f64,
    pub ends: [(usize, usize); 2],
}

pub fn edges(half: Half) -> [EdgeSpec; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let s = std::f64::consts::SQRT_2;
    match half {
        Half::UpperLeft => [
            EdgeSpec {
                neighbour: ((-1, 0), Half::LowerRight),
                normal: (-1.0, 0.0),
                length: 1.0,
                ends: [(0, 0), (0, 1)],
            },
            EdgeSpec { neighbour: ((0, 1), Half::LowerRight), normal: (0.0, 1.0), length: 1.0, ends: [(0, 1), (1, 1)] },
            EdgeSpec { neighbour: ((0, 0), Half::LowerRight), normal: (r, -r), length: s, ends: [(0, 0), (1, 1)] },
        ],
        Half::LowerRight => [
            EdgeSpec {
                neighbour: ((0, -1), Half::UpperLeft),
                normal: (0.0, -1.0),
                length: 1.0,
                ends: [(0, 0), (1, 0)],
            },
            EdgeSpec { neighbour: ((1, 0), Half::UpperLeft), normal: (1.0, 0.0), length: 1.0, ends: [(1, 0), (1, 1)] },
            EdgeSpec { neighbour: ((0, 0), Half::UpperLeft), normal: (-r, r), length: s, ends: [(0, 0), (1, 1)] },
        ],
    }
}

/// Unaggregated `(r^2, j^2)` on every triangle of the finest level.
pub fn finest_indicators(g: &GridHierarchy, u: &Image, kappa: &Image, f: &Image) -> Result<(TriImage, TriImage)> {
    let fine = g.finest();
    let n = g.n(fine);
    for (name, img) in [("solution", u), ("kappa", kappa), ("load", f)] {
        if img.dim() != (n, n) {
            return Err(Error::Shape(format!("{name} has shape {:?}, expected ({n}, {n})", img.dim())));
        }
    }
    let h = g.h(fine);
    let area = g.triangle_area(fine);
    let mut r2 = TriImage::zeros((2, n, n));
    let mut j2 = TriImage::zeros((2, n, n));
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            for half in Half::ALL {
                let q = half.index();
                let gu = triangle_gradient(u, h, half, a, b);
                let gk = triangle_gradient(kappa, h, half, a, b);
                let d = gu.0 * gk.0 + gu.1 * gk.1;
                let fv: Vec<f64> = half.vertices().iter().map(|v| f[[a + v.0 as usize, b + v.1 as usize]]).collect();
                let s1: f64 = fv.iter().sum();
                let s2: f64 = fv.iter().map(|v| v * v).sum();
                let integral = area / 12.0 * (s2 + s1 * s1) + 2.0 * d * area / 3.0 * s1 + d * d * area;
                r2[[q, a, b]] = h * h * integral;
                let mut jump = 0.0;
                for e in edges(half) {
                    let (off, nh) = e.neighbour;
                    let na = a as isize + off.0;
                    let nb = b as isize + off.1;
                    if na < 0 || nb < 0 || na >= (n - 1) as isize || nb >= (n - 1) as isize {
                        continue;
                    }
                    let gn = triangle_gradient(u, h, nh, na as usize, nb as usize);
                    let jmp = (gu.0 - gn.0) * e.normal.0 + (gu.1 - gn.1) * e.normal.1;
                    let ka = kappa[[a + e.ends[0].0, b + e.ends[0].1]];
                    let kb = kappa[[a + e.ends[1].0, b + e.ends[1].1]];
                    jump += jmp * jmp * e.length * h * (ka * ka + ka * kb + kb * kb) / 3.0;
                }
                j2[[q, a, b]] = h * jump;
            }
        }
    }
    Ok((r2, j2))
}

/// One coarsening step of a triangle-indexed image: each coarse triangle
/// receives `weight` times the sum over its four children.
pub fn aggregate_once(fine: &TriImage, weight: f64) -> Result<TriImage> {
    let nf = fine.shape()[1];
    if nf % 2 == 0 || nf < 3 {
        return Err(Error::Shape(format!("{nf} nodes per side is not a refined grid")));
    }
    let nc = (nf + 1) / 2;
    let mut out = TriImage::zeros((2, nc, nc));
    for a in 0..nc - 1 {
        for b in 0..nc - 1 {
            for half in Half::ALL {
                out[[half.index(), a, b]] = weight
                    * half
                        .children()
                        .iter()
                        .map(|(off, ch)| fine[[ch.index(), 2 * a + off.0 as usize, 2 * b + off.1 as usize]])
                        .sum::<f64>();
            }
        }
    }
    Ok(out)
}

/// Unmasked indicators on every level from the finest-level images.
pub fn aggregate_levels(levels: usize, fine: TriImage, weight: f64) -> Result<Vec<TriImage>> {
    let mut out = vec![fine];
    for _ in 1..levels {
        let next = aggregate_once(out.last().expect("nonempty"), weight)?;
        out.push(next);
    }
    out.reverse();
    Ok(out)
}

fn mask_tri(mut img: TriImage, mask: &TriMask) -> TriImage {
    img.zip_mut_with(mask, |v, &on| {
        if !on {
            *v = 0.0
        }
    });
    img
}

/// Indicators of `u` restricted to the leaf triangles of its active set.
pub fn estimate(u: &MultilevelField, f_fine: &Image, diff: &DiffusionField) -> Result<ErrorEstimate> {
    let g = u.hierarchy();
    if g != diff.hierarchy() {
        return Err(Error::Shape("field and diffusion belong to different hierarchies".into()));
    }
    let (r2f, j2f) = finest_indicators(g, &flatten_to_finest(u), diff.kappa(), f_fine)?;
    let r2 = aggregate_levels(g.levels(), r2f, RESIDUAL_AGGREGATION)?;
    let j2 = aggregate_levels(g.levels(), j2f, JUMP_AGGREGATION)?;
    let masks = u.masks();
    let r2: Vec<TriImage> = r2.into_iter().enumerate().map(|(k, r)| mask_tri(r, masks.leaves(k))).collect();
    let j2: Vec<TriImage> = j2.into_iter().enumerate().map(|(k, j)| mask_tri(j, masks.leaves(k))).collect();
    let eta2 = r2.iter().zip(&j2).map(|(r, j)| r + j).collect();
    Ok(ErrorEstimate { r2, j2, eta2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{barycentric_gradients, compute_upsilon};
    use crate::field::{interpolate, Mask};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DUNAVANT4: [(f64, f64); 2] = [(0.445948490915965, 0.223381589678011), (0.091576213509771, 0.109951743655322)];
    const GAUSS3: [(f64, f64); 3] =
        [(0.112701665379258311, 5.0 / 18.0), (0.5, 8.0 / 18.0), (0.887298334620741689, 5.0 / 18.0)];

    fn degree4_points() -> Vec<([f64; 3], f64)> {
        let mut pts = Vec::new();
        for (a, w) in DUNAVANT4 {
            let c = 1.0 - 2.0 * a;
            for bary in [[a, a, c], [a, c, a], [c, a, a]] {
                pts.push((bary, w));
            }
        }
        pts
    }

    struct P1 {
        coords: [(f64, f64); 3],
        grads: [(f64, f64); 3],
    }

    impl P1 {
        fn new(g: &GridHierarchy, id: TriangleId) -> Self {
            let h = g.h(id.level);
            let coords = g.triangle_vertices(id).map(|(a, b)| (a as f64 * h, b as f64 * h));
            Self { coords, grads: barycentric_gradients(coords) }
        }
        fn grad(&self, vals: [f64; 3]) -> (f64, f64) {
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..3 {
                gx += vals[i] * self.grads[i].0;
                gy += vals[i] * self.grads[i].1;
            }
            (gx, gy)
        }
    }

    fn values(g: &GridHierarchy, id: TriangleId, img: &Image) -> [f64; 3] {
        g.triangle_vertices(id).map(|v| img[v])
    }

    /// Independent evaluation of both indicators on one finest triangle.
    fn quadrature_indicators(g: &GridHierarchy, id: TriangleId, u: &Image, kappa: &Image, f: &Image) -> (f64, f64) {
        let p = P1::new(g, id);
        let h = g.h(id.level);
        let area = g.triangle_area(id.level);
        let gu = p.grad(values(g, id, u));
        let gk = p.grad(values(g, id, kappa));
        let fv = values(g, id, f);
        let mut r = 0.0;
        for (bary, w) in degree4_points() {
            let fq: f64 = (0..3).map(|i| bary[i] * fv[i]).sum();
            let v = fq + gu.0 * gk.0 + gu.1 * gk.1;
            r += w * area * v * v;
        }
        let mut j = 0.0;
        for e in 0..3 {
            let (pa, pb) = (p.coords[e], p.coords[(e + 1) % 3]);
            let mid = (0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1));
            let len = ((pb.0 - pa.0).powi(2) + (pb.1 - pa.1).powi(2)).sqrt();
            let normal = ((pb.1 - pa.1) / len, -(pb.0 - pa.0) / len);
            // counter-clockwise vertices: (dy, -dx) points outward
            let probe = (mid.0 + 1e-3 * h * normal.0, mid.1 + 1e-3 * h * normal.1);
            if !(0.0..=1.0).contains(&probe.0) || !(0.0..=1.0).contains(&probe.1) {
                continue;
            }
            let (nid, _) = g.locate(id.level, probe.0, probe.1).unwrap();
            let gn = P1::new(g, nid).grad(values(g, nid, u));
            let jump = (gu.0 - gn.0) * normal.0 + (gu.1 - gn.1) * normal.1;
            let verts = g.triangle_vertices(id);
            let (ka, kb) = (kappa[verts[e]], kappa[verts[(e + 1) % 3]]);
            for (t, w) in GAUSS3 {
                let kq = ka * (1.0 - t) + kb * t;
                j += w * len * (kq * jump).powi(2);
            }
        }
        (h * h * r, h * j)
    }

    fn random_images(seed: u64, g: &GridHierarchy) -> (Image, Image, Image) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = g.n(g.finest());
        let mut u = Image::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        for a in 0..n {
            for b in 0..n {
                if !g.is_interior(g.finest(), (a, b)) {
                    u[[a, b]] = 0.0;
                }
            }
        }
        let kappa = Image::from_shape_fn((n, n), |_| rng.gen_range(0.1..2.1));
        let f = Image::from_shape_fn((n, n), |_| rng.gen_range(-1.0..2.0));
        (u, kappa, f)
    }

    #[test]
    fn finest_indicators_match_quadrature() {
        let g = GridHierarchy::new(5, 2).unwrap();
        for seed in 0..3 {
            let (u, kappa, f) = random_images(seed, &g);
            let (r2, j2) = finest_indicators(&g, &u, &kappa, &f).unwrap();
            for id in g.triangles(1) {
                let (r, j) = quadrature_indicators(&g, id, &u, &kappa, &f);
                let q = id.half.index();
                let (a, b) = id.node;
                assert!((r2[[q, a, b]] - r).abs() <= 1e-10 * r.abs().max(1e-300), "{id:?}: {} vs {r}", r2[[q, a, b]]);
                assert!((j2[[q, a, b]] - j).abs() <= 1e-10 * j.abs().max(1e-300), "{id:?}: {} vs {j}", j2[[q, a, b]]);
            }
        }
    }

    #[test]
    fn zero_solution_with_unit_load() {
        let g = GridHierarchy::new(3, 1).unwrap();
        let n = 3;
        let (r2, j2) = finest_indicators(
            &g,
            &Image::zeros((n, n)),
            &Image::from_elem((n, n), 1.0),
            &Image::from_elem((n, n), 1.0),
        )
        .unwrap();
        let h: f64 = 0.5;
        for a in 0..2 {
            for b in 0..2 {
                for q in 0..2 {
                    assert!((r2[[q, a, b]] - h * h * h * h / 2.0).abs() < 1e-16);
                    assert_eq!(j2[[q, a, b]], 0.0);
                }
            }
        }
    }

    #[test]
    fn aggregation_of_ones() {
        let ones = TriImage::from_shape_fn((2, 5, 5), |(_, a, b)| if a < 4 && b < 4 { 1.0 } else { 0.0 });
        let r = aggregate_once(&ones, RESIDUAL_AGGREGATION).unwrap();
        let j = aggregate_once(&ones, JUMP_AGGREGATION).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                for q in 0..2 {
                    assert_eq!(r[[q, a, b]], 16.0);
                    assert_eq!(j[[q, a, b]], 8.0);
                }
            }
        }
    }

    #[test]
    fn aggregated_indicators_equal_coarse_quadrature() {
        // u in the coarse space, kappa and f finest-level piecewise linear
        let g = GridHierarchy::new(5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let coarse =
            Image::from_shape_fn(
                (5, 5),
                |(a, b)| if g.is_interior(0, (a, b)) { rng.gen_range(-1.0..1.0) } else { 0.0 },
            );
        let masks = crate::field::ActiveSet::coarse_only(&g).unwrap();
        let u = MultilevelField::from_images(&masks, vec![coarse.clone(), Image::zeros((9, 9))]).unwrap();
        let kappa = Image::from_shape_fn((9, 9), |_| rng.gen_range(0.1..2.1));
        let f = Image::from_shape_fn((9, 9), |_| rng.gen_range(-1.0..1.0));
        let diff = compute_upsilon(&g, &kappa).unwrap();
        let est = estimate(&u, &f, &diff).unwrap();
        let uf = flatten_to_finest(&u);
        for id in g.triangles(0) {
            // residual: composite quadrature over the four children with the coarse h
            let kids = g.children_of_triangle(id).unwrap();
            let mut r = 0.0;
            for kid in kids {
                let (rk, _) = quadrature_indicators(&g, kid, &uf, &kappa, &f);
                r += rk / (g.h(1) * g.h(1));
            }
            r *= g.h(0) * g.h(0);
            // jump: coarse edges, split at the midpoint where kappa has a kink
            let p = P1::new(&g, id);
            let gu = p.grad(values(&g, id, &coarse));
            let mut j = 0.0;
            for e in 0..3 {
                let (pa, pb) = (p.coords[e], p.coords[(e + 1) % 3]);
                let len = ((pb.0 - pa.0).powi(2) + (pb.1 - pa.1).powi(2)).sqrt();
                let normal = ((pb.1 - pa.1) / len, -(pb.0 - pa.0) / len);
                let mid = (0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1));
                let probe = (mid.0 + 1e-3 * normal.0, mid.1 + 1e-3 * normal.1);
                if !(0.0..=1.0).contains(&probe.0) || !(0.0..=1.0).contains(&probe.1) {
                    continue;
                }
                let (nid, _) = g.locate(0, probe.0, probe.1).unwrap();
                let gn = P1::new(&g, nid).grad(values(&g, nid, &coarse));
                let jump = (gu.0 - gn.0) * normal.0 + (gu.1 - gn.1) * normal.1;
                for (s0, s1) in [(0.0, 0.5), (0.5, 1.0)] {
                    for (t, w) in GAUSS3 {
                        let s = s0 + (s1 - s0) * t;
                        let x = (pa.0 + s * (pb.0 - pa.0), pa.1 + s * (pb.1 - pa.1));
                        let (kid, bw) = g.locate(1, x.0, x.1).unwrap();
                        let kq: f64 = g.triangle_vertices(kid).iter().zip(bw).map(|(v, w)| w * kappa[*v]).sum();
                        j += w * (s1 - s0) * len * (kq * jump).powi(2);
                    }
                }
            }
            j *= g.h(0);
            let q = id.half.index();
            let (a, b) = id.node;
            assert!((est.r2[0][[q, a, b]] - r).abs() <= 1e-10 * r, "{id:?}");
            assert!(
                (est.j2[0][[q, a, b]] - j).abs() <= 1e-10 * j.max(1e-300),
                "{id:?}: {} vs {j}",
                est.j2[0][[q, a, b]]
            );
        }
    }

    #[test]
    fn every_element_counted_once() {
        let g = GridHierarchy::new(5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let masks: Vec<Mask> = (0..3)
            .map(|k| {
                Mask::from_shape_fn((g.n(k), g.n(k)), |(a, b)| {
                    g.is_interior(k, (a, b)) && (k == 0 || rng.gen_bool(0.2))
                })
            })
            .collect();
        let set = crate::field::ActiveSet::from_active(&g, masks).unwrap();
        let u = MultilevelField::zeros(&set);
        let n = g.n(2);
        let kappa = Image::from_elem((n, n), 1.0);
        let f = interpolate(&g, 2, |_, _| 1.0);
        let diff = compute_upsilon(&g, &kappa).unwrap();
        let est = estimate(&u, &f, &diff).unwrap();
        // with u = 0 and f = 1, r^2 = h_T^4 / 2 on every leaf; summing h_T^{-2} r^2 gives the area
        let mut area = 0.0;
        for (id, e) in est.entries(&set) {
            area += e / (g.h(id.level) * g.h(id.level));
        }
        assert!((area - 1.0).abs() < 1e-12);
    }
}

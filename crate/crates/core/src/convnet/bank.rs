//! Fixed kernel weights of every convolutional construction.

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use super::kernel::{ConvKernel, ConvMode};
use crate::assembly::{level_stencil, stencil_constants};
use crate::estimator::{edges, JUMP_AGGREGATION, RESIDUAL_AGGREGATION};
use crate::field::PROLONGATION_TAPS;
use crate::mesh::{GridHierarchy, Half, HAT_OVERLAP_OFFSETS, NODE_PATCH};

/// Kernels of the finest-level estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorKernels {
    /// `4x1x2x2`: gradient components `(UL_x, UL_y, LR_x, LR_y)` on each owner square.
    pub gradient: ConvKernel,
    /// `2x1x2x2`: sum of the three vertex values of each half.
    pub vertex_sum: ConvKernel,
    /// `2x8x1x1`: `h^2 |T| (S2/12 + S1^2/12 + 2 d S1/3 + d^2)` from the product channels.
    pub residual: ConvKernel,
    /// `6x4x3x3`: normal gradient jump across each of the three edges of each half.
    pub jump: ConvKernel,
    /// `6x1x3x3`: owner-mask value of the neighbour across each edge.
    pub neighbour: ConvKernel,
    /// `12x1x2x2`: nodal values at both ends of each edge.
    pub edge_ends: ConvKernel,
    /// `2x6x1x1`: edge length times `h^2 / 3`, summed per half.
    pub jump_sum: ConvKernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StencilBank {
    /// Reference-element constants `int_{T^l} grad phi_0 . grad phi_{p_t}`.
    pub reference: [[f64; 7]; 6],
    /// `7x1x3x3`: one-hot taps at the hat overlap offsets.
    pub translation: ConvKernel,
    /// Per level, six `1x7x1x1` kernels holding the reference constants over `|T_k|`.
    pub operator: Vec<[ConvKernel; 6]>,
    /// Per level, `1x6x3x3` kernel of the transposed operator.
    pub operator_transpose: Vec<ConvKernel>,
    /// `1x1x3x3` transpose-strided nodal interpolation.
    pub prolongation: ConvKernel,
    /// The same weights, strided.
    pub restriction: ConvKernel,
    /// `2x1x2x2`: `int kappa_h` over both halves of each finest square.
    pub triangle_integral: ConvKernel,
    /// `2x2x2x2` strided: sum over the four children.
    pub children: ConvKernel,
    /// `6x2x3x3`: triangle channels to the six node-patch channels.
    pub upsilon_shift: ConvKernel,
    pub estimator: EstimatorKernels,
    pub residual_aggregation: ConvKernel,
    pub jump_aggregation: ConvKernel,
    /// `1x2x3x3` transpose-strided: marked triangles to the nodes they contain.
    pub refinement: ConvKernel,
}

fn tap(off: (isize, isize), origin: (usize, usize)) -> (usize, usize) {
    ((origin.0 as isize + off.0) as usize, (origin.1 as isize + off.1) as usize)
}

fn translation_kernel() -> ConvKernel {
    let mut w = Array4::zeros((7, 1, 3, 3));
    for (t, &p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
        let (a, b) = tap(p, (1, 1));
        w[[t, 0, a, b]] = 1.0;
    }
    ConvKernel::new(w, ConvMode::Submanifold, (1, 1))
}

fn operator_kernels(st: &[[f64; 7]; 6]) -> [ConvKernel; 6] {
    std::array::from_fn(|l| {
        let w = Array4::from_shape_fn((1, 7, 1, 1), |(_, t, _, _)| st[l][t]);
        ConvKernel::new(w, ConvMode::Submanifold, (0, 0))
    })
}

/// Output at `m` gathers `Z_l[m - p_t]`, so tap `origin - p_t` carries `G[l][t]`.
fn transpose_kernel(st: &[[f64; 7]; 6]) -> ConvKernel {
    let mut w = Array4::zeros((1, 6, 3, 3));
    for l in 0..6 {
        for (t, &p) in HAT_OVERLAP_OFFSETS.iter().enumerate() {
            let (a, b) = tap((-p.0, -p.1), (1, 1));
            w[[0, l, a, b]] = st[l][t];
        }
    }
    ConvKernel::new(w, ConvMode::Submanifold, (1, 1))
}

fn interpolation_weights() -> Array4<f64> {
    let mut w = Array4::zeros((1, 1, 3, 3));
    for (off, v) in PROLONGATION_TAPS {
        let (a, b) = tap(off, (1, 1));
        w[[0, 0, a, b]] = v;
    }
    w
}

fn half_vertex_kernel(weight: f64) -> ConvKernel {
    let mut w = Array4::zeros((2, 1, 2, 2));
    for half in Half::ALL {
        for v in half.vertices() {
            w[[half.index(), 0, v.0 as usize, v.1 as usize]] = weight;
        }
    }
    ConvKernel::new(w, ConvMode::Submanifold, (0, 0))
}

fn children_kernel(weight: f64) -> ConvKernel {
    let mut w = Array4::zeros((2, 2, 2, 2));
    for half in Half::ALL {
        for (off, ch) in half.children() {
            w[[half.index(), ch.index(), off.0 as usize, off.1 as usize]] = weight;
        }
    }
    ConvKernel::new(w, ConvMode::Strided2, (0, 0))
}

fn upsilon_shift_kernel() -> ConvKernel {
    let mut w = Array4::zeros((6, 2, 3, 3));
    for (l, (off, half)) in NODE_PATCH.iter().enumerate() {
        let (a, b) = tap(*off, (1, 1));
        w[[l, half.index(), a, b]] = 1.0;
    }
    ConvKernel::new(w, ConvMode::Plain, (1, 1))
}

fn estimator_kernels(g: &GridHierarchy) -> EstimatorKernels {
    let fine = g.finest();
    let h = g.h(fine);
    let area = g.triangle_area(fine);
    let mut grad = Array4::zeros((4, 1, 2, 2));
    // UL: ((w11 - w01)/h, (w01 - w00)/h); LR: ((w10 - w00)/h, (w11 - w10)/h)
    for (c, plus, minus) in [(0, (1, 1), (0, 1)), (1, (0, 1), (0, 0)), (2, (1, 0), (0, 0)), (3, (1, 1), (1, 0))] {
        grad[[c, 0, plus.0, plus.1]] += 1.0 / h;
        grad[[c, 0, minus.0, minus.1]] -= 1.0 / h;
    }
    // product channels: [S2_UL, S2_LR, S1^2_UL, S1^2_LR, dS1_UL, dS1_LR, d^2_UL, d^2_LR]
    let coeff = [area / 12.0, area / 12.0, 2.0 * area / 3.0, area];
    let residual =
        Array4::from_shape_fn((2, 8, 1, 1), |(q, c, _, _)| if c % 2 == q { h * h * coeff[c / 2] } else { 0.0 });
    let mut jump = Array4::zeros((6, 4, 3, 3));
    let mut neighbour = Array4::zeros((6, 1, 3, 3));
    let mut ends = Array4::zeros((12, 1, 2, 2));
    let mut jump_sum = Array4::zeros((2, 6, 1, 1));
    for half in Half::ALL {
        let q = half.index();
        for (e, spec) in edges(half).iter().enumerate() {
            let c = 3 * q + e;
            let (off, nh) = spec.neighbour;
            let (a, b) = tap(off, (1, 1));
            let nq = nh.index();
            jump[[c, 2 * q, 1, 1]] += spec.normal.0;
            jump[[c, 2 * q + 1, 1, 1]] += spec.normal.1;
            jump[[c, 2 * nq, a, b]] -= spec.normal.0;
            jump[[c, 2 * nq + 1, a, b]] -= spec.normal.1;
            neighbour[[c, 0, a, b]] = 1.0;
            for (j, end) in spec.ends.iter().enumerate() {
                ends[[2 * c + j, 0, end.0, end.1]] = 1.0;
            }
            jump_sum[[q, c, 0, 0]] = spec.length * h * h / 3.0;
        }
    }
    EstimatorKernels {
        gradient: ConvKernel::new(grad, ConvMode::Submanifold, (0, 0)),
        vertex_sum: half_vertex_kernel(1.0),
        residual: ConvKernel::new(residual, ConvMode::Plain, (0, 0)),
        jump: ConvKernel::new(jump, ConvMode::Submanifold, (1, 1)),
        neighbour: ConvKernel::new(neighbour, ConvMode::Submanifold, (1, 1)),
        edge_ends: ConvKernel::new(ends, ConvMode::Submanifold, (0, 0)),
        jump_sum: ConvKernel::new(jump_sum, ConvMode::Plain, (0, 0)),
    }
}

fn refinement_kernel() -> ConvKernel {
    let mut w = Array4::zeros((1, 2, 3, 3));
    for half in Half::ALL {
        for (a, b) in crate::adapt::refinement_footprint(half) {
            w[[0, half.index(), a, b]] = 1.0;
        }
    }
    ConvKernel::new(w, ConvMode::Transpose2, (0, 0))
}

impl StencilBank {
    pub fn build(g: &GridHierarchy) -> Self {
        let stencils: Vec<[[f64; 7]; 6]> = (0..g.levels()).map(|k| level_stencil(g, k)).collect();
        Self {
            reference: stencil_constants(),
            translation: translation_kernel(),
            operator: stencils.iter().map(operator_kernels).collect(),
            operator_transpose: stencils.iter().map(transpose_kernel).collect(),
            prolongation: ConvKernel::new(interpolation_weights(), ConvMode::Transpose2, (1, 1)),
            restriction: ConvKernel::new(interpolation_weights(), ConvMode::Strided2, (1, 1)),
            triangle_integral: half_vertex_kernel(g.triangle_area(g.finest()) / 3.0),
            children: children_kernel(1.0),
            upsilon_shift: upsilon_shift_kernel(),
            estimator: estimator_kernels(g),
            residual_aggregation: children_kernel(RESIDUAL_AGGREGATION),
            jump_aggregation: children_kernel(JUMP_AGGREGATION),
            refinement: refinement_kernel(),
        }
    }

    pub fn levels(&self) -> usize {
        self.operator.len()
    }

    /// Every kernel with a stable name, in serialization order.
    pub fn named_kernels(&self) -> Vec<(String, &ConvKernel)> {
        let mut out = vec![("translation".to_string(), &self.translation)];
        for (k, ks) in self.operator.iter().enumerate() {
            for (l, kern) in ks.iter().enumerate() {
                out.push((format!("operator/{k}/{l}"), kern));
            }
        }
        for (k, kern) in self.operator_transpose.iter().enumerate() {
            out.push((format!("operator_transpose/{k}"), kern));
        }
        let e = &self.estimator;
        out.extend([
            ("prolongation".to_string(), &self.prolongation),
            ("restriction".to_string(), &self.restriction),
            ("triangle_integral".to_string(), &self.triangle_integral),
            ("children".to_string(), &self.children),
            ("upsilon_shift".to_string(), &self.upsilon_shift),
            ("estimator/gradient".to_string(), &e.gradient),
            ("estimator/vertex_sum".to_string(), &e.vertex_sum),
            ("estimator/residual".to_string(), &e.residual),
            ("estimator/jump".to_string(), &e.jump),
            ("estimator/neighbour".to_string(), &e.neighbour),
            ("estimator/edge_ends".to_string(), &e.edge_ends),
            ("estimator/jump_sum".to_string(), &e.jump_sum),
            ("residual_aggregation".to_string(), &self.residual_aggregation),
            ("jump_aggregation".to_string(), &self.jump_aggregation),
            ("refinement".to_string(), &self.refinement),
        ]);
        out
    }

    /// All weights concatenated (row-major per kernel) with a segment table.
    pub fn to_flat(&self) -> (Vec<f64>, Vec<BankSegment>) {
        let mut data = Vec::new();
        let mut segments = Vec::new();
        for (name, k) in self.named_kernels() {
            let s = k.weights.shape();
            segments.push(BankSegment {
                name,
                shape: [s[0], s[1], s[2], s[3]],
                mode: k.mode,
                origin: [k.origin.0, k.origin.1],
                offset: data.len(),
                len: k.weights.len(),
            });
            data.extend(k.weights.iter());
        }
        (data, segments)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankSegment {
    pub name: String,
    /// `(out, in, height, width)`.
    pub shape: [usize; 4],
    pub mode: ConvMode,
    pub origin: [usize; 2],
    pub offset: usize,
    pub len: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::compute_upsilon;
    use crate::field::Image;

    #[test]
    fn unit_coefficient_reconstructs_courant_stencil() {
        let g = GridHierarchy::new(5, 1).unwrap();
        let bank = StencilBank::build(&g);
        let diff = compute_upsilon(&g, &Image::from_elem((5, 5), 1.0)).unwrap();
        let ups = diff.upsilon(0);
        let node = (2, 2);
        let stencil: Vec<f64> = (0..7)
            .map(|t| (0..6).map(|l| ups[[l, node.0, node.1]] * bank.operator[0][l].weights[[0, t, 0, 0]]).sum())
            .collect();
        let expected = [4.0, -1.0, -1.0, -1.0, -1.0, 0.0, 0.0];
        for (t, (s, e)) in stencil.iter().zip(expected).enumerate() {
            assert!((s - e).abs() < 1e-14, "offset {t}: {s}");
            assert!((s - diff.entry(0, node, t)).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_shapes() {
        let g = GridHierarchy::new(5, 3).unwrap();
        let bank = StencilBank::build(&g);
        let per_level: usize = bank.operator[0].iter().map(|k| k.parameter_count()).sum();
        assert_eq!(per_level, 42);
        assert_eq!(bank.operator_transpose[0].weights.shape(), &[1, 6, 3, 3]);
        assert_eq!(bank.upsilon_shift.weights.shape(), &[6, 2, 3, 3]);
        assert_eq!(bank.refinement.weights.shape(), &[1, 2, 3, 3]);
        assert_eq!(bank.residual_aggregation.weights.shape(), &[2, 2, 2, 2]);
        for (_, k) in bank.named_kernels() {
            let (h, w) = k.size();
            assert!(h <= 5 && w <= 5);
        }
        // the level kernels only differ by the triangle area
        for k in 1..3 {
            for l in 0..6 {
                let r = &bank.operator[k][l].weights * g.triangle_area(k);
                let r0 = &bank.operator[0][l].weights * g.triangle_area(0);
                assert!(r.iter().zip(r0.iter()).all(|(a, b)| (a - b).abs() < 1e-14));
            }
        }
    }

    #[test]
    fn flat_bank_segments_tile_the_data() {
        let g = GridHierarchy::new(3, 2).unwrap();
        let (data, segs) = StencilBank::build(&g).to_flat();
        let mut next = 0;
        for s in &segs {
            assert_eq!(s.offset, next);
            assert_eq!(s.len, s.shape.iter().product::<usize>());
            next += s.len;
        }
        assert_eq!(next, data.len());
    }
}

//! Nested uniform Courant triangulations of the unit square.
//!
//! Level `k` (0-based) has `n_k = (n_0 - 1) 2^k + 1` nodes per side and mesh
//! width `h_k = 1 / (n_k - 1)`. Node `(i1, i2)` sits at `(i1 h, i2 h)`; `i1` is
//! the x index. Every lattice square is split along its lower-left to
//! upper-right diagonal. The square whose lower-left corner is node `i` owns
//! two triangles: the upper-left half `T1 = (i, i+(1,1), i+(0,1))` and the
//! lower-right half `T2 = (i, i+(1,0), i+(1,1))`.

use crate::error::{Error, Result};

pub type Node = (usize, usize);
pub type Offset = (isize, isize);

/// Offsets `p` for which the hats at `i` and `i + p` overlap with positive area.
/// The anti-diagonal neighbours `(1,-1)` and `(-1,1)` never share a triangle.
pub const HAT_OVERLAP_OFFSETS: [Offset; 7] = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Half {
    UpperLeft,
    LowerRight,
}

impl Half {
    pub const ALL: [Half; 2] = [Half::UpperLeft, Half::LowerRight];

    /// Channel index used by triangle-indexed images (0 for `T1`, 1 for `T2`).
    pub fn index(self) -> usize {
        match self {
            Half::UpperLeft => 0,
            Half::LowerRight => 1,
        }
    }

    /// Vertex offsets relative to the owner node, in counter-clockwise order.
    pub fn vertices(self) -> [Offset; 3] {
        match self {
            Half::UpperLeft => [(0, 0), (1, 1), (0, 1)],
            Half::LowerRight => [(0, 0), (1, 0), (1, 1)],
        }
    }

    /// The four children on the next finer level as (owner offset from `2i`, half).
    pub fn children(self) -> [(Offset, Half); 4] {
        use Half::*;
        match self {
            UpperLeft => [((0, 0), UpperLeft), ((0, 1), UpperLeft), ((1, 1), UpperLeft), ((0, 1), LowerRight)],
            LowerRight => [((0, 0), LowerRight), ((1, 0), LowerRight), ((1, 1), LowerRight), ((1, 0), UpperLeft)],
        }
    }
}

/// The six triangles around a node, as (owner offset, half). The `l`-th entry
/// is the triangle `T_i^{l+1}` of the patch of node `i`.
pub const NODE_PATCH: [(Offset, Half); 6] = [
    ((0, 0), Half::UpperLeft),
    ((0, 0), Half::LowerRight),
    ((0, -1), Half::UpperLeft),
    ((-1, -1), Half::UpperLeft),
    ((-1, -1), Half::LowerRight),
    ((-1, 0), Half::LowerRight),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriangleId {
    pub level: usize,
    pub node: Node,
    pub half: Half,
}

impl TriangleId {
    pub fn new(level: usize, node: Node, half: Half) -> Self {
        Self { level, node, half }
    }
}

pub fn shift(node: Node, offset: Offset, n: usize) -> Option<Node> {
    let a = node.0 as isize + offset.0;
    let b = node.1 as isize + offset.1;
    if a < 0 || b < 0 || a >= n as isize || b >= n as isize {
        None
    } else {
        Some((a as usize, b as usize))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridHierarchy {
    coarse_n: usize,
    levels: usize,
}

impl GridHierarchy {
    pub fn new(coarse_n: usize, levels: usize) -> Result<Self> {
        if coarse_n < 3 {
            return Err(Error::Config(format!("coarse grid needs at least 3 nodes per side, got {coarse_n}")));
        }
        if levels == 0 {
            return Err(Error::Config("hierarchy needs at least one level".into()));
        }
        let n_fine = (coarse_n - 1).checked_shl(levels as u32 - 1).filter(|&v| v < 1 << 20);
        if n_fine.is_none() {
            return Err(Error::Config(format!("hierarchy with {levels} levels is too deep")));
        }
        Ok(Self { coarse_n, levels })
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn coarse_n(&self) -> usize {
        self.coarse_n
    }

    pub fn finest(&self) -> usize {
        self.levels - 1
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level < self.levels {
            Ok(())
        } else {
            Err(Error::LevelOutOfRange { level, levels: self.levels })
        }
    }

    /// Nodes per side on `level`. Levels beyond the hierarchy are allowed so
    /// callers can build overkill grids from the same formula.
    pub fn n(&self, level: usize) -> usize {
        ((self.coarse_n - 1) << level) + 1
    }

    pub fn h(&self, level: usize) -> f64 {
        1.0 / (self.n(level) - 1) as f64
    }

    pub fn triangle_area(&self, level: usize) -> f64 {
        let h = self.h(level);
        0.5 * h * h
    }

    /// A hierarchy with the same coarse grid and `extra` more levels.
    pub fn extended(&self, extra: usize) -> Result<Self> {
        Self::new(self.coarse_n, self.levels + extra)
    }

    pub fn node_coords(&self, level: usize, node: Node) -> (f64, f64) {
        let h = self.h(level);
        (node.0 as f64 * h, node.1 as f64 * h)
    }

    pub fn is_interior(&self, level: usize, node: Node) -> bool {
        let n = self.n(level);
        node.0 > 0 && node.1 > 0 && node.0 < n - 1 && node.1 < n - 1
    }

    pub fn interior_count(&self, level: usize) -> usize {
        let n = self.n(level);
        (n - 2) * (n - 2)
    }

    /// Whether `node` owns a lattice square (and hence two triangles).
    pub fn owns_square(&self, level: usize, node: Node) -> bool {
        let n = self.n(level);
        node.0 + 1 < n && node.1 + 1 < n
    }

    pub fn triangle_vertices(&self, id: TriangleId) -> [Node; 3] {
        id.half.vertices().map(|(a, b)| ((id.node.0 as isize + a) as usize, (id.node.1 as isize + b) as usize))
    }

    pub fn check_triangle(&self, id: TriangleId) -> Result<()> {
        self.check_level(id.level)?;
        if self.owns_square(id.level, id.node) {
            Ok(())
        } else {
            Err(Error::OutOfRange(format!("{id:?} does not name a triangle")))
        }
    }

    pub fn children_of_triangle(&self, id: TriangleId) -> Result<[TriangleId; 4]> {
        self.check_triangle(id)?;
        if id.level + 1 >= self.levels {
            return Err(Error::LevelOutOfRange { level: id.level + 1, levels: self.levels });
        }
        Ok(id.half.children().map(|((a, b), half)| TriangleId {
            level: id.level + 1,
            node: (2 * id.node.0 + a as usize, 2 * id.node.1 + b as usize),
            half,
        }))
    }

    /// All triangles of a level in (node, half) lexicographic order.
    pub fn triangles(&self, level: usize) -> impl Iterator<Item = TriangleId> {
        let m = self.n(level) - 1;
        (0..m).flat_map(move |a| {
            (0..m).flat_map(move |b| Half::ALL.into_iter().map(move |half| TriangleId::new(level, (a, b), half)))
        })
    }

    pub fn interior_nodes(&self, level: usize) -> impl Iterator<Item = Node> {
        let n = self.n(level);
        (1..n - 1).flat_map(move |a| (1..n - 1).map(move |b| (a, b)))
    }

    /// The triangle containing `(x, y)` together with the barycentric weights
    /// of its vertices (same order as [`GridHierarchy::triangle_vertices`]).
    pub fn locate(&self, level: usize, x: f64, y: f64) -> Result<(TriangleId, [f64; 3])> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::OutOfRange(format!("point ({x}, {y}) lies outside the unit square")));
        }
        let m = self.n(level) - 1;
        let sx = x * m as f64;
        let sy = y * m as f64;
        let a = (sx.floor() as usize).min(m - 1);
        let b = (sy.floor() as usize).min(m - 1);
        let s = sx - a as f64;
        let t = sy - b as f64;
        if t >= s {
            Ok((TriangleId::new(level, (a, b), Half::UpperLeft), [1.0 - t, s, t - s]))
        } else {
            Ok((TriangleId::new(level, (a, b), Half::LowerRight), [1.0 - s, s - t, t]))
        }
    }

    /// Value of the nodal hat of `node` on `level` at `(x, y)`.
    pub fn hat_value(&self, level: usize, node: Node, x: f64, y: f64) -> Result<f64> {
        let (id, bary) = self.locate(level, x, y)?;
        let verts = self.triangle_vertices(id);
        Ok(verts.iter().zip(bary).find(|(v, _)| **v == node).map_or(0.0, |(_, w)| w))
    }
}

pub fn hat_overlap_offsets() -> [Offset; 7] {
    HAT_OVERLAP_OFFSETS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centroid(g: &GridHierarchy, id: TriangleId) -> (f64, f64) {
        let v = g.triangle_vertices(id);
        let h = g.h(id.level);
        let x = v.iter().map(|p| p.0 as f64).sum::<f64>() * h / 3.0;
        let y = v.iter().map(|p| p.1 as f64).sum::<f64>() * h / 3.0;
        (x, y)
    }

    #[test]
    fn node_counts_follow_doubling() {
        let g = GridHierarchy::new(5, 4).unwrap();
        assert_eq!([g.n(0), g.n(1), g.n(2), g.n(3)], [5, 9, 17, 33]);
        assert_eq!(g.h(3), 1.0 / 32.0);
        for k in 0..3 {
            assert_eq!(g.n(k + 1), 2 * g.n(k) - 1);
        }
    }

    #[test]
    fn rejects_degenerate_hierarchies() {
        assert!(GridHierarchy::new(2, 3).is_err());
        assert!(GridHierarchy::new(5, 0).is_err());
        assert!(GridHierarchy::new(5, 40).is_err());
    }

    #[test]
    fn overlap_offsets_match_brute_force_support_intersection() {
        let g = GridHierarchy::new(5, 1).unwrap();
        let center = (2, 2);
        let mut found = Vec::new();
        for a in 0..5usize {
            for b in 0..5usize {
                // integrate the product of hats with a centroid rule on each triangle of a
                // once-refined grid; positive iff the supports share area
                let fine = GridHierarchy::new(5, 3).unwrap();
                let mut s = 0.0;
                for t in fine.triangles(2) {
                    let (x, y) = centroid(&fine, t);
                    s += g.hat_value(0, center, x, y).unwrap() * g.hat_value(0, (a, b), x, y).unwrap();
                }
                if s > 1e-12 {
                    found.push((a as isize - 2, b as isize - 2));
                }
            }
        }
        let mut expected = HAT_OVERLAP_OFFSETS.to_vec();
        expected.sort();
        found.sort();
        assert_eq!(found, expected);
        assert!(!found.contains(&(1, -1)) && !found.contains(&(-1, 1)));
    }

    #[test]
    fn node_patch_triangles_contain_the_node() {
        let g = GridHierarchy::new(5, 1).unwrap();
        let node = (2, 2);
        let mut owners = std::collections::HashSet::new();
        for (off, half) in NODE_PATCH {
            let owner = shift(node, off, 5).unwrap();
            let id = TriangleId::new(0, owner, half);
            assert!(g.triangle_vertices(id).contains(&node));
            owners.insert(id);
        }
        assert_eq!(owners.len(), 6);
        let touching = g.triangles(0).filter(|t| g.triangle_vertices(*t).contains(&node)).count();
        assert_eq!(touching, 6);
    }

    #[test]
    fn children_tile_their_parent() {
        let g = GridHierarchy::new(3, 2).unwrap();
        for parent in g.triangles(0) {
            let kids = g.children_of_triangle(parent).unwrap();
            let pv = g.triangle_vertices(parent).map(|(a, b)| (2 * a, 2 * b));
            let mut fine_nodes = std::collections::BTreeSet::new();
            for kid in kids {
                let (x, y) = centroid(&g, kid);
                let (owner, _) = g.locate(0, x, y).unwrap();
                assert_eq!(owner, parent);
                fine_nodes.extend(g.triangle_vertices(kid));
            }
            // three parent vertices plus three edge midpoints
            assert_eq!(fine_nodes.len(), 6);
            for v in pv {
                assert!(fine_nodes.contains(&v));
            }
        }
        assert!(g.children_of_triangle(TriangleId::new(1, (0, 0), Half::UpperLeft)).is_err());
    }

    #[test]
    fn locate_returns_consistent_barycentrics() {
        let g = GridHierarchy::new(5, 2).unwrap();
        for &(x, y) in &[(0.3, 0.7), (0.0, 0.0), (1.0, 1.0), (0.125, 0.0625), (0.9, 0.1)] {
            let (id, w) = g.locate(1, x, y).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(w.iter().all(|&v| v >= -1e-14));
            let v = g.triangle_vertices(id);
            let px: f64 = v.iter().zip(w).map(|(p, wi)| p.0 as f64 * g.h(1) * wi).sum();
            let py: f64 = v.iter().zip(w).map(|(p, wi)| p.1 as f64 * g.h(1) * wi).sum();
            assert!((px - x).abs() < 1e-14 && (py - y).abs() < 1e-14);
        }
        assert!(g.locate(0, 1.5, 0.5).is_err());
    }

    #[test]
    fn hats_form_a_partition_of_unity() {
        let g = GridHierarchy::new(5, 1).unwrap();
        for &(x, y) in &[(0.31, 0.77), (0.5, 0.5), (0.01, 0.99)] {
            let mut s = 0.0;
            for a in 0..5 {
                for b in 0..5 {
                    s += g.hat_value(0, (a, b), x, y).unwrap();
                }
            }
            assert!((s - 1.0).abs() < 1e-14);
        }
    }
}

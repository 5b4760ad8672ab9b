//! The finite-window darned lattice `E^j`.
//!
//! Lattice points of `2^{-j} Z^d` inside the window `[-W, W]^d` and outside `K`
//! become regular vertices; every lattice point inside `K` is collapsed into a
//! single star vertex `a*_j`. Two regular nearest neighbours are joined when the
//! segment between them misses `K`; a regular vertex is joined to the star when
//! at least one of its `2d` lattice edges meets `K`, whether or not the other
//! endpoint lies inside the window.
//!
//! Vertices are numbered densely in lexicographic coordinate order, with the star
//! last. Adjacency is stored in CSR form with sorted neighbour lists.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, DarningRegion};

pub type VertexId = u32;

const NO_VERTEX: u32 = u32::MAX;

/// What a vertex id refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexKind<'a> {
    /// Integer lattice coordinates; the position is `coords · 2^{-j}`.
    Regular(&'a [i32]),
    Star,
}

#[derive(Clone, Debug)]
pub struct DarnedLattice {
    j: u32,
    dim: usize,
    half_width: i32,
    region: Option<DarningRegion>,
    coords: Vec<i32>,
    offsets: Vec<usize>,
    neighbors: Vec<VertexId>,
    star: Option<VertexId>,
    /// Lattice points of `K` (the collapsed set `K_j`), flattened.
    collapsed: Vec<i32>,
    /// Dense index over the window box; `NO_VERTEX` marks collapsed points.
    index: Vec<u32>,
}

impl DarnedLattice {
    /// Builds `E^j` on the window `[-window_radius, window_radius]^d`.
    pub fn build(region: &DarningRegion, j: u32, window_radius: f64) -> Result<Self> {
        let required = 2.0 * region.extent(&vec![0.0; region.dim()])?.k0;
        if window_radius < required {
            return Err(Error::WindowTooSmall {
                window: window_radius,
                required,
            });
        }
        Self::construct(Some(region.clone()), region.dim(), j, window_radius)
    }

    /// The plain window lattice with no darning region and no star vertex.
    ///
    /// Debug mode: every downstream computation reduces to the classical simple
    /// random walk on the truncated lattice.
    pub fn build_plain(dim: usize, j: u32, window_radius: f64) -> Result<Self> {
        if dim < 1 {
            return Err(Error::InvalidLattice("dimension must be positive".into()));
        }
        Self::construct(None, dim, j, window_radius)
    }

    fn construct(region: Option<DarningRegion>, dim: usize, j: u32, window_radius: f64) -> Result<Self> {
        if !(1..=20).contains(&j) {
            return Err(Error::InvalidLattice(format!("mesh level j={j} outside 1..=20")));
        }
        let scale = (1u64 << j) as f64;
        let n_real = window_radius * scale;
        if !(n_real >= 1.0) || (n_real - n_real.round()).abs() > 1e-9 {
            return Err(Error::InvalidLattice(format!(
                "window radius {window_radius} is not a positive multiple of 2^-{j}"
            )));
        }
        let half_width = n_real.round() as i64;
        let side = (2 * half_width + 1) as u128;
        let total = side.pow(dim as u32);
        if total > u32::MAX as u128 / 2 {
            return Err(Error::InvalidLattice(format!("window holds {total} lattice points")));
        }
        let half_width = half_width as i32;
        let h = 1.0 / scale;
        let total = total as usize;

        let mut index = vec![NO_VERTEX; total];
        let mut coords = Vec::new();
        let mut collapsed = Vec::new();
        let mut c = vec![-half_width; dim];
        let mut pos = vec![0.0; dim];
        for slot in index.iter_mut() {
            for (p, ci) in pos.iter_mut().zip(&c) {
                *p = *ci as f64 * h;
            }
            let inside = region.as_ref().is_some_and(|k| k.contains_unchecked(&pos));
            if inside {
                collapsed.extend_from_slice(&c);
            } else {
                *slot = (coords.len() / dim) as u32;
                coords.extend_from_slice(&c);
            }
            // Lexicographic increment, last axis fastest.
            for axis in (0..dim).rev() {
                if c[axis] < half_width {
                    c[axis] += 1;
                    break;
                }
                c[axis] = -half_width;
            }
        }

        let num_regular = coords.len() / dim;
        let star = region.as_ref().map(|_| num_regular as VertexId);
        let mut offsets = Vec::with_capacity(num_regular + 2);
        let mut neighbors = Vec::with_capacity(num_regular * 2 * dim);
        let mut star_adjacent = Vec::new();
        let mut q = vec![0.0; dim];
        let mut nc = vec![0i32; dim];
        offsets.push(0);
        for v in 0..num_regular {
            let cv = &coords[v * dim..(v + 1) * dim];
            for (p, ci) in pos.iter_mut().zip(cv) {
                *p = *ci as f64 * h;
            }
            let start = neighbors.len();
            let mut touches_k = false;
            for axis in 0..dim {
                for step in [-1i32, 1] {
                    nc.copy_from_slice(cv);
                    nc[axis] += step;
                    q.copy_from_slice(&pos);
                    q[axis] = nc[axis] as f64 * h;
                    let crosses = region
                        .as_ref()
                        .is_some_and(|k| k.segment_intersects_unchecked(&pos, &q));
                    if crosses {
                        touches_k = true;
                    } else if nc[axis].abs() <= half_width {
                        let id = index[linear_index(&nc, half_width)];
                        debug_assert_ne!(id, NO_VERTEX);
                        neighbors.push(id);
                    }
                }
            }
            if touches_k {
                neighbors.push(star.expect("crossing edges need a region"));
                star_adjacent.push(v as VertexId);
            }
            neighbors[start..].sort_unstable();
            offsets.push(neighbors.len());
        }
        if star.is_some() {
            neighbors.extend_from_slice(&star_adjacent);
            offsets.push(neighbors.len());
        }

        let lattice = DarnedLattice {
            j,
            dim,
            half_width,
            region,
            coords,
            offsets,
            neighbors,
            star,
            collapsed,
            index,
        };
        let reached = lattice.reachable_from(0);
        if reached != lattice.num_vertices() {
            return Err(Error::Disconnected {
                reached,
                total: lattice.num_vertices(),
            });
        }
        Ok(lattice)
    }

    fn reachable_from(&self, source: VertexId) -> usize {
        if self.num_vertices() == 0 {
            return 0;
        }
        let mut seen = vec![false; self.num_vertices()];
        let mut queue = VecDeque::from([source]);
        seen[source as usize] = true;
        let mut count = 1;
        while let Some(v) = queue.pop_front() {
            for &w in self.neighbors(v) {
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    count += 1;
                    queue.push_back(w);
                }
            }
        }
        count
    }

    pub fn level(&self) -> u32 {
        self.j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Mesh size `2^{-j}`.
    pub fn mesh(&self) -> f64 {
        1.0 / (1u64 << self.j) as f64
    }

    /// Window half-width in lattice units.
    pub fn half_width(&self) -> i32 {
        self.half_width
    }

    pub fn window_radius(&self) -> f64 {
        self.half_width as f64 * self.mesh()
    }

    pub fn region(&self) -> Option<&DarningRegion> {
        self.region.as_ref()
    }

    pub fn num_vertices(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_regular(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn star(&self) -> Option<VertexId> {
        self.star
    }

    pub fn is_star(&self, v: VertexId) -> bool {
        self.star == Some(v)
    }

    pub fn contains_vertex(&self, v: VertexId) -> bool {
        (v as usize) < self.num_vertices()
    }

    pub(crate) fn check_vertex(&self, v: VertexId) -> Result<()> {
        if self.contains_vertex(v) {
            Ok(())
        } else {
            Err(Error::InvalidVertex(v))
        }
    }

    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        let v = v as usize;
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn are_adjacent(&self, a: VertexId, b: VertexId) -> bool {
        let (a, b) = if self.degree(a) <= self.degree(b) { (a, b) } else { (b, a) };
        self.neighbors(a).binary_search(&b).is_ok()
    }

    /// `v_j(x)`, the number of neighbours.
    pub fn degree(&self, v: VertexId) -> usize {
        let v = v as usize;
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Common weight `2^{-jd}/(2d)` of every edge.
    pub fn edge_weight(&self) -> f64 {
        self.mesh().powi(self.dim as i32) / (2 * self.dim) as f64
    }

    /// `m_j(x) = 2^{-jd}/(2d) · v_j(x)`.
    pub fn measure(&self, v: VertexId) -> f64 {
        self.edge_weight() * self.degree(v) as f64
    }

    pub fn total_measure(&self) -> f64 {
        self.edge_weight() * self.neighbors.len() as f64
    }

    pub fn kind(&self, v: VertexId) -> VertexKind<'_> {
        match self.coords(v) {
            Some(c) => VertexKind::Regular(c),
            None => VertexKind::Star,
        }
    }

    /// Integer lattice coordinates, `None` for the star.
    pub fn coords(&self, v: VertexId) -> Option<&[i32]> {
        let v = v as usize;
        (v < self.num_regular()).then(|| &self.coords[v * self.dim..(v + 1) * self.dim])
    }

    /// Position in `R^d`, `None` for the star.
    pub fn position(&self, v: VertexId) -> Option<Vec<f64>> {
        let h = self.mesh();
        self.coords(v).map(|c| c.iter().map(|&x| x as f64 * h).collect())
    }

    /// Regular vertex at the given integer coordinates, if it exists.
    pub fn vertex_at(&self, coords: &[i32]) -> Option<VertexId> {
        if coords.len() != self.dim || coords.iter().any(|c| c.abs() > self.half_width) {
            return None;
        }
        let id = self.index[linear_index(coords, self.half_width)];
        (id != NO_VERTEX).then_some(id)
    }

    /// Regular vertex at a point of `R^d`, if the point is a lattice point of the window outside `K`.
    pub fn vertex_at_point(&self, p: &[f64]) -> Option<VertexId> {
        let scale = (1u64 << self.j) as f64;
        let mut c = Vec::with_capacity(p.len());
        for &x in p {
            let s = x * scale;
            if (s - s.round()).abs() > 1e-9 {
                return None;
            }
            c.push(s.round() as i32);
        }
        self.vertex_at(&c)
    }

    /// Regular vertex nearest to `p` (ties broken by id).
    pub fn nearest_regular(&self, p: &[f64]) -> Option<VertexId> {
        (0..self.num_regular() as VertexId)
            .map(|v| (v, dist(&self.position(v).unwrap(), p)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(v, _)| v)
    }

    /// Whether a regular vertex lies on the window face `max_i |x_i| = W`.
    pub fn on_window_face(&self, v: VertexId) -> bool {
        self.coords(v)
            .is_some_and(|c| c.iter().any(|x| x.abs() == self.half_width))
    }

    /// Number of lattice points collapsed into the star (`#K_j`).
    pub fn collapsed_count(&self) -> usize {
        self.collapsed.len() / self.dim
    }

    /// Integer coordinates of the collapsed points `K_j`.
    pub fn collapsed_points(&self) -> impl Iterator<Item = &[i32]> {
        self.collapsed.chunks_exact(self.dim)
    }

    /// Whether a lattice point (possibly outside the window) lies in `K`.
    pub fn point_in_region(&self, coords: &[i32]) -> bool {
        let h = self.mesh();
        let p: Vec<f64> = coords.iter().map(|&c| c as f64 * h).collect();
        self.region.as_ref().is_some_and(|k| k.contains_unchecked(&p))
    }

    /// Whether the lattice edge from `coords` one step along `axis` (sign `step`) meets `K`.
    pub fn lattice_edge_meets_region(&self, coords: &[i32], axis: usize, step: i32) -> bool {
        let Some(k) = &self.region else { return false };
        let h = self.mesh();
        let p: Vec<f64> = coords.iter().map(|&c| c as f64 * h).collect();
        let mut q = p.clone();
        q[axis] += step as f64 * h;
        k.segment_intersects_unchecked(&p, &q)
    }

    pub(crate) fn raw_parts(&self) -> (&[i32], &[usize], &[VertexId], &[i32]) {
        (&self.coords, &self.offsets, &self.neighbors, &self.collapsed)
    }

    pub(crate) fn from_raw_parts(
        region: Option<DarningRegion>,
        dim: usize,
        j: u32,
        half_width: i32,
        coords: Vec<i32>,
        offsets: Vec<usize>,
        neighbors: Vec<VertexId>,
        collapsed: Vec<i32>,
    ) -> Result<Self> {
        let side = (2 * half_width as usize + 1).pow(dim as u32);
        let mut index = vec![NO_VERTEX; side];
        let num_regular = coords.len() / dim;
        for (v, c) in coords.chunks_exact(dim).enumerate() {
            if c.iter().any(|x| x.abs() > half_width) {
                return Err(Error::GraphFormat(format!("vertex {v} outside the window")));
            }
            index[linear_index(c, half_width)] = v as u32;
        }
        let expected = num_regular + usize::from(region.is_some());
        if offsets.len() != expected + 1 || offsets.last() != Some(&neighbors.len()) {
            return Err(Error::GraphFormat("inconsistent CSR offsets".into()));
        }
        if neighbors.iter().any(|&w| w as usize >= expected) {
            return Err(Error::GraphFormat("neighbour id out of range".into()));
        }
        let star = region.as_ref().map(|_| num_regular as VertexId);
        Ok(DarnedLattice {
            j,
            dim,
            half_width,
            region,
            coords,
            offsets,
            neighbors,
            star,
            collapsed,
            index,
        })
    }
}

fn linear_index(c: &[i32], half_width: i32) -> usize {
    let side = (2 * half_width + 1) as usize;
    c.iter()
        .fold(0usize, |acc, &x| acc * side + (x + half_width) as usize)
}

/// Graph distances `d_j(source, ·)`: `2^{-j}` times the breadth-first hop count.
#[derive(Clone, Debug)]
pub struct MetricTable {
    pub source: VertexId,
    pub mesh: f64,
    pub hops: Vec<u32>,
}

impl MetricTable {
    pub fn distance(&self, v: VertexId) -> f64 {
        self.hops[v as usize] as f64 * self.mesh
    }
}

pub fn graph_distance(g: &DarnedLattice, source: VertexId) -> Result<MetricTable> {
    g.check_vertex(source)?;
    let mut hops = vec![u32::MAX; g.num_vertices()];
    hops[source as usize] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(v) = queue.pop_front() {
        let next = hops[v as usize] + 1;
        for &w in g.neighbors(v) {
            if hops[w as usize] == u32::MAX {
                hops[w as usize] = next;
                queue.push_back(w);
            }
        }
    }
    Ok(MetricTable {
        source,
        mesh: g.mesh(),
        hops,
    })
}

/// The quotient metric `ρ` on `E`, with cached distances to `K`.
///
/// `ρ(x, y) = min(|x - y|, dist(x, K) + dist(y, K))`, `ρ(x, a*) = dist(x, K)`.
#[derive(Clone, Debug)]
pub struct QuotientMetric {
    dim: usize,
    positions: Vec<f64>,
    to_region: Vec<f64>,
    star: Option<VertexId>,
}

impl QuotientMetric {
    pub fn new(g: &DarnedLattice) -> Self {
        let h = g.mesh();
        let positions: Vec<f64> = g.raw_parts().0.iter().map(|&c| c as f64 * h).collect();
        let to_region = match g.region() {
            Some(k) => positions
                .chunks_exact(g.dim())
                .map(|p| k.distance_unchecked(p))
                .collect(),
            None => vec![f64::INFINITY; g.num_regular()],
        };
        QuotientMetric {
            dim: g.dim(),
            positions,
            to_region,
            star: g.star(),
        }
    }

    pub fn distance(&self, x: VertexId, y: VertexId) -> f64 {
        if x == y {
            return 0.0;
        }
        if Some(x) == self.star {
            return self.to_region[y as usize];
        }
        if Some(y) == self.star {
            return self.to_region[x as usize];
        }
        let (a, b) = (x as usize * self.dim, y as usize * self.dim);
        let euclid = dist(&self.positions[a..a + self.dim], &self.positions[b..b + self.dim]);
        euclid.min(self.to_region[x as usize] + self.to_region[y as usize])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Position of a regular vertex, `None` for the star.
    pub fn position(&self, v: VertexId) -> Option<&[f64]> {
        if Some(v) == self.star {
            return None;
        }
        let a = v as usize * self.dim;
        Some(&self.positions[a..a + self.dim])
    }

    /// Distance from a vertex to `K` (zero for the star).
    pub fn to_region(&self, v: VertexId) -> f64 {
        if Some(v) == self.star {
            0.0
        } else {
            self.to_region[v as usize]
        }
    }
}

pub fn quotient_metric(g: &DarnedLattice, x: VertexId, y: VertexId) -> Result<f64> {
    g.check_vertex(x)?;
    g.check_vertex(y)?;
    let to_k = |v: VertexId| -> f64 {
        match (g.region(), g.position(v)) {
            (_, None) => 0.0,
            (Some(k), Some(p)) => k.distance_unchecked(&p),
            (None, Some(_)) => f64::INFINITY,
        }
    };
    if x == y {
        return Ok(0.0);
    }
    Ok(match (g.position(x), g.position(y)) {
        (Some(p), Some(q)) => dist(&p, &q).min(to_k(x) + to_k(y)),
        (None, _) => to_k(y),
        (_, None) => to_k(x),
    })
}

/// `S^j`: regular vertices whose `2d` neighbours are all regular lattice neighbours.
///
/// Such a vertex has full degree `2d` and is not adjacent to the star, so the
/// generator there is the plain second-difference operator.
#[derive(Clone, Debug)]
pub struct InteriorSet {
    pub members: Vec<VertexId>,
    pub mask: Vec<bool>,
    /// `m_j(E^j \ S^j)`.
    pub complement_measure: f64,
}

pub fn interior_set(g: &DarnedLattice) -> InteriorSet {
    let full = 2 * g.dim();
    let mask: Vec<bool> = (0..g.num_vertices() as VertexId)
        .map(|v| {
            !g.is_star(v) && g.degree(v) == full && g.star().is_none_or(|s| !g.are_adjacent(v, s))
        })
        .collect();
    let members = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(v, _)| v as VertexId)
        .collect();
    let complement_measure = (0..g.num_vertices() as VertexId)
        .filter(|&v| !mask[v as usize])
        .map(|v| g.measure(v))
        .sum();
    InteriorSet {
        members,
        mask,
        complement_measure,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StarDegreeScaling {
    pub points: Vec<(u32, usize)>,
    /// Least-squares slope of `log2 v_j(a*)` against `j`.
    pub slope: f64,
}

/// Star degree `v_j(a*_j)` for `j_min..=j_max`, each level on the given window.
pub fn star_degree_scaling(
    region: &DarningRegion,
    j_min: u32,
    j_max: u32,
    window_radius: f64,
) -> Result<StarDegreeScaling> {
    if j_min > j_max {
        return Err(Error::InvalidArgument(format!("empty level range {j_min}..={j_max}")));
    }
    let mut points = Vec::new();
    for j in j_min..=j_max {
        let g = DarnedLattice::build(region, j, window_radius)?;
        let star = g.star().expect("darned lattice has a star");
        points.push((j, g.degree(star)));
    }
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(j, v)| (j as f64, (v as f64).log2()))
        .collect();
    Ok(StarDegreeScaling {
        slope: crate::stats::least_squares_slope(&xy),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball_quarter() -> DarningRegion {
        DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap()
    }

    #[test]
    fn star_edge_from_crossing_edge() {
        let g = DarnedLattice::build(&ball_quarter(), 1, 2.0).unwrap();
        let v = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let star = g.star().unwrap();
        assert!(g.are_adjacent(v, star));
        // The origin is collapsed.
        assert_eq!(g.vertex_at(&[0, 0]), None);
        assert_eq!(g.collapsed_count(), 1);
    }

    #[test]
    fn far_vertex_has_full_degree_and_measure() {
        let g = DarnedLattice::build(&ball_quarter(), 2, 2.0).unwrap();
        let v = g.vertex_at_point(&[1.0, 1.0]).unwrap();
        assert_eq!(g.degree(v), 4);
        assert_eq!(g.measure(v), 0.25f64.powi(2) / 4.0 * 4.0);
    }

    #[test]
    fn adjacency_symmetric_without_loops() {
        let g = DarnedLattice::build(&ball_quarter(), 3, 2.0).unwrap();
        for v in 0..g.num_vertices() as VertexId {
            let ns = g.neighbors(v);
            assert!(ns.windows(2).all(|w| w[0] < w[1]));
            for &w in ns {
                assert_ne!(v, w);
                assert!(g.neighbors(w).binary_search(&v).is_ok());
            }
            if !g.is_star(v) {
                assert!(g.degree(v) <= 4);
            }
        }
        let handshake = g.edge_weight() * 2.0 * g.num_edges() as f64;
        assert!((g.total_measure() - handshake).abs() < 1e-12);
    }

    #[test]
    fn window_errors() {
        assert!(matches!(
            DarnedLattice::build(&ball_quarter(), 2, 1.0),
            Err(Error::WindowTooSmall { .. })
        ));
        assert!(DarnedLattice::build(&ball_quarter(), 2, 2.1).is_err());
    }

    #[test]
    fn distances_through_star() {
        let g = DarnedLattice::build(&ball_quarter(), 2, 2.0).unwrap();
        let a = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let b = g.vertex_at_point(&[-0.5, 0.0]).unwrap();
        let star = g.star().unwrap();
        assert!(g.are_adjacent(a, star) && g.are_adjacent(b, star));
        let table = graph_distance(&g, a).unwrap();
        assert_eq!(table.distance(a), 0.0);
        assert_eq!(table.distance(b), 0.5);
        let n = g.neighbors(a)[0];
        assert_eq!(table.distance(n), 0.25);
    }

    #[test]
    fn quotient_metric_examples() {
        let k = DarningRegion::ball(vec![0.0, 0.0], 1.0).unwrap();
        let g = DarnedLattice::build(&k, 1, 4.0).unwrap();
        let star = g.star().unwrap();
        assert_eq!(quotient_metric(&g, star, star).unwrap(), 0.0);
        let a = g.vertex_at_point(&[2.0, 0.0]).unwrap();
        let b = g.vertex_at_point(&[-2.0, 0.0]).unwrap();
        assert_eq!(quotient_metric(&g, a, b).unwrap(), 2.0);
        assert_eq!(quotient_metric(&g, a, star).unwrap(), 1.0);
        let cached = QuotientMetric::new(&g);
        assert_eq!(cached.distance(a, b), 2.0);
        assert_eq!(cached.distance(star, a), 1.0);
    }

    #[test]
    fn interior_set_excludes_star_and_face() {
        let g = DarnedLattice::build(&ball_quarter(), 2, 2.0).unwrap();
        let s = interior_set(&g);
        assert!(!s.mask[g.star().unwrap() as usize]);
        assert!(s.mask[g.vertex_at_point(&[1.0, 1.0]).unwrap() as usize]);
        assert!(!s.mask[g.vertex_at_point(&[2.0, 0.0]).unwrap() as usize]);
        assert!(s.complement_measure > 0.0);
    }

    #[test]
    fn plain_lattice_is_classical() {
        let g = DarnedLattice::build_plain(2, 2, 1.0).unwrap();
        assert_eq!(g.star(), None);
        assert_eq!(g.num_vertices(), 81);
        assert_eq!(g.num_edges(), 2 * 9 * 8);
        let origin = g.vertex_at(&[0, 0]).unwrap();
        assert_eq!(g.degree(origin), 4);
    }

    #[test]
    fn refinement_keeps_vertices() {
        let k = ball_quarter();
        let coarse = DarnedLattice::build(&k, 2, 2.0).unwrap();
        let fine = DarnedLattice::build(&k, 3, 2.0).unwrap();
        for v in 0..coarse.num_regular() as VertexId {
            let c: Vec<i32> = coarse.coords(v).unwrap().iter().map(|x| 2 * x).collect();
            assert!(fine.vertex_at(&c).is_some());
        }
    }
}

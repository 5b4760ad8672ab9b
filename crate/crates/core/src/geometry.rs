//! Darning regions and the exact geometric predicates used by the lattice builder.
//!
//! Every shape supports closed-form point membership, segment intersection and
//! Euclidean distance. Regions are closed sets: a segment that only touches the
//! boundary intersects the region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for intersection tests, measured in units of the segment length.
///
/// Lattice coordinates are dyadic, so segments frequently graze region
/// boundaries exactly; the tolerance makes such contacts count as hits.
pub const SEGMENT_TOL: f64 = 1e-12;

/// Absolute slack for point membership.
pub const POINT_TOL: f64 = 1e-12;

/// A point of `R^d` with finite coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidPoint("point has no coordinates".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidPoint(format!("non-finite coordinate in {coords:?}")));
        }
        Ok(Point(coords))
    }

    pub fn origin(dim: usize) -> Self {
        Point(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Point {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.0
    }
}

/// The closed halfspace `normal · x <= offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub normal: Vec<f64>,
    pub offset: f64,
}

/// Raw shape description, as it appears in run-config files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    #[serde(rename = "box")]
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    #[serde(rename = "polytope")]
    HalfspacePolytope { halfspaces: Vec<Halfspace> },
    #[serde(rename = "polygon")]
    Polygon2D { vertices: Vec<[f64; 2]> },
}

/// Smallest integer half-side of an origin-centred cube holding the region and a start point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extent {
    pub k0: f64,
}

/// A validated compact darning region `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Shape", into = "Shape")]
pub struct DarningRegion {
    shape: Shape,
    dim: usize,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
    /// Extreme points: box corners, polytope vertices or polygon vertices.
    corners: Vec<Vec<f64>>,
    interior: Vec<f64>,
}

impl TryFrom<Shape> for DarningRegion {
    type Error = Error;
    fn try_from(shape: Shape) -> Result<Self> {
        DarningRegion::new(shape)
    }
}

impl From<DarningRegion> for Shape {
    fn from(r: DarningRegion) -> Shape {
        r.shape
    }
}

impl DarningRegion {
    pub fn new(shape: Shape) -> Result<Self> {
        match shape {
            Shape::AxisBox { lo, hi } => Self::axis_box(lo, hi),
            Shape::Ball { center, radius } => Self::ball(center, radius),
            Shape::HalfspacePolytope { halfspaces } => Self::polytope(halfspaces),
            Shape::Polygon2D { vertices } => Self::polygon(vertices),
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        check_dim(center.len())?;
        check_finite(&center)?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidRegion(format!("ball radius must be positive, got {radius}")));
        }
        let bbox_lo = center.iter().map(|c| c - radius).collect();
        let bbox_hi = center.iter().map(|c| c + radius).collect();
        Ok(DarningRegion {
            dim: center.len(),
            bbox_lo,
            bbox_hi,
            corners: Vec::new(),
            interior: center.clone(),
            shape: Shape::Ball { center, radius },
        })
    }

    pub fn axis_box(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim(lo.len())?;
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        check_finite(&lo)?;
        check_finite(&hi)?;
        if lo.iter().zip(&hi).any(|(l, h)| l >= h) {
            return Err(Error::InvalidRegion("box needs lo < hi on every axis".into()));
        }
        let d = lo.len();
        let corners = (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|i| if mask >> i & 1 == 1 { hi[i] } else { lo[i] })
                    .collect()
            })
            .collect();
        let interior = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        Ok(DarningRegion {
            dim: d,
            bbox_lo: lo.clone(),
            bbox_hi: hi.clone(),
            corners,
            interior,
            shape: Shape::AxisBox { lo, hi },
        })
    }

    /// Bounded intersection of halfspaces. Normals are normalised on construction.
    pub fn polytope(halfspaces: Vec<Halfspace>) -> Result<Self> {
        let first = halfspaces
            .first()
            .ok_or_else(|| Error::InvalidRegion("polytope needs at least one halfspace".into()))?;
        let d = first.normal.len();
        check_dim(d)?;
        let mut normalized = Vec::with_capacity(halfspaces.len());
        for h in &halfspaces {
            if h.normal.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: h.normal.len(),
                });
            }
            check_finite(&h.normal)?;
            if !h.offset.is_finite() {
                return Err(Error::InvalidRegion("non-finite halfspace offset".into()));
            }
            let norm = dot(&h.normal, &h.normal).sqrt();
            if norm == 0.0 {
                return Err(Error::InvalidRegion("halfspace normal is zero".into()));
            }
            normalized.push(Halfspace {
                normal: h.normal.iter().map(|n| n / norm).collect(),
                offset: h.offset / norm,
            });
        }

        // Bounding-box probe: clip against a huge box; a bounded polytope has no
        // vertex on the probe box.
        const PROBE: f64 = 1e6;
        let mut probed = normalized.clone();
        for i in 0..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            probed.push(Halfspace {
                normal: e.clone(),
                offset: PROBE,
            });
            e[i] = -1.0;
            probed.push(Halfspace {
                normal: e,
                offset: PROBE,
            });
        }
        let vertices = polytope_vertices(&probed, d);
        if vertices.is_empty() {
            return Err(Error::InvalidRegion("polytope is empty".into()));
        }
        if vertices
            .iter()
            .any(|v| v.iter().any(|c| c.abs() >= PROBE * (1.0 - 1e-9)))
        {
            return Err(Error::InvalidRegion("polytope is unbounded".into()));
        }
        let mut centroid = vec![0.0; d];
        for v in &vertices {
            for (c, x) in centroid.iter_mut().zip(v) {
                *c += x / vertices.len() as f64;
            }
        }
        if normalized
            .iter()
            .any(|h| dot(&h.normal, &centroid) - h.offset > -1e-9)
        {
            return Err(Error::InvalidRegion("polytope has empty interior".into()));
        }
        let (bbox_lo, bbox_hi) = bbox_of(&vertices, d);
        Ok(DarningRegion {
            dim: d,
            bbox_lo,
            bbox_hi,
            corners: vertices,
            interior: centroid,
            shape: Shape::HalfspacePolytope {
                halfspaces: normalized,
            },
        })
    }

    /// Simple closed polygon in the plane, given as a vertex loop (no repeated endpoint).
    pub fn polygon(vertices: Vec<[f64; 2]>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(Error::InvalidRegion("polygon needs at least three vertices".into()));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::InvalidRegion("non-finite polygon vertex".into()));
        }
        let area: f64 = (0..n)
            .map(|i| {
                let a = vertices[i];
                let b = vertices[(i + 1) % n];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            * 0.5;
        if area.abs() < 1e-12 {
            return Err(Error::InvalidRegion("polygon has zero area".into()));
        }
        for i in 0..n {
            if vertices[i] == vertices[(i + 1) % n] {
                return Err(Error::InvalidRegion("polygon has a repeated vertex".into()));
            }
            for k in i + 1..n {
                let adjacent = k == i + 1 || (i == 0 && k == n - 1);
                if adjacent {
                    continue;
                }
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                let (c, e) = (vertices[k], vertices[(k + 1) % n]);
                if segment_segment_distance(a, b, c, e) <= 1e-12 {
                    return Err(Error::InvalidRegion("polygon is not simple".into()));
                }
            }
        }
        let corners: Vec<Vec<f64>> = vertices.iter().map(|v| v.to_vec()).collect();
        let (bbox_lo, bbox_hi) = bbox_of(&corners, 2);
        let interior = polygon_interior_point(&vertices, &bbox_lo, &bbox_hi);
        Ok(DarningRegion {
            dim: 2,
            bbox_lo,
            bbox_hi,
            corners,
            interior,
            shape: Shape::Polygon2D { vertices },
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn bounding_box(&self) -> (&[f64], &[f64]) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    /// A point of `K`, used as the representative value of functions on the collapsed region.
    pub fn interior_point(&self) -> &[f64] {
        &self.interior
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: p.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, p: &[f64]) -> Result<bool> {
        self.check(p)?;
        Ok(self.contains_unchecked(p))
    }

    pub(crate) fn contains_unchecked(&self, p: &[f64]) -> bool {
        if p
            .iter()
            .zip(self.bbox_lo.iter().zip(&self.bbox_hi))
            .any(|(x, (lo, hi))| *x < lo - POINT_TOL || *x > hi + POINT_TOL)
        {
            return false;
        }
        match &self.shape {
            Shape::AxisBox { .. } => true,
            Shape::Ball { center, radius } => dist(p, center) - radius <= POINT_TOL,
            Shape::HalfspacePolytope { halfspaces } => halfspaces
                .iter()
                .all(|h| dot(&h.normal, p) - h.offset <= POINT_TOL),
            Shape::Polygon2D { vertices } => {
                let q = [p[0], p[1]];
                point_in_polygon(vertices, q) || polygon_boundary_distance(vertices, q) <= POINT_TOL
            }
        }
    }

    /// Whether the closed segment `[p, q]` meets the region.
    pub fn segment_intersects(&self, p: &[f64], q: &[f64]) -> Result<bool> {
        self.check(p)?;
        self.check(q)?;
        if p == q {
            return Err(Error::DegenerateSegment);
        }
        Ok(self.segment_intersects_unchecked(p, q))
    }

    pub(crate) fn segment_intersects_unchecked(&self, p: &[f64], q: &[f64]) -> bool {
        let len = dist(p, q);
        let slack = SEGMENT_TOL * len;
        // Cheap rejection on the bounding box.
        for i in 0..self.dim {
            let (a, b) = if p[i] <= q[i] { (p[i], q[i]) } else { (q[i], p[i]) };
            if b < self.bbox_lo[i] - slack - POINT_TOL || a > self.bbox_hi[i] + slack + POINT_TOL {
                return false;
            }
        }
        if self.contains_unchecked(p) || self.contains_unchecked(q) {
            return true;
        }
        match &self.shape {
            Shape::Ball { center, radius } => {
                let dir: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
                let rel: Vec<f64> = center.iter().zip(p).map(|(a, b)| a - b).collect();
                let t = (dot(&rel, &dir) / (len * len)).clamp(0.0, 1.0);
                let closest: Vec<f64> = p.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
                dist(&closest, center) <= radius + slack
            }
            Shape::AxisBox { lo, hi } => {
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                for i in 0..self.dim {
                    let d = q[i] - p[i];
                    if d == 0.0 {
                        if p[i] < lo[i] - slack || p[i] > hi[i] + slack {
                            return false;
                        }
                        continue;
                    }
                    let mut ta = (lo[i] - slack - p[i]) / d;
                    let mut tb = (hi[i] + slack - p[i]) / d;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                    }
                    t0 = t0.max(ta);
                    t1 = t1.min(tb);
                    if t0 > t1 {
                        return false;
                    }
                }
                true
            }
            Shape::HalfspacePolytope { halfspaces } => {
                let dir: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
                let (mut t0, mut t1) = (0.0f64, 1.0f64);
                for h in halfspaces {
                    let a = dot(&h.normal, &dir);
                    let c = h.offset + slack - dot(&h.normal, p);
                    if a == 0.0 {
                        if c < 0.0 {
                            return false;
                        }
                    } else if a > 0.0 {
                        t1 = t1.min(c / a);
                    } else {
                        t0 = t0.max(c / a);
                    }
                    if t0 > t1 {
                        return false;
                    }
                }
                true
            }
            Shape::Polygon2D { vertices } => {
                let a = [p[0], p[1]];
                let b = [q[0], q[1]];
                let n = vertices.len();
                (0..n).any(|i| {
                    segment_segment_distance(a, b, vertices[i], vertices[(i + 1) % n]) <= slack
                })
            }
        }
    }

    /// Euclidean distance from `p` to the region; zero exactly on the region.
    pub fn distance_to(&self, p: &[f64]) -> Result<f64> {
        self.check(p)?;
        Ok(self.distance_unchecked(p))
    }

    pub(crate) fn distance_unchecked(&self, p: &[f64]) -> f64 {
        if self.contains_unchecked(p) {
            return 0.0;
        }
        match &self.shape {
            Shape::Ball { center, radius } => (dist(p, center) - radius).max(0.0),
            Shape::AxisBox { lo, hi } => p
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(x, (l, h))| {
                    let g = (l - x).max(x - h).max(0.0);
                    g * g
                })
                .sum::<f64>()
                .sqrt(),
            Shape::HalfspacePolytope { halfspaces } => polytope_distance(halfspaces, p, self.dim),
            Shape::Polygon2D { vertices } => polygon_boundary_distance(vertices, [p[0], p[1]]),
        }
    }

    /// Largest distance from `p` to a point of the region.
    pub fn farthest_distance(&self, p: &[f64]) -> Result<f64> {
        self.check(p)?;
        Ok(match &self.shape {
            Shape::Ball { center, radius } => dist(p, center) + radius,
            _ => self
                .corners
                .iter()
                .map(|c| dist(p, c))
                .fold(0.0, f64::max),
        })
    }

    /// Smallest integer `k0 >= 1` with `K ∪ {x0} ⊂ [-k0, k0]^d`.
    pub fn extent(&self, x0: &[f64]) -> Result<Extent> {
        self.check(x0)?;
        let reach = self
            .bbox_lo
            .iter()
            .chain(&self.bbox_hi)
            .chain(x0)
            .map(|c| c.abs())
            .fold(0.0, f64::max);
        Ok(Extent {
            k0: reach.ceil().max(1.0),
        })
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidRegion(format!("dimension must be at least 2, got {d}")));
    }
    Ok(())
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidRegion(format!("non-finite coordinate in {v:?}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn bbox_of(points: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for p in points {
        for i in 0..d {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

fn combinations(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k == 0 || k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        let mut i = k;
        while i > 0 && idx[i - 1] == i - 1 + n - k {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn polytope_vertices(halfspaces: &[Halfspace], d: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    combinations(halfspaces.len(), d, |idx| {
        let a = idx.iter().map(|&i| halfspaces[i].normal.clone()).collect();
        let b = idx.iter().map(|&i| halfspaces[i].offset).collect();
        if let Some(x) = solve_small(a, b) {
            let feasible = halfspaces
                .iter()
                .all(|h| dot(&h.normal, &x) - h.offset <= 1e-9 * (1.0 + h.offset.abs()));
            if feasible && !out.iter().any(|v| dist(v, &x) < 1e-9) {
                out.push(x);
            }
        }
    });
    out
}

/// Exact distance to a polytope from outside: the nearest point is the projection
/// onto the affine hull of some face, i.e. onto the intersection of at most `d`
/// supporting hyperplanes.
fn polytope_distance(halfspaces: &[Halfspace], p: &[f64], d: usize) -> f64 {
    let mut best = f64::INFINITY;
    for k in 1..=d.min(halfspaces.len()) {
        combinations(halfspaces.len(), k, |idx| {
            let gram = idx
                .iter()
                .map(|&r| {
                    idx.iter()
                        .map(|&s| dot(&halfspaces[r].normal, &halfspaces[s].normal))
                        .collect()
                })
                .collect();
            let rhs = idx
                .iter()
                .map(|&r| dot(&halfspaces[r].normal, p) - halfspaces[r].offset)
                .collect();
            if let Some(lambda) = solve_small(gram, rhs) {
                let mut x = p.to_vec();
                for (l, &r) in lambda.iter().zip(idx) {
                    for (xi, ni) in x.iter_mut().zip(&halfspaces[r].normal) {
                        *xi -= l * ni;
                    }
                }
                if halfspaces
                    .iter()
                    .all(|h| dot(&h.normal, &x) - h.offset <= 1e-9)
                {
                    best = best.min(dist(p, &x));
                }
            }
        });
    }
    best
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    };
    let c = [a[0] + t * d[0], a[1] + t * d[1]];
    ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt()
}

fn segment_segment_distance(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

fn point_in_polygon(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (vertices[i], vertices[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn polygon_boundary_distance(vertices: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let n = vertices.len();
    (0..n)
        .map(|i| point_segment_distance(p, vertices[i], vertices[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

fn polygon_interior_point(vertices: &[[f64; 2]], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    // Scan horizontal lines at irrational-ish heights and take the midpoint of the
    // first inside interval.
    for k in 1..64 {
        let y = lo[1] + (hi[1] - lo[1]) * (k as f64 * 0.618_033_988_749_895).fract();
        let n = vertices.len();
        let mut xs: Vec<f64> = (0..n)
            .filter_map(|i| {
                let (a, b) = (vertices[i], vertices[(i + 1) % n]);
                if (a[1] > y) != (b[1] > y) {
                    Some(a[0] + (y - a[1]) * (b[0] - a[0]) / (b[1] - a[1]))
                } else {
                    None
                }
            })
            .collect();
        xs.sort_by(f64::total_cmp);
        if xs.len() >= 2 && xs[1] - xs[0] > 1e-9 {
            return vec![0.5 * (xs[0] + xs[1]), y];
        }
    }
    vec![vertices[0][0], vertices[0][1]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ball(r: f64) -> DarningRegion {
        DarningRegion::ball(vec![0.0, 0.0], r).unwrap()
    }

    fn unit_box() -> DarningRegion {
        DarningRegion::axis_box(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap()
    }

    #[test]
    fn membership_examples() {
        assert!(ball(1.0).contains(&[0.0, 0.0]).unwrap());
        assert!(ball(1.0).contains(&[1.0, 0.0]).unwrap());
        assert!(!unit_box().contains(&[2.0, 0.0]).unwrap());
        assert!(matches!(
            ball(1.0).contains(&[0.0, 0.0, 0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn segment_examples() {
        let k = ball(0.25);
        assert!(!k.segment_intersects(&[0.5, 0.0], &[0.5, 0.5]).unwrap());
        assert!(k.segment_intersects(&[-0.5, 0.0], &[0.5, 0.0]).unwrap());
        assert!(unit_box().segment_intersects(&[1.0, 2.0], &[1.0, -2.0]).unwrap());
        assert!(matches!(
            k.segment_intersects(&[0.5, 0.0], &[0.5, 0.0]),
            Err(Error::DegenerateSegment)
        ));
    }

    #[test]
    fn tangent_segment_counts() {
        // Touches the ball of radius 1/4 at (0, 1/4).
        let k = ball(0.25);
        assert!(k.segment_intersects(&[-0.5, 0.25], &[0.5, 0.25]).unwrap());
        assert!(!k.segment_intersects(&[-0.5, 0.2500001], &[0.5, 0.2500001]).unwrap());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(ball(1.0).distance_to(&[2.0, 0.0]).unwrap(), 1.0);
        assert_eq!(ball(1.0).distance_to(&[0.5, 0.0]).unwrap(), 0.0);
        assert!((unit_box().distance_to(&[2.0, 2.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn extent_examples() {
        assert_eq!(ball(0.25).extent(&[0.5, 0.0]).unwrap().k0, 1.0);
        assert_eq!(unit_box().extent(&[3.0, 0.0]).unwrap().k0, 3.0);
        let shifted = DarningRegion::ball(vec![2.0, 0.0], 1.0).unwrap();
        assert_eq!(shifted.extent(&[0.0, 0.0]).unwrap().k0, 3.0);
    }

    #[test]
    fn invalid_regions_rejected() {
        assert!(DarningRegion::ball(vec![0.0, 0.0], 0.0).is_err());
        assert!(DarningRegion::ball(vec![0.0], 1.0).is_err());
        assert!(DarningRegion::axis_box(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        // Unbounded: a single halfspace.
        let half = vec![Halfspace {
            normal: vec![1.0, 0.0],
            offset: 0.0,
        }];
        assert!(DarningRegion::polytope(half).is_err());
        // Bow-tie is not simple.
        let bowtie = vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(DarningRegion::polygon(bowtie).is_err());
    }

    fn diamond() -> DarningRegion {
        // |x| + |y| <= 1
        let hs = [[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]
            .iter()
            .map(|n| Halfspace {
                normal: n.to_vec(),
                offset: 1.0,
            })
            .collect();
        DarningRegion::polytope(hs).unwrap()
    }

    #[test]
    fn polytope_queries() {
        let k = diamond();
        assert_eq!(k.bounding_box(), (&[-1.0, -1.0][..], &[1.0, 1.0][..]));
        assert!(k.contains(&[0.5, 0.5]).unwrap());
        assert!(!k.contains(&[0.6, 0.5]).unwrap());
        assert!((k.distance_to(&[1.0, 1.0]).unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((k.distance_to(&[3.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(k.segment_intersects(&[1.0, 1.0], &[1.0, -1.0]).unwrap());
        assert!(!k.segment_intersects(&[1.0, 1.0], &[2.0, 0.0]).unwrap());
    }

    #[test]
    fn polygon_queries() {
        // L-shaped polygon.
        let l = DarningRegion::polygon(vec![
            [0.0, 0.0],
            [2.0, 0.0],
            [2.0, 1.0],
            [1.0, 1.0],
            [1.0, 2.0],
            [0.0, 2.0],
        ])
        .unwrap();
        assert!(l.contains(&[0.5, 1.5]).unwrap());
        assert!(!l.contains(&[1.5, 1.5]).unwrap());
        assert!(l.contains(&[1.0, 1.5]).unwrap());
        assert!((l.distance_to(&[1.5, 1.5]).unwrap() - 0.5).abs() < 1e-12);
        assert!(l.segment_intersects(&[1.5, 1.5], &[0.5, 1.5]).unwrap());
        assert!(!l.segment_intersects(&[1.5, 1.5], &[1.5, 1.2]).unwrap());
        assert!(l.contains(l.interior_point()).unwrap());
    }

    #[test]
    fn config_json_round_trip() {
        let r: DarningRegion =
            serde_json::from_str(r#"{"shape":"ball","center":[0,0],"radius":0.25}"#).unwrap();
        assert_eq!(r, ball(0.25));
        let b: DarningRegion =
            serde_json::from_str(r#"{"shape":"box","lo":[-1,-1],"hi":[1,1]}"#).unwrap();
        assert_eq!(b, unit_box());
        assert!(serde_json::from_str::<DarningRegion>(r#"{"shape":"ball","center":[0,0],"radius":-1}"#).is_err());
    }

    fn regions() -> Vec<DarningRegion> {
        vec![
            ball(0.3),
            DarningRegion::axis_box(vec![-0.3, -0.2], vec![0.25, 0.4]).unwrap(),
            diamond(),
            DarningRegion::polygon(vec![[0.0, 0.0], [1.0, 0.0], [0.2, 0.3], [0.0, 1.0]]).unwrap(),
        ]
    }

    fn sampled_hit(k: &DarningRegion, p: &[f64], q: &[f64]) -> bool {
        (0..=10_000).any(|i| {
            let t = i as f64 / 10_000.0;
            let x: Vec<f64> = p.iter().zip(q).map(|(a, b)| a + t * (b - a)).collect();
            k.contains(&x).unwrap()
        })
    }

    proptest! {
        #[test]
        fn ball_segment_matches_dense_sampling(
            px in -1.0f64..1.0, py in -1.0f64..1.0, qx in -1.0f64..1.0, qy in -1.0f64..1.0,
        ) {
            let k = ball(0.3);
            let (p, q) = ([px, py], [qx, qy]);
            prop_assume!(dist(&p, &q) > 1e-6);
            let exact = k.segment_intersects(&p, &q).unwrap();
            // Resolution of the sampling oracle: skip near-tangent segments.
            let closest = {
                let dir = [qx - px, qy - py];
                let t = ((-px * dir[0] - py * dir[1]) / dot(&dir, &dir)).clamp(0.0, 1.0);
                dist(&[px + t * dir[0], py + t * dir[1]], &[0.0, 0.0])
            };
            prop_assume!((closest - 0.3).abs() > 1e-3);
            prop_assert_eq!(exact, sampled_hit(&k, &p, &q));
        }

        #[test]
        fn predicates_are_consistent(
            which in 0usize..4,
            px in -1.5f64..1.5, py in -1.5f64..1.5, qx in -1.5f64..1.5, qy in -1.5f64..1.5,
        ) {
            let k = &regions()[which];
            let (p, q) = ([px, py], [qx, qy]);
            prop_assume!(p != q);
            let forward = k.segment_intersects(&p, &q).unwrap();
            prop_assert_eq!(forward, k.segment_intersects(&q, &p).unwrap());
            if k.contains(&p).unwrap() {
                prop_assert!(forward);
            }
            let d = k.distance_to(&p).unwrap();
            prop_assert_eq!(d == 0.0, k.contains(&p).unwrap());
            prop_assert!(k.farthest_distance(&p).unwrap() >= d);
        }
    }
}

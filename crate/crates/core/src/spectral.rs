//! Exact Dirichlet form, generator and heat kernel on a finite window.
//!
//! The heat kernel is computed by uniformization: the walk has constant total
//! jump rate `λ`, so `P_t = Σ_n Poisson(λt; n) Q^n` with `Q` the jump kernel.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::RateMode;
use crate::error::{Error, Result};
use crate::geometry::DarningRegion;
use crate::lattice::{graph_distance, interior_set, DarnedLattice, QuotientMetric, VertexId};
use crate::rng::path_rng;
use crate::stats::least_squares_slope;
use statrs::function::gamma::ln_gamma;

/// Poisson mass beyond the truncation order.
pub const TRUNCATION_TAIL: f64 = 1e-12;
/// Default cap on the number of uniformization terms.
pub const DEFAULT_TERM_CAP: usize = 200_000;

/// A real function on the vertices of one lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexFunction(pub Vec<f64>);

impl VertexFunction {
    pub fn constant(g: &DarnedLattice, c: f64) -> Self {
        VertexFunction(vec![c; g.num_vertices()])
    }

    /// Samples a test function; the star takes the value at an interior point of `K`.
    pub fn sample(g: &DarnedLattice, f: &TestFunction) -> Self {
        let star_point = g.region().map(|k| k.interior_point().to_vec());
        VertexFunction(
            (0..g.num_vertices() as VertexId)
                .map(|v| match g.position(v) {
                    Some(p) => f.value(&p),
                    None => f.value(star_point.as_deref().expect("star implies region")),
                })
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    /// `⟨f, g⟩` in `L^2(m_j)`.
    pub fn inner(&self, other: &VertexFunction, g: &DarnedLattice) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .enumerate()
            .map(|(v, (a, b))| a * b * g.measure(v as VertexId))
            .sum()
    }

    /// `‖f‖_p` in `L^p(m_j)`.
    pub fn norm(&self, g: &DarnedLattice, p: f64) -> f64 {
        self.0
            .iter()
            .enumerate()
            .map(|(v, a)| a.abs().powf(p) * g.measure(v as VertexId))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

/// `E^j(f, f) = 2^{-(d-2)j}/(4d) Σ_{oriented edges} (f(x) - f(y))^2`.
pub fn dirichlet_energy(g: &DarnedLattice, f: &VertexFunction) -> f64 {
    let d = g.dim() as i32;
    let prefactor = 2f64.powi(-(d - 2) * g.level() as i32) / (4 * g.dim()) as f64;
    let sum: f64 = (0..g.num_vertices() as VertexId)
        .map(|x| {
            let fx = f.0[x as usize];
            g.neighbors(x)
                .iter()
                .map(|&y| (fx - f.0[y as usize]).powi(2))
                .sum::<f64>()
        })
        .sum();
    prefactor * sum
}

/// `L^j f(x) = 4^j Σ_{y~x} (f(y) - f(x)) / v_j(x)`.
pub fn generator_apply(g: &DarnedLattice, f: &VertexFunction) -> VertexFunction {
    let scale = 4f64.powi(g.level() as i32);
    VertexFunction(
        (0..g.num_vertices() as VertexId)
            .map(|x| {
                let fx = f.0[x as usize];
                let ns = g.neighbors(x);
                scale * ns.iter().map(|&y| f.0[y as usize] - fx).sum::<f64>() / ns.len() as f64
            })
            .collect(),
    )
}

/// The generator at the star for a class-G function, using its constant value on `K`.
pub fn star_generator(g: &DarnedLattice, f: &TestFunction) -> Result<f64> {
    let k = g.region().ok_or_else(|| Error::InvalidArgument("lattice has no star".into()))?;
    if !f.is_class_g(k) {
        return Err(Error::NotClassG);
    }
    let c = f.value(k.interior_point());
    let star = g.star().expect("region implies star");
    let ns = g.neighbors(star);
    let sum: f64 = ns.iter().map(|&y| f.value(&g.position(y).unwrap()) - c).sum();
    Ok(4f64.powi(g.level() as i32) * sum / ns.len() as f64)
}

/// Symbolic test functions with exact Laplacians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { value: f64 },
    /// `|x|^2`.
    Quadratic,
    /// Equal to `plateau` on the ball of `radius` about `center`, zero beyond
    /// `2 radius`, joined by the septic smoothstep so the function is `C^3`.
    SmoothBump {
        center: Vec<f64>,
        radius: f64,
        plateau: f64,
    },
    /// `Π_i x_i^{e_i}` with total degree at most 3.
    CoordinatePoly { exponents: Vec<u32> },
}

/// `S(u) = 35u^4 - 84u^5 + 70u^6 - 20u^7` and its first two derivatives.
fn smoothstep7(u: f64) -> (f64, f64, f64) {
    let u2 = u * u;
    let w = 1.0 - u;
    let s = u2 * u2 * (35.0 - 84.0 * u + 70.0 * u2 - 20.0 * u2 * u);
    let s1 = 140.0 * u2 * u * w * w * w;
    let s2 = 420.0 * u2 * w * w * (1.0 - 2.0 * u);
    (s, s1, s2)
}

impl TestFunction {
    pub fn smooth_bump(center: Vec<f64>, radius: f64, plateau: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("bump radius must be positive, got {radius}")));
        }
        Ok(TestFunction::SmoothBump {
            center,
            radius,
            plateau,
        })
    }

    /// A bump equal to 1 on the ball about `K`'s bounding-box centre that holds twice `K`.
    pub fn bump_around(region: &DarningRegion) -> Self {
        let (lo, hi) = region.bounding_box();
        let center: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let radius = 2.0 * region.farthest_distance(&center).expect("centre has the region's dimension");
        TestFunction::SmoothBump {
            center,
            radius,
            plateau: 1.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { value } => *value,
            TestFunction::Quadratic => x.iter().map(|a| a * a).sum(),
            TestFunction::SmoothBump {
                center,
                radius,
                plateau,
            } => {
                let s = crate::geometry::dist(x, center);
                if s <= *radius {
                    *plateau
                } else if s >= 2.0 * radius {
                    0.0
                } else {
                    plateau * (1.0 - smoothstep7((s - radius) / radius).0)
                }
            }
            TestFunction::CoordinatePoly { exponents } => exponents
                .iter()
                .zip(x)
                .map(|(&e, &a)| a.powi(e as i32))
                .product(),
        }
    }

    /// Exact `Δf(x)`.
    pub fn laplacian(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Constant { .. } => 0.0,
            TestFunction::Quadratic => 2.0 * x.len() as f64,
            TestFunction::SmoothBump {
                center,
                radius,
                plateau,
            } => {
                let s = crate::geometry::dist(x, center);
                if s <= *radius || s >= 2.0 * radius {
                    return 0.0;
                }
                let (_, s1, s2) = smoothstep7((s - radius) / radius);
                let f1 = -plateau * s1 / radius;
                let f2 = -plateau * s2 / (radius * radius);
                f2 + (x.len() as f64 - 1.0) / s * f1
            }
            TestFunction::CoordinatePoly { exponents } => {
                let mut total = 0.0;
                for (i, &e) in exponents.iter().enumerate() {
                    if e < 2 {
                        continue;
                    }
                    let mut term = (e * (e - 1)) as f64 * x[i].powi(e as i32 - 2);
                    for (k, &ek) in exponents.iter().enumerate() {
                        if k != i {
                            term *= x[k].powi(ek as i32);
                        }
                    }
                    total += term;
                }
                total
            }
        }
    }

    /// Whether the function is constant on a neighbourhood of `K`.
    pub fn is_class_g(&self, region: &DarningRegion) -> bool {
        match self {
            TestFunction::Constant { .. } => true,
            TestFunction::Quadratic => false,
            TestFunction::SmoothBump { center, radius, .. } => {
                region.farthest_distance(center).is_ok_and(|r| r < *radius)
            }
            TestFunction::CoordinatePoly { exponents } => exponents.iter().all(|&e| e == 0),
        }
    }
}

/// `max_{x ∈ S^j} |L^j f(x) - (1/2d) Δf(x)|`.
pub fn interior_generator_error(g: &DarnedLattice, f: &TestFunction) -> f64 {
    let values = VertexFunction::sample(g, f);
    let lf = generator_apply(g, &values);
    let s = interior_set(g);
    let inv2d = 1.0 / (2 * g.dim()) as f64;
    s.members
        .iter()
        .map(|&v| (lf.0[v as usize] - inv2d * f.laplacian(&g.position(v).unwrap())).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLevel {
    pub j: u32,
    pub max_all: f64,
    pub at_star: f64,
    pub max_star_adjacent: f64,
    pub max_interior: f64,
    pub max_other: f64,
    pub interior_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub levels: Vec<GeneratorLevel>,
    pub sup_over_levels: f64,
    /// Least-squares slope of `log2 max_all` against `j`.
    pub log2_slope: f64,
}

pub fn generator_level(g: &DarnedLattice, f: &TestFunction) -> Result<GeneratorLevel> {
    if let Some(k) = g.region() {
        if !f.is_class_g(k) {
            return Err(Error::NotClassG);
        }
    }
    let lf = generator_apply(g, &VertexFunction::sample(g, f));
    let s = interior_set(g);
    let star = g.star();
    let mut level = GeneratorLevel {
        j: g.level(),
        max_all: f64::NEG_INFINITY,
        at_star: 0.0,
        max_star_adjacent: f64::NEG_INFINITY,
        max_interior: f64::NEG_INFINITY,
        max_other: f64::NEG_INFINITY,
        interior_error: interior_generator_error(g, f),
    };
    for v in 0..g.num_vertices() as VertexId {
        let value = lf.0[v as usize];
        level.max_all = level.max_all.max(value);
        if Some(v) == star {
            level.at_star = value;
        } else if star.is_some_and(|a| g.are_adjacent(v, a)) {
            level.max_star_adjacent = level.max_star_adjacent.max(value);
        } else if s.mask[v as usize] {
            level.max_interior = level.max_interior.max(value);
        } else {
            level.max_other = level.max_other.max(value);
        }
    }
    for x in [
        &mut level.max_star_adjacent,
        &mut level.max_interior,
        &mut level.max_other,
    ] {
        if x.is_infinite() {
            *x = 0.0;
        }
    }
    Ok(level)
}

/// `max_x L^j f(x)` across levels for a class-G function.
pub fn generator_bound_check(
    region: &DarningRegion,
    f: &TestFunction,
    levels: std::ops::RangeInclusive<u32>,
    window_radius: f64,
) -> Result<GeneratorReport> {
    if !f.is_class_g(region) {
        return Err(Error::NotClassG);
    }
    let levels: Vec<GeneratorLevel> = levels
        .map(|j| {
            let g = DarnedLattice::build(region, j, window_radius)?;
            generator_level(&g, f)
        })
        .collect::<Result<_>>()?;
    let sup_over_levels = levels.iter().map(|l| l.max_all).fold(f64::NEG_INFINITY, f64::max);
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.max_all > 0.0)
        .map(|l| (l.j as f64, l.max_all.log2()))
        .collect();
    Ok(GeneratorReport {
        sup_over_levels,
        log2_slope: least_squares_slope(&pts),
        levels,
    })
}

/// Transition probabilities `P_t(x, ·)` for a set of sources and times.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    pub times: Vec<f64>,
    pub sources: Vec<VertexId>,
    /// `rows[s][k][y] = P_{times[k]}(sources[s], y)`.
    pub rows: Vec<Vec<Vec<f64>>>,
    pub terms: usize,
    measure: Vec<f64>,
}

impl KernelMatrix {
    pub fn probability(&self, source_index: usize, time_index: usize, y: VertexId) -> f64 {
        self.rows[source_index][time_index][y as usize]
    }

    /// `p(t, x, y) = P_t(x, y) / m_j(y)`.
    pub fn density(&self, source_index: usize, time_index: usize, y: VertexId) -> f64 {
        self.probability(source_index, time_index, y) / self.measure[y as usize]
    }

    pub fn row(&self, source_index: usize, time_index: usize) -> &[f64] {
        &self.rows[source_index][time_index]
    }

    pub fn source_index(&self, x: VertexId) -> Option<usize> {
        self.sources.iter().position(|&s| s == x)
    }
}

/// Poisson probabilities `P[N = n]`, `N ~ Poisson(mu)`, from `n = 0` to the truncation order.
///
/// Weights are generated outward from the mode so no term is formed from an
/// underflowing `e^{-mu}`; the right tail beyond the last term is below
/// [`TRUNCATION_TAIL`].
fn poisson_weights(mu: f64, cap: usize) -> Result<Vec<f64>> {
    if mu == 0.0 {
        return Ok(vec![1.0]);
    }
    let mode = mu.floor() as usize;
    let needed = || (mu + 8.0 * mu.sqrt() + 20.0).ceil() as usize;
    if mode > cap {
        return Err(Error::TruncationCap { needed: needed(), cap });
    }
    let w_mode = (-mu + mode as f64 * mu.ln() - ln_gamma(mode as f64 + 1.0)).exp();
    let mut weights = vec![0.0; mode + 1];
    weights[mode] = w_mode;
    for n in (0..mode).rev() {
        weights[n] = weights[n + 1] * (n + 1) as f64 / mu;
    }
    let mut n = mode;
    let mut w = w_mode;
    loop {
        let ratio = mu / (n + 1) as f64;
        if ratio < 1.0 {
            // Geometric bound on the remaining tail.
            let tail = w * ratio / (1.0 - mu / (n + 2) as f64);
            if tail < TRUNCATION_TAIL {
                return Ok(weights);
            }
        }
        n += 1;
        if n > cap {
            return Err(Error::TruncationCap {
                needed: needed().max(cap + 1),
                cap,
            });
        }
        w *= ratio;
        weights.push(w);
    }
}

/// Rows of `P_t` by uniformization, one series pass shared by all `times`.
pub fn heat_kernel_times(
    g: &DarnedLattice,
    rate: f64,
    times: &[f64],
    sources: &[VertexId],
    cap: usize,
) -> Result<KernelMatrix> {
    for &s in sources {
        g.check_vertex(s)?;
    }
    for &t in times {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::InvalidArgument(format!("kernel time must be positive, got {t}")));
        }
    }
    let weights: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| poisson_weights(rate * t, cap))
        .collect::<Result<_>>()?;
    let terms = weights.iter().map(Vec::len).max().unwrap_or(1);
    let n = g.num_vertices();
    let inv_degree: Vec<f64> = (0..n as VertexId).map(|v| 1.0 / g.degree(v) as f64).collect();
    let rows: Vec<Vec<Vec<f64>>> = sources
        .par_iter()
        .map(|&x| {
            let mut u = vec![0.0; n];
            u[x as usize] = 1.0;
            let mut next = vec![0.0; n];
            let mut acc = vec![vec![0.0; n]; times.len()];
            for k in 0..terms {
                for (a, w) in acc.iter_mut().zip(&weights) {
                    if let Some(&wk) = w.get(k) {
                        if wk > 0.0 {
                            for (ai, ui) in a.iter_mut().zip(&u) {
                                *ai += wk * ui;
                            }
                        }
                    }
                }
                if k + 1 == terms {
                    break;
                }
                for (y, slot) in next.iter_mut().enumerate() {
                    *slot = g
                        .neighbors(y as VertexId)
                        .iter()
                        .map(|&z| u[z as usize] * inv_degree[z as usize])
                        .sum();
                }
                std::mem::swap(&mut u, &mut next);
            }
            acc
        })
        .collect();
    Ok(KernelMatrix {
        times: times.to_vec(),
        sources: sources.to_vec(),
        rows,
        terms,
        measure: (0..n as VertexId).map(|v| g.measure(v)).collect(),
    })
}

/// Rows of `P_t` at a single time under the given rate convention.
pub fn heat_kernel(g: &DarnedLattice, mode: RateMode, t: f64, sources: &[VertexId]) -> Result<KernelMatrix> {
    heat_kernel_times(g, mode.rate(g.level(), g.dim()), &[t], sources, DEFAULT_TERM_CAP)
}

/// Sources where kernel bounds are most likely to be tight.
///
/// The star, up to four star-adjacent vertices, window corners, face
/// midpoints and the regular vertex nearest the origin.
pub fn probe_sources(g: &DarnedLattice) -> Vec<VertexId> {
    let mut out = Vec::new();
    if let Some(star) = g.star() {
        out.push(star);
        let ns = g.neighbors(star);
        for i in [0, ns.len() / 3, 2 * ns.len() / 3, ns.len() - 1] {
            out.push(ns[i]);
        }
    }
    let n = g.half_width();
    let d = g.dim();
    for mask in 0..(1u32 << d) {
        let c: Vec<i32> = (0..d).map(|i| if mask >> i & 1 == 1 { n } else { -n }).collect();
        out.extend(g.vertex_at(&c));
    }
    for axis in 0..d {
        for sign in [-1, 1] {
            let mut c = vec![0; d];
            c[axis] = sign * n;
            out.extend(g.vertex_at(&c));
        }
    }
    out.extend(g.nearest_regular(&vec![0.0; d]));
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnDiagEntry {
    pub j: u32,
    pub t: f64,
    /// `max_x p(t, x, x) t^{d/2}` over the probe sources.
    pub scaled_max: f64,
    pub argmax: VertexId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OnDiagReport {
    pub entries: Vec<OnDiagEntry>,
    /// `sup_t M(j, t)` per level.
    pub sup_per_level: Vec<(u32, f64)>,
    /// Overall supremum divided by the first level's supremum.
    pub ratio_to_first: f64,
}

/// `M(j, t) = max_x p_j(t, x, x) t^{d/2}` over probe sources, for every graph and time.
pub fn ondiag_bound_check(graphs: &[DarnedLattice], mode: RateMode, t_grid: &[f64]) -> Result<OnDiagReport> {
    if graphs.is_empty() {
        return Err(Error::InvalidArgument("no graphs given".into()));
    }
    let mut entries = Vec::new();
    let mut sup_per_level = Vec::new();
    for g in graphs {
        let sources = probe_sources(g);
        let km = heat_kernel_times(g, mode.rate(g.level(), g.dim()), t_grid, &sources, DEFAULT_TERM_CAP)?;
        let half_d = g.dim() as f64 / 2.0;
        let mut sup: f64 = 0.0;
        for (ti, &t) in t_grid.iter().enumerate() {
            let (argmax, best) = sources
                .iter()
                .enumerate()
                .map(|(si, &x)| (x, km.density(si, ti, x)))
                .fold((sources[0], f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
            let scaled = best * t.powf(half_d);
            sup = sup.max(scaled);
            entries.push(OnDiagEntry {
                j: g.level(),
                t,
                scaled_max: scaled,
                argmax,
            });
        }
        sup_per_level.push((g.level(), sup));
    }
    let first = sup_per_level[0].1;
    let overall = sup_per_level.iter().map(|s| s.1).fold(0.0, f64::max);
    Ok(OnDiagReport {
        entries,
        sup_per_level,
        ratio_to_first: overall / first,
    })
}

/// `t^{-d/2} (exp(-d_j^2 / (64 t)) + exp(-2^j d_j / 4))`.
pub fn offdiag_bound(dim: usize, j: u32, t: f64, dj: f64) -> f64 {
    t.powf(-(dim as f64) / 2.0) * ((-dj * dj / (64.0 * t)).exp() + (-(2f64.powi(j as i32)) * dj / 4.0).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffDiagReport {
    pub j: u32,
    /// Largest `p / bound` over every pair: the empirical prefactor.
    pub max_ratio: f64,
    /// Maximum over pairs with `d_j ≤ 16 · 2^j t`, where the Gaussian term dominates.
    pub max_ratio_gaussian: f64,
    /// Maximum over pairs with `d_j > 16 · 2^j t`.
    pub max_ratio_exponential: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelPair {
    pub x: VertexId,
    pub y: VertexId,
    pub t: f64,
    pub dj: f64,
    pub density: f64,
    pub bound_ratio: f64,
}

/// Density and bound ratio for every target from each source.
pub fn kernel_pairs(g: &DarnedLattice, km: &KernelMatrix) -> Result<Vec<KernelPair>> {
    let mut out = Vec::new();
    for (si, &x) in km.sources.iter().enumerate() {
        let table = graph_distance(g, x)?;
        for (ti, &t) in km.times.iter().enumerate() {
            for y in 0..g.num_vertices() as VertexId {
                let dj = table.distance(y);
                let density = km.density(si, ti, y);
                out.push(KernelPair {
                    x,
                    y,
                    t,
                    dj,
                    density,
                    bound_ratio: density / offdiag_bound(g.dim(), g.level(), t, dj),
                });
            }
        }
    }
    Ok(out)
}

pub fn offdiag_bound_check(g: &DarnedLattice, mode: RateMode, t_grid: &[f64], sources: &[VertexId]) -> Result<OffDiagReport> {
    let km = heat_kernel_times(g, mode.rate(g.level(), g.dim()), t_grid, sources, DEFAULT_TERM_CAP)?;
    let pairs = kernel_pairs(g, &km)?;
    let scale = 2f64.powi(g.level() as i32);
    let mut report = OffDiagReport {
        j: g.level(),
        max_ratio: 0.0,
        max_ratio_gaussian: 0.0,
        max_ratio_exponential: 0.0,
        pairs: pairs.len(),
    };
    for p in &pairs {
        report.max_ratio = report.max_ratio.max(p.bound_ratio);
        if p.dj <= 16.0 * scale * p.t {
            report.max_ratio_gaussian = report.max_ratio_gaussian.max(p.bound_ratio);
        } else {
            report.max_ratio_exponential = report.max_ratio_exponential.max(p.bound_ratio);
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NashReport {
    pub j: u32,
    /// `min E(f,f) / (‖f‖_2^{2+4/d} ‖f‖_1^{-4/d})` over the sampled functions.
    pub min_ratio: f64,
    pub samples: usize,
}

/// Nash-inequality spot check on random tent functions in the quotient metric.
pub fn nash_spot_check(g: &DarnedLattice, samples: usize, seed: u64) -> NashReport {
    let metric = QuotientMetric::new(g);
    let d = g.dim() as f64;
    let h = g.mesh();
    let mut rng = path_rng(seed, g.level() as u64);
    let mut min_ratio = f64::INFINITY;
    for _ in 0..samples {
        let center = rng.gen_range(0..g.num_vertices()) as VertexId;
        let radius = rng.gen_range(4.0 * h..1.0f64.max(4.0 * h + h));
        let f = VertexFunction(
            (0..g.num_vertices() as VertexId)
                .map(|v| (1.0 - metric.distance(center, v) / radius).max(0.0))
                .collect(),
        );
        let energy = dirichlet_energy(g, &f);
        let l2 = f.norm(g, 2.0);
        let l1 = f.norm(g, 1.0);
        let ratio = energy / (l2.powf(2.0 + 4.0 / d) * l1.powf(-4.0 / d));
        min_ratio = min_ratio.min(ratio);
    }
    NashReport {
        j: g.level(),
        min_ratio,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn graph(j: u32) -> DarnedLattice {
        let k = DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap();
        DarnedLattice::build(&k, j, 2.0).unwrap()
    }

    #[test]
    fn energy_of_constant_and_shift() {
        let g = graph(2);
        assert_eq!(dirichlet_energy(&g, &VertexFunction::constant(&g, 3.0)), 0.0);
        let f = VertexFunction::sample(&g, &TestFunction::Quadratic);
        let shifted = VertexFunction(f.0.iter().map(|x| x + 5.0).collect());
        let (a, b) = (dirichlet_energy(&g, &f), dirichlet_energy(&g, &shifted));
        assert!((a - b).abs() <= 1e-12 * a);
    }

    #[test]
    fn single_edge_energy() {
        // Plain lattice with one oriented pair differing by one: each unoriented
        // edge from the indicator contributes twice to the oriented sum.
        let g = DarnedLattice::build_plain(2, 1, 1.0).unwrap();
        let corner = g.vertex_at(&[2, 2]).unwrap();
        let mut f = VertexFunction::constant(&g, 0.0);
        f.0[corner as usize] = 1.0;
        // Corner has two edges: 2 · (1/8 · 2 · 1) = 1/2.
        assert!((dirichlet_energy(&g, &f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quadratic_generator_is_one_on_interior() {
        let g = graph(3);
        let lf = generator_apply(&g, &VertexFunction::sample(&g, &TestFunction::Quadratic));
        for &v in &interior_set(&g).members {
            assert!((lf.0[v as usize] - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn smoothstep_derivatives() {
        for &u in &[0.1, 0.35, 0.5, 0.8] {
            let e = 1e-4;
            let (s0, s1, s2) = smoothstep7(u);
            let (sp, _, _) = smoothstep7(u + e);
            let (sm, _, _) = smoothstep7(u - e);
            assert!(((sp - sm) / (2.0 * e) - s1).abs() < 1e-6);
            assert!(((sp - 2.0 * s0 + sm) / (e * e) - s2).abs() < 1e-3);
        }
        assert_eq!(smoothstep7(0.0).0, 0.0);
        assert!((smoothstep7(1.0).0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bump_laplacian_matches_finite_differences() {
        let f = TestFunction::smooth_bump(vec![0.0, 0.0], 0.5, 1.0).unwrap();
        let h = 1e-4;
        for x in [[0.7, 0.1], [0.3, -0.6], [0.0, 0.9]] {
            let mut fd = 0.0;
            for i in 0..2 {
                let mut p = x;
                let mut m = x;
                p[i] += h;
                m[i] -= h;
                fd += (f.value(&p) - 2.0 * f.value(&x) + f.value(&m)) / (h * h);
            }
            assert!((fd - f.laplacian(&x)).abs() < 1e-4, "{fd} vs {}", f.laplacian(&x));
        }
    }

    #[test]
    fn star_formula_matches_generator() {
        let k = DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap();
        let f = TestFunction::bump_around(&k);
        for j in 3..6 {
            let g = DarnedLattice::build(&k, j, 2.0).unwrap();
            let lf = generator_apply(&g, &VertexFunction::sample(&g, &f));
            let star = g.star().unwrap();
            assert_eq!(lf.0[star as usize], star_generator(&g, &f).unwrap());
        }
        assert!(matches!(
            star_generator(&graph(3), &TestFunction::Quadratic),
            Err(Error::NotClassG)
        ));
    }

    #[test]
    fn generator_check_rejects_non_class_g() {
        let k = DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap();
        let narrow = TestFunction::smooth_bump(vec![0.0, 0.0], 0.2, 1.0).unwrap();
        assert!(matches!(
            generator_bound_check(&k, &narrow, 3..=4, 2.0),
            Err(Error::NotClassG)
        ));
        let c = TestFunction::Constant { value: 2.0 };
        let r = generator_bound_check(&k, &c, 3..=4, 2.0).unwrap();
        assert_eq!(r.sup_over_levels, 0.0);
    }

    #[test]
    fn poisson_weights_sum_to_one() {
        for mu in [0.5, 16.0, 1024.0, 4096.0] {
            let w = poisson_weights(mu, DEFAULT_TERM_CAP).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-11);
        }
        assert!(matches!(poisson_weights(1e4, 100), Err(Error::TruncationCap { .. })));
    }

    #[test]
    fn kernel_conservation_and_symmetry() {
        let g = graph(2);
        let all: Vec<VertexId> = (0..g.num_vertices() as VertexId).collect();
        let km = heat_kernel_times(&g, 16.0, &[0.1, 0.5], &all, DEFAULT_TERM_CAP).unwrap();
        for si in 0..all.len() {
            for ti in 0..2 {
                let mass: f64 = km.row(si, ti).iter().sum();
                assert!((mass - 1.0).abs() < 1e-10);
                for &y in &all[..si] {
                    let a = km.density(si, ti, y);
                    let b = km.density(y as usize, ti, all[si]);
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn semigroup_property() {
        let g = DarnedLattice::build(
            &DarningRegion::axis_box(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap(),
            1,
            2.0,
        )
        .unwrap();
        let all: Vec<VertexId> = (0..g.num_vertices() as VertexId).collect();
        let km = heat_kernel_times(&g, 4.0, &[0.2, 0.3, 0.5], &all, DEFAULT_TERM_CAP).unwrap();
        for x in 0..all.len() {
            for y in 0..all.len() {
                let composed: f64 = (0..all.len())
                    .map(|z| km.row(x, 0)[z] * km.row(z, 1)[y])
                    .sum();
                assert!((composed - km.row(x, 2)[y]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn small_time_concentrates_at_source() {
        let g = graph(2);
        let x = g.vertex_at_point(&[1.0, 1.0]).unwrap();
        let km = heat_kernel(&g, RateMode::Paper, 1e-6, &[x]).unwrap();
        assert!((km.density(0, 0, x) * g.measure(x) - 1.0).abs() < 1e-4);
    }

    #[test]
    fn form_generator_duality() {
        let g = graph(3);
        let mut rng = path_rng(3, 0);
        for _ in 0..20 {
            let f = VertexFunction((0..g.num_vertices()).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let energy = dirichlet_energy(&g, &f);
            // E^j pairs with the generator of the walk at rate `4^j` through m_j.
            let lf = generator_apply(&g, &f);
            let dual = -lf.inner(&f, &g);
            assert!((energy - dual).abs() <= 1e-9 * energy.abs());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn positivity_preserved(seed in 0u64..1000, t in 0.01f64..0.5) {
            let g = graph(2);
            let mut rng = path_rng(seed, 0);
            let f: Vec<f64> = (0..g.num_vertices()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sources: Vec<VertexId> = (0..g.num_vertices() as VertexId).step_by(7).collect();
            let km = heat_kernel_times(&g, 16.0, &[t], &sources, DEFAULT_TERM_CAP).unwrap();
            for si in 0..sources.len() {
                let pf: f64 = km.row(si, 0).iter().zip(&f).map(|(p, v)| p * v).sum();
                prop_assert!(pf >= -1e-12);
            }
        }
    }
}

//! The continuous-time random walk `X^j` on a darned lattice.
//!
//! The walk holds at each vertex for an exponential time of constant rate
//! `λ_j` and then jumps to a uniformly chosen neighbour. A path is censored
//! when it reaches the window face.

use std::cell::OnceCell;
use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DarnedLattice, QuotientMetric, VertexId};
use crate::rng::{exponential, path_rng, uniform_index, PathRng};
use crate::stats::Proportion;

/// Holding rate convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    /// `λ_j = 4^j`; the interior generator is `(1/2d) Δ`.
    #[default]
    Paper,
    /// `λ_j = d · 4^j`; the interior generator is `(1/2) Δ`, unit variance per coordinate.
    Matched,
}

impl RateMode {
    pub fn rate(self, j: u32, dim: usize) -> f64 {
        let base = 4f64.powi(j as i32);
        match self {
            RateMode::Paper => base,
            RateMode::Matched => dim as f64 * base,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    #[serde(default)]
    pub rate_mode: RateMode,
    pub t_max: f64,
    pub seed: u64,
    pub num_paths: usize,
    /// Largest tolerated fraction of censored paths before a sample is flagged.
    #[serde(default = "default_exit_threshold")]
    pub exit_threshold: f64,
}

fn default_exit_threshold() -> f64 {
    0.01
}

impl WalkConfig {
    pub fn new(t_max: f64, seed: u64, num_paths: usize) -> Result<Self> {
        let cfg = WalkConfig {
            rate_mode: RateMode::Paper,
            t_max,
            seed,
            num_paths,
            exit_threshold: default_exit_threshold(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_rate_mode(mut self, mode: RateMode) -> Self {
        self.rate_mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("T_max must be positive, got {}", self.t_max)));
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidArgument("num_paths must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.exit_threshold) {
            return Err(Error::InvalidArgument("exit_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn rate(&self, g: &DarnedLattice) -> f64 {
        self.rate_mode.rate(g.level(), g.dim())
    }
}

/// The jump law from one vertex: uniform over its neighbours.
#[derive(Clone, Copy, Debug)]
pub struct StepKernel<'a> {
    pub neighbors: &'a [VertexId],
    pub probability: f64,
}

pub fn step_kernel(g: &DarnedLattice, x: VertexId) -> Result<StepKernel<'_>> {
    g.check_vertex(x)?;
    let neighbors = g.neighbors(x);
    if neighbors.is_empty() {
        return Err(Error::IsolatedVertex(x));
    }
    Ok(StepKernel {
        neighbors,
        probability: 1.0 / neighbors.len() as f64,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    /// `(time, vertex)` pairs; the first is `(0, start)`.
    pub events: Vec<(f64, VertexId)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hit_star_time: Option<f64>,
    pub exited_window: bool,
    pub t_max: f64,
}

impl WalkPath {
    pub fn start(&self) -> VertexId {
        self.events[0].1
    }

    pub fn num_jumps(&self) -> usize {
        self.events.len() - 1
    }

    /// Time at which the path was censored, if it was.
    pub fn exit_time(&self) -> Option<f64> {
        self.exited_window.then(|| self.events.last().unwrap().0)
    }

    /// `X_t` for `t` in `[0, t_max]`.
    pub fn state_at(&self, t: f64) -> VertexId {
        let i = self.events.partition_point(|e| e.0 <= t);
        self.events[i.saturating_sub(1)].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Flow {
    Continue,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Ending {
    pub exited: bool,
    pub stopped: bool,
    pub time: f64,
}

/// Runs one path, reporting every state (including the start) to `visit`.
pub(crate) fn walk(
    g: &DarnedLattice,
    rate: f64,
    t_max: f64,
    start: VertexId,
    rng: &mut PathRng,
    mut visit: impl FnMut(f64, VertexId) -> Flow,
) -> Ending {
    let mut t = 0.0;
    let mut v = start;
    if visit(t, v) == Flow::Stop {
        return Ending { exited: false, stopped: true, time: t };
    }
    if g.on_window_face(v) {
        return Ending { exited: true, stopped: false, time: t };
    }
    loop {
        t += exponential(rng, rate);
        if t > t_max {
            return Ending { exited: false, stopped: false, time: t_max };
        }
        let ns = g.neighbors(v);
        v = ns[uniform_index(rng, ns.len())];
        if visit(t, v) == Flow::Stop {
            return Ending { exited: false, stopped: true, time: t };
        }
        if g.on_window_face(v) {
            return Ending { exited: true, stopped: false, time: t };
        }
    }
}

/// Samples one path of `X^j` from `start` on stream `stream` of `cfg.seed`.
pub fn sample_path(g: &DarnedLattice, cfg: &WalkConfig, start: VertexId, stream: u64) -> Result<WalkPath> {
    cfg.validate()?;
    g.check_vertex(start)?;
    let mut rng = path_rng(cfg.seed, stream);
    Ok(sample_path_with(g, cfg.rate(g), cfg.t_max, start, &mut rng))
}

pub(crate) fn sample_path_with(
    g: &DarnedLattice,
    rate: f64,
    t_max: f64,
    start: VertexId,
    rng: &mut PathRng,
) -> WalkPath {
    let star = g.star();
    let mut events = Vec::new();
    let mut hit_star_time = None;
    let ending = walk(g, rate, t_max, start, rng, |t, v| {
        events.push((t, v));
        if hit_star_time.is_none() && Some(v) == star {
            hit_star_time = Some(t);
        }
        Flow::Continue
    });
    WalkPath {
        events,
        hit_star_time,
        exited_window: ending.exited,
        t_max,
    }
}

/// States at the given sorted times; `None` where the path had already been censored.
pub(crate) fn states_at_times(
    g: &DarnedLattice,
    rate: f64,
    t_max: f64,
    start: VertexId,
    times: &[f64],
    rng: &mut PathRng,
) -> Vec<Option<VertexId>> {
    let mut out = Vec::with_capacity(times.len());
    let mut current = start;
    let ending = walk(g, rate, t_max, start, rng, |t, v| {
        while out.len() < times.len() && times[out.len()] < t {
            out.push(Some(current));
        }
        current = v;
        Flow::Continue
    });
    while out.len() < times.len() {
        let t = times[out.len()];
        out.push(if ending.exited && t >= ending.time { None } else { Some(current) });
    }
    out
}

/// Empirical law of `X_t`.
///
/// `counts` covers the paths still inside the window at time `t`; censored
/// paths are counted in `exited`, so `counts` and `exited` add up to `num_paths`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalSample {
    pub t: f64,
    pub counts: BTreeMap<VertexId, u64>,
    pub num_paths: u64,
    pub exited: u64,
    pub exit_fraction: f64,
    /// Exit fraction above the configured threshold.
    pub flagged: bool,
}

impl MarginalSample {
    pub fn counted(&self) -> u64 {
        self.num_paths - self.exited
    }
}

pub fn marginal(g: &DarnedLattice, cfg: &WalkConfig, start: VertexId, t: f64) -> Result<MarginalSample> {
    Ok(marginals(g, cfg, start, &[t])?.remove(0))
}

/// Empirical laws of `X_t` for every `t` in `times`, from one set of paths.
pub fn marginals(g: &DarnedLattice, cfg: &WalkConfig, start: VertexId, times: &[f64]) -> Result<Vec<MarginalSample>> {
    cfg.validate()?;
    g.check_vertex(start)?;
    let sorted = sorted_times(times, cfg.t_max)?;
    let rate = cfg.rate(g);
    let states: Vec<Vec<Option<VertexId>>> = (0..cfg.num_paths as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = path_rng(cfg.seed, stream);
            states_at_times(g, rate, cfg.t_max, start, &sorted, &mut rng)
        })
        .collect();
    let n = cfg.num_paths as u64;
    let mut samples: Vec<MarginalSample> = sorted
        .iter()
        .map(|&t| MarginalSample {
            t,
            counts: BTreeMap::new(),
            num_paths: n,
            exited: 0,
            exit_fraction: 0.0,
            flagged: false,
        })
        .collect();
    for path in &states {
        for (s, state) in samples.iter_mut().zip(path) {
            match state {
                Some(v) => *s.counts.entry(*v).or_default() += 1,
                None => s.exited += 1,
            }
        }
    }
    for s in &mut samples {
        s.exit_fraction = s.exited as f64 / n as f64;
        s.flagged = s.exit_fraction > cfg.exit_threshold;
    }
    // Return in the caller's order.
    Ok(times
        .iter()
        .map(|t| samples[sorted.partition_point(|x| x < t)].clone())
        .collect())
}

pub(crate) fn sorted_times(times: &[f64], t_max: f64) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::InvalidArgument("no marginal times given".into()));
    }
    for &t in times {
        if !(0.0..=t_max).contains(&t) {
            return Err(Error::InvalidArgument(format!("marginal time {t} outside [0, {t_max}]")));
        }
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    Ok(sorted)
}

/// Outcome of a hitting experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HittingStats {
    /// Paths reaching the targets before the barrier, the window face and `T_max`.
    pub hit: Proportion,
    pub barrier_first: u64,
    pub exited: u64,
    /// Paths that reached `T_max` without resolving.
    pub unresolved: u64,
    pub mean_hitting_time: f64,
    pub histogram_bin_width: f64,
    /// Hitting-time counts in bins of `histogram_bin_width`.
    pub histogram: Vec<u64>,
}

const HISTOGRAM_BINS: usize = 50;

/// Probability of reaching `targets` before `barrier`, the window face and `T_max`.
pub fn hitting_stats(
    g: &DarnedLattice,
    cfg: &WalkConfig,
    start: VertexId,
    targets: &[VertexId],
    barrier: &[VertexId],
) -> Result<HittingStats> {
    cfg.validate()?;
    g.check_vertex(start)?;
    if targets.is_empty() {
        return Err(Error::InvalidArgument("hitting targets must be nonempty".into()));
    }
    let mut role = vec![0u8; g.num_vertices()];
    for &b in barrier {
        g.check_vertex(b)?;
        role[b as usize] = 2;
    }
    for &t in targets {
        g.check_vertex(t)?;
        role[t as usize] = 1;
    }
    let rate = cfg.rate(g);
    #[derive(Clone, Copy)]
    enum End {
        Hit(f64),
        Barrier,
        Exited,
        Unresolved,
    }
    let ends: Vec<End> = (0..cfg.num_paths as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = path_rng(cfg.seed, stream);
            let mut end = End::Unresolved;
            let ending = walk(g, rate, cfg.t_max, start, &mut rng, |t, v| match role[v as usize] {
                1 => {
                    end = End::Hit(t);
                    Flow::Stop
                }
                2 => {
                    end = End::Barrier;
                    Flow::Stop
                }
                _ => Flow::Continue,
            });
            if ending.exited {
                End::Exited
            } else {
                end
            }
        })
        .collect();
    let width = cfg.t_max / HISTOGRAM_BINS as f64;
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let (mut hits, mut barrier_first, mut exited, mut unresolved) = (0u64, 0u64, 0u64, 0u64);
    let mut time_sum = 0.0;
    for e in ends {
        match e {
            End::Hit(t) => {
                hits += 1;
                time_sum += t;
                histogram[((t / width) as usize).min(HISTOGRAM_BINS - 1)] += 1;
            }
            End::Barrier => barrier_first += 1,
            End::Exited => exited += 1,
            End::Unresolved => unresolved += 1,
        }
    }
    Ok(HittingStats {
        hit: Proportion::new(hits, cfg.num_paths as u64),
        barrier_first,
        exited,
        unresolved,
        mean_hitting_time: if hits > 0 { time_sum / hits as f64 } else { 0.0 },
        histogram_bin_width: width,
        histogram,
    })
}

/// `sup_{t ≤ T} ρ(x0, X_t)`.
pub fn sup_distance(path: &WalkPath, metric: &QuotientMetric, x0: VertexId) -> f64 {
    path.events
        .iter()
        .map(|&(_, v)| metric.distance(x0, v))
        .fold(0.0, f64::max)
}

/// Piecewise-constant path seen as segments of constant state.
struct Segments<'a> {
    starts: Vec<f64>,
    states: Vec<VertexId>,
    metric: &'a QuotientMetric,
    horizon: f64,
}

impl<'a> Segments<'a> {
    fn new(path: &WalkPath, metric: &'a QuotientMetric, horizon: f64) -> Self {
        let (starts, states) = path
            .events
            .iter()
            .take_while(|e| e.0 <= horizon)
            .map(|&(t, v)| (t, v))
            .unzip();
        Segments {
            starts,
            states,
            metric,
            horizon,
        }
    }

    /// For each segment `k`, the first later segment `b` with
    /// `osc(states[k..=b]) > eps`, or `None` if the remainder stays within `eps`.
    fn first_breaks(&self, eps: f64) -> Vec<Option<usize>> {
        let m = self.states.len();
        let tree = ConflictTree::new(self);
        let last: Vec<Option<usize>> = (0..m).map(|r| tree.last_conflict(r, eps)).collect();
        // A break for k at q needs a conflict of q with some i in [k, q); the
        // first break is nondecreasing in k.
        let mut out = Vec::with_capacity(m);
        let mut q = 0;
        for k in 0..m {
            q = q.max(k + 1);
            while q < m && last[q].is_none_or(|l| l < k) {
                q += 1;
            }
            out.push((q < m).then_some(q));
        }
        out
    }

    /// Whether some admissible partition keeps every interval's oscillation within `eps`.
    ///
    /// Intervals are half-open, each but the last at least `theta` long. Only the
    /// earliest reachable start inside each segment matters, since all starts in
    /// a segment see the same first break.
    fn feasible(&self, breaks: &[Option<usize>], theta: f64) -> bool {
        let m = self.states.len();
        let mut lo = vec![f64::INFINITY; m];
        lo[0] = 0.0;
        let mut filled = 0;
        for k in 0..m {
            if !lo[k].is_finite() {
                continue;
            }
            let Some(b) = breaks[k] else { return true };
            let earliest = lo[k] + theta;
            let latest = self.starts[b];
            if earliest > latest || earliest >= self.horizon {
                continue;
            }
            let l0 = self.starts.partition_point(|&s| s <= earliest) - 1;
            lo[l0] = lo[l0].min(earliest);
            // Segment starts are the smallest possible values, so each segment
            // needs filling once; `b` is nondecreasing in `k`.
            for l in (l0 + 1).max(filled + 1)..=b {
                lo[l] = self.starts[l];
            }
            filled = filled.max(b);
        }
        false
    }
}

/// Segment tree over a path's states for "last earlier state farther than `eps`" queries.
///
/// Each node keeps the bounding box of its regular states, the largest distance
/// to `K` among them and whether the star occurs. A node is skipped when these
/// prove that none of its states is more than `eps` away from the query state;
/// the tests are monotone in floating point, so skipping never hides a conflict.
struct ConflictTree<'s, 'a> {
    segs: &'s Segments<'a>,
    dim: usize,
    size: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    max_d: Vec<f64>,
    star: Vec<bool>,
}

impl<'s, 'a> ConflictTree<'s, 'a> {
    fn new(segs: &'s Segments<'a>) -> Self {
        let m = segs.states.len();
        let dim = segs.metric.dim();
        let size = m.next_power_of_two();
        let mut t = ConflictTree {
            segs,
            dim,
            size,
            lo: vec![f64::INFINITY; 2 * size * dim],
            hi: vec![f64::NEG_INFINITY; 2 * size * dim],
            max_d: vec![f64::NEG_INFINITY; 2 * size],
            star: vec![false; 2 * size],
        };
        for (i, &v) in segs.states.iter().enumerate() {
            let node = size + i;
            match segs.metric.position(v) {
                None => t.star[node] = true,
                Some(p) => {
                    t.lo[node * dim..(node + 1) * dim].copy_from_slice(p);
                    t.hi[node * dim..(node + 1) * dim].copy_from_slice(p);
                    t.max_d[node] = segs.metric.to_region(v);
                }
            }
        }
        for node in (1..size).rev() {
            let (l, r) = (2 * node, 2 * node + 1);
            for i in 0..dim {
                t.lo[node * dim + i] = t.lo[l * dim + i].min(t.lo[r * dim + i]);
                t.hi[node * dim + i] = t.hi[l * dim + i].max(t.hi[r * dim + i]);
            }
            t.max_d[node] = t.max_d[l].max(t.max_d[r]);
            t.star[node] = t.star[l] || t.star[r];
        }
        t
    }

    /// No state under `node` is more than `eps` from the query state.
    fn free(&self, node: usize, p: Option<&[f64]>, dv: f64, eps: f64) -> bool {
        if self.star[node] && dv > eps {
            return false;
        }
        if self.max_d[node] == f64::NEG_INFINITY {
            return true;
        }
        match p {
            None => self.max_d[node] <= eps,
            Some(p) => {
                if self.max_d[node] + dv <= eps {
                    return true;
                }
                let lo = &self.lo[node * self.dim..(node + 1) * self.dim];
                let hi = &self.hi[node * self.dim..(node + 1) * self.dim];
                let far: f64 = p
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .map(|(x, (a, b))| {
                        let s = (a - x).abs().max((b - x).abs());
                        s * s
                    })
                    .sum::<f64>()
                    .sqrt();
                far <= eps
            }
        }
    }

    /// Largest `i < r` with `ρ(states[i], states[r]) > eps`.
    fn last_conflict(&self, r: usize, eps: f64) -> Option<usize> {
        let v = self.segs.states[r];
        let p = self.segs.metric.position(v);
        let dv = self.segs.metric.to_region(v);
        self.search(1, 0, self.size, r, p, dv, eps)
    }

    #[allow(clippy::too_many_arguments)]
    fn search(&self, node: usize, from: usize, to: usize, r: usize, p: Option<&[f64]>, dv: f64, eps: f64) -> Option<usize> {
        if from >= r || self.free(node, p, dv, eps) {
            return None;
        }
        if to - from == 1 {
            let far = self.segs.metric.distance(self.segs.states[from], self.segs.states[r]) > eps;
            return far.then_some(from);
        }
        let mid = (from + to) / 2;
        self.search(2 * node + 1, mid, to, r, p, dv, eps)
            .or_else(|| self.search(2 * node, from, mid, r, p, dv, eps))
    }
}

/// Exact modulus `w_ρ(X, θ, T)` of a piecewise-constant path.
///
/// The value is one of the pairwise distances between visited states, found by
/// bisection on the monotone feasibility test.
pub fn modulus(path: &WalkPath, metric: &QuotientMetric, theta: f64, horizon: f64) -> f64 {
    let segs = Segments::new(path, metric, horizon);
    let mut distinct = segs.states.clone();
    distinct.sort_unstable();
    distinct.dedup();
    let mut candidates = vec![0.0];
    for (i, &a) in distinct.iter().enumerate() {
        for &b in &distinct[i + 1..] {
            candidates.push(metric.distance(a, b));
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    let (mut lo, mut hi) = (0, candidates.len() - 1);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if segs.feasible(&segs.first_breaks(candidates[mid]), theta) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    candidates[lo]
}

/// Decides `w_ρ(X, θ, T) > eps` for several `θ` on one path, sharing the work that does not depend on `θ`.
pub struct ModulusProbe<'a> {
    segs: Segments<'a>,
    eps: f64,
    breaks: OnceCell<Vec<Option<usize>>>,
}

impl<'a> ModulusProbe<'a> {
    pub fn new(path: &WalkPath, metric: &'a QuotientMetric, horizon: f64, eps: f64) -> Self {
        ModulusProbe {
            segs: Segments::new(path, metric, horizon),
            eps,
            breaks: OnceCell::new(),
        }
    }

    pub fn exceeds(&self, theta: f64) -> bool {
        if theta <= 0.0 || fixed_grid_within(&self.segs, theta, self.eps) {
            return false;
        }
        let breaks = self.breaks.get_or_init(|| self.segs.first_breaks(self.eps));
        !self.segs.feasible(breaks, theta)
    }
}

/// Whether `w_ρ(X, θ, T) > eps`.
pub fn modulus_exceeds(path: &WalkPath, metric: &QuotientMetric, theta: f64, horizon: f64, eps: f64) -> bool {
    ModulusProbe::new(path, metric, horizon, eps).exceeds(theta)
}

/// Cheap sufficient test: cutting at every multiple of `theta` keeps each
/// interval inside a bounding box of diagonal at most `eps`.
fn fixed_grid_within(segs: &Segments<'_>, theta: f64, eps: f64) -> bool {
    let m = segs.states.len();
    let mut cut = 0.0;
    loop {
        let next_cut = cut + theta;
        let from = segs.starts.partition_point(|&s| s <= cut) - 1;
        if next_cut >= segs.horizon {
            return box_within(segs, from, m, eps);
        }
        let to = segs.starts.partition_point(|&s| s < next_cut);
        if !box_within(segs, from, to, eps) {
            return false;
        }
        cut = next_cut;
    }
}

fn box_within(segs: &Segments<'_>, from: usize, to: usize, eps: f64) -> bool {
    let dim = segs.metric.dim();
    let mut lo = [f64::INFINITY; 8];
    let mut hi = [f64::NEG_INFINITY; 8];
    for &v in &segs.states[from..to] {
        // ρ never exceeds the Euclidean distance; the star needs the slow path.
        let Some(p) = segs.metric.position(v) else { return false };
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    let diag2: f64 = (0..dim).map(|i| (hi[i] - lo[i]).powi(2)).sum();
    diag2.sqrt() <= eps
}

/// Per-path tightness statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStatistics {
    pub sup_distance: f64,
    /// `(θ, w_ρ(X, θ, T))` pairs.
    pub modulus: Vec<(f64, f64)>,
    pub exited: bool,
}

pub fn path_statistics(
    paths: &[WalkPath],
    metric: &QuotientMetric,
    x0: VertexId,
    thetas: &[f64],
) -> Vec<PathStatistics> {
    paths
        .par_iter()
        .map(|p| PathStatistics {
            sup_distance: sup_distance(p, metric, x0),
            modulus: thetas
                .iter()
                .map(|&th| (th, modulus(p, metric, th, p.t_max)))
                .collect(),
            exited: p.exited_window,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::DarningRegion;

    fn graph(j: u32) -> DarnedLattice {
        let k = DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap();
        DarnedLattice::build(&k, j, 2.0).unwrap()
    }

    #[test]
    fn kernel_is_uniform() {
        let g = graph(2);
        let v = g.vertex_at_point(&[1.0, 1.0]).unwrap();
        let k = step_kernel(&g, v).unwrap();
        assert_eq!(k.neighbors.len(), 4);
        assert_eq!(k.probability, 0.25);
        let star = step_kernel(&g, g.star().unwrap()).unwrap();
        assert_eq!(star.probability * star.neighbors.len() as f64, 1.0);
        assert!(step_kernel(&g, 1_000_000).is_err());
    }

    #[test]
    fn path_invariants_and_determinism() {
        let g = graph(3);
        let cfg = WalkConfig::new(1.0, 42, 1).unwrap();
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let p = sample_path(&g, &cfg, start, 9).unwrap();
        assert_eq!(p.events[0], (0.0, start));
        for w in p.events.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(g.are_adjacent(w[0].1, w[1].1));
        }
        assert_eq!(p, sample_path(&g, &cfg, start, 9).unwrap());
        assert_ne!(p, sample_path(&g, &cfg, start, 10).unwrap());
    }

    #[test]
    fn short_horizon_has_no_jumps() {
        let g = graph(3);
        let cfg = WalkConfig::new(1e-9, 1, 1).unwrap();
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let p = sample_path(&g, &cfg, start, 0).unwrap();
        assert_eq!(p.events, vec![(0.0, start)]);
    }

    #[test]
    fn window_face_censors() {
        let g = graph(1);
        let cfg = WalkConfig::new(100.0, 3, 1).unwrap();
        let start = g.vertex_at_point(&[1.5, 0.0]).unwrap();
        let p = sample_path(&g, &cfg, start, 0).unwrap();
        assert!(p.exited_window);
        assert!(g.on_window_face(*p.events.iter().map(|(_, v)| v).next_back().unwrap()));
    }

    #[test]
    fn marginal_at_zero_is_start() {
        let g = graph(2);
        let cfg = WalkConfig::new(1.0, 5, 100).unwrap();
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let m = marginal(&g, &cfg, start, 0.0).unwrap();
        assert_eq!(m.counts.get(&start), Some(&100));
        let ms = marginals(&g, &cfg, start, &[0.5, 0.1]).unwrap();
        assert_eq!(ms[0].t, 0.5);
        for s in &ms {
            assert_eq!(s.counts.values().sum::<u64>() + s.exited, 100);
        }
    }

    #[test]
    fn hitting_from_target_is_immediate() {
        let g = graph(2);
        let cfg = WalkConfig::new(1.0, 5, 50).unwrap();
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let h = hitting_stats(&g, &cfg, start, &[start], &[]).unwrap();
        assert_eq!(h.hit.estimate, 1.0);
        assert_eq!(h.mean_hitting_time, 0.0);
    }

    fn synthetic(events: Vec<(f64, VertexId)>, t_max: f64) -> WalkPath {
        WalkPath {
            events,
            hit_star_time: None,
            exited_window: false,
            t_max,
        }
    }

    #[test]
    fn modulus_of_constant_and_single_jump() {
        let g = graph(2);
        let metric = QuotientMetric::new(&g);
        let a = g.vertex_at_point(&[1.0, 1.0]).unwrap();
        let b = g.vertex_at_point(&[1.5, 1.0]).unwrap();
        let constant = synthetic(vec![(0.0, a)], 1.0);
        assert_eq!(modulus(&constant, &metric, 0.1, 1.0), 0.0);
        let jump = synthetic(vec![(0.0, a), (0.5, b)], 1.0);
        assert_eq!(modulus(&jump, &metric, 0.3, 1.0), 0.0);
        // No admissible cut separates the states when θ exceeds the first half.
        assert_eq!(modulus(&jump, &metric, 0.6, 1.0), 0.5);
        assert!(!modulus_exceeds(&jump, &metric, 0.3, 1.0, 0.1));
        assert!(modulus_exceeds(&jump, &metric, 0.6, 1.0, 0.1));
    }

    #[test]
    fn modulus_needs_non_greedy_start() {
        // a on [0, 0.3), b on [0.3, 0.35), c after; ρ(a, b) small, ρ(b, c) small, ρ(a, c) large.
        let g = graph(2);
        let metric = QuotientMetric::new(&g);
        let a = g.vertex_at_point(&[1.0, 1.0]).unwrap();
        let b = g.vertex_at_point(&[1.25, 1.0]).unwrap();
        let c = g.vertex_at_point(&[1.5, 1.0]).unwrap();
        let p = synthetic(vec![(0.0, a), (0.3, b), (0.35, c)], 1.0);
        // Cut at 0.3: [0, 0.3) holds a, the rest holds b and c.
        assert_eq!(modulus(&p, &metric, 0.3, 1.0), 0.25);
        // θ = 0.32 forces the first interval past 0.3; cut inside b's segment at 0.32.
        assert_eq!(modulus(&p, &metric, 0.32, 1.0), 0.25);
        assert_eq!(modulus(&p, &metric, 0.36, 1.0), 0.5);
    }

    #[test]
    fn modulus_exceeds_agrees_with_exact_value() {
        let g = graph(3);
        let metric = QuotientMetric::new(&g);
        let cfg = WalkConfig::new(0.3, 11, 1).unwrap();
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        for stream in 0..20 {
            let p = sample_path(&g, &cfg, start, stream).unwrap();
            for theta in [0.01, 0.05, 0.2] {
                let w = modulus(&p, &metric, theta, 0.3);
                assert!(!modulus_exceeds(&p, &metric, theta, 0.3, w));
                if w > 0.0 {
                    assert!(modulus_exceeds(&p, &metric, theta, 0.3, w * 0.999));
                }
            }
        }
    }

    fn brute_breaks(segs: &Segments<'_>, eps: f64) -> Vec<Option<usize>> {
        let m = segs.states.len();
        (0..m)
            .map(|k| {
                (k + 1..m).find(|&q| (k..q).any(|i| segs.metric.distance(segs.states[i], segs.states[q]) > eps))
            })
            .collect()
    }

    #[test]
    fn conflict_tree_breaks_match_brute_force() {
        let g = graph(3);
        let metric = QuotientMetric::new(&g);
        let cfg = WalkConfig::new(0.5, 17, 1).unwrap();
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        for stream in 0..10 {
            let p = sample_path(&g, &cfg, start, stream).unwrap();
            let segs = Segments::new(&p, &metric, 0.5);
            for eps in [0.1, 0.25, 0.4, 0.7] {
                assert_eq!(segs.first_breaks(eps), brute_breaks(&segs, eps), "stream {stream}, eps {eps}");
            }
        }
    }

    #[test]
    fn detailed_balance_on_every_edge() {
        let g = graph(3);
        let d = g.dim() as i32;
        let scale = 2f64.powi(-(d - 2) * g.level() as i32) / (2 * g.dim()) as f64;
        for x in 0..g.num_vertices() as VertexId {
            let qx = step_kernel(&g, x).unwrap().probability;
            for &y in g.neighbors(x) {
                let qy = step_kernel(&g, y).unwrap().probability;
                let lhs = scale * g.degree(x) as f64 * qx;
                let rhs = scale * g.degree(y) as f64 * qy;
                assert_eq!(lhs, rhs);
            }
        }
    }
}

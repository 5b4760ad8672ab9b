//! Multi-level convergence studies and the run orchestrator.
//!
//! A [`RunConfig`] names a darning region, a range of levels and the
//! experiments to run. [`run`] builds (or reloads) the lattices, runs the
//! experiments in dependency order and writes one JSON report and one CSV
//! table per experiment next to a `manifest.json`.
//!
//! All numeric outputs are deterministic for a fixed config and seed. Wall
//! times are the only exception and go to a separate `timing.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{hitting_stats, sample_path_with, HittingStats, ModulusProbe, RateMode, WalkConfig};
use crate::error::{Error, Result};
use crate::geometry::DarningRegion;
use crate::io::{load_graph, save_graph};
use crate::isoperimetry::{case_two_comparison, iso_report, CaseTwoComparison, Family, IsoReport, VertexSet};
use crate::lattice::{interior_set, star_degree_scaling, DarnedLattice, QuotientMetric, VertexId};
use crate::rng::{mix, path_rng};
use crate::spectral::{
    generator_apply, generator_level, heat_kernel_times, nash_spot_check, offdiag_bound_check, ondiag_bound_check,
    probe_sources, GeneratorLevel, NashReport, OffDiagReport, OnDiagReport, TestFunction, VertexFunction,
    DEFAULT_TERM_CAP,
};
use crate::stats::{
    chi_square, decreasing_with_inversions, ks_critical_1pct, ks_sorted, least_squares_slope, total_variation,
    ChiSquare, Proportion,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest lattice on which the uniformization oracle is run.
pub const ORACLE_VERTEX_LIMIT: usize = 200_000;

/// Significance level of the oracle gate and the KS critical values.
pub const GATE_LEVEL: f64 = 0.01;

/// Side of the spatial bins used for total-variation distances.
pub const TV_BIN: f64 = 0.25;

const CALIBRATION_SALT: u64 = 0xCA11;
const ANNULUS_SALT: u64 = 0xA000;
const VARIANCE_SALT: u64 = 0xB000;
const NASH_SALT: u64 = 0x4E00;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    StarDegree,
    Generator,
    HeatKernel,
    Isoperimetry,
    LevelConsistency,
    TightnessProbe,
    StarOccupation,
    BmdComparison,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::StarDegree,
        Experiment::Generator,
        Experiment::HeatKernel,
        Experiment::Isoperimetry,
        Experiment::LevelConsistency,
        Experiment::TightnessProbe,
        Experiment::StarOccupation,
        Experiment::BmdComparison,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::StarDegree => "star_degree",
            Experiment::Generator => "generator",
            Experiment::HeatKernel => "heat_kernel",
            Experiment::Isoperimetry => "isoperimetry",
            Experiment::LevelConsistency => "level_consistency",
            Experiment::TightnessProbe => "tightness_probe",
            Experiment::StarOccupation => "star_occupation",
            Experiment::BmdComparison => "bmd_comparison",
        }
    }

    fn simulates(self) -> bool {
        matches!(
            self,
            Experiment::LevelConsistency | Experiment::TightnessProbe | Experiment::StarOccupation
        )
    }
}

/// Inclusive range of levels `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelRange {
    pub min: u32,
    pub max: u32,
}

impl LevelRange {
    pub fn new(min: u32, max: u32) -> Self {
        LevelRange { min, max }
    }

    pub fn iter(self) -> impl Iterator<Item = u32> {
        self.min..=self.max
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TightnessConfig {
    /// Thresholds `M` for `P[sup ρ(x0, X_t) > M]`.
    pub m_grid: Vec<f64>,
    /// Partition meshes `θ` for `P[w_ρ(X, θ, T) > δ1]`.
    pub theta_grid: Vec<f64>,
    pub delta1: f64,
}

impl Default for TightnessConfig {
    fn default() -> Self {
        TightnessConfig {
            m_grid: vec![1.0, 2.0],
            theta_grid: vec![0.02, 0.05, 0.25],
            delta1: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationConfig {
    pub delta: f64,
    pub times: Vec<f64>,
}

impl Default for OccupationConfig {
    fn default() -> Self {
        OccupationConfig {
            delta: 0.25,
            times: vec![0.5, 1.0],
        }
    }
}

/// Concentric-sphere hitting problem with `K = Ball(0, inner_radius)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnulusConfig {
    pub dim: usize,
    pub level: u32,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub start_radius: f64,
}

impl Default for AnnulusConfig {
    fn default() -> Self {
        AnnulusConfig {
            dim: 2,
            level: 6,
            inner_radius: 0.25,
            outer_radius: 1.0,
            start_radius: 0.5,
        }
    }
}

impl AnnulusConfig {
    /// Probability that Brownian motion from the start sphere meets the inner sphere first.
    pub fn target(&self) -> f64 {
        let (r, big_r, s) = (self.inner_radius, self.outer_radius, self.start_radius);
        if self.dim == 2 {
            (big_r / s).ln() / (big_r / r).ln()
        } else {
            let p = 2.0 - self.dim as f64;
            (s.powf(p) - big_r.powf(p)) / (r.powf(p) - big_r.powf(p))
        }
    }

    pub fn window_radius(&self) -> f64 {
        2.0 * self.outer_radius.ceil()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BmdConfig {
    pub annuli: Vec<AnnulusConfig>,
    pub hitting_t_max: f64,
    pub variance_start: Vec<f64>,
    pub variance_time: f64,
    /// Paths entering the `variance_avoid`-neighbourhood of `K` are discarded.
    pub variance_avoid: f64,
    /// Level for the variance measurement; the finest configured level when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance_level: Option<u32>,
}

impl Default for BmdConfig {
    fn default() -> Self {
        BmdConfig {
            annuli: vec![
                AnnulusConfig::default(),
                AnnulusConfig {
                    dim: 3,
                    level: 4,
                    ..AnnulusConfig::default()
                },
            ],
            hitting_t_max: 100.0,
            variance_start: vec![2.0, 0.0],
            variance_time: 0.25,
            variance_avoid: 0.5,
            variance_level: None,
        }
    }
}

/// Levels and window shared by the static checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub levels: LevelRange,
    pub window_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub levels: LevelRange,
    pub window_radius: f64,
    pub t_grid: Vec<f64>,
    pub nash_samples: usize,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            levels: LevelRange::new(2, 5),
            window_radius: 2.0,
            t_grid: vec![0.05, 0.1, 0.25, 0.5, 1.0],
            nash_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsoConfig {
    pub levels: LevelRange,
    pub window_radius: f64,
    pub families: Vec<Family>,
    /// Maximum number of sets examined per family and level.
    pub budget: u64,
}

impl Default for IsoConfig {
    fn default() -> Self {
        IsoConfig {
            levels: LevelRange::new(4, 5),
            window_radius: 2.0,
            families: vec![
                Family::AllConnectedUpTo { max_size: 6 },
                Family::MetricBalls { radii: (1..=16).collect() },
                Family::StarNeighborhoods { hops: 2 },
            ],
            budget: 50_000_000,
        }
    }
}

/// Configuration of a run.
///
/// Every field has a default; `"region": null` selects the plain lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub region: Option<DarningRegion>,
    pub dim: usize,
    pub levels: LevelRange,
    pub window_radius: f64,
    pub x0: Vec<f64>,
    pub t_max: f64,
    pub num_paths: usize,
    pub seed: u64,
    pub rate_mode: RateMode,
    pub exit_threshold: f64,
    pub experiments: Vec<Experiment>,
    pub output_dir: PathBuf,
    pub marginal_times: Vec<f64>,
    /// Time of the oracle chi-square gate.
    pub gate_time: f64,
    pub tightness: TightnessConfig,
    pub star_occupation: OccupationConfig,
    pub bmd: BmdConfig,
    pub star_degree: StaticConfig,
    pub generator: StaticConfig,
    pub heat_kernel: KernelConfig,
    pub isoperimetry: IsoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            region: Some(DarningRegion::ball(vec![0.0, 0.0], 0.25).expect("valid ball")),
            dim: 2,
            levels: LevelRange::new(3, 6),
            window_radius: 4.0,
            x0: vec![0.5, 0.0],
            t_max: 1.0,
            num_paths: 100_000,
            seed: 20_240_601,
            rate_mode: RateMode::Paper,
            exit_threshold: 0.01,
            experiments: Vec::new(),
            output_dir: PathBuf::from("darnwalk-out"),
            marginal_times: vec![0.1, 0.25, 0.5, 1.0],
            gate_time: 0.25,
            tightness: TightnessConfig::default(),
            star_occupation: OccupationConfig::default(),
            bmd: BmdConfig::default(),
            star_degree: StaticConfig {
                levels: LevelRange::new(3, 8),
                window_radius: 2.0,
            },
            generator: StaticConfig {
                levels: LevelRange::new(3, 8),
                window_radius: 2.0,
            },
            heat_kernel: KernelConfig::default(),
            isoperimetry: IsoConfig::default(),
        }
    }
}

fn config_error(pointer: &str, message: impl Into<String>) -> Error {
    Error::Config {
        pointer: pointer.to_string(),
        message: message.into(),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

impl RunConfig {
    /// Parses and validates a config; errors carry a JSON pointer to the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = json_pointer(e.path());
            config_error(&pointer, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(config_error("/dim", "dimension must be at least 2"));
        }
        if let Some(k) = &self.region {
            if k.dim() != self.dim {
                return Err(config_error("/region", format!("region has dimension {}, expected {}", k.dim(), self.dim)));
            }
        }
        for (pointer, levels) in [
            ("/levels", self.levels),
            ("/star_degree/levels", self.star_degree.levels),
            ("/generator/levels", self.generator.levels),
            ("/heat_kernel/levels", self.heat_kernel.levels),
            ("/isoperimetry/levels", self.isoperimetry.levels),
        ] {
            if levels.min == 0 || levels.min > levels.max || levels.max > 20 {
                return Err(config_error(pointer, "need 1 <= min <= max <= 20"));
            }
        }
        if self.x0.len() != self.dim {
            return Err(config_error("/x0", format!("x0 must have {} coordinates", self.dim)));
        }
        let scale = 2f64.powi(self.levels.min as i32);
        if self.x0.iter().any(|c| !c.is_finite() || (c * scale).fract() != 0.0) {
            return Err(config_error(
                "/x0",
                format!("x0 must have dyadic coordinates on the level-{} lattice", self.levels.min),
            ));
        }
        if self.x0.iter().any(|c| c.abs() >= self.window_radius) {
            return Err(config_error("/x0", "x0 must lie strictly inside the window"));
        }
        if let Some(k) = &self.region {
            if k.contains(&self.x0)? {
                return Err(config_error("/x0", "x0 lies in the darning region"));
            }
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(config_error("/t_max", "t_max must be positive"));
        }
        if self.num_paths == 0 {
            return Err(config_error("/num_paths", "num_paths must be positive"));
        }
        if !(0.0..=1.0).contains(&self.exit_threshold) {
            return Err(config_error("/exit_threshold", "exit_threshold must lie in [0, 1]"));
        }
        let in_horizon = |t: f64| (0.0..=self.t_max).contains(&t);
        if let Some(i) = self.marginal_times.iter().position(|&t| !in_horizon(t)) {
            return Err(config_error(&format!("/marginal_times/{i}"), "time outside [0, t_max]"));
        }
        if self.marginal_times.is_empty() {
            return Err(config_error("/marginal_times", "at least one marginal time is required"));
        }
        if !in_horizon(self.gate_time) || self.gate_time == 0.0 {
            return Err(config_error("/gate_time", "gate time must lie in (0, t_max]"));
        }
        if let Some(i) = self.star_occupation.times.iter().position(|&t| !in_horizon(t)) {
            return Err(config_error(&format!("/star_occupation/times/{i}"), "time outside [0, t_max]"));
        }
        if !(self.star_occupation.delta > 0.0) {
            return Err(config_error("/star_occupation/delta", "delta must be positive"));
        }
        if self.tightness.theta_grid.iter().any(|&t| !(t > 0.0)) {
            return Err(config_error("/tightness/theta_grid", "theta must be positive"));
        }
        if !(self.tightness.delta1 > 0.0) {
            return Err(config_error("/tightness/delta1", "delta1 must be positive"));
        }
        for (i, a) in self.bmd.annuli.iter().enumerate() {
            if a.dim < 2 || a.level == 0 || a.level > 20 {
                return Err(config_error(&format!("/bmd/annuli/{i}"), "need dim >= 2 and 1 <= level <= 20"));
            }
            if !(0.0 < a.inner_radius && a.inner_radius < a.start_radius && a.start_radius < a.outer_radius) {
                return Err(config_error(
                    &format!("/bmd/annuli/{i}"),
                    "need 0 < inner_radius < start_radius < outer_radius",
                ));
            }
        }
        if self.bmd.variance_start.len() != self.dim {
            return Err(config_error("/bmd/variance_start", format!("must have {} coordinates", self.dim)));
        }
        if !(self.bmd.variance_time > 0.0 && self.bmd.variance_time.is_finite()) {
            return Err(config_error("/bmd/variance_time", "must be positive"));
        }
        if !(self.bmd.hitting_t_max > 0.0) {
            return Err(config_error("/bmd/hitting_t_max", "must be positive"));
        }
        if self.heat_kernel.t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) || self.heat_kernel.t_grid.is_empty() {
            return Err(config_error("/heat_kernel/t_grid", "times must be positive"));
        }
        Ok(())
    }

    pub fn walk_config(&self, seed: u64) -> Result<WalkConfig> {
        let mut w = WalkConfig::new(self.t_max, seed, self.num_paths)?.with_rate_mode(self.rate_mode);
        w.exit_threshold = self.exit_threshold;
        Ok(w)
    }

    /// Seed of the simulation at level `j`.
    pub fn level_seed(&self, j: u32) -> u64 {
        mix(self.seed, j as u64)
    }

    /// Sorted union of every time at which simulated states are recorded.
    pub fn recorded_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .marginal_times
            .iter()
            .chain(&self.star_occupation.times)
            .chain(std::iter::once(&self.gate_time))
            .copied()
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }

    /// SHA-256 of the canonical config with the output directory blanked out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn build(&self, j: u32, window: f64) -> Result<DarnedLattice> {
        match &self.region {
            Some(k) => DarnedLattice::build(k, j, window),
            None => DarnedLattice::build_plain(self.dim, j, window),
        }
    }
}

/// Per-path records of one level's simulation.
#[derive(Clone, Debug)]
pub struct LevelSimulation {
    pub j: u32,
    pub seed: u64,
    pub start: VertexId,
    pub times: Vec<f64>,
    pub thetas: Vec<f64>,
    /// `states[p][k]`: state of path `p` at `times[k]`, `None` once censored.
    pub states: Vec<Vec<Option<VertexId>>>,
    pub sup_rho: Vec<f64>,
    /// `modulus_exceeds[p][i]`: whether `w_ρ(X, thetas[i], T) > δ1` for path `p`.
    pub modulus_exceeds: Vec<Vec<bool>>,
    pub exited: Vec<bool>,
}

impl LevelSimulation {
    pub fn num_paths(&self) -> usize {
        self.exited.len()
    }

    pub fn num_exited(&self) -> u64 {
        self.exited.iter().filter(|&&e| e).count() as u64
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    fn states_at(&self, k: usize) -> impl Iterator<Item = Option<VertexId>> + '_ {
        self.states.iter().map(move |s| s[k])
    }
}

struct PathSummary {
    states: Vec<Option<VertexId>>,
    sup_rho: f64,
    exceeds: Vec<bool>,
    exited: bool,
}

/// Simulates `walk.num_paths` paths from `start`, keeping only the statistics the studies use.
pub fn simulate_level(
    g: &DarnedLattice,
    metric: &QuotientMetric,
    walk: &WalkConfig,
    start: VertexId,
    times: &[f64],
    thetas: &[f64],
    delta1: f64,
) -> Result<LevelSimulation> {
    walk.validate()?;
    g.check_vertex(start)?;
    let rate = walk.rate(g);
    let rho0: Vec<f64> = (0..g.num_vertices() as VertexId).map(|v| metric.distance(start, v)).collect();
    let summaries: Vec<PathSummary> = (0..walk.num_paths as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = path_rng(walk.seed, stream);
            let path = sample_path_with(g, rate, walk.t_max, start, &mut rng);
            let exit_time = if path
                .exited_window { path.events.last().expect("nonempty").0 } else { f64::INFINITY };
            let states = times
                .iter()
                .map(|&t| {
                    (t < exit_time).then(|| path.events[path.events.partition_point(|e| e.0 <= t) - 1].1)
                })
                .collect();
            let probe = ModulusProbe::new(&path, metric, walk.t_max, delta1);
            PathSummary {
                states,
                sup_rho: path.events.iter().map(|&(_, v)| rho0[v as usize]).fold(0.0, f64::max),
                exceeds: thetas.iter().map(|&th| probe.exceeds(th)).collect(),
                exited: path.exited_window,
            }
        })
        .collect();
    let mut sim = LevelSimulation {
        j: g.level(),
        seed: walk.seed,
        start,
        times: times.to_vec(),
        thetas: thetas.to_vec(),
        states: Vec::with_capacity(summaries.len()),
        sup_rho: Vec::with_capacity(summaries.len()),
        modulus_exceeds: Vec::with_capacity(summaries.len()),
        exited: Vec::with_capacity(summaries.len()),
    };
    for s in summaries {
        sim.states.push(s.states);
        sim.sup_rho.push(s.sup_rho);
        sim.modulus_exceeds.push(s.exceeds);
        sim.exited.push(s.exited);
    }
    Ok(sim)
}

/// Lattices and simulations shared between the experiments of one run.
pub struct Study {
    cfg: RunConfig,
    graph_dir: Option<PathBuf>,
    graphs: BTreeMap<u32, DarnedLattice>,
    metrics: BTreeMap<u32, QuotientMetric>,
    sims: BTreeMap<u32, LevelSimulation>,
    calibration: Option<LevelSimulation>,
    graph_files: Vec<String>,
}

impl Study {
    /// A study whose lattices are cached as `graph_dir/j{j}.bin` when a directory is given.
    pub fn new(cfg: RunConfig, graph_dir: Option<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Study {
            cfg,
            graph_dir,
            graphs: BTreeMap::new(),
            metrics: BTreeMap::new(),
            sims: BTreeMap::new(),
            calibration: None,
            graph_files: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    fn cached_graph(&mut self, name: String, expect: impl Fn(&DarnedLattice) -> bool, build: impl FnOnce() -> Result<DarnedLattice>) -> Result<DarnedLattice> {
        let Some(dir) = &self.graph_dir else {
            return build();
        };
        let path = dir.join(&name);
        if let Ok(g) = load_graph(&path) {
            if expect(&g) {
                self.graph_files.push(format!("graphs/{name}"));
                return Ok(g);
            }
        }
        let g = build()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_graph(&g, &path)?;
        self.graph_files.push(format!("graphs/{name}"));
        Ok(g)
    }

    /// The lattice at level `j` on the main window, loading or building it on first use.
    pub fn graph(&mut self, j: u32) -> Result<&DarnedLattice> {
        if !self.graphs.contains_key(&j) {
            let cfg = self.cfg.clone();
            let g = self.cached_graph(
                format!("j{j}.bin"),
                |g| {
                    g.level() == j
                        && g.dim() == cfg.dim
                        && g.window_radius() == cfg.window_radius
                        && g.region() == cfg.region.as_ref()
                },
                || cfg.build(j, cfg.window_radius),
            )?;
            self.metrics.insert(j, QuotientMetric::new(&g));
            self.graphs.insert(j, g);
        }
        Ok(&self.graphs[&j])
    }

    fn start_vertex(&mut self, j: u32) -> Result<VertexId> {
        let x0 = self.cfg.x0.clone();
        self.graph(j)?
            .vertex_at_point(&x0)
            .ok_or_else(|| config_error("/x0", format!("x0 is not a vertex at level {j}")))
    }

    fn run_simulation(&mut self, j: u32, seed: u64) -> Result<LevelSimulation> {
        let start = self.start_vertex(j)?;
        let walk = self.cfg.walk_config(seed)?;
        let times = self.cfg.recorded_times();
        let g = &self.graphs[&j];
        let sim = simulate_level(
            g,
            &self.metrics[&j],
            &walk,
            start,
            &times,
            &self.cfg.tightness.theta_grid,
            self.cfg.tightness.delta1,
        )?;
        let fraction = sim.num_exited() as f64 / sim.num_paths() as f64;
        if fraction > self.cfg.exit_threshold {
            return Err(Error::EscapeThreshold {
                level: j,
                fraction,
                threshold: self.cfg.exit_threshold,
            });
        }
        Ok(sim)
    }

    /// The simulation at level `j`, run on first use.
    pub fn simulation(&mut self, j: u32) -> Result<&LevelSimulation> {
        if !self.sims.contains_key(&j) {
            let sim = self.run_simulation(j, self.cfg.level_seed(j))?;
            self.sims.insert(j, sim);
        }
        Ok(&self.sims[&j])
    }

    /// A second, independent simulation at the coarsest level.
    pub fn calibration(&mut self) -> Result<&LevelSimulation> {
        if self.calibration.is_none() {
            let j = self.cfg.levels.min;
            let sim = self.run_simulation(j, mix(self.cfg.level_seed(j), CALIBRATION_SALT))?;
            self.calibration = Some(sim);
        }
        Ok(self.calibration.as_ref().expect("just set"))
    }

    fn metric(&self, j: u32) -> &QuotientMetric {
        &self.metrics[&j]
    }

    /// Spatial position used for laws of `X_t`; the star sits at an interior point of `K`.
    fn position(&self, j: u32, v: VertexId) -> &[f64] {
        match self.metrics[&j].position(v) {
            Some(p) => p,
            None => self.cfg.region.as_ref().expect("star implies region").interior_point(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub j: u32,
    pub seed: u64,
    pub num_vertices: usize,
    pub num_paths: usize,
    pub exited: u64,
    pub exit_fraction: f64,
}

/// Chi-square comparison of the simulated law of `X_t` with the uniformization oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleGate {
    pub j: u32,
    pub t: f64,
    pub oracle_feasible: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi_square: Option<ChiSquare>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub j: u32,
    pub j_next: u32,
    /// KS distance between the laws of `ρ(x0, X_t)`.
    pub ks_rho: f64,
    /// KS distances between the laws of each coordinate of `X_t`.
    pub ks_coordinates: Vec<f64>,
    /// Total variation between the laws of `X_t` on bins of side [`TV_BIN`].
    pub tv_bins: f64,
    pub ks_critical: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeComparison {
    pub t: f64,
    pub pairs: Vec<PairDistance>,
    /// `ks_rho` over consecutive pairs decreases, one inversion allowed from three pairs on.
    pub decreasing: bool,
    pub top_pair_below_critical: bool,
    /// KS distance between two independent runs at the coarsest level.
    pub calibration_ks: f64,
    pub calibration_critical: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub decreasing: bool,
    pub top_pair_below_critical: bool,
    pub calibration_below_critical: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelSummary>,
    pub gates: Vec<OracleGate>,
    pub times: Vec<TimeComparison>,
    /// Emitted only when every feasible oracle gate passes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<ConvergenceVerdict>,
}

fn rho_sample(study: &Study, sim: &LevelSimulation, k: usize) -> Vec<f64> {
    let metric = study.metric(sim.j);
    let mut v: Vec<f64> = sim.states_at(k).flatten().map(|s| metric.distance(sim.start, s)).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn coordinate_sample(study: &Study, sim: &LevelSimulation, k: usize, axis: usize) -> Vec<f64> {
    let mut v: Vec<f64> = sim.states_at(k).flatten().map(|s| study.position(sim.j, s)[axis]).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn binned_counts(study: &Study, sim: &LevelSimulation, k: usize) -> BTreeMap<Vec<i64>, u64> {
    let mut counts = BTreeMap::new();
    for s in sim.states_at(k).flatten() {
        let key: Vec<i64> = study.position(sim.j, s).iter().map(|c| (c / TV_BIN).floor() as i64).collect();
        *counts.entry(key).or_default() += 1;
    }
    counts
}

/// Chi-square gate at `t` for the simulation at level `j`.
pub fn oracle_gate(g: &DarnedLattice, sim: &LevelSimulation, mode: RateMode, t: f64) -> Result<OracleGate> {
    let k = sim
        .time_index(t)
        .ok_or_else(|| Error::InvalidArgument(format!("time {t} was not recorded")))?;
    if g.num_vertices() > ORACLE_VERTEX_LIMIT {
        return Ok(OracleGate {
            j: g.level(),
            t,
            oracle_feasible: false,
            chi_square: None,
            passed: true,
        });
    }
    let km = heat_kernel_times(g, mode.rate(g.level(), g.dim()), &[t], &[sim.start], DEFAULT_TERM_CAP)?;
    let probabilities: BTreeMap<VertexId, f64> = km
        .row(0, 0)
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(y, &p)| (y as VertexId, p))
        .collect();
    let mut observed: BTreeMap<VertexId, u64> = BTreeMap::new();
    for s in sim.states_at(k).flatten() {
        *observed.entry(s).or_default() += 1;
    }
    let chi = chi_square(&observed, &probabilities);
    Ok(OracleGate {
        j: g.level(),
        t,
        oracle_feasible: true,
        passed: !chi.rejected_at(GATE_LEVEL),
        chi_square: Some(chi),
    })
}

/// Cauchy-in-`j` comparison of the laws of `X_t` across consecutive levels.
pub fn level_consistency(study: &mut Study) -> Result<ConvergenceReport> {
    let cfg = study.config().clone();
    if cfg.levels.min == cfg.levels.max {
        return Err(config_error("/levels", "level consistency needs at least two levels"));
    }
    let mut levels = Vec::new();
    let mut gates = Vec::new();
    for j in cfg.levels.iter() {
        study.simulation(j)?;
        let g = &study.graphs[&j];
        let sim = &study.sims[&j];
        levels.push(LevelSummary {
            j,
            seed: sim.seed,
            num_vertices: g.num_vertices(),
            num_paths: sim.num_paths(),
            exited: sim.num_exited(),
            exit_fraction: sim.num_exited() as f64 / sim.num_paths() as f64,
        });
        gates.push(oracle_gate(g, sim, cfg.rate_mode, cfg.gate_time)?);
    }
    study.calibration()?;
    let calibration = study.calibration.as_ref().expect("calibrated");
    let mut times = Vec::new();
    let mut marginal_times = cfg.marginal_times.clone();
    marginal_times.sort_by(f64::total_cmp);
    marginal_times.dedup();
    for &t in &marginal_times {
        let mut pairs = Vec::new();
        for j in cfg.levels.min..cfg.levels.max {
            let (a, b) = (&study.sims[&j], &study.sims[&(j + 1)]);
            let (ka, kb) = (a.time_index(t).expect("recorded"), b.time_index(t).expect("recorded"));
            let (ra, rb) = (rho_sample(study, a, ka), rho_sample(study, b, kb));
            let ks_coordinates = (0..cfg.dim)
                .map(|axis| ks_sorted(&coordinate_sample(study, a, ka, axis), &coordinate_sample(study, b, kb, axis)))
                .collect();
            pairs.push(PairDistance {
                j,
                j_next: j + 1,
                ks_rho: ks_sorted(&ra, &rb),
                ks_coordinates,
                tv_bins: total_variation(&binned_counts(study, a, ka), &binned_counts(study, b, kb)),
                ks_critical: ks_critical_1pct(ra.len(), rb.len()),
            });
        }
        let ks: Vec<f64> = pairs.iter().map(|p| p.ks_rho).collect();
        let allowed = usize::from(ks.len() >= 3);
        let coarse = &study.sims[&cfg.levels.min];
        let k = coarse.time_index(t).expect("recorded");
        let (ca, cb) = (rho_sample(study, coarse, k), rho_sample(study, calibration, k));
        let top = pairs.last().expect("two levels");
        times.push(TimeComparison {
            t,
            decreasing: ks.iter().all(|&d| d == 0.0) || decreasing_with_inversions(&ks, allowed),
            top_pair_below_critical: top.ks_rho < top.ks_critical,
            calibration_ks: ks_sorted(&ca, &cb),
            calibration_critical: ks_critical_1pct(ca.len(), cb.len()),
            pairs,
        });
    }
    let verdict = gates.iter().all(|g| g.passed).then(|| ConvergenceVerdict {
        decreasing: times.iter().all(|t| t.decreasing),
        top_pair_below_critical: times.iter().all(|t| t.top_pair_below_critical),
        calibration_below_critical: times.iter().all(|t| t.calibration_ks < t.calibration_critical),
    });
    Ok(ConvergenceReport {
        levels,
        gates,
        times,
        verdict,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelProportion {
    pub j: u32,
    pub p: Proportion,
}

/// Exceedance probabilities of one statistic at one threshold across levels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceSeries {
    /// `M` for the supremum, `θ` for the modulus.
    pub parameter: f64,
    pub per_level: Vec<LevelProportion>,
    pub max_over_levels: f64,
    /// No level exceeds the coarsest level by more than two combined standard errors.
    pub no_growth: bool,
}

impl ExceedanceSeries {
    fn new(parameter: f64, per_level: Vec<LevelProportion>) -> Self {
        let reference = per_level[0].p;
        let no_growth = per_level.iter().all(|l| {
            let se = (reference.std_error.powi(2) + l.p.std_error.powi(2)).sqrt();
            l.p.estimate <= reference.estimate + 2.0 * se
        });
        ExceedanceSeries {
            parameter,
            max_over_levels: per_level.iter().map(|l| l.p.estimate).fold(0.0, f64::max),
            per_level,
            no_growth,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessReport {
    pub t_max: f64,
    pub delta1: f64,
    pub sup_exceeds: Vec<ExceedanceSeries>,
    pub modulus_exceeds: Vec<ExceedanceSeries>,
    /// At every level the modulus exceedance frequency is nondecreasing in `θ`.
    pub monotone_in_theta: bool,
    pub no_growth: bool,
}

/// Level-uniformity of `P[sup ρ > M]` and `P[w_ρ(θ) > δ1]`.
pub fn tightness_probe(study: &mut Study) -> Result<TightnessReport> {
    let cfg = study.config().clone();
    for j in cfg.levels.iter() {
        study.simulation(j)?;
    }
    let sims: Vec<&LevelSimulation> = cfg.levels.iter().map(|j| &study.sims[&j]).collect();
    let n = cfg.num_paths as u64;
    let sup_exceeds: Vec<ExceedanceSeries> = cfg
        .tightness
        .m_grid
        .iter()
        .map(|&m| {
            let per_level = sims
                .iter()
                .map(|s| LevelProportion {
                    j: s.j,
                    p: Proportion::new(s.sup_rho.iter().filter(|&&r| r > m).count() as u64, n),
                })
                .collect();
            ExceedanceSeries::new(m, per_level)
        })
        .collect();
    let modulus_exceeds: Vec<ExceedanceSeries> = cfg
        .tightness
        .theta_grid
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let per_level = sims
                .iter()
                .map(|s| LevelProportion {
                    j: s.j,
                    p: Proportion::new(s.modulus_exceeds.iter().filter(|e| e[i]).count() as u64, n),
                })
                .collect();
            ExceedanceSeries::new(theta, per_level)
        })
        .collect();
    let mut order: Vec<usize> = (0..modulus_exceeds.len()).collect();
    order.sort_by(|&a, &b| modulus_exceeds[a].parameter.total_cmp(&modulus_exceeds[b].parameter));
    let monotone_in_theta = (0..sims.len()).all(|l| {
        order
            .windows(2)
            .all(|w| modulus_exceeds[w[0]].per_level[l].p.successes <= modulus_exceeds[w[1]].per_level[l].p.successes)
    });
    let no_growth = sup_exceeds.iter().chain(&modulus_exceeds).all(|s| s.no_growth);
    Ok(TightnessReport {
        t_max: cfg.t_max,
        delta1: cfg.tightness.delta1,
        sup_exceeds,
        modulus_exceeds,
        monotone_in_theta,
        no_growth,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationEntry {
    pub j: u32,
    pub t: f64,
    /// `(2^j δ)^{-2/d}`; entries below it are excluded from the verdict.
    pub time_floor: f64,
    pub below_floor: bool,
    /// `P[X_t ∉ S^j]`, censored paths counted as outside.
    pub outside: Proportion,
    /// `m_j(E^j \ S^j)`.
    pub complement_measure: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationOracle {
    pub j: u32,
    pub t: f64,
    pub exact: f64,
    pub simulated: f64,
    pub std_error: f64,
    pub within_3se: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationSeries {
    pub t: f64,
    /// `P_{j+1} / P_j` for consecutive levels above the time floor with `P_j > 0`.
    pub ratios: Vec<(u32, f64)>,
    /// Each level above the floor satisfies `P_{j+1} ≤ 0.75 P_j`.
    pub decays: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccupationReport {
    pub delta: f64,
    pub entries: Vec<OccupationEntry>,
    pub series: Vec<OccupationSeries>,
    pub oracle: Vec<OccupationOracle>,
    pub warnings: Vec<String>,
}

/// Largest admissible ratio between occupation frequencies at consecutive levels.
pub const OCCUPATION_RATIO: f64 = 0.75;

/// Frequency of `X_t ∉ S^j` across levels.
pub fn star_occupation(study: &mut Study) -> Result<OccupationReport> {
    let cfg = study.config().clone();
    let d = cfg.dim as f64;
    let mut entries = Vec::new();
    let mut oracle = Vec::new();
    let mut warnings = Vec::new();
    let mut times = cfg.star_occupation.times.clone();
    times.sort_by(f64::total_cmp);
    times.dedup();
    for j in cfg.levels.iter() {
        study.simulation(j)?;
        let g = &study.graphs[&j];
        let sim = &study.sims[&j];
        let interior = interior_set(g);
        let floor = (2f64.powi(j as i32) * cfg.star_occupation.delta).powf(-2.0 / d);
        for &t in &times {
            let k = sim.time_index(t).expect("recorded");
            let outside = sim.states_at(k).filter(|s| s.is_none_or(|v| !interior.mask[v as usize])).count();
            let below_floor = t < floor;
            if below_floor {
                warnings.push(format!("t = {t} is below the time floor {floor} at level {j}"));
            }
            let outside = Proportion::new(outside as u64, sim.num_paths() as u64);
            entries.push(OccupationEntry {
                j,
                t,
                time_floor: floor,
                below_floor,
                outside,
                complement_measure: interior.complement_measure,
            });
            if j == cfg.levels.min && g.num_vertices() <= ORACLE_VERTEX_LIMIT && t > 0.0 {
                let km =
                    heat_kernel_times(g, cfg.rate_mode.rate(j, cfg.dim), &[t], &[sim.start], DEFAULT_TERM_CAP)?;
                let exact: f64 = km
                    .row(0, 0)
                    .iter()
                    .zip(&interior.mask)
                    .filter(|(_, &inside)| !inside)
                    .map(|(p, _)| p)
                    .sum();
                let se = (exact * (1.0 - exact) / sim.num_paths() as f64).sqrt();
                oracle.push(OccupationOracle {
                    j,
                    t,
                    exact,
                    simulated: outside.estimate,
                    std_error: se,
                    within_3se: (outside.estimate - exact).abs() <= 3.0 * se,
                });
            }
        }
    }
    let series = times
        .iter()
        .map(|&t| {
            let above: Vec<&OccupationEntry> = entries.iter().filter(|e| e.t == t && !e.below_floor).collect();
            let ratios = above
                .windows(2)
                .filter(|w| w[0].outside.estimate > 0.0)
                .map(|w| (w[1].j, w[1].outside.estimate / w[0].outside.estimate))
                .collect();
            OccupationSeries {
                t,
                ratios,
                decays: above
                    .windows(2)
                    .all(|w| w[1].outside.estimate <= OCCUPATION_RATIO * w[0].outside.estimate),
            }
        })
        .collect();
    Ok(OccupationReport {
        delta: cfg.star_occupation.delta,
        entries,
        series,
        oracle,
        warnings,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnulusResult {
    pub dim: usize,
    pub level: u32,
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub start_radius: f64,
    pub target: f64,
    pub hitting: HittingStats,
    /// `3 SE + 0.1 · 2^{-j}`.
    pub tolerance: f64,
    pub deviation: f64,
    pub within: bool,
}

/// Per-coordinate variance rate of `X_t - x0` on paths that stay away from `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceResult {
    pub rate_mode: RateMode,
    pub level: u32,
    pub t: f64,
    pub kept: u64,
    pub discarded: u64,
    pub per_coordinate: Vec<f64>,
    pub rate: f64,
    pub expected: f64,
    pub relative_error: f64,
    pub within_5pct: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmdReport {
    pub annuli: Vec<AnnulusResult>,
    pub variance: Vec<VarianceResult>,
}

/// Hitting probability of the inner ball before the outer sphere.
pub fn annulus_hitting(a: &AnnulusConfig, num_paths: usize, t_max: f64, seed: u64, mode: RateMode) -> Result<AnnulusResult> {
    let k = DarningRegion::ball(vec![0.0; a.dim], a.inner_radius)?;
    let g = DarnedLattice::build(&k, a.level, a.window_radius())?;
    annulus_hitting_on(&g, a, num_paths, t_max, seed, mode)
}

fn annulus_hitting_on(
    g: &DarnedLattice,
    a: &AnnulusConfig,
    num_paths: usize,
    t_max: f64,
    seed: u64,
    mode: RateMode,
) -> Result<AnnulusResult> {
    let mut x = vec![0.0; a.dim];
    x[0] = a.start_radius;
    let start = g
        .vertex_at_point(&x)
        .ok_or_else(|| Error::InvalidArgument(format!("start radius {} is not a lattice point", a.start_radius)))?;
    let barrier: Vec<VertexId> = (0..g.num_regular() as VertexId)
        .filter(|&v| {
            let p = g.position(v).expect("regular");
            p.iter().map(|c| c * c).sum::<f64>().sqrt() >= a.outer_radius
        })
        .collect();
    let star = g.star().expect("ball region");
    let walk = WalkConfig::new(t_max, seed, num_paths)?.with_rate_mode(mode);
    let hitting = hitting_stats(g, &walk, start, &[star], &barrier)?;
    let target = a.target();
    let tolerance = 3.0 * hitting.hit.std_error + 0.1 * g.mesh();
    let deviation = (hitting.hit.estimate - target).abs();
    Ok(AnnulusResult {
        dim: a.dim,
        level: a.level,
        inner_radius: a.inner_radius,
        outer_radius: a.outer_radius,
        start_radius: a.start_radius,
        target,
        hitting,
        tolerance,
        deviation,
        within: deviation <= tolerance,
    })
}

/// Variance rate of the coordinates of `X_t` from `start` on paths avoiding the `avoid`-neighbourhood of `K`.
pub fn variance_rate(
    g: &DarnedLattice,
    mode: RateMode,
    start: VertexId,
    t: f64,
    avoid: f64,
    num_paths: usize,
    seed: u64,
) -> Result<VarianceResult> {
    g.check_vertex(start)?;
    let metric = QuotientMetric::new(g);
    let rate = mode.rate(g.level(), g.dim());
    let origin = metric
        .position(start)
        .ok_or_else(|| Error::InvalidArgument("variance start must be a regular vertex".into()))?
        .to_vec();
    let d = g.dim();
    let finals: Vec<Option<Vec<f64>>> = (0..num_paths as u64)
        .into_par_iter()
        .map(|stream| {
            let mut rng = path_rng(seed, stream);
            let path = sample_path_with(g, rate, t, start, &mut rng);
            if path.exited_window || path.events.iter().any(|&(_, v)| metric.to_region(v) <= avoid) {
                return None;
            }
            let last = path.events.last().expect("nonempty").1;
            let p = metric.position(last).expect("kept paths avoid the star");
            Some(p.iter().zip(&origin).map(|(a, b)| a - b).collect())
        })
        .collect();
    let kept: Vec<&Vec<f64>> = finals.iter().flatten().collect();
    let n = kept.len() as f64;
    let per_coordinate: Vec<f64> = (0..d)
        .map(|i| {
            if kept.len() < 2 {
                return 0.0;
            }
            let mean = kept.iter().map(|x| x[i]).sum::<f64>() / n;
            kept.iter().map(|x| (x[i] - mean).powi(2)).sum::<f64>() / (n - 1.0) / t
        })
        .collect();
    let rate_measured = per_coordinate.iter().sum::<f64>() / d as f64;
    let expected = match mode {
        RateMode::Paper => 1.0 / d as f64,
        RateMode::Matched => 1.0,
    };
    let relative_error = (rate_measured - expected).abs() / expected;
    Ok(VarianceResult {
        rate_mode: mode,
        level: g.level(),
        t,
        kept: kept.len() as u64,
        discarded: (num_paths - kept.len()) as u64,
        per_coordinate,
        rate: rate_measured,
        expected,
        relative_error,
        within_5pct: relative_error <= 0.05,
    })
}

/// Comparison with classical Brownian formulas away from `K`.
pub fn bmd_comparison(study: &mut Study) -> Result<BmdReport> {
    let cfg = study.config().clone();
    let mut annuli = Vec::new();
    for a in &cfg.bmd.annuli {
        let k = DarningRegion::ball(vec![0.0; a.dim], a.inner_radius)?;
        let window = a.window_radius();
        let g = study.cached_graph(
            format!("annulus_d{}_j{}.bin", a.dim, a.level),
            |g| g.level() == a.level && g.dim() == a.dim && g.window_radius() == window && g.region() == Some(&k),
            || DarnedLattice::build(&k, a.level, window),
        )?;
        let seed = mix(cfg.seed, ANNULUS_SALT + a.dim as u64);
        annuli.push(annulus_hitting_on(&g, a, cfg.num_paths, cfg.bmd.hitting_t_max, seed, cfg.rate_mode)?);
    }
    let level = cfg.bmd.variance_level.unwrap_or(cfg.levels.max);
    let start_point = cfg.bmd.variance_start.clone();
    let g = study.graph(level)?;
    let start = g
        .vertex_at_point(&start_point)
        .ok_or_else(|| config_error("/bmd/variance_start", format!("not a vertex at level {level}")))?;
    let variance = [RateMode::Paper, RateMode::Matched]
        .into_iter()
        .enumerate()
        .map(|(i, mode)| {
            variance_rate(
                g,
                mode,
                start,
                cfg.bmd.variance_time,
                cfg.bmd.variance_avoid,
                cfg.num_paths,
                mix(cfg.seed, VARIANCE_SALT + i as u64),
            )
        })
        .collect::<Result<_>>()?;
    Ok(BmdReport { annuli, variance })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarDegreeReport {
    pub points: Vec<(u32, usize)>,
    pub slope: f64,
    /// `d - 1`.
    pub expected_slope: f64,
    pub slope_within: bool,
    /// `(j, m_j(E^j \ S^j))`.
    pub complement_measures: Vec<(u32, f64)>,
}

/// Growth of the star degree and of `m_j(E^j \ S^j)` with the level.
pub fn star_degree_report(region: &DarningRegion, levels: LevelRange, window: f64) -> Result<StarDegreeReport> {
    let scaling = star_degree_scaling(region, levels.min, levels.max, window)?;
    let complement_measures = levels
        .iter()
        .map(|j| Ok((j, interior_set(&DarnedLattice::build(region, j, window)?).complement_measure)))
        .collect::<Result<_>>()?;
    let expected_slope = region.dim() as f64 - 1.0;
    Ok(StarDegreeReport {
        slope_within: (scaling.slope - expected_slope).abs() <= 0.3,
        expected_slope,
        points: scaling.points,
        slope: scaling.slope,
        complement_measures,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorStudy {
    pub function: TestFunction,
    pub levels: Vec<GeneratorLevel>,
    /// `max_{S^j} |L^j |x|^2 - 1|` per level.
    pub quadratic_error: Vec<(u32, f64)>,
    /// Consecutive ratios of the interior error of the bump.
    pub error_ratios: Vec<(u32, f64)>,
    pub sup_over_levels: f64,
    /// Slope of `log2 max_x L^j f` against `j`.
    pub log2_slope: f64,
}

/// `max_{S^j} |L^j |x|^2 - 1|`.
pub fn quadratic_generator_error(g: &DarnedLattice) -> f64 {
    let f = VertexFunction::sample(g, &TestFunction::Quadratic);
    let lf = generator_apply(g, &f);
    interior_set(g)
        .members
        .iter()
        .map(|&v| (lf.values()[v as usize] - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Generator consistency and boundedness for a class-G function.
pub fn generator_study(region: &DarningRegion, f: &TestFunction, levels: LevelRange, window: f64) -> Result<GeneratorStudy> {
    if !f.is_class_g(region) {
        return Err(Error::NotClassG);
    }
    let mut out = Vec::new();
    let mut quadratic_error = Vec::new();
    for j in levels.iter() {
        let g = DarnedLattice::build(region, j, window)?;
        out.push(generator_level(&g, f)?);
        quadratic_error.push((j, quadratic_generator_error(&g)));
    }
    let error_ratios = out
        .windows(2)
        .filter(|w| w[0].interior_error > 0.0)
        .map(|w| (w[1].j, w[1].interior_error / w[0].interior_error))
        .collect();
    let pts: Vec<(f64, f64)> = out
        .iter()
        .filter(|l| l.max_all > 0.0)
        .map(|l| (l.j as f64, l.max_all.log2()))
        .collect();
    Ok(GeneratorStudy {
        function: f.clone(),
        sup_over_levels: out.iter().map(|l| l.max_all).fold(0.0, f64::max),
        log2_slope: least_squares_slope(&pts),
        levels: out,
        quadratic_error,
        error_ratios,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelStudy {
    pub ondiag: OnDiagReport,
    pub offdiag: Vec<OffDiagReport>,
    /// Largest over smallest empirical off-diagonal prefactor across levels.
    pub offdiag_spread: f64,
    pub nash: Vec<NashReport>,
    pub nash_spread: f64,
}

fn spread(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo > 0.0 && lo.is_finite() {
        hi / lo
    } else {
        0.0
    }
}

/// On- and off-diagonal heat-kernel bounds and the Nash spot check across levels.
pub fn kernel_study(
    region: Option<&DarningRegion>,
    dim: usize,
    kc: &KernelConfig,
    mode: RateMode,
    seed: u64,
) -> Result<KernelStudy> {
    let graphs: Vec<DarnedLattice> = kc
        .levels
        .iter()
        .map(|j| match region {
            Some(k) => DarnedLattice::build(k, j, kc.window_radius),
            None => DarnedLattice::build_plain(dim, j, kc.window_radius),
        })
        .collect::<Result<_>>()?;
    let ondiag = ondiag_bound_check(&graphs, mode, &kc.t_grid)?;
    let offdiag: Vec<OffDiagReport> = graphs
        .iter()
        .map(|g| offdiag_bound_check(g, mode, &kc.t_grid, &probe_sources(g)))
        .collect::<Result<_>>()?;
    let nash: Vec<NashReport> = graphs
        .iter()
        .map(|g| nash_spot_check(g, kc.nash_samples, mix(seed, NASH_SALT + g.level() as u64)))
        .collect();
    Ok(KernelStudy {
        offdiag_spread: spread(offdiag.iter().map(|r| r.max_ratio)),
        nash_spread: spread(nash.iter().map(|r| r.min_ratio)),
        ondiag,
        offdiag,
        nash,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoStudy {
    pub reports: Vec<IsoReport>,
    /// `(j, iso_ratio)` of a singleton in `S^j`.
    pub singleton_ratios: Vec<(u32, f64)>,
    /// Star plus its neighbours, against the augmented-set chain.
    pub case_two: Vec<(u32, CaseTwoComparison)>,
    /// Largest over smallest minimum ratio across levels.
    pub spread: f64,
}

/// Isoperimetric minima across levels.
pub fn iso_study(region: Option<&DarningRegion>, dim: usize, ic: &IsoConfig) -> Result<IsoStudy> {
    let mut reports = Vec::new();
    let mut singleton_ratios = Vec::new();
    let mut case_two = Vec::new();
    for j in ic.levels.iter() {
        let g = match region {
            Some(k) => DarnedLattice::build(k, j, ic.window_radius)?,
            None => DarnedLattice::build_plain(dim, j, ic.window_radius)?,
        };
        reports.push(iso_report(&g, &ic.families, ic.budget)?);
        if let Some(&v) = interior_set(&g).members.first() {
            let a = VertexSet::new(&g, [v])?;
            singleton_ratios.push((j, crate::isoperimetry::iso_ratio(&g, &a)?));
        }
        if let Some(star) = g.star() {
            let a = VertexSet::new(&g, std::iter::once(star).chain(g.neighbors(star).iter().copied()))?;
            case_two.push((j, case_two_comparison(&g, &a)?));
        }
    }
    Ok(IsoStudy {
        spread: spread(reports.iter().map(|r| r.min_ratio)),
        reports,
        singleton_ratios,
        case_two,
    })
}

/// A CSV table: header and rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        w.write_record(&self.header).map_err(|e| csv_error(path, e))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| csv_error(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

impl ConvergenceReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["t", "j", "j_next", "ks_rho", "ks_critical", "tv_bins", "ks_coordinates"]);
        for tc in &self.times {
            for p in &tc.pairs {
                let coords: Vec<String> = p.ks_coordinates.iter().map(f64::to_string).collect();
                t.push(row![tc.t, p.j, p.j_next, p.ks_rho, p.ks_critical, p.tv_bins, coords.join(";")]);
            }
        }
        t
    }
}

impl TightnessReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["statistic", "parameter", "j", "probability", "std_error"]);
        for (name, series) in [("sup_rho", &self.sup_exceeds), ("modulus", &self.modulus_exceeds)] {
            for s in series {
                for l in &s.per_level {
                    t.push(row![name, s.parameter, l.j, l.p.estimate, l.p.std_error]);
                }
            }
        }
        t
    }
}

impl OccupationReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["j", "t", "time_floor", "below_floor", "outside", "std_error", "complement_measure"]);
        for e in &self.entries {
            t.push(row![
                e.j,
                e.t,
                e.time_floor,
                e.below_floor,
                e.outside.estimate,
                e.outside.std_error,
                e.complement_measure
            ]);
        }
        t
    }
}

impl BmdReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["kind", "dim", "level", "mode", "measured", "std_error", "target", "tolerance", "within"]);
        for a in &self.annuli {
            t.push(row![
                "annulus_hit",
                a.dim,
                a.level,
                "",
                a.hitting.hit.estimate,
                a.hitting.hit.std_error,
                a.target,
                a.tolerance,
                a.within
            ]);
        }
        for v in &self.variance {
            let mode = match v.rate_mode {
                RateMode::Paper => "paper",
                RateMode::Matched => "matched",
            };
            t.push(row![
                "variance_rate",
                v.per_coordinate.len(),
                v.level,
                mode,
                v.rate,
                "",
                v.expected,
                0.05 * v.expected,
                v.within_5pct
            ]);
        }
        t
    }
}

impl StarDegreeReport {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["j", "star_degree", "complement_measure"]);
        for (&(j, deg), &(_, m)) in self.points.iter().zip(&self.complement_measures) {
            t.push(row![j, deg, m]);
        }
        t
    }
}

impl GeneratorStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "j",
            "max_all",
            "at_star",
            "max_star_adjacent",
            "max_interior",
            "max_other",
            "interior_error",
            "quadratic_error",
        ]);
        for (l, (_, q)) in self.levels.iter().zip(&self.quadratic_error) {
            t.push(row![l.j, l.max_all, l.at_star, l.max_star_adjacent, l.max_interior, l.max_other, l.interior_error, q]);
        }
        t
    }
}

impl KernelStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["kind", "j", "t", "value"]);
        for e in &self.ondiag.entries {
            t.push(row!["ondiag_scaled_max", e.j, e.t, e.scaled_max]);
        }
        for r in &self.offdiag {
            t.push(row!["offdiag_max_ratio", r.j, "", r.max_ratio]);
        }
        for r in &self.nash {
            t.push(row!["nash_min_ratio", r.j, "", r.min_ratio]);
        }
        t
    }
}

impl IsoStudy {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["j", "family", "sets_examined", "min_star_free", "min_with_star", "truncated"]);
        for r in &self.reports {
            for f in &r.families {
                let ratio = |s: &Option<crate::isoperimetry::SetRecord>| s.as_ref().map_or(String::new(), |s| s.ratio.to_string());
                t.push(row![r.j, f.family, f.sets_examined, ratio(&f.min_star_free), ratio(&f.min_with_star), f.truncated]);
            }
        }
        t
    }
}

/// A JSON value checked to contain no `null`, which is how non-finite floats serialize.
pub fn finite_json<T: Serialize>(value: &T) -> Result<serde_json::Value> {
    let v = serde_json::to_value(value)?;
    fn walk(v: &serde_json::Value, at: &mut String) -> Result<()> {
        match v {
            serde_json::Value::Null => Err(Error::NonFinite(if at.is_empty() { "/".into() } else { at.clone() })),
            serde_json::Value::Array(a) => a.iter().enumerate().try_for_each(|(i, x)| {
                let len = at.len();
                at.push_str(&format!("/{i}"));
                walk(x, at)?;
                at.truncate(len);
                Ok(())
            }),
            serde_json::Value::Object(o) => o.iter().try_for_each(|(k, x)| {
                let len = at.len();
                at.push('/');
                at.push_str(k);
                walk(x, at)?;
                at.truncate(len);
                Ok(())
            }),
            _ => Ok(()),
        }
    }
    walk(&v, &mut String::new())?;
    Ok(v)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvelope {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub report: serde_json::Value,
}

/// Writes `value` as a pretty JSON report wrapped with the schema version, config hash and seed.
pub fn write_report<T: Serialize>(path: &Path, experiment: &str, cfg: &RunConfig, value: &T) -> Result<()> {
    let envelope = ReportEnvelope {
        schema_version: SCHEMA_VERSION,
        experiment: experiment.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        report: finite_json(value)?,
    };
    write_json(path, &envelope)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentStatus {
    pub name: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// `(j, seed)` for every simulated level.
    pub level_seeds: Vec<(u32, u64)>,
    pub graphs: Vec<String>,
    pub experiments: Vec<ExperimentStatus>,
}

/// Result of [`run`]: the manifest that was written and whether every experiment succeeded.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.manifest.experiments.iter().all(|e| e.ok)
    }
}

fn run_one(study: &mut Study, e: Experiment, dir: &Path) -> Result<Vec<String>> {
    let cfg = study.config().clone();
    let name = e.name();
    let json = dir.join(format!("{name}.json"));
    let csv = dir.join(format!("{name}.csv"));
    let need_region = || {
        cfg.region
            .clone()
            .ok_or_else(|| config_error("/region", format!("{name} needs a darning region")))
    };
    let table = match e {
        Experiment::StarDegree => {
            let r = star_degree_report(&need_region()?, cfg.star_degree.levels, cfg.star_degree.window_radius)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::Generator => {
            let k = need_region()?;
            let r = generator_study(&k, &TestFunction::bump_around(&k), cfg.generator.levels, cfg.generator.window_radius)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::HeatKernel => {
            let r = kernel_study(cfg.region.as_ref(), cfg.dim, &cfg.heat_kernel, cfg.rate_mode, cfg.seed)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::Isoperimetry => {
            let r = iso_study(cfg.region.as_ref(), cfg.dim, &cfg.isoperimetry)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::LevelConsistency => {
            let r = level_consistency(study)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::TightnessProbe => {
            let r = tightness_probe(study)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::StarOccupation => {
            let r = star_occupation(study)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
        Experiment::BmdComparison => {
            let r = bmd_comparison(study)?;
            write_report(&json, name, &cfg, &r)?;
            r.table()
        }
    };
    table.write(&csv)?;
    Ok(vec![format!("{name}.json"), format!("{name}.csv")])
}

/// Runs `experiments` (in dependency order, duplicates removed) and writes the artifact directory.
///
/// A failing experiment is recorded in the manifest and does not stop the
/// others; artifacts of completed experiments are kept.
pub fn run_experiments(cfg: &RunConfig, experiments: &[Experiment]) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ordered: BTreeSet<Experiment> = experiments.iter().copied().collect();
    let mut study = Study::new(cfg.clone(), Some(dir.join("graphs")))?;
    let mut statuses = Vec::new();
    let mut timing = BTreeMap::new();
    let simulates = ordered.iter().any(|e| e.simulates());
    let mut build_error = None;
    if simulates {
        let clock = Instant::now();
        for j in cfg.levels.iter() {
            if let Err(e) = study.graph(j) {
                build_error = Some(e.to_string());
                break;
            }
        }
        timing.insert("build".to_string(), clock.elapsed().as_secs_f64());
    }
    for e in ordered {
        let clock = Instant::now();
        let result = match (&build_error, e.simulates()) {
            (Some(msg), true) => Err(msg.clone()),
            _ => run_one(&mut study, e, &dir).map_err(|err| err.to_string()),
        };
        timing.insert(e.name().to_string(), clock.elapsed().as_secs_f64());
        statuses.push(match result {
            Ok(outputs) => ExperimentStatus {
                name: e.name().to_string(),
                ok: true,
                error: None,
                outputs,
            },
            Err(error) => ExperimentStatus {
                name: e.name().to_string(),
                ok: false,
                error: Some(error),
                outputs: Vec::new(),
            },
        });
    }
    let mut graphs = study.graph_files.clone();
    graphs.sort();
    graphs.dedup();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        level_seeds: study.sims.keys().map(|&j| (j, cfg.level_seed(j))).collect(),
        graphs,
        experiments: statuses,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    write_json(&dir.join("timing.json"), &timing)?;
    Ok(RunOutcome { manifest, output_dir: dir })
}

/// Runs the experiments listed in the config.
/// Runs the experiments listed in the config, or all of them when the list is empty.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    if cfg.experiments.is_empty() {
        run_experiments(cfg, &Experiment::ALL)
    } else {
        run_experiments(cfg, &cfg.experiments)
    }
}

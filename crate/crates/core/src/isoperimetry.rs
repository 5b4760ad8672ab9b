//! Cut weights and isoperimetric ratios on darned lattices.
//!
//! Every edge carries weight `2^{-jd}/(2d)`. For a finite set `A` the ratio
//! `μ(A, Aᶜ) / (2^{-j} m_j(A)^{(d-1)/d})` is bounded below uniformly in `j`;
//! this module evaluates it exactly on enumerable families of sets.

use std::collections::{HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{DarnedLattice, VertexId};
use crate::rng::path_rng;

/// A nonempty vertex set with its cached measure.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexSet {
    ids: Vec<VertexId>,
    measure: f64,
    connected: bool,
}

impl VertexSet {
    pub fn new(g: &DarnedLattice, ids: impl IntoIterator<Item = VertexId>) -> Result<Self> {
        let mut ids: Vec<VertexId> = ids.into_iter().collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.is_empty() {
            return Err(Error::InvalidArgument("vertex set must be nonempty".into()));
        }
        for &v in &ids {
            g.check_vertex(v)?;
        }
        let measure = ids.iter().map(|&v| g.measure(v)).sum();
        let connected = is_connected(g, &ids);
        Ok(VertexSet {
            ids,
            measure,
            connected,
        })
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.measure
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.ids.binary_search(&v).is_ok()
    }
}

fn is_connected(g: &DarnedLattice, ids: &[VertexId]) -> bool {
    let mut seen = HashSet::from([ids[0]]);
    let mut queue = VecDeque::from([ids[0]]);
    while let Some(v) = queue.pop_front() {
        for &w in g.neighbors(v) {
            if ids.binary_search(&w).is_ok() && seen.insert(w) {
                queue.push_back(w);
            }
        }
    }
    seen.len() == ids.len()
}

fn check_proper(g: &DarnedLattice, a: &VertexSet) -> Result<()> {
    if a.len() == g.num_vertices() {
        return Err(Error::InvalidArgument("set has empty complement".into()));
    }
    Ok(())
}

/// `μ(A, Aᶜ)` by iterating over the edges leaving `A`.
pub fn cut_weight(g: &DarnedLattice, a: &VertexSet) -> Result<f64> {
    check_proper(g, a)?;
    let crossing: usize = a
        .ids
        .iter()
        .map(|&x| g.neighbors(x).iter().filter(|&&y| !a.contains(y)).count())
        .sum();
    Ok(g.edge_weight() * crossing as f64)
}

/// `μ(A, Aᶜ)` as weighted degree of `A` minus twice its internal edge weight.
pub fn cut_weight_by_degrees(g: &DarnedLattice, a: &VertexSet) -> Result<f64> {
    check_proper(g, a)?;
    let degree_sum: usize = a.ids.iter().map(|&x| g.degree(x)).sum();
    let internal_oriented: usize = a
        .ids
        .iter()
        .map(|&x| g.neighbors(x).iter().filter(|&&y| a.contains(y)).count())
        .sum();
    Ok(g.edge_weight() * (degree_sum - internal_oriented) as f64)
}

fn ratio_of(g: &DarnedLattice, cut: f64, measure: f64) -> f64 {
    let d = g.dim() as f64;
    cut / (g.mesh() * measure.powf((d - 1.0) / d))
}

/// `μ(A, Aᶜ) / (2^{-j} m_j(A)^{(d-1)/d})`.
pub fn iso_ratio(g: &DarnedLattice, a: &VertexSet) -> Result<f64> {
    Ok(ratio_of(g, cut_weight(g, a)?, a.measure))
}

/// One evaluated set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetRecord {
    pub size: usize,
    pub contains_star: bool,
    pub measure: f64,
    pub cut: f64,
    pub ratio: f64,
    pub members: Vec<VertexId>,
}

impl SetRecord {
    pub fn evaluate(g: &DarnedLattice, a: &VertexSet) -> Result<Self> {
        let cut = cut_weight(g, a)?;
        Ok(SetRecord {
            size: a.len(),
            contains_star: g.star().is_some_and(|s| a.contains(s)),
            measure: a.measure,
            cut,
            ratio: ratio_of(g, cut, a.measure),
            members: a.ids.clone(),
        })
    }
}

/// Largest size for exhaustive connected-set enumeration; use `random:NxK` beyond it.
pub const MAX_CONNECTED_SIZE: usize = 8;

/// A family of finite sets to certify.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Every connected set with at most `max_size` vertices.
    AllConnectedUpTo { max_size: usize },
    /// Graph-metric balls of radius `r · 2^{-j}` about the star and the vertex nearest the origin.
    MetricBalls { radii: Vec<u32> },
    /// Randomly grown connected sets.
    RandomConnected { count: usize, size: usize, seed: u64 },
    /// Hop neighbourhoods of the star, from `0` to `hops` hops.
    StarNeighborhoods { hops: u32 },
}

impl Family {
    /// Parses `connected:6`, `balls:1..16`, `balls:1;2;4`, `star:2` or `random:100x8`.
    pub fn parse(spec: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognised family '{spec}'"));
        let (name, arg) = spec.split_once(':').ok_or_else(bad)?;
        let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
        Ok(match name.trim() {
            "connected" => Family::AllConnectedUpTo {
                max_size: num(arg)? as usize,
            },
            "balls" => {
                let radii = if let Some((a, b)) = arg.split_once("..") {
                    (num(a)? as u32..=num(b)? as u32).collect()
                } else {
                    arg.split(';').map(|r| num(r).map(|r| r as u32)).collect::<Result<_>>()?
                };
                Family::MetricBalls { radii }
            }
            "star" => Family::StarNeighborhoods { hops: num(arg)? as u32 },
            "random" => {
                let (count, size) = arg.split_once('x').ok_or_else(bad)?;
                Family::RandomConnected {
                    count: num(count)? as usize,
                    size: num(size)? as usize,
                    seed: 0,
                }
            }
            _ => return Err(bad()),
        })
    }

    pub fn name(&self) -> String {
        match self {
            Family::AllConnectedUpTo { max_size } => format!("connected:{max_size}"),
            Family::MetricBalls { radii } => format!(
                "balls:{}",
                radii.iter().map(u32::to_string).collect::<Vec<_>>().join(";")
            ),
            Family::RandomConnected { count, size, .. } => format!("random:{count}x{size}"),
            Family::StarNeighborhoods { hops } => format!("star:{hops}"),
        }
    }
}

/// Parses a comma-separated family list such as `connected:6,balls:1..16,star:2`.
pub fn parse_families(list: &str) -> Result<Vec<Family>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(Family::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub sets_examined: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_star_free: Option<SetRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_with_star: Option<SetRecord>,
    /// Enumeration stopped at the budget before finishing.
    pub truncated: bool,
}

impl FamilyReport {
    fn new(family: &Family) -> Self {
        FamilyReport {
            family: family.name(),
            sets_examined: 0,
            min_star_free: None,
            min_with_star: None,
            truncated: false,
        }
    }

    pub fn min_ratio(&self) -> Option<f64> {
        [&self.min_star_free, &self.min_with_star]
            .iter()
            .filter_map(|r| r.as_ref().map(|r| r.ratio))
            .reduce(f64::min)
    }

    fn offer(&mut self, record: impl FnOnce() -> SetRecord, ratio: f64, with_star: bool) {
        self.sets_examined += 1;
        let slot = if with_star {
            &mut self.min_with_star
        } else {
            &mut self.min_star_free
        };
        if slot.as_ref().is_none_or(|r| ratio < r.ratio) {
            *slot = Some(record());
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsoReport {
    pub j: u32,
    pub families: Vec<FamilyReport>,
    pub min_ratio: f64,
    pub min_star_free: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_with_star: Option<f64>,
    pub truncated: bool,
}

/// Evaluates every family on one lattice, each capped at `budget` sets.
pub fn iso_report(g: &DarnedLattice, families: &[Family], budget: u64) -> Result<IsoReport> {
    let reports: Vec<FamilyReport> = families
        .iter()
        .map(|f| enumerate_family(g, f, budget))
        .collect::<Result<_>>()?;
    let free = reports
        .iter()
        .filter_map(|r| r.min_star_free.as_ref().map(|s| s.ratio))
        .fold(f64::INFINITY, f64::min);
    let with = reports
        .iter()
        .filter_map(|r| r.min_with_star.as_ref().map(|s| s.ratio))
        .reduce(f64::min);
    Ok(IsoReport {
        j: g.level(),
        min_ratio: with.map_or(free, |w| w.min(free)),
        min_star_free: free,
        min_with_star: with,
        truncated: reports.iter().any(|r| r.truncated),
        families: reports,
    })
}

pub fn enumerate_family(g: &DarnedLattice, family: &Family, budget: u64) -> Result<FamilyReport> {
    let mut report = FamilyReport::new(family);
    match family {
        Family::AllConnectedUpTo { max_size } => {
            if !(1..=MAX_CONNECTED_SIZE).contains(max_size) {
                return Err(Error::InvalidArgument(format!(
                    "connected sets are enumerated up to size {MAX_CONNECTED_SIZE}, got {max_size}"
                )));
            }
            let mut esu = Esu {
                g,
                max_size: *max_size,
                budget,
                report: &mut report,
                sub: Vec::with_capacity(*max_size),
            };
            esu.run();
        }
        Family::MetricBalls { radii } => {
            let mut centres: Vec<VertexId> = g.star().into_iter().collect();
            centres.extend(g.nearest_regular(&vec![0.0; g.dim()]));
            for &c in &centres {
                let hops = crate::lattice::graph_distance(g, c)?.hops;
                for &r in radii {
                    if report.sets_examined >= budget {
                        report.truncated = true;
                        break;
                    }
                    let ids = (0..g.num_vertices() as VertexId).filter(|&v| hops[v as usize] <= r);
                    offer_set(g, &mut report, VertexSet::new(g, ids)?)?;
                }
            }
        }
        Family::RandomConnected { count, size, seed } => {
            let mut rng = path_rng(*seed, g.level() as u64);
            for _ in 0..*count {
                if report.sets_examined >= budget {
                    report.truncated = true;
                    break;
                }
                let root = rng.gen_range(0..g.num_vertices()) as VertexId;
                let mut members = vec![root];
                let mut frontier: Vec<VertexId> = g.neighbors(root).to_vec();
                while members.len() < *size && !frontier.is_empty() {
                    let w = frontier.swap_remove(rng.gen_range(0..frontier.len()));
                    if members.contains(&w) {
                        continue;
                    }
                    members.push(w);
                    frontier.extend(g.neighbors(w).iter().filter(|u| !members.contains(u)));
                }
                offer_set(g, &mut report, VertexSet::new(g, members)?)?;
            }
        }
        Family::StarNeighborhoods { hops } => {
            if let Some(star) = g.star() {
                let table = crate::lattice::graph_distance(g, star)?.hops;
                for h in 0..=*hops {
                    let ids = (0..g.num_vertices() as VertexId).filter(|&v| table[v as usize] <= h);
                    offer_set(g, &mut report, VertexSet::new(g, ids)?)?;
                }
            }
        }
    }
    Ok(report)
}

fn offer_set(g: &DarnedLattice, report: &mut FamilyReport, a: VertexSet) -> Result<()> {
    if a.len() == g.num_vertices() {
        return Ok(());
    }
    let record = SetRecord::evaluate(g, &a)?;
    let (ratio, star) = (record.ratio, record.contains_star);
    report.offer(|| record, ratio, star);
    Ok(())
}

/// Connected-set enumeration by the ESU algorithm: each set is produced once,
/// from its smallest vertex, by growing through exclusive neighbourhoods.
struct Esu<'a> {
    g: &'a DarnedLattice,
    max_size: usize,
    budget: u64,
    report: &'a mut FamilyReport,
    sub: Vec<VertexId>,
}

impl Esu<'_> {
    fn run(&mut self) {
        if self.max_size == 0 {
            return;
        }
        for root in 0..self.g.num_vertices() as VertexId {
            let ext: Vec<VertexId> = self.g.neighbors(root).iter().copied().filter(|&u| u > root).collect();
            self.sub.push(root);
            let ok = self.extend(ext, root, self.g.degree(root), 0);
            self.sub.pop();
            if !ok {
                return;
            }
        }
    }

    /// Returns false once the budget is exhausted.
    fn extend(&mut self, mut ext: Vec<VertexId>, root: VertexId, degree_sum: usize, internal: usize) -> bool {
        if self.report.sets_examined >= self.budget {
            self.report.truncated = true;
            return false;
        }
        self.record(degree_sum, internal);
        if self.sub.len() == self.max_size {
            return true;
        }
        while let Some(w) = ext.pop() {
            let mut next = ext.clone();
            for &u in self.g.neighbors(w) {
                if u > root && !self.sub.contains(&u) && !self.sub.iter().any(|&s| self.g.are_adjacent(s, u)) {
                    next.push(u);
                }
            }
            let joined = self.sub.iter().filter(|&&s| self.g.are_adjacent(s, w)).count();
            self.sub.push(w);
            let ok = self.extend(next, root, degree_sum + self.g.degree(w), internal + joined);
            self.sub.pop();
            if !ok {
                return false;
            }
        }
        true
    }

    fn record(&mut self, degree_sum: usize, internal: usize) {
        let g = self.g;
        if self.sub.len() == g.num_vertices() {
            return;
        }
        let w = g.edge_weight();
        let cut = w * (degree_sum - 2 * internal) as f64;
        let measure = w * degree_sum as f64;
        let ratio = ratio_of(g, cut, measure);
        let with_star = g.star().is_some_and(|s| self.sub.contains(&s));
        let sub = &self.sub;
        self.report.offer(
            || {
                let mut members = sub.clone();
                members.sort_unstable();
                SetRecord {
                    size: members.len(),
                    contains_star: with_star,
                    measure,
                    cut,
                    ratio,
                    members,
                }
            },
            ratio,
            with_star,
        );
    }
}

/// The star-containing case compared with the undarned lattice.
///
/// For `A ∋ a*`, the set `Ã = (A \ {a*}) ∪ K_j` lives in the full lattice
/// `2^{-j} Z^d`; its cut there, divided by `2d`, bounds the cut of `A` in `E^j`
/// from below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseTwoComparison {
    pub cut: f64,
    pub measure: f64,
    pub ratio: f64,
    /// `μ_{Z}(Ã, Z \ Ã)` with edge weight `2^{-jd}/(2d)`.
    pub augmented_cut: f64,
    /// `#Ã · 2^{-jd}`.
    pub augmented_measure: f64,
    /// `augmented_cut / (2d)`.
    pub lower_bound: f64,
    pub bound_holds: bool,
    /// `#K_j · 2^{-jd}`.
    pub collapsed_measure: f64,
    pub star_measure: f64,
}

pub fn case_two_comparison(g: &DarnedLattice, a: &VertexSet) -> Result<CaseTwoComparison> {
    let star = g
        .star()
        .filter(|&s| a.contains(s))
        .ok_or_else(|| Error::InvalidArgument("set must contain the star".into()))?;
    let cut = cut_weight(g, a)?;
    let mut augmented: HashSet<Vec<i32>> = g.collapsed_points().map(<[i32]>::to_vec).collect();
    for &v in a.ids() {
        if let Some(c) = g.coords(v) {
            augmented.insert(c.to_vec());
        }
    }
    let mut crossing = 0usize;
    for c in &augmented {
        for axis in 0..g.dim() {
            for step in [-1, 1] {
                let mut n = c.clone();
                n[axis] += step;
                if !augmented.contains(&n) {
                    crossing += 1;
                }
            }
        }
    }
    let cell = g.mesh().powi(g.dim() as i32);
    let augmented_cut = g.edge_weight() * crossing as f64;
    let lower_bound = augmented_cut / (2 * g.dim()) as f64;
    Ok(CaseTwoComparison {
        cut,
        measure: a.measure(),
        ratio: ratio_of(g, cut, a.measure()),
        augmented_cut,
        augmented_measure: augmented.len() as f64 * cell,
        lower_bound,
        bound_holds: cut >= lower_bound,
        collapsed_measure: g.collapsed_count() as f64 * cell,
        star_measure: g.measure(star),
    })
}

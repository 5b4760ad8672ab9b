use std::collections::BTreeMap;

use darnwalk::dynamics::{marginal, sample_path, step_kernel};
use darnwalk::spectral::heat_kernel_times;
use darnwalk::stats::chi_square;
use darnwalk::{DarnedLattice, DarningRegion, RateMode, VertexId, WalkConfig};

fn graph_at(j: u32, window: f64) -> DarnedLattice {
    let k = DarningRegion::ball(vec![0.0, 0.0], 0.25).unwrap();
    DarnedLattice::build(&k, j, window).unwrap()
}

fn graph(window: f64) -> DarnedLattice {
    graph_at(3, window)
}

#[test]
fn jump_frequencies_match_step_kernel() {
    let g = graph(2.0);
    let cfg = WalkConfig::new(0.5, 11, 100000).unwrap();
    let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
    let mut jumps: BTreeMap<VertexId, BTreeMap<VertexId, u64>> = BTreeMap::new();
    for stream in 0..cfg.num_paths as u64 {
        let p = sample_path(&g, &cfg, start, stream).unwrap();
        for w in p.events.windows(2) {
            *jumps.entry(w[0].1).or_default().entry(w[1].1).or_default() += 1;
        }
    }
    let busy: Vec<_> = jumps.iter().filter(|(_, c)| c.values().sum::<u64>() >= 500).collect();
    assert!(busy.len() > 20);
    assert!(busy.iter().any(|(&x, _)| Some(x) == g.star()));
    // Bonferroni over the tested vertices at an overall 1% level.
    let level = 0.01 / busy.len() as f64;
    for &(&x, counts) in &busy {
        let k = step_kernel(&g, x).unwrap();
        let probabilities: BTreeMap<VertexId, f64> = k.neighbors.iter().map(|&y| (y, k.probability)).collect();
        assert!(counts.keys().all(|y| probabilities.contains_key(y)));
        let chi = chi_square(counts, &probabilities);
        assert!(!chi.rejected_at(level), "vertex {x}: {counts:?} {chi:?}");
    }
}

#[test]
fn holding_times_have_mean_inverse_rate() {
    let g = graph(2.0);
    for mode in [RateMode::Paper, RateMode::Matched] {
        let cfg = WalkConfig::new(0.5, 5, 3000).unwrap().with_rate_mode(mode);
        let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
        let mut by_vertex: BTreeMap<VertexId, Vec<f64>> = BTreeMap::new();
        for stream in 0..cfg.num_paths as u64 {
            let p = sample_path(&g, &cfg, start, stream).unwrap();
            // The last sojourn is cut by the horizon or the window.
            for w in p.events.windows(2) {
                by_vertex.entry(w[0].1).or_default().push(w[1].0 - w[0].0);
            }
        }
        let mean_time = 1.0 / cfg.rate(&g);
        for v in [start, g.star().unwrap()] {
            let h = &by_vertex[&v];
            let mean = h.iter().sum::<f64>() / h.len() as f64;
            let sigma = mean_time / (h.len() as f64).sqrt();
            assert!((mean - mean_time).abs() <= 3.0 * sigma, "{mode:?} vertex {v}: {mean} vs {mean_time}");
        }
    }
}

#[test]
fn measure_is_stationary_for_the_semigroup() {
    let g = graph_at(2, 2.0);
    let n = g.num_vertices();
    let sources: Vec<VertexId> = (0..n as VertexId).collect();
    let km = heat_kernel_times(&g, RateMode::Paper.rate(2, 2), &[0.05, 0.5], &sources, 200_000).unwrap();
    for ti in 0..2 {
        for y in 0..n {
            let mass: f64 = sources.iter().map(|&x| g.measure(x) * km.row(x as usize, ti)[y]).sum();
            assert!((mass - g.measure(y as VertexId)).abs() <= 1e-12, "t index {ti}, vertex {y}");
        }
    }
}

#[test]
fn escape_fraction_decreases_with_the_window() {
    let fractions: Vec<f64> = [2.0, 3.0, 4.0]
        .iter()
        .map(|&w| {
            let g = graph(w);
            let cfg = WalkConfig::new(1.0, 9, 20_000).unwrap();
            let start = g.vertex_at_point(&[0.5, 0.0]).unwrap();
            marginal(&g, &cfg, start, 1.0).unwrap().exit_fraction
        })
        .collect();
    assert!(fractions[0] > fractions[1] && fractions[1] >= fractions[2], "{fractions:?}");
    assert!(fractions[0] > 0.01);
}

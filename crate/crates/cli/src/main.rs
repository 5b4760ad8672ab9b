use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use darnwalk::dynamics::{marginals, sample_path};
use darnwalk::experiments::{
    generator_study, run, run_experiments, write_json, Experiment, LevelRange, RunConfig, Table,
};
use darnwalk::io::{load_graph, save_graph};
use darnwalk::isoperimetry::{iso_report, parse_families};
use darnwalk::lattice::interior_set;
use darnwalk::spectral::{heat_kernel, kernel_pairs, TestFunction};
use darnwalk::{DarnedLattice, DarningRegion, RateMode, VertexId, WalkConfig};

#[derive(Parser)]
#[command(name = "darnwalk", version, about = "Random walks on darned lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the lattice at one level of a run config and dump it.
    BuildGraph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Level to build; the finest configured level by default.
        #[arg(long)]
        level: Option<u32>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Simulate paths on a dumped lattice and report marginal laws.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long = "T", default_value_t = 1.0)]
        t_max: f64,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1.0")]
        marginal_times: Vec<f64>,
        /// `star`, `origin`, a vertex id or a point `x:y[:z]`; `(1/2, 0, ...)` by default.
        #[arg(long)]
        start: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Paper)]
        rate_mode: Mode,
        #[arg(long)]
        out: PathBuf,
        /// Write the events of the first `--dump-limit` paths as CSV.
        #[arg(long)]
        dump_paths: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        dump_limit: usize,
    },
    /// Transition densities from selected sources.
    HeatKernel {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        t: f64,
        /// Comma-separated list of `star`, `origin` or vertex ids.
        #[arg(long, default_value = "star,origin")]
        sources: String,
        #[arg(long, value_enum, default_value_t = Mode::Paper)]
        rate_mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generator consistency and boundedness across levels.
    GeneratorCheck {
        /// `bump`, `quadratic` or `constant`.
        #[arg(long, default_value = "bump")]
        f: String,
        /// Level range `a..b`, inclusive.
        #[arg(long, default_value = "4..8")]
        levels: String,
        /// Run config supplying the region; the default ball otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 2.0)]
        window: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Isoperimetric minima over set families.
    Isoperimetry {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value = "connected:6,balls:1..16,star:2")]
        families: String,
        #[arg(long, default_value_t = 50_000_000)]
        budget: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Level consistency, tightness and star occupation for a run config.
    Converge {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the experiments listed in a config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Mode {
    Paper,
    Matched,
}

impl From<Mode> for RateMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Paper => RateMode::Paper,
            Mode::Matched => RateMode::Matched,
        }
    }
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("DARNWALK_THREADS") {
        let n: usize = v.parse().with_context(|| format!("DARNWALK_THREADS={v} is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn parse_levels(s: &str) -> Result<LevelRange> {
    let (a, b) = s.split_once("..").context("levels must look like a..b")?;
    Ok(LevelRange::new(a.trim().parse()?, b.trim().trim_start_matches('=').parse()?))
}

fn resolve_vertex(g: &DarnedLattice, spec: &str) -> Result<VertexId> {
    match spec {
        "star" => g.star().context("lattice has no star vertex"),
        "origin" => {
            let origin = vec![0.0; g.dim()];
            g.vertex_at_point(&origin)
                .or_else(|| g.nearest_regular(&origin))
                .context("lattice has no regular vertices")
        }
        s if s.contains(':') => {
            let p: Vec<f64> = s.split(':').map(str::parse).collect::<Result<_, _>>()?;
            g.vertex_at_point(&p).with_context(|| format!("{s} is not a vertex"))
        }
        s => {
            let v: VertexId = s.parse().with_context(|| format!("bad vertex '{s}'"))?;
            if !g.contains_vertex(v) {
                bail!("vertex {v} does not exist");
            }
            Ok(v)
        }
    }
}

fn default_start(g: &DarnedLattice) -> Result<VertexId> {
    let mut x0 = vec![0.0; g.dim()];
    x0[0] = 0.5;
    g.vertex_at_point(&x0).context("(1/2, 0, ...) is not a vertex; pass --start")
}

fn graph_summary(g: &DarnedLattice) -> serde_json::Value {
    json!({
        "dim": g.dim(),
        "level": g.level(),
        "window_radius": g.window_radius(),
        "num_vertices": g.num_vertices(),
        "num_edges": g.num_edges(),
        "star_degree": g.star().map_or(0, |s| g.degree(s)),
        "m_total": g.total_measure(),
        "m_complement_Sj": interior_set(g).complement_measure,
    })
}

fn build_graph(config: &Path, out: &Path, level: Option<u32>, summary: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let j = level.unwrap_or(cfg.levels.max);
    let g = match &cfg.region {
        Some(k) => DarnedLattice::build(k, j, cfg.window_radius)?,
        None => DarnedLattice::build_plain(cfg.dim, j, cfg.window_radius)?,
    };
    save_graph(&g, out)?;
    if let Some(path) = summary {
        write_json(path, &graph_summary(&g))?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    graph: &Path,
    t_max: f64,
    paths: usize,
    seed: u64,
    times: &[f64],
    start: Option<&str>,
    mode: RateMode,
    out: &Path,
    dump: Option<&Path>,
    dump_limit: usize,
) -> Result<()> {
    let g = load_graph(graph)?;
    let start = match start {
        Some(s) => resolve_vertex(&g, s)?,
        None => default_start(&g)?,
    };
    let cfg = WalkConfig::new(t_max, seed, paths)?.with_rate_mode(mode);
    let samples = marginals(&g, &cfg, start, times)?;
    let marginals_json: Vec<_> = samples
        .iter()
        .map(|s| {
            json!({
                "t": s.t,
                "num_paths": s.num_paths,
                "exited": s.exited,
                "exit_fraction": s.exit_fraction,
                "flagged": s.flagged,
                "counts": s.counts.iter().map(|(v, c)| json!([v, c])).collect::<Vec<_>>(),
            })
        })
        .collect();
    write_json(
        out,
        &json!({
            "graph": graph_summary(&g),
            "walk": cfg,
            "start": start,
            "marginals": marginals_json,
        }),
    )?;
    if let Some(path) = dump {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["path".to_string(), "t".into(), "vertex".into()];
        header.extend(["x", "y", "z"].iter().take(g.dim()).map(|s| s.to_string()));
        header.extend((3..g.dim()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for stream in 0..paths.min(dump_limit) as u64 {
            let p = sample_path(&g, &cfg, start, stream)?;
            for &(t, v) in &p.events {
                let mut row = vec![stream.to_string(), t.to_string(), v.to_string()];
                match g.position(v) {
                    Some(x) => row.extend(x.iter().map(f64::to_string)),
                    None => row.extend(std::iter::repeat_n(String::new(), g.dim())),
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

fn heat_kernel_cmd(graph: &Path, t: f64, sources: &str, mode: RateMode, out: &Path) -> Result<()> {
    let g = load_graph(graph)?;
    let ids: Vec<VertexId> = sources
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| resolve_vertex(&g, s.trim()))
        .collect::<Result<_>>()?;
    let km = heat_kernel(&g, mode, t, &ids)?;
    let mut table = Table {
        header: ["x_id", "y_id", "d_j", "p", "bound_ratio"].map(String::from).to_vec(),
        rows: Vec::new(),
    };
    for p in kernel_pairs(&g, &km)? {
        table
            .rows
            .push(vec![p.x.to_string(), p.y.to_string(), p.dj.to_string(), p.density.to_string(), p.bound_ratio.to_string()]);
    }
    table.write(out)?;
    Ok(())
}

fn generator_check(f: &str, levels: &str, config: Option<&Path>, window: f64, out: &Path) -> Result<()> {
    let region = match config {
        Some(path) => RunConfig::load(path)?.region.context("generator check needs a darning region")?,
        None => DarningRegion::ball(vec![0.0, 0.0], 0.25)?,
    };
    let function = match f {
        "bump" => TestFunction::bump_around(&region),
        "quadratic" => TestFunction::Quadratic,
        "constant" => TestFunction::Constant { value: 1.0 },
        other => bail!("unknown test function '{other}' (expected bump, quadratic or constant)"),
    };
    let study = generator_study(&region, &function, parse_levels(levels)?, window)?;
    study.table().write(out)?;
    Ok(())
}

fn isoperimetry(graph: &Path, families: &str, budget: u64, out: &Path) -> Result<()> {
    let g = load_graph(graph)?;
    let report = iso_report(&g, &parse_families(families)?, budget)?;
    write_json(out, &report)?;
    Ok(())
}

fn report_outcome(outcome: darnwalk::experiments::RunOutcome) -> Result<ExitCode> {
    let mut stdout = std::io::stdout().lock();
    for e in &outcome.manifest.experiments {
        match &e.error {
            None => writeln!(stdout, "{}: ok", e.name)?,
            Some(msg) => writeln!(stdout, "{}: FAILED: {msg}", e.name)?,
        }
    }
    writeln!(stdout, "artifacts in {}", outcome.output_dir.display())?;
    Ok(if outcome.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main_inner() -> Result<ExitCode> {
    let cli = Cli::parse();
    configure_threads()?;
    match cli.command {
        Command::BuildGraph {
            config,
            out,
            level,
            summary,
        } => build_graph(&config, &out, level, summary.as_deref())?,
        Command::Simulate {
            graph,
            t_max,
            paths,
            seed,
            marginal_times,
            start,
            rate_mode,
            out,
            dump_paths,
            dump_limit,
        } => simulate(
            &graph,
            t_max,
            paths,
            seed,
            &marginal_times,
            start.as_deref(),
            rate_mode.into(),
            &out,
            dump_paths.as_deref(),
            dump_limit,
        )?,
        Command::HeatKernel {
            graph,
            t,
            sources,
            rate_mode,
            out,
        } => heat_kernel_cmd(&graph, t, &sources, rate_mode.into(), &out)?,
        Command::GeneratorCheck {
            f,
            levels,
            config,
            window,
            out,
        } => generator_check(&f, &levels, config.as_deref(), window, &out)?,
        Command::Isoperimetry {
            graph,
            families,
            budget,
            out,
        } => isoperimetry(&graph, &families, budget, &out)?,
        Command::Converge { config } => {
            let cfg = RunConfig::load(&config)?;
            let outcome = run_experiments(
                &cfg,
                &[Experiment::LevelConsistency, Experiment::TightnessProbe, Experiment::StarOccupation],
            )?;
            return report_outcome(outcome);
        }
        Command::Run { config } => {
            let cfg = RunConfig::load(&config)?;
            return report_outcome(run(&cfg)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match main_inner() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}


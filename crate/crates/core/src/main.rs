use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use abrsim::experiment::{self, ExperimentSpec, GridPoint};
use abrsim::metrics::{emit_traces, write_traces, RunMetrics};

#[derive(Parser)]
#[command(name = "abrsim", version, about = "TCP over ATM ABR/UBR cell-level simulator")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate a single configuration.
    Run(Common),
    /// Simulate every point of the configuration's grid.
    Sweep(Common),
    /// Print the ABR and UBR buffer bounds without simulating.
    Bound(Common),
    /// Simulate a single configuration and write its time series.
    Trace(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration file.
    config: PathBuf,
    /// Output directory (default: the file's out_dir, else ./out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed of every run.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps; 0 picks one per core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentSpec> {
        let text = fs::read_to_string(&self.config)
            .with_context(|| format!("reading {}", self.config.display()))?;
        let mut spec = experiment::parse_config(&text)
            .with_context(|| format!("in {}", self.config.display()))?;
        spec.seed_override = self.seed;
        Ok(spec)
    }

    fn out_dir(&self, spec: &ExperimentSpec) -> anyhow::Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| spec.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

fn single_point(spec: &ExperimentSpec, verb: &str) -> anyhow::Result<GridPoint> {
    let mut grid = spec.grid()?;
    if grid.len() != 1 {
        bail!("`{verb}` takes one configuration but the file defines {} grid points; use `sweep`", grid.len());
    }
    Ok(grid.remove(0))
}

fn write_trace_file(path: &Path, m: &RunMetrics) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_traces(BufWriter::new(f), &emit_traces(m))?;
    Ok(())
}

/// Runs the points, writes `results.csv`, and writes a trace file for every
/// point that records series.
fn simulate_and_report(points: &[GridPoint], jobs: usize, dir: &Path) -> anyhow::Result<()> {
    let results = experiment::run_points(points, jobs);
    let csv_path = dir.join("results.csv");
    let f = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    let (report, kept) = experiment::write_csv(BufWriter::new(f), points, results)?;
    for (p, m) in points.iter().zip(&kept) {
        if let (Some(m), true) = (m, p.config.record_series) {
            let name = if points.len() == 1 {
                "traces.tsv".to_string()
            } else {
                format!("traces-{:04}.tsv", p.index)
            };
            write_trace_file(&dir.join(name), m)?;
        }
    }
    eprintln!(
        "{} of {} runs completed; results in {}",
        report.completed,
        points.len(),
        csv_path.display()
    );
    for (idx, err) in &report.failures {
        eprintln!("point {idx} failed: {err}");
    }
    if !report.failures.is_empty() {
        bail!("{} run(s) failed", report.failures.len());
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::try_parse().unwrap_or_else(|e| {
        let code = if e.use_stderr() { 1 } else { 0 };
        let _ = e.print();
        std::process::exit(code);
    });
    match cli.verb {
        Verb::Run(c) => {
            let spec = c.load()?;
            let point = single_point(&spec, "run")?;
            let dir = c.out_dir(&spec)?;
            simulate_and_report(&[point], 1, &dir)?;
            io::copy(&mut File::open(dir.join("results.csv"))?, &mut io::stdout())?;
        }
        Verb::Sweep(c) => {
            let spec = c.load()?;
            let points = spec.grid()?;
            let dir = c.out_dir(&spec)?;
            simulate_and_report(&points, c.jobs, &dir)?;
        }
        Verb::Trace(c) => {
            let spec = c.load()?;
            let mut point = single_point(&spec, "trace")?;
            point.config.record_series = true;
            let dir = c.out_dir(&spec)?;
            simulate_and_report(&[point], 1, &dir)?;
        }
        Verb::Bound(c) => {
            let spec = c.load()?;
            for p in spec.grid()? {
                let (abr, ubr) = experiment::bounds(&p.config)?;
                println!(
                    "point {}: abr {} cells  (a={} rtt={} s c={} fd={} s at {} b/s)",
                    p.index, abr.bound_cells, abr.a, abr.rtt_s, abr.c, abr.feedback_delay_s, abr.link_rate_bps
                );
                println!(
                    "point {}: ubr {} cells  ({} windows of {} bytes, mss {})",
                    p.index,
                    ubr.bound_cells,
                    ubr.windows_bytes.len(),
                    p.config.max_window_bytes,
                    p.config.mss
                );
            }
        }
    }
    Ok(())
}

//! Experiment execution: expands a config into (d, n, seed) cells, runs
//! each cell (draw truth → simulate → solve → threshold sweep → score),
//! and persists rows, aggregates and the resolved config echo. Re-running
//! a finished experiment is a no-op reported as "up to date".

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::bench::config::ExperimentConfig;
use crate::bench::plot;
use crate::datagen::{self, GenConfig, NoiseSpec};
use crate::error::{Error, Result};
use crate::metrics::{best_delta_sweep, default_delta_grid};
use crate::objective::build_instance;
use crate::solver::solve;

/// One result line: identifying keys, the sweep's metric block, and the
/// solve summary. Failed cells keep the keys, carry NaN metrics, and put
/// the failure kind in `status`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRow {
    pub config_hash: String,
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub model: String,
    pub method: String,
    pub delta: f64,
    pub shd: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub g_score: f64,
    pub sigma_p: f64,
    pub frobenius: f64,
    pub wall_time: f64,
    pub mip_gap: f64,
    pub cuts_added: usize,
    pub status: String,
    pub nodes_explored: usize,
}

impl BenchRow {
    fn failed(cfg: &ExperimentConfig, hash: &str, d: usize, n: usize, seed: u64, status: String) -> Self {
        BenchRow {
            config_hash: hash.to_string(),
            seed,
            d,
            n,
            model: cfg.experiment.ensemble.clone(),
            method: cfg.experiment.method.clone(),
            delta: f64::NAN,
            shd: f64::NAN,
            precision: f64::NAN,
            recall: f64::NAN,
            f1: f64::NAN,
            g_score: f64::NAN,
            sigma_p: f64::NAN,
            frobenius: f64::NAN,
            wall_time: 0.0,
            mip_gap: f64::NAN,
            cuts_added: 0,
            status,
            nodes_explored: 0,
        }
    }

    pub fn succeeded(&self) -> bool {
        // Failure statuses are "<STAGE>_FAILED: reason"; solver statuses
        // ("OPTIMAL", "TIME_LIMIT", ...) have no reason suffix.
        let code = self.status.split(':').next().unwrap_or("");
        !code.ends_with("_FAILED")
    }
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub config_hash: String,
    pub rows_run: usize,
    pub rows_total: usize,
    pub up_to_date: bool,
    pub output_dir: PathBuf,
    pub rows_path: PathBuf,
    pub aggregates_path: PathBuf,
    pub plot_paths: Vec<PathBuf>,
}

/// Per-(d, n) mean and worst over seeds for one metric, in the orientation
/// where "worst" is pessimistic for that metric (max for error-like, min
/// for score-like values).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AggregateRow {
    pub d: usize,
    pub n: usize,
    pub rows: usize,
    pub metric: String,
    pub mean: f64,
    pub worst: f64,
}

/// (name, accessor, whether larger values are worse).
const AGG_METRICS: &[(&str, fn(&BenchRow) -> f64, bool)] = &[
    ("shd", |r| r.shd, true),
    ("precision", |r| r.precision, false),
    ("recall", |r| r.recall, false),
    ("f1", |r| r.f1, false),
    ("g_score", |r| r.g_score, false),
    ("sigma_p", |r| r.sigma_p, true),
    ("frobenius", |r| r.frobenius, true),
    ("wall_time", |r| r.wall_time, true),
    ("mip_gap", |r| r.mip_gap, true),
];

/// Seeds actually used for one vertex count. Policy "listed" takes the
/// config's seeds verbatim; "stable" keeps their count but scans upward
/// from the smallest for seeds whose drawn system is stable, so every cell
/// yields a usable trajectory. Stability depends on the truth draw only,
/// never on n.
pub fn resolve_seeds(cfg: &ExperimentConfig, d: usize) -> Result<Vec<u64>> {
    let e = &cfg.experiment;
    if e.seed_policy == "listed" {
        return Ok(e.seeds.clone());
    }
    let ens = cfg.ensemble();
    let mut template = GenConfig::new(
        d,
        ens.p(),
        ens.model,
        ens.intra_ratio,
        ens.inter_ratio()?,
        *e.seeds.iter().min().expect("validated nonempty"),
        // n does not matter for the stability scan.
        100,
    );
    template.eta = e.eta;
    datagen::stable_seeds(&template, e.seeds.len())
}

fn run_cell(cfg: &ExperimentConfig, hash: &str, d: usize, n: usize, seed: u64) -> BenchRow {
    let ens = cfg.ensemble();
    let mut gen = GenConfig::new(
        d,
        ens.p(),
        ens.model,
        ens.intra_ratio,
        ens.inter_ratio().expect("validated at load"),
        seed,
        n,
    );
    gen.eta = cfg.experiment.eta;
    gen.noise = NoiseSpec::Gaussian {
        sigma: cfg.experiment.sigma,
    };

    let generated = datagen::generate_ground_truth(&gen)
        .and_then(|truth| datagen::simulate(&truth, &gen).map(|panel| (truth, panel)));
    let (truth, panel) = match generated {
        Ok(pair) => pair,
        Err(e) => {
            return BenchRow::failed(cfg, hash, d, n, seed, format!("GENERATION_FAILED: {}", e))
        }
    };

    let solved = cfg
        .reg_for(n)
        .and_then(|reg| build_instance(&panel, reg, cfg.big_m_choice()?))
        .and_then(|inst| solve(&inst, cfg.solver_config()?));
    let report = match solved {
        Ok(r) => r,
        Err(e) => return BenchRow::failed(cfg, hash, d, n, seed, format!("SOLVE_FAILED: {}", e)),
    };

    let swept = best_delta_sweep(&report.incumbent, &truth, &panel, &default_delta_grid());
    let (delta, metrics) = match swept {
        Ok(pair) => pair,
        Err(e) => return BenchRow::failed(cfg, hash, d, n, seed, format!("SCORE_FAILED: {}", e)),
    };

    BenchRow {
        config_hash: hash.to_string(),
        seed,
        d,
        n,
        model: cfg.experiment.ensemble.clone(),
        method: cfg.experiment.method.clone(),
        delta,
        shd: metrics.shd,
        precision: metrics.precision,
        recall: metrics.recall,
        f1: metrics.f1,
        g_score: metrics.g_score,
        sigma_p: metrics.sigma_p,
        frobenius: metrics.frobenius,
        wall_time: report.wall_time,
        mip_gap: report.mip_gap,
        cuts_added: report.cuts_added,
        status: report.status.name().to_string(),
        nodes_explored: report.nodes_explored,
    }
}

pub fn read_rows(path: &Path) -> Result<Vec<BenchRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Data {
            line: 1,
            msg: format!("{}: {}", path.display(), e),
        })?;
    let mut rows = Vec::new();
    for (idx, record) in reader.deserialize::<BenchRow>().enumerate() {
        rows.push(record.map_err(|e| Error::Data {
            // Header is line 1, first record line 2.
            line: idx + 2,
            msg: format!("{}: {}", path.display(), e),
        })?);
    }
    Ok(rows)
}

fn write_rows(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Config(format!("row serialization: {}", e)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Per-(d, n) mean/worst for every metric, computed over successful rows
/// and sorted by (d, n, metric order). This is the single source for both
/// the aggregates file and the plot data.
pub fn aggregate(rows: &[BenchRow]) -> Vec<AggregateRow> {
    let cells: BTreeSet<(usize, usize)> = rows
        .iter()
        .filter(|r| r.succeeded())
        .map(|r| (r.d, r.n))
        .collect();
    let mut out = Vec::new();
    for (d, n) in cells {
        let cell: Vec<&BenchRow> = rows
            .iter()
            .filter(|r| r.succeeded() && r.d == d && r.n == n)
            .collect();
        for &(name, get, larger_is_worse) in AGG_METRICS {
            let values: Vec<f64> = cell.iter().map(|r| get(r)).collect();
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let worst = values
                .iter()
                .copied()
                .fold(if larger_is_worse { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, v| {
                    if larger_is_worse {
                        acc.max(v)
                    } else {
                        acc.min(v)
                    }
                });
            out.push(AggregateRow {
                d,
                n,
                rows: cell.len(),
                metric: name.to_string(),
                mean,
                worst,
            });
        }
    }
    out
}

fn write_aggregates(path: &Path, aggs: &[AggregateRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for agg in aggs {
        writer
            .serialize(agg)
            .map_err(|e| Error::Config(format!("aggregate serialization: {}", e)))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_aggregates(path: &Path) -> Result<Vec<AggregateRow>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data {
        line: 1,
        msg: format!("{}: {}", path.display(), e),
    })?;
    let mut aggs = Vec::new();
    for (idx, record) in reader.deserialize::<AggregateRow>().enumerate() {
        aggs.push(record.map_err(|e| Error::Data {
            line: idx + 2,
            msg: format!("{}: {}", path.display(), e),
        })?);
    }
    Ok(aggs)
}

/// Runs every missing (d, n, seed) cell of the experiment, then rewrites
/// rows.csv (sorted by d, n, seed), aggregates.csv, the per-metric plots
/// with their backing CSVs, and `config_echo.toml` with the resolved
/// settings. Rows from earlier runs of the *same* config hash are kept;
/// rows from other configs that happen to share the directory are left in
/// the file untouched but ignored for aggregation and planning.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<BenchSummary> {
    cfg.validate()?;
    let hash = cfg.config_hash()?;
    let out_dir = PathBuf::from(&cfg.experiment.output_dir);
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(out_dir.join("config_echo.toml"), cfg.echo_toml()?)?;

    let rows_path = out_dir.join("rows.csv");
    let existing: Vec<BenchRow> = if rows_path.exists() {
        read_rows(&rows_path)?
    } else {
        Vec::new()
    };
    let done: BTreeSet<(usize, usize, u64)> = existing
        .iter()
        .filter(|r| r.config_hash == hash)
        .map(|r| (r.d, r.n, r.seed))
        .collect();

    let mut jobs: Vec<(usize, usize, u64)> = Vec::new();
    for &d in &cfg.experiment.d_list {
        let seeds = resolve_seeds(cfg, d)?;
        for &n in &cfg.experiment.n_list {
            for &seed in &seeds {
                if !done.contains(&(d, n, seed)) {
                    jobs.push((d, n, seed));
                }
            }
        }
    }
    let rows_run = jobs.len();
    let up_to_date = rows_run == 0;

    let fresh: Mutex<Vec<BenchRow>> = Mutex::new(Vec::with_capacity(jobs.len()));
    let next = AtomicUsize::new(0);
    let workers = cfg.experiment.workers.min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(d, n, seed)) = jobs.get(idx) else {
                    break;
                };
                let row = run_cell(cfg, &hash, d, n, seed);
                eprintln!(
                    "cell d={} n={} seed={}: status={} f1={:.4} shd={} gap={:.2e} ({:.1}s)",
                    d, n, seed, row.status, row.f1, row.shd, row.mip_gap, row.wall_time
                );
                fresh.lock().unwrap().push(row);
            });
        }
    });

    let mut all = existing;
    all.extend(fresh.into_inner().unwrap());
    all.sort_by(|a, b| {
        (a.d, a.n, a.seed, &a.config_hash).cmp(&(b.d, b.n, b.seed, &b.config_hash))
    });
    write_rows(&rows_path, &all)?;

    let mine: Vec<BenchRow> = all
        .iter()
        .filter(|r| r.config_hash == hash)
        .cloned()
        .collect();
    let aggs = aggregate(&mine);
    let aggregates_path = out_dir.join("aggregates.csv");
    write_aggregates(&aggregates_path, &aggs)?;

    let plot_paths = plot::emit_plots(&out_dir, &cfg.experiment.ensemble, &aggs)?;

    Ok(BenchSummary {
        config_hash: hash,
        rows_run,
        rows_total: mine.len(),
        up_to_date,
        output_dir: out_dir,
        rows_path,
        aggregates_path,
        plot_paths,
    })
}

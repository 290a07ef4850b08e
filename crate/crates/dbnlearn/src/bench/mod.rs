//! Experiment harness: config files, cell orchestration with idempotent
//! result persistence, plot emission, the user-facing `fit` entry point,
//! and CSV ingestion of externally supplied time series.

pub mod config;
pub mod plot;
pub mod runner;

pub use config::{
    default_reg_for, parse_ensemble, resolve_big_m, resolve_reg, resolve_solver,
    scale_regularization, Ensemble, ExperimentConfig, RegSection, RelaxSection, SolveConfigFile,
    SolverSection,
};
pub use runner::{
    aggregate, read_aggregates, read_rows, resolve_seeds, run_experiment, AggregateRow, BenchRow,
    BenchSummary,
};

use std::path::Path;

use ndarray::Array2;

use crate::datagen::{lag_stack, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::graph::DbnGraph;
use crate::objective::{build_instance, BigM, RegMode};
use crate::solver::{solve, SolveReport, SolverConfig};

/// Penalty selection for `fit`: one fixed mode, or a grid tried in order
/// with the smallest final optimality gap winning (earlier entry on ties).
#[derive(Debug, Clone)]
pub enum RegSearch {
    Single(RegMode),
    Grid(Vec<RegMode>),
}

impl RegSearch {
    /// Grid over the cartesian product of intra and inter penalty levels.
    pub fn grid_l2(lambdas: &[f64], etas: &[f64]) -> Self {
        let combos = lambdas
            .iter()
            .flat_map(|&l| etas.iter().map(move |&e| RegMode::l2_squared(l, e)))
            .collect();
        RegSearch::Grid(combos)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub graph: DbnGraph,
    /// Report of the winning solve; `report.reg` names the chosen penalties.
    pub report: SolveReport,
    /// Reports of grid combos that lost the gap comparison, in trial order.
    pub rejected: Vec<SolveReport>,
}

/// Single-dataset entry point: builds the instance (AUTO weight bound
/// unless overridden) and solves. With a grid, every combo is solved and
/// the one reaching the smallest final gap is returned — the tuning recipe
/// for data without ground truth, where the gap is the only certificate of
/// solution quality available.
pub fn fit(
    panel: &TimeSeriesPanel,
    solver: &SolverConfig,
    big_m: BigM,
    search: &RegSearch,
) -> Result<FitOutcome> {
    let combos: Vec<RegMode> = match search {
        RegSearch::Single(reg) => vec![*reg],
        RegSearch::Grid(list) => {
            if list.is_empty() {
                return Err(Error::Config("empty regularization grid".into()));
            }
            list.clone()
        }
    };
    let mut reports = Vec::with_capacity(combos.len());
    for reg in combos {
        let inst = build_instance(panel, reg, big_m)?;
        reports.push(solve(&inst, *solver)?);
    }
    let best_idx = reports
        .iter()
        .enumerate()
        .min_by(|(ia, a), (ib, b)| {
            a.mip_gap
                .partial_cmp(&b.mip_gap)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ia.cmp(ib))
        })
        .map(|(i, _)| i)
        .expect("at least one combo");
    let report = reports.remove(best_idx);
    Ok(FitOutcome {
        graph: report.incumbent.clone(),
        report,
        rejected: reports,
    })
}

/// Reads a raw `T x d` series from CSV (header row = variable names, one
/// time step per row, time ascending) and lag-stacks it to order `p`.
/// Malformed input is reported with the 1-based line it occurred on.
pub fn load_timeseries_csv(path: &Path, p: usize) -> Result<TimeSeriesPanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(std::io::Error::new(
                io.kind(),
                format!("{}: {}", path.display(), io),
            )),
            other => Error::Data {
                line: 1,
                msg: format!("{}: {:?}", path.display(), other),
            },
        })?;
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data {
            line: 1,
            msg: format!("bad header: {}", e),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    let d = names.len();
    if d == 0 {
        return Err(Error::Data {
            line: 1,
            msg: "empty header row".into(),
        });
    }

    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    let mut record = csv::StringRecord::new();
    loop {
        let more = reader.read_record(&mut record).map_err(|e| Error::Data {
            line: line_of(&record, rows),
            msg: format!("{}", e),
        })?;
        if !more {
            break;
        }
        let line = line_of(&record, rows);
        if record.len() != d {
            return Err(Error::Data {
                line,
                msg: format!("ragged row: {} cells, header has {}", record.len(), d),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Data {
                line,
                msg: format!("non-numeric cell {:?} in column {} ({})", cell, col + 1, names[col]),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    line,
                    msg: format!("non-finite value {} in column {} ({})", v, col + 1, names[col]),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    if rows < p + 1 {
        return Err(Error::Data {
            line: rows + 1,
            msg: format!(
                "too few rows: need at least p + 1 = {} data rows for lag order {}, got {}",
                p + 1,
                p,
                rows
            ),
        });
    }
    let series = Array2::from_shape_vec((rows, d), values)
        .expect("row-major fill matches declared shape");
    lag_stack(series.view(), p)?.with_names(names)
}

fn line_of(record: &csv::StringRecord, rows_so_far: usize) -> usize {
    record
        .position()
        .map(|pos| pos.line() as usize)
        // Header occupies line 1; data records follow.
        .unwrap_or(rows_so_far + 2)
}

/// Writes a raw series as CSV with a header row, the inverse of
/// `load_timeseries_csv` before lag stacking.
pub fn write_timeseries_csv(
    path: &Path,
    names: &[String],
    series: ndarray::ArrayView2<f64>,
) -> Result<()> {
    if names.len() != series.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} names for {} columns",
            names.len(),
            series.ncols()
        )));
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer
        .write_record(names)
        .map_err(|e| Error::Config(format!("csv header: {}", e)))?;
    for row in series.rows() {
        writer
            .write_record(row.iter().map(|v| format_cell(*v)))
            .map_err(|e| Error::Config(format!("csv row: {}", e)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Shortest decimal that round-trips through f64 parsing.
fn format_cell(v: f64) -> String {
    let mut buf = ryu_like(v);
    if buf.is_empty() {
        buf.push('0');
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // `{}` on f64 is the shortest representation that parses back exactly.
    format!("{}", v)
}

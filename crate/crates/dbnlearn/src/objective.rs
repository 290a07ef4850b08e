//! Quadratic score evaluation and MIQP instance construction.
//!
//! The score is `J = ||X - XW - YA||_F^2 + REG`. The fit term separates over
//! columns of `X`: column `j` regresses on the shared design `D = [X | Y]`
//! with its own contemporaneous column excluded. `MiqpInstance` caches the
//! Gram matrix of `D` once so node relaxations and refits never touch the raw
//! panel again.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array1, Array2, Axis};

use crate::datagen::TimeSeriesPanel;
use crate::error::{Error, Result};
use crate::graph::DbnGraph;

/// Regularization family. `L2Squared` is the convex reading of the squared
/// inter-slice penalty; `L2LiteralAbs` penalizes |a| instead and is exposed
/// for comparison (see config key reg.variant).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegVariant {
    L1,
    L2Squared,
    L2LiteralAbs,
}

impl RegVariant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L1" => Ok(RegVariant::L1),
            "L2" | "L2_SQUARED" => Ok(RegVariant::L2Squared),
            "L2_LITERAL_ABS" => Ok(RegVariant::L2LiteralAbs),
            other => Err(Error::Config(format!("unknown reg variant {:?}", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegVariant::L1 => "L1",
            RegVariant::L2Squared => "L2_SQUARED",
            RegVariant::L2LiteralAbs => "L2_LITERAL_ABS",
        }
    }
}

/// Penalty coefficients: `lambda` on intra-slice edge indicators, `eta_reg`
/// on the inter-slice term (indicators for L1, weights for the L2 variants).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegMode {
    pub variant: RegVariant,
    pub lambda: f64,
    pub eta_reg: f64,
}

impl RegMode {
    pub fn new(variant: RegVariant, lambda: f64, eta_reg: f64) -> Result<Self> {
        if lambda < 0.0 || eta_reg < 0.0 {
            return Err(Error::Config(format!(
                "negative regularization (lambda = {}, eta = {})",
                lambda, eta_reg
            )));
        }
        Ok(RegMode {
            variant,
            lambda,
            eta_reg,
        })
    }

    pub fn l1(lambda: f64, eta_reg: f64) -> Self {
        RegMode::new(RegVariant::L1, lambda, eta_reg).unwrap()
    }

    pub fn l2_squared(lambda: f64, eta_reg: f64) -> Self {
        RegMode::new(RegVariant::L2Squared, lambda, eta_reg).unwrap()
    }
}

/// Score decomposition; `total = fit + reg` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreValue {
    pub fit: f64,
    pub reg: f64,
    pub total: f64,
}

impl ScoreValue {
    fn new(fit: f64, reg: f64) -> Self {
        ScoreValue {
            fit,
            reg,
            total: fit + reg,
        }
    }
}

/// Evaluates the score of a weighted graph on a panel. The fit term is the
/// literal double sum over samples and variables (one residual per cell),
/// not a matrix-product shortcut.
pub fn score(g: &DbnGraph, panel: &TimeSeriesPanel, reg: RegMode) -> Result<ScoreValue> {
    if g.d() != panel.d || g.p() != panel.p {
        return Err(Error::DimensionMismatch(format!(
            "graph is (d={}, p={}) but panel is (d={}, p={})",
            g.d(),
            g.p(),
            panel.d,
            panel.p
        )));
    }
    let d = panel.d;
    let mut fit = 0.0;
    for i in 0..panel.n {
        for j in 0..d {
            let mut r = panel.x[(i, j)];
            for k in 0..d {
                r -= panel.x[(i, k)] * g.w()[(k, j)];
            }
            for s_lag in 1..=panel.p {
                let a = &g.a()[s_lag - 1];
                let off = (s_lag - 1) * d;
                for k in 0..d {
                    r -= panel.y[(i, off + k)] * a[(k, j)];
                }
            }
            fit += r * r;
        }
    }

    let intra_edges = g.intra_edge_count() as f64;
    let reg_val = match reg.variant {
        RegVariant::L1 => {
            reg.lambda * intra_edges + reg.eta_reg * g.inter_edge_count() as f64
        }
        RegVariant::L2Squared => {
            let sq: f64 = g.a().iter().flat_map(|m| m.iter()).map(|v| v * v).sum();
            reg.lambda * intra_edges + reg.eta_reg * sq
        }
        RegVariant::L2LiteralAbs => {
            let ab: f64 = g.a().iter().flat_map(|m| m.iter()).map(|v| v.abs()).sum();
            reg.lambda * intra_edges + reg.eta_reg * ab
        }
    };
    Ok(ScoreValue::new(fit, reg_val))
}

/// Address of one binary edge indicator. `lag` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Indicator {
    Intra { from: usize, to: usize },
    Inter { lag: usize, from: usize, to: usize },
}

impl Indicator {
    /// Column of `X` whose regression this indicator belongs to.
    pub fn target(&self) -> usize {
        match *self {
            Indicator::Intra { to, .. } => to,
            Indicator::Inter { to, .. } => to,
        }
    }

    /// Row index of the coefficient inside the stacked per-column vector
    /// (intra block first, then one block per lag).
    pub fn coord(&self, d: usize) -> usize {
        match *self {
            Indicator::Intra { from, .. } => from,
            Indicator::Inter { lag, from, .. } => d + (lag - 1) * d + from,
        }
    }
}

/// Big-M choice for `build_instance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BigM {
    /// Data-driven: 2x the largest ridge-fit coefficient magnitude, floor 1.
    Auto,
    Fixed(f64),
}

/// Immutable problem data for the solver: panel, penalty mode, weight bound
/// `c`, indicator fixings, and the cached per-column quadratic pieces
/// `fit_j(b) = x_sq[j] - 2 dtx[:,j]'b + b' gram b`.
#[derive(Debug, Clone)]
pub struct MiqpInstance {
    pub panel: TimeSeriesPanel,
    pub reg: RegMode,
    pub c: f64,
    fixings: BTreeMap<Indicator, bool>,
    gram: Array2<f64>,
    dtx: Array2<f64>,
    x_sq: Array1<f64>,
}

impl MiqpInstance {
    pub fn d(&self) -> usize {
        self.panel.d
    }

    pub fn p(&self) -> usize {
        self.panel.p
    }

    pub fn n(&self) -> usize {
        self.panel.n
    }

    /// Coefficients per column: d intra + p*d inter.
    pub fn coords_per_column(&self) -> usize {
        self.panel.d * (1 + self.panel.p)
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    /// `dtx` column j is `D' X_j` for the shared design `D = [X | Y]`.
    pub fn dtx(&self) -> &Array2<f64> {
        &self.dtx
    }

    pub fn x_sq(&self, j: usize) -> f64 {
        self.x_sq[j]
    }

    pub fn x_sq_total(&self) -> f64 {
        self.x_sq.sum()
    }

    pub fn fixings(&self) -> &BTreeMap<Indicator, bool> {
        &self.fixings
    }

    pub fn fixing(&self, ind: Indicator) -> Option<bool> {
        self.fixings.get(&ind).copied()
    }

    /// Pins an indicator to 0 or 1. Diagonal intra indicators stay pinned to
    /// 0 and cannot be re-fixed to 1.
    pub fn fix(&mut self, ind: Indicator, value: bool) -> Result<()> {
        self.check_indicator(ind)?;
        if let Indicator::Intra { from, to } = ind {
            if from == to && value {
                return Err(Error::Config("cannot enable a self-loop".into()));
            }
        }
        self.fixings.insert(ind, value);
        Ok(())
    }

    fn check_indicator(&self, ind: Indicator) -> Result<()> {
        let d = self.panel.d;
        let ok = match ind {
            Indicator::Intra { from, to } => from < d && to < d,
            Indicator::Inter { lag, from, to } => {
                lag >= 1 && lag <= self.panel.p && from < d && to < d
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("indicator {:?} out of range", ind)))
        }
    }

    /// All indicator addresses: d*d intra (diagonal fixed 0) + p*d*d inter.
    pub fn all_indicators(&self) -> Vec<Indicator> {
        let d = self.panel.d;
        let mut out = Vec::with_capacity(d * d * (1 + self.panel.p));
        for from in 0..d {
            for to in 0..d {
                out.push(Indicator::Intra { from, to });
            }
        }
        for lag in 1..=self.panel.p {
            for from in 0..d {
                for to in 0..d {
                    out.push(Indicator::Inter { lag, from, to });
                }
            }
        }
        out
    }

    /// Reads the weight addressed by an indicator out of a graph.
    pub fn weight_of(&self, g: &DbnGraph, ind: Indicator) -> f64 {
        match ind {
            Indicator::Intra { from, to } => g.w()[(from, to)],
            Indicator::Inter { lag, from, to } => g.a()[lag - 1][(from, to)],
        }
    }
}

/// Builds the solver-facing instance: computes the Gram caches, fixes the
/// intra diagonal to 0, and resolves `BigM::Auto` via the documented ridge
/// rule (recorded in `instance.c`).
pub fn build_instance(panel: &TimeSeriesPanel, reg: RegMode, big_m: BigM) -> Result<MiqpInstance> {
    if panel.n < 1 {
        return Err(Error::DimensionMismatch("panel has no rows".into()));
    }
    let design = if panel.p == 0 {
        panel.x.clone()
    } else {
        concatenate(Axis(1), &[panel.x.view(), panel.y.view()]).unwrap()
    };
    let gram = design.t().dot(&design);
    let dtx = design.t().dot(&panel.x);
    let x_sq = Array1::from_iter((0..panel.d).map(|j| panel.x.column(j).dot(&panel.x.column(j))));

    let mut fixings = BTreeMap::new();
    for i in 0..panel.d {
        fixings.insert(Indicator::Intra { from: i, to: i }, false);
    }

    let c = match big_m {
        BigM::Fixed(v) => {
            if !(v > 0.0) {
                return Err(Error::Config(format!("big-M must be positive, got {}", v)));
            }
            v
        }
        BigM::Auto => auto_big_m(panel, &gram, &dtx),
    };

    Ok(MiqpInstance {
        panel: panel.clone(),
        reg,
        c,
        fixings,
        gram,
        dtx,
        x_sq,
    })
}

/// Ridge penalty for the AUTO big-M fit, as a multiple of the sample count.
const AUTO_RIDGE_PENALTY_PER_SAMPLE: f64 = 1e-3;

/// AUTO rule: ridge-regress each column of X on all other columns of the
/// design (own contemporaneous column excluded), take twice the largest
/// coefficient magnitude, floor at 1.
fn auto_big_m(panel: &TimeSeriesPanel, gram: &Array2<f64>, dtx: &Array2<f64>) -> f64 {
    let m = panel.d * (1 + panel.p);
    let rho = AUTO_RIDGE_PENALTY_PER_SAMPLE * panel.n as f64;
    let mut max_coef = 0.0f64;
    for j in 0..panel.d {
        let keep: Vec<usize> = (0..m).filter(|&k| k != j).collect();
        let r = keep.len();
        let mut sys = nalgebra::DMatrix::zeros(r, r);
        let mut rhs = nalgebra::DVector::zeros(r);
        for (a, &ka) in keep.iter().enumerate() {
            for (b, &kb) in keep.iter().enumerate() {
                sys[(a, b)] = gram[(ka, kb)];
            }
            sys[(a, a)] += rho;
            rhs[a] = dtx[(ka, j)];
        }
        if let Some(sol) = sys.lu().solve(&rhs) {
            for v in sol.iter() {
                max_coef = max_coef.max(v.abs());
            }
        }
    }
    (2.0 * max_coef).max(1.0)
}

/// Grows the penalty coefficients with the sample count (sqrt rule) so the
/// penalty-to-fit ratio shrinks as samples accumulate while per-edge
/// decisions still sharpen.
pub fn scale_regularization(n_samples: usize, base: RegMode) -> RegMode {
    let f = (n_samples as f64).sqrt();
    RegMode {
        variant: base.variant,
        lambda: base.lambda * f,
        eta_reg: base.eta_reg * f,
    }
}

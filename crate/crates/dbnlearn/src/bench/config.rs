//! Experiment configuration: a sectioned key = value file (TOML) resolved
//! into fully-defaulted settings, an ensemble-name parser, and the content
//! hash that keys result rows.
//!
//! The hash covers everything that can change a row's numbers — ensemble,
//! dimensions, seeds, noise, solver and relaxation tolerances, penalties,
//! weight bound — and deliberately excludes `output_dir` and `workers`,
//! which only affect where results go and how fast they arrive.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::IntraModel;
use crate::error::{Error, Result};
use crate::objective::{BigM, RegMode, RegVariant};
use crate::relaxation::RelaxationConfig;
use crate::solver::{Branching, CutStrategy, NodeSelection, SolverConfig};

/// Parsed ensemble name: model, intra edge-vertex ratio, one inter ratio
/// per lag (so the autoregressive order is the count of inter ratios).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub model: IntraModel,
    pub intra_ratio: f64,
    pub inter_ratios: Vec<f64>,
}

impl Ensemble {
    pub fn p(&self) -> usize {
        self.inter_ratios.len()
    }

    /// Shared inter ratio. The name grammar admits distinct per-lag ratios,
    /// but the generator draws every lag from one ratio, so mixed values
    /// are rejected up front rather than silently averaged.
    pub fn inter_ratio(&self) -> Result<f64> {
        match self.inter_ratios.first() {
            None => Ok(0.0),
            Some(&first) => {
                if self.inter_ratios.iter().any(|&r| r != first) {
                    Err(Error::Config(
                        "per-lag inter ratios must all match (generator draws every lag \
                         from one ratio)"
                            .into(),
                    ))
                } else {
                    Ok(first)
                }
            }
        }
    }
}

/// Parses names like `ER3-1`, `SF3-1`, `ER2-1-1` (model, intra ratio, then
/// one inter ratio per lag; no inter part means order 0).
pub fn parse_ensemble(name: &str) -> Result<Ensemble> {
    let rest = name.trim();
    let (model, tail) = if let Some(t) = rest.strip_prefix("ER") {
        (IntraModel::Er, t)
    } else if let Some(t) = rest.strip_prefix("SF") {
        (IntraModel::Sf, t)
    } else {
        return Err(Error::Config(format!(
            "ensemble {:?} must start with ER or SF",
            name
        )));
    };
    let mut parts = tail.split('-');
    let intra: f64 = parts
        .next()
        .filter(|s| !s.is_empty())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Config(format!("ensemble {:?}: bad intra ratio", name)))?;
    let mut inter = Vec::new();
    for part in parts {
        let r: f64 = part
            .parse()
            .map_err(|_| Error::Config(format!("ensemble {:?}: bad inter ratio {:?}", name, part)))?;
        inter.push(r);
    }
    if intra <= 0.0 || inter.iter().any(|&r| r < 0.0) {
        return Err(Error::Config(format!(
            "ensemble {:?}: ratios must be positive",
            name
        )));
    }
    Ok(Ensemble {
        model,
        intra_ratio: intra,
        inter_ratios: inter,
    })
}

fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}
fn default_sigma() -> f64 {
    1.0
}
fn default_eta() -> f64 {
    1.0
}
fn default_workers() -> usize {
    1
}
fn default_seed_policy() -> String {
    "stable".into()
}
fn default_output_dir() -> String {
    "bench_out".into()
}
fn default_method() -> String {
    "miqp_bnb".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub ensemble: String,
    pub d_list: Vec<usize>,
    pub n_list: Vec<usize>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// "stable": replace each listed seed by the next one (scanning upward
    /// from the smallest) whose drawn system is stable, so every cell gets a
    /// full complement of rows. "listed": use the seeds verbatim and record
    /// generation failures as rows.
    #[serde(default = "default_seed_policy")]
    pub seed_policy: String,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Inter-slice weight decay parameter of the generator (>= 1).
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_method")]
    pub method: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub time_limit: Option<f64>,
    pub gap_tolerance: Option<f64>,
    pub cut_strategy: Option<String>,
    pub integrality_tol: Option<f64>,
    pub node_selection: Option<String>,
    pub parallel_nodes: Option<usize>,
    #[serde(default)]
    pub relax: RelaxSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct RelaxSection {
    pub tol_feas: Option<f64>,
    pub tol_bound: Option<f64>,
    pub max_iter_factor: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct RegSection {
    /// "auto" (sample-size rule), "l1", "l2_squared", or "l2_literal_abs".
    pub mode: Option<String>,
    pub lambda: Option<f64>,
    pub eta: Option<f64>,
}

/// On-disk experiment file. `big_m` is top-level: it bounds the instance,
/// not the search.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub reg: RegSection,
    /// "auto" or a positive number (as a string or float in TOML).
    pub big_m: Option<toml::Value>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {}", e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.d_list.is_empty() || e.n_list.is_empty() || e.seeds.is_empty() {
            return Err(Error::Config(
                "d_list, n_list and seeds must be nonempty".into(),
            ));
        }
        if e.sigma <= 0.0 {
            return Err(Error::Config("sigma must be positive".into()));
        }
        if e.eta < 1.0 {
            return Err(Error::Config("eta must be at least 1".into()));
        }
        if e.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        match e.seed_policy.as_str() {
            "stable" | "listed" => {}
            other => {
                return Err(Error::Config(format!(
                    "seed_policy must be \"stable\" or \"listed\", got {:?}",
                    other
                )))
            }
        }
        parse_ensemble(&e.ensemble)?.inter_ratio()?;
        self.solver_config()?;
        self.big_m_choice()?;
        if let Some(mode) = &self.reg.mode {
            if mode != "auto" {
                RegVariant::parse(mode)?;
                if self.reg.lambda.is_none() {
                    return Err(Error::Config(
                        "explicit reg mode requires lambda (and eta for inter penalties)".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn ensemble(&self) -> Ensemble {
        parse_ensemble(&self.experiment.ensemble).expect("validated at load")
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        resolve_solver(&self.solver)
    }

    pub fn big_m_choice(&self) -> Result<BigM> {
        resolve_big_m(&self.big_m)
    }

    /// Penalty mode for one sample count, resolving the "auto" rule.
    pub fn reg_for(&self, n: usize) -> Result<RegMode> {
        resolve_reg(&self.reg, n)
    }

    /// Canonical content string covering every result-relevant setting.
    fn hash_input(&self) -> Result<String> {
        let e = &self.experiment;
        let s = self.solver_config()?;
        let big_m = match self.big_m_choice()? {
            BigM::Auto => "auto".to_string(),
            BigM::Fixed(v) => format!("{}", v),
        };
        let regs: Vec<String> = e
            .n_list
            .iter()
            .map(|&n| {
                let r = self.reg_for(n)?;
                Ok(format!("{}:{}:{}:{}", n, r.variant.name(), r.lambda, r.eta_reg))
            })
            .collect::<Result<_>>()?;
        Ok(format!(
            "ensemble={}\nd_list={:?}\nn_list={:?}\nseeds={:?}\nseed_policy={}\nsigma={}\neta={}\nmethod={}\n\
             time_limit={}\ngap_tolerance={}\ncut_strategy={}\nintegrality_tol={}\nnode_selection={}\n\
             tol_feas={}\ntol_bound={}\nmax_iter_factor={}\nbig_m={}\nreg=[{}]\n",
            e.ensemble,
            e.d_list,
            e.n_list,
            e.seeds,
            e.seed_policy,
            e.sigma,
            e.eta,
            e.method,
            s.time_limit,
            s.gap_tolerance,
            s.cut_strategy.name(),
            s.integrality_tol,
            s.node_selection.name(),
            s.relax.tol_feas,
            s.relax.tol_bound,
            s.relax.max_iter_factor,
            big_m,
            regs.join(","),
        ))
    }

    /// Hex content hash identifying the rows this config produces.
    pub fn config_hash(&self) -> Result<String> {
        let mut hasher = Sha256::new();
        hasher.update(self.hash_input()?.as_bytes());
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(16);
        for b in digest.iter().take(8) {
            hex.push_str(&format!("{:02x}", b));
        }
        Ok(hex)
    }

    /// The full resolved settings echoed into the output directory so every
    /// result ships with the tolerances that produced it.
    pub fn echo_toml(&self) -> Result<String> {
        let body =
            toml::to_string_pretty(self).map_err(|e| Error::Config(format!("echo: {}", e)))?;
        Ok(format!("# config_hash = {}\n{}", self.config_hash()?, body))
    }
}

/// Solver settings from a section with every key optional; missing keys
/// take the library defaults.
pub fn resolve_solver(s: &SolverSection) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    Ok(SolverConfig {
        time_limit: s.time_limit.unwrap_or(d.time_limit),
        gap_tolerance: s.gap_tolerance.unwrap_or(d.gap_tolerance),
        cut_strategy: match &s.cut_strategy {
            Some(name) => CutStrategy::parse(name)?,
            None => d.cut_strategy,
        },
        integrality_tol: s.integrality_tol.unwrap_or(d.integrality_tol),
        node_selection: match &s.node_selection {
            Some(name) => NodeSelection::parse(name)?,
            None => d.node_selection,
        },
        branching: Branching::MostFractional,
        parallel_nodes: s.parallel_nodes.unwrap_or(d.parallel_nodes),
        relax: RelaxationConfig {
            tol_feas: s.relax.tol_feas.unwrap_or(d.relax.tol_feas),
            tol_bound: s.relax.tol_bound.unwrap_or(d.relax.tol_bound),
            max_iter_factor: s.relax.max_iter_factor.unwrap_or(d.relax.max_iter_factor),
        },
    })
}

pub fn resolve_big_m(v: &Option<toml::Value>) -> Result<BigM> {
    match v {
        None => Ok(BigM::Auto),
        Some(toml::Value::String(s)) if s == "auto" => Ok(BigM::Auto),
        Some(toml::Value::Float(f)) if *f > 0.0 => Ok(BigM::Fixed(*f)),
        Some(toml::Value::Integer(i)) if *i > 0 => Ok(BigM::Fixed(*i as f64)),
        Some(other) => Err(Error::Config(format!(
            "big_m must be \"auto\" or a positive number, got {}",
            other
        ))),
    }
}

pub fn resolve_reg(r: &RegSection, n: usize) -> Result<RegMode> {
    match r.mode.as_deref() {
        None | Some("auto") => {
            if let (Some(lam), eta) = (r.lambda, r.eta) {
                // Base values given: keep the auto variant choice.
                let variant = auto_variant(n);
                return reg_from(variant, lam, eta.unwrap_or(lam));
            }
            Ok(default_reg_for(n))
        }
        Some(name) => {
            let variant = RegVariant::parse(name)?;
            let lam = r
                .lambda
                .ok_or_else(|| Error::Config("reg.lambda required".into()))?;
            let eta = r.eta.unwrap_or(lam);
            reg_from(variant, lam, eta)
        }
    }
}

/// Config file for single-dataset solves (the `solve` subcommand): the
/// solver, penalty and weight-bound sections of an experiment file with no
/// [experiment] block.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct SolveConfigFile {
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub reg: RegSection,
    pub big_m: Option<toml::Value>,
}

impl SolveConfigFile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SolveConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {}", e)))?;
        // Surface bad names at load time, not first use.
        resolve_solver(&cfg.solver)?;
        resolve_big_m(&cfg.big_m)?;
        if let Some(mode) = cfg.reg.mode.as_deref() {
            if mode != "auto" {
                RegVariant::parse(mode)?;
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

fn reg_from(variant: RegVariant, lambda: f64, eta: f64) -> Result<RegMode> {
    RegMode::new(variant, lambda, eta)
}

fn auto_variant(n: usize) -> RegVariant {
    if n < 500 {
        RegVariant::L1
    } else {
        RegVariant::L2Squared
    }
}

/// Sample-size default: L1 with small flat penalties below 500 samples
/// (sparse indicator costs behave better in the low-data regime), the
/// squared inter penalty above, with the intra penalty grown as sqrt(n) so
/// the edge price keeps pace with the residual scale.
pub fn default_reg_for(n: usize) -> RegMode {
    match auto_variant(n) {
        RegVariant::L1 => RegMode::l1(0.05, 0.05),
        _ => {
            let lam = scale_regularization(0.5, n);
            RegMode::l2_squared(lam, lam)
        }
    }
}

/// Scales a base penalty (quoted at n = 1000) to another sample count.
pub fn scale_regularization(base_at_1000: f64, n: usize) -> f64 {
    base_at_1000 * ((n as f64) / 1000.0).sqrt()
}

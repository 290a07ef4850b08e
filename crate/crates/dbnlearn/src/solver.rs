//! Branch-and-bound-and-cut over edge indicators.
//!
//! Nodes carry indicator fixings; bounding is the convex relaxation from
//! `relaxation`; branching picks the most fractional intra indicator first.
//! Acyclicity is enforced lazily: when a node relaxation comes back integral,
//! the rounded intra support is DFS-scanned and any cycles found become
//! cycle-exclusion cuts in a global append-only pool shared by every node.
//! Integral acyclic candidates are refit exactly on their support and
//! accepted as incumbents.
//!
//! Three devices keep the tree small. The relaxation exports a separable
//! bound certificate, so fixing an indicator hypothetically re-prices one
//! term in O(1): coordinates whose "on" (or "off") price already exceeds the
//! incumbent are fixed to the other value without branching (reduced-cost
//! fixing; fixes derived at the root hold for the whole tree and are
//! re-scanned whenever the incumbent improves). Branch children inherit the
//! re-priced certificate value as their starting bound instead of the parent
//! bound. And a threshold-rounding heuristic refits a handful of supports at
//! the root (and periodically below it) so a near-optimal incumbent exists
//! before the search widens. A node is fathomed only when its bound reaches
//! the incumbent minus the gap tolerance or when nothing is left to branch
//! on; the global dual bound is the smallest bound over open and fathomed
//! subtrees, so the reported MIP gap is a true certificate.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{find_cycles, is_acyclic, Cycle, DbnGraph, EdgeSupport};
use crate::objective::{score, Indicator, MiqpInstance, RegMode, RegVariant};
use crate::relaxation::{
    solve_relaxation, Certificate, RelaxStatus, RelaxationConfig, RelaxationResult, RIDGE_FLOOR,
};

/// Which cycles of a cyclic candidate become cuts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutStrategy {
    FirstCycle,
    ShortestCycle,
    AllCycles,
}

impl CutStrategy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FIRST_CYCLE" => Ok(CutStrategy::FirstCycle),
            "SHORTEST_CYCLE" => Ok(CutStrategy::ShortestCycle),
            "ALL_CYCLES" => Ok(CutStrategy::AllCycles),
            other => Err(Error::Config(format!("unknown cut strategy {:?}", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            CutStrategy::FirstCycle => "FIRST_CYCLE",
            CutStrategy::ShortestCycle => "SHORTEST_CYCLE",
            CutStrategy::AllCycles => "ALL_CYCLES",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeSelection {
    BestBound,
    DfsDive,
}

impl NodeSelection {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BEST_BOUND" => Ok(NodeSelection::BestBound),
            "DFS_DIVE" => Ok(NodeSelection::DfsDive),
            other => Err(Error::Config(format!("unknown node selection {:?}", other))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            NodeSelection::BestBound => "BEST_BOUND",
            NodeSelection::DfsDive => "DFS_DIVE",
        }
    }
}

/// Only one branching rule is implemented; the enum keeps the config honest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branching {
    MostFractional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub time_limit: f64,
    pub gap_tolerance: f64,
    pub cut_strategy: CutStrategy,
    pub integrality_tol: f64,
    pub node_selection: NodeSelection,
    pub branching: Branching,
    pub parallel_nodes: usize,
    pub relax: RelaxationConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            time_limit: 7200.0,
            gap_tolerance: 1e-6,
            cut_strategy: CutStrategy::AllCycles,
            integrality_tol: 1e-6,
            node_selection: NodeSelection::BestBound,
            branching: Branching::MostFractional,
            parallel_nodes: 1,
            relax: RelaxationConfig::default(),
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<()> {
        if !(self.time_limit > 0.0) {
            return Err(Error::Config("time_limit must be positive".into()));
        }
        if self.gap_tolerance < 0.0 {
            return Err(Error::Config("gap_tolerance must be nonnegative".into()));
        }
        if !(self.integrality_tol > 0.0 && self.integrality_tol < 0.5) {
            return Err(Error::Config("integrality_tol must lie in (0, 0.5)".into()));
        }
        if self.parallel_nodes < 1 {
            return Err(Error::Config("parallel_nodes must be at least 1".into()));
        }
        Ok(())
    }
}

/// One open subproblem of the search tree.
#[derive(Debug, Clone)]
pub struct BnbNode {
    pub fixings: BTreeMap<Indicator, bool>,
    pub parent_bound: f64,
    pub depth: usize,
    pub warm_start: Option<Arc<Array2<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    TimeLimit,
    InfeasibleConfig,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "OPTIMAL",
            SolveStatus::TimeLimit => "TIME_LIMIT",
            SolveStatus::InfeasibleConfig => "INFEASIBLE_CONFIG",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub incumbent: DbnGraph,
    pub incumbent_objective: f64,
    pub best_bound: f64,
    pub mip_gap: f64,
    pub cuts_added: usize,
    /// Simple-cycle count of the complete digraph on d vertices — the size
    /// of the constraint family the lazy scheme avoids materializing.
    pub total_cycle_constraints_possible: f64,
    pub nodes_explored: usize,
    pub wall_time: f64,
    pub status: SolveStatus,
    pub warnings: Vec<String>,
    /// The global cut pool at termination (for audit and soundness tests).
    pub cuts: Vec<Cycle>,
    /// Global dual bound after each improvement (non-decreasing).
    pub bound_history: Vec<f64>,
    /// Incumbent objective after each acceptance (non-increasing).
    pub incumbent_history: Vec<f64>,
    pub config: SolverConfig,
    pub reg: RegMode,
    pub big_m: f64,
}

impl SolveReport {
    /// Key-value text dump including every tolerance in force.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv("status", self.status.name().to_string());
        kv("incumbent_objective", format!("{}", self.incumbent_objective));
        kv("best_bound", format!("{}", self.best_bound));
        kv("mip_gap", format!("{}", self.mip_gap));
        kv("cuts_added", format!("{}", self.cuts_added));
        kv(
            "total_cycle_constraints_possible",
            if self.total_cycle_constraints_possible > 1e15 {
                format!("{:e} (superexponential)", self.total_cycle_constraints_possible)
            } else {
                format!("{}", self.total_cycle_constraints_possible)
            },
        );
        kv("nodes_explored", format!("{}", self.nodes_explored));
        kv("wall_time_s", format!("{:.3}", self.wall_time));
        kv("warnings", format!("{:?}", self.warnings));
        kv("reg.variant", self.reg.variant.name().to_string());
        kv("reg.lambda", format!("{}", self.reg.lambda));
        kv("reg.eta", format!("{}", self.reg.eta_reg));
        kv("bigM", format!("{}", self.big_m));
        kv("gap_tolerance", format!("{}", self.config.gap_tolerance));
        kv("time_limit_s", format!("{}", self.config.time_limit));
        kv("integrality_tol", format!("{}", self.config.integrality_tol));
        kv("cut_strategy", self.config.cut_strategy.name().to_string());
        kv("node_selection", self.config.node_selection.name().to_string());
        kv("parallel_nodes", format!("{}", self.config.parallel_nodes));
        kv("relax.tol_feas", format!("{}", self.config.relax.tol_feas));
        kv("relax.tol_bound", format!("{}", self.config.relax.tol_bound));
        kv(
            "relax.max_iter_factor",
            format!("{}", self.config.relax.max_iter_factor),
        );
        kv("ridge_floor", format!("{}", RIDGE_FLOOR));
        s
    }
}

/// Certified relative distance between incumbent and bound, clamped at zero.
pub fn mip_gap(incumbent_obj: f64, best_bound: f64) -> f64 {
    ((incumbent_obj - best_bound) / incumbent_obj.abs().max(1e-10)).max(0.0)
}

/// Cuts to add for one cyclic candidate, per strategy. DFS discovery order
/// breaks ties.
pub fn lazy_cuts_for(candidate: &EdgeSupport, strategy: CutStrategy) -> Vec<Cycle> {
    let cycles = find_cycles(candidate);
    if cycles.is_empty() {
        return Vec::new();
    }
    match strategy {
        CutStrategy::FirstCycle => vec![cycles[0].clone()],
        CutStrategy::ShortestCycle => {
            let best = cycles
                .iter()
                .enumerate()
                .min_by_key(|(idx, c)| (c.len(), *idx))
                .map(|(_, c)| c.clone())
                .unwrap();
            vec![best]
        }
        CutStrategy::AllCycles => cycles,
    }
}

/// Cycle inequalities violated by a fractional indicator point. A cycle C
/// is violated when sum of e over C exceeds |C| - 1, i.e. when the closed
/// walk cost under edge costs (1 - e) drops below 1. All-pairs shortest
/// paths over those costs find the cheapest closed walk through every
/// vertex; any walk cheaper than 1 contains a simple cycle at most as
/// expensive (costs are nonnegative), which is extracted and returned.
/// Results are deduplicated, most violated first, capped at `max_cuts`.
fn separate_cycle_cuts(e_intra: &Array2<f64>, tol: f64, max_cuts: usize) -> Vec<Cycle> {
    let d = e_intra.nrows();
    let inf = f64::INFINITY;
    let mut dist = vec![vec![inf; d]; d];
    let mut next = vec![vec![usize::MAX; d]; d];
    let cost = |i: usize, j: usize| (1.0 - e_intra[(i, j)]).clamp(0.0, 1.0);
    for i in 0..d {
        for j in 0..d {
            if i != j {
                dist[i][j] = cost(i, j);
                next[i][j] = j;
            }
        }
    }
    for k in 0..d {
        for i in 0..d {
            if dist[i][k] == inf {
                continue;
            }
            for j in 0..d {
                let via = dist[i][k] + dist[k][j];
                if via < dist[i][j] {
                    dist[i][j] = via;
                    next[i][j] = next[i][k];
                }
            }
        }
    }

    let mut found: Vec<(f64, Cycle)> = Vec::new();
    let mut keys = BTreeSet::new();
    for start in 0..d {
        // Cheapest closed walk through `start`: direct hop to j, then the
        // shortest path back.
        let mut best: Option<(f64, usize)> = None;
        for j in 0..d {
            if j == start || dist[j][start] == inf {
                continue;
            }
            let total = cost(start, j) + dist[j][start];
            if best.map_or(true, |(b, _)| total < b) {
                best = Some((total, j));
            }
        }
        let Some((total, hop)) = best else { continue };
        if total >= 1.0 - tol {
            continue;
        }
        // Walk the reconstruction; the first repeated vertex closes a
        // simple cycle no more expensive than the walk.
        let mut verts = vec![start, hop];
        let mut cur = hop;
        let mut looped = None;
        while cur != start {
            cur = next[cur][start];
            if let Some(pos) = verts.iter().position(|&v| v == cur) {
                looped = Some(pos);
                break;
            }
            verts.push(cur);
        }
        if let Some(pos) = looped {
            verts.drain(..pos);
        }
        let Ok(cycle) = Cycle::from_vertices(&verts) else {
            continue;
        };
        // Re-check the violation on the extracted simple cycle.
        let slack: f64 = cycle.edges().iter().map(|&(i, j)| cost(i, j)).sum();
        if slack >= 1.0 - tol {
            continue;
        }
        if keys.insert(cycle.canonical_key()) {
            found.push((slack, cycle));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    found.truncate(max_cuts);
    found.into_iter().map(|(_, c)| c).collect()
}

/// Number of simple directed cycles in the complete digraph on `d` vertices:
/// sum over k of C(d,k) * (k-1)!.
pub fn count_simple_cycles_complete(d: usize) -> f64 {
    let mut total = 0.0f64;
    for k in 2..=d {
        let mut choose = 1.0f64;
        for i in 0..k {
            choose *= (d - i) as f64 / (i + 1) as f64;
        }
        let mut fact = 1.0f64;
        for i in 1..k {
            fact *= i as f64;
        }
        total += choose * fact;
    }
    total
}

/// Heap entry ordered so the smallest bound pops first, ties by insertion.
struct OpenEntry {
    bound: f64,
    seq: u64,
    node: BnbNode,
}

impl PartialEq for OpenEntry {
    fn eq(&self, other: &Self) -> bool {
        self.bound == other.bound && self.seq == other.seq
    }
}
impl Eq for OpenEntry {}
impl PartialOrd for OpenEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // BinaryHeap is a max-heap: invert so the lowest (bound, seq) wins.
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum OpenSet {
    Heap(BinaryHeap<OpenEntry>),
    Stack(Vec<OpenEntry>),
}

impl OpenSet {
    fn new(selection: NodeSelection) -> Self {
        match selection {
            NodeSelection::BestBound => OpenSet::Heap(BinaryHeap::new()),
            NodeSelection::DfsDive => OpenSet::Stack(Vec::new()),
        }
    }

    fn push(&mut self, entry: OpenEntry) {
        match self {
            OpenSet::Heap(h) => h.push(entry),
            OpenSet::Stack(s) => s.push(entry),
        }
    }

    fn pop(&mut self) -> Option<OpenEntry> {
        match self {
            OpenSet::Heap(h) => h.pop(),
            OpenSet::Stack(s) => s.pop(),
        }
    }

    fn len(&self) -> usize {
        match self {
            OpenSet::Heap(h) => h.len(),
            OpenSet::Stack(s) => s.len(),
        }
    }

    fn min_bound(&self) -> f64 {
        match self {
            OpenSet::Heap(h) => h.peek().map(|e| e.bound).unwrap_or(f64::INFINITY),
            OpenSet::Stack(s) => s.iter().map(|e| e.bound).fold(f64::INFINITY, f64::min),
        }
    }
}

/// Exact per-support refit: least squares (plus the squared-variant ridge)
/// on the given intra support and mode-appropriate inter coordinates, with
/// box fallback through the relaxation engine when a coefficient escapes.
fn refit_support(
    inst: &MiqpInstance,
    intra: &EdgeSupport,
    inter: &BTreeSet<(usize, usize, usize)>,
    relax_cfg: &RelaxationConfig,
    warnings: &mut Vec<String>,
) -> Result<DbnGraph> {
    let d = inst.d();
    let mut g = DbnGraph::zeros(d, inst.p());
    let gram = inst.gram();
    let dtx = inst.dtx();
    let literal_abs = inst.reg.variant == RegVariant::L2LiteralAbs;

    let mut box_violated = literal_abs; // the |a| variant always takes the CD path
    if !literal_abs {
        'columns: for col in 0..d {
            let mut coords: Vec<usize> = intra
                .iter()
                .filter(|&(_, to)| to == col)
                .map(|(from, _)| from)
                .collect();
            for &(lag, from, to) in inter {
                if to == col {
                    coords.push(d + (lag - 1) * d + from);
                }
            }
            let r = coords.len();
            if r == 0 {
                continue;
            }
            let mut sys = nalgebra::DMatrix::zeros(r, r);
            let mut rhs = nalgebra::DVector::zeros(r);
            for (a, &ka) in coords.iter().enumerate() {
                for (b, &kb) in coords.iter().enumerate() {
                    sys[(a, b)] = gram[(ka, kb)];
                }
                sys[(a, a)] += RIDGE_FLOOR;
                if ka >= d && inst.reg.variant == RegVariant::L2Squared {
                    sys[(a, a)] += inst.reg.eta_reg;
                }
                rhs[a] = dtx[(ka, col)];
            }
            let sol = match sys.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => sys
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Solver("singular refit system".into()))?,
            };
            for v in sol.iter() {
                if v.abs() > inst.c {
                    box_violated = true;
                    break 'columns;
                }
            }
            for (i, &coord) in coords.iter().enumerate() {
                if coord < d {
                    g.w_mut()[(coord, col)] = sol[i];
                } else {
                    g.a_mut()[(coord - d) / d][((coord - d) % d, col)] = sol[i];
                }
            }
        }
    }

    if box_violated {
        // Solve the box-constrained support problem exactly through the
        // relaxation engine with everything pinned.
        let mut fixings = BTreeMap::new();
        for ind in inst.all_indicators() {
            if inst.fixing(ind).is_some() {
                continue;
            }
            let on = match ind {
                Indicator::Intra { from, to } => intra.contains(from, to),
                Indicator::Inter { lag, from, to } => inter.contains(&(lag, from, to)),
            };
            fixings.insert(ind, on);
        }
        let cfg = RelaxationConfig {
            max_iter_factor: relax_cfg.max_iter_factor * 20,
            ..*relax_cfg
        };
        let r = solve_relaxation(inst, &[], &fixings, None, &cfg);
        g = DbnGraph::new(r.w, r.a)?;
        if !literal_abs {
            warnings.push(format!(
                "big-M binding: support refit hit the weight bound c = {}",
                inst.c
            ));
        }
    }

    // Near-bound coefficients mean c may have cut off the true optimum.
    let near = 1e-6 * inst.c;
    let hit = g
        .w()
        .iter()
        .chain(g.a().iter().flat_map(|m| m.iter()))
        .any(|v| v.abs() > 0.0 && inst.c - v.abs() <= near);
    if hit {
        let msg = format!("big-M binding: |weight| within {:e} of c = {}", near, inst.c);
        if !warnings.iter().any(|w| w == &msg) {
            warnings.push(msg);
        }
    }
    Ok(g)
}

type InterSupport = BTreeSet<(usize, usize, usize)>;

struct SearchState<'a> {
    inst: &'a MiqpInstance,
    cfg: SolverConfig,
    inter_counts: bool,
    cut_pool: Vec<Cycle>,
    cut_keys: BTreeSet<Vec<usize>>,
    incumbent: DbnGraph,
    incumbent_objective: f64,
    retired_floor: f64,
    cuts_added: usize,
    nodes_explored: usize,
    warnings: Vec<String>,
    bound_history: Vec<f64>,
    incumbent_history: Vec<f64>,
    last_reported_bound: f64,
    start: Instant,
    seq: u64,
    /// Indicator fixings proven valid for the whole tree by reduced-cost
    /// arguments, with the certified bound of the side they exclude.
    global_fixings: BTreeMap<Indicator, (bool, f64)>,
    /// Root certificate and the indicators free at its derivation, kept for
    /// cheap re-scans when the incumbent improves.
    root_cert: Option<(Certificate, Vec<Indicator>)>,
    rescan_pending: bool,
    /// Supports already refit by the rounding heuristic.
    tried_supports: BTreeSet<(Vec<(usize, usize)>, Vec<(usize, usize, usize)>)>,
}

impl<'a> SearchState<'a> {
    fn prune_threshold(&self) -> f64 {
        self.incumbent_objective
            - self.cfg.gap_tolerance * self.incumbent_objective.abs().max(1e-10)
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn retire(&mut self, bound: f64) {
        self.retired_floor = self.retired_floor.min(bound);
    }

    fn global_bound(&self, open: &OpenSet) -> f64 {
        self.retired_floor
            .min(open.min_bound())
            .min(self.incumbent_objective)
            .max(0.0)
    }

    fn note_bound(&mut self, open: &OpenSet) {
        let b = self.global_bound(open);
        if b > self.last_reported_bound {
            self.last_reported_bound = b;
            self.bound_history.push(b);
        }
    }

    fn accept_incumbent(&mut self, g: DbnGraph, obj: f64) {
        debug_assert!(g.is_intra_acyclic(), "incumbent must be acyclic");
        if obj < self.incumbent_objective {
            self.incumbent = g;
            self.incumbent_objective = obj;
            self.incumbent_history.push(obj);
            self.rescan_pending = true;
        }
    }

    /// Appends new cuts to the pool, deduplicated, under a hard pool cap;
    /// at the cap the caller falls back to branching on cycle edges, which
    /// preserves correctness at reduced pruning strength.
    fn add_cuts(&mut self, cuts: Vec<Cycle>) -> usize {
        const CUT_POOL_CAP: usize = 800;
        let mut added = 0;
        for c in cuts {
            if self.cuts_added >= CUT_POOL_CAP {
                break;
            }
            if self.cut_keys.insert(c.canonical_key()) {
                self.cut_pool.push(c);
                self.cuts_added += 1;
                added += 1;
            }
        }
        added
    }

    /// Node fixings merged over the proven-global ones. Returns the certified
    /// bound of the excluded side when the node contradicts a global fixing.
    fn effective_fixings(
        &self,
        node: &BnbNode,
    ) -> std::result::Result<BTreeMap<Indicator, bool>, f64> {
        let mut merged = node.fixings.clone();
        for (&ind, &(value, excluded_bound)) in &self.global_fixings {
            match merged.get(&ind) {
                Some(&v) if v != value => return Err(excluded_bound),
                Some(_) => {}
                None => {
                    merged.insert(ind, value);
                }
            }
        }
        Ok(merged)
    }

    /// True when the indicator participates in reduced-cost pricing: intra
    /// always; inter only when the variant charges eta per indicator.
    fn prices_indicator(&self, ind: Indicator) -> bool {
        matches!(ind, Indicator::Intra { .. }) || self.inter_counts
    }

    /// Reduced-cost scan of a certificate against the current incumbent.
    /// Fixes derived from the root hold tree-wide; node-level ones go into
    /// the node's own fixing map. Returns how many new fixings were added.
    fn reduced_cost_fix(
        &mut self,
        cert: &Certificate,
        eff: &BTreeMap<Indicator, bool>,
        node: Option<&mut BnbNode>,
    ) -> usize {
        let thr = self.prune_threshold();
        if !thr.is_finite() || cert.bound() >= thr {
            return 0;
        }
        let d = self.inst.d();
        let mut node_fixes: Vec<(Indicator, bool)> = Vec::new();
        let is_root = node.is_none();
        let mut added = 0;
        for ind in self.inst.all_indicators() {
            if self.inst.fixing(ind).is_some()
                || eff.contains_key(&ind)
                || !self.prices_indicator(ind)
            {
                continue;
            }
            let (coord, col) = (ind.coord(d), ind.target());
            let bound_on = cert.bound_if_fixed(coord, col, true);
            if bound_on >= thr {
                if is_root {
                    self.global_fixings.insert(ind, (false, bound_on));
                } else {
                    node_fixes.push((ind, false));
                }
                added += 1;
                continue;
            }
            let bound_off = cert.bound_if_fixed(coord, col, false);
            if bound_off >= thr {
                if is_root {
                    self.global_fixings.insert(ind, (true, bound_off));
                } else {
                    node_fixes.push((ind, true));
                }
                added += 1;
            }
        }
        if let Some(node) = node {
            for (ind, v) in node_fixes {
                node.fixings.insert(ind, v);
            }
        }
        added
    }

    /// Re-applies the stored root certificate after incumbent improvements:
    /// a lower incumbent can only make more reduced-cost fixings valid.
    fn rescan_root(&mut self) {
        self.rescan_pending = false;
        let Some((cert, free)) = self.root_cert.take() else {
            return;
        };
        let thr = self.prune_threshold();
        let d = self.inst.d();
        if thr.is_finite() && cert.bound() < thr {
            for &ind in &free {
                if self.global_fixings.contains_key(&ind) {
                    continue;
                }
                let (coord, col) = (ind.coord(d), ind.target());
                let bound_on = cert.bound_if_fixed(coord, col, true);
                if bound_on >= thr {
                    self.global_fixings.insert(ind, (false, bound_on));
                    continue;
                }
                let bound_off = cert.bound_if_fixed(coord, col, false);
                if bound_off >= thr {
                    self.global_fixings.insert(ind, (true, bound_off));
                }
            }
        }
        self.root_cert = Some((cert, free));
    }

    /// Exact penalized column cost over a support: min over coefficients of
    /// the column residual (plus the squared-variant inter ridge), closed
    /// form x_sq - rhs . z*. The literal-|a| variant is ranked without its
    /// inter term here; candidates are re-scored exactly on acceptance.
    fn column_cost(&self, intra: &EdgeSupport, inter: &InterSupport, col: usize) -> f64 {
        let inst = self.inst;
        let d = inst.d();
        let gram = inst.gram();
        let dtx = inst.dtx();
        let mut coords: Vec<usize> = intra
            .iter()
            .filter(|&(_, to)| to == col)
            .map(|(from, _)| from)
            .collect();
        for &(lag, from, to) in inter.iter() {
            if to == col {
                coords.push(d + (lag - 1) * d + from);
            }
        }
        if coords.is_empty() {
            return inst.x_sq(col);
        }
        let r = coords.len();
        let mut sys = nalgebra::DMatrix::zeros(r, r);
        let mut rhs = nalgebra::DVector::zeros(r);
        for (a, &ka) in coords.iter().enumerate() {
            for (b, &kb) in coords.iter().enumerate() {
                sys[(a, b)] = gram[(ka, kb)];
            }
            sys[(a, a)] += RIDGE_FLOOR;
            if ka >= d && inst.reg.variant == RegVariant::L2Squared {
                sys[(a, a)] += inst.reg.eta_reg;
            }
            rhs[a] = dtx[(ka, col)];
        }
        match sys.clone().cholesky() {
            Some(ch) => {
                let z = ch.solve(&rhs);
                inst.x_sq(col) - rhs.dot(&z)
            }
            None => match sys.lu().solve(&rhs) {
                Some(z) => inst.x_sq(col) - rhs.dot(&z),
                None => inst.x_sq(col),
            },
        }
    }

    /// Best-improvement local search over supports: add / delete / reverse
    /// moves on intra edges (add / delete on inter coordinates when the
    /// variant prices them), each scored by the exact penalized column
    /// objective, iterated to a local minimum. The polished support is refit
    /// and offered as an incumbent. Instance-level fixings are respected;
    /// every intermediate support stays acyclic.
    fn local_search(&mut self, mut intra: EdgeSupport, mut inter: InterSupport) -> Result<()> {
        let inst = self.inst;
        let d = inst.d();
        let lambda = inst.reg.lambda;
        let eta = inst.reg.eta_reg;
        let mut col_cost: Vec<f64> = (0..d).map(|c| self.column_cost(&intra, &inter, c)).collect();

        #[derive(Clone, Copy)]
        enum Move {
            Add(usize, usize),
            Delete(usize, usize),
            Reverse(usize, usize),
            AddInter(usize, usize, usize),
            DeleteInter(usize, usize, usize),
        }

        for _round in 0..400 {
            let mut best: Option<(f64, Move)> = None;
            let consider = |gain: f64, mv: Move, best: &mut Option<(f64, Move)>| {
                let scale = col_cost.iter().sum::<f64>().abs().max(1.0);
                if gain > 1e-9 * scale && best.as_ref().map_or(true, |(g, _)| gain > *g) {
                    *best = Some((gain, mv));
                }
            };
            for from in 0..d {
                for to in 0..d {
                    if from == to {
                        continue;
                    }
                    let ind = Indicator::Intra { from, to };
                    if intra.contains(from, to) {
                        if inst.fixing(ind) != Some(true) {
                            let mut trial = intra.clone();
                            trial.remove(from, to);
                            let gain = col_cost[to] - self.column_cost(&trial, &inter, to) + lambda;
                            consider(gain, Move::Delete(from, to), &mut best);
                            // Reverse: drop (from,to), add (to,from).
                            let rev = Indicator::Intra { from: to, to: from };
                            if !intra.contains(to, from) && inst.fixing(rev) != Some(false) {
                                trial.insert(to, from)?;
                                if is_acyclic(&trial) {
                                    let gain = col_cost[to]
                                        - self.column_cost(&trial, &inter, to)
                                        + col_cost[from]
                                        - self.column_cost(&trial, &inter, from);
                                    consider(gain, Move::Reverse(from, to), &mut best);
                                }
                            }
                        }
                    } else if inst.fixing(ind) != Some(false) {
                        let mut trial = intra.clone();
                        trial.insert(from, to)?;
                        if is_acyclic(&trial) {
                            let gain = col_cost[to] - self.column_cost(&trial, &inter, to) - lambda;
                            consider(gain, Move::Add(from, to), &mut best);
                        }
                    }
                }
            }
            if self.inter_counts {
                for lag in 1..=inst.p() {
                    for from in 0..d {
                        for to in 0..d {
                            let ind = Indicator::Inter { lag, from, to };
                            let key = (lag, from, to);
                            if inter.contains(&key) {
                                if inst.fixing(ind) != Some(true) {
                                    let mut trial = inter.clone();
                                    trial.remove(&key);
                                    let gain =
                                        col_cost[to] - self.column_cost(&intra, &trial, to) + eta;
                                    consider(gain, Move::DeleteInter(lag, from, to), &mut best);
                                }
                            } else if inst.fixing(ind) != Some(false) {
                                let mut trial = inter.clone();
                                trial.insert(key);
                                let gain =
                                    col_cost[to] - self.column_cost(&intra, &trial, to) - eta;
                                consider(gain, Move::AddInter(lag, from, to), &mut best);
                            }
                        }
                    }
                }
            }
            let Some((_, mv)) = best else { break };
            match mv {
                Move::Add(f, t) => intra.insert(f, t)?,
                Move::Delete(f, t) => intra.remove(f, t),
                Move::Reverse(f, t) => {
                    intra.remove(f, t);
                    intra.insert(t, f)?;
                }
                Move::AddInter(l, f, t) => {
                    inter.insert((l, f, t));
                }
                Move::DeleteInter(l, f, t) => {
                    inter.remove(&(l, f, t));
                }
            }
            let dirty: Vec<usize> = match mv {
                Move::Add(_, t) | Move::Delete(_, t) => vec![t],
                Move::Reverse(f, t) => vec![f, t],
                Move::AddInter(_, _, t) | Move::DeleteInter(_, _, t) => vec![t],
            };
            for c in dirty {
                col_cost[c] = self.column_cost(&intra, &inter, c);
            }
        }

        let key = (
            intra.iter().collect::<Vec<_>>(),
            inter.iter().copied().collect::<Vec<_>>(),
        );
        if !self.tried_supports.insert(key) {
            return Ok(());
        }
        let mut warn = Vec::new();
        let g = refit_support(inst, &intra, &inter, &self.cfg.relax, &mut warn)?;
        let obj = score(&g, &inst.panel, inst.reg)?.total;
        self.accept_incumbent(g, obj);
        Ok(())
    }

    /// Support pair of a graph: nonzero intra entries and, in the
    /// indicator-counting variant, nonzero inter entries (all admissible
    /// coordinates otherwise).
    fn supports_of(&self, g: &DbnGraph) -> Result<(EdgeSupport, InterSupport)> {
        let inst = self.inst;
        let d = inst.d();
        let mut intra = EdgeSupport::new(d);
        for from in 0..d {
            for to in 0..d {
                if from != to && g.w()[(from, to)] != 0.0 {
                    intra.insert(from, to)?;
                }
            }
        }
        let mut inter: InterSupport = BTreeSet::new();
        for lag in 1..=inst.p() {
            for from in 0..d {
                for to in 0..d {
                    let keep = if self.inter_counts {
                        g.a()[lag - 1][(from, to)] != 0.0
                    } else {
                        inst.fixing(Indicator::Inter { lag, from, to }) != Some(false)
                    };
                    if keep {
                        inter.insert((lag, from, to));
                    }
                }
            }
        }
        Ok((intra, inter))
    }

    /// Threshold-rounding heuristic: sweep a few magnitude cutoffs over the
    /// relaxed point, drop the lightest edge of any remaining cycle, refit
    /// exactly, and offer the result as an incumbent.
    fn rounding_heuristic(&mut self, relax: &RelaxationResult) -> Result<()> {
        let inst = self.inst;
        let d = inst.d();
        let mut mags: Vec<f64> = Vec::new();
        for from in 0..d {
            for to in 0..d {
                if from != to {
                    let v = relax.w[(from, to)].abs();
                    if v > 0.0 {
                        mags.push(v);
                    }
                }
            }
        }
        if mags.is_empty() {
            return Ok(());
        }
        mags.sort_by(|a, b| a.total_cmp(b));
        mags.dedup();
        let mut thresholds: Vec<f64> = Vec::new();
        let take = 6.min(mags.len());
        for k in 0..take {
            let idx = k * (mags.len() - 1) / take.max(1);
            thresholds.push(mags[idx]);
        }
        thresholds.dedup();

        for &delta in &thresholds {
            let mut support = EdgeSupport::new(d);
            for from in 0..d {
                for to in 0..d {
                    if from == to {
                        continue;
                    }
                    let ind = Indicator::Intra { from, to };
                    if inst.fixing(ind) == Some(false) {
                        continue;
                    }
                    if inst.fixing(ind) == Some(true) || relax.w[(from, to)].abs() >= delta {
                        support.insert(from, to)?;
                    }
                }
            }
            // Break remaining cycles by dropping their lightest droppable edge.
            loop {
                let cycles = find_cycles(&support);
                if cycles.is_empty() {
                    break;
                }
                let mut victim: Option<((usize, usize), f64)> = None;
                for &(from, to) in cycles[0].edges() {
                    if inst.fixing(Indicator::Intra { from, to }) == Some(true) {
                        continue;
                    }
                    let wmag = relax.w[(from, to)].abs();
                    if victim.map_or(true, |(_, best)| wmag < best) {
                        victim = Some(((from, to), wmag));
                    }
                }
                match victim {
                    Some(((from, to), _)) => support.remove(from, to),
                    None => break, // fully forced cycle; the root check rejects this
                }
            }
            if !is_acyclic(&support) {
                continue;
            }

            let mut inter: InterSupport = BTreeSet::new();
            for lag in 1..=inst.p() {
                for from in 0..d {
                    for to in 0..d {
                        let ind = Indicator::Inter { lag, from, to };
                        if inst.fixing(ind) == Some(false) {
                            continue;
                        }
                        let keep = if self.inter_counts {
                            inst.fixing(ind) == Some(true)
                                || relax.a[lag - 1][(from, to)].abs() >= delta
                        } else {
                            true
                        };
                        if keep {
                            inter.insert((lag, from, to));
                        }
                    }
                }
            }

            let key = (
                support.iter().collect::<Vec<_>>(),
                inter.iter().copied().collect::<Vec<_>>(),
            );
            if !self.tried_supports.insert(key) {
                continue;
            }
            let mut warn = Vec::new();
            let g = refit_support(inst, &support, &inter, &self.cfg.relax, &mut warn)?;
            let obj = score(&g, &inst.panel, inst.reg)?.total;
            self.accept_incumbent(g, obj);
        }
        Ok(())
    }
}

/// Branch variable choice. Most fractional first; the product rule on the
/// certificate's re-priced child bounds (an O(1) strong-branching proxy)
/// breaks ties, then |weight|, then the lowest address. When every
/// candidate is integral (the fallback at uncertified integral nodes) the
/// product rule decides.
fn pick_branch_variable(
    candidates: &[(Indicator, f64, f64)], // (indicator, e, |weight|)
    cert: &Certificate,
    node_bound: f64,
    d: usize,
) -> Option<Indicator> {
    candidates
        .iter()
        .map(|&(ind, e, w)| {
            let (coord, col) = (ind.coord(d), ind.target());
            let gain_on = (cert.bound_if_fixed(coord, col, true) - node_bound).max(0.0);
            let gain_off = (cert.bound_if_fixed(coord, col, false) - node_bound).max(0.0);
            let product = gain_on * gain_off + 1e-9 * (gain_on + gain_off);
            (ind, e.min(1.0 - e), product, w)
        })
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then_with(|| a.2.total_cmp(&b.2))
                .then_with(|| a.3.total_cmp(&b.3))
                .then_with(|| b.0.cmp(&a.0)) // lowest indicator wins ties
        })
        .map(|(ind, _, _, _)| ind)
}

/// Solves the instance to certified optimality (or the time limit).
pub fn solve(inst: &MiqpInstance, cfg: SolverConfig) -> Result<SolveReport> {
    cfg.validate()?;
    let d = inst.d();
    let start = Instant::now();

    // Forced-to-1 intra edges must already be acyclic, else no feasible
    // integral point exists at all.
    let mut forced_intra = EdgeSupport::new(d);
    let mut forced_inter: InterSupport = BTreeSet::new();
    for (&ind, &v) in inst.fixings() {
        if !v {
            continue;
        }
        match ind {
            Indicator::Intra { from, to } => forced_intra.insert(from, to)?,
            Indicator::Inter { lag, from, to } => {
                forced_inter.insert((lag, from, to));
            }
        }
    }
    let make_report =
        |state: SearchState, best_bound: f64, status: SolveStatus| -> SolveReport {
            let gap = mip_gap(state.incumbent_objective, best_bound);
            SolveReport {
                incumbent: state.incumbent,
                incumbent_objective: state.incumbent_objective,
                best_bound,
                mip_gap: gap,
                cuts_added: state.cuts_added,
                total_cycle_constraints_possible: count_simple_cycles_complete(d),
                nodes_explored: state.nodes_explored,
                wall_time: state.start.elapsed().as_secs_f64(),
                status,
                warnings: state.warnings,
                cuts: state.cut_pool,
                bound_history: state.bound_history,
                incumbent_history: state.incumbent_history,
                config: cfg,
                reg: inst.reg,
                big_m: inst.c,
            }
        };

    let fresh_state = |warnings: Vec<String>, incumbent: DbnGraph, obj: f64| SearchState {
        inst,
        cfg,
        inter_counts: inst.reg.variant == RegVariant::L1 && inst.reg.eta_reg > 0.0,
        cut_pool: Vec::new(),
        cut_keys: BTreeSet::new(),
        incumbent,
        incumbent_objective: obj,
        retired_floor: f64::INFINITY,
        cuts_added: 0,
        nodes_explored: 0,
        warnings,
        bound_history: Vec::new(),
        incumbent_history: Vec::new(),
        last_reported_bound: 0.0,
        start,
        seq: 0,
        global_fixings: BTreeMap::new(),
        root_cert: None,
        rescan_pending: false,
        tried_supports: BTreeSet::new(),
    };

    if !is_acyclic(&forced_intra) {
        let state = fresh_state(
            vec!["forced intra edges contain a cycle".into()],
            DbnGraph::zeros(d, inst.p()),
            f64::INFINITY,
        );
        let mut report = make_report(state, f64::INFINITY, SolveStatus::InfeasibleConfig);
        report.mip_gap = 0.0;
        return Ok(report);
    }

    // Initial incumbent: exact refit on whatever is forced to 1 (the empty
    // graph when nothing is).
    let mut warnings = Vec::new();
    let init_inter = initial_inter_support(inst, &forced_inter);
    let init_graph = refit_support(inst, &forced_intra, &init_inter, &cfg.relax, &mut warnings)?;
    let init_obj = score(&init_graph, &inst.panel, inst.reg)?.total;

    let mut state = fresh_state(warnings, init_graph, init_obj);
    state.incumbent_history.push(init_obj);

    let mut open = OpenSet::new(cfg.node_selection);
    open.push(OpenEntry {
        bound: 0.0,
        seq: 0,
        node: BnbNode {
            fixings: BTreeMap::new(),
            parent_bound: 0.0,
            depth: 0,
            warm_start: None,
        },
    });
    state.seq = 1;

    let mut timed_out = false;
    while let Some(entry) = open.pop() {
        if state.elapsed() > cfg.time_limit {
            // Put the node back so its bound still counts in the certificate.
            open.push(entry);
            timed_out = true;
            break;
        }
        if state.rescan_pending {
            state.rescan_root();
        }
        if entry.bound >= state.prune_threshold() {
            state.retire(entry.bound);
            state.note_bound(&open);
            continue;
        }
        process_node(&mut state, &mut open, entry.node, entry.bound)?;
        state.note_bound(&open);
    }

    let final_bound = if timed_out || open.len() > 0 {
        state.global_bound(&open)
    } else {
        state.retired_floor.min(state.incumbent_objective).max(0.0)
    };
    let mut status = if timed_out {
        SolveStatus::TimeLimit
    } else {
        SolveStatus::Optimal
    };
    let final_gap = mip_gap(state.incumbent_objective, final_bound);
    if status == SolveStatus::Optimal && final_gap > cfg.gap_tolerance {
        // The tree is exhausted but some fathomed leaf kept a loose bound
        // (iteration-capped relaxation). Optimality cannot be claimed.
        state
            .warnings
            .push("search exhausted with a bound certificate looser than gap_tolerance".into());
        status = SolveStatus::TimeLimit;
    }
    state.note_bound(&open);
    if state.last_reported_bound < final_bound {
        state.bound_history.push(final_bound);
    }
    Ok(make_report(state, final_bound, status))
}

/// Inter coordinates of the initial incumbent: forced ones, plus every
/// admissible coordinate when the variant has no per-indicator cost.
fn initial_inter_support(inst: &MiqpInstance, forced: &InterSupport) -> InterSupport {
    let counts_indicators = inst.reg.variant == RegVariant::L1 && inst.reg.eta_reg > 0.0;
    if counts_indicators {
        return forced.clone();
    }
    let mut s = BTreeSet::new();
    for lag in 1..=inst.p() {
        for from in 0..inst.d() {
            for to in 0..inst.d() {
                if inst.fixing(Indicator::Inter { lag, from, to }) != Some(false) {
                    s.insert((lag, from, to));
                }
            }
        }
    }
    s
}

fn process_node(
    state: &mut SearchState,
    open: &mut OpenSet,
    mut node: BnbNode,
    pop_bound: f64,
) -> Result<()> {
    state.nodes_explored += 1;
    let inst = state.inst;
    let cfg = state.cfg;
    let d = inst.d();

    let mut node_bound = pop_bound.max(node.parent_bound);
    let mut rc_rounds = 0usize;
    let mut boosted = false;
    // Cut-and-resolve loop: a node whose integral candidate is cyclic gets
    // its cuts appended to the global pool and is re-solved immediately;
    // reduced-cost fixings likewise tighten the node in place.
    for _round in 0..200 {
        if state.elapsed() > cfg.time_limit {
            open.push(OpenEntry {
                bound: node_bound,
                seq: state.seq,
                node,
            });
            state.seq += 1;
            return Ok(());
        }
        let eff = match state.effective_fixings(&node) {
            Ok(map) => map,
            Err(excluded_bound) => {
                // The node's branch contradicts a tree-wide reduced-cost
                // fixing; the stored bound certifies this subtree is beaten.
                state.retire(excluded_bound.max(node_bound));
                return Ok(());
            }
        };
        let relax_cfg = if boosted {
            RelaxationConfig {
                max_iter_factor: cfg.relax.max_iter_factor * 20,
                ..cfg.relax
            }
        } else {
            cfg.relax
        };
        let relax = solve_relaxation(
            inst,
            &state.cut_pool,
            &eff,
            node.warm_start.as_deref(),
            &relax_cfg,
        );
        if relax.status == RelaxStatus::Infeasible {
            // Empty subtree: optimum is +inf, no effect on the dual floor.
            return Ok(());
        }
        node_bound = node_bound.max(relax.lower_bound);
        if node_bound >= state.prune_threshold() {
            state.retire(node_bound);
            return Ok(());
        }

        // Separate cycle inequalities at the fractional point: cuts found
        // here lift the bound through the Lagrangian prices without any
        // branching. The pool cap makes degenerate instances fall back to
        // branching rather than flooding the pool.
        if state.cuts_added < 800 {
            let mut e_mat = Array2::zeros((d, d));
            for (&ind, &e) in &relax.e {
                if let Indicator::Intra { from, to } = ind {
                    e_mat[(from, to)] = e;
                }
            }
            let violated = separate_cycle_cuts(&e_mat, 1e-4, d);
            if !violated.is_empty() && state.add_cuts(violated) > 0 {
                node.warm_start = Some(Arc::new(relax.z));
                continue;
            }
        }

        let is_root = node.depth == 0;
        if is_root {
            let free: Vec<Indicator> = inst
                .all_indicators()
                .into_iter()
                .filter(|&ind| {
                    inst.fixing(ind).is_none()
                        && !eff.contains_key(&ind)
                        && state.prices_indicator(ind)
                })
                .collect();
            state.root_cert = Some((relax.cert.clone(), free));
        }

        // Reduced-cost fixing against the current incumbent.
        if rc_rounds < 4 {
            let added = if is_root {
                state.reduced_cost_fix(&relax.cert, &eff, None)
            } else {
                state.reduced_cost_fix(&relax.cert, &eff, Some(&mut node))
            };
            if added > 0 {
                rc_rounds += 1;
                node.warm_start = Some(Arc::new(relax.z));
                continue;
            }
        }

        // Periodic incumbent heuristics (always at the root): threshold
        // rounding of the relaxed point, then exact-refit local search
        // polishing the best incumbent so far.
        if is_root || state.nodes_explored % 512 == 0 {
            state.rounding_heuristic(&relax)?;
            let inc = state.incumbent.clone();
            let (intra0, inter0) = state.supports_of(&inc)?;
            state.local_search(intra0, inter0)?;
            if node_bound >= state.prune_threshold() {
                state.retire(node_bound);
                return Ok(());
            }
        }

        // Classify free indicators at the relaxed point.
        let mut frac_intra: Vec<(Indicator, f64, f64)> = Vec::new();
        let mut frac_inter: Vec<(Indicator, f64, f64)> = Vec::new();
        let mut free_branchable: Vec<(Indicator, f64, f64)> = Vec::new();
        for (&ind, &e) in &relax.e {
            if inst.fixing(ind).is_some() || eff.contains_key(&ind) {
                continue;
            }
            let w = inst.weight_of_relax(&relax, ind).abs();
            if state.prices_indicator(ind) {
                free_branchable.push((ind, e, w));
            }
            if e > cfg.integrality_tol && e < 1.0 - cfg.integrality_tol {
                match ind {
                    Indicator::Intra { .. } => frac_intra.push((ind, e, w)),
                    Indicator::Inter { .. } => {
                        if state.inter_counts {
                            frac_inter.push((ind, e, w));
                        }
                    }
                }
            }
        }

        if let Some(branch_ind) = pick_branch_variable(&frac_intra, &relax.cert, node_bound, d) {
            branch(state, open, node, node_bound, branch_ind, &relax);
            return Ok(());
        }

        // Intra indicators integral: round and scan for cycles.
        let mut support = EdgeSupport::new(d);
        for (&ind, &e) in &relax.e {
            if let Indicator::Intra { from, to } = ind {
                if e >= 1.0 - cfg.integrality_tol {
                    support.insert(from, to)?;
                }
            }
        }
        let new_cuts = lazy_cuts_for(&support, cfg.cut_strategy);
        if !new_cuts.is_empty() {
            let added = state.add_cuts(new_cuts);
            if added > 0 {
                node.warm_start = Some(Arc::new(relax.z));
                continue; // re-solve against the grown pool
            }
            // All cycles already pooled: the relaxed point only got here
            // through tolerance slack. Branch on the heaviest cycle edge to
            // make progress.
            let cyc = find_cycles(&support);
            let mut best: Option<(Indicator, f64)> = None;
            for c in &cyc {
                for &(from, to) in c.edges() {
                    let ind = Indicator::Intra { from, to };
                    if inst.fixing(ind).is_none() && !eff.contains_key(&ind) {
                        let w = relax.w[(from, to)].abs();
                        if best.map_or(true, |(_, bw)| w > bw) {
                            best = Some((ind, w));
                        }
                    }
                }
            }
            if let Some((ind, _)) = best {
                branch(state, open, node, node_bound, ind, &relax);
            }
            // All cycle edges pinned means contradictory fixings upstream.
            return Ok(());
        }

        // Acyclic. In the indicator-counting mode the inter pattern must be
        // integral before the candidate's objective is meaningful.
        if let Some(branch_ind) = pick_branch_variable(&frac_inter, &relax.cert, node_bound, d) {
            branch(state, open, node, node_bound, branch_ind, &relax);
            return Ok(());
        }

        // Integral, acyclic candidate: exact refit, then incumbent test.
        let mut inter: InterSupport = BTreeSet::new();
        if state.inter_counts {
            for (&ind, &e) in &relax.e {
                if let Indicator::Inter { lag, from, to } = ind {
                    if e >= 1.0 - cfg.integrality_tol {
                        inter.insert((lag, from, to));
                    }
                }
            }
        } else {
            for lag in 1..=inst.p() {
                for from in 0..d {
                    for to in 0..d {
                        let ind = Indicator::Inter { lag, from, to };
                        let off =
                            inst.fixing(ind) == Some(false) || eff.get(&ind) == Some(&false);
                        if !off {
                            inter.insert((lag, from, to));
                        }
                    }
                }
            }
        }
        let mut warn = Vec::new();
        let cand = refit_support(inst, &support, &inter, &cfg.relax, &mut warn)?;
        for w in warn {
            if !state.warnings.contains(&w) {
                state.warnings.push(w);
            }
        }
        let obj = score(&cand, &inst.panel, inst.reg)?.total;
        state.accept_incumbent(cand, obj);

        let scale = state.incumbent_objective.abs().max(1e-10);
        let close_enough = node_bound >= obj - cfg.gap_tolerance * scale;
        if close_enough || node_bound >= state.prune_threshold() {
            state.retire(node_bound);
            return Ok(());
        }
        // The candidate does not certify this subtree yet: branch on a
        // still-free indicator. Each branch consumes one free indicator, so
        // this terminates at fully pinned leaves where the relaxation is
        // the subtree's exact convex value.
        match pick_branch_variable(&free_branchable, &relax.cert, node_bound, d) {
            Some(ind) => {
                branch(state, open, node, node_bound, ind, &relax);
                return Ok(());
            }
            None => {
                if !boosted {
                    // Fully pinned leaf whose bound has not converged to its
                    // primal value: re-solve once with a larger sweep budget.
                    boosted = true;
                    node.warm_start = Some(Arc::new(relax.z));
                    continue;
                }
                let msg = "fathomed a fully pinned leaf with a loose bound".to_string();
                if !state.warnings.contains(&msg) {
                    state.warnings.push(msg);
                }
                state.retire(node_bound);
                return Ok(());
            }
        }
    }
    // Resolve-round cap hit: requeue with the current (valid) bound.
    open.push(OpenEntry {
        bound: node_bound,
        seq: state.seq,
        node,
    });
    state.seq += 1;
    Ok(())
}

impl MiqpInstance {
    fn weight_of_relax(&self, relax: &RelaxationResult, ind: Indicator) -> f64 {
        match ind {
            Indicator::Intra { from, to } => relax.w[(from, to)],
            Indicator::Inter { lag, from, to } => relax.a[lag - 1][(from, to)],
        }
    }
}

fn branch(
    state: &mut SearchState,
    open: &mut OpenSet,
    node: BnbNode,
    node_bound: f64,
    ind: Indicator,
    relax: &RelaxationResult,
) {
    // Cap warm-start retention when the frontier balloons, to bound memory.
    let warm = if open.len() > 20_000 {
        None
    } else {
        Some(Arc::new(relax.z.clone()))
    };
    let d = state.inst.d();
    let (coord, col) = (ind.coord(d), ind.target());
    // Children start from the certificate re-priced under their fixing: a
    // valid bound that orders the frontier without solving anything.
    let lift_on = relax.cert.bound_if_fixed(coord, col, true).max(node_bound);
    let lift_off = relax.cert.bound_if_fixed(coord, col, false).max(node_bound);
    let e_val = relax.e.get(&ind).copied().unwrap_or(0.0);
    let mk = |value: bool, bound: f64| {
        let mut fixings = node.fixings.clone();
        fixings.insert(ind, value);
        (
            BnbNode {
                fixings,
                parent_bound: bound,
                depth: node.depth + 1,
                warm_start: warm.clone(),
            },
            bound,
        )
    };
    // For the dive order, push the rounding-matched child last so it pops
    // first; the heap ignores insertion order beyond tie-breaking.
    let (first, second) = if e_val >= 0.5 {
        ((false, lift_off), (true, lift_on))
    } else {
        ((true, lift_on), (false, lift_off))
    };
    for (value, bound) in [first, second] {
        let (child, b) = mk(value, bound);
        open.push(OpenEntry {
            bound: b,
            seq: state.seq,
            node: child,
        });
        state.seq += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{
        generate_ground_truth, lag_stack, simulate, simulate_from_inputs, GenConfig, IntraModel,
        NoiseSpec,
    };
    use crate::objective::{build_instance, BigM};
    use crate::oracle::{exhaustive_min, ORACLE_MAX_D};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn solve_default(inst: &MiqpInstance) -> SolveReport {
        solve(inst, SolverConfig::default()).unwrap()
    }

    #[test]
    fn gap_formula_examples() {
        assert_eq!(mip_gap(100.0, 100.0), 0.0);
        assert!((mip_gap(100.0, 62.0) - 0.38).abs() < 1e-12);
        assert_eq!(mip_gap(0.0, 0.0), 0.0);
        assert_eq!(mip_gap(10.0, 11.0), 0.0, "clamped at zero");
    }

    #[test]
    fn cycle_count_formula() {
        // d=3: three 2-cycles + two 3-cycles.
        assert_eq!(count_simple_cycles_complete(3), 5.0);
        // d=10, length<=3 alone is 45*1 + 120*2 = 285; total is far larger.
        assert!(count_simple_cycles_complete(10) > 285.0);
        assert_eq!(count_simple_cycles_complete(2), 1.0);
    }

    #[test]
    fn lazy_cut_examples() {
        let acyclic = EdgeSupport::from_edges(3, [(0, 1), (1, 2)]).unwrap();
        assert!(lazy_cuts_for(&acyclic, CutStrategy::AllCycles).is_empty());

        let two_pairs = EdgeSupport::from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        let all = lazy_cuts_for(&two_pairs, CutStrategy::AllCycles);
        assert_eq!(all.len(), 2);
        assert!(all.iter().all(|c| c.len() == 2));
        let first = lazy_cuts_for(&two_pairs, CutStrategy::FirstCycle);
        assert_eq!(first.len(), 1);
        let shortest = lazy_cuts_for(&two_pairs, CutStrategy::ShortestCycle);
        assert_eq!(shortest.len(), 1);
        assert_eq!(shortest[0].len(), 2);
    }

    #[test]
    fn single_edge_instance_recovers_support() {
        // Data from a single intra edge 1 -> 2 (weight 1.5) with low noise.
        let mut w = Array2::zeros((2, 2));
        w[(0, 1)] = 1.5;
        let truth = DbnGraph::new(w, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs = Array2::from_shape_fn((500, 2), |(_, j)| {
            if j == 0 {
                rng.random_range(-1.0..1.0)
            } else {
                0.01 * rng.random_range(-1.0..1.0)
            }
        });
        let series = simulate_from_inputs(&truth, inputs.view()).unwrap();
        let panel = lag_stack(series.view(), 0).unwrap();
        let inst = build_instance(&panel, RegMode::l1(0.05, 0.0), BigM::Fixed(10.0)).unwrap();
        let report = solve_default(&inst);
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!(report.mip_gap <= 1e-6);
        let sup = report.incumbent.intra_support();
        assert!(sup.contains(0, 1));
        assert!(!sup.contains(1, 0));
        assert_eq!(sup.len(), 1);

        // Independent enumeration of the three acyclic supports.
        let oracle = exhaustive_min(&inst, ORACLE_MAX_D).unwrap();
        assert!(
            (report.incumbent_objective - oracle.best_objective).abs()
                <= 1e-9 * oracle.best_objective,
            "solver {} vs enumerated {}",
            report.incumbent_objective,
            oracle.best_objective
        );
    }

    #[test]
    fn matches_oracle_on_small_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let strategies = [
            CutStrategy::AllCycles,
            CutStrategy::FirstCycle,
            CutStrategy::ShortestCycle,
        ];
        for trial in 0..12 {
            let d = rng.random_range(2..4usize);
            let p = rng.random_range(0..2usize);
            let ratio = if d == 2 { 0.5 } else { 1.0 };
            let mut cfg = GenConfig::new(d, p, IntraModel::Er, ratio, 1.0, 100 + trial, 120);
            cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            let truth = generate_ground_truth(&cfg).unwrap();
            let panel = simulate(&truth, &cfg).unwrap();
            let reg = if trial % 2 == 0 {
                RegMode::l1(0.5, 0.4)
            } else {
                RegMode::l2_squared(0.5, 0.4)
            };
            let inst = build_instance(&panel, reg, BigM::Fixed(10.0)).unwrap();
            let mut scfg = SolverConfig::default();
            scfg.cut_strategy = strategies[trial as usize % 3];
            scfg.gap_tolerance = 1e-7;
            let report = solve(&inst, scfg).unwrap();
            let oracle = exhaustive_min(&inst, ORACLE_MAX_D).unwrap();
            assert_eq!(report.status, SolveStatus::Optimal, "trial {}", trial);
            let rel = (report.incumbent_objective - oracle.best_objective).abs()
                / oracle.best_objective.abs().max(1.0);
            assert!(
                rel <= 1e-6,
                "trial {}: solver {} vs oracle {} (rel {})",
                trial,
                report.incumbent_objective,
                oracle.best_objective,
                rel
            );
            assert!(report.incumbent.is_intra_acyclic());
            assert!(
                oracle.best_objective <= report.incumbent_objective + 1e-9,
                "oracle must not exceed any feasible incumbent"
            );
        }
    }

    #[test]
    fn histories_are_monotone_and_cuts_sound() {
        let mut cfg = GenConfig::new(5, 1, IntraModel::Er, 1.5, 1.0, 7, 200);
        cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let truth = generate_ground_truth(&cfg).unwrap();
        let panel = simulate(&truth, &cfg).unwrap();
        let inst = build_instance(&panel, RegMode::l1(1.0, 0.8), BigM::Fixed(10.0)).unwrap();
        let report = solve_default(&inst);
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!(report.mip_gap <= 1e-6, "gap {}", report.mip_gap);
        for pair in report.bound_history.windows(2) {
            assert!(pair[1] >= pair[0], "bound history must not decrease");
        }
        for pair in report.incumbent_history.windows(2) {
            assert!(pair[1] <= pair[0], "incumbent history must not increase");
        }
        assert!(report.best_bound <= report.incumbent_objective + 1e-9);
        // Each pooled cut is a genuine simple cycle: it can only exclude
        // supports that contain the whole cycle, which are cyclic supports.
        for cut in &report.cuts {
            assert!(cut.is_valid());
        }
        assert_eq!(report.cuts.len(), report.cuts_added);
    }

    #[test]
    fn deterministic_reruns_bitwise() {
        let mut cfg = GenConfig::new(4, 1, IntraModel::Er, 1.2, 1.0, 3, 150);
        cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let truth = generate_ground_truth(&cfg).unwrap();
        let panel = simulate(&truth, &cfg).unwrap();
        let inst = build_instance(&panel, RegMode::l1(0.8, 0.6), BigM::Fixed(10.0)).unwrap();
        let r1 = solve_default(&inst);
        let r2 = solve_default(&inst);
        assert_eq!(r1.incumbent, r2.incumbent);
        assert_eq!(r1.incumbent_objective, r2.incumbent_objective);
        assert_eq!(r1.best_bound, r2.best_bound);
        assert_eq!(r1.nodes_explored, r2.nodes_explored);
        assert_eq!(r1.cuts_added, r2.cuts_added);
    }

    #[test]
    fn dfs_dive_reaches_same_objective() {
        let mut cfg = GenConfig::new(4, 1, IntraModel::Er, 1.0, 1.0, 11, 150);
        cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let truth = generate_ground_truth(&cfg).unwrap();
        let panel = simulate(&truth, &cfg).unwrap();
        let inst =
            build_instance(&panel, RegMode::l2_squared(0.8, 0.5), BigM::Fixed(10.0)).unwrap();
        let best_bound = solve_default(&inst);
        let mut dive_cfg = SolverConfig::default();
        dive_cfg.node_selection = NodeSelection::DfsDive;
        let dive = solve(&inst, dive_cfg).unwrap();
        assert_eq!(best_bound.status, SolveStatus::Optimal);
        assert_eq!(dive.status, SolveStatus::Optimal);
        let rel = (best_bound.incumbent_objective - dive.incumbent_objective).abs()
            / best_bound.incumbent_objective.max(1.0);
        assert!(rel <= 1e-6, "selection rules disagree: {}", rel);
    }

    #[test]
    fn contradictory_fixings_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let series = Array2::from_shape_fn((40, 3), |_| rng.random_range(-1.0..1.0));
        let panel = lag_stack(series.view(), 0).unwrap();
        let mut inst = build_instance(&panel, RegMode::l1(0.1, 0.0), BigM::Fixed(5.0)).unwrap();
        inst.fix(Indicator::Intra { from: 0, to: 1 }, true).unwrap();
        inst.fix(Indicator::Intra { from: 1, to: 0 }, true).unwrap();
        let report = solve_default(&inst);
        assert_eq!(report.status, SolveStatus::InfeasibleConfig);
    }

    #[test]
    fn time_limit_returns_feasible_incumbent_and_finite_gap() {
        let mut cfg = GenConfig::new(8, 1, IntraModel::Er, 2.0, 1.0, 5, 300);
        cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let truth = generate_ground_truth(&cfg).unwrap();
        let panel = simulate(&truth, &cfg).unwrap();
        let inst = build_instance(&panel, RegMode::l1(1.0, 0.8), BigM::Fixed(10.0)).unwrap();
        let mut scfg = SolverConfig::default();
        scfg.time_limit = 0.05;
        let report = solve(&inst, scfg).unwrap();
        if report.status == SolveStatus::TimeLimit {
            assert!(report.mip_gap.is_finite());
            assert!(report.incumbent.is_intra_acyclic());
            assert!(report.best_bound <= report.incumbent_objective + 1e-9);
        }
    }

    #[test]
    fn loose_gap_tolerance_stops_early_with_certificate() {
        let mut cfg = GenConfig::new(5, 1, IntraModel::Er, 1.5, 1.0, 9, 200);
        cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let truth = generate_ground_truth(&cfg).unwrap();
        let panel = simulate(&truth, &cfg).unwrap();
        let inst = build_instance(&panel, RegMode::l1(0.8, 0.6), BigM::Fixed(10.0)).unwrap();
        let mut scfg = SolverConfig::default();
        scfg.gap_tolerance = 0.38;
        let report = solve(&inst, scfg).unwrap();
        assert_eq!(report.status, SolveStatus::Optimal);
        assert!(report.mip_gap <= 0.38 + 1e-12);
    }

    #[test]
    fn report_text_lists_tolerances() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let series = Array2::from_shape_fn((30, 2), |_| rng.random_range(-1.0..1.0));
        let panel = lag_stack(series.view(), 0).unwrap();
        let inst = build_instance(&panel, RegMode::l1(0.1, 0.0), BigM::Fixed(5.0)).unwrap();
        let report = solve_default(&inst);
        let text = report.to_text();
        for key in [
            "gap_tolerance",
            "integrality_tol",
            "relax.tol_feas",
            "relax.tol_bound",
            "relax.max_iter_factor",
            "ridge_floor",
            "bigM",
            "cut_strategy",
        ] {
            assert!(text.contains(key), "missing {} in report text", key);
        }
    }
}

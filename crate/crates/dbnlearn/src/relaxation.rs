//! Convex node relaxation: indicators relaxed to [0,1] under fixings and
//! accumulated cycle cuts.
//!
//! Free indicators are eliminated analytically — the penalty is linear and
//! increasing in `e` while the linking constraint only demands `e >= |w|/c`,
//! so `e = |w|/c` at any optimum. That turns the node subproblem into one
//! box-constrained lasso per column of `X` over the shared Gram matrix, and
//! turns each cycle cut into a weighted-L1 budget `Σ |w_e| <= c * r` over the
//! cut's still-free edges.
//!
//! The lower bound is certified, not heuristic: linearizing the smooth part
//! at the current point and minimizing the linearization over the box gives a
//! valid bound that becomes exact at the coordinate-descent fixed point.
//! Binding cuts are priced into the bound through nonnegative Lagrange
//! multipliers (supergradient ascent), and the tiny ridge floor used for
//! strong convexity is subtracted back out of the bound so it stays valid for
//! the un-ridged objective.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Cycle;
use crate::objective::{Indicator, MiqpInstance, RegVariant};

/// Ridge floor added to every quadratic diagonal during the solve; the final
/// bound subtracts `floor * Σ u^2` so it remains valid without the ridge.
pub const RIDGE_FLOOR: f64 = 1e-10;

/// Node-level solve tolerances (config keys relax.tol_feas, relax.tol_bound,
/// relax.max_iter_factor).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxationConfig {
    /// Absolute feasibility slack on constraints of the returned point.
    pub tol_feas: f64,
    /// Relative primal/bound gap at which the node solve stops.
    pub tol_bound: f64,
    /// Coordinate-update budget as a multiple of the free-variable count
    /// (i.e. the maximum number of full sweeps).
    pub max_iter_factor: usize,
}

impl Default for RelaxationConfig {
    fn default() -> Self {
        RelaxationConfig {
            tol_feas: 1e-8,
            tol_bound: 1e-7,
            max_iter_factor: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxStatus {
    Optimal,
    IterationLimit,
    Infeasible,
}

/// Fractional node solution plus its certificate.
#[derive(Debug, Clone)]
pub struct RelaxationResult {
    pub w: Array2<f64>,
    pub a: Vec<Array2<f64>>,
    /// Every indicator's relaxed value: fixed ones at their fixing, free ones
    /// at |weight|/c.
    pub e: BTreeMap<Indicator, f64>,
    /// Valid lower bound on the node relaxation (hence on every integral
    /// completion of the node's fixings).
    pub lower_bound: f64,
    /// True objective at the returned (cut-feasible) point; >= lower_bound.
    pub primal_value: f64,
    pub status: RelaxStatus,
    pub sweeps: usize,
    /// Raw per-column coefficients (coords x d), for warm-starting children.
    pub z: Array2<f64>,
    /// Separable decomposition of the best bound, for reduced-cost logic.
    pub cert: Certificate,
}

/// A coordinate-separable lower-bound certificate: the smooth part of the
/// objective linearized at some point and minimized coordinate-wise over the
/// box, priced with the cut multipliers in force. Because the decomposition
/// is separable, swapping one coordinate's term for the value it would take
/// under a hypothetical indicator fixing yields a valid bound for that
/// restricted subproblem — the basis for reduced-cost fixing and for lifting
/// child-node bounds at branch time.
#[derive(Debug, Clone)]
pub struct Certificate {
    /// Raw per-column linearized minima (before the nonnegativity clamp).
    cols: Vec<f64>,
    /// Fixed-indicator penalties minus the Lagrangian budget offset.
    constant: f64,
    /// |gradient| of the exact smooth part at the certificate point.
    g_abs: Array2<f64>,
    /// Separable penalty per coordinate including cut prices (mu / c).
    pi_aug: Array2<f64>,
    /// Box half-width per coordinate; 0 means pinned to zero.
    u: Array2<f64>,
    /// Sum of clamped column values, cached for O(1) term swaps.
    total_pos: f64,
}

impl Certificate {
    fn trivial(m: usize, d: usize) -> Self {
        Certificate {
            cols: vec![0.0; d],
            constant: 0.0,
            g_abs: Array2::zeros((m, d)),
            pi_aug: Array2::zeros((m, d)),
            u: Array2::zeros((m, d)),
            total_pos: 0.0,
        }
    }

    fn infeasible(m: usize, d: usize) -> Self {
        let mut c = Certificate::trivial(m, d);
        c.constant = f64::INFINITY;
        c.total_pos = 0.0;
        c
    }

    pub fn bound(&self) -> f64 {
        (self.constant + self.total_pos).max(0.0)
    }

    /// The coordinate's current term inside its column's raw value.
    fn term(&self, coord: usize, col: usize) -> f64 {
        -self.u[(coord, col)]
            * (self.g_abs[(coord, col)] - self.pi_aug[(coord, col)]).max(0.0)
    }

    /// Bound for the subproblem where the coordinate's indicator is fixed.
    /// `on = true` pays the full indicator price (u * pi_aug, i.e. the
    /// lambda/eta cost plus any cut multipliers) while the weight still
    /// ranges over the box; `on = false` removes the coordinate entirely.
    pub fn bound_if_fixed(&self, coord: usize, col: usize, on: bool) -> f64 {
        let u = self.u[(coord, col)];
        if u == 0.0 {
            return self.bound();
        }
        let old = self.term(coord, col);
        let new = if on {
            u * (self.pi_aug[(coord, col)] - self.g_abs[(coord, col)])
        } else {
            0.0
        };
        let col_old = self.cols[col];
        let col_new = col_old - old + new;
        (self.constant + self.total_pos - col_old.max(0.0) + col_new.max(0.0)).max(0.0)
    }
}

/// One cycle cut restricted to the node's still-free edges:
/// Σ |z_e| / c over `coords` must stay <= budget.
struct ActiveCut {
    /// (column j, coordinate row) addresses into z.
    coords: Vec<(usize, usize)>,
    budget: f64,
    mu: f64,
}

struct NodeProblem {
    m: usize,
    d: usize,
    c: f64,
    /// Box half-width per (coord, column); 0 encodes "forced to zero".
    u: Array2<f64>,
    /// True L1 penalty per coefficient (lambda/c, eta/c or eta — no cut terms).
    pi: Array2<f64>,
    /// True extra quadratic diagonal (eta for squared inter penalties).
    kappa: Array2<f64>,
    /// Constant penalty from fixed-to-1 indicators.
    const_reg: f64,
    cuts: Vec<ActiveCut>,
    /// Merged fixings for result assembly.
    fixings: BTreeMap<Indicator, bool>,
    /// Coordinates forced to zero by cuts whose budget is exhausted.
    cut_forced: Vec<(usize, usize)>,
}

fn indicator_for(coord: usize, col: usize, d: usize) -> Indicator {
    if coord < d {
        Indicator::Intra {
            from: coord,
            to: col,
        }
    } else {
        Indicator::Inter {
            lag: (coord - d) / d + 1,
            from: (coord - d) % d,
            to: col,
        }
    }
}

fn build_node_problem(
    inst: &MiqpInstance,
    cuts: &[Cycle],
    node_fixings: &BTreeMap<Indicator, bool>,
) -> Result<NodeProblem> {
    let d = inst.d();
    let m = inst.coords_per_column();
    let c = inst.c;
    let reg = inst.reg;

    let mut fixings = inst.fixings().clone();
    for (&k, &v) in node_fixings {
        fixings.insert(k, v);
    }

    let mut u = Array2::from_elem((m, d), c);
    let mut pi = Array2::zeros((m, d));
    let mut kappa = Array2::zeros((m, d));
    let mut const_reg = 0.0;

    for col in 0..d {
        for coord in 0..m {
            let ind = indicator_for(coord, col, d);
            let fixing = fixings.get(&ind).copied();
            let intra = coord < d;
            match fixing {
                Some(false) => u[(coord, col)] = 0.0,
                Some(true) => {
                    if intra {
                        const_reg += reg.lambda;
                    } else if reg.variant == RegVariant::L1 {
                        const_reg += reg.eta_reg;
                    }
                }
                None => {
                    if intra {
                        pi[(coord, col)] += reg.lambda / c;
                    } else if reg.variant == RegVariant::L1 {
                        pi[(coord, col)] += reg.eta_reg / c;
                    }
                }
            }
            if !intra && u[(coord, col)] > 0.0 {
                match reg.variant {
                    RegVariant::L2Squared => kappa[(coord, col)] += reg.eta_reg,
                    RegVariant::L2LiteralAbs => pi[(coord, col)] += reg.eta_reg,
                    RegVariant::L1 => {}
                }
            }
        }
    }

    // Translate each pool cut into the node's coordinates. Fixed-to-1 edges
    // consume budget; fixed-to-0 edges drop out; the rest stay as terms.
    let mut active = Vec::new();
    let mut cut_forced = Vec::new();
    for cycle in cuts {
        let k = cycle.len();
        let mut taken = 0usize;
        let mut free_coords = Vec::new();
        for &(from, to) in cycle.edges() {
            match fixings.get(&Indicator::Intra { from, to }).copied() {
                Some(true) => taken += 1,
                Some(false) => {}
                None => free_coords.push((to, from)), // (column, coord)
            }
        }
        if taken >= k {
            return Err(Error::Solver(format!(
                "contradictory fixings: cycle {} has all {} edges enabled",
                cycle, k
            )));
        }
        let budget = (k - 1 - taken) as f64;
        if budget == 0.0 {
            // No slack left: every free edge of this cycle must vanish.
            cut_forced.extend_from_slice(&free_coords);
            for &(col, coord) in &free_coords {
                u[(coord, col)] = 0.0;
            }
        } else if (free_coords.len() as f64) > budget {
            active.push(ActiveCut {
                coords: free_coords,
                budget,
                mu: 0.0,
            });
        }
        // budget >= free count: the cut can never bind (each e <= 1).
    }

    Ok(NodeProblem {
        m,
        d,
        c,
        u,
        pi,
        kappa,
        const_reg,
        cuts: active,
        fixings,
        cut_forced,
    })
}

impl NodeProblem {
    /// True node objective (no ridge, no multipliers) at a given point.
    fn true_objective(&self, inst: &MiqpInstance, z: &Array2<f64>) -> f64 {
        let gram = inst.gram();
        let dtx = inst.dtx();
        let mut total = self.const_reg;
        for col in 0..self.d {
            let mut quad = inst.x_sq(col);
            for i in 0..self.m {
                let zi = z[(i, col)];
                if zi == 0.0 {
                    continue;
                }
                quad -= 2.0 * dtx[(i, col)] * zi;
                quad += self.kappa[(i, col)] * zi * zi;
                total += self.pi[(i, col)] * zi.abs();
                let mut gz = 0.0;
                for k in 0..self.m {
                    gz += gram[(i, k)] * z[(k, col)];
                }
                quad += zi * gz;
            }
            total += quad;
        }
        total
    }

    /// Shrinks the point onto every cut budget. Shrinking magnitudes can only
    /// relax other cuts, so a single pass yields a feasible point.
    fn project_onto_cuts(&self, z: &mut Array2<f64>) {
        for cut in &self.cuts {
            let radius = self.c * cut.budget;
            let total: f64 = cut.coords.iter().map(|&(j, i)| z[(i, j)].abs()).sum();
            if total <= radius {
                continue;
            }
            // Water-filling threshold for the L1 ball of the member entries.
            let mut mags: Vec<f64> = cut.coords.iter().map(|&(j, i)| z[(i, j)].abs()).collect();
            mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut prefix = 0.0;
            let mut theta = 0.0;
            for (k, &mag) in mags.iter().enumerate() {
                prefix += mag;
                let cand = (prefix - radius) / (k + 1) as f64;
                if k + 1 == mags.len() || cand >= mags[k + 1] {
                    theta = cand;
                    break;
                }
            }
            for &(j, i) in &cut.coords {
                let v = z[(i, j)];
                z[(i, j)] = v.signum() * (v.abs() - theta).max(0.0);
            }
        }
    }

    /// Certified bound: linearize the exact smooth part (Gram quadratic plus
    /// `kappa` diagonal, no ridge floor) at `z` and minimize the linearization
    /// coordinate-wise over the box, priced with the current multipliers.
    /// Valid for any `z`; exact at the optimum. `v` must hold `gram * z`.
    /// Fills `cert` with the separable decomposition of the same bound.
    fn certified_bound(
        &self,
        inst: &MiqpInstance,
        z: &Array2<f64>,
        v: &Array2<f64>,
        pi_aug: &Array2<f64>,
        cert: &mut Certificate,
    ) -> f64 {
        let dtx = inst.dtx();
        let mut offset = self.const_reg;
        for cut in &self.cuts {
            offset -= cut.mu * cut.budget;
        }
        cert.constant = offset;
        cert.pi_aug.assign(pi_aug);
        cert.u.assign(&self.u);
        let mut total_pos = 0.0;
        for col in 0..self.d {
            let mut lb = inst.x_sq(col);
            for i in 0..self.m {
                let ui = self.u[(i, col)];
                if ui == 0.0 {
                    cert.g_abs[(i, col)] = 0.0;
                    continue;
                }
                let zi = z[(i, col)];
                let kap = self.kappa[(i, col)];
                // q(z) - grad(z)'z collapses to -z'(G + K)z + const terms.
                lb += zi * (v[(i, col)] + kap * zi - 2.0 * dtx[(i, col)]);
                let g = 2.0 * (v[(i, col)] + kap * zi - dtx[(i, col)]);
                lb -= g * zi;
                lb -= ui * (g.abs() - pi_aug[(i, col)]).max(0.0);
                cert.g_abs[(i, col)] = g.abs();
            }
            cert.cols[col] = lb;
            total_pos += lb.max(0.0);
        }
        cert.total_pos = total_pos;
        cert.bound()
    }
}

/// Solves the node relaxation. `node_fixings` extend (and override) the
/// instance fixings; `warm` is the parent's coefficient matrix.
pub fn solve_relaxation(
    inst: &MiqpInstance,
    cuts: &[Cycle],
    node_fixings: &BTreeMap<Indicator, bool>,
    warm: Option<&Array2<f64>>,
    cfg: &RelaxationConfig,
) -> RelaxationResult {
    let problem = match build_node_problem(inst, cuts, node_fixings) {
        Ok(p) => p,
        Err(_) => {
            return infeasible_result(inst, cuts, node_fixings);
        }
    };
    let m = problem.m;
    let d = problem.d;
    let gram = inst.gram();
    let dtx = inst.dtx();

    let mut z = match warm {
        Some(w0) if w0.dim() == (m, d) => w0.clone(),
        _ => Array2::zeros((m, d)),
    };
    // Clamp the warm start into the node's box (fixings may have tightened).
    for col in 0..d {
        for i in 0..m {
            let ui = problem.u[(i, col)];
            z[(i, col)] = z[(i, col)].clamp(-ui, ui);
        }
    }
    let mut v = gram.dot(&z);

    let mut pi_aug = problem.pi.clone();

    let sweep_cap = cfg.max_iter_factor.max(1);
    let mut sweeps = 0usize;
    let mut best_bound = 0.0f64;
    let mut best_primal = f64::INFINITY;
    let mut best_z = z.clone();
    let mut status = RelaxStatus::IterationLimit;
    let mut work_cert = Certificate::trivial(m, d);
    let mut best_cert = Certificate::trivial(m, d);

    let has_cuts = !problem.cuts.is_empty();
    let mut outer_mu: Vec<f64> = vec![0.0; problem.cuts.len()];
    let outer_cap = if has_cuts { 60 } else { 1 };

    let mut problem = problem;
    'outer: for outer in 0..outer_cap {
        for (cut, &mu) in problem.cuts.iter_mut().zip(&outer_mu) {
            cut.mu = mu;
        }
        pi_aug.assign(&problem.pi);
        for cut in &problem.cuts {
            for &(j, i) in &cut.coords {
                pi_aug[(i, j)] += cut.mu / problem.c;
            }
        }

        // The mu = 0 round gets the full sweep budget: when its fixed point
        // already satisfies every cut, the bound is exact there and the gap
        // check below terminates without ever pricing the multipliers.
        let inner_cap = if has_cuts && outer > 0 { 15 } else { sweep_cap };
        for _ in 0..inner_cap {
            if sweeps >= sweep_cap {
                break;
            }
            sweeps += 1;
            let mut max_move = 0.0f64;
            for col in 0..d {
                for i in 0..m {
                    let ui = problem.u[(i, col)];
                    if ui == 0.0 {
                        if z[(i, col)] != 0.0 {
                            let delta = -z[(i, col)];
                            z[(i, col)] = 0.0;
                            for k in 0..m {
                                v[(k, col)] += delta * gram[(k, i)];
                            }
                        }
                        continue;
                    }
                    let kap = problem.kappa[(i, col)] + RIDGE_FLOOR;
                    let quad = gram[(i, i)] + kap;
                    let lin = v[(i, col)] - gram[(i, i)] * z[(i, col)] - dtx[(i, col)];
                    let thresh = pi_aug[(i, col)] / 2.0;
                    let mut t = if lin.abs() <= thresh {
                        0.0
                    } else {
                        -(lin - thresh * lin.signum()) / quad
                    };
                    t = t.clamp(-ui, ui);
                    let delta = t - z[(i, col)];
                    if delta != 0.0 {
                        z[(i, col)] = t;
                        for k in 0..m {
                            v[(k, col)] += delta * gram[(k, i)];
                        }
                        max_move = max_move.max(delta.abs());
                    }
                }
            }

            let bound = problem.certified_bound(inst, &z, &v, &pi_aug, &mut work_cert);
            if bound > best_bound {
                best_bound = bound;
                std::mem::swap(&mut best_cert, &mut work_cert);
            }

            let primal = if has_cuts {
                let mut feas = z.clone();
                problem.project_onto_cuts(&mut feas);
                let p = problem.true_objective(inst, &feas);
                if p < best_primal {
                    best_primal = p;
                    best_z = feas;
                }
                p
            } else {
                let p = problem.true_objective(inst, &z);
                if p < best_primal {
                    best_primal = p;
                    best_z = z.clone();
                }
                p
            };

            let gap = best_primal - best_bound;
            if gap <= cfg.tol_bound * best_primal.abs().max(1.0) {
                status = RelaxStatus::Optimal;
                break 'outer;
            }
            if max_move == 0.0 && !has_cuts {
                // Exact fixed point: the linearized bound is already exact,
                // so any residual gap is the ridge-floor margin.
                status = RelaxStatus::Optimal;
                break 'outer;
            }
            let _ = primal;
            if max_move == 0.0 {
                break; // inner converged for this mu; go price the cuts
            }
        }

        if sweeps >= sweep_cap {
            break;
        }

        // Supergradient step on the multipliers (Polyak-style, damped by the
        // best primal value as the optimum estimate).
        let viol: Vec<f64> = problem
            .cuts
            .iter()
            .map(|cut| {
                let s: f64 = cut.coords.iter().map(|&(j, i)| z[(i, j)].abs()).sum();
                s / problem.c - cut.budget
            })
            .collect();
        let norm_sq: f64 = viol.iter().map(|g| g * g).sum();
        if norm_sq <= 1e-24 {
            continue;
        }
        let dual_now = problem.certified_bound(inst, &z, &v, &pi_aug, &mut work_cert);
        if dual_now > best_bound {
            best_bound = dual_now;
            std::mem::swap(&mut best_cert, &mut work_cert);
        }
        let step = 0.7 * (best_primal - dual_now).max(1e-12) / norm_sq;
        for (mu, g) in outer_mu.iter_mut().zip(&viol) {
            *mu = (*mu + step * g).max(0.0);
        }
    }

    assemble_result(
        inst, &problem, best_z, best_bound, best_primal, status, sweeps, best_cert,
    )
}

fn infeasible_result(
    inst: &MiqpInstance,
    _cuts: &[Cycle],
    node_fixings: &BTreeMap<Indicator, bool>,
) -> RelaxationResult {
    let d = inst.d();
    let mut fixings = inst.fixings().clone();
    for (&k, &val) in node_fixings {
        fixings.insert(k, val);
    }
    let mut e = BTreeMap::new();
    for ind in inst.all_indicators() {
        let value = fixings.get(&ind).map(|&b| b as u8 as f64).unwrap_or(0.0);
        e.insert(ind, value);
    }
    RelaxationResult {
        w: Array2::zeros((d, d)),
        a: vec![Array2::zeros((d, d)); inst.p()],
        e,
        lower_bound: f64::INFINITY,
        primal_value: f64::INFINITY,
        status: RelaxStatus::Infeasible,
        sweeps: 0,
        z: Array2::zeros((inst.coords_per_column(), d)),
        cert: Certificate::infeasible(inst.coords_per_column(), d),
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble_result(
    inst: &MiqpInstance,
    problem: &NodeProblem,
    z: Array2<f64>,
    lower_bound: f64,
    primal_value: f64,
    status: RelaxStatus,
    sweeps: usize,
    cert: Certificate,
) -> RelaxationResult {
    let d = problem.d;
    let mut w = Array2::zeros((d, d));
    let mut a = vec![Array2::zeros((d, d)); inst.p()];
    for col in 0..d {
        for coord in 0..problem.m {
            let val = z[(coord, col)];
            if coord < d {
                w[(coord, col)] = val;
            } else {
                a[(coord - d) / d][((coord - d) % d, col)] = val;
            }
        }
    }
    let mut e = BTreeMap::new();
    for ind in inst.all_indicators() {
        let value = match problem.fixings.get(&ind) {
            Some(&b) => b as u8 as f64,
            None => {
                let coord = ind.coord(d);
                let col = ind.target();
                z[(coord, col)].abs() / problem.c
            }
        };
        e.insert(ind, value);
    }
    // Cut-exhausted coordinates are free indicators pinned at zero weight.
    for &(col, coord) in &problem.cut_forced {
        e.insert(indicator_for(coord, col, d), 0.0);
    }
    RelaxationResult {
        w,
        a,
        e,
        lower_bound,
        primal_value,
        status,
        sweeps,
        z,
        cert,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{lag_stack, TimeSeriesPanel};
    use crate::graph::Cycle;
    use crate::objective::{build_instance, BigM, RegMode};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rand_panel(rng: &mut ChaCha8Rng, n: usize, d: usize, p: usize) -> TimeSeriesPanel {
        let series = Array2::from_shape_fn((n + p, d), |_| rng.random_range(-1.0..1.0));
        lag_stack(series.view(), p).unwrap()
    }

    fn fix_all(inst: &MiqpInstance, value: bool) -> BTreeMap<Indicator, bool> {
        let mut map = BTreeMap::new();
        for ind in inst.all_indicators() {
            if inst.fixing(ind).is_none() {
                map.insert(ind, value);
            }
        }
        map
    }

    #[test]
    fn all_fixed_zero_scores_x_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let panel = rand_panel(&mut rng, 25, 3, 1);
        let inst = build_instance(&panel, RegMode::l1(0.3, 0.2), BigM::Fixed(4.0)).unwrap();
        let fixings = fix_all(&inst, false);
        let r = solve_relaxation(&inst, &[], &fixings, None, &RelaxationConfig::default());
        assert_eq!(r.status, RelaxStatus::Optimal);
        assert!(r.w.iter().all(|&x| x == 0.0));
        assert!(r.a.iter().all(|m| m.iter().all(|&x| x == 0.0)));
        let x_sq: f64 = panel.x.iter().map(|v| v * v).sum();
        assert_abs_diff_eq!(r.lower_bound, x_sq, epsilon = 1e-9 * x_sq);
        assert_abs_diff_eq!(r.primal_value, x_sq, epsilon = 1e-12 * x_sq);
    }

    /// Independent normal-equations oracle for the all-enabled OLS case.
    fn ols_objective(panel: &TimeSeriesPanel) -> (f64, Array2<f64>) {
        let d = panel.d;
        let m = d * (1 + panel.p);
        let n = panel.n;
        let design = nalgebra::DMatrix::from_fn(n, m, |i, k| {
            if k < d {
                panel.x[(i, k)]
            } else {
                panel.y[(i, k - d)]
            }
        });
        let mut coef = Array2::zeros((m, d));
        let mut total = 0.0;
        for j in 0..d {
            let keep: Vec<usize> = (0..m).filter(|&k| k != j).collect();
            let sub = design.select_columns(keep.iter());
            let gram = sub.transpose() * &sub;
            let rhs = sub.transpose() * design.column(j);
            let sol = gram.lu().solve(&rhs).unwrap();
            let resid = design.column(j) - &sub * &sol;
            total += resid.norm_squared();
            for (t, &k) in keep.iter().enumerate() {
                coef[(k, j)] = sol[t];
            }
        }
        (total, coef)
    }

    #[test]
    fn all_fixed_one_no_reg_matches_ols() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let panel = rand_panel(&mut rng, 40, 3, 1);
        let inst = build_instance(&panel, RegMode::l1(0.0, 0.0), BigM::Fixed(1e3)).unwrap();
        let fixings = fix_all(&inst, true);
        let cfg = RelaxationConfig {
            max_iter_factor: 600,
            ..RelaxationConfig::default()
        };
        let r = solve_relaxation(&inst, &[], &fixings, None, &cfg);
        let (ols, coef) = ols_objective(&panel);
        assert!(
            (r.primal_value - ols).abs() <= 1e-6 * ols.max(1.0),
            "primal {} vs OLS {}",
            r.primal_value,
            ols
        );
        assert!(r.lower_bound <= ols + 1e-6 * ols.max(1.0));
        assert!(r.lower_bound >= ols - 1e-5 * ols.max(1.0), "bound too loose");
        for j in 0..3 {
            for k in 0..6 {
                let got = if k < 3 { r.w[(k, j)] } else { r.a[0][(k - 3, j)] };
                assert_abs_diff_eq!(got, coef[(k, j)], epsilon = 2e-4);
            }
        }
    }

    #[test]
    fn contradictory_cut_fixings_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let panel = rand_panel(&mut rng, 20, 2, 0);
        let inst = build_instance(&panel, RegMode::l1(0.1, 0.0), BigM::Fixed(2.0)).unwrap();
        let cut = Cycle::from_vertices(&[0, 1]).unwrap();
        let mut fixings = BTreeMap::new();
        fixings.insert(Indicator::Intra { from: 0, to: 1 }, true);
        fixings.insert(Indicator::Intra { from: 1, to: 0 }, true);
        let r = solve_relaxation(&inst, &[cut], &fixings, None, &RelaxationConfig::default());
        assert_eq!(r.status, RelaxStatus::Infeasible);
        assert!(r.lower_bound.is_infinite());
    }

    #[test]
    fn free_indicators_track_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let panel = rand_panel(&mut rng, 50, 4, 1);
        let inst = build_instance(&panel, RegMode::l1(0.5, 0.5), BigM::Fixed(3.0)).unwrap();
        let r = solve_relaxation(
            &inst,
            &[],
            &BTreeMap::new(),
            None,
            &RelaxationConfig::default(),
        );
        for (ind, &ev) in &r.e {
            if inst.fixing(*ind).is_some() {
                continue;
            }
            let wv = match *ind {
                Indicator::Intra { from, to } => r.w[(from, to)],
                Indicator::Inter { lag, from, to } => r.a[lag - 1][(from, to)],
            };
            assert_abs_diff_eq!(ev, wv.abs() / 3.0, epsilon = 1e-12);
            assert!(ev <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn primal_always_at_least_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..25 {
            let d = rng.random_range(2..5);
            let p = rng.random_range(0..2);
            let panel = rand_panel(&mut rng, 30, d, p);
            let reg = if trial % 2 == 0 {
                RegMode::l1(0.2, 0.1)
            } else {
                RegMode::l2_squared(0.2, 0.1)
            };
            let inst = build_instance(&panel, reg, BigM::Fixed(2.5)).unwrap();
            let mut fixings = BTreeMap::new();
            for ind in inst.all_indicators() {
                if inst.fixing(ind).is_none() && rng.random_bool(0.3) {
                    fixings.insert(ind, rng.random_bool(0.5));
                }
            }
            let r = solve_relaxation(&inst, &[], &fixings, None, &RelaxationConfig::default());
            assert!(
                r.primal_value >= r.lower_bound - 1e-9 * r.primal_value.abs().max(1.0),
                "primal {} < bound {}",
                r.primal_value,
                r.lower_bound
            );
        }
    }

    #[test]
    fn fixing_more_never_lowers_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let panel = rand_panel(&mut rng, 30, 3, 1);
            let inst = build_instance(&panel, RegMode::l1(0.3, 0.2), BigM::Fixed(2.0)).unwrap();
            let mut fixings = BTreeMap::new();
            let mut prev = solve_relaxation(
                &inst,
                &[],
                &fixings,
                None,
                &RelaxationConfig::default(),
            );
            let mut free: Vec<Indicator> = inst
                .all_indicators()
                .into_iter()
                .filter(|&i| inst.fixing(i).is_none())
                .collect();
            free.shuffle(&mut rng);
            for ind in free.into_iter().take(6) {
                fixings.insert(ind, rng.random_bool(0.5));
                let next = solve_relaxation(
                    &inst,
                    &[],
                    &fixings,
                    Some(&prev.z),
                    &RelaxationConfig::default(),
                );
                let slack = 1e-6 * prev.lower_bound.abs().max(1.0);
                assert!(
                    next.lower_bound >= prev.lower_bound - slack,
                    "bound fell from {} to {} after fixing {:?}",
                    prev.lower_bound,
                    next.lower_bound,
                    ind
                );
                prev = next;
            }
        }
    }

    #[test]
    fn adding_cuts_never_lowers_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // Strongly cross-correlated pair so both directions want weight.
        let mut series = Array2::zeros((60, 3));
        for t in 0..60 {
            let base: f64 = rng.random_range(-1.0..1.0);
            series[(t, 0)] = base + 0.05 * rng.random_range(-1.0..1.0);
            series[(t, 1)] = base + 0.05 * rng.random_range(-1.0..1.0);
            series[(t, 2)] = rng.random_range(-1.0..1.0);
        }
        let panel = lag_stack(series.view(), 0).unwrap();
        let inst = build_instance(&panel, RegMode::l1(0.01, 0.0), BigM::Fixed(2.0)).unwrap();
        let base = solve_relaxation(
            &inst,
            &[],
            &BTreeMap::new(),
            None,
            &RelaxationConfig::default(),
        );
        let cut = Cycle::from_vertices(&[0, 1]).unwrap();
        let with_cut = solve_relaxation(
            &inst,
            &[cut.clone()],
            &BTreeMap::new(),
            None,
            &RelaxationConfig::default(),
        );
        let slack = 1e-7 * base.lower_bound.abs().max(1.0);
        assert!(with_cut.lower_bound >= base.lower_bound - slack);
        // The returned point satisfies the cut.
        let e01 = with_cut.e[&Indicator::Intra { from: 0, to: 1 }];
        let e10 = with_cut.e[&Indicator::Intra { from: 1, to: 0 }];
        assert!(e01 + e10 <= 1.0 + 1e-8, "cut violated: {} + {}", e01, e10);
    }

    #[test]
    fn exhausted_cut_budget_forces_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let panel = rand_panel(&mut rng, 40, 3, 0);
        let inst = build_instance(&panel, RegMode::l1(0.01, 0.0), BigM::Fixed(2.0)).unwrap();
        let cut = Cycle::from_vertices(&[0, 1]).unwrap();
        let mut fixings = BTreeMap::new();
        fixings.insert(Indicator::Intra { from: 0, to: 1 }, true);
        let r = solve_relaxation(&inst, &[cut], &fixings, None, &RelaxationConfig::default());
        assert_ne!(r.status, RelaxStatus::Infeasible);
        assert_eq!(r.w[(1, 0)], 0.0, "reverse edge must be squeezed out");
        assert_eq!(r.e[&Indicator::Intra { from: 1, to: 0 }], 0.0);
    }

    /// Independent stationarity check of the returned point on cut-free
    /// nodes: box-lasso KKT conditions coordinate by coordinate.
    #[test]
    fn kkt_residual_small_at_returned_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..15 {
            let d = rng.random_range(2..5);
            let p = rng.random_range(0..2);
            let panel = rand_panel(&mut rng, 35, d, p);
            let reg = if trial % 2 == 0 {
                RegMode::l1(0.15, 0.1)
            } else {
                RegMode::l2_squared(0.15, 0.1)
            };
            let c = 2.0;
            let inst = build_instance(&panel, reg, BigM::Fixed(c)).unwrap();
            let mut fixings = BTreeMap::new();
            for ind in inst.all_indicators() {
                if inst.fixing(ind).is_none() && rng.random_bool(0.2) {
                    fixings.insert(ind, rng.random_bool(0.5));
                }
            }
            let r = solve_relaxation(&inst, &[], &fixings, None, &RelaxationConfig::default());
            assert_eq!(r.status, RelaxStatus::Optimal);

            let m = inst.coords_per_column();
            let gram = inst.gram();
            let dtx = inst.dtx();
            let scale = r.primal_value.abs().max(1.0);
            for col in 0..d {
                for i in 0..m {
                    let ind = indicator_for(i, col, d);
                    let fixing = inst.fixing(ind).or_else(|| fixings.get(&ind).copied());
                    if fixing == Some(false) {
                        assert_eq!(r.z[(i, col)], 0.0);
                        continue;
                    }
                    let mut pi = 0.0;
                    let mut kap = 0.0;
                    let intra = i < d;
                    if fixing.is_none() {
                        if intra {
                            pi += reg.lambda / c;
                        } else if reg.variant == RegVariant::L1 {
                            pi += reg.eta_reg / c;
                        }
                    }
                    if !intra && reg.variant == RegVariant::L2Squared {
                        kap += reg.eta_reg;
                    }
                    let mut gz = 0.0;
                    for k in 0..m {
                        gz += gram[(i, k)] * r.z[(k, col)];
                    }
                    let zi = r.z[(i, col)];
                    let g = 2.0 * (gz + kap * zi - dtx[(i, col)]);
                    let tol = 1e-5 * scale;
                    if zi == 0.0 {
                        assert!(g.abs() <= pi + tol, "zero coord grad {} > pi {}", g, pi);
                    } else if zi.abs() < c - 1e-9 {
                        assert!(
                            (g + pi * zi.signum()).abs() <= tol,
                            "interior coord residual {}",
                            g + pi * zi.signum()
                        );
                    } else {
                        // At the box boundary the gradient pushes outward.
                        assert!(
                            (g + pi * zi.signum()) * zi.signum() <= tol,
                            "boundary coord not pinned"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let panel = rand_panel(&mut rng, 40, 4, 1);
        let inst = build_instance(&panel, RegMode::l1(0.2, 0.2), BigM::Fixed(2.0)).unwrap();
        let cold = solve_relaxation(
            &inst,
            &[],
            &BTreeMap::new(),
            None,
            &RelaxationConfig::default(),
        );
        let mut fixings = BTreeMap::new();
        fixings.insert(Indicator::Intra { from: 0, to: 1 }, false);
        let warm = solve_relaxation(&inst, &[], &fixings, Some(&cold.z), &RelaxationConfig::default());
        let cold2 = solve_relaxation(&inst, &[], &fixings, None, &RelaxationConfig::default());
        let scale = cold2.primal_value.abs().max(1.0);
        assert!(
            (warm.primal_value - cold2.primal_value).abs() <= 1e-5 * scale,
            "warm {} vs cold {}",
            warm.primal_value,
            cold2.primal_value
        );
        // Same inputs give bit-identical outputs.
        let again = solve_relaxation(&inst, &[], &fixings, Some(&cold.z), &RelaxationConfig::default());
        assert_eq!(warm.z, again.z);
        assert_eq!(warm.lower_bound, again.lower_bound);
    }
}

//! Reconstruction quality of an estimated DBN against a ground truth:
//! structural Hamming distance, pooled precision/recall/F1, G score,
//! score distance, Frobenius distance, and the best-threshold sweep that
//! grades a weighted estimate by its best achievable support.
//!
//! Edge presence means a nonzero entry. Direction matters and lagged edges
//! only match at the same lag. Precision, recall, F1 and G pool intra and
//! inter edges into single totals; per-slice counts ride along for
//! diagnostics. The G score is not a universally standardized name; here it
//! is the geometric mean sqrt(precision * recall), and every output that
//! prints it labels it as such.
//!
//! SHD charges one unit per missing or spurious edge and discounts a
//! mis-oriented intra edge to one unit total across its two ordered terms.
//! The discount is intra-only: a lagged edge's direction follows time, so
//! an inter pair swapped between the graphs is two independent errors.

use crate::datagen::TimeSeriesPanel;
use crate::error::{Error, Result};
use crate::graph::{threshold, DbnGraph};
use crate::objective::{score, RegMode};

/// Directed-edge confusion counts for one slice matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

impl PairCounts {
    fn absorb(&mut self, est: bool, truth: bool) {
        match (est, truth) {
            (true, true) => self.true_pos += 1,
            (true, false) => self.false_pos += 1,
            (false, true) => self.false_neg += 1,
            (false, false) => {}
        }
    }

    fn merged(counts: impl IntoIterator<Item = PairCounts>) -> PairCounts {
        let mut total = PairCounts::default();
        for c in counts {
            total.true_pos += c.true_pos;
            total.false_pos += c.false_pos;
            total.false_neg += c.false_neg;
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub shd: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub g_score: f64,
    pub sigma_p: f64,
    pub frobenius: f64,
    pub delta_used: f64,
    /// Intra-slice confusion counts (diagnostic; the headline rates pool
    /// intra and inter).
    pub intra_counts: PairCounts,
    /// Per-lag inter-slice confusion counts.
    pub inter_counts: Vec<PairCounts>,
}

fn check_shapes(est: &DbnGraph, truth: &DbnGraph) -> Result<()> {
    if est.d() != truth.d() || est.p() != truth.p() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is (d={}, p={}) but truth is (d={}, p={})",
            est.d(),
            est.p(),
            truth.d(),
            truth.p()
        )));
    }
    Ok(())
}

/// One ordered structural-difference term. `mirror_*` are the statuses of
/// the opposite direction in the same slice; a pure reversal (edge present
/// in exactly one graph, with the opposite direction present in exactly the
/// other) costs 1/2 per ordered term symmetrically, or 1/2 and 1 under the
/// literal convention (the cheap half goes to the term whose truth carries
/// the edge).
fn diff_term(est: bool, truth: bool, mirror_est: bool, mirror_truth: bool, literal: bool) -> f64 {
    if est == truth {
        return 0.0;
    }
    let reversal = mirror_est != mirror_truth && mirror_est == truth && mirror_truth == est;
    if !reversal {
        return 1.0;
    }
    if !literal {
        0.5
    } else if truth {
        0.5
    } else {
        1.0
    }
}

fn shd_impl(est: &DbnGraph, truth: &DbnGraph, literal: bool) -> Result<f64> {
    check_shapes(est, truth)?;
    let d = est.d();
    let mut total = 0.0;
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            total += diff_term(
                est.w()[(i, j)] != 0.0,
                truth.w()[(i, j)] != 0.0,
                est.w()[(j, i)] != 0.0,
                truth.w()[(j, i)] != 0.0,
                literal,
            );
        }
    }
    for lag in 0..est.p() {
        let (ea, ta) = (&est.a()[lag], &truth.a()[lag]);
        for i in 0..d {
            for j in 0..d {
                // Lagged edges cannot be mis-oriented (time fixes the
                // direction), so the reversal discount never applies here;
                // a swapped pair is two independent unit errors.
                total += diff_term(ea[(i, j)] != 0.0, ta[(i, j)] != 0.0, false, false, literal);
            }
        }
    }
    Ok(total)
}

/// Structural Hamming distance over intra and all inter slices. A missing
/// or spurious edge costs 1; a reversed edge costs 1 in total (1/2 per
/// ordered term).
pub fn shd(est: &DbnGraph, truth: &DbnGraph) -> Result<f64> {
    shd_impl(est, truth, false)
}

/// SHD under the asymmetric reading where a reversed edge costs 1.5 in
/// total (1/2 on the side where the truth carries the edge, 1 on the
/// other). Kept selectable because published SHD numbers vary on this.
pub fn shd_literal(est: &DbnGraph, truth: &DbnGraph) -> Result<f64> {
    shd_impl(est, truth, true)
}

/// Directed-edge confusion counts: intra slice and one entry per lag.
pub fn edge_counts(est: &DbnGraph, truth: &DbnGraph) -> Result<(PairCounts, Vec<PairCounts>)> {
    check_shapes(est, truth)?;
    let d = est.d();
    let mut intra = PairCounts::default();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                intra.absorb(est.w()[(i, j)] != 0.0, truth.w()[(i, j)] != 0.0);
            }
        }
    }
    let mut inter = Vec::with_capacity(est.p());
    for lag in 0..est.p() {
        let mut c = PairCounts::default();
        for i in 0..d {
            for j in 0..d {
                c.absorb(est.a()[lag][(i, j)] != 0.0, truth.a()[lag][(i, j)] != 0.0);
            }
        }
        inter.push(c);
    }
    Ok((intra, inter))
}

fn rates(total: PairCounts) -> (f64, f64, f64) {
    let tp = total.true_pos as f64;
    let fp = total.false_pos as f64;
    let fnn = total.false_neg as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Pooled precision, recall and F1 over intra and inter edges, direction-
/// and lag-exact. Degenerate 0/0 ratios are 0 by convention.
pub fn precision_recall_f1(est: &DbnGraph, truth: &DbnGraph) -> Result<(f64, f64, f64)> {
    let (intra, inter) = edge_counts(est, truth)?;
    Ok(rates(PairCounts::merged(
        std::iter::once(intra).chain(inter),
    )))
}

/// Geometric mean sqrt(precision * recall) over the pooled counts.
pub fn g_score(est: &DbnGraph, truth: &DbnGraph) -> Result<f64> {
    let (p, r, _) = precision_recall_f1(est, truth)?;
    Ok((p * r).sqrt())
}

/// Absolute difference of the unregularized fit terms of the two graphs on
/// the same panel. Regularization settings play no part by definition.
pub fn sigma_p(est: &DbnGraph, truth: &DbnGraph, panel: &TimeSeriesPanel) -> Result<f64> {
    check_shapes(est, truth)?;
    let zero_reg = RegMode::l1(0.0, 0.0);
    let fit_est = score(est, panel, zero_reg)?.fit;
    let fit_truth = score(truth, panel, zero_reg)?.fit;
    Ok((fit_est - fit_truth).abs())
}

/// Frobenius distance pooling the intra matrix and every lag matrix.
pub fn frobenius_distance(est: &DbnGraph, truth: &DbnGraph) -> Result<f64> {
    check_shapes(est, truth)?;
    let mut sq = 0.0;
    for (a, b) in est.w().iter().zip(truth.w().iter()) {
        sq += (a - b) * (a - b);
    }
    for lag in 0..est.p() {
        for (a, b) in est.a()[lag].iter().zip(truth.a()[lag].iter()) {
            sq += (a - b) * (a - b);
        }
    }
    Ok(sq.sqrt())
}

/// Full report for an estimate as-is (no thresholding beyond what the
/// caller already applied); `delta_used` records the caller's threshold.
pub fn metric_report(
    est: &DbnGraph,
    truth: &DbnGraph,
    panel: &TimeSeriesPanel,
    delta_used: f64,
) -> Result<MetricReport> {
    let (intra_counts, inter_counts) = edge_counts(est, truth)?;
    let (precision, recall, f1) = rates(PairCounts::merged(
        std::iter::once(intra_counts).chain(inter_counts.iter().copied()),
    ));
    Ok(MetricReport {
        shd: shd(est, truth)?,
        precision,
        recall,
        f1,
        g_score: (precision * recall).sqrt(),
        sigma_p: sigma_p(est, truth, panel)?,
        frobenius: frobenius_distance(est, truth)?,
        delta_used,
        intra_counts,
        inter_counts,
    })
}

/// 40 logarithmically spaced thresholds spanning [1e-3, 1], covering the
/// generator's weight scales with margin.
pub fn default_delta_grid() -> Vec<f64> {
    (0..40)
        .map(|k| 1e-3 * 1000f64.powf(k as f64 / 39.0))
        .collect()
}

/// Thresholds the estimate at every grid value and returns the threshold
/// maximizing F1 (ties resolved toward the smaller threshold) with its
/// full report. The grid must be nonempty and strictly ascending.
pub fn best_delta_sweep(
    est: &DbnGraph,
    truth: &DbnGraph,
    panel: &TimeSeriesPanel,
    delta_grid: &[f64],
) -> Result<(f64, MetricReport)> {
    if delta_grid.is_empty() {
        return Err(Error::Config("empty threshold grid".into()));
    }
    if delta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(
            "threshold grid must be strictly ascending".into(),
        ));
    }
    let mut best: Option<(f64, MetricReport)> = None;
    for &delta in delta_grid {
        let cut = threshold(est, delta);
        let report = metric_report(&cut, truth, panel, delta)?;
        if best.as_ref().map_or(true, |(_, b)| report.f1 > b.f1) {
            best = Some((delta, report));
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{lag_stack, simulate_from_inputs};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn graph_from(d: usize, p: usize, intra: &[(usize, usize)], inter: &[(usize, usize, usize)]) -> DbnGraph {
        let mut w = Array2::zeros((d, d));
        for &(i, j) in intra {
            w[(i, j)] = 1.0;
        }
        let mut a = vec![Array2::zeros((d, d)); p];
        for &(lag, i, j) in inter {
            a[lag - 1][(i, j)] = 1.0;
        }
        DbnGraph::new(w, a).unwrap()
    }

    fn noise_panel(d: usize, p: usize, n: usize, seed: u64) -> TimeSeriesPanel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series = Array2::from_shape_fn((n + p, d), |_| rng.random_range(-1.0..1.0));
        lag_stack(series.view(), p).unwrap()
    }

    #[test]
    fn shd_trivial_cases() {
        let truth = graph_from(3, 1, &[(0, 1)], &[(1, 2, 0)]);
        assert_eq!(shd(&truth, &truth).unwrap(), 0.0);

        // Missing intra edge: one full unit.
        let missing = graph_from(3, 1, &[], &[(1, 2, 0)]);
        assert_eq!(shd(&missing, &truth).unwrap(), 1.0);

        // Reversed intra edge: one unit total, 1.5 under the literal rule.
        let reversed = graph_from(3, 1, &[(1, 0)], &[(1, 2, 0)]);
        assert_eq!(shd(&reversed, &truth).unwrap(), 1.0);
        assert_eq!(shd_literal(&reversed, &truth).unwrap(), 1.5);
        assert_eq!(shd_literal(&truth, &reversed).unwrap(), 1.5);
    }

    #[test]
    fn shd_counts_inter_lags_separately() {
        // Same endpoints, wrong lag: one spurious + one missing edge.
        let truth = graph_from(2, 2, &[], &[(1, 0, 1)]);
        let est = graph_from(2, 2, &[], &[(2, 0, 1)]);
        assert_eq!(shd(&est, &truth).unwrap(), 2.0);
    }

    #[test]
    fn precision_recall_examples() {
        let truth = graph_from(4, 0, &[(0, 1), (1, 2), (2, 3), (0, 3)], &[]);
        // Three of four recovered plus two spurious edges: 3/5 and 3/4.
        let est = graph_from(4, 0, &[(0, 1), (1, 2), (2, 3), (3, 1), (0, 2)], &[]);
        let (p, r, f1) = precision_recall_f1(&est, &truth).unwrap();
        assert!((p - 0.6).abs() < 1e-15);
        assert!((r - 0.75).abs() < 1e-15);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((g_score(&est, &truth).unwrap() - 0.45f64.sqrt()).abs() < 1e-15);

        let empty = graph_from(4, 0, &[], &[]);
        assert_eq!(precision_recall_f1(&empty, &truth).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(g_score(&empty, &truth).unwrap(), 0.0);

        let perfect = precision_recall_f1(&truth, &truth).unwrap();
        assert_eq!(perfect, (1.0, 1.0, 1.0));
    }

    #[test]
    fn pooled_rates_mix_intra_and_inter() {
        let truth = graph_from(3, 1, &[(0, 1)], &[(1, 1, 2)]);
        let est = graph_from(3, 1, &[(0, 1)], &[(1, 2, 2)]);
        // TP 1 (intra), FP 1, FN 1 pooled across slices.
        let (p, r, _) = precision_recall_f1(&est, &truth).unwrap();
        assert_eq!((p, r), (0.5, 0.5));
        let (intra, inter) = edge_counts(&est, &truth).unwrap();
        assert_eq!(intra.true_pos, 1);
        assert_eq!(inter[0].false_pos, 1);
        assert_eq!(inter[0].false_neg, 1);
    }

    #[test]
    fn sigma_p_zero_on_equal_and_closed_form_on_perturbation() {
        // Noiseless data from a fixed graph; perturbing one weight by 0.1
        // raises the fit by exactly 0.01 * sum of the source column squares.
        let mut w = Array2::zeros((3, 3));
        w[(0, 1)] = 1.2;
        w[(1, 2)] = -0.7;
        let truth = DbnGraph::new(w, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let inputs = Array2::from_shape_fn((60, 3), |(_, j)| {
            if j == 0 {
                rng.random_range(-1.0..1.0)
            } else {
                0.0
            }
        });
        let series = simulate_from_inputs(&truth, inputs.view()).unwrap();
        let panel = lag_stack(series.view(), 0).unwrap();
        assert_eq!(sigma_p(&truth, &truth, &panel).unwrap(), 0.0);

        let mut w2 = truth.w().clone();
        w2[(0, 1)] += 0.1;
        let est = DbnGraph::new(w2, vec![]).unwrap();
        let col0_sq: f64 = panel.x.column(0).iter().map(|v| v * v).sum();
        let expected = 0.01 * col0_sq;
        let got = sigma_p(&est, &truth, &panel).unwrap();
        assert!(
            (got - expected).abs() <= 1e-9 * expected.max(1.0),
            "sigma_p {} vs closed form {}",
            got,
            expected
        );
    }

    #[test]
    fn frobenius_examples() {
        let truth = graph_from(3, 1, &[(0, 1)], &[]);
        assert_eq!(frobenius_distance(&truth, &truth).unwrap(), 0.0);

        let mut w = truth.w().clone();
        w[(2, 0)] = 3.0;
        let single = DbnGraph::new(w, truth.a().to_vec()).unwrap();
        assert_eq!(frobenius_distance(&single, &truth).unwrap(), 3.0);

        let mut w = truth.w().clone();
        w[(2, 0)] = 3.0;
        let mut a = truth.a().to_vec();
        a[0][(1, 1)] = 4.0;
        let double = DbnGraph::new(w, a).unwrap();
        assert_eq!(frobenius_distance(&double, &truth).unwrap(), 5.0);
    }

    #[test]
    fn sweep_trivial_cases() {
        let truth = graph_from(3, 1, &[(0, 1), (1, 2)], &[(1, 0, 2)]);
        let panel = noise_panel(3, 1, 50, 1);
        let grid = default_delta_grid();
        let (delta, report) = best_delta_sweep(&truth, &truth, &panel, &grid).unwrap();
        assert_eq!(delta, grid[0]);
        assert_eq!(report.f1, 1.0);
        assert_eq!(report.shd, 0.0);

        // A spurious weight 0.01 edge is pruned at 0.05 but not at 0.005.
        let mut w = truth.w().clone();
        w[(2, 0)] = 0.01;
        let est = DbnGraph::new(w, truth.a().to_vec()).unwrap();
        let (delta, report) = best_delta_sweep(&est, &truth, &panel, &[0.005, 0.05]).unwrap();
        assert_eq!(delta, 0.05);
        assert_eq!(report.f1, 1.0);

        // All-zero truth: every threshold gives F1 = 0, ties resolve to the
        // smallest grid point.
        let zero = graph_from(3, 1, &[], &[]);
        let noisy = graph_from(3, 1, &[(0, 1)], &[(1, 1, 0)]);
        let (delta, report) = best_delta_sweep(&noisy, &zero, &panel, &[0.1, 0.5]).unwrap();
        assert_eq!(delta, 0.1);
        assert_eq!(report.f1, 0.0);
        assert_eq!(report.precision, 0.0);
    }

    #[test]
    fn sweep_rejects_bad_grids() {
        let g = graph_from(2, 0, &[], &[]);
        let panel = noise_panel(2, 0, 10, 2);
        assert!(best_delta_sweep(&g, &g, &panel, &[]).is_err());
        assert!(best_delta_sweep(&g, &g, &panel, &[0.5, 0.5]).is_err());
        assert!(best_delta_sweep(&g, &g, &panel, &[0.5, 0.1]).is_err());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = graph_from(3, 1, &[], &[]);
        let b = graph_from(3, 2, &[], &[]);
        assert!(shd(&a, &b).is_err());
        assert!(precision_recall_f1(&a, &b).is_err());
        assert!(frobenius_distance(&a, &b).is_err());
    }

    /// Random sparse graph pair on up to 5 vertices, p in {0,1,2}.
    fn arb_graph_pair() -> impl Strategy<Value = (DbnGraph, DbnGraph)> {
        (2usize..6, 0usize..3).prop_flat_map(|(d, p)| {
            let cells = d * d;
            let masks = proptest::collection::vec(0u8..4, cells * (p + 1) * 2);
            (Just(d), Just(p), masks).prop_map(|(d, p, masks)| {
                let build = |offset: usize| {
                    let mut w = Array2::zeros((d, d));
                    let mut a = vec![Array2::zeros((d, d)); p];
                    let mut idx = offset;
                    for i in 0..d {
                        for j in 0..d {
                            if i != j && masks[idx] == 1 {
                                w[(i, j)] = 0.5 + (idx % 7) as f64 * 0.25;
                            }
                            idx += 1;
                        }
                    }
                    for lag in 0..p {
                        for i in 0..d {
                            for j in 0..d {
                                if masks[idx] == 1 {
                                    a[lag][(i, j)] = 0.3 + (idx % 5) as f64 * 0.2;
                                }
                                idx += 1;
                            }
                        }
                    }
                    DbnGraph::new(w, a).unwrap()
                };
                (build(0), build(d * d * (p + 1)))
            })
        })
    }

    proptest! {
        #[test]
        fn f1_matches_harmonic_identity((est, truth) in arb_graph_pair()) {
            let (p, r, f1) = precision_recall_f1(&est, &truth).unwrap();
            if p + r > 0.0 {
                let identity = 2.0 * p * r / (p + r);
                prop_assert!((f1 - identity).abs() <= 1e-12);
            } else {
                prop_assert_eq!(f1, 0.0);
            }
        }

        #[test]
        fn shd_is_fp_plus_fn_without_reversals((est0, truth) in arb_graph_pair()) {
            // Clear the estimate side of any would-be reversal pattern.
            let mut w = est0.w().clone();
            let d = truth.d();
            for i in 0..d {
                for j in 0..d {
                    if i != j
                        && w[(i, j)] != 0.0
                        && truth.w()[(i, j)] == 0.0
                        && truth.w()[(j, i)] != 0.0
                        && w[(j, i)] == 0.0
                    {
                        w[(i, j)] = 0.0;
                    }
                }
            }
            let est = DbnGraph::new(w, est0.a().to_vec()).unwrap();
            let (intra, inter) = edge_counts(&est, &truth).unwrap();
            let total = PairCounts::merged(std::iter::once(intra).chain(inter));
            let expected = (total.false_pos + total.false_neg) as f64;
            prop_assert_eq!(shd(&est, &truth).unwrap(), expected);
        }

        #[test]
        fn shd_symmetric((est, truth) in arb_graph_pair()) {
            prop_assert_eq!(shd(&est, &truth).unwrap(), shd(&truth, &est).unwrap());
        }

        #[test]
        fn metrics_invariant_under_relabeling((est, truth) in arb_graph_pair()) {
            let d = truth.d();
            let p = truth.p();
            // A fixed nontrivial permutation: rotate labels by one.
            let perm: Vec<usize> = (0..d).map(|i| (i + 1) % d).collect();
            let relabel = |g: &DbnGraph| {
                let mut w = Array2::zeros((d, d));
                let mut a = vec![Array2::zeros((d, d)); p];
                for i in 0..d {
                    for j in 0..d {
                        w[(perm[i], perm[j])] = g.w()[(i, j)];
                        for lag in 0..p {
                            a[lag][(perm[i], perm[j])] = g.a()[lag][(i, j)];
                        }
                    }
                }
                DbnGraph::new(w, a).unwrap()
            };
            let panel = noise_panel(d, p, 30, 7);
            let mut x = Array2::zeros((panel.n, d));
            let mut y = Array2::zeros((panel.n, p * d));
            for row in 0..panel.n {
                for i in 0..d {
                    x[(row, perm[i])] = panel.x[(row, i)];
                    for lag in 0..p {
                        y[(row, lag * d + perm[i])] = panel.y[(row, lag * d + i)];
                    }
                }
            }
            let mut panel_perm = panel.clone();
            panel_perm.x = x;
            panel_perm.y = y;

            let (est2, truth2) = (relabel(&est), relabel(&truth));
            let r1 = metric_report(&est, &truth, &panel, 0.0).unwrap();
            let r2 = metric_report(&est2, &truth2, &panel_perm, 0.0).unwrap();
            prop_assert_eq!(r1.shd, r2.shd);
            prop_assert_eq!(r1.precision, r2.precision);
            prop_assert_eq!(r1.recall, r2.recall);
            prop_assert_eq!(r1.f1, r2.f1);
            prop_assert!((r1.sigma_p - r2.sigma_p).abs() <= 1e-9 * r1.sigma_p.abs().max(1.0));
            prop_assert!((r1.frobenius - r2.frobenius).abs() <= 1e-12);
        }

        #[test]
        fn sweep_dominates_every_grid_point((est, truth) in arb_graph_pair()) {
            let d = truth.d();
            let p = truth.p();
            let panel = noise_panel(d, p, 25, 3);
            let grid = [0.01, 0.1, 0.4, 0.9];
            let (_, best) = best_delta_sweep(&est, &truth, &panel, &grid).unwrap();
            for &delta in &grid {
                let cut = threshold(&est, delta);
                let (_, _, f1) = precision_recall_f1(&cut, &truth).unwrap();
                prop_assert!(best.f1 >= f1 - 1e-15);
            }
        }
    }
}

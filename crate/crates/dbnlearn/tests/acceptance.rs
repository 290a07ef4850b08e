//! Product-level acceptance gate. Each test checks one externally stated
//! guarantee at its stated tolerance and prints a single PASS/FAIL line
//! with the measured numbers (run with --nocapture to see PASS lines).
//!
//! The tests serialize through one mutex: several are wall-clock budgeted
//! and must not share the CPU with each other.

use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use ndarray::Array2;

use dbnlearn::bench::{run_experiment, ExperimentConfig};
use dbnlearn::datagen::{
    self, generate_ground_truth, simulate, stable_seeds, GenConfig, IntraModel, NoiseSpec,
};
use dbnlearn::graph::{is_acyclic, DbnGraph};
use dbnlearn::metrics::{
    best_delta_sweep, default_delta_grid, edge_counts, g_score, precision_recall_f1, shd,
};
use dbnlearn::objective::{build_instance, score, BigM, RegMode};
use dbnlearn::oracle::exhaustive_min;
use dbnlearn::solver::{solve, CutStrategy, SolveReport, SolveStatus, SolverConfig};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Runs one criterion and prints its verdict line before propagating any
/// failure, so the transcript always carries one line per criterion.
fn criterion(name: &str, check: impl FnOnce() -> Result<String, String>) {
    let _guard = serial();
    let started = Instant::now();
    match check() {
        Ok(detail) => println!("PASS {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64()),
        Err(detail) => {
            println!("FAIL {name}: {detail} [{:.1}s]", started.elapsed().as_secs_f64());
            panic!("{name}: {detail}");
        }
    }
}

/// Shared invariant asserted on every solve in this suite: intra support
/// acyclic, dual bound non-decreasing, incumbent non-increasing, and a
/// certified gap whenever the solver claims optimality.
fn check_solve_discipline(report: &SolveReport, tag: &str) -> Result<(), String> {
    if !is_acyclic(&report.incumbent.intra_support()) {
        return Err(format!("{tag}: incumbent intra support has a cycle"));
    }
    if report.bound_history.windows(2).any(|w| w[1] < w[0] - 1e-12) {
        return Err(format!("{tag}: best_bound decreased"));
    }
    if report
        .incumbent_history
        .windows(2)
        .any(|w| w[1] > w[0] + 1e-12)
    {
        return Err(format!("{tag}: incumbent objective increased"));
    }
    if report.status == SolveStatus::Optimal && report.mip_gap > report.config.gap_tolerance {
        return Err(format!(
            "{tag}: claimed optimal with gap {:.3e} > tolerance {:.3e}",
            report.mip_gap, report.config.gap_tolerance
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared d = 10 noisy-recovery suite (two criteria read from it).

struct NoisySuiteRow {
    seed: u64,
    f1: f64,
    g: f64,
    shd: f64,
    cuts_added: usize,
    nodes: usize,
    status: SolveStatus,
    wall: f64,
    discipline: Result<(), String>,
}

static NOISY_SUITE: OnceLock<Vec<NoisySuiteRow>> = OnceLock::new();

/// d = 10, intra ratio 3, inter ratio 1, sigma = 1, n = 1000, first ten
/// stable seeds, 60 s per instance (far below the 7200 s allowance —
/// TIME_LIMIT incumbents are acceptable, quality is what is scored).
fn noisy_suite() -> &'static Vec<NoisySuiteRow> {
    NOISY_SUITE.get_or_init(|| {
        let mut template = GenConfig::new(10, 1, IntraModel::Er, 3.0, 1.0, 1, 1000);
        template.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let seeds = stable_seeds(&template, 10).expect("stable seeds for d=10");
        let mut scfg = SolverConfig::default();
        scfg.time_limit = 60.0;
        let reg = RegMode::l2_squared(0.5, 0.5);
        let grid = default_delta_grid();

        seeds
            .into_iter()
            .map(|seed| {
                let mut cfg = template.clone();
                cfg.seed = seed;
                let truth = generate_ground_truth(&cfg).expect("stable seed generates");
                let panel = simulate(&truth, &cfg).expect("stable seed simulates");
                let inst = build_instance(&panel, reg, BigM::Auto).expect("instance");
                let report = solve(&inst, scfg).expect("solve");
                let (_, m) =
                    best_delta_sweep(&report.incumbent, &truth, &panel, &grid).expect("sweep");
                let thresholded = dbnlearn::graph::threshold(
                    &report.incumbent,
                    m.delta_used.max(f64::MIN_POSITIVE),
                );
                let g = g_score(&thresholded, &truth).expect("g score");
                NoisySuiteRow {
                    seed,
                    f1: m.f1,
                    g,
                    shd: m.shd,
                    cuts_added: report.cuts_added,
                    nodes: report.nodes_explored,
                    status: report.status,
                    wall: report.wall_time,
                    discipline: check_solve_discipline(&report, &format!("d10 seed {seed}")),
                }
            })
            .collect()
    })
}

// ---------------------------------------------------------------------------

#[test]
fn oracle_equivalence_on_small_instances() {
    criterion("oracle equivalence (>=50 instances, d<=4, p<=2, both penalties, all cut strategies)", || {
        let regs = [RegMode::l1(0.05, 0.05), RegMode::l2_squared(0.2, 0.2)];
        let cuts = [
            CutStrategy::FirstCycle,
            CutStrategy::ShortestCycle,
            CutStrategy::AllCycles,
        ];
        let mut instances = 0usize;
        let mut worst_rel = 0.0f64;
        for i in 0..54usize {
            let d = [2usize, 3, 4][i % 3];
            let p = [1usize, 2][(i / 3) % 2];
            let reg = regs[(i / 6) % 2];
            let cut = cuts[(i / 12) % 3];
            // d = 2 has a single intra pair; a lower ratio keeps instances
            // from all being the complete graph.
            let intra_ratio = if d == 2 { 0.5 } else { 1.0 };
            let mut gen = GenConfig::new(d, p, IntraModel::Er, intra_ratio, 0.7, 1000 + i as u64, 200);
            gen.noise = NoiseSpec::Gaussian { sigma: 0.5 };
            gen.seed = stable_seeds(&gen, 1).map_err(|e| e.to_string())?[0];
            let truth = generate_ground_truth(&gen).map_err(|e| e.to_string())?;
            let panel = simulate(&truth, &gen).map_err(|e| e.to_string())?;
            let inst =
                build_instance(&panel, reg, BigM::Fixed(10.0)).map_err(|e| e.to_string())?;

            let mut scfg = SolverConfig::default();
            scfg.cut_strategy = cut;
            scfg.time_limit = 120.0;
            let report = solve(&inst, scfg).map_err(|e| e.to_string())?;
            check_solve_discipline(&report, &format!("instance {i}"))?;
            let oracle = exhaustive_min(&inst, 4).map_err(|e| e.to_string())?;

            let rel = (report.incumbent_objective - oracle.best_objective).abs()
                / oracle.best_objective.abs().max(1.0);
            worst_rel = worst_rel.max(rel);
            if rel > 1e-6 {
                return Err(format!(
                    "instance {i} (d={d}, p={p}, {}, {:?}): solver {:.9} vs oracle {:.9}, relative error {:.3e} > 1e-6",
                    reg.variant.name(), cut, report.incumbent_objective, oracle.best_objective, rel
                ));
            }
            instances += 1;
        }
        Ok(format!(
            "{instances}/54 instances matched the brute-force optimum; worst relative error {worst_rel:.3e} <= 1e-6"
        ))
    });
}

#[test]
fn acyclicity_of_every_incumbent() {
    criterion("acyclicity of every accepted incumbent (zero tolerance)", || {
        let mut checked = 0usize;
        // Mixed small sweep, including deliberately under-budgeted solves
        // whose incumbents come from heuristics rather than proved leaves.
        for i in 0..12usize {
            let d = [4usize, 5, 6, 8][i % 4];
            let mut gen = GenConfig::new(d, 1, IntraModel::Er, 1.5, 1.0, 300 + i as u64, 300);
            gen.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            gen.seed = stable_seeds(&gen, 1).map_err(|e| e.to_string())?[0];
            let truth = generate_ground_truth(&gen).map_err(|e| e.to_string())?;
            let panel = simulate(&truth, &gen).map_err(|e| e.to_string())?;
            let inst = build_instance(&panel, RegMode::l1(0.1, 0.1), BigM::Auto)
                .map_err(|e| e.to_string())?;
            let mut scfg = SolverConfig::default();
            scfg.time_limit = if d >= 6 { 2.0 } else { 30.0 };
            let report = solve(&inst, scfg).map_err(|e| e.to_string())?;
            if !is_acyclic(&report.incumbent.intra_support()) {
                return Err(format!("sweep solve {i} (d={d}) returned a cyclic incumbent"));
            }
            checked += 1;
        }
        // The noisy recovery suite's incumbents count too.
        for row in noisy_suite() {
            row.discipline.clone()?;
            checked += 1;
        }
        Ok(format!("{checked} incumbents, all with acyclic intra support"))
    });
}

#[test]
fn noiseless_recovery_d6() {
    criterion("noiseless recovery (d=6, sigma=0.01, n=1000: exact graph on >=9/10 seeds, <60s each)", || {
        let mut template = GenConfig::new(6, 1, IntraModel::Er, 1.0, 1.0, 1, 1000);
        template.noise = NoiseSpec::Gaussian { sigma: 0.01 };
        let seeds = stable_seeds(&template, 10).map_err(|e| e.to_string())?;
        // Near-noiseless data sits at the innovation scale, so the whole fit
        // term is O(n sigma^2): the penalty must sit well below that or it
        // decides the structure instead of the data. The data-driven big-M
        // floors at 1.0, below the generator's top weight magnitude of 2, so
        // a fixed bound covering the band is used here.
        let reg = RegMode::l1(0.002, 0.002);
        let grid = default_delta_grid();
        let mut exact = 0usize;
        let mut slowest = 0.0f64;
        let mut failures = Vec::new();
        let mut scfg = SolverConfig::default();
        scfg.time_limit = 55.0;
        for &seed in &seeds {
            let mut cfg = template.clone();
            cfg.seed = seed;
            let truth = generate_ground_truth(&cfg).map_err(|e| e.to_string())?;
            let panel = simulate(&truth, &cfg).map_err(|e| e.to_string())?;
            let inst =
                build_instance(&panel, reg, BigM::Fixed(2.5)).map_err(|e| e.to_string())?;
            let started = Instant::now();
            let report = solve(&inst, scfg).map_err(|e| e.to_string())?;
            let wall = started.elapsed().as_secs_f64();
            slowest = slowest.max(wall);
            if wall >= 60.0 {
                return Err(format!("seed {seed} took {wall:.1}s >= 60s"));
            }
            check_solve_discipline(&report, &format!("d6 seed {seed}"))?;
            let (_, m) = best_delta_sweep(&report.incumbent, &truth, &panel, &grid)
                .map_err(|e| e.to_string())?;
            if m.shd == 0.0 && m.f1 == 1.0 {
                exact += 1;
            } else {
                failures.push(format!("seed {seed}: shd={} f1={:.4}", m.shd, m.f1));
            }
        }
        if exact < 9 {
            return Err(format!(
                "only {exact}/10 seeds recovered exactly ({})",
                failures.join("; ")
            ));
        }
        Ok(format!(
            "{exact}/10 seeds with SHD=0 and F1=1; slowest instance {slowest:.2}s < 60s"
        ))
    });
}

#[test]
fn noisy_recovery_d10() {
    criterion("noisy recovery (d=10, intra ratio 3, sigma=1, n=1000, 10 seeds: mean F1 >= 0.9, worst G deficit < 0.1)", || {
        let rows = noisy_suite();
        for row in rows {
            row.discipline.clone()?;
            if row.wall > 7200.0 {
                return Err(format!("seed {} exceeded the 7200s budget", row.seed));
            }
        }
        let mean_f1 = rows.iter().map(|r| r.f1).sum::<f64>() / rows.len() as f64;
        let mean_g = rows.iter().map(|r| r.g).sum::<f64>() / rows.len() as f64;
        let worst_g = rows.iter().map(|r| r.g).fold(f64::INFINITY, f64::min);
        let deficit = mean_g - worst_g;
        let per_seed: Vec<String> = rows
            .iter()
            .map(|r| {
                format!(
                    "{}: f1={:.3} shd={} nodes={} {}",
                    r.seed, r.f1, r.shd, r.nodes, r.status.name()
                )
            })
            .collect();
        if mean_f1 < 0.9 {
            return Err(format!(
                "mean F1 {mean_f1:.4} < 0.9 (per seed {})",
                per_seed.join(", ")
            ));
        }
        if deficit >= 0.1 {
            return Err(format!(
                "worst-seed G deficit {deficit:.4} >= 0.1 (mean G {mean_g:.4}, worst {worst_g:.4})"
            ));
        }
        Ok(format!(
            "mean F1 {mean_f1:.4} >= 0.9; worst-seed G deficit {deficit:.4} < 0.1 (mean G {mean_g:.4}, worst {worst_g:.4})"
        ))
    });
}

#[test]
fn cut_parsimony_d10() {
    criterion("cut parsimony (d=10 suite: cuts added per solve < 1000, vs exact short-cycle count)", || {
        // Exact count of directed simple cycles of length <= 3 on the
        // complete digraph: C(10,2) two-cycles plus 2*C(10,3) triangles.
        let d = 10u64;
        let two_cycles = d * (d - 1) / 2;
        let triangles = 2 * (d * (d - 1) * (d - 2) / 6);
        let short_cycles = two_cycles + triangles;
        assert_eq!(short_cycles, 285);
        // The full lazily-avoided family (all lengths), for scale.
        let all_cycles: f64 = (2..=10u32)
            .map(|k| {
                let choose = (0..k).fold(1f64, |acc, j| acc * (10 - j) as f64)
                    / (1..=k).fold(1f64, |acc, j| acc * j as f64);
                let rotations = (1..k).fold(1f64, |acc, j| acc * j as f64);
                choose * rotations
            })
            .sum();

        let rows = noisy_suite();
        let max_cuts = rows.iter().map(|r| r.cuts_added).max().unwrap_or(0);
        for row in rows {
            if row.cuts_added >= 1000 {
                return Err(format!(
                    "seed {}: {} cuts added >= 1000",
                    row.seed, row.cuts_added
                ));
            }
        }
        Ok(format!(
            "max cuts per solve {max_cuts} < 1000; compare {short_cycles} simple cycles of length <= 3 and {all_cycles:.3e} total cycle constraints lazily avoided"
        ))
    });
}

#[test]
fn bound_and_gap_discipline_with_hard_capped_instance() {
    criterion("bound/gap discipline and time-capped hard instance (d=20, 60s: finite gap, feasible incumbent)", || {
        // Monotonicity and certified-gap checks run inside every suite via
        // check_solve_discipline; here the deliberately hard instance.
        let mut gen = GenConfig::new(20, 1, IntraModel::Er, 3.0, 1.0, 8, 1000);
        gen.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        gen.seed = stable_seeds(&gen, 1).map_err(|e| e.to_string())?[0];
        let truth = generate_ground_truth(&gen).map_err(|e| e.to_string())?;
        let panel = simulate(&truth, &gen).map_err(|e| e.to_string())?;
        let inst = build_instance(&panel, RegMode::l2_squared(0.5, 0.5), BigM::Auto)
            .map_err(|e| e.to_string())?;
        let mut scfg = SolverConfig::default();
        scfg.time_limit = 60.0;
        let report = solve(&inst, scfg).map_err(|e| e.to_string())?;
        check_solve_discipline(&report, "d20 capped")?;

        if !report.mip_gap.is_finite() {
            return Err(format!("gap {} is not finite", report.mip_gap));
        }
        if !report.incumbent_objective.is_finite() {
            return Err("no finite incumbent at the cap".into());
        }
        // Feasibility: weights inside the linking box, intra diagonal zero
        // (acyclicity already checked above).
        let c = report.big_m;
        let w = report.incumbent.w();
        for i in 0..20 {
            for j in 0..20 {
                if w[(i, j)].abs() > c + 1e-9 {
                    return Err(format!("w[({i},{j})] = {} escapes the box {c}", w[(i, j)]));
                }
            }
        }
        for a in report.incumbent.a() {
            for v in a.iter() {
                if v.abs() > c + 1e-9 {
                    return Err(format!("inter weight {v} escapes the box {c}"));
                }
            }
        }
        let verified = score(&report.incumbent, &panel, report.reg)
            .map_err(|e| e.to_string())?
            .total;
        if (verified - report.incumbent_objective).abs()
            > 1e-7 * report.incumbent_objective.abs().max(1.0)
        {
            return Err(format!(
                "incumbent objective {:.6} does not re-score ({verified:.6})",
                report.incumbent_objective
            ));
        }
        Ok(format!(
            "d20 at 60s: status {}, finite gap {:.3}, feasible incumbent objective {:.2} re-scored exactly; bound/incumbent monotone on all suite solves",
            report.status.name(), report.mip_gap, report.incumbent_objective
        ))
    });
}

#[test]
fn metric_identities_and_examples() {
    criterion("metric unit identities (exact examples, F1 harmonic identity to 1e-12, SHD=FP+FN reversal-free)", || {
        let g = |entries: &[(usize, usize, f64)]| -> DbnGraph {
            let mut w = Array2::zeros((4, 4));
            for &(i, j, v) in entries {
                w[(i, j)] = v;
            }
            DbnGraph::new(w, vec![]).unwrap()
        };

        // Reversal costs one unit split across the two ordered slots.
        let truth = g(&[(0, 1, 1.0)]);
        let est = g(&[(1, 0, 1.0)]);
        let s = shd(&est, &truth).map_err(|e| e.to_string())?;
        if s != 1.0 {
            return Err(format!("reversal SHD {s} != 1"));
        }

        // Classic confusion example: TP=3, FP=2, FN=1.
        let truth = g(&[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 2, 1.0)]);
        let est = g(&[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 3, 1.0), (2, 3, 1.0)]);
        let (p, r, f1) = precision_recall_f1(&est, &truth).map_err(|e| e.to_string())?;
        let gsc = g_score(&est, &truth).map_err(|e| e.to_string())?;
        if p != 0.6 || r != 0.75 {
            return Err(format!("precision/recall ({p}, {r}) != (0.6, 0.75)"));
        }
        if (f1 - 2.0 / 3.0).abs() > 1e-15 || (gsc - 0.45f64.sqrt()).abs() > 1e-15 {
            return Err(format!("f1 {f1} or g {gsc} off the exact values"));
        }

        // Harmonic-mean identity to 1e-12 across assorted pairs.
        let pairs = [
            (g(&[(0, 1, 1.0), (1, 2, 1.0)]), g(&[(0, 1, 1.0), (0, 2, 1.0)])),
            (g(&[]), g(&[(0, 1, 1.0)])),
            (g(&[(2, 3, 1.0)]), g(&[])),
            (g(&[]), g(&[])),
        ];
        for (est, truth) in &pairs {
            let (p, r, f1) = precision_recall_f1(est, truth).map_err(|e| e.to_string())?;
            let expect = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            if (f1 - expect).abs() > 1e-12 {
                return Err(format!("harmonic identity violated: f1 {f1} vs {expect}"));
            }
        }

        // Reversal-free disagreements: SHD collapses to FP + FN.
        let truth = g(&[(0, 1, 1.0), (1, 2, 1.0), (0, 3, 1.0)]);
        let est = g(&[(0, 1, 1.0), (2, 3, 1.0)]);
        let s = shd(&est, &truth).map_err(|e| e.to_string())?;
        let (intra, _) = edge_counts(&est, &truth).map_err(|e| e.to_string())?;
        if s != (intra.false_pos + intra.false_neg) as f64 {
            return Err(format!(
                "reversal-free SHD {s} != FP+FN = {}",
                intra.false_pos + intra.false_neg
            ));
        }

        // Wrong lag counts as one miss plus one false alarm.
        let lagged = |lag1: f64, lag2: f64| {
            let mut a1 = Array2::zeros((4, 4));
            let mut a2 = Array2::zeros((4, 4));
            a1[(0, 1)] = lag1;
            a2[(0, 1)] = lag2;
            DbnGraph::new(Array2::zeros((4, 4)), vec![a1, a2]).unwrap()
        };
        let s = shd(&lagged(0.0, 1.0), &lagged(1.0, 0.0)).map_err(|e| e.to_string())?;
        if s != 2.0 {
            return Err(format!("wrong-lag SHD {s} != 2"));
        }

        // Threshold sweep prunes a spurious weak edge.
        let truth = g(&[(0, 1, 1.0)]);
        let est = g(&[(0, 1, 1.0), (2, 3, 0.01)]);
        let mut cfg = GenConfig::new(4, 0, IntraModel::Er, 0.5, 0.0, 5, 50);
        cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        let panel = simulate(&truth, &cfg).map_err(|e| e.to_string())?;
        let (delta, m) =
            best_delta_sweep(&est, &truth, &panel, &default_delta_grid()).map_err(|e| e.to_string())?;
        if m.f1 != 1.0 || m.shd != 0.0 || delta <= 0.01 {
            return Err(format!(
                "sweep kept the spurious edge: delta {delta}, f1 {}, shd {}",
                m.f1, m.shd
            ));
        }

        Ok("reversal = 1, confusion example exact, harmonic identity <= 1e-12, reversal-free SHD = FP+FN, wrong lag = 2, sweep prunes weak spurious edge".into())
    });
}

#[test]
fn simulation_fidelity() {
    criterion("simulation fidelity (zero-noise residual <= 1e-10 relative; weight bands on 1e5 draws)", || {
        // Zero-noise trajectories from nonzero initial slices must satisfy
        // the structural equation to numerical precision. (A zero-noise run
        // from a zero state is identically zero, which proves nothing, so
        // the initial rows are drawn at random and innovations are zero.)
        use rand::{Rng, SeedableRng};
        let mut worst_rel = 0.0f64;
        for seed in 0..5u64 {
            let mut cfg = GenConfig::new(6, 2, IntraModel::Er, 1.0, 0.8, 40 + seed, 60);
            cfg.eta = 2.0;
            cfg.seed = stable_seeds(&cfg, 1).map_err(|e| e.to_string())?[0];
            let truth = generate_ground_truth(&cfg).map_err(|e| e.to_string())?;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut inputs = Array2::zeros((60, 6));
            for j in 0..6 {
                inputs[(0, j)] = rng.random_range(-1.0..1.0);
                inputs[(1, j)] = rng.random_range(-1.0..1.0);
            }
            let series = datagen::simulate_from_inputs(&truth, inputs.view())
                .map_err(|e| e.to_string())?;
            let panel = datagen::lag_stack(series.view(), 2).map_err(|e| e.to_string())?;
            let fit = score(&truth, &panel, RegMode::l1(0.0, 0.0))
                .map_err(|e| e.to_string())?
                .fit;
            let x_norm = panel.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if x_norm < 1e-6 {
                return Err(format!("seed {seed}: trajectory vanished, nothing to check"));
            }
            let rel = fit.sqrt() / x_norm;
            worst_rel = worst_rel.max(rel);
            if rel > 1e-10 {
                return Err(format!(
                    "seed {}: zero-noise relative residual {rel:.3e} > 1e-10",
                    cfg.seed
                ));
            }
        }

        // With noise on, the residual X - XW - YA must reproduce the
        // injected innovations exactly, not just something small.
        let mut worst_noise_rel = 0.0f64;
        for seed in 0..3u64 {
            let mut cfg = GenConfig::new(5, 1, IntraModel::Er, 1.0, 1.0, 70 + seed, 300);
            cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            cfg.seed = stable_seeds(&cfg, 1).map_err(|e| e.to_string())?[0];
            let truth = generate_ground_truth(&cfg).map_err(|e| e.to_string())?;
            let (series, z) =
                datagen::simulate_with_noise(&truth, &cfg).map_err(|e| e.to_string())?;
            let panel = datagen::lag_stack(series.view(), 1).map_err(|e| e.to_string())?;
            let resid = &panel.x - &panel.x.dot(truth.w()) - &panel.y.dot(&truth.a()[0]);
            let diff = (&resid - &z).iter().map(|v| v * v).sum::<f64>().sqrt();
            let x_norm = panel.x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = diff / x_norm.max(1e-300);
            worst_noise_rel = worst_noise_rel.max(rel);
            if rel > 1e-10 {
                return Err(format!(
                    "seed {}: residual does not reproduce the innovations (relative error {rel:.3e})",
                    cfg.seed
                ));
            }
        }

        // Sampled weights must stay inside the documented magnitude bands:
        // intra [0.5, 2), inter lag s [0.2, 0.5) / eta^(s-1).
        let eta = 2.0f64;
        let mut samples = 0usize;
        let mut seed = 0u64;
        while samples < 100_000 {
            let mut cfg = GenConfig::new(10, 2, IntraModel::Er, 3.0, 1.5, seed, 10);
            cfg.eta = eta;
            seed += 1;
            let truth = match generate_ground_truth(&cfg) {
                Ok(t) => t,
                Err(_) => continue,
            };
            for v in truth.w().iter().filter(|v| **v != 0.0) {
                let mag = v.abs();
                if !(0.5..2.0).contains(&mag) {
                    return Err(format!("intra weight {v} outside [0.5, 2)"));
                }
                samples += 1;
            }
            for (idx, a) in truth.a().iter().enumerate() {
                let alpha = 1.0 / eta.powi(idx as i32);
                let (lo, hi) = (0.2 * alpha, 0.5 * alpha);
                for v in a.iter().filter(|v| **v != 0.0) {
                    let mag = v.abs();
                    if mag < lo - 1e-12 || mag >= hi {
                        return Err(format!(
                            "lag-{} weight {v} outside [{lo}, {hi})",
                            idx + 1
                        ));
                    }
                    samples += 1;
                }
            }
        }
        Ok(format!(
            "worst zero-noise relative residual {worst_rel:.3e} <= 1e-10; noisy residual reproduces innovations to {worst_noise_rel:.3e}; {samples} weight draws all inside their bands"
        ))
    });
}

#[test]
fn benchmark_cell_determinism() {
    criterion("benchmark determinism (same cell twice, parallel_nodes=1: identical rows)", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let config_for = |sub: &str| {
            format!(
                r#"
[experiment]
ensemble = "ER1-1"
d_list = [4]
n_list = [200]
seeds = [1, 2]
sigma = 0.8
output_dir = "{}"
[solver]
time_limit = 60.0
parallel_nodes = 1
[reg]
mode = "l1"
lambda = 0.05
"#,
                dir.path().join(sub).display()
            )
        };
        let run = |sub: &str| -> Result<String, String> {
            let cfg = ExperimentConfig::from_toml_str(&config_for(sub)).map_err(|e| e.to_string())?;
            let summary = run_experiment(&cfg).map_err(|e| e.to_string())?;
            std::fs::read_to_string(&summary.rows_path).map_err(|e| e.to_string())
        };
        let rows_a = run("a")?;
        let rows_b = run("b")?;

        // Wall-clock time is physical, not algorithmic; every other column
        // must agree byte for byte. Mask the wall_time field (column 15).
        let mask = |text: &str| -> String {
            text.lines()
                .map(|line| {
                    let mut cells: Vec<&str> = line.split(',').collect();
                    if cells.len() > 14 && cells[0] != "config_hash" {
                        cells[14] = "<wall>";
                    }
                    cells.join(",")
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        if mask(&rows_a) != mask(&rows_b) {
            return Err(format!(
                "rows differ between identical runs:\n--- a\n{rows_a}\n--- b\n{rows_b}"
            ));
        }
        let lines = rows_a.lines().count();
        Ok(format!(
            "two runs produced identical rows ({} lines; wall-time column excluded as physical measurement)",
            lines - 1
        ))
    });
}

#[test]
fn real_data_shape_csv_path() {
    criterion("externally supplied CSV path (16 variables, ~4500 rows: load, fit, report gap)", || {
        // Synthetic stand-in with the shape of the licensed datasets that
        // cannot be bundled: 16 variables, ~4500 time steps.
        let mut gen = GenConfig::new(16, 1, IntraModel::Er, 1.0, 1.0, 11, 4500);
        gen.noise = NoiseSpec::Gaussian { sigma: 1.0 };
        gen.seed = stable_seeds(&gen, 1).map_err(|e| e.to_string())?[0];
        let truth = generate_ground_truth(&gen).map_err(|e| e.to_string())?;
        let series = datagen::simulate_series(&truth, &gen).map_err(|e| e.to_string())?;

        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let csv_path = dir.path().join("external.csv");
        let names = datagen::default_names(16);
        dbnlearn::bench::write_timeseries_csv(&csv_path, &names, series.view())
            .map_err(|e| e.to_string())?;

        let panel = dbnlearn::bench::load_timeseries_csv(&csv_path, 1).map_err(|e| e.to_string())?;
        if panel.d != 16 || panel.n != 4500 {
            return Err(format!("panel shape ({}, {}) != (4500 rows, 16 vars)", panel.n, panel.d));
        }

        let mut scfg = SolverConfig::default();
        scfg.time_limit = 90.0;
        let reg = dbnlearn::bench::default_reg_for(panel.n);
        let outcome = dbnlearn::bench::fit(
            &panel,
            &scfg,
            BigM::Auto,
            &dbnlearn::bench::RegSearch::Single(reg),
        )
        .map_err(|e| e.to_string())?;
        check_solve_discipline(&outcome.report, "csv fit")?;
        if !outcome.report.mip_gap.is_finite() {
            return Err("fit reported a non-finite gap".into());
        }
        let text = outcome.report.to_text();
        for key in ["status", "mip_gap", "gap_tolerance", "bigM"] {
            if !text.contains(key) {
                return Err(format!("report text is missing {key}"));
            }
        }
        Ok(format!(
            "loaded 4501x16 CSV, fit with {} in {:.1}s, status {}, gap {:.3e}",
            outcome.report.reg.variant.name(),
            outcome.report.wall_time,
            outcome.report.status.name(),
            outcome.report.mip_gap
        ))
    });
}

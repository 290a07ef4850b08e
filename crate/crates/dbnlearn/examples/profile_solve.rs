use dbnlearn::datagen::*;
use dbnlearn::objective::*;
use dbnlearn::solver::*;
use std::time::Instant;

fn run(tag: &str, inst: &MiqpInstance, scfg: SolverConfig) {
    let t = Instant::now();
    let report = solve(inst, scfg).unwrap();
    println!(
        "{tag}: wall {:.2}s nodes {} cuts {} obj {:.4} bound {:.4} gap {:.2e} status {}",
        t.elapsed().as_secs_f64(),
        report.nodes_explored,
        report.cuts_added,
        report.incumbent_objective,
        report.best_bound,
        report.mip_gap,
        report.status.name()
    );
}

/// Crude best-delta pooled F1 against the truth, for profiling only.
fn best_f1(est: &dbnlearn::graph::DbnGraph, truth: &dbnlearn::graph::DbnGraph) -> (f64, f64) {
    let d = truth.d();
    let mut best = (0.0f64, 0.0f64);
    for k in 0..40 {
        let delta = 1e-3 * (1000f64).powf(k as f64 / 39.0);
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fnn = 0.0;
        let mut check = |e: f64, t: f64| {
            let eh = e.abs() >= delta;
            let th = t != 0.0;
            match (eh, th) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fnn += 1.0,
                _ => {}
            }
        };
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    check(est.w()[(i, j)], truth.w()[(i, j)]);
                }
            }
        }
        for lag in 0..truth.p() {
            for i in 0..d {
                for j in 0..d {
                    check(est.a()[lag][(i, j)], truth.a()[lag][(i, j)]);
                }
            }
        }
        let prec = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let rec = if tp + fnn > 0.0 { tp / (tp + fnn) } else { 0.0 };
        let f1 = if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        };
        if f1 > best.1 {
            best = (delta, f1);
        }
    }
    best
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "d5".into());
    match which.as_str() {
        "d5" => {
            let mut cfg = GenConfig::new(5, 1, IntraModel::Er, 1.5, 1.0, 7, 200);
            cfg.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            let truth = generate_ground_truth(&cfg).unwrap();
            let panel = simulate(&truth, &cfg).unwrap();
            let inst = build_instance(&panel, RegMode::l1(1.0, 0.8), BigM::Fixed(10.0)).unwrap();
            run("d5 L1 fixedM", &inst, SolverConfig::default());
        }
        "d6" => {
            // Low-noise recovery instances: d=6, sigma=0.01, n=1000. The
            // whole fit term is O(n sigma^2) here, so the penalty has to be
            // tiny, and the AUTO big-M floor (1.0) would exclude the true
            // weights — hence the explicit box.
            let mut template = GenConfig::new(6, 1, IntraModel::Er, 1.0, 1.0, 1, 1000);
            template.noise = NoiseSpec::Gaussian { sigma: 0.01 };
            let seeds = stable_seeds(&template, 10).unwrap();
            println!("stable seeds: {seeds:?}");
            let mut scfg = SolverConfig::default();
            scfg.time_limit = 55.0;
            for seed in seeds {
                let mut cfg = template.clone();
                cfg.seed = seed;
                let truth = generate_ground_truth(&cfg).unwrap();
                let panel = simulate(&truth, &cfg).unwrap();
                let inst =
                    build_instance(&panel, RegMode::l1(0.002, 0.002), BigM::Fixed(2.5)).unwrap();
                let t = Instant::now();
                let report = solve(&inst, scfg).unwrap();
                let (delta, f1) = best_f1(&report.incumbent, &truth);
                println!(
                    "d6 seed {seed}: wall {:.2}s nodes {} cuts {} gap {:.2e} status {} best-delta {:.3} F1 {:.4}",
                    t.elapsed().as_secs_f64(),
                    report.nodes_explored,
                    report.cuts_added,
                    report.mip_gap,
                    report.status.name(),
                    delta,
                    f1
                );
            }
        }
        "d10" => {
            let which: usize = std::env::args()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            let mut template = GenConfig::new(10, 1, IntraModel::Er, 3.0, 1.0, 1, 1000);
            template.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            let seeds = stable_seeds(&template, 10).unwrap();
            println!("stable seeds: {seeds:?}");
            let mut cfg = template.clone();
            cfg.seed = seeds[which];
            let truth = generate_ground_truth(&cfg).unwrap();
            let panel = simulate(&truth, &cfg).unwrap();
            let lam = 0.5;
            let mut scfg = SolverConfig::default();
            scfg.time_limit = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(120.0);
            let lams: Vec<f64> = std::env::args()
                .nth(4)
                .map(|s| s.split(',').filter_map(|t| t.parse().ok()).collect())
                .unwrap_or_else(|| vec![lam]);
            for lam_k in lams {
                let inst =
                    build_instance(&panel, RegMode::l2_squared(lam_k, lam_k), BigM::Auto).unwrap();
                let t = Instant::now();
                let report = solve(&inst, scfg).unwrap();
                let (delta, f1) = best_f1(&report.incumbent, &truth);
                println!(
                    "d10 seed {} lam {:.2}: wall {:.1}s nodes {} cuts {} gap {:.2e} status {} best-delta {:.4} F1 {:.4}",
                    cfg.seed,
                    lam_k,
                    t.elapsed().as_secs_f64(),
                    report.nodes_explored,
                    report.cuts_added,
                    report.mip_gap,
                    report.status.name(),
                    delta,
                    f1
                );
            }
        }
        "d10all" => {
            let cap: f64 = std::env::args()
                .nth(2)
                .and_then(|s| s.parse().ok())
                .unwrap_or(60.0);
            let mut template = GenConfig::new(10, 1, IntraModel::Er, 3.0, 1.0, 1, 1000);
            template.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            let seeds = stable_seeds(&template, 10).unwrap();
            let lam: f64 = std::env::args()
                .nth(3)
                .and_then(|s| s.parse().ok())
                .unwrap_or(0.5);
            let mut f1s = Vec::new();
            for &seed in &seeds {
                let mut cfg = template.clone();
                cfg.seed = seed;
                let truth = generate_ground_truth(&cfg).unwrap();
                let panel = simulate(&truth, &cfg).unwrap();
                let inst =
                    build_instance(&panel, RegMode::l2_squared(lam, lam), BigM::Auto).unwrap();
                let mut scfg = SolverConfig::default();
                scfg.time_limit = cap;
                let t = Instant::now();
                let report = solve(&inst, scfg).unwrap();
                let (delta, f1) = best_f1(&report.incumbent, &truth);
                println!(
                    "d10 seed {}: wall {:.1}s gap {:.2e} {} delta {:.3} F1 {:.4}",
                    seed,
                    t.elapsed().as_secs_f64(),
                    report.mip_gap,
                    report.status.name(),
                    delta,
                    f1
                );
                f1s.push(f1);
            }
            let mean: f64 = f1s.iter().sum::<f64>() / f1s.len() as f64;
            let worst = f1s.iter().cloned().fold(f64::INFINITY, f64::min);
            println!("mean F1 {:.4} worst {:.4} deficit {:.4}", mean, worst, mean - worst);
        }
        "d20" => {
            let mut template = GenConfig::new(20, 1, IntraModel::Er, 3.0, 1.0, 1, 1000);
            template.noise = NoiseSpec::Gaussian { sigma: 1.0 };
            let seeds = stable_seeds(&template, 1).unwrap();
            let mut cfg = template.clone();
            cfg.seed = seeds[0];
            let truth = generate_ground_truth(&cfg).unwrap();
            let panel = simulate(&truth, &cfg).unwrap();
            let lam = 0.5;
            let inst = build_instance(&panel, RegMode::l2_squared(lam, lam), BigM::Auto).unwrap();
            let mut scfg = SolverConfig::default();
            scfg.time_limit = 60.0;
            run(&format!("d20 seed {} capped 60s", cfg.seed), &inst, scfg);
        }
        other => eprintln!("unknown profile {other}"),
    }
}

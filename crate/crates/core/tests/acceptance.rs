//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ladder_core::config::ExperimentConfig;
use ladder_core::report::{run_einstein, EinsteinReport};
use ladder_core::selftest::{
    check_derivatives, check_girsanov_enumeration, check_harmonicity, check_hitting_brackets, check_kernel_rows,
    check_network, check_ruin, check_sampler_exactness, CheckOutcome,
};
use ladder_core::stats::EstimateCI;

const SEED: u64 = 20240601;

struct Line {
    id: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    budget: Duration,
}

fn timed(id: &'static str, budget_s: u64, f: impl FnOnce() -> CheckOutcome) -> Line {
    let t = Instant::now();
    let c = f();
    Line {
        id,
        passed: c.passed,
        detail: format!("{}: {}", c.name, c.detail),
        elapsed: t.elapsed(),
        budget: Duration::from_secs(budget_s),
    }
}

fn ci(e: &EstimateCI) -> String {
    format!("{:.4} +- {:.4}", e.value, e.se)
}

fn pairwise_overlap(es: &[&EstimateCI]) -> bool {
    es.iter()
        .enumerate()
        .all(|(i, a)| es[i + 1..].iter().all(|b| a.overlaps(b)))
}

fn statistical(report: &EinsteinReport, elapsed: Duration) -> Vec<Line> {
    let s = &report.sigma;
    let pv = &s.path_variance;
    let line = |id, passed, detail: String, budget_s| Line {
        id,
        passed,
        detail,
        elapsed,
        budget: Duration::from_secs(budget_s),
    };
    let mut out = Vec::new();

    let v0 = &s.zero_bias_speed;
    let mut decades: Vec<&EstimateCI> = pv.checkpoints.iter().map(|(_, e)| e).collect();
    decades.push(&pv.sigma2);
    let c9 = v0.value.abs() <= 3.0 * v0.se && pairwise_overlap(&decades) && pv.ks_p_value > 1e-3;
    let dec: Vec<String> = pv
        .checkpoints
        .iter()
        .map(|(n, e)| format!("n={n}: {}", ci(e)))
        .collect();
    out.push(line(
        "C9",
        c9,
        format!(
            "v(0) = {}; Var/n {}, final {}; KS p = {:.3}",
            ci(v0),
            dec.join(", "),
            ci(&pv.sigma2),
            pv.ks_p_value
        ),
        300,
    ));

    let c10 = pairwise_overlap(&[&s.psi.s11, &s.psi.s12, &pv.sigma2]);
    out.push(line(
        "C10",
        c10,
        format!(
            "s11 {}, s12 {}, Var/n {}; kappa {:.5} +- {:.5} ({} envs, {} skipped)",
            ci(&s.psi.s11),
            ci(&s.psi.s12),
            ci(&pv.sigma2),
            s.kappa.kappa,
            s.kappa.se,
            s.psi.n_envs,
            s.psi.skipped
        ),
        600,
    ));

    let mut c11 = true;
    let mut d11 = Vec::new();
    for lambda in [0.2, 0.1] {
        match report.per_lambda.iter().find(|r| r.lambda == lambda) {
            Some(r) => {
                let direct = r.ratio;
                match (&r.ratio_regen, &r.girsanov) {
                    (Some(regen), Some(g)) => {
                        c11 &= pairwise_overlap(&[&direct, regen, &g.estimate]) && !g.degenerate;
                        d11.push(format!(
                            "lambda {lambda}: v/lambda direct {}, regen {}, girsanov {}",
                            ci(&direct),
                            ci(regen),
                            ci(&g.estimate)
                        ));
                    }
                    _ => {
                        c11 = false;
                        d11.push(format!("lambda {lambda}: missing estimator ({:?})", r.regen_note));
                    }
                }
            }
            None => {
                c11 = false;
                d11.push(format!("lambda {lambda}: not in grid"));
            }
        }
    }
    out.push(line("C11", c11, d11.join("; "), 600));

    let v = &report.verdict;
    let ratios: Vec<String> = report
        .per_lambda
        .iter()
        .map(|r| format!("{}: {}", r.lambda, ci(&r.ratio)))
        .collect();
    let z: Vec<String> = report
        .per_lambda
        .iter()
        .filter_map(|r| r.second_order.map(|c| format!("{:.2}", c.z)))
        .collect();
    out.push(line(
        "C12",
        v.passed,
        format!(
            "v/lambda {}; sigma2 {}; slope {:.3} +- {:.3}; smallest overlaps {}; second-order z [{}]",
            ratios.join(", "),
            ci(&pv.sigma2),
            v.trend_slope,
            v.trend_slope_se,
            v.smallest_overlaps_sigma,
            z.join(", ")
        ),
        1800,
    ));

    let mut c13 = true;
    let mut d13 = Vec::new();
    for lambda in [0.2, 0.1] {
        match report
            .tails
            .iter()
            .find(|(l, _)| *l == lambda)
            .and_then(|(_, t)| t.as_ref())
        {
            Some(t) => {
                let ok = t.c > 0.0 && t.fit.slope + 3.0 * t.fit.slope_se < 0.0 && t.lag2_corr.abs() <= 3.0 * t.corr_se;
                c13 &= ok;
                d13.push(format!(
                    "lambda {lambda}: {} gaps, slope {:.4} +- {:.1e}, c = {:.3}, lag-2 corr {:.4} (se {:.4})",
                    t.n_gaps, t.fit.slope, t.fit.slope_se, t.c, t.lag2_corr, t.corr_se
                ));
            }
            None => {
                c13 = false;
                d13.push(format!("lambda {lambda}: no tail diagnostic"));
            }
        }
    }
    out.push(line("C13", c13, d13.join("; "), 300));
    out
}

fn main() -> ExitCode {
    let mut lines = vec![
        timed("C1", 10, || check_kernel_rows(1000, SEED)),
        timed("C2", 10, || check_derivatives(10_000, SEED)),
        timed("C3", 120, || check_sampler_exactness(1_000_000, SEED)),
        timed("C4", 30, || check_network(1000, SEED)),
        timed("C5", 60, || check_harmonicity(100, 0.7, SEED)),
        timed("C6", 60, || check_girsanov_enumeration(20, 8, SEED)),
        timed("C7", 120, || check_hitting_brackets(100, SEED)),
        timed("C8", 5, || check_ruin(20)),
    ];
    let cfg = ExperimentConfig {
        seed: SEED,
        ..ExperimentConfig::default()
    };
    let t = Instant::now();
    match run_einstein(&cfg) {
        Ok(report) => lines.extend(statistical(&report, t.elapsed())),
        Err(e) => {
            for id in ["C9", "C10", "C11", "C12", "C13"] {
                lines.push(Line {
                    id,
                    passed: false,
                    detail: format!("experiment failed: {e}"),
                    elapsed: t.elapsed(),
                    budget: Duration::from_secs(1800),
                });
            }
        }
    }
    let mut all = true;
    for l in &lines {
        let ok = l.passed && l.elapsed <= l.budget;
        all &= ok;
        println!(
            "{} {:<4} [{:.1}s / {}s] {}",
            if ok { "PASS" } else { "FAIL" },
            l.id,
            l.elapsed.as_secs_f64(),
            l.budget.as_secs(),
            l.detail
        );
    }
    println!("acceptance: {}", if all { "all criteria passed" } else { "FAILURES" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

use ladder_core::corrector::{cocycle_check, cycle_increments, estimate_kappa, KappaEstimate};
use ladder_core::electrical::hitting_probability_exact;
use ladder_core::experiment::sample_pp_env;
use ladder_core::oracles::hitting_by_chain;
use ladder_core::percolation::{crossing_cluster, harvest_cycles, ConditionedSampler, Vertex};
use ladder_core::rng::stream_rng;
use ladder_core::stats::lag_correlation;
use ladder_core::walk::transition_row;
use proptest::prelude::*;

#[test]
fn laziness_invariance_on_sampled_envs() {
    let mut rng = stream_rng(11, 0);
    for (u, v, wx) in [(0, 4, 9), (0, 7, 12), (0, 3, 20)] {
        let sampler = ConditionedSampler::with_window(0.6, u - 5, wx + 5)
            .unwrap()
            .force_isolated_top(u)
            .unwrap()
            .force_isolated_top(v)
            .unwrap()
            .force_isolated_top(wx)
            .unwrap();
        for _ in 0..10 {
            let w = sampler.sample(&mut rng);
            for lambda in [0.0, 0.05, 0.3] {
                let a = hitting_by_chain(&w, lambda, u, v, wx).unwrap();
                let b = hitting_probability_exact(&w, lambda, u, v, wx).unwrap();
                assert!((a - b).abs() < 1e-10, "{lambda}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn cocycle_along_the_bottom_row() {
    let sampler = ConditionedSampler::new(0.7, 150, 150).unwrap();
    let mut rng = stream_rng(12, 0);
    let kappa = KappaEstimate::exact(1.03);
    let mut checked = 0;
    while checked < 5 {
        let w = sample_pp_env(&sampler, &mut rng).unwrap();
        let cluster = crossing_cluster(&w);
        let Some(u) = (3..20).map(|x| Vertex::new(x, 0)).find(|&u| cluster[w.index(u)]) else {
            continue;
        };
        let tests: Vec<Vertex> = (-15..15)
            .flat_map(|x| [Vertex::new(x, 0), Vertex::new(x, 1)])
            .filter(|&t| {
                let target = Vertex::new(u.x + t.x, t.y);
                cluster[w.index(target)]
            })
            .collect();
        match cocycle_check(&w, u, kappa, &tests, 10) {
            Ok(d) => {
                assert!(d < 1e-9, "cocycle defect {d}");
                checked += 1;
            }
            Err(_) => continue,
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Rows of the shifted environment are the shifted rows.
    #[test]
    fn shift_consistency(seed in any::<u64>(), ux in -20i64..20, uy in 0u8..2, lambda in 0.0f64..1.0) {
        let sampler = ConditionedSampler::new(0.6, 30, 30).unwrap();
        let w = sampler.sample(&mut stream_rng(seed, 0));
        let u = Vertex::new(ux, uy);
        let s = w.shifted(u);
        for x in -5..5 {
            for y in 0..2 {
                let v = Vertex::new(x, y);
                let orig = Vertex::new(u.x + x, (u.y + y) % 2);
                let a = transition_row(&s, lambda, v).unwrap();
                let b = transition_row(&w, lambda, orig).unwrap();
                prop_assert_eq!(a.len(), b.len());
                for ((ta, pa), (tb, pb)) in a.iter().zip(&b) {
                    let back = Vertex::new(ta.x + u.x, (ta.y + u.y) % 2);
                    prop_assert_eq!(back, *tb);
                    prop_assert!((pa - pb).abs() < 1e-15);
                }
            }
        }
    }
}

#[test]
fn cycle_increments_are_uncorrelated() {
    let cycles = harvest_cycles(0.7, 2000, 10, 20_000, &mut stream_rng(13, 0)).unwrap();
    let kappa = estimate_kappa(&cycles).unwrap();
    let eta = cycle_increments(&cycles, kappa.kappa);
    let mean = eta.iter().sum::<f64>() / eta.len() as f64;
    let sd = (eta.iter().map(|e| e * e).sum::<f64>() / eta.len() as f64).sqrt();
    assert!(mean.abs() < 4.0 * sd / (eta.len() as f64).sqrt());
    let (r1, se) = lag_correlation(&eta, 1);
    assert!(r1.abs() < 4.0 * se, "lag-1 correlation {r1} (se {se})");
}

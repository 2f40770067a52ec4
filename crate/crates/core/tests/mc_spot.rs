use margrisk::simulation::{run_monte_carlo, AnalysisOptions, ScenarioConfig};

#[test]
fn mc_spot_check() {
    let cfg = ScenarioConfig::scenario1(100).with_seed(2024);
    let opts = AnalysisOptions {
        time_points: vec![0.4],
        band_nsim: Some(500),
        ..AnalysisOptions::default()
    };
    let t0 = std::time::Instant::now();
    let summary = run_monte_carlo(&cfg, 200, &opts).unwrap();
    println!("elapsed {:?} failures {}", t0.elapsed(), summary.failures);
    for row in &summary.estimands {
        println!(
            "{} cause {} t {:?}: truth {:.4} bias {:+.4} mcsd {:.4} ase {:.4} cp {:.3}",
            row.estimand, row.cause, row.time, row.truth, row.bias, row.mcsd, row.ase, row.cp
        );
    }
    for b in &summary.bands {
        println!("band {} {:?}: coverage {:.3}", b.target, b.weight, b.coverage);
    }
}

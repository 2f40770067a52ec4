use margrisk::gof::gof_test;
use margrisk::missingness::{fit_missingness, DesignSpec, TimeTransform};
use margrisk::simulation::{generate_dataset_rep, ScenarioConfig};
use rayon::prelude::*;

fn rejection_rate(cfg: &ScenarioConfig, tt: TimeTransform, ntests: usize, nsim: usize) -> f64 {
    let design = DesignSpec {
        time_transform: tt,
        include_z: true,
        include_a: false,
    };
    let rejections: usize = (0..ntests)
        .into_par_iter()
        .map(|rep| {
            let data = generate_dataset_rep(cfg, rep as u64).unwrap();
            let m = fit_missingness(&data, &design).unwrap();
            let res = gof_test(&data, &m, 1, nsim, 1000 + rep as u64).unwrap();
            usize::from(res.p_value <= 0.05)
        })
        .sum();
    rejections as f64 / ntests as f64
}

#[test]
fn gof_size_decomposition() {
    let t0 = std::time::Instant::now();
    // exactly-correct design (scenario 2 truth is logit-linear in log T)
    let s = rejection_rate(&ScenarioConfig::scenario2(50).with_seed(31), TimeTransform::Log, 150, 400);
    println!("exact design, n=50: {s:.3}");
    let s = rejection_rate(&ScenarioConfig::scenario2(100).with_seed(32), TimeTransform::Log, 150, 400);
    println!("exact design, n=100: {s:.3}");
    // approximately-correct design (scenario 1 with identity time)
    let s = rejection_rate(&ScenarioConfig::scenario1(100).with_seed(33), TimeTransform::Identity, 150, 400);
    println!("approx design, n=100: {s:.3}");
    println!("elapsed {:?}", t0.elapsed());
}

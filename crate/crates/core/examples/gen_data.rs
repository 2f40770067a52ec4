fn main() {
    let cfg = margrisk::simulation::ScenarioConfig::scenario1(15).with_seed(42);
    let data = margrisk::simulation::generate_dataset(&cfg).unwrap();
    margrisk::write_csv(&data, "/tmp/demo.csv").unwrap();
    println!("{} clusters {} subjects", data.n_clusters(), data.n_subjects());
}

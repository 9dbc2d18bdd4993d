use latkit::pipeline::{parse_config, run_pipeline};
use latkit::synth::{paper_ablation_preset, write_fixture_tree};

#[test]
fn probe_full_ladder() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = std::time::Instant::now();
    write_fixture_tree(dir.path(), &paper_ablation_preset()).unwrap();
    eprintln!("fixture: {:?}", t0.elapsed());
    let text = std::fs::read_to_string(dir.path().join("pipeline.cfg")).unwrap();
    let cfg = parse_config(&text, dir.path()).unwrap();
    let t1 = std::time::Instant::now();
    let report = run_pipeline(&cfg).unwrap();
    eprintln!("ladder: {:?}", t1.elapsed());
    eprintln!("{}", report.render());
}

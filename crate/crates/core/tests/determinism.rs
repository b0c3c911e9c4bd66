use spdelab::config::ExperimentConfig;
use spdelab::runner::{run_with_threads, write_artifacts, Command};

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(include_str!("golden/small.toml")).unwrap()
}

#[test]
fn artifacts_are_identical_across_thread_counts() {
    let cfg = small();
    for c in [Command::Simulate, Command::Semigroup, Command::Gradient, Command::Resolvent, Command::Evolution, Command::Regularity] {
        let one = run_with_threads(c, &cfg, 1).unwrap();
        let eight = run_with_threads(c, &cfg, 8).unwrap();
        assert_eq!(one, eight, "{}", c.name());
    }
}

#[test]
fn written_files_are_byte_identical_on_rerun() {
    let cfg = small();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_artifacts(a.path(), &run_with_threads(Command::Gradient, &cfg, 3).unwrap()).unwrap();
    write_artifacts(b.path(), &run_with_threads(Command::Gradient, &cfg, 5).unwrap()).unwrap();
    for name in ["estimates.csv", "report.json", "summary.md"] {
        assert_eq!(std::fs::read(a.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_changes_the_artifacts() {
    let mut cfg = small();
    let a = run_with_threads(Command::Semigroup, &cfg, 2).unwrap();
    cfg.seed += 1;
    let b = run_with_threads(Command::Semigroup, &cfg, 2).unwrap();
    assert_ne!(a, b);
}

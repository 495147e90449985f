use std::path::Path;

use surgplan::harness::{train, RunConfig};
use surgplan::ppo::PpoConfig;

fn short_run(dir: &Path) -> RunConfig {
    RunConfig {
        seed: 7,
        total_timesteps: 2048,
        output_dir: dir.display().to_string(),
        ppo: PpoConfig {
            rollout_steps: 64,
            minibatch_size: 64,
            epochs: 2,
            ..PpoConfig::default()
        },
        ..RunConfig::default()
    }
}

#[test]
fn repeat_in_another_directory_matches_after_normalizing() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = train(&short_run(a.path()), a.path()).unwrap();
    let second = train(&short_run(b.path()), b.path()).unwrap();
    // the hash covers the embedded output_dir, so it differs with the directory
    assert_ne!(first.final_hash, second.final_hash);

    let read = |p: &Path, dir: &Path| {
        std::fs::read_to_string(p)
            .unwrap()
            .replace(&dir.display().to_string(), "<out>")
    };
    assert_eq!(
        read(&first.metrics_path, a.path()).replace(&first.final_hash, "<hash>"),
        read(&second.metrics_path, b.path()).replace(&second.final_hash, "<hash>")
    );
    assert_eq!(
        read(&first.final_checkpoint, a.path()),
        read(&second.final_checkpoint, b.path())
    );
    assert!(first.model.params().values_equal(second.model.params()));
}

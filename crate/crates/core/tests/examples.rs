//! Runs every example binary; each asserts its own expectations.

use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: &[&str] = &[
    "quickstart",
    "safety_audit",
    "linearizability",
    "bound_table",
    "sweep_tables",
    "epsilon_skew",
    "read_locality",
    "heartbeat_leader",
    "tightness",
];

fn examples_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent()
        .and_then(|deps| deps.parent())
        .unwrap()
        .join("examples")
}

#[test]
fn examples_run_cleanly() {
    let dir = examples_dir();
    for name in EXAMPLES {
        let bin = dir.join(format!("{name}{}", std::env::consts::EXE_SUFFIX));
        assert!(bin.exists(), "{} not built", bin.display());
        let out = Command::new(&bin)
            .env_remove("PLSIM_SEED")
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{name} failed:\n{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

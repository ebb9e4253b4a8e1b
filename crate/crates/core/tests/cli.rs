use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_invmeasure"))
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn identity_cell_passes() {
    let out = tempfile::tempdir().unwrap();
    let st = bin().args(["cell", "--config"]).arg(config("identity.toml")).arg("--out").arg(out.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert!(summary["schema_version"].is_string() || summary["schema_version"].is_number());
    assert!(summary["timing"]["total_seconds"].is_number());
}

#[test]
fn interface_refuses_normal_drift() {
    let out = tempfile::tempdir().unwrap();
    let st = bin().args(["interface", "--config"]).arg(config("normal-drift.toml")).arg("--out").arg(out.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&st.stderr).contains("b₁ ≡ 0"));
}

#[test]
fn unknown_key_names_key_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "[plus]\npreset = \"identity\"\n\n[grid]\ncel = 32\n").unwrap();
    let st = bin().args(["cell", "--config"]).arg(&path).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    let err = String::from_utf8_lossy(&st.stderr);
    assert!(err.contains("cel") && err.contains("line 5"), "{err}");
}

#[test]
fn missing_config_is_an_execution_error() {
    let st = bin().args(["cell", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
}

#[test]
fn bundled_all_passes_within_budget() {
    let out = tempfile::tempdir().unwrap();
    let t = std::time::Instant::now();
    let st = bin().args(["all", "--config"]).arg(config("bundled.toml")).arg("--out").arg(out.path()).output().unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(t.elapsed().as_secs() < 600);
    for f in ["summary.json", "slices.csv", "convergence.csv"] {
        assert!(out.path().join(f).is_file(), "{f}");
    }
}

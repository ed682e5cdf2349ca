use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 11

[data]
train_samples = 400
test_samples = 200

[model]
dims = [784, 24, 16, 10]
pretrain_epochs = 2
pretrain_lr = 0.05

[personalization]
samples = 300

[unlearning]
fraction = 0.05
samples = 200

[obs]
block_size = 16
"#;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edge-unlearn"))
        .args(args)
        .arg("--config")
        .arg(dir.join("run.toml"))
        .arg("--out-dir")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("{SMALL}{extra}")).unwrap();
    dir
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_accepts_and_tampering_rejects() {
    let dir = setup("");
    let o = bin(dir.path(), &["pipeline", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("ACCEPT"), "{text}");
    assert!(text.contains("After Adjustment"));
    let out = dir.path().join("out");
    for f in ["proof.uprf", "proof.json", "report.txt", "report.csv", "com_p_post.ucom"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("proof.json")).unwrap()).unwrap();
    assert_eq!(json["backend"], "merkle");

    assert_eq!(bin(dir.path(), &["verify"]).status.code(), Some(0));

    // flip a bit of the claimed post-update root
    let path = out.join("com_p_post.ucom");
    let mut bytes = fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(&path, bytes).unwrap();
    let o = bin(dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("REJECT"));
}

#[test]
fn stages_run_one_by_one_on_pedersen() {
    let dir = setup("\n[protocol]\nbackend = \"pedersen\"\n");
    for stage in ["pretrain", "personalize", "commit", "mask", "unlearn", "prove", "verify", "eval"] {
        let o = bin(dir.path(), &[stage]);
        assert_eq!(o.status.code(), Some(0), "{stage}: {}", stderr(&o));
    }
    let out = dir.path().join("out");
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);

    // a proof checked against a different mask is rejected, not an error
    let mask = fs::read(out.join("mask.umsk")).unwrap();
    let o = bin(dir.path(), &["mask", "--set", "unlearning.fraction=0.1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(fs::read(out.join("mask.umsk")).unwrap(), mask);
    let o = bin(dir.path(), &["verify"]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
}

#[test]
fn missing_input_names_the_file() {
    let dir = setup("");
    for stage in ["pretrain", "personalize", "mask"] {
        assert_eq!(bin(dir.path(), &[stage]).status.code(), Some(0));
    }
    fs::remove_file(dir.path().join("out").join("fisher.ufsh")).unwrap();
    let o = bin(dir.path(), &["unlearn"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("unlearn") && err.contains("fisher.ufsh"), "{err}");
}

#[test]
fn config_errors_report_a_line() {
    let dir = setup("block_sise = 8\n");
    let o = bin(dir.path(), &["pretrain"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 22") && err.contains("block_sise"), "{err}");

    let dir = setup("");
    let o = bin(dir.path(), &["pretrain", "--set", "obs.block_size"]);
    assert_eq!(o.status.code(), Some(1));
    let o = bin(dir.path(), &["pretrain", "--backend", "groth16"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("out").exists());
}

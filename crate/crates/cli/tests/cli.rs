use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TOY: &str = r#"
seed = 3

[synth]
n_trajectories = 10
points = [10, 14]

[preprocess]
min_length = 8
split_ratios = [4, 2, 4]

[encoder]
d_l = 16
heads = 4
ffn_hidden = 32

[train]
batch_size = 4
max_epochs = 2
"#;

fn cstte(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cstte"))
        .args(args)
        .current_dir(cwd)
        .env_remove("CSTTE_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn text(out: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cstte(&["gradcheck"], dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().last() == Some("PASS"));
    assert!(stdout.contains("matmul") && stdout.contains("max rel err"));
}

#[test]
fn toy_pipeline_with_dtw_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    let run = ["-c", "toy.toml", "-o", "run"];
    for cmd in ["synth", "preprocess"] {
        let out = cstte(&[&[cmd][..], &run].concat(), dir.path());
        assert!(out.status.success(), "{cmd}: {}", text(&out));
    }
    let out = cstte(&[&["eval-search"][..], &run, &["--baseline", "dtw"]].concat(), dir.path());
    assert!(out.status.success(), "{}", text(&out));
    let kv = fs::read_to_string(dir.path().join("run/search_dtw.metrics")).unwrap();
    let fields = ["acc@1=", "acc@5=", "acc@10=", "acc@20=", "macro_f1="];
    assert!(fields.iter().all(|f| kv.lines().filter(|l| l.starts_with(f)).count() == 1), "{kv}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("wall time"));

    let missing = cstte(&[&["eval-search"][..], &run].concat(), dir.path());
    assert_eq!(missing.status.code(), Some(3));
    assert!(text(&missing).contains("checkpoint.bin"));

    let out = cstte(&[&["--deterministic", "pretrain"][..], &run].concat(), dir.path());
    assert!(out.status.success(), "{}", text(&out));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("epoch,train_loss,val_loss,seconds\n1,"));
    for cmd in [&["embed"][..], &["eval-search"], &["eval-dest"], &["eval-dest", "--baseline", "mc"]] {
        let out = cstte(&[cmd, &run].concat(), dir.path());
        assert!(out.status.success(), "{cmd:?}: {}", text(&out));
    }
    for f in ["config.toml", "train_log.csv", "checkpoint.toml", "embeddings.csv", "destination_cstte.metrics"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = 1\n\n[train]\nbatchsize = 8\n").unwrap();
    let out = cstte(&["synth", "-c", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = text(&out);
    assert!(msg.contains("batchsize") && msg.contains("line 4"), "{msg}");

    let out = cstte(&["eval-search", "--baseline", "rnn"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("toy.toml"), TOY).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_cstte"))
        .args(["synth", "-c", "toy.toml"])
        .current_dir(dir.path())
        .env("CSTTE_OUTPUT_ROOT", dir.path().join("root"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", text(&out));
    assert!(dir.path().join("root/toy/raw.csv").exists());
}

use std::fs;
use std::path::Path;

use cstte::config::RunConfig;
use cstte::exec;
use cstte::pipeline::{Embedder, Run};

fn tiny_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.synth.n_trajectories = 80;
    cfg.synth.points = [10, 14];
    cfg.preprocess.min_length = 8;
    cfg.encoder.d_l = 16;
    cfg.encoder.heads = 4;
    cfg.encoder.ffn_hidden = 32;
    cfg.train.batch_size = 16;
    cfg.train.max_epochs = 3;
    cfg.destination.max_epochs = 5;
    cfg
}

fn full_run(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let run = Run::new(tiny_config(), dir);
    run.synth().unwrap();
    run.preprocess().unwrap();
    run.pretrain(|_| {}).unwrap();
    run.embed(None).unwrap();
    for e in [Embedder::Checkpoint(None), Embedder::Dtw, Embedder::Mean, Embedder::Random] {
        run.eval_search(&e).unwrap();
    }
    for e in [Embedder::Checkpoint(None), Embedder::Mean, Embedder::MarkovChain] {
        run.eval_destination(&e).unwrap();
    }
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "metrics" || x == "bin" || x == "csv" && !p.ends_with("train_log.csv")))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn replay_gives_identical_outputs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let first = exec::with_threads(Some(1), || full_run(a.path()));
    let second = full_run(b.path());
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    assert!(names.contains(&"search_cstte.metrics") && names.contains(&"destination_mc.metrics"));
    assert!(names.contains(&"checkpoint.bin") && names.contains(&"embeddings.csv"));
    assert_eq!(first, second);
}

#[test]
fn search_report_has_five_metric_fields() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg.synth.n_trajectories = 10;
    cfg.preprocess.split_ratios = [4, 2, 4];
    let run = Run::new(cfg, dir.path());
    run.synth().unwrap();
    run.preprocess().unwrap();
    let report = run.eval_search(&Embedder::Dtw).unwrap();
    assert_eq!(report.metrics.queries, 4);
    let kv = fs::read_to_string(dir.path().join("search_dtw.metrics")).unwrap();
    for key in ["acc@1=", "acc@5=", "acc@10=", "acc@20=", "macro_f1="] {
        assert_eq!(kv.lines().filter(|l| l.starts_with(key)).count(), 1, "{key}");
    }
}

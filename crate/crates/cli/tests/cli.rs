use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use loster::dataio::{load_results, LABELS_FILE, RESULTS_FILE};
use loster::densenet::Checkpoint;
use serde_json::Value;

const SMALL: &[&str] = &[
    "--pretrain-epochs",
    "3",
    "--max-epochs",
    "3",
    "--latent-dim",
    "8",
    "--set",
    "n_blocks=1",
];

fn loster(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loster"))
        .args(args)
        .env_remove("LOSTER_OUT_DIR")
        .output()
        .expect("spawn loster")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, n: usize, seed: u64) -> String {
    let path = dir.join("blob.tsv");
    let p = path.to_str().unwrap().to_string();
    let o = loster(&["synth", "--k", "3", "--n", &n.to_string(), "--len", "32", "--seed", &seed.to_string(), "--out", &p]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

#[test]
fn synth_writes_ucr_rows() {
    let dir = tempfile::tempdir().unwrap();
    let p = synth(dir.path(), 4, 1);
    let text = fs::read_to_string(&p).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.len() == 33));
    let labels: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(labels, ["1", "1", "1", "1", "2", "2", "2", "2", "3", "3", "3", "3"]);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(format!("{p}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "synth");
    assert_eq!(manifest["seed"], 1);
}

#[test]
fn cluster_writes_results_labels_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 6, 2);
    let out = dir.path().join("run");
    let mut args = vec!["-q", "cluster", "--data", &data, "--seed", "5", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = loster(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("RI "));

    let run = load_results(&out.join(RESULTS_FILE)).unwrap();
    assert_eq!((run.n_series, run.series_len, run.k, run.seed), (18, 32, 3, 5));
    assert_eq!(run.labels.len(), 18);
    assert!(run.rand_index.is_some() && run.nmi.is_some());
    assert_eq!(run.config["latent_dim"], 8);
    assert_eq!(run.config["augment"]["seed"], 5);

    let csv = fs::read_to_string(out.join(LABELS_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 19);
    let log = fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(log.lines().count(), run.epochs.len() + 1);

    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "cluster");
    assert_eq!(m["seed"], 5);
    assert_eq!(m["threads"], 1);
    assert_eq!(m["cluster"]["k"], 3);
    assert_eq!(m["train"]["n_blocks"], 1);
    assert_eq!(m["dataset_paths"][0], data.as_str());
}

#[test]
fn identical_seeds_give_identical_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 5, 3);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["-q", "cluster", "--data", &data, "--seed", "11", "--out", out.to_str().unwrap()];
        args.extend_from_slice(SMALL);
        assert!(loster(&args).status.success());
        fs::read(out.join(LABELS_FILE)).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 4);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# small model\nlatent_dim = 4\nn_blocks = 1\npretrain_epochs = 2\nmax_epochs = 1\nk = 2\nwarp_sigma = 0.3\n").unwrap();
    let out = dir.path().join("run");
    let o = loster(&[
        "-q", "cluster", "--data", &data, "--config", cfg.to_str().unwrap(), "--latent-dim", "6",
        "--set", "augment.n_segments=3", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let run = load_results(&out.join(RESULTS_FILE)).unwrap();
    assert_eq!(run.k, 2);
    assert_eq!(run.config["latent_dim"], 6);
    assert_eq!(run.config["augment"]["warp_sigma"], 0.3);
    assert_eq!(run.config["augment"]["n_segments"], 3);
    let m: Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config_file"], cfg.to_str().unwrap());
}

#[test]
fn default_output_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 6);
    let root = dir.path().join("runs");
    let mut args = vec!["-q", "cluster", "--data", &data, "--seed", "2"];
    args.extend_from_slice(SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_loster"))
        .args(&args)
        .env("LOSTER_OUT_DIR", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("blob-cluster-seed2").join(RESULTS_FILE).is_file());
}

#[test]
fn pretrain_writes_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 4, 7);
    let out = dir.path().join("pre");
    let mut args = vec!["pretrain", "--data", &data, "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let o = loster(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    let ckpt = Checkpoint::load(out.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.views.len(), 2);
    assert_eq!(ckpt.views[0].centroids.shape(), (3, 8));
    let losses = fs::read_to_string(out.join("pretrain.csv")).unwrap();
    assert_eq!(losses.lines().count(), 4);
}

#[test]
fn eval_prints_metrics_for_label_files() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    let truth = dir.path().join("truth.txt");
    fs::write(&pred, "index,label\n0,1\n1,1\n2,0\n3,0\n").unwrap();
    fs::write(&truth, "a\na\nb\nb\n").unwrap();
    let o = loster(&["eval", "--labels", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "RI 1.000000\nNMI 1.000000\n");

    fs::write(&truth, "a\nb\na\nb\n").unwrap();
    let o = loster(&["eval", "--labels", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    // pairs (0,1) and (2,3) co-clustered only in the prediction, (0,2) and (1,3) only in truth
    assert!(stdout(&o).starts_with("RI 0.333333\nNMI 0.000000"), "{}", stdout(&o));

    fs::write(&truth, "a\nb\n").unwrap();
    let o = loster(&["eval", "--labels", pred.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_default_passes() {
    let o = loster(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let text = stdout(&o);
    for name in ["reconstruction", "kmeans", "instance", "cluster", "total"] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn gradcheck_names_a_faulty_loss() {
    let o = loster(&["gradcheck", "--fault", "instance"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("instance"), "{err}");
    assert!(!err.contains("kmeans"), "{err}");
}

#[test]
fn gradcheck_with_nothing_to_check_passes() {
    let o = loster(&["gradcheck", "--freeze-all"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("(0 parameters)"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 3, 8);
    let missing = dir.path().join("missing.tsv");
    let bad_cfg = dir.path().join("bad.cfg");
    fs::write(&bad_cfg, "latent_dim = 8\nno_such_key = 1\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["cluster", "--data", &data, "--bogus-flag"],
        vec!["nonsense"],
        vec!["cluster", "--data", missing.to_str().unwrap()],
        vec!["cluster", "--data", &data, "--config", bad_cfg.to_str().unwrap()],
        vec!["cluster", "--data", &data, "--set", "sigma=-1"],
        vec!["cluster", "--data", &data, "--k", "100"],
        vec!["gradcheck", "--fault", "nope"],
        vec!["eval", "--labels", missing.to_str().unwrap(), "--truth", &data],
    ];
    for args in cases {
        let o = loster(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
        let err = stderr(&o);
        assert!(!err.trim().is_empty());
    }
    let o = loster(&["cluster", "--data", &data, "--config", bad_cfg.to_str().unwrap()]);
    assert_eq!(stderr(&o).trim().lines().count(), 1);
    assert!(stderr(&o).contains("bad.cfg:2"), "{}", stderr(&o));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let ragged = dir.path().join("ragged.tsv");
    fs::write(&ragged, "1\t0.5\t0.7\n2\t0.1\t0.9\t0.3\n").unwrap();
    let o = loster(&["cluster", "--data", ragged.to_str().unwrap(), "--k", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.contains(":2:"), "{err}");
}

#[test]
fn threads_above_one_warn() {
    let o = loster(&["--threads", "2", "gradcheck", "--freeze-all"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("warning"));
}

#[test]
fn config_lists_every_key() {
    let o = loster(&["config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for key in ["latent_dim = 256", "batch_size = 128", "tau0 = 10.0", "augment.n_segments = 4", "grad_clip = 1.0"] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
}

#[test]
fn bench_times_the_requested_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(dir.path(), 5, 9);
    let out = dir.path().join("bench");
    let o = loster(&[
        "-q", "bench", "--data", &data, "--epochs", "2", "--latent-dim", "8", "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(stdout(&o).contains("joint seconds per epoch"));
}

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use loster::augment::augment_dataset;
use loster::dataio::{
    gen_synthetic, load_ucr, save_results, Delimiter, RunResults, SyntheticConfig, TimeSeriesDataset,
    RESULTS_FILE, RESULTS_SCHEMA_VERSION,
};
use loster::densenet::Checkpoint;
use loster::gradsuite::{run_gradsuite, GradSuiteConfig, LossKind};
use loster::metrics::{nmi, rand_index};
use loster::trainer::{
    fit, joint_train, prepare, rng_stream, write_epoch_log, EpochLog, TrainConfig, STREAM_JOINT,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{default_config_text, RunConfig};
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::{
    BenchArgs, Cli, ClusterArgs, Command, DataArgs, DelimiterArg, EvalArgs, Failure, GradcheckArgs, SynthArgs,
    TrainArgs, OUT_DIR_ENV,
};

type CmdResult = Result<ExitCode, Failure>;

pub const EPOCHS_FILE: &str = "epochs.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PRETRAIN_FILE: &str = "pretrain.csv";
pub const BENCH_FILE: &str = "bench.csv";

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

pub(crate) fn run(cli: Cli) -> CmdResult {
    set_threads(cli.threads)?;
    let ctx = Ctx {
        threads: cli.threads,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::Cluster(a) => cluster(&ctx, a),
        Command::Pretrain(a) => pretrain(&ctx, a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Config => {
            print!("{}", default_config_text());
            Ok(ExitCode::SUCCESS)
        }
    }
}

struct Ctx {
    threads: usize,
    quiet: bool,
}

fn set_threads(threads: usize) -> Result<(), Failure> {
    if threads == 0 {
        return Err(usage("--threads must be at least 1"));
    }
    if threads > 1 {
        eprintln!("warning: --threads {threads} may change floating-point summation order; runs are bitwise reproducible only with --threads 1");
    }
    // read once by the matrix-product thread pool on first use
    std::env::set_var("MATMUL_NUM_THREADS", threads.to_string());
    Ok(())
}

/// Defaults, then the config file, then `--set` pairs, then dedicated flags.
fn resolve_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut rc = RunConfig::default();
    if let Some(path) = &args.config {
        if !path.is_file() {
            return Err(usage(format!("config file {} not found", path.display())));
        }
        rc.apply_file(path).map_err(usage)?;
    }
    for pair in &args.set {
        rc.apply_pair(pair).map_err(usage)?;
    }
    if let Some(seed) = args.seed {
        rc.train = rc.train.clone().with_seed(seed);
    }
    if let Some(k) = args.k {
        rc.k = Some(k);
    }
    let t = &mut rc.train;
    for (flag, slot) in [
        (args.max_epochs, &mut t.max_epochs),
        (args.pretrain_epochs, &mut t.pretrain_epochs),
        (args.latent_dim, &mut t.latent_dim),
        (args.batch_size, &mut t.batch_size),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }
    rc.train.validate().map_err(|e| usage(e.to_string()))?;
    Ok(rc)
}

fn load_data(args: &DataArgs) -> Result<TimeSeriesDataset, Failure> {
    for p in std::iter::once(&args.data).chain(args.test.as_ref()) {
        if !p.is_file() {
            return Err(usage(format!("data file {} not found", p.display())));
        }
    }
    let delimiter = match args.delimiter {
        DelimiterArg::Tab => Delimiter::Tab,
        DelimiterArg::Comma => Delimiter::Comma,
    };
    Ok(load_ucr(&args.data, args.test.as_deref(), delimiter)?.znormed())
}

fn resolve_k(rc: &RunConfig, data: &TimeSeriesDataset) -> Result<usize, Failure> {
    let k = match rc.k {
        Some(k) => k,
        None if data.labels.is_some() => data.class_count(),
        None => return Err(usage("--k is required when the data carry no labels")),
    };
    if k == 0 || k > data.len() {
        return Err(usage(format!("k = {k} must lie in 1..={}", data.len())));
    }
    Ok(k)
}

fn out_dir(explicit: Option<&PathBuf>, dataset: &str, command: &str, seed: u64) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    let root = std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(format!("{dataset}-{command}-seed{seed}"))
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create output directory {}: {e}", dir.display())))
}

fn progress(quiet: bool) -> impl FnMut(&EpochLog) {
    move |row: &EpochLog| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  tau {:.4}  lr {:.1e}  loss {:.5}  changed {:.4}  {:.2}s",
                row.epoch, row.tau, row.lr, row.total, row.changed_fraction, row.seconds
            );
        }
    }
}

fn dataset_paths(args: &DataArgs) -> Vec<PathBuf> {
    std::iter::once(args.data.clone()).chain(args.test.clone()).collect()
}

fn cluster(ctx: &Ctx, args: ClusterArgs) -> CmdResult {
    let rc = resolve_config(&args.train)?;
    let data = load_data(&args.data)?;
    let k = resolve_k(&rc, &data)?;
    let cfg = &rc.train;
    let dir = out_dir(args.out.as_ref(), &data.name, "cluster", cfg.seed);
    create_dir(&dir)?;

    let mut observer = progress(ctx.quiet);
    let out = fit(&data.series, k, cfg, Some(&mut observer))?;
    let (ri, mi) = match &data.labels {
        Some(truth) => (Some(rand_index(truth, &out.labels)?), Some(nmi(truth, &out.labels)?)),
        None => (None, None),
    };
    let run = RunResults {
        schema_version: RESULTS_SCHEMA_VERSION,
        dataset: data.name.clone(),
        n_series: data.len(),
        series_len: data.series_len(),
        k,
        seed: cfg.seed,
        config: serde_json::to_value(cfg).context("serializing config")?,
        pretrain_losses: out.pretrain_losses.to_vec(),
        epochs: out.state.history.clone(),
        labels: out.labels.clone(),
        rand_index: ri,
        nmi: mi,
        timings: out.timings.clone(),
    };
    save_results(&run, &dir)?;
    write_epoch_log(dir.join(EPOCHS_FILE), &out.state.history)?;
    let mut manifest = RunManifest::new("cluster", &dir, cfg.seed, ctx.threads).with_train(cfg, Some(k));
    manifest.config_file = args.train.config.clone();
    manifest.dataset_paths = dataset_paths(&args.data);
    manifest.write(&dir.join(MANIFEST_FILE))?;

    println!(
        "{}: n {} L {} k {} epochs {} in {:.1}s",
        data.name,
        data.len(),
        data.series_len(),
        k,
        out.state.history.len(),
        out.timings.total_seconds
    );
    if let (Some(ri), Some(mi)) = (ri, mi) {
        println!("RI {ri:.4}  NMI {mi:.4}");
    }
    println!("wrote {}", dir.join(RESULTS_FILE).display());
    Ok(ExitCode::SUCCESS)
}

fn pretrain(ctx: &Ctx, args: ClusterArgs) -> CmdResult {
    let rc = resolve_config(&args.train)?;
    let data = load_data(&args.data)?;
    let k = resolve_k(&rc, &data)?;
    let cfg = &rc.train;
    let dir = out_dir(args.out.as_ref(), &data.name, "pretrain", cfg.seed);
    create_dir(&dir)?;

    let data_aug = augment_dataset(&data.series, &cfg.augment)?;
    let (state, losses, timings) = prepare(&data.series, &data_aug, k, cfg)?;
    Checkpoint::new(vec![state.original, state.augmented]).save(dir.join(CHECKPOINT_FILE))?;
    let mut csv = String::from("epoch,original,augmented\n");
    for (e, (o, a)) in losses[0].iter().zip(&losses[1]).enumerate() {
        csv.push_str(&format!("{e},{o},{a}\n"));
    }
    let csv_path = dir.join(PRETRAIN_FILE);
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let mut manifest = RunManifest::new("pretrain", &dir, cfg.seed, ctx.threads).with_train(cfg, Some(k));
    manifest.config_file = args.train.config.clone();
    manifest.dataset_paths = dataset_paths(&args.data);
    manifest.write(&dir.join(MANIFEST_FILE))?;

    if let (Some(o), Some(a)) = (losses[0].last(), losses[1].last()) {
        println!("final reconstruction loss: original {o:.5}, augmented {a:.5}");
    }
    println!(
        "pretrained {} epochs in {:.1}s; wrote {}",
        cfg.pretrain_epochs,
        timings.pretrain_seconds,
        dir.join(CHECKPOINT_FILE).display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Reads a label file: an optional `index,label` header, then rows whose
/// last comma- or tab-separated field is the label.
fn read_labels(path: &Path) -> Result<Vec<String>, Failure> {
    if !path.is_file() {
        return Err(usage(format!("label file {} not found", path.display())));
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("index,label")) {
            continue;
        }
        let field = line.rsplit([',', '\t']).next().unwrap_or(line).trim();
        out.push(field.to_string());
    }
    if out.is_empty() {
        return Err(Failure::Runtime(anyhow::anyhow!("{}: no labels", path.display())));
    }
    Ok(out)
}

fn dense_ids(labels: &[String]) -> Vec<usize> {
    let mut ids = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.as_str()).or_insert(next)
        })
        .collect()
}

fn eval(args: EvalArgs) -> CmdResult {
    let pred = read_labels(&args.labels)?;
    let truth = read_labels(&args.truth)?;
    if pred.len() != truth.len() {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "{} has {} labels but {} has {}",
            args.labels.display(),
            pred.len(),
            args.truth.display(),
            truth.len()
        )));
    }
    let (p, t) = (dense_ids(&pred), dense_ids(&truth));
    println!("RI {:.6}", rand_index(&t, &p)?);
    println!("NMI {:.6}", nmi(&t, &p)?);
    Ok(ExitCode::SUCCESS)
}

fn synth(ctx: &Ctx, args: SynthArgs) -> CmdResult {
    let cfg = SyntheticConfig {
        n_per_class: args.n,
        length: args.length,
        k: args.k,
        noise_std: args.noise,
        phase_spread: args.phase_spread,
    };
    if cfg.n_per_class == 0 {
        return Err(usage("--n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let d = gen_synthetic(&cfg, &mut rng).map_err(|e| usage(e.to_string()))?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = fs::File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = std::io::BufWriter::new(file);
    for (row, label) in d.series.row_iter().zip(d.labels.as_deref().unwrap_or_default()) {
        write!(w, "{}", label + 1).context("writing series")?;
        for v in row {
            write!(w, "\t{v}").context("writing series")?;
        }
        writeln!(w).context("writing series")?;
    }
    w.flush().context("writing series")?;

    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.json");
    let dir = args.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut manifest = RunManifest::new("synth", &dir, args.seed, ctx.threads);
    manifest.dataset_paths = vec![args.out.clone()];
    manifest.write(Path::new(&manifest_path))?;
    println!("wrote {} series of length {} to {}", d.len(), d.series_len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let fault = match args.fault.as_deref() {
        Some(name) => Some(LossKind::parse(name).ok_or_else(|| {
            let names: Vec<_> = LossKind::ALL.iter().map(|k| k.name()).collect();
            usage(format!("unknown loss {name:?}; expected one of {}", names.join(", ")))
        })?),
        None => None,
    };
    let defaults = GradSuiteConfig::default();
    let cfg = GradSuiteConfig {
        n: args.n,
        series_len: args.series_len,
        latent_dim: args.latent_dim,
        k: args.k,
        n_blocks: args.blocks,
        seed: args.seed,
        step: args.step.unwrap_or(defaults.step),
        threshold: args.threshold,
        freeze_all: args.freeze_all,
        fault,
        ..defaults
    };
    if cfg.n < 2 || cfg.k == 0 || cfg.k > cfg.n || cfg.series_len == 0 || cfg.latent_dim == 0 || cfg.n_blocks == 0 {
        return Err(usage("gradcheck needs n ≥ 2, 1 ≤ k ≤ n and positive len, latent-dim and blocks"));
    }
    let (reports, secs) = run_gradsuite(&cfg)?;
    for r in &reports {
        println!(
            "{:<15} max relative error {:.3e}  ({} parameters)  {}",
            r.loss.name(),
            r.max_relative_error,
            r.parameters,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed).map(|r| r.loss.name()).collect();
    if failed.is_empty() {
        println!("all {} losses below {:e} in {secs:.2}s", reports.len(), cfg.threshold);
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: gradient check failed for {}", failed.join(", "));
        Ok(ExitCode::from(1))
    }
}

fn bench(ctx: &Ctx, args: BenchArgs) -> CmdResult {
    let mut rc = resolve_config(&args.train)?;
    if args.train.pretrain_epochs.is_none() {
        // per-epoch joint cost does not depend on how long the views were pretrained
        rc.train.pretrain_epochs = 1;
    }
    let data = load_data(&args.data)?;
    let k = resolve_k(&rc, &data)?;
    let cfg: &TrainConfig = &rc.train;
    let dir = out_dir(args.out.as_ref(), &data.name, "bench", cfg.seed);
    create_dir(&dir)?;

    let started = Instant::now();
    let data_aug = augment_dataset(&data.series, &cfg.augment)?;
    let (mut state, _, timings) = prepare(&data.series, &data_aug, k, cfg)?;
    let mut observer = progress(ctx.quiet);
    let mut rng = rng_stream(cfg.seed, STREAM_JOINT);
    // one epoch per call so the stopping rule cannot cut the timing short
    for epoch in 0..args.epochs {
        let one = TrainConfig {
            max_epochs: epoch + 1,
            ..cfg.clone()
        };
        joint_train(&mut state, &data.series, &data_aug, &one, &mut rng, Some(&mut observer))?;
    }
    let h = &state.history;
    let mut csv = String::from("epoch,seconds,n_series,series_len,batch_size,threads\n");
    for row in h {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.epoch,
            row.seconds,
            data.len(),
            data.series_len(),
            cfg.batch_size,
            ctx.threads
        ));
    }
    let csv_path = dir.join(BENCH_FILE);
    fs::write(&csv_path, csv).with_context(|| format!("writing {}", csv_path.display()))?;
    let mut manifest = RunManifest::new("bench", &dir, cfg.seed, ctx.threads).with_train(cfg, Some(k));
    manifest.config_file = args.train.config.clone();
    manifest.dataset_paths = dataset_paths(&args.data);
    manifest.write(&dir.join(MANIFEST_FILE))?;

    let secs: Vec<f64> = h.iter().map(|r| r.seconds).collect();
    let mean = if secs.is_empty() { 0.0 } else { secs.iter().sum::<f64>() / secs.len() as f64 };
    let max = secs.iter().cloned().fold(0.0, f64::max);
    let per_pretrain = if cfg.pretrain_epochs > 0 {
        timings.pretrain_seconds / (2 * cfg.pretrain_epochs) as f64
    } else {
        0.0
    };
    println!(
        "{}: n {} L {} batch {} threads {}",
        data.name,
        data.len(),
        data.series_len(),
        cfg.batch_size,
        ctx.threads
    );
    println!("pretrain seconds per view-epoch {per_pretrain:.3}");
    println!("joint seconds per epoch mean {mean:.3} max {max:.3} over {} epochs", secs.len());
    println!("total {:.1}s; wrote {}", started.elapsed().as_secs_f64(), csv_path.display());
    Ok(ExitCode::SUCCESS)
}

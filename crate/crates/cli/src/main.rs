use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use n2rec::eval::{evaluate, ReportLabels, DEFAULT_KS};
use n2rec::gradcheck::{gru_suite, jtll_suite, GradCheckReport, GRU_TOLERANCE, JTLL_TOLERANCE};
use n2rec::ingest::{
    load_canonical, parse_raw, preprocess, save_canonical, split, ColumnMapping, Dataset, PreprocessConfig,
    DEFAULT_TRAIN_FRACTION,
};
use n2rec::joint::{format_epoch_log, joint_train, JointConfig};
use n2rec::models::{load_snapshot, save_snapshot};
use n2rec::synth::{generate, SynthConfig};

/// Next-new POI recommendation with joint triplet-loss learning.
#[derive(Parser, Debug)]
#[command(name = "n2rec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse a raw check-in dump, filter it and write a split canonical dataset.
    Preprocess(PreprocessArgs),
    /// Generate a planted-group synthetic dataset.
    Synth(SynthArgs),
    /// Train a model (optionally with the triplet-loss pass) and save a snapshot.
    Train(TrainArgs),
    /// Evaluate a snapshot on the test partition of a dataset.
    Evaluate(EvaluateArgs),
    /// Run the finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Column-mapping file, or one of the built-in layouts `gowalla` / `foursquare`.
    #[arg(long, default_value = "gowalla")]
    mapping: String,
    #[arg(long, default_value_t = 20)]
    min_visits: usize,
    #[arg(long, default_value_t = 50)]
    max_visits: usize,
    #[arg(long, default_value_t = 10)]
    min_users_per_poi: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_frac: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    pois: usize,
    #[arg(long, default_value_t = 10)]
    groups: usize,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
    #[arg(long, default_value_t = 20)]
    min_len: usize,
    #[arg(long, default_value_t = 50)]
    max_len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_frac: f64,
}

/// Training flags. Unset flags fall back to the config file, then to the
/// built-in defaults.
#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Epoch log path; defaults to `<out>.log.tsv`.
    #[arg(long)]
    log: Option<PathBuf>,
    /// key=value file with any of the settings below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// top, utop, mf, seqrec or gru.
    #[arg(long)]
    model: Option<String>,
    /// on or off.
    #[arg(long)]
    jtll: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    /// Learning rate of the base-model pass (defaults to --lr).
    #[arg(long)]
    model_lr: Option<String>,
    /// Learning rate of the triplet-loss pass (defaults to --lr).
    #[arg(long)]
    jtll_lr: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    negatives: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// One training tuple per check-in rather than per distinct pair.
    #[arg(long, num_args = 0..=1, default_missing_value = "on")]
    tuple_multiplicity: Option<String>,
    /// Draw each tuple's negatives once and reuse them.
    #[arg(long, num_args = 0..=1, default_missing_value = "on")]
    fixed_negatives: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    snapshot: PathBuf,
    /// Comma-separated cut-offs.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_KS)]
    k_list: Vec<usize>,
    /// Dataset label in the report; defaults to the file stem.
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e));
            ExitCode::from(1)
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn one_line(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(a) => run_preprocess(a),
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Gradcheck(a) => run_gradcheck(a),
    }
}

fn print_stats(d: &Dataset) {
    println!("users={} pois={} visits={}", d.num_users(), d.num_pois(), d.num_checkins());
}

fn load_mapping(spec: &str) -> Result<ColumnMapping> {
    Ok(match spec {
        "gowalla" => ColumnMapping::gowalla(),
        "foursquare" => ColumnMapping::foursquare(),
        path => ColumnMapping::load(path)?,
    })
}

fn run_preprocess(a: PreprocessArgs) -> Result<()> {
    println!("# in={}", a.input.display());
    println!("# out={}", a.out.display());
    println!("# mapping={}", a.mapping);
    println!(
        "# min-visits={} max-visits={} min-users-per-poi={} train-frac={}",
        a.min_visits, a.max_visits, a.min_users_per_poi, a.train_frac
    );
    let mapping = load_mapping(&a.mapping)?;
    let parsed = parse_raw(&a.input, &mapping)?;
    println!("# parsed={} skipped={}", parsed.records.len(), parsed.skipped);
    let cfg = PreprocessConfig {
        min_visits: a.min_visits,
        max_visits: a.max_visits,
        min_users_per_poi: a.min_users_per_poi,
    };
    let dataset = preprocess(&parsed.records, &cfg)?;
    print_stats(&dataset);
    let dataset = split(dataset, a.train_frac)?;
    save_canonical(&dataset, &a.out)?;
    Ok(())
}

fn run_synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_users: a.users,
        num_pois: a.pois,
        num_groups: a.groups,
        epsilon: a.epsilon,
        min_len: a.min_len,
        max_len: a.max_len,
        seed: a.seed,
    };
    println!("# out={}", a.out.display());
    println!(
        "# users={} pois={} groups={} epsilon={} min-len={} max-len={} seed={} train-frac={}",
        cfg.num_users, cfg.num_pois, cfg.num_groups, cfg.epsilon, cfg.min_len, cfg.max_len, cfg.seed, a.train_frac
    );
    let data = generate(&cfg)?;
    print_stats(&data.dataset);
    let dataset = split(data.dataset, a.train_frac)?;
    save_canonical(&dataset, &a.out)?;
    Ok(())
}

fn resolve_train_config(a: &TrainArgs) -> Result<JointConfig> {
    let mut cfg = JointConfig::default();
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    let flags = [
        ("model", &a.model),
        ("jtll", &a.jtll),
        ("dim", &a.dim),
        ("epochs", &a.epochs),
        ("lr", &a.lr),
        ("model-lr", &a.model_lr),
        ("jtll-lr", &a.jtll_lr),
        ("batch", &a.batch),
        ("dropout", &a.dropout),
        ("negatives", &a.negatives),
        ("seed", &a.seed),
        ("tuple-multiplicity", &a.tuple_multiplicity),
        ("fixed-negatives", &a.fixed_negatives),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.apply_kv(key, v).with_context(|| format!("--{key}"))?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".log.tsv");
    PathBuf::from(name)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a)?;
    let log_path = a.log.clone().unwrap_or_else(|| default_log_path(&a.out));
    println!("# in={}", a.input.display());
    println!("# out={}", a.out.display());
    println!("# log={}", log_path.display());
    for line in cfg.to_kv_string().lines() {
        println!("# {line}");
    }
    let dataset = load_canonical(&a.input)?;
    let outcome = joint_train(&dataset, &cfg)?;
    let log = format_epoch_log(&outcome.log);
    print!("{log}");
    std::fs::write(&log_path, &log).with_context(|| format!("writing {}", log_path.display()))?;
    save_snapshot(&outcome.into_snapshot(&cfg), &a.out)?;
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let name = a.name.clone().unwrap_or_else(|| {
        a.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    println!("# in={}", a.input.display());
    println!("# snapshot={}", a.snapshot.display());
    println!(
        "# k-list={}",
        a.k_list.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    );
    let dataset = load_canonical(&a.input)?;
    let snapshot = load_snapshot(&a.snapshot)?;
    if snapshot.params.num_users() != dataset.num_users() || snapshot.params.num_pois() != dataset.num_pois() {
        bail!(
            "snapshot was trained on M={} Q={} but the dataset has M={} Q={}",
            snapshot.params.num_users(),
            snapshot.params.num_pois(),
            dataset.num_users(),
            dataset.num_pois()
        );
    }
    let report = evaluate(&snapshot.model, &snapshot.params, &dataset, &a.k_list)?;
    let labels = ReportLabels {
        dataset: name,
        model: snapshot.model.kind(),
        jtll: snapshot.meta.jtll,
        seed: snapshot.meta.seed,
    };
    print!("{}", report.to_table(&labels));
    println!("{}", report.to_record(&labels));
    Ok(())
}

fn print_gradcheck(label: &str, report: &GradCheckReport, tolerance: f64) -> bool {
    for (group, err) in &report.groups {
        println!("{label}\t{group}\t{err:.3e}");
    }
    let max = report.max_rel_err();
    let ok = max < tolerance;
    println!(
        "{label}: max rel err {max:.3e} over {} instance(s) (tolerance {tolerance:e}) {}",
        report.instances,
        if ok { "ok" } else { "FAILED" }
    );
    ok
}

fn run_gradcheck(a: GradcheckArgs) -> Result<()> {
    println!("# seed={}", a.seed);
    let jtll_ok = print_gradcheck("triplet", &jtll_suite(a.seed)?, JTLL_TOLERANCE);
    let gru_ok = print_gradcheck("gru", &gru_suite(a.seed)?, GRU_TOLERANCE);
    if !(jtll_ok && gru_ok) {
        bail!("gradient check exceeded tolerance");
    }
    Ok(())
}

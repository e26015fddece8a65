//! The `oodscore` command line: synthesize a benchmark, train a small MLP,
//! extract features, evaluate OOD scores, scan norm orders and run the
//! identity self-checks.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 a failed
//! self-check.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use oodscore_core::closed_form::VTermKind;
use oodscore_core::data::{
    extract_features, read_feature_dump, read_model, read_raw_dataset, synth_generate, to_canonical_json, write_feature_dump,
    write_model_file, write_raw_dataset, write_report, ModelFile, OodMode, SynthConfig, FORMAT_VERSION,
};
use oodscore_core::descriptor::{lookup_list, RegistryOptions, REGISTRY};
use oodscore_core::eval::{evaluate_suite, norm_scan, SampleSet, SuiteInputs, SuiteOptions};
use oodscore_core::grad::{train_mlp, Activation, AnchorSet, TrainConfig};
use oodscore_core::math::{NormOrder, Temperature};
use oodscore_core::verify::{run_verify, VerifyConfig};

pub const DEFAULT_SEED: u64 = 42;
pub const THREADS_ENV: &str = "OODSCORE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "oodscore", version, about = "Evaluate out-of-distribution scores built from encodings, outputs and gradients")]
pub struct Cli {
    /// Root seed for every random stream [default: 42]
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Softmax temperature for training and scoring
    #[arg(long, global = true, default_value_t = 1.0)]
    pub temperature: f64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate seeded train / ID / OOD datasets from Gaussian clusters
    Synth(SynthArgs),
    /// Train the MLP classifier on a labelled dataset
    Train(TrainArgs),
    /// Write encodings and logits of a dataset under a trained model
    Extract(ExtractArgs),
    /// Score ID and OOD features and report one AUROC per score
    Eval(EvalArgs),
    /// AUROC grid over norm orders of ||h|| times each output term
    Scan(ScanArgs),
    /// Check the closed-form identities, backprop and AUROC against oracles
    Verify(VerifyArgs),
    /// List the score names accepted by `eval --scores`
    Scores,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OodKind {
    MeanShift,
    ScaleInflate,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON config file; flags below override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Input dimension [default: 16]
    #[arg(long)]
    pub input_dim: Option<usize>,
    /// Number of classes [default: 4]
    #[arg(long)]
    pub class_count: Option<usize>,
    /// Training samples per class [default: 500]
    #[arg(long)]
    pub train_per_class: Option<usize>,
    /// ID and OOD evaluation samples per class [default: 500]
    #[arg(long)]
    pub eval_per_class: Option<usize>,
    /// Per-coordinate standard deviation of each cluster [default: 1.0]
    #[arg(long)]
    pub cluster_std: Option<f64>,
    /// Cluster means are drawn as mean_scale * N(0, I) [default: 2.5]
    #[arg(long)]
    pub mean_scale: Option<f64>,
    /// How the OOD set is built [default: mean-shift]
    #[arg(long, value_enum)]
    pub ood_mode: Option<OodKind>,
    /// Mean-shift distance along a random unit direction [default: 6.0]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Scale-inflate factor on the cluster standard deviation [default: 2.0]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Writes <prefix>-train.csv, <prefix>-id.csv, <prefix>-ood.csv and <prefix>-config.json
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labelled training CSV (sample_id,x_0..,label)
    #[arg(long)]
    pub data: PathBuf,
    /// Layer widths d,h_1,...,C
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    /// Hidden-layer activation: relu or tanh
    #[arg(long, default_value = "tanh", value_parser = parse_activation)]
    pub activation: Activation,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    /// Learning rate
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    /// L2 penalty on all parameters
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Model JSON to write
    #[arg(long, alias = "output")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Raw dataset CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Feature CSV to write; the manifest goes next to it
    #[arg(long, alias = "output")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// In-distribution feature CSV
    #[arg(long)]
    pub id: PathBuf,
    /// Out-of-distribution feature CSV
    #[arg(long)]
    pub ood: PathBuf,
    /// Comma-separated score names (see `oodscore scores`)
    #[arg(long)]
    pub scores: String,
    /// Model JSON; needed by deep and batchgrad scores
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Raw inputs behind --id, row for row; needed by deep scores
    #[arg(long)]
    pub id_raw: Option<PathBuf>,
    /// Raw inputs behind --ood, row for row; needed by deep scores
    #[arg(long)]
    pub ood_raw: Option<PathBuf>,
    /// Labelled CSV to draw one batchgrad anchor per class from (seeded)
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Order of the ||h|| factor in h1-* scores [default: 1]
    #[arg(long)]
    pub norm_order: Option<NormOrder>,
    /// Report JSON to write
    #[arg(long, alias = "output")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScanArgs {
    #[arg(long)]
    pub id: PathBuf,
    #[arg(long)]
    pub ood: PathBuf,
    /// Comma-separated norm orders [default: 0,0.1,0.3,0.5,0.8,1,2,3,4,5,6,inf]
    #[arg(long, value_delimiter = ',')]
    pub orders: Option<Vec<NormOrder>>,
    /// Comma-separated output terms [default: energy,tv,msp,varsum]
    #[arg(long, value_delimiter = ',', value_parser = parse_v_term)]
    pub v_terms: Option<Vec<VTermKind>>,
    /// Grid JSON to write
    #[arg(long, alias = "output")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Random cases for the closed-form sweeps; other checks scale from it
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    /// Corrupt the named check (tests the checker itself)
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    s.parse().map_err(|e: oodscore_core::Error| e.to_string())
}

fn parse_v_term(s: &str) -> std::result::Result<VTermKind, String> {
    VTermKind::from_name(s).ok_or_else(|| format!("unknown term `{s}` (expected energy, tv, msp or varsum)"))
}

/// Runs a parsed command line, printing any error to stderr.
pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

struct Globals {
    seed: u64,
    temperature: Temperature,
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = Globals {
        seed: cli.seed.unwrap_or(DEFAULT_SEED),
        temperature: Temperature::new(cli.temperature)?,
    };
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed, &g),
        Command::Train(a) => train(a, &g),
        Command::Extract(a) => extract(a),
        Command::Eval(a) => eval(a, &g),
        Command::Scan(a) => scan(a, &g),
        Command::Verify(a) => verify(a, &g),
        Command::Scores => {
            for e in REGISTRY {
                println!("{:<32} {}", e.name, e.summary);
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn threads() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => bail!("{THREADS_ENV} must be a positive integer, got `{v}`"),
        },
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn opt_path(p: &Option<PathBuf>) -> Value {
    p.as_deref().map_or(Value::Null, |p| Value::String(path_str(p)))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn resolve_synth(a: &SynthArgs, seed: Option<u64>) -> Result<SynthConfig> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid synth config {}", path.display()))?
        }
        None => SynthConfig::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = a.$field { cfg.$field = v; })*};
    }
    set!(input_dim, class_count, train_per_class, eval_per_class, cluster_std, mean_scale);
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let kind = a.ood_mode.unwrap_or(match cfg.ood {
        OodMode::MeanShift { .. } => OodKind::MeanShift,
        OodMode::ScaleInflate { .. } => OodKind::ScaleInflate,
    });
    cfg.ood = match (kind, cfg.ood) {
        (OodKind::MeanShift, OodMode::MeanShift { delta }) => OodMode::MeanShift { delta: a.delta.unwrap_or(delta) },
        (OodKind::MeanShift, _) => OodMode::MeanShift { delta: a.delta.unwrap_or(6.0) },
        (OodKind::ScaleInflate, OodMode::ScaleInflate { gamma }) => OodMode::ScaleInflate { gamma: a.gamma.unwrap_or(gamma) },
        (OodKind::ScaleInflate, _) => OodMode::ScaleInflate { gamma: a.gamma.unwrap_or(2.0) },
    };
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: &SynthArgs, seed: Option<u64>, _g: &Globals) -> Result<ExitCode> {
    let cfg = resolve_synth(a, seed)?;
    let data = synth_generate(&cfg)?;
    let files = [
        ("-train.csv", &data.train),
        ("-id.csv", &data.id_eval),
        ("-ood.csv", &data.ood_eval),
    ];
    for (suffix, set) in files {
        let path = with_suffix(&a.out_prefix, suffix);
        write_raw_dataset(set, &path)?;
        println!("wrote {} samples to {}", set.len(), path.display());
    }
    let echo = json!({
        "command": "synth",
        "format_version": FORMAT_VERSION,
        "config": serde_json::to_value(&cfg)?,
        "shift_direction": data.shift_direction,
        "means": data.means,
    });
    let path = with_suffix(&a.out_prefix, "-config.json");
    std::fs::write(&path, to_canonical_json(&echo)).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn train(a: &TrainArgs, g: &Globals) -> Result<ExitCode> {
    let data = read_raw_dataset(&a.data)?;
    if a.dims.first() != Some(&data.input_dim) {
        bail!(
            "--dims starts with {}, but {} has input dimension {}",
            a.dims.first().map_or("nothing".into(), |d| d.to_string()),
            a.data.display(),
            data.input_dim
        );
    }
    let (xs, ys) = data.labelled();
    let config = TrainConfig {
        activation: a.activation,
        epochs: a.epochs,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        seed: g.seed,
        temperature: g.temperature,
        weight_decay: a.weight_decay,
        ..TrainConfig::new(a.dims.clone())
    };
    let outcome = train_mlp(&xs, &ys, &config)?;
    let mut file = ModelFile::from(&outcome.model);
    file.provenance = Some(json!({
        "command": "train",
        "data": path_str(&a.data),
        "config": serde_json::to_value(&config)?,
        "train_accuracy": outcome.train_accuracy,
        "final_loss": outcome.final_loss,
    }));
    write_model_file(&file, &a.out)?;
    println!(
        "train accuracy: {:.6} ({} samples, {} epochs)",
        outcome.train_accuracy,
        xs.len(),
        a.epochs
    );
    Ok(ExitCode::SUCCESS)
}

fn extract(a: &ExtractArgs) -> Result<ExitCode> {
    let model = read_model(&a.model)?;
    let data = read_raw_dataset(&a.data)?;
    let source = a.data.file_name().map_or_else(|| path_str(&a.data), |n| n.to_string_lossy().into_owned());
    let dump = extract_features(&model, &data, source).with_context(|| format!("cannot extract {}", a.data.display()))?;
    write_feature_dump(&dump, &a.out)?;
    println!("wrote {} rows to {}", dump.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn load_set(features: &Path, raw: &Option<PathBuf>) -> Result<SampleSet> {
    let set = SampleSet::from_dump(&read_feature_dump(features)?)?;
    match raw {
        Some(r) => Ok(set
            .with_raw(&read_raw_dataset(r)?)
            .with_context(|| format!("{} does not match {}", r.display(), features.display()))?),
        None => Ok(set),
    }
}

fn eval(a: &EvalArgs, g: &Globals) -> Result<ExitCode> {
    let options = RegistryOptions {
        temperature: g.temperature,
        norm_order: a.norm_order,
    };
    let descriptors = lookup_list(&a.scores, &options)?;
    let id = load_set(&a.id, &a.id_raw)?;
    let ood = load_set(&a.ood, &a.ood_raw)?;
    let model = a.model.as_deref().map(read_model).transpose()?;
    let anchors = match (&a.anchors, &model) {
        (Some(path), Some(m)) => {
            let (xs, ys) = read_raw_dataset(path)?.labelled();
            Some(AnchorSet::select(&xs, &ys, m.class_count(), g.seed)?)
        }
        _ => None,
    };
    let inputs = SuiteInputs {
        id: &id,
        ood: &ood,
        model: model.as_ref(),
        anchors: anchors.as_ref(),
    };
    let mut report = evaluate_suite(&descriptors, &inputs, &SuiteOptions { threads: threads()? })?;
    report.run = run_echo(json!({
        "command": "eval",
        "seed": g.seed,
        "temperature": g.temperature.get(),
        "scores": descriptors.iter().map(|d| d.name.clone()).collect::<Vec<_>>(),
        "norm_order": a.norm_order.map(|o| o.to_string()),
        "id": path_str(&a.id),
        "ood": path_str(&a.ood),
        "model": opt_path(&a.model),
        "id_raw": opt_path(&a.id_raw),
        "ood_raw": opt_path(&a.ood_raw),
        "anchors": opt_path(&a.anchors),
    }));
    write_report(&report, &a.out)?;

    let width = report.entries.iter().map(|e| e.name.len()).max().unwrap_or(5).max(5);
    println!("{:<width$}  AUROC", "score");
    for e in &report.entries {
        println!("{:<width$}  {:.4}", e.name, e.auroc);
    }
    Ok(ExitCode::SUCCESS)
}

fn run_echo(v: Value) -> Map<String, Value> {
    let mut m = match v {
        Value::Object(m) => m,
        _ => unreachable!("run echo is an object"),
    };
    m.insert("tool_version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    m.insert("format_version".into(), Value::String(FORMAT_VERSION.into()));
    m
}

fn scan(a: &ScanArgs, g: &Globals) -> Result<ExitCode> {
    let orders = a.orders.clone().unwrap_or_else(NormOrder::scan_defaults);
    let v_terms = a.v_terms.clone().unwrap_or_else(|| VTermKind::ALL.to_vec());
    let id = load_set(&a.id, &None)?;
    let ood = load_set(&a.ood, &None)?;
    let mut grid = norm_scan(&id, &ood, &orders, &v_terms, g.temperature, &SuiteOptions { threads: threads()? })?;
    grid.run = run_echo(json!({
        "command": "scan",
        "seed": g.seed,
        "temperature": g.temperature.get(),
        "id": path_str(&a.id),
        "ood": path_str(&a.ood),
        "orders": orders.iter().map(|o| o.to_string()).collect::<Vec<_>>(),
        "v_terms": v_terms.iter().map(|v| v.name()).collect::<Vec<_>>(),
    }));
    write_report(&grid, &a.out)?;

    print!("{:<8}", "v\\order");
    for o in &orders {
        print!(" {:>6}", o.to_string());
    }
    println!();
    for (r, v) in v_terms.iter().enumerate() {
        print!("{:<8}", v.name());
        for c in 0..orders.len() {
            print!(" {:>6.3}", grid.cells[r * orders.len() + c].auroc);
        }
        println!();
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(a: &VerifyArgs, g: &Globals) -> Result<ExitCode> {
    let report = run_verify(&VerifyConfig {
        cases: a.cases,
        seed: g.seed,
        fault: a.inject_fault.clone(),
    })?;
    for c in &report.checks {
        println!(
            "{} {:<26} {:>6} cases  worst {:.3e} (tol {:.0e})  {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.cases,
            c.worst,
            c.tolerance,
            c.note
        );
    }
    if report.all_passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        let failed: Vec<_> = report.failed().map(|c| c.name).collect();
        eprintln!("error: failed checks: {}", failed.join(", "));
        Ok(ExitCode::from(2))
    }
}

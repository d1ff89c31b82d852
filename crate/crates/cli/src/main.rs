use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use treecaps::ast::{load_manifest, parse_source, to_source, AstTree, ProgramRecord, Split};
use treecaps::capsules::RoutingKind;
use treecaps::corpus::{generate_split, make_naming_dataset, IDENTIFIER_POOL};
use treecaps::encoder::FeatureMode;
use treecaps::perturb::{apply, ppc, variable_pool, TransformKind};
use treecaps::training::{
    evaluate, grad_check, load_checkpoint, save_checkpoint, split_records, train, Model, ModelConfig, Task,
};
use treecaps::Error;

/// Tree-based capsule networks for source code: corpus generation,
/// training, evaluation and robustness checks.
#[derive(Debug, Parser)]
#[command(name = "treecaps", version)]
struct Cli {
    /// Worker threads for parallel sections (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic mini-C corpus with train/val/test splits.
    GenCorpus(GenCorpusArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write a metrics report.
    Eval(EvalArgs),
    /// Percentage of predictions changed by a program transformation.
    Ppc(PpcArgs),
    /// Apply one program transformation to a single program.
    Perturb(PerturbArgs),
    /// Compare analytic and finite-difference gradients on a small model.
    GradCheck(GradCheckArgs),
}

#[derive(Debug, Args)]
struct GenCorpusArgs {
    /// Number of algorithm classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Programs per class.
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for manifest.jsonl and metadata.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Classify,
    Name,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RoutingArg {
    Vts,
    Drsw,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FeaturesArg {
    Type,
    Token,
    Combine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TransformArg {
    Vn,
    Us,
    Ps,
    Identity,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
    All,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classify => Task::Classify,
            TaskArg::Name => Task::Name,
        }
    }
}

impl From<RoutingArg> for RoutingKind {
    fn from(r: RoutingArg) -> Self {
        match r {
            RoutingArg::Vts => RoutingKind::Vts,
            RoutingArg::Drsw => RoutingKind::Drsw,
        }
    }
}

impl From<FeaturesArg> for FeatureMode {
    fn from(f: FeaturesArg) -> Self {
        match f {
            FeaturesArg::Type => FeatureMode::Type,
            FeaturesArg::Token => FeatureMode::Token,
            FeaturesArg::Combine => FeatureMode::Combine,
        }
    }
}

impl From<TransformArg> for TransformKind {
    fn from(t: TransformArg) -> Self {
        match t {
            TransformArg::Vn => TransformKind::VariableRenaming,
            TransformArg::Us => TransformKind::UnusedStatement,
            TransformArg::Ps => TransformKind::PermuteStatement,
            TransformArg::Identity => TransformKind::Identity,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Classify)]
    task: TaskArg,
    #[arg(long, value_enum, default_value_t = RoutingArg::Vts)]
    routing: RoutingArg,
    /// Node features fed to the encoder.
    #[arg(long, value_enum, default_value_t = FeaturesArg::Combine)]
    features: FeaturesArg,
    /// Corpus directory or manifest.jsonl file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of convolution layers, which is also the PVC dimension M.
    #[arg(long, default_value_t = 8)]
    layers: usize,
    /// Routing iterations r.
    #[arg(long, default_value_t = 3)]
    iterations: usize,
    /// Secondary capsule count N_sc (DRSW only).
    #[arg(long, default_value_t = 100)]
    num_secondary: usize,
    /// Secondary capsule dimension D_sc (DRSW only).
    #[arg(long, default_value_t = 16)]
    secondary_dim: usize,
    /// Code capsule dimension D_cc.
    #[arg(long, default_value_t = 16)]
    code_dim: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 10)]
    patience: usize,
    /// Stop after this many seconds of training.
    #[arg(long)]
    time_budget: Option<f64>,
    /// Stop once the validation metric reaches this value.
    #[arg(long)]
    target_metric: Option<f64>,
    /// Per-epoch JSONL log [default: <out>.log.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus directory or manifest.jsonl file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Metrics JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PpcArgs {
    #[arg(long)]
    model: PathBuf,
    /// Corpus directory or manifest.jsonl file.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    transform: TransformArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Full per-program report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    /// Mini-C source file, or an AST JSON file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    transform: TransformArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output file in the input's format [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, value_enum, default_value_t = RoutingArg::Vts)]
    routing: RoutingArg,
    #[arg(long, value_enum, default_value_t = TaskArg::Classify)]
    task: TaskArg,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Largest relative error accepted.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: cannot start worker threads: {e}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs one subcommand; `Ok(false)` means it completed but its check failed.
fn run(command: Command) -> Result<bool, Error> {
    match command {
        Command::GenCorpus(a) => gen_corpus(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval_cmd(a).map(|_| true),
        Command::Ppc(a) => ppc_cmd(a).map(|_| true),
        Command::Perturb(a) => perturb_cmd(a).map(|_| true),
        Command::GradCheck(a) => grad_check_cmd(a),
    }
}

fn gen_corpus(a: GenCorpusArgs) -> Result<(), Error> {
    let manifest = generate_split(a.classes, a.per_class, a.seed)?;
    let path = manifest.save(&a.out)?;
    println!("wrote {} programs to {}", manifest.records.len(), path.display());
    Ok(())
}

fn load_records(path: &Path, task: Task) -> Result<Vec<ProgramRecord>, Error> {
    let file = if path.is_dir() { path.join("manifest.jsonl") } else { path.to_path_buf() };
    let records = load_manifest(&file)?;
    if task == Task::Name && records.iter().any(|r| r.name_subwords.is_none()) {
        return make_naming_dataset(&records);
    }
    Ok(records)
}

fn select(records: &[ProgramRecord], split: SplitArg) -> Vec<&ProgramRecord> {
    match split {
        SplitArg::Train => split_records(records, Split::Train),
        SplitArg::Val => split_records(records, Split::Val),
        SplitArg::Test => split_records(records, Split::Test),
        SplitArg::All => records.iter().collect(),
    }
}

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: path.to_path_buf(), source }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(file_error(path))
}

fn train_cmd(a: TrainArgs) -> Result<(), Error> {
    let task = Task::from(a.task);
    let records = load_records(&a.data, task)?;
    let cfg = ModelConfig {
        task,
        routing: a.routing.into(),
        feature_mode: a.features.into(),
        lr: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        num_layers: a.layers,
        iterations: a.iterations,
        num_secondary: a.num_secondary,
        secondary_dim: a.secondary_dim,
        code_dim: a.code_dim,
        batch_size: a.batch_size,
        patience: a.patience,
        time_budget_secs: a.time_budget,
        target_metric: a.target_metric,
        ..ModelConfig::default()
    };
    let log = a.log.unwrap_or_else(|| a.out.with_extension("log.jsonl"));
    let report = train(&records, &cfg, Some(&log))?;
    save_checkpoint(&a.out, &report.model)?;
    println!(
        "best epoch {} of {}: validation {:.4}; checkpoint {}",
        report.best_epoch,
        report.log.len(),
        report.best_val,
        a.out.display()
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<(), Error> {
    let model: Model<f32> = load_checkpoint(&a.model)?;
    let records = load_records(&a.data, model.config.task)?;
    let metrics = evaluate(&model, &select(&records, a.split))?;
    write_json(&a.out, &metrics)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn ppc_cmd(a: PpcArgs) -> Result<(), Error> {
    let model: Model<f32> = load_checkpoint(&a.model)?;
    let records = load_records(&a.data, model.config.task)?;
    let train_trees = split_records(&records, Split::Train);
    let pool = if train_trees.is_empty() {
        variable_pool(records.iter().map(|r| &r.ast))?
    } else {
        variable_pool(train_trees.iter().map(|r| &r.ast))?
    };
    let programs: Vec<ProgramRecord> = select(&records, a.split).into_iter().cloned().collect();
    let predict = |t: &AstTree| model.predict_tree(t).map(|p| p.index);
    let report = ppc(predict, &programs, a.transform.into(), &pool, a.seed)?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    println!(
        "PPC({}) = {:.2} ({} changed, {} unchanged, {} inapplicable)",
        report.kind.short(),
        report.ppc,
        report.changed,
        report.unchanged,
        report.inapplicable
    );
    Ok(())
}

fn perturb_cmd(a: PerturbArgs) -> Result<(), Error> {
    let bytes = fs::read(&a.input).map_err(file_error(&a.input))?;
    let is_json = bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{');
    let tree = if is_json {
        AstTree::from_json(&bytes)?
    } else {
        let text = String::from_utf8(bytes).map_err(|_| Error::InvalidArgument(format!("{} is not UTF-8", a.input.display())))?;
        parse_source(&text)?
    };
    let pool: Vec<String> = IDENTIFIER_POOL.iter().map(|s| s.to_string()).collect();
    let result = apply(a.transform.into(), &tree, &pool, a.seed)?;
    let mut output = if is_json { result.tree.to_json()? } else { to_source(&result.tree)?.into_bytes() };
    if !output.ends_with(b"\n") {
        output.push(b'\n');
    }
    match &a.out {
        Some(path) => fs::write(path, &output).map_err(file_error(path))?,
        None => std::io::stdout().write_all(&output)?,
    }
    if result.applied {
        eprintln!("applied {} at {}", TransformKind::from(a.transform).short(), result.site);
    } else {
        eprintln!("transformation not applicable; program unchanged");
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs) -> Result<bool, Error> {
    let report = grad_check(a.task.into(), a.routing.into(), a.eps, a.seed)?;
    println!(
        "max relative error {:.3e} over {} coordinates (worst: {})",
        report.max_relative_error, report.coordinates, report.worst
    );
    let pass = report.max_relative_error <= a.tolerance;
    if !pass {
        eprintln!("error: gradient check failed, tolerance is {:.0e}", a.tolerance);
    }
    Ok(pass)
}

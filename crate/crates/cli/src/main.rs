//! `dwx` — counting, comparison, table verification, gradient checking,
//! and training for the depthwise-expansion network family.
//!
//! Exit codes: 0 success, 1 runtime failure (a failing verification,
//! training divergence, output I/O), 2 usage or spec error.
//!
//! Thread count for batch parallelism comes from `--threads`, else the
//! `DWX_THREADS` environment variable, else all cores. Every command is
//! deterministic given its flags and seed regardless of thread count.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dwx_core::analysis::{compare_networks, count_network, CostReport, CountingPolicy};
use dwx_core::arch::{build_network, builtin_spec, NetworkSpec, BUILTIN_NAMES};
use dwx_core::data::{load_cifar, synth_dataset, CifarVariant, Dataset};
use dwx_core::gradcheck::standard_suite;
use dwx_core::rng::Rng;
use dwx_core::specfile::{emit_spec, parse_spec};
use dwx_core::tables::verify_tables;
use dwx_core::train::{save_checkpoint, train, TrainConfig};
use dwx_core::Error;

const THREADS_ENV: &str = "DWX_THREADS";

#[derive(Parser)]
#[command(
    name = "dwx",
    version,
    about = "Depthwise-expansion network cost model, kernels, and training",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for batch parallelism (default: DWX_THREADS env var,
    /// else all cores). Results are identical at any setting.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer parameter and multiply-accumulate counts for one network
    Count(CountArgs),
    /// Totals and pairwise ratios for several networks side by side
    Compare(CompareArgs),
    /// Recompute every embedded reference-table cell and report PASS/FAIL
    VerifyTables(VerifyTablesArgs),
    /// Finite-difference gradient check over every op and block kind
    Gradcheck(GradcheckArgs),
    /// Train a network and write the log CSV and final checkpoint
    Train(TrainArgs),
    /// Print the canonical spec document for a network
    EmitSpec(EmitSpecArgs),
}

/// Where a network comes from: a builtin name (with knobs) or a spec
/// document. Exactly one of the two.
#[derive(Args)]
struct SpecSource {
    /// Builtin network name
    #[arg(long, value_name = "NAME", conflicts_with = "spec")]
    builtin: Option<String>,
    /// Spec document path
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Width multiplier alpha (builtin only)
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Channel multiplier (builtin only)
    #[arg(long = "m", visible_alias = "multiplier", value_name = "M")]
    m: Option<usize>,
    /// Number of classes (builtin only)
    #[arg(long, value_name = "N")]
    classes: Option<usize>,
}

#[derive(Args)]
struct CountArgs {
    #[command(flatten)]
    source: SpecSource,
    /// Print CSV to standard output instead of the human-readable table
    #[arg(long)]
    csv: bool,
    /// Also write the CSV report to this file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Count a per-output-channel conv bias as if present
    #[arg(long)]
    include_conv_bias: bool,
    /// Report FLOPs (two per multiply-accumulate) instead of MACs
    #[arg(long)]
    flops: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Builtin networks to compare (repeat the flag)
    #[arg(long = "builtin", value_name = "NAME", conflicts_with = "specs")]
    builtins: Vec<String>,
    /// Spec documents to compare (repeat the flag)
    #[arg(long = "spec", value_name = "FILE")]
    specs: Vec<PathBuf>,
    /// Width multiplier alpha applied to every builtin
    #[arg(long, value_name = "A")]
    alpha: Option<f64>,
    /// Channel multiplier applied to every builtin
    #[arg(long = "m", visible_alias = "multiplier", value_name = "M")]
    m: Option<usize>,
    /// Number of classes for every builtin
    #[arg(long, value_name = "N")]
    classes: Option<usize>,
    /// Print CSV instead of the human-readable table
    #[arg(long)]
    csv: bool,
    /// Also write the CSV comparison to this file
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyTablesArgs {
    /// Count a per-output-channel conv bias as if present (sensitivity control)
    #[arg(long)]
    include_conv_bias: bool,
    /// Compare FLOPs (two per multiply-accumulate) against the MAC columns
    /// (sensitivity control: every MAC cell must then FAIL)
    #[arg(long)]
    flops: bool,
    /// Print CSV instead of the per-cell listing
    #[arg(long)]
    csv: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for weights, inputs, probes, and coordinate sampling
    #[arg(long, default_value_t = 17)]
    seed: u64,
    /// Maximum accepted relative error
    #[arg(long, default_value_t = 1e-5)]
    tolerance: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum DatasetKind {
    Cifar10,
    Cifar100,
}

impl DatasetKind {
    fn variant(self) -> CifarVariant {
        match self {
            DatasetKind::Cifar10 => CifarVariant::Cifar10,
            DatasetKind::Cifar100 => CifarVariant::Cifar100,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: SpecSource,

    /// Directory holding the dataset's binary batch files
    #[arg(long, value_name = "DIR", conflicts_with = "synth")]
    data_dir: Option<PathBuf>,
    /// Which binary layout --data-dir holds
    #[arg(long, value_enum, default_value_t = DatasetKind::Cifar10)]
    dataset: DatasetKind,
    /// Train on a generated synthetic dataset instead of files
    #[arg(long)]
    synth: bool,
    /// Synthetic images per class
    #[arg(long, value_name = "N", default_value_t = 50)]
    synth_per_class: usize,
    /// Synthetic pixel noise level
    #[arg(long, value_name = "SIGMA", default_value_t = 0.1)]
    synth_sigma: f64,

    /// Total optimizer steps, rounded up to whole epochs
    #[arg(long, value_name = "N", conflicts_with = "epochs")]
    steps: Option<usize>,
    /// Number of epochs
    #[arg(long, value_name = "N")]
    epochs: Option<usize>,
    /// Images per batch
    #[arg(long, value_name = "N", default_value_t = 128)]
    batch_size: usize,
    /// Base learning rate
    #[arg(long, value_name = "LR", default_value_t = 0.1)]
    lr: f64,
    /// Epochs at which the learning rate is multiplied by the decay factor
    #[arg(long, value_name = "E,E,..", value_delimiter = ',', default_values_t = [150, 225])]
    lr_decay_epochs: Vec<usize>,
    /// Learning-rate decay factor
    #[arg(long, value_name = "F", default_value_t = 0.1)]
    lr_decay_factor: f64,
    /// Momentum coefficient
    #[arg(long, value_name = "MU", default_value_t = 0.9)]
    momentum: f64,
    /// L2 weight decay on conv and classifier weights
    #[arg(long, value_name = "WD", default_value_t = 1e-4)]
    weight_decay: f64,
    /// Random crop + horizontal flip augmentation (on by default)
    #[arg(long, overrides_with = "no_augment")]
    augment: bool,
    /// Disable augmentation
    #[arg(long)]
    no_augment: bool,
    /// Evaluate on the test split every N epochs (0: final epoch only)
    #[arg(long, value_name = "N", default_value_t = 1)]
    eval_every: usize,
    /// Seed for the dataset (when synthetic), weights, and batch order
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Where the per-epoch CSV log goes
    #[arg(long, value_name = "FILE", default_value = "train_log.csv")]
    log_csv: PathBuf,
    /// Where the final checkpoint goes
    #[arg(long, value_name = "FILE", default_value = "model.ckpt")]
    save: PathBuf,
}

#[derive(Args)]
struct EmitSpecArgs {
    #[command(flatten)]
    source: SpecSource,
    /// Write the document here instead of standard output
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

/// Failures split by exit code: usage/spec problems exit 2, everything
/// that goes wrong at runtime exits 1.
enum CliError {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Core errors raised while resolving what to run are usage errors.
fn spec_err(e: Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Core errors raised mid-run are runtime errors.
fn run_err(e: Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

impl SpecSource {
    fn resolve(&self) -> CliResult<NetworkSpec> {
        match (&self.builtin, &self.spec) {
            (Some(name), None) => builtin_spec(
                name,
                self.alpha.unwrap_or(1.0),
                self.m.unwrap_or(1),
                self.classes.unwrap_or(10),
            )
            .map_err(spec_err),
            (None, Some(path)) => {
                if self.alpha.is_some() || self.m.is_some() || self.classes.is_some() {
                    return usage(
                        "--alpha/--m/--classes apply to --builtin; edit the spec document instead",
                    );
                }
                let text = fs::read_to_string(path).map_err(|e| {
                    CliError::Usage(format!("cannot read spec file {}: {e}", path.display()))
                })?;
                parse_spec(&text).map_err(spec_err)
            }
            (None, None) => usage(format!(
                "one of --builtin or --spec is required (builtins: {})",
                BUILTIN_NAMES.join(", ")
            )),
            (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
        }
    }
}

fn policy(include_conv_bias: bool, flops: bool) -> CountingPolicy {
    CountingPolicy { include_conv_bias, report_flops: flops }
}

/// Human-readable per-layer table.
fn render_report(report: &CostReport) -> String {
    let mac_label = if report.policy.report_flops { "flops" } else { "macs" };
    let name_w = report.rows.iter().map(|r| r.layer.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "network {} ({}x{} input)\n{:<name_w$}  {:>12}  {:>12}  {:>14}\n",
        report.network, report.input_hw, report.input_hw, "layer", "out shape", "params", mac_label
    );
    for r in &report.rows {
        let (c, h, w) = r.out_shape;
        s.push_str(&format!(
            "{:<name_w$}  {:>12}  {:>12}  {:>14}\n",
            r.layer,
            format!("{c}x{h}x{w}"),
            r.params,
            r.macs
        ));
    }
    s.push_str(&format!(
        "{:<name_w$}  {:>12}  {:>12}  {:>14}\n",
        "total", "", report.total_params, report.total_macs
    ));
    s.push_str(&format!(
        "totals: {:.3} M params, {:.3} M {mac_label}\n",
        report.total_params as f64 / 1e6,
        report.total_macs as f64 / 1e6
    ));
    s
}

fn cmd_count(args: &CountArgs) -> CliResult<()> {
    let spec = args.source.resolve()?;
    let report =
        count_network(&spec, spec.input_hw, &policy(args.include_conv_bias, args.flops))
            .map_err(run_err)?;
    if args.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", render_report(&report));
    }
    if let Some(out) = &args.out {
        write_file(out, &report.to_csv())?;
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> CliResult<()> {
    let mut specs = Vec::new();
    if !args.builtins.is_empty() {
        for name in &args.builtins {
            specs.push(
                builtin_spec(
                    name,
                    args.alpha.unwrap_or(1.0),
                    args.m.unwrap_or(1),
                    args.classes.unwrap_or(10),
                )
                .map_err(spec_err)?,
            );
        }
    } else if !args.specs.is_empty() {
        if args.alpha.is_some() || args.m.is_some() || args.classes.is_some() {
            return usage(
                "--alpha/--m/--classes apply to --builtin; edit the spec documents instead",
            );
        }
        for path in &args.specs {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Usage(format!("cannot read spec file {}: {e}", path.display()))
            })?;
            specs.push(parse_spec(&text).map_err(spec_err)?);
        }
    }
    if specs.len() < 2 {
        return usage("compare needs at least two networks (--builtin A --builtin B, or --spec)");
    }
    let reports: Vec<CostReport> = specs
        .iter()
        .map(|s| count_network(s, s.input_hw, &CountingPolicy::default()))
        .collect::<Result<_, _>>()
        .map_err(run_err)?;
    let table = compare_networks(&reports).map_err(run_err)?;
    if args.csv {
        print!("{}", table.to_csv());
    } else {
        print!("{}", table.text());
    }
    if let Some(out) = &args.out {
        write_file(out, &table.to_csv())?;
    }
    Ok(())
}

fn cmd_verify_tables(args: &VerifyTablesArgs) -> CliResult<()> {
    let checks =
        verify_tables(&policy(args.include_conv_bias, args.flops)).map_err(run_err)?;
    let failed = checks.iter().filter(|c| !c.pass).count();
    if args.csv {
        println!("table,row,column,computed,computed_millions,expected_millions,tolerance,pass");
        for c in &checks {
            println!(
                "{},{},{},{},{:.6},{},{:.4},{}",
                c.table, c.row, c.column, c.computed, c.computed_millions, c.expected_millions,
                c.tolerance, c.pass
            );
        }
    } else {
        for c in &checks {
            println!(
                "{} {} {} {}: {:.4} M vs {} M (tolerance {:.4})",
                if c.pass { "PASS" } else { "FAIL" },
                c.table,
                c.row,
                c.column,
                c.computed_millions,
                c.expected_millions,
                c.tolerance
            );
        }
        println!("{}/{} cells within tolerance", checks.len() - failed, checks.len());
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} table cells outside tolerance")));
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<()> {
    let entries = standard_suite(args.seed).map_err(run_err)?;
    let mut worst = 0.0f64;
    let name_w = entries.iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in &entries {
        println!(
            "{:<name_w$}  {:>4} coordinates  max rel err {:.3e}",
            e.name, e.checked, e.max_rel_err
        );
        worst = worst.max(e.max_rel_err);
    }
    println!("suite max rel err {worst:.3e} (tolerance {:.0e})", args.tolerance);
    if worst > args.tolerance {
        return Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {worst:.3e} exceeds {:.0e}",
            args.tolerance
        )));
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let spec = args.source.resolve()?;

    // dataset first: epochs may be derived from --steps and the train size
    let mut rng = Rng::new(args.seed);
    let (train_ds, test_ds): (Dataset, Option<Dataset>) = if args.synth {
        let ds = synth_dataset(
            &mut rng,
            spec.num_classes,
            args.synth_per_class,
            spec.input_hw,
            args.synth_sigma,
        )
        .map_err(run_err)?;
        (ds, None)
    } else if let Some(dir) = &args.data_dir {
        let (tr, te) = load_cifar(dir, args.dataset.variant()).map_err(run_err)?;
        (tr, Some(te))
    } else {
        return usage("train needs a dataset: --data-dir DIR or --synth");
    };

    let steps_per_epoch = train_ds.len().div_ceil(args.batch_size).max(1);
    let epochs = match (args.steps, args.epochs) {
        (Some(steps), _) => {
            if steps == 0 {
                return usage("--steps must be at least 1");
            }
            steps.div_ceil(steps_per_epoch)
        }
        (None, Some(epochs)) => epochs,
        (None, None) => TrainConfig::default().epochs,
    };

    let config = TrainConfig {
        base_lr: args.lr,
        lr_decay_epochs: args.lr_decay_epochs.iter().copied().filter(|&e| e < epochs).collect(),
        lr_decay_factor: args.lr_decay_factor,
        momentum: args.momentum,
        weight_decay: args.weight_decay,
        epochs,
        batch_size: args.batch_size,
        seed: args.seed,
        augment: args.augment || !args.no_augment,
        eval_every: args.eval_every,
    };
    config.validate().map_err(spec_err)?;

    let mut net = build_network(&spec, &mut rng).map_err(run_err)?;
    println!(
        "training {} ({} params) on {} images for {} epochs ({} steps/epoch)",
        spec.name,
        net.num_params(),
        train_ds.len(),
        epochs,
        steps_per_epoch
    );
    let log = train(&mut net, &train_ds, test_ds.as_ref(), &config).map_err(|e| match e {
        Error::Divergence { step } => {
            CliError::Runtime(format!("training diverged (non-finite loss) at step {step}"))
        }
        other => run_err(other),
    })?;

    // with no test split the evaluation column re-scores the training set
    // in inference mode; label it accordingly
    let eval_label = if test_ds.is_some() { "test acc" } else { "eval acc" };
    for row in &log.rows {
        match row.test_acc {
            Some(acc) => println!(
                "epoch {:>4}  step {:>7}  lr {:.5}  loss {:.4}  train acc {:.4}  {eval_label} {:.4}",
                row.epoch, row.step, row.lr, row.loss, row.train_acc, acc
            ),
            None => println!(
                "epoch {:>4}  step {:>7}  lr {:.5}  loss {:.4}  train acc {:.4}",
                row.epoch, row.step, row.lr, row.loss, row.train_acc
            ),
        }
    }
    write_file(&args.log_csv, &log.to_csv())?;
    save_checkpoint(&args.save, &net)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", args.save.display())))?;
    println!(
        "final train acc {:.4}{}; log {} checkpoint {}",
        log.final_train_acc().unwrap_or(f64::NAN),
        log.final_test_acc().map(|a| format!(", {eval_label} {a:.4}")).unwrap_or_default(),
        args.log_csv.display(),
        args.save.display()
    );
    Ok(())
}

fn cmd_emit_spec(args: &EmitSpecArgs) -> CliResult<()> {
    let spec = args.source.resolve()?;
    let doc = emit_spec(&spec);
    match &args.out {
        Some(path) => write_file(path, &doc)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.parse::<usize>().map_err(|_| {
                CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return usage("thread count must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(format!("cannot configure thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads(cli.threads).and_then(|()| match &cli.command {
        Command::Count(args) => cmd_count(args),
        Command::Compare(args) => cmd_compare(args),
        Command::VerifyTables(args) => cmd_verify_tables(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Train(args) => cmd_train(args),
        Command::EmitSpec(args) => cmd_emit_spec(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

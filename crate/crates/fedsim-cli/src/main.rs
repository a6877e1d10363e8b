//! Command-line front end: partition populations, run single experiments,
//! sweep hyperparameter grids, and reshape results for plotting.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use fedsim::config::{DataConfig, SweepFileConfig, TrainFileConfig};
use fedsim::{
    best_csv, manifest, metrics_csv, parse_sweep_csv, plot_csv, plot_rows, population_stats,
    run_experiment, run_sweep, sort_and_partition, sweep_csv, synthesize_population, Dataset,
    FigureKind, Population, PriorDistribution,
};

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated averaging simulator with tunable label skew"
)]
struct Cli {
    /// Cap the worker thread pool (default: one worker per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a client population, write its manifest, and print stats.
    Partition(PartitionArgs),
    /// Run one experiment from a config file and write the metrics CSV.
    Train(TrainArgs),
    /// Run a hyperparameter grid sweep and write sweep + best-cell CSVs.
    Sweep(SweepArgs),
    /// Print population statistics for an existing manifest.
    Stats(StatsArgs),
    /// Reshape a sweep CSV into long-format rows for one figure.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Config file providing the [data] section.
    #[arg(long, conflicts_with = "cifar")]
    config: Option<PathBuf>,
    /// Directory with the six CIFAR-10 binary batch files.
    #[arg(long)]
    cifar: Option<PathBuf>,
    /// Dirichlet concentration (use `inf` for exactly identical clients).
    #[arg(long, conflicts_with = "sort_shards")]
    alpha: Option<f64>,
    /// Sort-and-partition baseline: shards charged to each client.
    #[arg(long)]
    sort_shards: Option<usize>,
    /// Number of clients.
    #[arg(long)]
    clients: usize,
    /// Examples per client (Dirichlet scheme only).
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Metrics CSV output path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Sweep CSV output path (one row per cell x repeat).
    #[arg(long)]
    out: PathBuf,
    /// Best-cell table output path (default: `<out>` with a `_best` suffix).
    #[arg(long)]
    best: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct PlotdataArgs {
    /// A sweep CSV previously written by `fedsim sweep`.
    #[arg(long)]
    sweep: PathBuf,
    /// `accuracy-vs-alpha` or `momentum-vs-alpha`.
    #[arg(long)]
    figure: String,
    #[arg(long)]
    out: PathBuf,
}

fn load_train_data_for_partition(args: &PartitionArgs) -> anyhow::Result<Dataset> {
    if let Some(dir) = &args.cifar {
        let (train, _) = fedsim::cifar::load_cifar10(dir)?;
        return Ok(train);
    }
    if let Some(path) = &args.config {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        // Accept either a train or a sweep config; only [data] is used.
        let data: DataConfig = TrainFileConfig::from_toml_str(&text)
            .map(|cfg| cfg.data)
            .or_else(|train_err| {
                SweepFileConfig::from_toml_str(&text)
                    .map(|cfg| cfg.data)
                    .map_err(|_| train_err)
            })?;
        let (train, _) = data.load()?;
        return Ok(train);
    }
    bail!("partition needs a data source: pass --cifar DIR or --config FILE");
}

fn print_population_report(population: &Population) {
    let stats = population_stats(population);
    println!("clients: {}", population.clients.len());
    println!("examples: {}", population.total_examples());
    match population.scheme {
        fedsim::PartitionScheme::Dirichlet { alpha } => println!("scheme: dirichlet alpha={alpha}"),
        fedsim::PartitionScheme::SortShards { shards_per_client } => {
            println!("scheme: sort-shards {shards_per_client} per client")
        }
    }
    println!("mean EMD to prior: {}", stats.mean_emd);
    println!("mean KL to prior (nats): {}", stats.mean_kl);
    println!(
        "class count range: {}..={}",
        stats.min_class_count, stats.max_class_count
    );
    let sizes: Vec<usize> = population.clients.iter().map(|c| c.len()).collect();
    let min = sizes.iter().min().unwrap_or(&0);
    let max = sizes.iter().max().unwrap_or(&0);
    println!("client size range: {min}..={max}");
}

fn cmd_partition(args: PartitionArgs) -> anyhow::Result<()> {
    let train = load_train_data_for_partition(&args)?;
    let population = match (args.alpha, args.sort_shards) {
        (Some(alpha), None) => {
            let size = args.size.context("--size is required with --alpha")?;
            let prior = PriorDistribution::uniform(train.num_classes());
            synthesize_population(train.labels(), args.clients, size, alpha, &prior, args.seed)?
        }
        (None, Some(shards)) => sort_and_partition(
            train.labels(),
            train.num_classes(),
            args.clients,
            shards,
            args.seed,
        )?,
        (None, None) => bail!("choose a scheme: --alpha A or --sort-shards K"),
        (Some(_), Some(_)) => unreachable!("clap forbids both"),
    };
    manifest::write(&population, &args.out)?;
    println!("wrote {}", args.out.display());
    print_population_report(&population);
    Ok(())
}

fn cmd_train(args: TrainArgs) -> anyhow::Result<()> {
    let cfg = TrainFileConfig::from_path(&args.config)?;
    cfg.validate()?;
    let (train, test) = cfg.data.load()?;
    let population = cfg.population.realize(&train)?;
    let output = run_experiment(&cfg.experiment_config(), &train, &test, &population)?;
    fs::write(&args.out, metrics_csv(&cfg.echo(), &output))
        .with_context(|| format!("writing {}", args.out.display()))?;
    if output.diverged {
        eprintln!(
            "warning: run diverged ({})",
            output.divergence_context.as_deref().unwrap_or("unknown")
        );
    }
    let last = output.final_accuracy().unwrap_or(f64::NAN);
    println!(
        "wrote {} ({} rounds, final accuracy {last})",
        args.out.display(),
        output.reports.len() - 1
    );
    Ok(())
}

fn default_best_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
    let ext = out.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    out.with_file_name(format!("{stem}_best.{ext}"))
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    let cfg = SweepFileConfig::from_path(&args.config)?;
    cfg.validate()?;
    let (train, test) = cfg.data.load()?;
    let result = run_sweep(&cfg.sweep_config(), &train, &test)?;
    fs::write(&args.out, sweep_csv(&cfg.echo(), &result))
        .with_context(|| format!("writing {}", args.out.display()))?;
    let best_path = args.best.unwrap_or_else(|| default_best_path(&args.out));
    fs::write(&best_path, best_csv(&result)?)
        .with_context(|| format!("writing {}", best_path.display()))?;
    println!(
        "wrote {} ({} cells x {} repeats) and {}",
        args.out.display(),
        result.cells.len(),
        result.repeats,
        best_path.display()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> anyhow::Result<()> {
    let population = manifest::read(&args.manifest)?;
    print_population_report(&population);
    Ok(())
}

fn cmd_plotdata(args: PlotdataArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&args.sweep)
        .with_context(|| format!("reading {}", args.sweep.display()))?;
    let result = parse_sweep_csv(&text)?;
    let figure: FigureKind = args.figure.parse()?;
    let rows = plot_rows(&result, figure)?;
    fs::write(&args.out, plot_csv(&rows))
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!("wrote {} ({} rows)", args.out.display(), rows.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size the thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let result = match cli.command {
        Command::Partition(args) => cmd_partition(args),
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Plotdata(args) => cmd_plotdata(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

//! `tgan`: fit, sample, evaluate and analyze tabular GAN models.
//!
//! Results go to stdout as `name,value` lines or CSV; progress goes to stderr.
//! Exit codes: 0 success, 2 invalid arguments or configuration, 3 unreadable
//! or corrupt input, 4 training diverged.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tgan::evaluation::{
    efficacy, nmi_distance, nmi_matrix, nn_distance_hist, BucketSpec, ClassifierSpec, NmiNorm, DEFAULT_BUCKETS,
    DEFAULT_NN_BINS,
};
use tgan::sampling::{sample, SampleRequest};
use tgan::schema::{infer_schema, read_raw_csv, type_rows, Schema, Table, DEFAULT_MAX_CARDINALITY};
use tgan::training::{train_with, ModelBundle};
use tgan::transform::{count_modes_with, KdeOptions, DEFAULT_GRID_POINTS};
use tgan::Error;

use config::{env_seed, resolve_train, FileConfig, TrainFlags};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Diverged(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Diverged(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::NonFiniteLoss { .. } => CliError::Diverged(msg),
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Parse { .. }
            | Error::UnknownCategory { .. }
            | Error::MissingValue { .. }
            | Error::HeaderMismatch { .. }
            | Error::EmptyInput
            | Error::AllMissingColumn(_)
            | Error::NonFiniteInput(_)
            | Error::VersionMismatch(_)
            | Error::CorruptFile(_)
            | Error::InvalidBundle(_) => CliError::Io(msg),
            _ => CliError::Usage(msg),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "tgan", version, about = "Synthetic tabular data with a GAN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV table and write a bundle.
    Fit(FitArgs),
    /// Draw synthetic rows from a bundle.
    Sample(SampleArgs),
    /// Compare real and synthetic tables.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Inspect a real table.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Args)]
struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema JSON; inferred from the data when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Output bundle path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Periodic checkpoint path.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Distinct-value threshold below which numeric columns are discrete.
    #[arg(long, default_value_t = DEFAULT_MAX_CARDINALITY)]
    max_cardinality: usize,
    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of rows.
    #[arg(long)]
    n: usize,
    /// Defaults to TGAN_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    batch_size: usize,
}

#[derive(Args)]
struct SchemaArgs {
    /// Schema JSON shared by every table; inferred from the first table when absent.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_MAX_CARDINALITY)]
    max_cardinality: usize,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Distance between the pairwise NMI matrices of two tables.
    Nmi {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        synth: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BUCKETS)]
        buckets: usize,
        /// sqrt, product or mean.
        #[arg(long, default_value = "sqrt")]
        nmi_norm: NmiNorm,
        /// Directory for nmi_real.csv and nmi_synth.csv.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Nearest-neighbor distances from probe rows to standard rows.
    Nn {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        standard: PathBuf,
        #[arg(long, default_value_t = DEFAULT_NN_BINS)]
        bins: usize,
        /// Probe rows drawn without replacement; 0 keeps all.
        #[arg(long, default_value_t = 1000)]
        probe_rows: usize,
        /// Standard rows drawn without replacement; 0 keeps all.
        #[arg(long, default_value_t = 10_000)]
        standard_rows: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Histogram CSV (bin_left,bin_right,count).
        #[arg(long)]
        hist_out: Option<PathBuf>,
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Train classifiers on real and synthetic tables, score on real test rows.
    Efficacy {
        #[arg(long)]
        real_train: PathBuf,
        #[arg(long)]
        synth_train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// dt:depth=N or mlp:N[,N...][:epochs=N]; repeatable.
        #[arg(long = "classifier", default_values = ["dt:depth=10", "mlp:100"])]
        classifiers: Vec<ClassifierSpec>,
        /// Label column; defaults to the schema's label.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Report CSV.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        schema: SchemaArgs,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Count density modes of each continuous column.
    Modes {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
        #[command(flatten)]
        schema: SchemaArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit(args) => fit(args),
        Command::Sample(args) => sample_cmd(args),
        Command::Eval(cmd) => eval(cmd),
        Command::Analyze(AnalyzeCommand::Modes {
            data,
            grid_points,
            schema,
        }) => modes(&data, grid_points, &schema),
    }
}

fn read_schema(path: &Path) -> CliResult<Schema> {
    Ok(Schema::load(path)?)
}

/// Loads `paths` under one schema: the given file, else inferred from the first table.
fn load_tables(paths: &[&Path], args: &SchemaArgs) -> CliResult<Vec<Table>> {
    let mut schema = args.schema.as_deref().map(read_schema).transpose()?;
    let mut out = Vec::with_capacity(paths.len());
    for path in paths {
        let file = std::fs::File::open(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let raw = read_raw_csv(std::io::BufReader::new(file))?;
        let s = match &schema {
            Some(s) => s.clone(),
            None => infer_schema(&raw.rows, &raw.header, args.max_cardinality)?,
        };
        if s.names() != raw.header {
            return Err(Error::HeaderMismatch {
                expected: s.names(),
                found: raw.header,
            }
            .into());
        }
        out.push(type_rows(&raw.rows, s.clone())?);
        schema = Some(s);
    }
    Ok(out)
}

fn write_output(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn stdout_line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

fn fit(args: FitArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let config = resolve_train(&file, &args.train)?;
    let data = args
        .data
        .or(file.data.clone())
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let out = args
        .out
        .or(file.out.clone())
        .ok_or_else(|| CliError::Usage("--out is required".into()))?;
    let checkpoint = args.checkpoint.or(file.checkpoint.clone());
    let schema_args = SchemaArgs {
        schema: args.schema.or(file.schema.clone()),
        max_cardinality: args.max_cardinality,
    };
    let table = load_tables(&[&data], &schema_args)?.remove(0);
    eprintln!(
        "fitting {} rows x {} columns for {} epochs (seed {})",
        table.n_rows(),
        table.schema().len(),
        config.epochs,
        config.seed
    );
    let start = Instant::now();
    let (bundle, history) = train_with(&table, &config, checkpoint.as_deref(), |s| {
        let ckpt = s
            .checkpoint
            .as_ref()
            .map(|p| format!(" checkpoint {}", p.display()))
            .unwrap_or_default();
        eprintln!(
            "epoch {}/{} loss_g {:.4} loss_d {:.4} {:.1}s{ckpt}",
            s.epoch,
            s.epochs,
            s.mean_loss_g,
            s.mean_loss_d,
            start.elapsed().as_secs_f64()
        );
    })?;
    bundle.save(&out)?;
    let last = history.last();
    stdout_line(&format!(
        "loss_g,{}\nloss_d,{}\nseconds,{:.3}\nbundle,{}\n",
        last.map_or(f64::NAN, |r| r.loss_g),
        last.map_or(f64::NAN, |r| r.loss_d),
        start.elapsed().as_secs_f64(),
        out.display()
    ));
    Ok(())
}

fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    })
}

fn sample_cmd(args: SampleArgs) -> CliResult<()> {
    if args.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    if args.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be positive".into()));
    }
    let seed = resolve_seed(args.seed)?;
    let bundle = ModelBundle::load(&args.model)?;
    let table = sample(
        &bundle,
        &SampleRequest {
            n_rows: args.n,
            seed,
            batch_size: args.batch_size,
        },
    )?;
    match &args.out {
        Some(path) => {
            table.save_csv(path)?;
            eprintln!("wrote {} rows to {}", table.n_rows(), path.display());
        }
        None => stdout_line(&table.to_csv_string()),
    }
    Ok(())
}

/// `k` rows drawn without replacement, kept in their original order.
fn subsample(table: &Table, k: usize, rng: &mut ChaCha8Rng) -> Table {
    if k == 0 || k >= table.n_rows() {
        return table.clone();
    }
    let mut idx: Vec<usize> = (0..table.n_rows()).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.sort_unstable();
    table.select(&idx)
}

fn eval(cmd: EvalCommand) -> CliResult<()> {
    match cmd {
        EvalCommand::Nmi {
            real,
            synth,
            buckets,
            nmi_norm,
            out_dir,
            schema,
        } => {
            let tables = load_tables(&[&real, &synth], &schema)?;
            let spec = BucketSpec::fit(&tables[0], buckets)?;
            let a = nmi_matrix(&tables[0], Some(&spec), nmi_norm)?;
            let b = nmi_matrix(&tables[1], Some(&spec), nmi_norm)?;
            let (rmse, mae) = nmi_distance(&a, &b)?;
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir)
                    .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
                write_output(&dir.join("nmi_real.csv"), &a.to_csv_string())?;
                write_output(&dir.join("nmi_synth.csv"), &b.to_csv_string())?;
            }
            stdout_line(&format!("rmse,{rmse}\nmae,{mae}\n"));
        }
        EvalCommand::Nn {
            probe,
            standard,
            bins,
            probe_rows,
            standard_rows,
            seed,
            hist_out,
            schema,
        } => {
            if bins == 0 {
                return Err(CliError::Usage("--bins must be positive".into()));
            }
            let tables = load_tables(&[&standard, &probe], &schema)?;
            let mut rng = ChaCha8Rng::seed_from_u64(resolve_seed(seed)?);
            let standard = subsample(&tables[0], standard_rows, &mut rng);
            let probe = subsample(&tables[1], probe_rows, &mut rng);
            eprintln!("nearest neighbors for {} probe rows among {}", probe.n_rows(), standard.n_rows());
            let report = nn_distance_hist(&probe, &standard, bins)?;
            if let Some(path) = hist_out {
                write_output(&path, &report.histogram_csv())?;
            }
            let mut sorted = report.distances.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            let median = if sorted.is_empty() { f64::NAN } else { sorted[sorted.len() / 2] };
            stdout_line(&format!(
                "probe_rows,{}\nstandard_rows,{}\nmean,{}\nmedian,{}\nmin,{}\nfraction_exact,{}\n",
                probe.n_rows(),
                standard.n_rows(),
                report.mean(),
                median,
                sorted.first().copied().unwrap_or(f64::NAN),
                report.fraction_exact()
            ));
        }
        EvalCommand::Efficacy {
            real_train,
            synth_train,
            test,
            classifiers,
            label,
            seed,
            out,
            schema,
        } => {
            let tables = load_tables(&[&real_train, &synth_train, &test], &schema)?;
            let report = efficacy(
                &tables[0],
                &tables[1],
                &tables[2],
                &classifiers,
                label.as_deref(),
                resolve_seed(seed)?,
            )?;
            let mut text = String::from("classifier,trained_on,accuracy,macro_f1\n");
            for s in &report.scores {
                text.push_str(&format!("{},{},{},{}\n", s.classifier, s.trained_on, s.accuracy, s.macro_f1));
            }
            if let Some(path) = out {
                write_output(&path, &text)?;
            }
            stdout_line(&text);
        }
    }
    Ok(())
}

fn modes(data: &Path, grid_points: usize, schema: &SchemaArgs) -> CliResult<()> {
    let table = load_tables(&[data], schema)?.remove(0);
    let mut text = String::from("column,bandwidth,mode_count,multimodal\n");
    let mut multimodal = 0;
    let mut total = 0;
    for (i, col) in table.schema().columns.iter().enumerate() {
        if !col.is_continuous() {
            continue;
        }
        let report = count_modes_with(
            &col.name,
            &table.real_column(i),
            KdeOptions {
                grid_points,
                ..KdeOptions::default()
            },
        )?;
        total += 1;
        multimodal += usize::from(report.is_multimodal());
        text.push_str(&format!(
            "{},{},{},{}\n",
            col.name,
            report.bandwidth,
            report.mode_count,
            report.is_multimodal()
        ));
    }
    eprintln!("{multimodal} of {total} continuous columns are multimodal");
    stdout_line(&text);
    Ok(())
}

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;

use multikpi::domain::{ImpressionRecord, KpiKind, UnknownKpi};
use multikpi::harness::{cell_label, run_experiment, ExperimentSpec, HarnessError, SimulationSpec};
use multikpi::inventory::{self, CsvError, LogSampling, SynthesisParams};
use multikpi::report::{write_summary, write_time_series};
use multikpi::Method;

#[derive(Parser)]
#[command(name = "multikpi", version, about = "Multi-KPI PID bid control over replayed auction logs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize an impression log as CSV.
    Generate(GenerateArgs),
    /// Run one campaign and write its per-interval report.
    Simulate(SimulateArgs),
    /// Run the baseline and the method x priority grid, per seed.
    Experiment(ExperimentArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct GenerateArgs {
    /// Synthesis parameters (JSON); defaults are used for missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Writes `inventory.csv` here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Campaign, goals and controller settings (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Impression log CSV; synthesized from the config when absent.
    #[arg(long)]
    inventory: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "smart", value_parser = parse_method)]
    method: Method,
    /// Comma-separated KPIs, highest priority first; defaults to the goal order.
    #[arg(long, value_delimiter = ',', value_parser = parse_kpi)]
    priority: Option<Vec<KpiKind>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment spec (JSON); the built-in template when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Uses this log instead of synthesizing one per seed. Under the default
    /// `replay` sampling only the first seed runs.
    #[arg(long)]
    inventory: Option<PathBuf>,
    /// Replaces the spec's seed list with this single seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Restricts the grid to one method (the baseline always runs).
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Restricts the grid to one priority order.
    #[arg(long, value_delimiter = ',', value_parser = parse_kpi)]
    priority: Option<Vec<KpiKind>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: multikpi::selector::SelectorError| e.to_string())
}

fn parse_kpi(s: &str) -> Result<KpiKind, String> {
    s.trim().parse().map_err(|e: UnknownKpi| e.to_string())
}

enum CliError {
    Validation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Io(m) => m,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        CliError::Validation(e.to_string())
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_inventory(path: &Path) -> Result<Vec<ImpressionRecord>, CliError> {
    inventory::load_csv(path).map_err(|e| match e {
        CsvError::Io(io) => io_err(path, io),
        other => CliError::Validation(format!("{}: {other}", path.display())),
    })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut fs::File) -> io::Result<()>) -> Result<(), CliError> {
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f(&mut file).map_err(|e| io_err(path, e))
}

/// Writes a fully rendered output to stdout; a closed pipe is not an error.
fn write_stdout(render: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), CliError> {
    let mut buf = Vec::new();
    render(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    match io::stdout().lock().write_all(&buf) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn to_io(e: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> io::Error {
    io::Error::other(e)
}

fn generate(args: GenerateArgs) -> Result<(), CliError> {
    let mut params: SynthesisParams = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthesisParams::default(),
    };
    if let Some(seed) = args.seed {
        params.seed = seed;
    }
    let records = inventory::generate_inventory(&params).map_err(|e| CliError::Validation(e.to_string()))?;
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            let path = dir.join("inventory.csv");
            write_file(&path, |f| inventory::write_csv(&records, io::BufWriter::new(f)).map_err(to_io))?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
        }
        None => write_stdout(|buf| inventory::write_csv(&records, buf).map_err(to_io))?,
    }
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let spec: SimulationSpec = read_json(&args.config)?;
    let records = match &args.inventory {
        Some(path) => load_inventory(path)?,
        None => spec.synthesize(args.seed)?,
    };
    let run = spec.run(&records, args.method, args.priority.unwrap_or_default())?;
    let label = if args.method == Method::Baseline { cell_label(Method::Baseline, &[]) } else { cell_label(run.method, &run.priorities) };

    let emit = |w: &mut dyn Write| -> io::Result<()> {
        match args.format {
            Format::Json => {
                serde_json::to_writer_pretty(&mut *w, &run).map_err(to_io)?;
                writeln!(w)
            }
            Format::Csv => write_time_series(&run, w).map_err(to_io),
        }
    };
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            let name = match args.format {
                Format::Json => format!("{label}.json"),
                Format::Csv => format!("{label}.csv"),
            };
            let path = dir.join(name);
            write_file(&path, |f| emit(f))?;
            eprintln!("wrote {}", path.display());
        }
        None => write_stdout(|buf| emit(buf))?,
    }
    Ok(())
}

fn experiment(args: ExperimentArgs) -> Result<(), CliError> {
    let mut spec = match &args.config {
        Some(path) => read_json(path)?,
        None => ExperimentSpec::template(),
    };
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    } else if args.inventory.is_some() && spec.sampling == LogSampling::Replay {
        spec.seeds.truncate(1);
    }
    if let Some(method) = args.method {
        spec.methods = vec![method];
    }
    if let Some(order) = args.priority {
        spec.priority_orders = vec![order];
    }
    let output = match &args.inventory {
        Some(path) => {
            let records = load_inventory(path)?;
            multikpi::harness::run_experiment_on(&spec, &records)?
        }
        None => run_experiment(&spec)?,
    };

    let Some(dir) = &args.out else {
        return write_stdout(|buf| match args.format {
            Format::Json => writeln!(buf, "{}", output.report.to_json()),
            Format::Csv => write_summary(&output.report, buf).map_err(to_io),
        });
    };

    create_dir(dir)?;
    match args.format {
        Format::Json => write_file(&dir.join("report.json"), |f| writeln!(f, "{}", output.report.to_json()))?,
        Format::Csv => write_file(&dir.join("summary.csv"), |f| write_summary(&output.report, f).map_err(to_io))?,
    }
    let table = output.report.render_table();
    write_file(&dir.join("table.txt"), |f| f.write_all(table.as_bytes()))?;
    for cell in &output.runs {
        let seed_dir = dir.join(format!("seed_{}", cell.seed));
        create_dir(&seed_dir)?;
        write_file(&seed_dir.join(format!("{}.csv", cell.label)), |f| write_time_series(&cell.run, f).map_err(to_io))?;
    }
    write_stdout(|buf| buf.write_all(table.as_bytes()))?;
    eprintln!("wrote report and {} time series to {}", output.runs.len(), dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match cli.command {
        Command::Generate(args) => generate(args),
        Command::Simulate(args) => simulate(args),
        Command::Experiment(args) => experiment(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

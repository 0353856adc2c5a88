use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stresslab::dataio::{load_csv_dataset, remove_duplicates};
use stresslab::pipeline::{run_experiment, write_outputs, ExperimentConfig, ARTIFACT_FILE, REPORT_FILE, TABLES_FILE};
use stresslab::report::{compare_reports, figure_csv, figure_rows, ExperimentReport, COMPARISON_SETS};
use stresslab::Error;

const SEED_ENV: &str = "STRESSLAB_SEED";

#[derive(Parser)]
#[command(name = "stresslab", version, about = "Stress-level classification experiments on tabular survey data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full experiment and write report.json, tables.md and the model artifact.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Dataset CSV; overrides `data_path` in the config.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed. Precedence: this flag, then STRESSLAB_SEED, then the config (default 42).
        #[arg(long)]
        seed: Option<u64>,
        /// One small candidate per model. Fast, but does not reproduce published numbers.
        #[arg(long)]
        quick: bool,
    },
    /// Print the markdown tables of a report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
    /// Per-cell accuracy deltas between two reports (second minus first).
    Compare {
        #[arg(long = "report", num_args = 1, required = true)]
        reports: Vec<PathBuf>,
    },
    /// Write dataset1_comparison.csv and dataset2_comparison.csv.
    Figures {
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Load a dataset against its descriptor and print a summary.
    ValidateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

/// Process exit status for a failure.
#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::Config(_) | Error::IncompatibleVersion { .. } => 2,
            Error::Io { .. }
            | Error::Format(_)
            | Error::Schema(_)
            | Error::EmptyDataset
            | Error::UnimputableColumn(_)
            | Error::Stratification(_) => 3,
            _ => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

type CliResult = Result<(), Failure>;

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::load(path).map_err(|e| Failure::config(e.to_string()))
}

fn load_report(path: &Path) -> Result<ExperimentReport, Failure> {
    let s = std::fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    ExperimentReport::from_json(&s).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn data_path(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> Result<PathBuf, Failure> {
    flag.or_else(|| cfg.data_path.clone())
        .ok_or_else(|| Failure::config("no dataset given: pass --data or set data_path in the config"))
}

fn resolve_seed(flag: Option<u64>, config_seed: u64) -> Result<u64, Failure> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::config(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(config_seed),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult {
    std::fs::write(path, contents).map_err(|e| Failure {
        code: 4,
        message: format!("cannot write {}: {e}", path.display()),
    })
}

fn cmd_run(config: PathBuf, data: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>, quick: bool) -> CliResult {
    let mut cfg = load_config(&config)?;
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    cfg.quick |= quick;
    if cfg.quick {
        log::warn!("quick mode: grids are reduced to one candidate per model");
    }
    let data = data_path(&cfg, data)?;
    let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    let outcome = run_experiment(&cfg, &data)?;
    write_outputs(&outcome, &out)?;
    for f in [REPORT_FILE, TABLES_FILE, ARTIFACT_FILE] {
        println!("wrote {}", out.join(f).display());
    }
    let b = &outcome.report.best;
    println!("best_model={} config={} accuracy={:.3}", b.model, b.config, 100.0 * b.accuracy);
    Ok(())
}

fn cmd_compare(reports: Vec<PathBuf>) -> CliResult {
    let [a, b] = reports.as_slice() else {
        return Err(Failure::config("compare takes exactly two --report arguments"));
    };
    let (ra, rb) = (load_report(a)?, load_report(b)?);
    let cmp = compare_reports(&ra, &rb).map_err(|e| Failure::config(e.to_string()))?;
    if let Some((x, y)) = &cmp.dataset_mismatch {
        println!("warning: comparing different datasets ({x} vs {y})");
    }
    println!("{:<40} {:>10} {:>10} {:>10}", "cell", "a (%)", "b (%)", "delta");
    for d in &cmp.deltas {
        println!("{:<40} {:>10.3} {:>10.3} {:>+10.3}", d.label, 100.0 * d.a, 100.0 * d.b, d.delta_points);
    }
    Ok(())
}

fn cmd_figures(reports: Vec<PathBuf>, out: PathBuf) -> CliResult {
    let loaded: Vec<ExperimentReport> = reports.iter().map(|p| load_report(p)).collect::<Result<_, _>>()?;
    for r in &loaded {
        if r.dataset.comparison_set.is_none() {
            log::warn!("report for `{}` has no comparison_set; it appears in no figure", r.dataset.name);
        }
    }
    std::fs::create_dir_all(&out).map_err(|e| Failure {
        code: 4,
        message: format!("cannot create {}: {e}", out.display()),
    })?;
    let refs: Vec<&ExperimentReport> = loaded.iter().collect();
    for set in COMPARISON_SETS {
        let path = out.join(format!("{set}_comparison.csv"));
        write(&path, figure_csv(&figure_rows(set, &refs))?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_validate(config: PathBuf, data: Option<PathBuf>) -> CliResult {
    let cfg = load_config(&config)?;
    let path = data_path(&cfg, data)?;
    let d = load_csv_dataset(&path, &cfg.dataset)?;
    let missing = d.missing_cells();
    let duplicates = d.n_rows() - remove_duplicates(&d).n_rows();
    println!("dataset: {}", cfg.dataset.name);
    println!("rows: {} (expected {})", d.n_rows(), cfg.dataset.expected_rows);
    println!("features: {} (expected {})", d.features.ncols(), cfg.dataset.expected_feature_count);
    println!("missing cells: {}", missing.len());
    println!("duplicate rows: {duplicates}");
    for (name, count) in d.label_names.iter().zip(d.class_counts()) {
        println!("class {name}: {count}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            data,
            out,
            seed,
            quick,
        } => cmd_run(config, data, out, seed, quick),
        Command::Report { report } => load_report(&report).map(|r| print!("{}", r.render_tables())),
        Command::Compare { reports } => cmd_compare(reports),
        Command::Figures { reports, out } => cmd_figures(reports, out),
        Command::ValidateData { config, data } => cmd_validate(config, data),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

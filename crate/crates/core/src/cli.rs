//! Command-line front end: `run`, `ensemble` and `centrality`.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::centrality::{debtrank_all, katz_scores, rank_banks, LiabilityMatrix};
use crate::engine::{simulate, ModePolicy};
use crate::ensemble::{output_files, run_ensemble, write_outputs, EnsembleConfig};
use crate::params::{Mode, SimParams};

#[derive(Debug, Parser)]
#[command(name = "ibrisk", version, about = "Interbank lending simulator with risk-ranked counterparty selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one run; writes run_record.json and events.ndjson.
    Run {
        #[command(flatten)]
        common: Common,
        /// Seed of the run.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Override the mode from the config.
        #[arg(long)]
        mode: Option<Mode>,
    },
    /// Paired ensemble over several modes; writes ensemble.csv,
    /// profile_<mode>.csv and summary.json.
    Ensemble {
        #[command(flatten)]
        common: Common,
        /// Run k uses seed `seed + k`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Modes to compare; repeat the flag. Defaults to all three.
        #[arg(long)]
        mode: Vec<Mode>,
        #[arg(long, default_value_t = 1000)]
        runs: usize,
        /// Give every mode its own seed range instead of sharing seeds.
        #[arg(long)]
        unpaired: bool,
    },
    /// Score a liability snapshot; writes bank_id,debtrank,katz,rank_debt,rank_katz.
    Centrality {
        /// CSV rows `borrower,lender,amount`; duplicate pairs are summed.
        #[arg(long)]
        liabilities: PathBuf,
        /// CSV rows `bank,capital` for banks 0..B.
        #[arg(long)]
        capital: PathBuf,
        /// Directory for centrality.csv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        /// Seed for breaking rank ties.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Key-value parameter file; missing keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overwrite existing output files.
    #[arg(long)]
    pub force: bool,
    /// Start from the 100-bank profile instead of the 50-bank one.
    #[arg(long)]
    pub full_scale: bool,
    /// Report what was written to stderr.
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { common, seed, mode } => cmd_run(&common, seed, mode),
        Command::Ensemble {
            common,
            seed,
            mode,
            runs,
            unpaired,
        } => cmd_ensemble(&common, seed, mode, runs, unpaired),
        Command::Centrality {
            liabilities,
            capital,
            out,
            force,
            seed,
        } => cmd_centrality(&liabilities, &capital, out.as_deref(), force, seed),
    }
}

fn load_params(common: &Common) -> Result<SimParams, CliError> {
    let base = if common.full_scale {
        SimParams::default()
    } else {
        SimParams::desk_scale()
    };
    let Some(path) = &common.config else {
        return Ok(base);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    SimParams::from_config_str_over(&text, base)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Create `dir` and make sure none of `files` would be clobbered.
fn prepare_out(dir: &Path, files: &[String], force: bool) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| failed(format!("cannot create {}: {e}", dir.display())))?;
    if !force {
        if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return Err(failed(format!("{} exists; pass --force to overwrite", f.display())));
        }
    }
    Ok(())
}

fn worker_count() -> Result<usize, CliError> {
    match std::env::var("SIM_THREADS") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("SIM_THREADS must be a nonnegative integer, got `{v}`"))),
        Err(_) => Ok(0),
    }
}

pub const RUN_FILES: [&str; 2] = ["run_record.json", "events.ndjson"];

fn cmd_run(common: &Common, seed: u64, mode: Option<Mode>) -> Result<(), CliError> {
    let mut params = load_params(common)?;
    if let Some(m) = mode {
        params.mode = m;
    }
    let files: Vec<String> = RUN_FILES.iter().map(|s| s.to_string()).collect();
    prepare_out(&common.out, &files, common.force)?;
    let (record, world) = simulate(params, seed, true).map_err(failed)?;

    let mut f = BufWriter::new(fs::File::create(common.out.join(RUN_FILES[0])).map_err(failed)?);
    serde_json::to_writer_pretty(&mut f, &record).map_err(failed)?;
    writeln!(f).map_err(failed)?;
    f.flush().map_err(failed)?;

    let mut f = BufWriter::new(fs::File::create(common.out.join(RUN_FILES[1])).map_err(failed)?);
    for e in &world.events {
        serde_json::to_writer(&mut f, e).map_err(failed)?;
        writeln!(f).map_err(failed)?;
    }
    f.flush().map_err(failed)?;
    if common.verbose {
        let t_fd = record.t_fd.map_or("censored".to_string(), |t| t.to_string());
        eprintln!(
            "seed {seed}: t_fd {t_fd}, losses {:.3}, cascade {}, {} events written to {}",
            record.losses,
            record.cascade_size,
            world.events.len(),
            common.out.display()
        );
    }
    Ok(())
}

fn cmd_ensemble(common: &Common, seed: u64, modes: Vec<Mode>, runs: usize, unpaired: bool) -> Result<(), CliError> {
    let params = load_params(common)?;
    if runs == 0 {
        return Err(CliError::Config("--runs must be at least 1".into()));
    }
    let modes = if modes.is_empty() {
        vec![Mode::Normal, Mode::Transparent, Mode::Fast]
    } else {
        modes
    };
    let mut policies: Vec<ModePolicy> = Vec::new();
    for m in modes {
        let p = ModePolicy::new(m, params.rank_metric);
        if !policies.contains(&p) {
            policies.push(p);
        }
    }
    let workers = worker_count()?;
    prepare_out(&common.out, &output_files(&policies), common.force)?;
    let mut cfg = EnsembleConfig::new(params, runs, seed, policies);
    cfg.paired = !unpaired;
    let table = run_ensemble(&cfg, workers).map_err(failed)?;
    for row in table.failures() {
        eprintln!("warning: run {} (seed {}) failed: {}", row.run_id, row.seed, row.outcome.as_ref().unwrap_err());
    }
    write_outputs(&table, &common.out).map_err(failed)?;
    if common.verbose {
        eprintln!(
            "{} runs over {} modes ({} failed) written to {}",
            runs,
            table.modes.len(),
            table.failures().count(),
            common.out.display()
        );
    }
    Ok(())
}

/// Data rows of a headerless-or-headed CSV with their 1-based line numbers.
/// A first row whose first field is not a number is taken as a header.
fn csv_rows(path: &Path, width: usize) -> Result<Vec<(u64, Vec<String>)>, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(k as u64 + 1, |p| p.line());
            CliError::Input(format!("{}:{line}: {e}", path.display()))
        })?;
        let line = rec.position().map_or(k as u64 + 1, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if k == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != width {
            return Err(CliError::Input(format!(
                "{}:{line}: expected {width} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(rows)
}

fn field<T: std::str::FromStr>(path: &Path, line: u64, name: &str, raw: &str) -> Result<T, CliError> {
    raw.parse()
        .map_err(|_| CliError::Input(format!("{}:{line}: bad {name} `{raw}`", path.display())))
}

/// Parse the capital and liability files into a snapshot.
pub fn read_snapshot(liabilities: &Path, capital: &Path) -> Result<(LiabilityMatrix, Vec<f64>), CliError> {
    let cap_rows = csv_rows(capital, 2)?;
    let n = cap_rows.len();
    let mut cap = vec![None; n];
    for (line, row) in &cap_rows {
        let bank: usize = field(capital, *line, "bank id", &row[0])?;
        let c: f64 = field(capital, *line, "capital", &row[1])?;
        if bank >= n {
            return Err(CliError::Input(format!(
                "{}:{line}: bank id {bank} out of range for {n} banks",
                capital.display()
            )));
        }
        if !c.is_finite() || cap[bank].replace(c).is_some() {
            return Err(CliError::Input(format!(
                "{}:{line}: duplicate or non-finite capital for bank {bank}",
                capital.display()
            )));
        }
    }
    let cap: Vec<f64> = cap.into_iter().map(|c| c.unwrap_or(0.0)).collect();

    let mut l = LiabilityMatrix::zeros(n);
    for (line, row) in csv_rows(liabilities, 3)? {
        let i: usize = field(liabilities, line, "borrower", &row[0])?;
        let j: usize = field(liabilities, line, "lender", &row[1])?;
        let a: f64 = field(liabilities, line, "amount", &row[2])?;
        let bad = if i >= n || j >= n {
            Some(format!("bank id out of range for {n} banks"))
        } else if i == j {
            Some("a bank cannot owe itself".to_string())
        } else if !(a.is_finite() && a >= 0.0) {
            Some(format!("amount must be finite and nonnegative, got {a}"))
        } else {
            None
        };
        if let Some(msg) = bad {
            return Err(CliError::Input(format!("{}:{line}: {msg}", liabilities.display())));
        }
        l.add(i, j, a);
    }
    Ok((l, cap))
}

fn cmd_centrality(
    liabilities: &Path,
    capital: &Path,
    out: Option<&Path>,
    force: bool,
    seed: u64,
) -> Result<(), CliError> {
    let (l, cap) = read_snapshot(liabilities, capital)?;
    let debt = debtrank_all(&l, &cap, 1.0).map_err(failed)?;
    let katz = katz_scores(&l, 1.0).map_err(failed)?.scores;
    let rank_debt = rank_banks(&debt, seed);
    let rank_katz = rank_banks(&katz, seed);

    let sink: Box<dyn Write> = match out {
        Some(dir) => {
            prepare_out(dir, &["centrality.csv".to_string()], force)?;
            Box::new(fs::File::create(dir.join("centrality.csv")).map_err(failed)?)
        }
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["bank_id", "debtrank", "katz", "rank_debt", "rank_katz"])
        .map_err(failed)?;
    for b in 0..cap.len() {
        w.write_record([
            b.to_string(),
            debt[b].to_string(),
            katz[b].to_string(),
            rank_debt.of(b).to_string(),
            rank_katz.of(b).to_string(),
        ])
        .map_err(failed)?;
    }
    w.flush().map_err(failed)
}

impl clap::ValueEnum for Mode {
    fn value_variants<'a>() -> &'a [Self] {
        &[Mode::Normal, Mode::Transparent, Mode::Fast]
    }

    fn to_possible_value(&self) -> Option<clap::builder::PossibleValue> {
        Some(clap::builder::PossibleValue::new(self.as_str()))
    }
}

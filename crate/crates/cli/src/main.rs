//! `overparam` command-line driver.
//!
//! Exit codes: 0 success, 1 validation failure, 2 usage or configuration
//! error, 3 simulation refused because the task geometry is infeasible.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use overparam::learners::Learner;
use overparam::{panels, presets};
use overparam::sweep::{self, SweepRow, SweepSummary};
use overparam::validate::{run_validation, ValidationOptions};
use overparam::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "overparam", version, about = "Min-norm STL / MTL / continual learning: closed forms and Monte-Carlo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form curves over the configured grid.
    Theory(ConfigArgs),
    /// Monte-Carlo estimates, one row per theory row.
    Simulate(RunArgs),
    /// Theory and Monte-Carlo rows interleaved, with agreement verdicts.
    Sweep(RunArgs),
    /// Identity, expectation and reduction checks.
    Validate(ValidateArgs),
    /// Data for a reference panel (fig1a, fig1b, fig1c, fig1d).
    Figure(FigureArgs),
    /// Plot series selected from a sweep CSV by a panel spec.
    Series(SeriesArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional JSON summary path.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    io: ConfigArgs,
    #[command(flatten)]
    mc: McArgs,
}

#[derive(Args)]
struct McArgs {
    /// Overrides the configured number of trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Overrides the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
    /// Draws for each expectation check.
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    /// Optional JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Corrupt one identity to confirm the harness detects it.
    #[arg(long, hide = true)]
    perturb: bool,
}

#[derive(Args)]
struct FigureArgs {
    /// Panel name.
    name: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SeriesArgs {
    /// Sweep CSV.
    #[arg(long)]
    csv: PathBuf,
    /// JSON panel spec.
    #[arg(long)]
    panel: PathBuf,
    /// JSON output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying its process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

impl From<anyhow::Error> for Failure {
    fn from(err: anyhow::Error) -> Self {
        let code = match err.downcast_ref::<Error>() {
            Some(Error::Infeasible { .. }) => 3,
            _ => 2,
        };
        Self { code, err }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        anyhow::Error::from(err).into()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Theory(a) => cmd_theory(&a),
        Command::Simulate(a) => cmd_run(&a, false),
        Command::Sweep(a) => cmd_run(&a, true),
        Command::Validate(a) => cmd_validate(&a),
        Command::Figure(a) => cmd_figure(&a),
        Command::Series(a) => cmd_series(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(anyhow::anyhow!("--jobs must be at least 1").into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ExperimentConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(cfg)
}

fn write_rows(rows: &[SweepRow], out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
            sweep::write_csv(rows, io::BufWriter::new(f))?;
        }
        None => sweep::write_csv(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn write_json<T: serde::Serialize>(value: &T, path: &Path) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).context("serialising summary")?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_theory(a: &ConfigArgs) -> Result<u8, Failure> {
    let cfg = load_config(&a.config)?;
    let feas = cfg.gram.feasibility();
    if !feas.feasible {
        eprintln!(
            "note: task geometry is not realisable (smallest gram eigenvalue {:.6e}); \
             rows are closed-form only and cannot be simulated",
            feas.min_eigenvalue
        );
    }
    let rows = sweep::theory_rows(&cfg)?;
    write_rows(&rows, a.out.as_deref())?;
    if let Some(path) = &a.summary {
        write_json(&SweepSummary::theory_only(&cfg), path)?;
    }
    Ok(0)
}

fn apply_overrides(cfg: &mut ExperimentConfig, mc: &McArgs) -> Result<(), Failure> {
    if let Some(r) = mc.trials {
        cfg.trials = r;
    }
    if let Some(s) = mc.seed {
        cfg.seed = s;
    }
    if cfg.trials < 2 {
        return Err(Error::TooFewTrials(cfg.trials).into());
    }
    Ok(())
}

fn cmd_run(a: &RunArgs, with_theory: bool) -> Result<u8, Failure> {
    let mut cfg = load_config(&a.io.config)?;
    apply_overrides(&mut cfg, &a.mc)?;
    set_jobs(a.mc.jobs)?;
    let out = run_config(&cfg)?;
    let rows: Vec<SweepRow> = if with_theory {
        out.rows.clone()
    } else {
        out.mc_rows().cloned().collect()
    };
    write_rows(&rows, a.io.out.as_deref())?;
    if let Some(path) = &a.io.summary {
        write_json(&out.summary, path)?;
    }
    Ok(0)
}

fn run_config(cfg: &ExperimentConfig) -> Result<sweep::SweepOutput, Failure> {
    let learner = Learner::default();
    let label = if cfg.name == cfg.method.as_str() {
        cfg.name.clone()
    } else {
        format!("{} {}", cfg.name, cfg.method)
    };
    let out = sweep::simulate(cfg, &learner, |pt| {
        eprintln!("[{label}] sigma={} m={} p={}", pt.sigma, pt.m, pt.p);
    })?;
    let s = &out.summary;
    eprintln!(
        "[{label}] agreement: {} pass, {} fail, {} not applicable",
        s.passed, s.failed, s.not_applicable
    );
    Ok(out)
}

fn cmd_validate(a: &ValidateArgs) -> Result<u8, Failure> {
    set_jobs(a.jobs)?;
    let opts = ValidationOptions {
        expectation_draws: a.draws,
        perturb: a.perturb,
        ..Default::default()
    };
    let report = run_validation(a.seed, &opts);
    let mut stdout = io::stdout().lock();
    for line in report.lines() {
        writeln!(stdout, "{line}").context("writing report")?;
    }
    let passed = report.passed();
    writeln!(stdout, "validation {}", if passed { "PASSED" } else { "FAILED" }).context("writing report")?;
    if let Some(path) = &a.out {
        write_json(&report, path)?;
    }
    Ok(if passed { 0 } else { 1 })
}

fn cmd_figure(a: &FigureArgs) -> Result<u8, Failure> {
    let panel = presets::panel(&a.name, a.trials, a.seed)?;
    if panel.configs.iter().any(|c| c.trials < 2) && panel.simulate {
        return Err(Error::TooFewTrials(a.trials.unwrap_or(0)).into());
    }
    set_jobs(a.jobs)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for cfg in &panel.configs {
        if panel.simulate {
            let out = run_config(cfg)?;
            rows.extend(out.rows);
            summaries.push(out.summary);
        } else {
            rows.extend(sweep::theory_rows(cfg)?);
            summaries.push(SweepSummary::theory_only(cfg));
        }
    }
    write_rows(&rows, Some(&a.out.join(format!("{}.csv", panel.name))))?;
    write_json(&summaries, &a.out.join(format!("{}_summary.json", panel.name)))?;
    let spec = panels::default_panel(panel.name)?;
    write_json(&spec, &a.out.join(format!("{}_panel.json", panel.name)))?;
    if !panel.simulate {
        let feas = panel.configs[0].gram.feasibility();
        let note = format!(
            "{}: theory-only panel.\n\
             The requested task geometry (equal pairwise cosine {:.6} across {} tasks) is not \
             positive semidefinite: its smallest gram eigenvalue is {:.6e}. No set of real task \
             vectors has this geometry, so no Monte-Carlo rows were produced. The closed-form \
             rows evaluate the formulas on the requested norms and distances.\n",
            panel.name,
            presets::opposed_cosine(),
            presets::PANEL_TASKS,
            feas.min_eigenvalue
        );
        fs::write(a.out.join(format!("{}_NOTE.txt", panel.name)), note).context("writing note")?;
        eprintln!("note: {} is theory-only (infeasible task geometry)", panel.name);
    }
    Ok(0)
}

fn cmd_series(a: &SeriesArgs) -> Result<u8, Failure> {
    let file = fs::File::open(&a.csv).with_context(|| format!("opening {}", a.csv.display()))?;
    let rows = sweep::read_csv(io::BufReader::new(file)).with_context(|| format!("reading {}", a.csv.display()))?;
    let text = fs::read_to_string(&a.panel).with_context(|| format!("reading {}", a.panel.display()))?;
    let spec = panels::PanelSpec::from_json(&text).with_context(|| format!("parsing {}", a.panel.display()))?;
    let data = panels::extract(&rows, &spec);
    match &a.out {
        Some(path) => write_json(&data, path)?,
        None => {
            let text = serde_json::to_string_pretty(&data).context("serialising series")?;
            writeln!(io::stdout().lock(), "{text}").context("writing series")?;
        }
    }
    Ok(0)
}

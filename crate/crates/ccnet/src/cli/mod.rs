//! Command-line surface: `train`, `gradcheck`, `params`, `bench`, `compare`,
//! and `oracle-check`, with one documented exit code per failure class.
//!
//! Formats: configs and models are JSON, metrics are CSV with a header row,
//! reports are JSON or fixed-width text. All numeric output uses dot decimal
//! separators regardless of locale. Set `CCNET_LOG=debug` for trace logging.

pub mod config;
pub mod model_io;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    self, ComparisonMetrics, CostRow, GradcheckConfig, GradcheckReport, OracleCheckReport,
    RunMetrics,
};
use crate::prefix_weights::count_parameters;

pub use config::{parse_config, RunConfig};
pub use model_io::{load_model, model_to_bytes, parse_model, save_model, FORMAT_VERSION};

/// Success.
pub const EXIT_OK: i32 = 0;
/// Bad command line (unknown subcommand, malformed flags).
pub const EXIT_USAGE: i32 = 2;
/// Config or model file failed schema parsing.
pub const EXIT_CONFIG: i32 = 3;
/// A cross-field or capacity validation failed.
pub const EXIT_VALIDATION: i32 = 4;
/// Training diverged.
pub const EXIT_DIVERGENCE: i32 = 5;
/// File I/O failed (missing input, unwritable output).
pub const EXIT_IO: i32 = 6;
/// A gradcheck or oracle suite ran and found failures.
pub const EXIT_CHECK_FAILED: i32 = 7;

fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::ConfigSyntax(_) | Error::ModelFormat(_) => EXIT_CONFIG,
        Error::Diverged { .. } => EXIT_DIVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

#[derive(Parser)]
#[command(
    name = "ccnet",
    about = "Conditional-computation layers with prefix-sum weight trees",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a conditional layer on a generated region task; emits per-epoch
    /// metrics CSV and optionally the final model file.
    Train {
        /// JSON config file (defaults apply when omitted).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Metrics CSV path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final model path.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Finite-difference gradient verification across strategies.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Number of random configurations.
        #[arg(long, default_value_t = 50)]
        configs: usize,
    },
    /// Parameter-count report as JSON.
    Params {
        #[arg(long)]
        p: usize,
        #[arg(long)]
        q: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measured forward-cost table across tree depths, as CSV.
    Bench {
        #[arg(long, default_value_t = 8)]
        p: usize,
        #[arg(long, default_value_t = 8)]
        q: usize,
        /// Comma-separated depths.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,6,8")]
        k_list: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the conditional layer and a compute-matched dense baseline on
    /// the same task; emits paired metrics CSV.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the traversal/enumeration and lazy/eager decay equivalence suites.
    OracleCheck {
        #[arg(long, default_value_t = 31)]
        seed: u64,
    },
}

/// Entry point behind the binary: parse `argv`, run, return the exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("CCNET_LOG", "off"),
    )
    .try_init();

    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Train {
            config,
            seed,
            out,
            model_out,
        } => cmd_train(config, seed, out, model_out),
        Command::Gradcheck { seed, configs } => cmd_gradcheck(seed, configs),
        Command::Params { p, q, k, out } => cmd_params(p, q, k, out),
        Command::Bench { p, q, k_list, out } => cmd_bench(p, q, &k_list, out),
        Command::Compare { config, seed, out } => cmd_compare(config, seed, out),
        Command::OracleCheck { seed } => cmd_oracle_check(seed),
    }
}

fn load_run_config(path: Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(&p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_or_print(path: &Option<PathBuf>, content: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, content)?,
        None => print!("{content}"),
    }
    Ok(())
}

fn cmd_train(
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    model_out: Option<PathBuf>,
) -> Result<i32> {
    let mut cfg = load_run_config(config, seed)?;
    if out.is_some() {
        cfg.metrics_out = out;
    }
    if model_out.is_some() {
        cfg.model_out = model_out;
    }
    let task = cfg.build_task()?;
    let mut layer = cfg.build_layer()?;
    let strategy = cfg.credit_strategy();
    let metrics = harness::train(
        &mut layer,
        &task,
        &strategy,
        &cfg.optimizer(),
        cfg.epochs,
        cfg.train_seed(),
    )?;
    write_or_print(&cfg.metrics_out, &run_metrics_csv(&metrics))?;
    if let Some(path) = &cfg.model_out {
        save_model(&layer, path)?;
    }
    eprintln!(
        "trained {} for {} epochs: final mse {:e} ({:.2}s, {})",
        metrics.strategy, cfg.epochs, metrics.final_mse, metrics.wall_time_secs, metrics.total
    );
    Ok(EXIT_OK)
}

fn cmd_gradcheck(seed: u64, configs: usize) -> Result<i32> {
    let report = harness::gradcheck_suite(&GradcheckConfig {
        configs,
        seed,
        ..GradcheckConfig::default()
    })?;
    print!("{}", gradcheck_table(&report));
    Ok(if report.pass() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_params(p: usize, q: usize, k: usize, out: Option<PathBuf>) -> Result<i32> {
    let report = count_parameters(p, q, k)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_or_print(&out, &format!("{json}\n"))?;
    Ok(EXIT_OK)
}

fn cmd_bench(p: usize, q: usize, k_list: &[usize], out: Option<PathBuf>) -> Result<i32> {
    let rows = harness::cost_report(p, q, k_list)?;
    write_or_print(&out, &cost_report_csv(&rows))?;
    Ok(EXIT_OK)
}

fn cmd_compare(config: Option<PathBuf>, seed: Option<u64>, out: Option<PathBuf>) -> Result<i32> {
    let mut cfg = load_run_config(config, seed)?;
    if out.is_some() {
        cfg.metrics_out = out;
    }
    let task = cfg.build_task()?;
    let layer = cfg.build_layer()?;
    let strategy = cfg.credit_strategy();
    let paired = harness::baseline_comparison(
        layer,
        &task,
        &strategy,
        &cfg.optimizer(),
        cfg.epochs,
        cfg.train_seed(),
    )?;
    write_or_print(&cfg.metrics_out, &comparison_csv(&paired))?;
    eprintln!(
        "conditional: mse {:e} with {} params; dense: mse {:e} with {} params",
        paired.conditional.final_mse,
        paired.conditional.params.total_table_entries,
        paired.dense.final_mse,
        paired.dense.params.total_table_entries,
    );
    Ok(EXIT_OK)
}

fn cmd_oracle_check(seed: u64) -> Result<i32> {
    let report = harness::oracle_check(seed)?;
    print!("{}", oracle_check_text(&report));
    Ok(if report.pass() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

// ---------------------------------------------------------------------------
// Output formats
// ---------------------------------------------------------------------------

/// Per-epoch metrics CSV: `epoch,mse,madds,adds,lookups`.
pub fn run_metrics_csv(metrics: &RunMetrics) -> String {
    let mut s = String::from("epoch,mse,madds,adds,lookups\n");
    for r in &metrics.epochs {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.mse, r.multiply_adds, r.additions, r.lookups
        ));
    }
    s
}

/// Paired metrics CSV with a leading `model` column.
pub fn comparison_csv(paired: &ComparisonMetrics) -> String {
    let mut s = String::from("model,epoch,mse,madds,adds,lookups,params\n");
    for (name, run) in [
        ("conditional", &paired.conditional),
        ("dense", &paired.dense),
    ] {
        for r in &run.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                name,
                r.epoch,
                r.mse,
                r.multiply_adds,
                r.additions,
                r.lookups,
                run.params.total_table_entries
            ));
        }
    }
    s
}

/// Cost table CSV: `k,params_exact,params_nominal,fwd_madds,fwd_adds,ratio_gain`.
pub fn cost_report_csv(rows: &[CostRow]) -> String {
    let mut s = String::from("k,params_exact,params_nominal,fwd_madds,fwd_adds,ratio_gain\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.k, r.params_exact, r.params_nominal, r.fwd_madds, r.fwd_adds, r.ratio_gain
        ));
    }
    s
}

/// Fixed-width gradcheck report table.
pub fn gradcheck_table(report: &GradcheckReport) -> String {
    let mut s = format!(
        "gradcheck: {} configs, seed {}, tolerance {:e}\n{:<24} {:>8} {:>14} {:>8}\n",
        report.configs, report.seed, report.tolerance, "group", "checks", "max_rel_err", "status"
    );
    for g in &report.groups {
        s.push_str(&format!(
            "{:<24} {:>8} {:>14.3e} {:>8}\n",
            g.group,
            g.checks,
            g.max_rel_err,
            if g.pass { "ok" } else { "FAIL" }
        ));
    }
    s.push_str(if report.pass() {
        "gradcheck: PASS\n"
    } else {
        "gradcheck: FAIL\n"
    });
    s
}

/// Oracle-suite report lines.
pub fn oracle_check_text(report: &OracleCheckReport) -> String {
    format!(
        "traversal vs enumeration: {} cases, max abs err {:e} (tol {:e}) ... {}\n\
         lazy vs eager L2 decay:   {} schedules, max rel err {:e} (tol {:e}) ... {}\n\
         lazy L1 closed form:      {} nodes, {} mismatches ... {}\n\
         oracle-check: {}\n",
        report.traversal_cases,
        report.traversal_max_abs_err,
        harness::TRAVERSAL_TOL,
        if report.traversal_pass { "ok" } else { "FAIL" },
        report.lazy_l2_schedules,
        report.lazy_l2_max_rel_err,
        harness::LAZY_L2_TOL,
        if report.lazy_l2_pass { "ok" } else { "FAIL" },
        report.l1_nodes_checked,
        report.l1_exact_mismatches,
        if report.l1_pass { "ok" } else { "FAIL" },
        if report.pass() { "PASS" } else { "FAIL" },
    )
}

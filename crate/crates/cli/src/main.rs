//! `hcdir`: generate data, train, evaluate, sweep and self-verify.
//!
//! Exit codes: 0 success, 1 failed verification, 2 configuration error,
//! 3 training failure or divergence, 4 data or checkpoint integrity.

mod config;
mod table;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hcdir_core::dataset::Dataset;
use hcdir_core::error::{Error, Result};
use hcdir_core::graph::Ablation;
use hcdir_core::synthdata::{describe, generate};
use hcdir_core::train_eval::{evaluate_run, run_name, train_run, write_recommendations, ModelKind, SourceCache};
use hcdir_core::verify::{run_suite, Suite};

use config::RunConfigFile;
use table::{Cell, Row};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const THREADS_ENV: &str = "HCDIR_NUM_THREADS";

#[derive(Parser)]
#[command(name = "hcdir", version, about = "Cross-domain cold-start insurance recommender")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset and print its statistics.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; defaults to `<out>/data`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model and write its checkpoint under `<out>/<run name>`.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<ModelKind>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        ablation: Option<Ablation>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the checkpoint's test users as cold users.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Where metrics and rankings go; defaults to the checkpoint's parent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate every (eta, model) pair and print a table.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.5,1.0")]
        etas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "bpr,gru4rec,emcdr-bpr,emcdr-gru,hcdir")]
        models: Vec<ModelKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run built-in gradient, oracle and invariant checks.
    Verify {
        /// Suites to run; all when omitted.
        #[arg(long)]
        suite: Vec<Suite>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Json(_) => 2,
        Error::Divergence(_) | Error::Numeric(_) => 3,
        _ => 4,
    }
}

/// Worker cap from the environment; defaults to the available cores.
fn num_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn cmd_generate(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>) -> Result<()> {
    let mut cfg = RunConfigFile::load(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    let dir = out.unwrap_or_else(|| cfg.out.join("data"));
    generate(&cfg.generator, &dir)?;
    print_json(&describe(&dir)?)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    model: Option<ModelKind>,
    eta: Option<f64>,
    ablation: Option<Ablation>,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = RunConfigFile::load(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(e) = eta {
        cfg.split.eta = e;
    }
    if let Some(a) = ablation {
        cfg.train.ablation = a;
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    cfg.validate()?;
    let ds = Dataset::load(data)?;
    let dir = cfg.out.join(run_name(cfg.model, &cfg.split, &cfg.train));
    let manifest = train_run(cfg.model, &ds, &cfg.split, &cfg.train, &dir, None)?;
    for n in &manifest.notes {
        eprintln!("{n}");
    }
    println!("{}", dir.display());
    match manifest.diverged {
        Some(d) => Err(Error::Divergence(format!("{d}; checkpoint kept at {}", dir.display()))),
        None => Ok(()),
    }
}

fn cmd_eval(checkpoint: &Path, data: &Path, split: &str, out: Option<PathBuf>) -> Result<()> {
    if split != "test" {
        return Err(Error::Config(format!(
            "only the test split is held out as cold users, got `{split}`"
        )));
    }
    let ds = Dataset::load(data)?;
    let (rec, ev) = evaluate_run(checkpoint, &ds)?;
    let out = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out).map_err(|e| Error::Config(format!("cannot create {}: {e}", out.display())))?;
    let name = checkpoint
        .file_name()
        .map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
    rec.append(&out.join(METRICS_FILE))?;
    write_recommendations(&out.join(format!("{name}.recommendations.tsv")), &ds, &ev)?;
    println!("{}", rec.to_line()?);
    Ok(())
}

fn sweep_cell(
    kind: ModelKind,
    eta: f64,
    cfg: &RunConfigFile,
    ds: &Dataset,
    cache: &mut SourceCache,
) -> Cell {
    let mut spec = cfg.split;
    spec.eta = eta;
    let dir = cfg.out.join(run_name(kind, &spec, &cfg.train));
    let mut run = || -> Result<_> {
        let m = train_run(kind, ds, &spec, &cfg.train, &dir, Some(cache))?;
        if let Some(d) = m.diverged {
            return Err(Error::Divergence(d));
        }
        Ok(evaluate_run(&dir, ds)?.0)
    };
    match run() {
        Ok(rec) => Cell::Done(rec),
        Err(e) => Cell::Failed {
            code: exit_code(&e),
            message: e.to_string(),
        },
    }
}

fn cmd_sweep(
    config: Option<&Path>,
    data: Option<PathBuf>,
    etas: &[f64],
    models: &[ModelKind],
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<u8> {
    let mut cfg = RunConfigFile::load(config)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    if let Some(o) = out {
        cfg.out = o;
    }
    for &eta in etas {
        let mut s = cfg.split;
        s.eta = eta;
        s.validate().map_err(|e| Error::Config(e.to_string()))?;
    }
    let data = match data {
        Some(d) => d,
        None => {
            let d = cfg.out.join("data");
            generate(&cfg.generator, &d)?;
            d
        }
    };
    let ds = Dataset::load(&data)?;
    let mut models = models.to_vec();
    models.dedup();

    // Each worker owns whole models so source stages are reused across eta.
    let workers = num_threads()?.min(models.len()).max(1);
    let mut rows: Vec<Row> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let mine: Vec<ModelKind> = models.iter().copied().skip(w).step_by(workers).collect();
                let (cfg, ds) = (&cfg, &ds);
                s.spawn(move || {
                    let mut cache = SourceCache::new();
                    let mut rows = Vec::new();
                    for kind in mine {
                        for &eta in etas {
                            let cell = sweep_cell(kind, eta, cfg, ds, &mut cache);
                            rows.push(Row { eta, model: kind, cell });
                        }
                    }
                    rows
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let order = |m: ModelKind| ModelKind::ALL.iter().position(|&x| x == m);
    rows.sort_by(|a, b| a.eta.total_cmp(&b.eta).then(order(a.model).cmp(&order(b.model))));
    let metrics = cfg.out.join(METRICS_FILE);
    for r in &rows {
        if let Cell::Done(rec) = &r.cell {
            rec.append(&metrics)?;
        }
    }
    let text = table::render(&rows);
    let path = cfg.out.join("sweep.txt");
    std::fs::write(&path, &text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))?;
    print!("{text}");
    let failed: Vec<u8> = rows
        .iter()
        .filter_map(|r| match r.cell {
            Cell::Failed { code, .. } => Some(code),
            Cell::Done(_) => None,
        })
        .collect();
    if !failed.is_empty() {
        eprintln!("{} of {} cells failed", failed.len(), rows.len());
    }
    Ok(failed.first().copied().unwrap_or(0))
}

fn cmd_verify(suites: &[Suite], seed: u64) -> Result<u8> {
    let suites = if suites.is_empty() { Suite::ALL.to_vec() } else { suites.to_vec() };
    let mut ok = true;
    for s in suites {
        for line in run_suite(s, seed)? {
            println!("[{s}] {line}");
            ok &= line.passed;
        }
    }
    Ok(if ok { 0 } else { 1 })
}

/// Exit status of a command that did not fail outright.
fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Command::Generate { config, out, seed } => cmd_generate(config.as_deref(), out, seed).map(|_| 0),
        Command::Train {
            config,
            data,
            model,
            eta,
            ablation,
            seed,
            out,
        } => cmd_train(config.as_deref(), &data, model, eta, ablation, seed, out).map(|_| 0),
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
        } => cmd_eval(&checkpoint, &data, &split, out).map(|_| 0),
        Command::Sweep {
            config,
            data,
            etas,
            models,
            seed,
            out,
        } => cmd_sweep(config.as_deref(), data, &etas, &models, seed, out),
        Command::Verify { suite, seed } => cmd_verify(&suite, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = num_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(exit_code(&e));
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

//! `locdep`: command-line front end.
//!
//! Every run resolves a [`config::RunConfig`] (defaults < `--config` file <
//! flags), executes one command, and writes its artifacts plus `manifest.json`
//! and `run.toml` into the output directory. Feeding `run.toml` back through
//! `--config` repeats the run.
//!
//! Exit codes: 0 success, 1 usage or parameter error, 2 infeasible family
//! parameters, 3 a verified property failed.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser};

use config::{apply, apply_opt, Command, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "locdep", version, about = "Discretized normal approximation for locally dependent sums")]
struct Cli {
    /// Command to run; may instead come from the config file.
    #[arg(value_enum)]
    command: Option<Command>,

    #[command(flatten)]
    opts: Opts,
}

#[derive(Args, Debug, Default)]
struct Opts {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    show_config: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo samples (per cell for table1).
    #[arg(long)]
    samples: Option<u64>,
    /// Truncation tolerance for built PMFs, in (0, 1e-6].
    #[arg(long)]
    eps: Option<f64>,
    /// Output directory [env: LOCDEP_OUTPUT_DIR, default: locdep-out].
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Clamp infeasible matched parameters instead of failing.
    #[arg(long)]
    project_valid: bool,
    /// Random trials for stein-verify and colouring-verify.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    bootstrap_reps: Option<usize>,
    /// Worker threads; results are identical for any value.
    #[arg(long)]
    threads: Option<usize>,
    /// Target law for `dist`: yd, m1, m2, m3 or poisson.
    #[arg(long)]
    target: Option<String>,

    /// hypercube, birthday, mono-edges or triangles.
    #[arg(long)]
    model: Option<String>,
    /// Hypercube dimension, or number of boxes for birthday.
    #[arg(long)]
    d: Option<u64>,
    /// Number of vertices, balls or binomial trials.
    #[arg(long)]
    n: Option<u64>,
    #[arg(long)]
    k: Option<u32>,
    /// Number of colours.
    #[arg(long)]
    c: Option<u32>,
    /// Edge or success probability.
    #[arg(long)]
    p: Option<f64>,
    /// Edge-list file, or complete:N, path:L, example-seven.
    #[arg(long)]
    graph: Option<String>,

    /// Family M1, M2 or M3; chosen automatically when omitted.
    #[arg(long)]
    family: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    g1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    g2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    g3: Option<f64>,
    /// Target mean for matching; defaults to Gamma_1.
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
}

fn resolve(cli: Cli) -> Result<RunConfig> {
    let Cli { command, opts: o } = cli;
    let mut cfg = match (&o.config, command) {
        (Some(path), _) => config::load_config(path)?,
        (None, Some(cmd)) => RunConfig::with_defaults(cmd),
        (None, None) => bail!("no command given; pass one (see --help) or a --config file"),
    };
    let ov = &mut Vec::new();
    if let Some(cmd) = command {
        if cmd != cfg.command {
            cfg.command = cmd;
            ov.push("command".into());
        }
    }
    apply_opt(&mut cfg.seed, o.seed, "seed", ov);
    apply(&mut cfg.samples, o.samples, "samples", ov);
    apply(&mut cfg.eps, o.eps, "eps", ov);
    apply(&mut cfg.output_dir, o.output_dir, "output_dir", ov);
    apply(&mut cfg.project_valid, o.project_valid.then_some(true), "project_valid", ov);
    apply(&mut cfg.trials, o.trials, "trials", ov);
    apply(&mut cfg.bootstrap_reps, o.bootstrap_reps, "bootstrap_reps", ov);
    apply_opt(&mut cfg.threads, o.threads, "threads", ov);
    apply_opt(&mut cfg.target, o.target, "target", ov);

    // `--n` and `--p` feed the model for model commands and the family otherwise.
    let family_cmd = matches!(cfg.command, Command::Pmf | Command::SteinVerify | Command::SolveParams);
    let m = &mut cfg.model;
    apply_opt(&mut m.model, o.model, "model.model", ov);
    apply_opt(&mut m.d, o.d, "model.d", ov);
    apply_opt(&mut m.k, o.k, "model.k", ov);
    apply_opt(&mut m.c, o.c, "model.c", ov);
    apply_opt(&mut m.graph, o.graph, "model.graph", ov);
    let pr = &mut cfg.params;
    if family_cmd {
        apply_opt(&mut pr.n, o.n, "params.n", ov);
        apply_opt(&mut pr.p, o.p, "params.p", ov);
    } else {
        let n = o.n.map(|n| u32::try_from(n).map_err(|_| anyhow::anyhow!("--n {n} is too large"))).transpose()?;
        apply_opt(&mut cfg.model.n, n, "model.n", ov);
        apply_opt(&mut cfg.model.p, o.p, "model.p", ov);
    }
    let pr = &mut cfg.params;
    apply_opt(&mut pr.family, o.family, "params.family", ov);
    apply_opt(&mut pr.g1, o.g1, "params.g1", ov);
    apply_opt(&mut pr.g2, o.g2, "params.g2", ov);
    apply_opt(&mut pr.g3, o.g3, "params.g3", ov);
    apply_opt(&mut pr.mu, o.mu, "params.mu", ov);
    apply_opt(&mut pr.r, o.r, "params.r", ov);
    apply_opt(&mut pr.lambda, o.lambda, "params.lambda", ov);
    apply_opt(&mut pr.omega, o.omega, "params.omega", ov);
    apply_opt(&mut pr.eta, o.eta, "params.eta", ov);
    apply_opt(&mut pr.sigma2, o.sigma2, "params.sigma2", ov);
    cfg.overrides = std::mem::take(ov);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<ExitCode> {
    let show = cli.opts.show_config;
    let cfg = resolve(cli)?;
    if show {
        print!("{}", cfg.to_toml());
        return Ok(ExitCode::SUCCESS);
    }
    cfg.validate()?;
    let outcome = match cfg.threads {
        Some(t) => locdep::par::with_threads(t, || commands::execute(&cfg)),
        None => commands::execute(&cfg),
    }?;
    print!("{}", outcome.summary);
    let written = output::write_run(&cfg, &outcome)?;
    log::info!("wrote {} files to {}", written.len(), cfg.output_dir.display());
    Ok(if outcome.verified { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<locdep::Error>() {
        Some(e) if e.is_infeasible() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

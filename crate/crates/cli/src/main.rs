//! `ddmpc`: data-driven predictive control experiments from the command
//! line. See `ddmpc --help` and the repository README for the workflows.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "ddmpc",
    about = "Data-driven predictive control for unknown LTI systems",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; unset flags fall back to the config
/// file and then to the built-in four-tank benchmark defaults.
#[derive(Args, Clone)]
struct CommonOpts {
    /// Config file (flat key = value with [section] headers).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin name (`four_tank`) or path to a system matrix file.
    #[arg(long)]
    system: Option<String>,
    /// Data length N for collection.
    #[arg(long = "N")]
    n_samples: Option<usize>,
    /// Excitation amplitude.
    #[arg(long)]
    amplitude: Option<f64>,
    /// Noise bound (data collection and online measurements).
    #[arg(long)]
    eps: Option<f64>,
    /// Seed (default: DDMPC_SEED env var, then 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Prediction horizon L.
    #[arg(long = "L")]
    horizon: Option<usize>,
    /// System order upper bound n (default: true order of --system).
    #[arg(long = "n")]
    order: Option<usize>,
    /// Output weight (Q = q I).
    #[arg(long)]
    q: Option<f64>,
    /// Input weight (R = r I).
    #[arg(long)]
    r: Option<f64>,
    /// Weight-vector penalty (default 0.1 / eps).
    #[arg(long)]
    lambda_alpha: Option<f64>,
    /// Slack penalty.
    #[arg(long)]
    lambda_sigma: Option<f64>,
    /// Setpoint input, comma-separated.
    #[arg(long)]
    us: Option<String>,
    /// Setpoint output, comma-separated (default: recomputed equilibrium).
    #[arg(long)]
    ys: Option<String>,
    /// Input box, comma-separated lower bounds.
    #[arg(long)]
    u_min: Option<String>,
    /// Input box, comma-separated upper bounds.
    #[arg(long)]
    u_max: Option<String>,
    /// Initial plant state, comma-separated (default zeros).
    #[arg(long)]
    x0: Option<String>,
    /// Slack bound mode: none | exact | convex:<c>.
    #[arg(long)]
    sigma_mode: Option<String>,
}

fn parse_list(s: &str) -> Result<Vec<f64>, ddmpc_core::Error> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| ddmpc_core::Error::Parse(format!("bad number in list: {tok:?}")))
        })
        .collect()
}

impl CommonOpts {
    fn build(&self) -> Result<ExperimentConfig, ddmpc_core::Error> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        if let Some(v) = &self.system {
            cfg.system = v.clone();
        }
        if let Some(v) = self.n_samples {
            cfg.n_samples = v;
        }
        if let Some(v) = self.amplitude {
            cfg.amplitude = v;
        }
        if let Some(v) = self.eps {
            cfg.eps_bar = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.order {
            cfg.order = Some(v);
        }
        if let Some(v) = self.q {
            cfg.q_weight = v;
        }
        if let Some(v) = self.r {
            cfg.r_weight = v;
        }
        if let Some(v) = self.lambda_alpha {
            cfg.lambda_alpha = Some(v);
        }
        if let Some(v) = self.lambda_sigma {
            cfg.lambda_sigma = v;
        }
        if let Some(v) = &self.us {
            cfg.u_setpoint = Some(parse_list(v)?);
        }
        if let Some(v) = &self.ys {
            cfg.y_setpoint = Some(parse_list(v)?);
        }
        if let Some(v) = &self.u_min {
            cfg.u_min = Some(parse_list(v)?);
        }
        if let Some(v) = &self.u_max {
            cfg.u_max = Some(parse_list(v)?);
        }
        if let Some(v) = &self.x0 {
            cfg.x0 = Some(parse_list(v)?);
        }
        if let Some(v) = &self.sigma_mode {
            cfg.sigma_mode = v.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an open-loop experiment and write clean + noisy trajectory CSVs.
    Collect {
        #[command(flatten)]
        common: CommonOpts,
        /// Output path for the noise-free record.
        #[arg(long, default_value = "data_clean.csv")]
        out_clean: PathBuf,
        /// Output path for the measured (noisy) record.
        #[arg(long, default_value = "data_noisy.csv")]
        out_noisy: PathBuf,
    },
    /// Execute a closed-loop run from a recorded trajectory CSV.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        /// Recorded trajectory the controller predicts with.
        #[arg(long)]
        data: PathBuf,
        /// Scheme: nominal | robust | robust_no_terminal.
        #[arg(long)]
        scheme: Option<String>,
        /// Inputs applied per solve (1..=n).
        #[arg(long)]
        step: Option<usize>,
        /// Total controlled steps.
        #[arg(long = "T")]
        steps: Option<usize>,
        /// Warmup input, comma-separated (default: setpoint input).
        #[arg(long)]
        warmup: Option<String>,
        /// Online measurement noise seed (default: seed + 1000).
        #[arg(long)]
        noise_seed: Option<u64>,
        /// Log CSV path.
        #[arg(long, default_value = "run_log.csv")]
        out: PathBuf,
    },
    /// Reproduce the four-tank benchmark: terminal-constrained 1-step and
    /// n-step runs against the unconstrained baseline.
    ReproduceFourTank {
        #[command(flatten)]
        common: CommonOpts,
        /// Total controlled steps per run.
        #[arg(long = "T")]
        steps: Option<usize>,
        /// Directory for the three log CSVs.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Cartesian-product parameter sweep; one summary row per run.
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        /// Noise bounds to sweep.
        #[arg(long)]
        eps_list: Option<String>,
        /// Weight penalties to sweep ("auto" = 0.1 / eps).
        #[arg(long)]
        lambda_alpha_list: Option<String>,
        /// Slack penalties to sweep.
        #[arg(long)]
        lambda_sigma_list: Option<String>,
        /// Horizons to sweep.
        #[arg(long = "L-list")]
        horizon_list: Option<String>,
        /// Data lengths to sweep.
        #[arg(long = "N-list")]
        n_samples_list: Option<String>,
        /// Seeds to sweep.
        #[arg(long)]
        seed_list: Option<String>,
        /// Scheme for every run.
        #[arg(long)]
        scheme: Option<String>,
        /// Inputs applied per solve.
        #[arg(long)]
        step: Option<usize>,
        /// Total controlled steps per run.
        #[arg(long = "T")]
        steps: Option<usize>,
        /// Parallel jobs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Results CSV path.
        #[arg(long, default_value = "sweep_results.csv")]
        out: PathBuf,
    },
    /// Excitation constants and per-solve prediction-error bound CSV.
    Diagnose {
        #[command(flatten)]
        common: CommonOpts,
        /// Clean trajectory CSV (collected fresh when omitted).
        #[arg(long)]
        data_clean: Option<PathBuf>,
        /// Noisy trajectory CSV (collected fresh when omitted).
        #[arg(long)]
        data_noisy: Option<PathBuf>,
        /// Total controlled steps for the diagnostic run.
        #[arg(long = "T")]
        steps: Option<usize>,
        /// Diagnostics CSV path.
        #[arg(long, default_value = "prediction_error.csv")]
        out: PathBuf,
    },
}

fn dispatch(cli: Cli) -> Result<u8, ddmpc_core::Error> {
    match cli.command {
        Command::Collect {
            common,
            out_clean,
            out_noisy,
        } => {
            let cfg = common.build()?;
            commands::cmd_collect(&cfg, &out_clean, &out_noisy)
        }
        Command::Run {
            common,
            data,
            scheme,
            step,
            steps,
            warmup,
            noise_seed,
            out,
        } => {
            let mut cfg = common.build()?;
            if let Some(v) = scheme {
                cfg.scheme = v;
            }
            if let Some(v) = step {
                cfg.step_size = v;
            }
            if let Some(v) = steps {
                cfg.steps = v;
            }
            if let Some(v) = warmup {
                cfg.warmup = Some(parse_list(&v)?);
            }
            if let Some(v) = noise_seed {
                cfg.noise_seed = Some(v);
            }
            commands::cmd_run(&cfg, &data, &out)
        }
        Command::ReproduceFourTank {
            common,
            steps,
            out_dir,
        } => {
            let mut cfg = common.build()?;
            if let Some(v) = steps {
                cfg.steps = v;
            }
            commands::cmd_reproduce_four_tank(&cfg, &out_dir)
        }
        Command::Sweep {
            common,
            eps_list,
            lambda_alpha_list,
            lambda_sigma_list,
            horizon_list,
            n_samples_list,
            seed_list,
            scheme,
            step,
            steps,
            jobs,
            out,
        } => {
            let mut cfg = common.build()?;
            if let Some(v) = scheme {
                cfg.scheme = v;
            }
            if let Some(v) = step {
                cfg.step_size = v;
            }
            if let Some(v) = steps {
                cfg.steps = v;
            }
            if let Some(v) = jobs {
                cfg.jobs = v;
            }
            let eps = match eps_list {
                Some(v) => parse_list(&v)?,
                None => vec![cfg.eps_bar],
            };
            let la: Vec<Option<f64>> = match lambda_alpha_list {
                Some(v) => v
                    .split(',')
                    .map(|tok| {
                        let tok = tok.trim();
                        if tok == "auto" {
                            Ok(None)
                        } else {
                            tok.parse::<f64>().map(Some).map_err(|_| {
                                ddmpc_core::Error::Parse(format!("bad lambda_alpha {tok:?}"))
                            })
                        }
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![cfg.lambda_alpha],
            };
            let ls = match lambda_sigma_list {
                Some(v) => parse_list(&v)?,
                None => vec![cfg.lambda_sigma],
            };
            let lh: Vec<usize> = match horizon_list {
                Some(v) => v
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse().map_err(|_| {
                            ddmpc_core::Error::Parse(format!("bad horizon {tok:?}"))
                        })
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![cfg.horizon],
            };
            let ln: Vec<usize> = match n_samples_list {
                Some(v) => v
                    .split(',')
                    .map(|tok| {
                        tok.trim().parse().map_err(|_| {
                            ddmpc_core::Error::Parse(format!("bad data length {tok:?}"))
                        })
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![cfg.n_samples],
            };
            let seeds: Vec<u64> = match seed_list {
                Some(v) => v
                    .split(',')
                    .map(|tok| {
                        tok.trim()
                            .parse()
                            .map_err(|_| ddmpc_core::Error::Parse(format!("bad seed {tok:?}")))
                    })
                    .collect::<Result<_, _>>()?,
                None => vec![cfg.seed],
            };
            let lists = commands::SweepLists {
                eps,
                lambda_alpha: la,
                lambda_sigma: ls,
                horizon: lh,
                n_samples: ln,
                seeds,
            };
            commands::cmd_sweep(&cfg, &lists, &out)
        }
        Command::Diagnose {
            common,
            data_clean,
            data_noisy,
            steps,
            out,
        } => {
            let mut cfg = common.build()?;
            cfg.steps = steps.unwrap_or(48);
            commands::cmd_diagnose(&cfg, data_clean.as_deref(), data_noisy.as_deref(), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

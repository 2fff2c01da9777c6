//! Command-line interface: train, predict, eval, benchmark and the
//! distributed master/worker/local-pool roles.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. All outputs go
//! under `--out`. `--seed` fixes every random choice (splits, inducing
//! initialization, minibatch order, partitioning).

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::dataset::{self, Dataset};
use crate::distributed::{self, wire};
use crate::error::{Result, SepError};
use crate::predictor;
use crate::trainer::{self, HyperSchedule, TrainConfig, TrainMode};

#[derive(Parser)]
#[command(
    name = "sepgp",
    about = "Sparse Gaussian process classification trained with scalable expectation propagation",
    version
)]
pub struct Cli {
    /// Worker threads for parallel regions (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Batch,
    Stochastic,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum OptimizerArg {
    Adaptive,
    Adadelta,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum HyperUpdateArg {
    Inner,
    Outer,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum RoleArg {
    LocalPool,
    Master,
    Worker,
}

#[derive(Args, Clone)]
pub struct DataArgs {
    /// Training CSV
    #[arg(long)]
    pub data: PathBuf,
    /// 0-based label column index
    #[arg(long, default_value_t = 0)]
    pub label_col: usize,
}

#[derive(Args, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Inducing-point count
    #[arg(long)]
    pub m: Option<usize>,
    /// Inducing-point count as a fraction of the training size
    #[arg(long)]
    pub m_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    pub hyper_update: Option<HyperUpdateArg>,
    /// Hold out this fraction for test metrics
    #[arg(long)]
    pub test_fraction: Option<f64>,
    /// Disable feature standardization
    #[arg(long)]
    pub no_standardize: bool,
    /// Keep the noise parameter fixed during learning
    #[arg(long)]
    pub freeze_noise: bool,
    /// Disable hyper-parameter learning (pure EP)
    #[arg(long)]
    pub no_learn_hyper: bool,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Resume training from a checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON config file; flags take precedence over its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
pub enum Command {
    /// Fit a model and write model.json + curve.csv
    Train(TrainArgs),
    /// Predict on a CSV (or a 2-d grid) with a trained model
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        label_col: usize,
        /// xmin,xmax,ymin,ymax,steps — raw-coordinate grid export for 2-d models
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error rate and average negative log-likelihood on a labeled CSV
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated train/test protocol over a grid of inducing fractions
    Benchmark {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated inducing fractions
        #[arg(long, default_value = "0.15,0.25,0.5")]
        m_fractions: String,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 250)]
        iters: usize,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Master–worker training (in-process pool or sockets)
    Distributed {
        #[arg(long, value_enum)]
        role: RoleArg,
        /// Worker count for the local pool
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        train: TrainArgsOptional,
        /// Worker addresses (master role), comma separated
        #[arg(long)]
        workers: Option<String>,
        /// Listen address (worker role)
        #[arg(long)]
        listen: Option<String>,
        /// Round timeout in seconds
        #[arg(long, default_value_t = 120)]
        timeout: u64,
    },
}

/// Train flags that are optional in distributed mode (a worker needs none).
#[derive(Args, Clone)]
pub struct TrainArgsOptional {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub label_col: usize,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub m_fraction: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub no_standardize: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Optional values loadable from `--config` (JSON). Flags win.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    m: Option<usize>,
    m_fraction: Option<f64>,
    mode: Option<String>,
    iters: Option<usize>,
    batch_size: Option<usize>,
    damping: Option<f64>,
    seed: Option<u64>,
    optimizer: Option<String>,
    test_fraction: Option<f64>,
    standardize: Option<bool>,
    freeze_noise: Option<bool>,
    eval_every: Option<usize>,
    checkpoint_every: Option<usize>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| SepError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            serde_json::from_str(&text)
                .map_err(|e| SepError::InvalidArg(format!("bad config file: {e}")))
        }
    }
}

fn ensure_out_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| SepError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve_m(
    m: Option<usize>,
    m_fraction: Option<f64>,
    n_train: usize,
    file: &FileConfig,
) -> Result<usize> {
    let m = m.or(file.m);
    let frac = m_fraction.or(file.m_fraction);
    match (m, frac) {
        (Some(m), _) => Ok(m),
        (None, Some(f)) => {
            if !(f > 0.0 && f <= 1.0) {
                return Err(SepError::InvalidArg(format!("m fraction {f} outside (0,1]")));
            }
            Ok(((n_train as f64 * f).round() as usize).clamp(1, n_train))
        }
        (None, None) => Err(SepError::InvalidArg(
            "one of --m or --m-fraction is required".into(),
        )),
    }
}

struct TrainSetup {
    config: TrainConfig,
    train: Dataset,
    test: Option<Dataset>,
}

fn build_train_setup(args: &TrainArgs) -> Result<TrainSetup> {
    let file = load_file_config(args.config.as_deref())?;
    let full = dataset::load_csv(&args.data.data, args.data.label_col)?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let test_fraction = args.test_fraction.or(file.test_fraction);
    let (train, test) = match test_fraction {
        Some(f) => {
            let (tr, te) = dataset::split(&full, f, seed)?;
            (tr, Some(te))
        }
        None => (full, None),
    };
    let m = resolve_m(args.m, args.m_fraction, train.n(), &file)?;
    let mode = match args.mode {
        Some(ModeArg::Batch) => TrainMode::Batch,
        Some(ModeArg::Stochastic) => TrainMode::Stochastic,
        None => match file.mode.as_deref() {
            Some("stochastic") => TrainMode::Stochastic,
            _ => TrainMode::Batch,
        },
    };
    let mut config = match mode {
        TrainMode::Stochastic => {
            let bs = args.batch_size.or(file.batch_size).unwrap_or(m.min(200));
            TrainConfig::stochastic(m, bs)
        }
        _ => TrainConfig::batch(m),
    };
    config.seed = seed;
    if let Some(i) = args.iters.or(file.iters) {
        config.iterations = i;
    }
    config.damping = args.damping.or(file.damping);
    match args.optimizer {
        Some(OptimizerArg::Adaptive) => config.optimizer = trainer::OptimizerKind::Adaptive,
        Some(OptimizerArg::Adadelta) => config.optimizer = trainer::OptimizerKind::Adadelta,
        None => {
            if let Some(o) = file.optimizer.as_deref() {
                config.optimizer = match o {
                    "adadelta" => trainer::OptimizerKind::Adadelta,
                    _ => trainer::OptimizerKind::Adaptive,
                };
            }
        }
    }
    if let Some(HyperUpdateArg::Outer) = args.hyper_update {
        config.hyper_schedule = HyperSchedule::Outer {
            tol: config.tol,
            max_sweeps: 200,
        };
    }
    config.standardize = !args.no_standardize && file.standardize.unwrap_or(true);
    config.freeze_noise = args.freeze_noise || file.freeze_noise.unwrap_or(false);
    config.learn_hyper = !args.no_learn_hyper;
    config.eval_every = args
        .eval_every
        .or(file.eval_every)
        .unwrap_or(if test.is_some() { 10 } else { 0 });
    config.checkpoint_every = args.checkpoint_every.or(file.checkpoint_every).unwrap_or(0);
    config.checkpoint_path = Some(args.out.join("model.json"));
    Ok(TrainSetup {
        config,
        train,
        test,
    })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    ensure_out_dir(&args.out)?;
    let setup = build_train_setup(args)?;
    let resume = match &args.resume {
        Some(p) => Some(trainer::restore(p)?),
        None => None,
    };
    let (model, curve) = match setup.config.mode {
        TrainMode::Stochastic => trainer::train_stochastic_with_eval(
            &setup.train,
            &setup.config,
            setup.test.as_ref(),
            resume.as_ref(),
        )?,
        _ => trainer::train_batch_with_eval(
            &setup.train,
            &setup.config,
            setup.test.as_ref(),
            resume.as_ref(),
        )?,
    };
    trainer::checkpoint(&model, &args.out.join("model.json"))?;
    curve.write_csv(&args.out.join("curve.csv"))?;
    println!(
        "trained: mode={:?} m={} iterations={} final_log_zq={:.6}",
        setup.config.mode,
        setup.config.num_inducing,
        model.meta.iterations_run,
        model.meta.final_log_zq
    );
    if let Some(test) = &setup.test {
        let rep = predictor::evaluate(&model, test)?;
        println!(
            "test: error_rate={:.4} avg_nll={:.4} n={}",
            rep.error_rate, rep.avg_neg_log_likelihood, rep.n_test
        );
    }
    Ok(())
}

fn parse_grid(spec: &str) -> Result<(f64, f64, f64, f64, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 5 {
        return Err(SepError::InvalidArg(
            "grid must be xmin,xmax,ymin,ymax,steps".into(),
        ));
    }
    let xmin: f64 = parts[0].trim().parse().map_err(|_| SepError::InvalidArg("bad xmin".into()))?;
    let xmax: f64 = parts[1].trim().parse().map_err(|_| SepError::InvalidArg("bad xmax".into()))?;
    let ymin: f64 = parts[2].trim().parse().map_err(|_| SepError::InvalidArg("bad ymin".into()))?;
    let ymax: f64 = parts[3].trim().parse().map_err(|_| SepError::InvalidArg("bad ymax".into()))?;
    let steps: usize = parts[4].trim().parse().map_err(|_| SepError::InvalidArg("bad steps".into()))?;
    if steps < 2 || xmax <= xmin || ymax <= ymin {
        return Err(SepError::InvalidArg("degenerate grid".into()));
    }
    Ok((xmin, xmax, ymin, ymax, steps))
}

fn cmd_predict(
    model_path: &Path,
    data: Option<&Path>,
    label_col: usize,
    grid: Option<&str>,
    out: &Path,
) -> Result<()> {
    ensure_out_dir(out)?;
    let model = trainer::restore(model_path)?;
    match (grid, data) {
        (Some(spec), _) => {
            if model.hyper.dim() != 2 {
                return Err(SepError::InvalidArg(format!(
                    "grid export needs a 2-d model, this one has d={}",
                    model.hyper.dim()
                )));
            }
            let (xmin, xmax, ymin, ymax, steps) = parse_grid(spec)?;
            let mut rows = Vec::with_capacity(steps * steps);
            for iy in 0..steps {
                for ix in 0..steps {
                    let x = xmin + (xmax - xmin) * ix as f64 / (steps - 1) as f64;
                    let y = ymin + (ymax - ymin) * iy as f64 / (steps - 1) as f64;
                    rows.push([x, y]);
                }
            }
            let xmat = nalgebra::DMatrix::from_fn(rows.len(), 2, |r, c| rows[r][c]);
            let csv = predictor::predictions_csv(&xmat, &model)?;
            // prepend the grid coordinates for external rendering
            let mut out_text = String::from("x,y,p_plus,label_pred,m_star,s_star\n");
            for (i, line) in csv.lines().skip(1).enumerate() {
                let rest: Vec<&str> = line.splitn(2, ',').collect();
                out_text.push_str(&format!("{},{},{}\n", rows[i][0], rows[i][1], rest[1]));
            }
            let path = out.join("grid.csv");
            std::fs::write(&path, out_text).map_err(|source| SepError::Io {
                path: path.clone(),
                source,
            })?;
            println!("wrote {}", path.display());
        }
        (None, Some(data_path)) => {
            let data = dataset::load_csv(data_path, label_col)?;
            let csv = predictor::predictions_csv(&data.inputs, &model)?;
            let path = out.join("predictions.csv");
            std::fs::write(&path, csv).map_err(|source| SepError::Io {
                path: path.clone(),
                source,
            })?;
            println!("wrote {}", path.display());
        }
        (None, None) => {
            return Err(SepError::InvalidArg(
                "predict needs --data or --grid".into(),
            ))
        }
    }
    Ok(())
}

fn cmd_eval(model_path: &Path, data: &DataArgs, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let model = trainer::restore(model_path)?;
    let test = dataset::load_csv(&data.data, data.label_col)?;
    let rep = predictor::evaluate(&model, &test)?;
    println!(
        "error_rate={:.6} avg_nll={:.6} n={}",
        rep.error_rate, rep.avg_neg_log_likelihood, rep.n_test
    );
    let path = out.join("eval.csv");
    std::fs::write(
        &path,
        format!(
            "error_rate,avg_nll,n_test\n{},{},{}\n",
            rep.error_rate, rep.avg_neg_log_likelihood, rep.n_test
        ),
    )
    .map_err(|source| SepError::Io { path, source })?;
    Ok(())
}

fn cmd_benchmark(
    data: &DataArgs,
    m_fractions: &str,
    reps: usize,
    iters: usize,
    test_fraction: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    ensure_out_dir(out)?;
    let full = dataset::load_csv(&data.data, data.label_col)?;
    let fractions: Vec<f64> = m_fractions
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| SepError::InvalidArg(format!("bad m fraction {s:?}")))
        })
        .collect::<Result<_>>()?;
    let mut rows = String::from("repetition,seed,m_fraction,test_nll,test_error,seconds\n");
    for &frac in &fractions {
        for rep in 0..reps {
            let rep_seed = seed + rep as u64;
            let (train, test) = dataset::split(&full, test_fraction, rep_seed)?;
            let m = ((train.n() as f64 * frac).round() as usize).clamp(1, train.n());
            let mut config = TrainConfig::batch(m);
            config.iterations = iters;
            config.seed = rep_seed;
            let start = Instant::now();
            let (model, _) = trainer::train_batch(&train, &config)?;
            let secs = start.elapsed().as_secs_f64();
            let eval = predictor::evaluate(&model, &test)?;
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                rep, rep_seed, frac, eval.avg_neg_log_likelihood, eval.error_rate, secs
            ));
            println!(
                "m_fraction={frac} rep={rep} nll={:.4} error={:.4} ({:.1}s)",
                eval.avg_neg_log_likelihood, eval.error_rate, secs
            );
        }
    }
    let path = out.join("results.csv");
    std::fs::write(&path, rows).map_err(|source| SepError::Io { path, source })?;
    Ok(())
}

fn cmd_distributed(
    role: RoleArg,
    k: usize,
    train: &TrainArgsOptional,
    workers: Option<&str>,
    listen: Option<&str>,
    timeout: u64,
) -> Result<()> {
    match role {
        RoleArg::Worker => {
            let addr = listen.ok_or_else(|| {
                SepError::InvalidArg("worker role requires --listen".into())
            })?;
            println!("worker listening on {addr}");
            wire::run_worker(addr)
        }
        RoleArg::LocalPool | RoleArg::Master => {
            let data_path = train
                .data
                .as_ref()
                .ok_or_else(|| SepError::InvalidArg("--data is required".into()))?;
            let out = train
                .out
                .clone()
                .ok_or_else(|| SepError::InvalidArg("--out is required".into()))?;
            ensure_out_dir(&out)?;
            let full = dataset::load_csv(data_path, train.label_col)?;
            let seed = train.seed.unwrap_or(0);
            let (train_set, test_set) = match train.test_fraction {
                Some(f) => {
                    let (tr, te) = dataset::split(&full, f, seed)?;
                    (tr, Some(te))
                }
                None => (full, None),
            };
            let m = match (train.m, train.m_fraction) {
                (Some(m), _) => m,
                (None, Some(f)) => ((train_set.n() as f64 * f).round() as usize).clamp(1, train_set.n()),
                (None, None) => {
                    return Err(SepError::InvalidArg("one of --m or --m-fraction".into()))
                }
            };
            let mut config = TrainConfig::batch(m);
            config.mode = TrainMode::Distributed;
            config.seed = seed;
            config.standardize = !train.no_standardize;
            if let Some(i) = train.iters {
                config.iterations = i;
            }
            config.damping = train.damping;
            if test_set.is_some() {
                config.eval_every = 10;
            }
            let (model, curve) = match role {
                RoleArg::LocalPool => distributed::distributed_train_local(
                    &train_set,
                    &config,
                    k,
                    test_set.as_ref(),
                    None,
                )?,
                RoleArg::Master => {
                    let addr_list: Vec<String> = workers
                        .ok_or_else(|| {
                            SepError::InvalidArg("master role requires --workers".into())
                        })?
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .collect();
                    let (x_std, labels) = if config.standardize {
                        let (s, _) = dataset::standardize(&train_set);
                        (s.inputs, s.labels)
                    } else {
                        (train_set.inputs.clone(), train_set.labels.clone())
                    };
                    let parts =
                        distributed::partition(train_set.n(), addr_list.len(), config.seed)?;
                    let mut pool = wire::SocketPool::connect(
                        &addr_list,
                        &parts,
                        &x_std,
                        &labels,
                        m,
                        train_set.dim(),
                        Duration::from_secs(timeout),
                    )?;
                    distributed::distributed_train_with_pool(
                        &train_set,
                        &config,
                        &mut pool,
                        test_set.as_ref(),
                    )?
                }
                RoleArg::Worker => unreachable!(),
            };
            trainer::checkpoint(&model, &out.join("model.json"))?;
            curve.write_csv(&out.join("curve.csv"))?;
            println!(
                "distributed training done: final_log_zq={:.6}",
                model.meta.final_log_zq
            );
            if let Some(test) = &test_set {
                let rep = predictor::evaluate(&model, test)?;
                println!(
                    "test: error_rate={:.4} avg_nll={:.4} n={}",
                    rep.error_rate, rep.avg_neg_log_likelihood, rep.n_test
                );
            }
            Ok(())
        }
    }
}

/// Run the parsed command; the binary maps errors to exit code 1.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(threads) = cli.threads {
        // ignore failure: the global pool may already be initialized
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict {
            model,
            data,
            label_col,
            grid,
            out,
        } => cmd_predict(model, data.as_deref(), *label_col, grid.as_deref(), out),
        Command::Eval { model, data, out } => cmd_eval(model, data, out),
        Command::Benchmark {
            data,
            m_fractions,
            reps,
            iters,
            test_fraction,
            seed,
            out,
        } => cmd_benchmark(data, m_fractions, *reps, *iters, *test_fraction, *seed, out),
        Command::Distributed {
            role,
            k,
            train,
            workers,
            listen,
            timeout,
        } => cmd_distributed(
            *role,
            *k,
            train,
            workers.as_deref(),
            listen.as_deref(),
            *timeout,
        ),
    }
}

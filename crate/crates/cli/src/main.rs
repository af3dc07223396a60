//! `beamopt`: dataset generation, training, evaluation, plotting and self-checks.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beamopt_core::channel::{generate_dataset, load_dataset, save_dataset, sample_seed, ChannelDataset, ChannelError};
use beamopt_core::eval::{evaluate, EvalError, Method, NeuralModel};
use beamopt_core::harness::{
    format_report, read_results, render_svg, run_verify, write_results, ExperimentConfig, ResultRow, Split,
    VerifyFaults,
};
use beamopt_core::models::{init_params, ModelConfig, ModelError, ModelParams};
use beamopt_core::nn::{read_checkpoint, write_checkpoint, NnError};
use beamopt_core::trainer::{train, TrainError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

mod presets;

#[derive(Parser)]
#[command(name = "beamopt", version, about = "MU-MISO downlink beamforming experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "BEAMOPT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a channel dataset for one split of an experiment.
    Generate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
        /// Override the dataset seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every neural method listed in the experiment.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Override the training seed (also seeds the initialization).
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for `<id>_<method>.ckpt` and `<id>_<method>_train.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired SNR sweep of the experiment's methods; writes the results CSV.
    Eval {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// Trained checkpoint; may be repeated.
        #[arg(long)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a results CSV as an SVG line chart.
    Plot {
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in invariant checks.
    Verify {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
    /// List the bundled experiment presets.
    Presets,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment file, or the name of a bundled preset (exp01..exp12).
    #[arg(long)]
    config: String,
    /// Apply the experiment's `[desk_scale]` overrides.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    Gelu,
}

/// An error carrying the process exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }
}

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATASET: u8 = 3;
const EXIT_NAN: u8 = 4;
const EXIT_CHECKPOINT: u8 = 5;
const EXIT_CSV: u8 = 6;
const EXIT_IO: u8 = 1;

fn io_failure(path: &Path, e: impl fmt::Display) -> Failure {
    Failure::new(EXIT_IO, format!("{}: {e}", path.display()))
}

fn load_experiment(args: &ExperimentArgs) -> Result<ExperimentConfig, Failure> {
    let path = Path::new(&args.config);
    let parsed = match presets::get(&args.config) {
        Some(text) if !path.exists() => ExperimentConfig::from_toml_str(text),
        _ => ExperimentConfig::load(path),
    };
    let cfg = parsed.and_then(|c| if args.desk_scale { c.desk_scaled() } else { Ok(c) });
    cfg.map_err(|e| Failure::new(EXIT_CONFIG, format!("invalid config {}: {e}", args.config)))
}

fn dataset_failure(path: &Path, e: ChannelError) -> Failure {
    Failure::new(EXIT_DATASET, format!("dataset {}: {e}", path.display()))
}

fn load_matching_dataset(cfg: &ExperimentConfig, path: &Path) -> Result<ChannelDataset, Failure> {
    let ds = load_dataset(path).map_err(|e| dataset_failure(path, e))?;
    let want = cfg.channel_params();
    let got = &ds.params;
    if (got.m_tx, got.n_ue, got.k_sc) != (want.m_tx, want.n_ue, want.k_sc) {
        return Err(Failure::new(
            EXIT_DATASET,
            format!(
                "dataset {} has M={} N={} K={}, experiment {} needs M={} N={} K={}",
                path.display(),
                got.m_tx,
                got.n_ue,
                got.k_sc,
                cfg.id,
                want.m_tx,
                want.n_ue,
                want.k_sc
            ),
        ));
    }
    Ok(ds)
}

fn model_failure(e: ModelError) -> Failure {
    match e {
        ModelError::IncompatibleCheckpoint(_) | ModelError::Nn(NnError::Checkpoint(_)) => {
            Failure::new(EXIT_CHECKPOINT, e)
        }
        ModelError::InvalidConfig(_) => Failure::new(EXIT_CONFIG, e),
        ModelError::Shape(_) => Failure::new(EXIT_DATASET, e),
        other => Failure::new(EXIT_IO, other),
    }
}

fn cmd_generate(exp: &ExperimentArgs, split: SplitArg, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_experiment(exp)?;
    if let Some(s) = seed {
        cfg.dataset.seed = s;
    }
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let ds = generate_dataset(&cfg.channel_params(), cfg.split_size(split), cfg.split_seed(split))
        .map_err(|e| dataset_failure(out, e))?;
    save_dataset(&ds, out).map_err(|e| io_failure(out, e))?;
    println!("{}", ds.fingerprint());
    Ok(())
}

fn checkpoint_name(cfg: &ExperimentConfig, method: Method) -> String {
    format!("{}_{}", cfg.id, method.name())
}

fn cmd_train(exp: &ExperimentArgs, dataset: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut cfg = load_experiment(exp)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let ds = load_matching_dataset(&cfg, dataset)?;
    let neural: Vec<Method> = cfg.methods.iter().copied().filter(|m| m.is_neural()).collect();
    if neural.is_empty() {
        return Err(Failure::new(EXIT_CONFIG, format!("experiment {} lists no neural method", cfg.id)));
    }
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    for method in neural {
        let mcfg = cfg.model_config(method);
        // both methods start from the same backbone and beamforming head
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(cfg.train.seed, 0x1417));
        let params = init_params(&mcfg, &mut rng).map_err(model_failure)?;
        let (best, report) = train(&mcfg, params, &ds.samples, &cfg.train).map_err(|e| match e {
            TrainError::NonFiniteLoss { .. } => Failure::new(EXIT_NAN, format!("{method}: {e}")),
            TrainError::EmptyDataset => Failure::new(EXIT_DATASET, format!("{method}: {e}")),
            TrainError::InvalidConfig(_) => Failure::new(EXIT_CONFIG, format!("{method}: {e}")),
            TrainError::Model(m) => model_failure(m),
        })?;
        let stem = checkpoint_name(&cfg, method);
        let ckpt = out.join(format!("{stem}.ckpt"));
        let file = File::create(&ckpt).map_err(|e| io_failure(&ckpt, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&mut w, &best.to_checkpoint(&mcfg)).map_err(|e| io_failure(&ckpt, e))?;
        w.flush().map_err(|e| io_failure(&ckpt, e))?;
        let csv = out.join(format!("{stem}_train.csv"));
        let file = File::create(&csv).map_err(|e| io_failure(&csv, e))?;
        report.write_csv(file).map_err(|e| io_failure(&csv, e))?;
        eprintln!(
            "{method}: {} epochs, best epoch {}, loss {:.4} -> {:.4}, {:.1}s",
            report.epochs.len(),
            report.best_epoch,
            report.initial_train_loss,
            report.final_train_loss().unwrap_or(f64::NAN),
            report.wall_time_s
        );
        println!("{}", ckpt.display());
    }
    Ok(())
}

fn load_model(cfg: &ExperimentConfig, path: &Path) -> Result<(Method, ModelConfig, ModelParams), Failure> {
    let file = File::open(path).map_err(|e| Failure::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))?;
    let ck = read_checkpoint(BufReader::new(file))
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))?;
    let (stored, _) = ModelParams::from_checkpoint(&ck, None)
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))?;
    let method = if stored.joint_power { Method::NnbfP } else { Method::Nnbf };
    let (mcfg, params) = ModelParams::from_checkpoint(&ck, Some(&cfg.model_config(method)))
        .map_err(|e| Failure::new(EXIT_CHECKPOINT, format!("{}: {e}", path.display())))?;
    Ok((method, mcfg, params))
}

fn cmd_eval(exp: &ExperimentArgs, dataset: &Path, ckpts: &[PathBuf], out: &Path) -> Result<(), Failure> {
    let cfg = load_experiment(exp)?;
    let ds = load_matching_dataset(&cfg, dataset)?;
    let mut models = Vec::new();
    for path in ckpts {
        let (method, mcfg, params) = load_model(&cfg, path)?;
        if models.iter().any(|(m, _, _)| *m == method) {
            return Err(Failure::new(EXIT_CHECKPOINT, format!("more than one {method} checkpoint")));
        }
        models.push((method, mcfg, params));
    }
    let mut methods: Vec<Method> = Vec::new();
    for m in Method::ALL {
        let listed = cfg.methods.contains(&m);
        let trained = models.iter().any(|(x, _, _)| *x == m);
        if m.is_neural() && listed && !trained {
            eprintln!("skipping {m}: no checkpoint given");
        }
        if (listed && !m.is_neural()) || trained {
            methods.push(m);
        }
    }
    let nets: Vec<NeuralModel> = models
        .iter()
        .map(|(method, config, params)| NeuralModel {
            method: *method,
            config,
            params,
        })
        .collect();
    let stats = evaluate(&ds.samples, &cfg.snr_grid_db, &methods, cfg.p_max(), &nets).map_err(|e| match e {
        EvalError::EmptyDataset => Failure::new(EXIT_DATASET, e),
        EvalError::Model(m) => model_failure(m),
        other => Failure::new(EXIT_IO, other),
    })?;
    let rows: Vec<ResultRow> = stats.iter().map(|s| ResultRow::from_stats(&cfg.id, s)).collect();
    let file = File::create(out).map_err(|e| io_failure(out, e))?;
    write_results(BufWriter::new(file), &rows).map_err(|e| io_failure(out, e))?;
    for r in &rows {
        println!("{:<8} {:>6.1} dB  {:.4} ± {:.4}", r.method.name(), r.snr_db, r.se_mean, r.se_std);
    }
    Ok(())
}

fn cmd_plot(results: &Path, out: &Path) -> Result<(), Failure> {
    let file = File::open(results).map_err(|e| Failure::new(EXIT_CSV, format!("{}: {e}", results.display())))?;
    let rows = read_results(BufReader::new(file))
        .map_err(|e| Failure::new(EXIT_CSV, format!("{}: {e}", results.display())))?;
    fs::write(out, render_svg(&rows)).map_err(|e| io_failure(out, e))
}

fn cmd_verify(fault: Option<Fault>) -> Result<(), Failure> {
    let faults = VerifyFaults {
        corrupt_gelu: matches!(fault, Some(Fault::Gelu)),
    };
    let results = run_verify(faults);
    print!("{}", format_report(&results));
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::new(EXIT_VERIFY, format!("failed: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::new(EXIT_CONFIG, "--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::new(EXIT_IO, e))?;
    }
    match cli.command {
        Command::Generate { exp, split, seed, out } => cmd_generate(&exp, split, seed, &out),
        Command::Train { exp, dataset, seed, out } => cmd_train(&exp, &dataset, seed, &out),
        Command::Eval { exp, dataset, ckpt, out } => cmd_eval(&exp, &dataset, &ckpt, &out),
        Command::Plot { results, out } => cmd_plot(&results, &out),
        Command::Verify { inject_fault } => cmd_verify(inject_fault),
        Command::Presets => {
            for name in presets::names() {
                println!("{name}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

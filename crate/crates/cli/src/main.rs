//! Batch front-end: training, evaluation, inference, and analysis as
//! subcommands driven by one structured config file.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on invalid
//! configuration (with a report listing every violation). The env var
//! LSRGAN_THREADS caps worker threads for evaluation (default 1, which
//! keeps every output bit-deterministic).

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use lsrgan_core::checkpoint;
use lsrgan_core::data::{downscale4, read_image, write_image, Dataset};
use lsrgan_core::losses::{loss_gradient_suite, ObjectiveKind};
use lsrgan_core::nets::{init_networks, NetConfig, Networks};
use lsrgan_core::pwl::{
    build_interpolant, density_for, empirical_lipschitz_probe, error_bound, lipschitz_of_pwl,
};
use lsrgan_core::rng::Rng;
use lsrgan_core::tensor::Tensor;
use lsrgan_core::train::{
    self, encode_latent, evaluate_generator, super_resolve, AdamConfig, TrainState,
};

#[derive(Parser)]
#[command(
    name = "lsrgan",
    version,
    about = "Encoder-coupled GAN for 4x single-image super-resolution with latent-space regularization"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// PSNR-oriented pretraining of the generator and encoder.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Joint adversarial fine-tuning from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to start from.
        #[arg(long)]
        from: PathBuf,
        /// Objective kind: esr|lsr|cesr|clsr|kkt (defaults to the config).
        #[arg(long)]
        kind: Option<String>,
        /// Continue an interrupted fine-tune using the checkpoint's state.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a model: PSNR/SSIM/L1 per image plus mean and stddev rows.
    Eval {
        #[arg(long)]
        model: PathBuf,
        /// Dataset: `dir:PATH` or `synth:SEED`.
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 32)]
        patch: usize,
        #[arg(long, default_value_t = 16)]
        count: usize,
        /// Output CSV path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Super-resolve one image by 4x.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Bicubic 4x downscale of one image.
    Downscale {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Finite-difference verification of every loss gradient.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Piecewise-linear interpolation and Lipschitz analysis.
    Pwl {
        #[command(subcommand)]
        cmd: PwlCmd,
    },
    /// Empirical ambient-to-latent Lipschitz ratio probe of a trained model.
    Probe {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
        /// Edge of the random LR inputs fed to the generator.
        #[arg(long, default_value_t = 8)]
        lr_size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output CSV path (stdout when absent).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune one model per mu value and tabulate evaluation metrics.
    Musweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated mu values, e.g. `0,1e-7,1e-3`.
        #[arg(long)]
        mus: String,
        /// Pretrained checkpoint (when absent, pretraining runs first).
        #[arg(long)]
        from: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PwlFnArgs {
    /// Function: `sin`, `abs`, or `poly:c0,c1,...` (coefficients low to high).
    #[arg(long = "fn")]
    function: String,
    /// Vertex segments; 0 derives the count from --eps and the slope bound.
    #[arg(long, default_value_t = 0)]
    n: usize,
    /// Target accuracy used when --n is 0.
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
}

#[derive(Subcommand)]
enum PwlCmd {
    /// Interpolate a function and report measured error vs. the bound.
    Approx {
        #[command(flatten)]
        args: PwlFnArgs,
    },
    /// Report the exact and proof-style Lipschitz constants.
    Lipschitz {
        #[command(flatten)]
        args: PwlFnArgs,
    },
}

enum CliError {
    Config(Vec<String>),
    Runtime(String),
}

impl From<lsrgan_core::Error> for CliError {
    fn from(e: lsrgan_core::Error) -> Self {
        match e {
            lsrgan_core::Error::Config(msg) => CliError::Config(vec![msg]),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = std::env::var("LSRGAN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(1)
        .max(1);
    match run(cli.cmd, threads) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(problems)) => {
            eprintln!("invalid configuration ({} problem(s)):", problems.len());
            for p in &problems {
                eprintln!("  - {p}");
            }
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    RunConfig::load(path).map_err(CliError::Config)
}

fn build_networks(cfg: &RunConfig) -> Result<Networks<f32>, CliError> {
    let mut nets = init_networks::<f32>(&cfg.net, cfg.seed)?;
    if let Some(path) = &cfg.probe_weights {
        let ckpt = checkpoint::load::<f32>(path)?;
        nets.load_probe_weights(&ckpt.tensors)?;
    }
    Ok(nets)
}

fn load_model(path: &Path) -> Result<Networks<f32>, CliError> {
    let ckpt = checkpoint::load::<f32>(path)?;
    let cfg = NetConfig::infer(&ckpt.tensors)?;
    let mut nets = init_networks::<f32>(&cfg, 0)?;
    nets.import_params(&ckpt.tensors)?;
    Ok(nets)
}

fn parse_eval_data(data: &str, patch: usize, count: usize) -> Result<Dataset<f32>, CliError> {
    use lsrgan_core::data::{DataSource, DatasetSpec};
    let source = if let Some(seed) = data.strip_prefix("synth:") {
        let seed = seed.parse::<u64>().map_err(|_| {
            CliError::Config(vec![format!("--data `{data}`: synth seed must be an integer")])
        })?;
        DataSource::Synthetic { seed }
    } else if let Some(dir) = data.strip_prefix("dir:") {
        DataSource::Directory(PathBuf::from(dir))
    } else {
        return Err(CliError::Config(vec![format!(
            "--data `{data}`: expected `synth:SEED` or `dir:PATH`"
        )]));
    };
    let spec = DatasetSpec {
        source,
        patch_size: patch,
        augment: false,
        count,
    };
    Ok(Dataset::load(&spec)?)
}

fn emit(out: Option<&Path>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(|e| CliError::Runtime(e.to_string()))?;
                }
            }
            fs::write(path, content).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        None => print!("{content}"),
    }
    Ok(())
}

fn write_in(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    let path = dir.join(name);
    fs::write(&path, content).map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(path)
}

fn run(cmd: Cmd, threads: usize) -> Result<(), CliError> {
    match cmd {
        Cmd::Pretrain { config } => {
            let cfg = load_config(&config)?;
            let mut nets = build_networks(&cfg)?;
            let dataset = Dataset::load(&cfg.dataset)?;
            let mut state = TrainState::new(cfg.seed, &nets);
            let out = train::pretrain(
                &mut nets,
                &dataset,
                &cfg.pretrain,
                &AdamConfig::default(),
                &mut state,
            )?;
            let ckpt = cfg.out_dir.join("pretrain.ckpt");
            train::save_train_checkpoint(&ckpt, &nets, Some(&state))?;
            write_in(&cfg.out_dir, "pretrain_loss.csv", &out.csv)?;
            println!(
                "pretrain: {} iterations, generator L1 {} -> {}, checkpoint {}",
                state.iter,
                out.first_loss_g.map_or("n/a".into(), |v| v.to_string()),
                out.last_loss_g.map_or("n/a".into(), |v| v.to_string()),
                ckpt.display()
            );
            Ok(())
        }
        Cmd::Finetune {
            config,
            from,
            kind,
            resume,
        } => {
            let cfg = load_config(&config)?;
            let kind = match kind {
                Some(k) => ObjectiveKind::parse(&k)?,
                None => cfg.kind,
            };
            let mut nets = build_networks(&cfg)?;
            let loaded_state = train::load_train_checkpoint(&from, &mut nets)?;
            let mut state = if resume {
                loaded_state.ok_or_else(|| {
                    CliError::Runtime(format!(
                        "--resume given but {} carries no training state",
                        from.display()
                    ))
                })?
            } else {
                TrainState::new(cfg.seed, &nets)
            };
            let out = train::finetune(
                &mut nets,
                &dataset_of(&cfg)?,
                &cfg.weights,
                kind,
                &cfg.finetune,
                &cfg.ccx,
                &AdamConfig::default(),
                &mut state,
            )?;
            let name = kind.name();
            let ckpt = cfg.out_dir.join(format!("finetune_{name}.ckpt"));
            train::save_train_checkpoint(&ckpt, &nets, Some(&state))?;
            write_in(&cfg.out_dir, &format!("finetune_{name}_loss.csv"), &out.csv)?;
            println!(
                "finetune[{name}]: {} iterations, objective {} -> {}, checkpoint {}",
                state.iter,
                out.first_loss_g.map_or("n/a".into(), |v| v.to_string()),
                out.last_loss_g.map_or("n/a".into(), |v| v.to_string()),
                ckpt.display()
            );
            Ok(())
        }
        Cmd::Eval {
            model,
            data,
            patch,
            count,
            out,
        } => {
            let nets = load_model(&model)?;
            let dataset = parse_eval_data(&data, patch, count)?;
            let report = evaluate_generator(&nets, &dataset, threads)?;
            emit(out.as_deref(), &report.to_csv())
        }
        Cmd::Sr {
            model,
            input,
            output,
        } => {
            let nets = load_model(&model)?;
            let img = read_image::<f32>(&input)?;
            let sr = super_resolve(&nets, &img)?;
            write_image(&output, &sr)?;
            Ok(())
        }
        Cmd::Downscale { input, output } => {
            let img = read_image::<f32>(&input)?;
            let lr = downscale4(&img)?;
            write_image(&output, &lr)?;
            Ok(())
        }
        Cmd::Gradcheck { tol } => {
            let reports = loss_gradient_suite(1e-4, tol)?;
            let mut all_pass = true;
            for (name, r) in &reports {
                let status = if r.pass { "PASS" } else { "FAIL" };
                println!("[{status}] {name}: max relative error {:.3e} (tol {tol:e})", r.max_rel_error);
                all_pass &= r.pass;
            }
            if all_pass {
                Ok(())
            } else {
                Err(CliError::Runtime(
                    "gradient check failed; see report above".into(),
                ))
            }
        }
        Cmd::Pwl { cmd } => run_pwl(cmd),
        Cmd::Probe {
            model,
            pairs,
            lr_size,
            seed,
            out,
        } => {
            let nets = load_model(&model)?;
            let mut rng = Rng::stream(seed, "probe");
            let report = empirical_lipschitz_probe(
                |z| super_resolve(&nets, z),
                |x| encode_latent(&nets, x),
                move || {
                    Tensor::<f32>::from_fn(vec![3, lr_size, lr_size], |_| rng.next_range(0.0, 1.0))
                },
                pairs,
            )?;
            emit(out.as_deref(), &report.to_csv())
        }
        Cmd::Musweep { config, mus, from } => {
            let cfg = load_config(&config)?;
            let mus: Vec<f64> = if mus.trim().is_empty() {
                Vec::new()
            } else {
                mus.split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            CliError::Config(vec![format!("--mus: `{s}` is not a number")])
                        })
                    })
                    .collect::<Result<_, _>>()?
            };
            let mut nets = build_networks(&cfg)?;
            match &from {
                Some(path) => {
                    train::load_train_checkpoint(path, &mut nets)?;
                }
                None => {
                    let dataset = Dataset::load(&cfg.dataset)?;
                    let mut state = TrainState::new(cfg.seed, &nets);
                    train::pretrain(
                        &mut nets,
                        &dataset,
                        &cfg.pretrain,
                        &AdamConfig::default(),
                        &mut state,
                    )?;
                    train::save_train_checkpoint(
                        &cfg.out_dir.join("pretrain.ckpt"),
                        &nets,
                        Some(&state),
                    )?;
                }
            }
            let dataset = Dataset::load(&cfg.dataset)?;
            let eval_dataset = Dataset::load(&cfg.eval_dataset)?;
            let outcome = train::mu_sweep(
                &nets,
                &dataset,
                &eval_dataset,
                &cfg.weights,
                cfg.kind,
                &cfg.finetune,
                &cfg.ccx,
                &AdamConfig::default(),
                cfg.seed,
                &mus,
            )?;
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for (row, trained) in outcome.rows.iter().zip(&outcome.trained) {
                let path = cfg.out_dir.join(format!("musweep_mu{:e}.ckpt", row.mu));
                train::save_train_checkpoint(&path, trained, None)?;
            }
            write_in(&cfg.out_dir, "musweep.csv", &outcome.csv)?;
            print!("{}", outcome.csv);
            Ok(())
        }
    }
}

fn dataset_of(cfg: &RunConfig) -> Result<Dataset<f32>, CliError> {
    Ok(Dataset::load(&cfg.dataset)?)
}

struct PwlTarget {
    label: String,
    f: Box<dyn Fn(f64) -> f64>,
    domain: (f64, f64),
    slope_bound: f64,
}

fn parse_pwl_fn(spec: &str) -> Result<PwlTarget, CliError> {
    if spec == "sin" {
        return Ok(PwlTarget {
            label: "sin".into(),
            f: Box::new(f64::sin),
            domain: (0.0, std::f64::consts::TAU),
            slope_bound: 1.0,
        });
    }
    if spec == "abs" {
        return Ok(PwlTarget {
            label: "abs".into(),
            f: Box::new(f64::abs),
            domain: (-1.0, 1.0),
            slope_bound: 1.0,
        });
    }
    if let Some(coeffs) = spec.strip_prefix("poly:") {
        let cs: Vec<f64> = coeffs
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| CliError::Config(vec![format!("--fn poly: `{s}` is not a number")]))
            })
            .collect::<Result<_, _>>()?;
        if cs.is_empty() {
            return Err(CliError::Config(vec!["--fn poly: needs coefficients".into()]));
        }
        let eval_poly = {
            let cs = cs.clone();
            move |x: f64| cs.iter().rev().fold(0.0, |acc, c| acc * x + c)
        };
        // slope bound from the derivative sampled on a dense grid
        let deriv = {
            let cs = cs.clone();
            move |x: f64| {
                cs.iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, c)| i as f64 * c * x.powi(i as i32 - 1))
                    .sum::<f64>()
            }
        };
        let slope_bound = (0..=10_000)
            .map(|i| -1.0 + 2.0 * i as f64 / 10_000.0)
            .map(|x| deriv(x).abs())
            .fold(0.0f64, f64::max);
        return Ok(PwlTarget {
            label: format!("poly:{coeffs}"),
            f: Box::new(eval_poly),
            domain: (-1.0, 1.0),
            slope_bound,
        });
    }
    Err(CliError::Config(vec![format!(
        "--fn `{spec}`: expected sin, abs, or poly:COEFFS"
    )]))
}

fn run_pwl(cmd: PwlCmd) -> Result<(), CliError> {
    let (args, want_error) = match &cmd {
        PwlCmd::Approx { args } => (args, true),
        PwlCmd::Lipschitz { args } => (args, false),
    };
    let target = parse_pwl_fn(&args.function)?;
    let (a, b) = target.domain;
    let n = if args.n > 0 {
        args.n
    } else {
        density_for(args.eps, target.slope_bound, a, b)
    };
    let pwl = build_interpolant(&target.f, a, b, n)?;
    if want_error {
        let grid: Vec<f64> = (0..10_000)
            .map(|i| a + (b - a) * i as f64 / 9_999.0)
            .collect();
        let rep = error_bound(&pwl, &target.f, &grid)?;
        println!("fn,n,eps,measured_max,oscillation_bound");
        println!(
            "{},{n},{},{},{}",
            target.label, args.eps, rep.measured_max, rep.oscillation_bound
        );
    } else {
        let rep = lipschitz_of_pwl(&pwl);
        println!("fn,n,tight_k,proof_k");
        println!("{},{n},{},{}", target.label, rep.tight, rep.proof);
    }
    Ok(())
}

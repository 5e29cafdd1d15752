use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use mrinterp::interp::uniform_grid;
use mrinterp::trainer::Phase;
use mrinterp::Error;
use mrinterp_cli::commands::{self, EvalTarget, Mixing};
use mrinterp_cli::exit_code;
use mrinterp_cli::serve::{serve, ServeState};

#[derive(Parser)]
#[command(name = "mrinterp", version, about = "Unrolled MRI reconstruction with network interpolation")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the data and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PhaseArg {
    SnPretrain,
    SnFinetune,
    SnGanFinetune,
}

impl From<PhaseArg> for Phase {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::SnPretrain => Phase::SnPretrain,
            PhaseArg::SnFinetune => Phase::SnFinetune,
            PhaseArg::SnGanFinetune => Phase::SnGanFinetune,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    ZeroFilled,
    GroundTruth,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one phase and write the checkpoint plus a report next to it.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum)]
        phase: PhaseArg,
        /// Starting point for the finetuning phases.
        #[arg(long)]
        pretrained: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine checkpoints in parameter space.
    Interp {
        /// Source checkpoints; with --alpha, the first is the α = 0 end.
        #[arg(required = true, num_args = 2..)]
        sources: Vec<PathBuf>,
        #[arg(long, conflicts_with = "coefficients", required_unless_present = "coefficients")]
        alpha: Option<f64>,
        /// One weight per source, comma separated, summing to 1.
        #[arg(long, value_delimiter = ',')]
        coefficients: Option<Vec<f64>>,
        #[arg(long)]
        allow_extrapolation: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint or a baseline on the validation split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        baseline: Option<Baseline>,
        #[arg(long)]
        acceleration: Option<f64>,
        /// JSON report path; the table goes next to it with a .tsv extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the interpolation path over a grid of α values.
    Sweep {
        #[arg(long)]
        sn: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Explicit α values, comma separated; otherwise an even grid.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        acceleration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve α-controlled reconstructions over HTTP.
    Serve {
        #[arg(long)]
        sn: PathBuf,
        #[arg(long)]
        gan: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        acceleration: Option<f64>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    let cfg = commands::load_config(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Simulate { out } => {
            let m = commands::simulate(&cfg, &out)?;
            eprintln!(
                "wrote {} slices ({} validation), {}x{}, {} coils, AF {:?} to {}",
                m.slices,
                m.validation,
                m.height,
                m.width,
                m.coils,
                m.accelerations,
                out.display()
            );
        }
        Command::Train {
            dataset,
            phase,
            pretrained,
            out,
        } => {
            let report = commands::train(&cfg, &dataset, phase.into(), pretrained.as_deref(), &out, &mut |e| {
                eprintln!(
                    "epoch {:>3}  loss {:.6}{}  val nmse {:.6}",
                    e.epoch,
                    e.loss,
                    e.discriminator_loss.map(|d| format!("  critic {d:.6}")).unwrap_or_default(),
                    e.validation_nmse
                );
            })?;
            eprintln!(
                "{}: nmse {:.6}  psnr {:.3}  ssim {:.4}  ({:.1}s)",
                out.display(),
                report.validation.mean.nmse,
                report.validation.mean.psnr,
                report.validation.mean.ssim,
                report.wall_clock_seconds
            );
        }
        Command::Interp {
            sources,
            alpha,
            coefficients,
            allow_extrapolation,
            out,
        } => {
            let mixing = match (alpha, coefficients) {
                (Some(a), _) => Mixing::Alpha(a),
                (None, Some(c)) => Mixing::Coefficients(c),
                (None, None) => unreachable!("clap requires one of them"),
            };
            let ckpt = commands::interp(&sources, mixing, allow_extrapolation, &out)?;
            let p = ckpt.provenance().expect("interpolated checkpoints carry provenance");
            eprintln!("wrote {} from {:?} with {:?}", out.display(), p.sources, p.coefficients);
        }
        Command::Eval {
            dataset,
            checkpoint,
            baseline,
            acceleration,
            out,
        } => {
            let target = match (checkpoint, baseline) {
                (Some(p), _) => EvalTarget::Checkpoint(p),
                (None, Some(Baseline::ZeroFilled)) => EvalTarget::ZeroFilled,
                (None, Some(Baseline::GroundTruth)) => EvalTarget::GroundTruth,
                (None, None) => unreachable!("clap requires one of them"),
            };
            let r = commands::eval(&cfg, &dataset, target, acceleration, &out)?;
            println!(
                "{}\tAF {}\tnmse {:.6} ± {:.6}\tpsnr {:.3} ± {:.3}\tssim {:.4} ± {:.4}",
                r.model, r.acceleration, r.mean.nmse, r.std.nmse, r.mean.psnr, r.std.psnr, r.mean.ssim, r.std.ssim
            );
        }
        Command::Sweep {
            sn,
            gan,
            dataset,
            grid,
            points,
            acceleration,
            out,
        } => {
            let grid = grid.unwrap_or_else(|| uniform_grid(points.unwrap_or(cfg.interp.sweep_points)));
            let rows = commands::sweep(&cfg, &sn, &gan, &dataset, &grid, acceleration, &out)?;
            print!("{}", commands::sweep_table(&rows));
        }
        Command::Serve {
            sn,
            gan,
            dataset,
            acceleration,
            bind,
        } => {
            let af = acceleration.unwrap_or(cfg.train.acceleration);
            let state = Arc::new(ServeState::load(&sn, &gan, &dataset, af, cfg.metrics.clone())?);
            let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io(&bind.to_string(), e))?;
            runtime
                .block_on(serve(state, bind))
                .map_err(|e| Error::io(&bind.to_string(), e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

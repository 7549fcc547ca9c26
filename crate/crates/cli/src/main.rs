//! `nhdmp`: generate the numerical demonstration, train a model and roll it
//! out in nominal, constrained or optimized mode.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nhdmp::pipeline::io::{load_model, load_trajectory, save_model, save_report, save_trajectory};
use nhdmp::{
    euler_rmse, gen_numerical_demo, log_map, position_rmse, preprocess, rollout, train, ConstraintSpec, DmpError,
    DmpGains, PipelineError, RigidTransform, RolloutMode, TrainConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "nhdmp",
    version,
    about = "DMPs with a no-lateral-motion constraint on the blade"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the synthetic cutting demonstration as a trajectory CSV.
    GenDemo {
        #[arg(short, long)]
        out: PathBuf,
        /// Sample period in seconds.
        #[arg(long, default_value_t = 0.001, value_parser = positive)]
        dt: f64,
        /// Length in seconds.
        #[arg(long, default_value_t = 1.0, value_parser = positive)]
        duration: f64,
    },
    /// Fit a model to a trajectory CSV and write it as JSON.
    Train(TrainArgs),
    /// Integrate a trained model and write the trajectory and a per-step report.
    Rollout {
        /// Model JSON written by `train`.
        model: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = RolloutMode::Nominal)]
        mode: RolloutMode,
        /// Per-step `t,violation,fcon_norm,opt_iters` CSV.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Integration step in seconds [default: the model's sample period].
        #[arg(long, value_parser = positive)]
        dt: Option<f64>,
        /// Rollout length in seconds [default: the demonstration length].
        #[arg(long, value_parser = positive)]
        duration: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Demonstration trajectory CSV.
    input: PathBuf,
    /// Model JSON to write.
    #[arg(short, long)]
    out: PathBuf,
    /// Radial basis functions per degree of freedom.
    #[arg(long = "rbf", value_name = "N", default_value_t = 100)]
    n_basis: usize,
    #[arg(long, default_value_t = 25.0, value_parser = positive)]
    alpha_x: f64,
    #[arg(long, default_value_t = 6.25, value_parser = positive)]
    beta_x: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    alpha_s: f64,
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    tau: f64,
    /// Zero-phase Butterworth low-pass cutoff applied before fitting (off by default).
    #[arg(long, value_parser = positive)]
    cutoff_hz: Option<f64>,
    /// Sensor-to-blade offset in centimetres, in the sensor frame.
    #[arg(long, num_args = 3, value_names = ["X", "Y", "Z"], allow_negative_numbers = true)]
    offset_cm: Option<Vec<f64>>,
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("expected a positive value, got {v}"))
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

const EXIT_IO: u8 = 2;
const EXIT_PARSE: u8 = 3;
const EXIT_TRAIN: u8 = 4;
const EXIT_ROLLOUT: u8 = 5;

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::Io { .. } => EXIT_IO,
            PipelineError::Parse { .. } | PipelineError::InvalidModel(_) | PipelineError::Trajectory(_) => EXIT_PARSE,
            PipelineError::Fit { .. } | PipelineError::Filter(_) | PipelineError::So3(_) | PipelineError::Dmp(_) => {
                EXIT_TRAIN
            }
        };
        Failure::new(code, e.to_string())
    }
}

impl From<DmpError> for Failure {
    fn from(e: DmpError) -> Self {
        Failure::new(EXIT_ROLLOUT, e.to_string())
    }
}

fn gen_demo(out: &Path, dt: f64, duration: f64) -> Result<(), Failure> {
    let demo = gen_numerical_demo(dt, duration);
    save_trajectory(&demo, out)?;
    eprintln!("wrote {} samples to {}", demo.len(), out.display());
    Ok(())
}

fn run_train(args: &TrainArgs) -> Result<(), Failure> {
    let demo = load_trajectory(&args.input)?;
    let transform = match args.offset_cm.as_deref() {
        Some(&[x, y, z]) => RigidTransform::from_offset_cm(x, y, z),
        _ => RigidTransform::identity(),
    };
    let spec = ConstraintSpec::default();
    let pre = preprocess(&demo, &transform, args.cutoff_hz, &spec)?;
    let cfg = TrainConfig {
        n_basis: args.n_basis,
        gains: DmpGains {
            tau: args.tau,
            alpha_x: args.alpha_x,
            beta_x: args.beta_x,
            alpha_s: args.alpha_s,
        },
    };
    let trained = train(&pre.trajectory, &cfg, None)?;
    save_model(&trained.model, &args.out)?;

    let f = trained.forcing_rmse;
    eprintln!(
        "forcing fit RMSE: x {:.3e} y {:.3e} z {:.3e} wx {:.3e} wy {:.3e} wz {:.3e}",
        f[0], f[1], f[2], f[3], f[4], f[5]
    );
    let replay = rollout(
        &trained.model,
        RolloutMode::Nominal,
        &spec,
        trained.model.dt,
        trained.model.duration,
    )
    .and_then(|r| Ok(r.trajectory()?))
    .map_err(|e| Failure::new(EXIT_TRAIN, e.to_string()))?;
    let pos = position_rmse(&replay, &pre.trajectory);
    let eul = euler_rmse(&replay, &pre.trajectory);
    eprintln!(
        "nominal imitation RMSE: position [{:.3e}, {:.3e}, {:.3e}] m, euler [{:.3e}, {:.3e}, {:.3e}] rad",
        pos.x, pos.y, pos.z, eul.x, eul.y, eul.z
    );
    eprintln!(
        "start lateral speed {:.3e} m/s; wrote {} bases per axis to {}",
        pre.initial_violation,
        cfg.n_basis,
        args.out.display()
    );
    Ok(())
}

fn run_rollout(
    model_path: &Path,
    out: &Path,
    mode: RolloutMode,
    report: Option<&Path>,
    dt: Option<f64>,
    duration: Option<f64>,
) -> Result<(), Failure> {
    let model = load_model(model_path)?;
    let dt = dt.unwrap_or(model.dt);
    let duration = duration.unwrap_or(model.duration);
    let result = rollout(&model, mode, &ConstraintSpec::default(), dt, duration)?;
    save_trajectory(&result.trajectory().map_err(DmpError::from)?, out)?;
    if let Some(path) = report {
        let times: Vec<f64> = result.states.iter().map(|s| s.t).collect();
        save_report(&times, &result.diagnostics, path)?;
    }

    let last = result.final_state();
    let goal_angle = log_map(&model.r_goal.compose(&last.r.transpose()))
        .map(|v| v.norm())
        .unwrap_or(std::f64::consts::PI);
    eprintln!(
        "{mode}: {} steps, max|violation| {:.3e} m/s, max|f_con| {:.3e} m/s^2, goal error {:.3e} m / {:.3e} rad",
        result.states.len() - 1,
        result.max_abs_violation(),
        result.max_fcon_norm(),
        (last.p - model.p_goal).norm(),
        goal_angle
    );
    if mode.is_constrained() {
        eprintln!(
            "start lateral speed removed: {:.3e} m/s",
            result.initial_violation.abs()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(u8::from(usage));
        }
    };
    let outcome = match &cli.command {
        Command::GenDemo { out, dt, duration } => gen_demo(out, *dt, *duration),
        Command::Train(args) => run_train(args),
        Command::Rollout {
            model,
            out,
            mode,
            report,
            dt,
            duration,
        } => run_rollout(model, out, *mode, report.as_deref(), *dt, *duration),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

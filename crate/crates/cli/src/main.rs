//! Command-line harness: reproducible simulation, lifting, SDE and
//! verification experiments. Exit codes: 0 success, 1 usage error,
//! 2 runtime error, 3 verification failure.

mod manifest;
mod verify;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use manifest::OutputSet;
use serde_json::json;
use std::path::PathBuf;
use thermostat_lab::io;
use thermostat_lab::micro::{self, ModelParams};
use thermostat_lab::rng::RngStream;
use thermostat_lab::rough::{spiral_example, RoughPathGrid, SpiralField};
use thermostat_lab::sde::{self, NoiseScale, SdeConfig, SdeModel};

#[derive(Parser)]
#[command(
    name = "thermostat-lab",
    version,
    about = "Thermostatted-particle simulation laboratory",
    long_about = "Simulates the thermostatted N-particle system with Maxwellian collisions, \
constructs rough-path lifts of the rescaled driver, integrates the limiting SDEs and \
verifies the closed-form constants statistically."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate microscopic trajectories and write CSV + manifest
    Simulate(SimulateArgs),
    /// Lift a driver to a rough path and report Hölder diagnostics
    Lift(LiftArgs),
    /// Integrate a limiting SDE ensemble
    Sde(SdeArgs),
    /// Run a named verification study and emit a JSON verdict
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    n_particles: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Collision rate per particle
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Field strength
    #[arg(long)]
    epsilon: f64,
    /// Total energy U
    #[arg(long, default_value_t = 2.0)]
    energy: f64,
    #[arg(long)]
    t_final: f64,
    #[arg(long, default_value_t = 0.01)]
    ode_step: f64,
    #[arg(long, default_value_t = 101)]
    grid_points: usize,
    #[arg(long, default_value_t = 1)]
    trajectories: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LiftArgs {
    /// Trajectory CSV to lift (reads the Phi columns)
    #[arg(long, conflicts_with = "builtin")]
    input: Option<PathBuf>,
    /// Built-in driver: "spiral"
    #[arg(long)]
    builtin: Option<String>,
    /// Van Hove scale; the driver is rescaled to W(t) = eps Phi(t/eps^2)
    #[arg(long)]
    epsilon: f64,
    /// Hölder exponent in (1/3, 1/2)
    #[arg(long, default_value_t = 0.4)]
    alpha: f64,
    #[arg(long, default_value_t = 1001)]
    grid_points: usize,
    /// Segments of the built-in spiral discretization
    #[arg(long, default_value_t = 1_000_000)]
    segments: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SdeArgs {
    /// One of: strat-sphere, ito-speed, ou
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 2)]
    n_particles: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 2.0)]
    energy: f64,
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long, default_value_t = 1.0)]
    t_final: f64,
    /// Noise convention: green-kubo (2/(lambda d)) or unit
    #[arg(long, default_value = "green-kubo")]
    noise: String,
    #[arg(long, default_value_t = 1)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    /// One of: autocov, vcorr, greenkubo, momentfit, converge, ou-limit
    study: String,
    /// Ensemble size (trajectories, lifts or paths depending on the study;
    /// momentfit caps this at 2000 lifts per field strength)
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Verdict JSON destination (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let threads = thread_budget();
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match run(cli, threads) {
        Ok(true) => 0,
        Ok(false) => 3,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code_for(&e)
        }
    }
}

fn thread_budget() -> usize {
    std::env::var("THERMOSTAT_LAB_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .unwrap_or(0)
}

/// Parameter-validation failures count as usage errors (exit 1); everything
/// else is a runtime error (exit 2).
fn exit_code_for(err: &anyhow::Error) -> i32 {
    use thermostat_lab::Error as E;
    if let Some(core) = err.downcast_ref::<E>() {
        return match core {
            E::InvalidParameter { .. }
            | E::InvalidDimension(..)
            | E::UnsupportedModel(_)
            | E::InvalidInitialState { .. }
            | E::InvalidConditioning(_)
            | E::InsufficientData { .. }
            | E::SampleTooSmall { .. } => 1,
            _ => 2,
        };
    }
    2
}

fn run(cli: Cli, threads: usize) -> Result<bool> {
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args, threads).map(|_| true),
        Command::Lift(args) => cmd_lift(args, threads).map(|_| true),
        Command::Sde(args) => cmd_sde(args, threads).map(|_| true),
        Command::Verify(args) => cmd_verify(args, threads),
    }
}

fn cmd_simulate(args: SimulateArgs, threads: usize) -> Result<()> {
    let params = ModelParams::new(
        args.n_particles,
        args.dim,
        args.lambda,
        args.epsilon,
        args.energy,
        args.t_final,
        args.ode_step,
    );
    params.validate()?;
    let mut out = OutputSet::create(&args.out)?;
    let result = (|| -> Result<()> {
        for i in 0..args.trajectories {
            let mut rng = RngStream::new(args.seed, i as u64);
            let traj = micro::simulate_trajectory(&params, args.grid_points, &mut rng)?;
            let mut csv = Vec::new();
            io::write_trajectory_csv(&traj, &mut csv)?;
            out.write(&format!("trajectory_{i:04}.csv"), &csv)?;
            let sidecar = io::TrajectorySidecar::of(&traj);
            out.write(
                &format!("trajectory_{i:04}.json"),
                &serde_json::to_vec_pretty(&sidecar)?,
            )?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.discard();
        return Err(e);
    }
    let manifest = out.finish(
        "simulate",
        args.seed,
        threads,
        serde_json::to_value(&params)?,
    )?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn cmd_lift(args: LiftArgs, threads: usize) -> Result<()> {
    if !(args.alpha > 1.0 / 3.0 && args.alpha < 0.5) {
        return Err(thermostat_lab::Error::param("alpha", "must lie in (1/3, 1/2)").into());
    }
    let mut out = OutputSet::create(&args.out)?;
    let result = (|| -> Result<serde_json::Value> {
        let (driver, config, extras) = match (&args.input, args.builtin.as_deref()) {
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let phi = io::read_driver_from_trajectory_csv(&text)?;
                let horizon = args.epsilon * args.epsilon * phi.end_time();
                let rescaled = phi.rescale(args.epsilon, horizon)?;
                let cfg = json!({
                    "input": path.display().to_string(),
                    "epsilon": args.epsilon,
                    "horizon": horizon,
                });
                (rescaled, cfg, None)
            }
            (None, Some("spiral")) => {
                let path = spiral_example(args.epsilon, args.segments)?;
                // counterexample diagnostics of the driven planar system
                let y = thermostat_lab::rough::solve_driven_ode(
                    &SpiralField,
                    &path,
                    &[args.epsilon, 0.0],
                    &[0.0, 1.0],
                    1.0,
                )?;
                let sup: f64 = (0..path.breakpoint_count())
                    .map(|i| {
                        let v = path.value(i);
                        (v[0] * v[0] + v[1] * v[1]).sqrt()
                    })
                    .fold(0.0, f64::max);
                let cfg = json!({
                    "builtin": "spiral",
                    "epsilon": args.epsilon,
                    "segments": args.segments,
                });
                // the path shrinks to zero in sup norm, yet the driven
                // solution keeps y_2(1) near 1/2 instead of the value 0 the
                // zero path would give
                let extras = json!({
                    "sup_norm": sup,
                    "y2_at_1": y[3],
                    "y2_of_zero_path": 0.0,
                    "y2_small_eps_limit": 0.5,
                });
                (path, cfg, Some(extras))
            }
            (None, Some(other)) => {
                return Err(thermostat_lab::Error::param(
                    "builtin",
                    format!("unknown builtin {other:?} (try \"spiral\")"),
                )
                .into())
            }
            _ => {
                return Err(thermostat_lab::Error::param(
                    "input",
                    "need exactly one of --input or --builtin",
                )
                .into())
            }
        };

        let grid = micro::uniform_grid(driver.start_time(), driver.end_time(), args.grid_points);
        let lift = RoughPathGrid::canonical_lift(&driver, &grid)?;
        let mut csv = Vec::new();
        io::write_lift_csv(&lift, &mut csv)?;
        out.write("lift.csv", &csv)?;

        let report = lift.holder_report(args.alpha)?;
        let mut report_json = serde_json::to_value(&report)?;
        if let Some(extras) = extras {
            report_json["spiral"] = extras;
        }
        out.write("holder.json", &serde_json::to_vec_pretty(&report_json)?)?;
        Ok(config)
    })();
    match result {
        Err(e) => {
            out.discard();
            Err(e)
        }
        Ok(config) => {
            let manifest = out.finish("lift", 0, threads, config)?;
            println!("wrote {}", manifest.display());
            Ok(())
        }
    }
}

fn cmd_sde(args: SdeArgs, threads: usize) -> Result<()> {
    let model = match args.model.as_str() {
        "strat-sphere" => SdeModel::StratSphere,
        "ito-speed" => SdeModel::ItoSpeed,
        "ou" => SdeModel::Ou,
        other => {
            return Err(
                thermostat_lab::Error::UnsupportedModel(format!("unknown model {other:?}")).into(),
            )
        }
    };
    let noise = match args.noise.as_str() {
        "green-kubo" => NoiseScale::GreenKubo,
        "unit" => NoiseScale::Unit,
        other => {
            return Err(thermostat_lab::Error::param(
                "noise",
                format!("unknown noise convention {other:?}"),
            )
            .into())
        }
    };
    let micro_defaults = ModelParams::new(
        args.n_particles,
        args.dim,
        args.lambda,
        0.0,
        args.energy,
        1.0,
        1.0,
    );
    let initial = match model {
        SdeModel::StratSphere => micro_defaults.default_initial_state(),
        SdeModel::ItoSpeed => {
            let speed = (args.energy / args.n_particles as f64).sqrt();
            vec![speed; args.n_particles]
        }
        SdeModel::Ou => vec![1.0],
    };
    let cfg = SdeConfig {
        model,
        n_particles: args.n_particles,
        dim: args.dim,
        collision_rate: args.lambda,
        total_energy: args.energy,
        step: args.step,
        t_final: args.t_final,
        initial,
        noise,
    };
    cfg.validate()?;

    let mut out = OutputSet::create(&args.out)?;
    let result = (|| -> Result<()> {
        for i in 0..args.paths {
            let mut rng = RngStream::new(args.seed, i as u64);
            let sample = match model {
                SdeModel::StratSphere => sde::strat_sphere_solve(&cfg, &mut rng)?,
                SdeModel::ItoSpeed => sde::ito_speed_solve(&cfg, &mut rng)?,
                SdeModel::Ou => sde::ou_solve(&cfg, &mut rng)?,
            };
            let mut csv = Vec::new();
            io::write_path_sample_csv(&sample, &mut csv)?;
            out.write(&format!("path_{i:04}.csv"), &csv)?;
            if sample.rejected_steps > 0 {
                out.write(
                    &format!("path_{i:04}.json"),
                    &serde_json::to_vec_pretty(&json!({
                        "seed": sample.seed,
                        "rejected_steps": sample.rejected_steps,
                    }))?,
                )?;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        out.discard();
        return Err(e);
    }
    let manifest = out.finish("sde", args.seed, threads, serde_json::to_value(&cfg)?)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn cmd_verify(args: VerifyArgs, _threads: usize) -> Result<bool> {
    let verdict = match args.study.as_str() {
        "autocov" => verify::run_autocov(args.paths, args.seed)?,
        "vcorr" => verify::run_vcorr(args.paths, args.seed)?,
        "greenkubo" => verify::run_greenkubo(args.paths, args.seed)?,
        "momentfit" => verify::run_momentfit(args.paths.min(2000), args.seed)?,
        "converge" => verify::run_converge(args.paths, args.seed)?,
        "ou-limit" => verify::run_ou_limit(args.paths, args.seed)?,
        other => {
            return Err(anyhow!(thermostat_lab::Error::param(
                "study",
                format!(
                    "unknown study {other:?} (autocov|vcorr|greenkubo|momentfit|converge|ou-limit)"
                ),
            )))
        }
    };
    let text = serde_json::to_string_pretty(&verdict)?;
    match &args.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, &text)?;
            // plot-ready CSV table next to the JSON verdict
            let mut table = String::from("name,pass,estimate,target,std_error,sigma_distance\n");
            for c in &verdict.checks {
                table.push_str(&format!(
                    "{:?},{},{},{},{},{}\n",
                    c.name, c.pass, c.estimate, c.target, c.std_error, c.sigma_distance
                ));
            }
            let csv_path = path.with_extension("csv");
            std::fs::write(&csv_path, table)?;
            println!("wrote {}", path.display());
            println!("wrote {}", csv_path.display());
        }
        None => println!("{text}"),
    }
    for w in &verdict.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "{}: {} ({}/{} checks passed)",
        verdict.experiment,
        if verdict.pass { "PASS" } else { "FAIL" },
        verdict.checks.iter().filter(|c| c.pass).count(),
        verdict.checks.len()
    );
    Ok(verdict.pass)
}

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use scvx_drive::oracle::check_discretization;
use scvx_drive::output::{history_rows, write_outputs};
use scvx_drive::scenario_file::{load_scenario, ScenarioFile, PRESETS};
use scvx_drive::solver::write_triplets;
use scvx_drive::ClarabelSolver;
use scvx_drive_core::scvx::{default_scaling, initial_guess, run, ScvxConfig};
use scvx_drive_core::subproblem::{assemble, SubproblemSpec};
use scvx_drive_core::transcription::foh_discretize;

/// Largest scaled discretization error accepted by `check-discretization`.
const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(name = "scvx-drive", version, about = "SCvx speed and path planning for a kinematic vehicle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan a trajectory and write trajectory.csv, history.csv and diagnostics.json.
    Plan {
        /// Preset name or path to a scenario JSON file.
        scenario: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        max_iter: Option<usize>,
        /// RK4 sub-steps per discretization interval.
        #[arg(long)]
        substeps: Option<usize>,
        /// Print the iteration history.
        #[arg(long)]
        history: bool,
        /// Write the first subproblem as sparse triplets to this file.
        #[arg(long, value_name = "FILE")]
        dump_subproblem: Option<PathBuf>,
    },
    /// Compare the discrete model against a fine RK4 integration.
    CheckDiscretization {
        scenario: String,
        #[arg(long, default_value_t = 8)]
        substeps: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// List the built-in scenarios, or print one as JSON.
    Presets {
        #[arg(long, value_name = "NAME")]
        show: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SCVX_DRIVE_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}

type BoxError = Box<dyn std::error::Error>;

fn execute(command: Command) -> Result<ExitCode, BoxError> {
    match command {
        Command::Plan { scenario, out, max_iter, substeps, history, dump_subproblem } => {
            let (_, mut scenario) = load_scenario(&scenario)?;
            if let Some(n) = substeps {
                scenario.substeps = n;
                scenario.validate()?;
            }
            let mut config = ScvxConfig::default();
            if let Some(n) = max_iter {
                config.max_iterations = n;
            }
            if let Some(path) = dump_subproblem {
                let guess = initial_guess(&scenario)?;
                let scaling = default_scaling(&scenario, &guess)?;
                let ltv = foh_discretize(&guess, &scenario.params, scenario.variant, scenario.substeps)?;
                let spec = SubproblemSpec {
                    params: scenario.params,
                    variant: scenario.variant,
                    weights: &scenario.weights,
                    constraints: &scenario.constraints,
                    trigger: scenario.trigger.as_ref(),
                    v_target: scenario.v_final,
                    scaling: &scaling,
                };
                let sub = assemble(&ltv, &guess, &spec, config.rho_tr_init)?;
                write_triplets(&sub.program, BufWriter::new(File::create(&path)?))?;
                println!("wrote {}", path.display());
            }

            let started = Instant::now();
            let plan = run(&scenario, &config, &ClarabelSolver)?;
            let elapsed = started.elapsed();
            if history {
                println!("iter,cost,predicted,ratio,rho_tr,nu_norm,accepted,status");
                for r in history_rows(&plan) {
                    println!(
                        "{},{:.9e},{:.9e},{:.4},{:.3e},{:.3e},{},{}",
                        r.iter, r.cost, r.predicted, r.ratio, r.rho_tr, r.nu_norm, r.accepted, r.status
                    );
                }
            }
            for path in write_outputs(&plan, &scenario, &out)? {
                println!("wrote {}", path.display());
            }
            let last = plan.trajectory.len() - 1;
            println!(
                "{}: {} after {} iterations in {:.2} s, terminal speed {:.3} m/s, trigger {}",
                scenario.name,
                plan.termination.as_str(),
                plan.iterations(),
                elapsed.as_secs_f64(),
                plan.trajectory.states[last][scvx_drive_core::model::state::V],
                if plan.trigger_active { "active" } else { "inactive" },
            );
            Ok(if plan.converged() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
        Command::CheckDiscretization { scenario, substeps, seed } => {
            let (_, scenario) = load_scenario(&scenario)?;
            let report = check_discretization(&scenario, seed, substeps)?;
            println!(
                "{}: max scaled error {:.3e} with {} substeps, {:.3e} with {} (ratio {:.1})",
                scenario.name,
                report.max_error,
                substeps,
                report.max_error_half,
                (substeps / 2).max(1),
                report.order_ratio()
            );
            Ok(if report.max_error <= ORACLE_TOLERANCE { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Presets { show } => {
            match show {
                Some(name) => {
                    let file = ScenarioFile::preset(&name)
                        .ok_or_else(|| format!("unknown preset '{name}'; available: {}", PRESETS.join(", ")))?;
                    println!("{}", file.to_json()?);
                }
                None => {
                    for name in PRESETS {
                        let file = ScenarioFile::preset(name).expect("listed preset exists");
                        println!(
                            "{name:<16} s = {} m, K = {}, V0 = {} m/s, V_final = {} m/s{}{}",
                            file.s_span,
                            file.nodes,
                            file.v0,
                            file.v_final,
                            if file.obstacles.is_empty() { "" } else { ", obstacle" },
                            if file.trigger.is_some() { ", evasion trigger" } else { "" },
                        );
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

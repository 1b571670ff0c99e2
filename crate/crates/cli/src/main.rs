use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sepopt::mission::{self, ConfigSource, ExitStatus, MissionError, RunManifest, Subset};

/// Co-optimize solar-array size, thruster modes and a low-thrust trajectory.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one mission and write solution, trace, validation and plot data.
    Solve(Common),
    /// Solve several mode subsets and tabulate their mass budgets.
    Compare {
        #[command(flatten)]
        common: Common,
        /// mode subsets, e.g. `3` `3,20` `3,20,21@3e-4:1e-4`
        #[arg(long = "subset", required = true, num_args = 1..)]
        subsets: Vec<String>,
    },
    /// Audit a stored solution against the unsmoothed models.
    Validate {
        #[command(flatten)]
        common: Common,
        /// solution.json written by `solve`
        #[arg(long)]
        solution: PathBuf,
    },
    /// Write the interpolated initial guess.
    EmitGuess(Common),
}

#[derive(Args)]
struct Common {
    /// configuration file, or `bundled:<name>`
    #[arg(long)]
    config: String,
    /// throttle table CSV replacing the configured one
    #[arg(long)]
    table: Option<PathBuf>,
    /// output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// node count override
    #[arg(long)]
    nodes: Option<usize>,
    /// explicit smoothing steps, `rho_p:rho_e,...`
    #[arg(long)]
    schedule: Option<String>,
    /// start no continuation step after this many minutes
    #[arg(long)]
    max_minutes: Option<f64>,
}

impl Common {
    fn manifest(&self) -> Result<RunManifest, MissionError> {
        let schedule = self.schedule.as_deref().map(mission::parse_schedule).transpose()?;
        Ok(RunManifest {
            config: ConfigSource::from_arg(&self.config),
            throttle_table: self.table.clone(),
            output_directory: self.out.clone(),
            schedule,
            n_nodes: self.nodes,
            max_minutes: self.max_minutes,
        })
    }
}

fn fail(e: MissionError) -> ExitStatus {
    eprintln!("error: {e}");
    e.exit_status()
}

fn execute(command: Command) -> ExitStatus {
    match command {
        Command::Solve(common) => {
            let manifest = match common.manifest() {
                Ok(m) => m,
                Err(e) => return fail(e),
            };
            let outcome = mission::run(&manifest);
            if let Some(s) = &outcome.solution {
                let m = &s.mass;
                println!(
                    "m_u {:.4} kg  m_f {:.4} kg  m_SA {:.4} kg  m_PSPU {:.4} kg  m_PSFS {:.4} kg  P_BL {:.4} W",
                    m.m_u, m.m_f, m.m_sa, m.m_pspu, m.m_psfs, s.decision.p_bl
                );
            }
            match outcome.status {
                ExitStatus::Success => println!("{}", outcome.message),
                _ => eprintln!("{}", outcome.message),
            }
            outcome.status
        }
        Command::Compare { common, subsets } => {
            let run = || -> Result<ExitStatus, MissionError> {
                let manifest = common.manifest()?;
                let subsets = subsets.iter().map(|s| Subset::parse(s)).collect::<Result<Vec<_>, _>>()?;
                let table = mission::compare_modesets(&manifest, &subsets)?;
                print!("{}", table.to_csv());
                Ok(table.rows.iter().map(|r| r.status).max().unwrap_or(ExitStatus::Success))
            };
            run().unwrap_or_else(fail)
        }
        Command::Validate { common, solution } => {
            let run = || -> Result<ExitStatus, MissionError> {
                let (report, status) = mission::validate_file(&common.manifest()?, &solution)?;
                println!("{}", report.to_json());
                Ok(status)
            };
            run().unwrap_or_else(fail)
        }
        Command::EmitGuess(common) => {
            let run = || -> Result<ExitStatus, MissionError> {
                let guess = mission::emit_guess(&common.manifest()?)?;
                println!("guess: m_u {:.4} kg, P_BL {:.1} W", guess.mass.m_u, guess.decision.p_bl);
                Ok(ExitStatus::Success)
            };
            run().unwrap_or_else(fail)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let status = execute(cli.command);
    ExitCode::from(status.code() as u8)
}

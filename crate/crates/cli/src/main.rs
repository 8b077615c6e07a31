use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridstab::region::RangeMode;
use gridstab::sim::Truth;
use gridstab_cli::commands::{self, Artifacts};
use gridstab_cli::{CliError, GainPolicy, Scenario};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gridstab",
    version,
    about = "Stability-certified DER voltage control on radial feeders"
)]
struct Cli {
    /// Scenario TOML file.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Directory for the JSON report and CSV/SVG artifacts; JSON goes to stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Gershgorin safety margin.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// `paper` or `safe`.
    #[arg(long, global = true)]
    range_mode: Option<RangeMode>,
    /// `linear` or `sweep`.
    #[arg(long, global = true)]
    truth: Option<Truth>,
    #[arg(long, global = true)]
    gain_policy: Option<GainPolicy>,
    /// Exit with status 1 when the closed loop is not stable.
    #[arg(long, global = true)]
    require_stable: bool,
    /// Also write SVG figures (region slice, voltage envelope).
    #[arg(long, global = true)]
    svg: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the open-loop model and print its dimensions.
    Build,
    /// Closed-loop eigenvalues and Gershgorin certificate for one gain.
    Stability,
    /// Stability polytope, Chebyshev center and operating ranges.
    Region,
    /// Time-domain run with and without the controller.
    Simulate,
    /// Fixed versus tariff-adjusted gains over the horizon.
    Economics,
    /// Compare the scenario's siting with its candidates.
    SiteScan,
}

fn emit<T: Serialize>(
    out: Option<&Path>,
    name: &str,
    report: &T,
    artifacts: &Artifacts,
    summary: &str,
) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(report).map_err(|e| CliError::Input(e.to_string()))?;
    match out {
        Some(dir) => {
            let io = |e: std::io::Error| CliError::File(format!("{}: {e}", dir.display()));
            std::fs::create_dir_all(dir).map_err(io)?;
            std::fs::write(dir.join(format!("{name}.json")), json + "\n").map_err(io)?;
            for (file, body) in artifacts {
                std::fs::write(dir.join(file), body).map_err(io)?;
            }
            print!("{summary}");
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .scenario
        .as_deref()
        .ok_or_else(|| CliError::Input("--scenario is required".into()))?;
    let mut scn = Scenario::load(path)?;
    if let Some(s) = cli.seed {
        scn.seed = s;
    }
    if let Some(e) = cli.eps {
        scn.eps = e;
    }
    if let Some(m) = cli.range_mode {
        scn.range_mode = m;
    }
    if let Some(t) = cli.truth {
        scn.truth = t;
    }
    if let Some(g) = cli.gain_policy {
        scn.gain_policy = g;
    }
    let out = cli.out.as_deref();
    let none = Artifacts::new();
    log::info!("scenario {}", scn.label());
    let started = std::time::Instant::now();
    let stable = match cli.command {
        Command::Build => {
            let r = commands::cmd_build(&scn)?;
            let summary = format!(
                "{}: n={} phases={} d={} s={} y={}\n",
                r.scenario, r.n, r.phases, r.d, r.s, r.y
            );
            emit(out, "build", &r, &none, &summary)?;
            None
        }
        Command::Stability => {
            let r = commands::cmd_stability(&scn)?;
            emit(out, "stability", &r, &none, &r.table())?;
            Some(r.stable())
        }
        Command::Region => {
            let r = commands::cmd_region(&scn, cli.svg)?;
            let summary = format!(
                "{}: y={} rows={} radius={:.6} center rho={:.6} width={:.6}\n",
                r.scenario, r.y, r.rows, r.radius, r.center_rho, r.width
            );
            emit(out, "region", &r, &r.artifacts, &summary)?;
            Some(r.center_rho < 1.0)
        }
        Command::Simulate => {
            let r = commands::cmd_simulate(&scn, cli.svg)?;
            let settle = |m: &gridstab::sim::MetricsReport| {
                m.settling_time_s
                    .map_or("never".to_string(), |t| format!("{t} s"))
            };
            let summary = format!(
                "{}: violation share {:.4} (off {:.4}), settling {} (off {})\n",
                r.scenario,
                r.controlled.violation_share,
                r.uncontrolled.violation_share,
                settle(&r.controlled),
                settle(&r.uncontrolled)
            );
            emit(out, "simulate", &r, &r.artifacts, &summary)?;
            None
        }
        Command::Economics => {
            let r = commands::cmd_economics(&scn)?;
            emit(out, "economics", &r, &r.artifacts, &r.table)?;
            None
        }
        Command::SiteScan => {
            let r = commands::cmd_site_scan(&scn)?;
            emit(out, "site_scan", &r, &none, &r.table())?;
            None
        }
    };
    log::info!("finished in {:.2?}", started.elapsed());
    if cli.require_stable && stable == Some(false) {
        return Err(CliError::Unstable(scn.label()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

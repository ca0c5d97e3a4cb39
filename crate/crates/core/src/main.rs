//! Command-line front end: single runs, cutoff ladders, and re-verification
//! of existing outputs.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use vlasim::harness::{self, LadderReport, LadderSpec};
use vlasim::RunConfig;

#[derive(Parser)]
#[command(
    name = "vlasim",
    version,
    about = "Multi-species Coulomb plasma: truncated-dynamics characteristics simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation at the configured cutoff.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Override the velocity cutoff N.
        #[arg(long)]
        n_cut: Option<f64>,
        /// Override the spatial cutoff exponent beta.
        #[arg(long)]
        beta: Option<f64>,
        /// Override the time horizon.
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run a ladder of increasing cutoffs and fit the scaling exponents.
    Ladder {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated cutoffs (e.g. 8,16,32,64); falls back to the
        /// config's `ladder` entry.
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<f64>>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        t_final: Option<f64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Drop the 3*beta < 14/15 guard (disables the Q^N exponent check).
        #[arg(long)]
        no_q_check: bool,
    },
    /// Recompute every ladder check from outputs on disk.
    Verify {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Emit the summary JSON with all fitted exponents and pass/fail flags.
    Report {
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Write the JSON here instead of stdout.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn check_line(name: &str, ok: bool, detail: String) {
    println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn print_report(rep: &LadderReport) {
    println!(
        "ladder N = {:?}, beta = {}, alpha = {}",
        rep.n_values, rep.beta, rep.alpha
    );
    check_line(
        "energy-scaling(total)",
        rep.total_energy_ok,
        format!(
            "slope {:.4} <= {:.4}",
            rep.total_energy_slope, rep.total_energy_limit
        ),
    );
    check_line(
        "energy-scaling(kinetic)",
        rep.kinetic_ok,
        format!(
            "slope {:.4} within {:.4} +- 0.2",
            rep.kinetic_slope, rep.kinetic_target
        ),
    );
    check_line(
        "far-field-slope",
        rep.farfield_slope_ok,
        format!(
            "slope {:.4} within {:.4} +- 0.15",
            rep.farfield_slope, rep.farfield_target
        ),
    );
    check_line(
        "far-field-bound",
        rep.farfield_bound_ok,
        "max|E| r^2 below 4 sum_i M_i at all radii".into(),
    );
    check_line(
        "vmax-scaling",
        rep.vmax_ok,
        format!("slope {:.4} <= {:.2}", rep.vmax_slope, rep.vmax_limit),
    );
    check_line(
        "qsup-scaling",
        rep.qsup_ok,
        format!("slope {:.4} <= {:.4}", rep.qsup_slope, rep.qsup_limit),
    );
    check_line(
        "tau-ratio",
        rep.tau_ok,
        format!("ratios {:?} < {:.4}", rep.tau_ratios, rep.tau_limit),
    );
    check_line(
        "energy-conservation",
        rep.drift_ok,
        format!("drifts {:?} < {:.0e}", rep.energy_drifts, rep.drift_limit),
    );
    check_line(
        "field-energy-identity",
        rep.identity_ok,
        format!(
            "residuals {:?} < {:.2}",
            rep.identity_residuals, rep.identity_limit
        ),
    );
    let sups: Vec<f64> = rep.cauchy.pairs.iter().map(|p| p.sup_x).collect();
    check_line(
        "cauchy-monotone",
        rep.cauchy.non_increasing,
        format!("sup distances {sups:?}"),
    );
    check_line(
        "cauchy-halving",
        rep.cauchy_halving_ok,
        format!("sup distances {sups:?} (>= 2x per doubling)"),
    );
    check_line(
        "envelope",
        rep.envelope_ok,
        format!("lambda' {:?} (positive, +-20%)", rep.envelope_lambdas),
    );
    println!("overall: {}", if rep.all_ok { "PASS" } else { "FAIL" });
}

fn run() -> Result<bool, vlasim::Error> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            n_cut,
            beta,
            t_final,
            out_dir,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_overrides(n_cut, beta, t_final)?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("config.resolved"), cfg.to_toml())?;
            let run = harness::run_one(&cfg, cfg.cutoff.n_cut, Some(&out_dir))?;
            let s = &run.summary;
            println!(
                "N = {}: {} particles, E(0) = {:.6e}, E(T) = {:.6e}, drift {:.3e}",
                s.n_cut, s.particle_count, s.energy0.total, s.energy_final.total, s.energy_drift
            );
            println!(
                "identity residuals: {:.3e} (t=0), {:.3e} (t=T); v_max {:.3}, Q^N {:.6e}",
                s.identity0.residual,
                s.identity_final.residual,
                s.kinematics_final.v_max,
                s.qsup_final
            );
            println!("outputs under {}", out_dir.display());
            Ok(true)
        }
        Command::Ladder {
            config,
            n,
            beta,
            t_final,
            out_dir,
            no_q_check,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply_overrides(None, beta, t_final)?;
            let n_values = n.or_else(|| cfg.ladder.clone()).ok_or_else(|| {
                vlasim::Error::Ladder("no cutoffs: pass --n or a ladder entry".into())
            })?;
            std::fs::create_dir_all(&out_dir)?;
            std::fs::write(out_dir.join("config.resolved"), cfg.to_toml())?;
            let mut spec = LadderSpec::new(cfg, n_values, Some(out_dir.clone()));
            spec.enforce_q_exponent = !no_q_check;
            let runs = harness::run_ladder(&spec)?;
            for r in &runs {
                println!(
                    "N = {}: {} particles in {:.1}s, E(0) = {:.6e}, drift {:.3e}",
                    r.summary.n_cut,
                    r.summary.particle_count,
                    r.summary.elapsed_seconds,
                    r.summary.energy0.total,
                    r.summary.energy_drift
                );
            }
            if runs.len() >= 4 {
                let rep = harness::ladder_report(&runs)?;
                std::fs::write(
                    out_dir.join("report.json"),
                    serde_json::to_string_pretty(&rep).expect("report serializes"),
                )?;
                print_report(&rep);
                Ok(rep.all_ok)
            } else {
                println!("(fewer than 4 rungs: scaling report skipped)");
                Ok(true)
            }
        }
        Command::Verify { out_dir } => {
            let runs = harness::load_ladder(&out_dir)?;
            let rep = harness::ladder_report(&runs)?;
            print_report(&rep);
            Ok(rep.all_ok)
        }
        Command::Report { out_dir, json } => {
            let runs = harness::load_ladder(&out_dir)?;
            let rep = harness::ladder_report(&runs)?;
            let text = serde_json::to_string_pretty(&rep).expect("report serializes");
            match json {
                Some(path) => std::fs::write(path, text)?,
                None => println!("{text}"),
            }
            Ok(rep.all_ok)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

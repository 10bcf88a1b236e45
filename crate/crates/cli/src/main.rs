use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use eigenswing::dynamics::{max_potential, PendulumParams};
use eigenswing::harness::{
    run_experiment, run_sweep, ExperimentConfig, ModeModel, MultiplierGrid, SWEEP_TORQUES, TAU_G_HAT,
};
use eigenswing::manifold::{build_chart, ManifoldChart, DEFAULT_SAMPLES_PER_ORBIT};
use eigenswing::modal::{
    continue_mode, default_ceiling, instability_onset, multiplier_grid, ContinuationControls, ModeFamily,
    ShootingOptions, MIN_ONSET_GRID,
};

/// Nonlinear normal modes of the double pendulum and swing-up along them.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Continue brake-orbit families and save them.
    Modes {
        /// Modes to continue.
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        mode: Vec<usize>,
        /// Top energy [J]. Defaults to just below the upright potential.
        #[arg(long)]
        ceiling: Option<f64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Characteristic multipliers on an energy grid, and the instability onset.
    Multipliers {
        /// A `mode<i>_family.json` written by `modes`.
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value_t = 100)]
        grid: usize,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Triangulate the eigenmanifold chart of a family.
    Chart {
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SAMPLES_PER_ORBIT)]
        samples: usize,
        /// Chart file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// One closed-loop swing-up from the hanging position.
    Swingup {
        /// Experiment config; `config --default` prints a template.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's mode.
        #[arg(long)]
        mode: Option<usize>,
        /// Overrides the config's torque limit, on both joints [N·m].
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        family: PathBuf,
        /// Prebuilt chart; built from the family when absent.
        #[arg(long)]
        chart: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Swing-up times over torque limits and modes.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory holding `mode1_family.json` and `mode2_family.json`.
        #[arg(long, default_value = "data")]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        taus: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        modes: Vec<usize>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print or write an experiment config.
    Config {
        /// Emit the built-in defaults.
        #[arg(long)]
        default: bool,
        /// Config to validate and echo.
        #[arg(long, conflicts_with = "default")]
        from: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let p = PendulumParams::default();
    match cli.command {
        Command::Modes { mode, ceiling, out } => {
            let ceiling = ceiling.unwrap_or_else(|| default_ceiling(&p));
            for m in mode {
                let f = continue_mode(&p, m, ceiling, &ContinuationControls::default())
                    .with_context(|| format!("continuing mode {m}"))?;
                let path = f.save(&out)?;
                let (lo, hi) = f.energy_range();
                println!(
                    "mode {m}: {} orbits, E in [{lo:.3e}, {hi:.6}] J (E_max {:.6}), top period {:.3} s -> {}",
                    f.orbits.len(),
                    max_potential(&p),
                    f.top().period,
                    path.display()
                );
            }
        }
        Command::Multipliers { family, grid, out } => {
            let f = load_family(&family)?;
            let records = multiplier_grid(&p, &f, grid, &ShootingOptions::default())?;
            let onset = if grid >= MIN_ONSET_GRID {
                instability_onset(&p, &f, &records).ok()
            } else {
                None
            };
            let g = MultiplierGrid::new(f.mode_index, records, onset);
            g.save(&out)?;
            match onset {
                Some(e) => println!("mode {}: instability onset at {e:.2} J", f.mode_index),
                None => println!("mode {}: no onset found on this grid", f.mode_index),
            }
        }
        Command::Chart { family, samples, out } => {
            let f = load_family(&family)?;
            let c = build_chart(&p, &f, samples, 1)?;
            c.save(&out)?;
            println!(
                "mode {}: {} points, {} triangles -> {}",
                c.mode_index,
                c.points.len(),
                c.triangle_count(),
                out.display()
            );
        }
        Command::Swingup { config, mode, tau, family, chart, out } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.controller.mode_index = m;
            }
            if let Some(t) = tau {
                cfg.controller.tau_max = [t; 2];
            }
            let f = load_family(&family)?;
            let c = match chart {
                Some(path) => ManifoldChart::load(&path)?,
                None => build_chart(&p, &f, DEFAULT_SAMPLES_PER_ORBIT, 1)?,
            };
            let r = run_experiment(&cfg, &f, &c)?;
            let stem = format!("swingup_mode{}_tau{}", cfg.controller.mode_index, cfg.controller.tau_max[0]);
            r.save(&out, &stem)?;
            match (r.t_hold, r.t_end) {
                (Some(h), Some(e)) => println!("success: hold at {h:.3} s, t_end {e:.3} s"),
                _ => println!(
                    "FAIL ({})",
                    r.failure_reason.map_or("unknown".to_string(), |f| f.to_string())
                ),
            }
            println!("E_des {:.6} J, q_crit1 {:.2} deg", r.e_des, r.q_crit[0].to_degrees());
        }
        Command::Sweep { config, data, taus, modes, out } => {
            let base = load_config(config.as_deref())?;
            let taus = taus.unwrap_or_else(|| SWEEP_TORQUES.to_vec());
            let mut families = Vec::new();
            for m in [1, 2] {
                let path = data.join(format!("mode{m}_family.json"));
                if modes.contains(&m) || (m == 1 && path.exists()) {
                    families.push(load_family(&path)?);
                }
            }
            let charts = families
                .iter()
                .map(|f| build_chart(&p, f, DEFAULT_SAMPLES_PER_ORBIT, 1))
                .collect::<eigenswing::Result<Vec<_>>>()?;
            let models: Vec<ModeModel> = families
                .iter()
                .zip(&charts)
                .map(|(family, chart)| ModeModel { family, chart })
                .collect();
            let table = run_sweep(&base, &taus, &modes, &models)?;
            table.save(&out)?;
            print!("{}", table.to_text());
            println!("(percent of {TAU_G_HAT} N·m)");
            if !table.all_completed() {
                eprintln!("some cells errored; see sweep.json");
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Config { default, from, out } => {
            let cfg = match (default, from) {
                (true, _) | (false, None) => ExperimentConfig::default(),
                (false, Some(path)) => ExperimentConfig::load(&path)?,
            };
            let text = cfg.to_toml();
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_family(path: &Path) -> Result<ModeFamily> {
    if !path.exists() {
        bail!("{} not found; run `eigenswing modes` first", path.display());
    }
    Ok(ModeFamily::load(path)?)
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

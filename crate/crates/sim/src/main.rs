use std::path::{Path, PathBuf};
use std::process::ExitCode;

use airdrop_core::planner::{plan, release_window_duration, PlanStatus};
use airdrop_sim::campaign::{run_campaign, summarize};
use airdrop_sim::export::{export_flight, write_metrics_csv, write_summary_csv};
use airdrop_sim::{run_flight, Ablation, Result, ScenarioConfig, SimError, TriggerMode};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

#[derive(Parser)]
#[command(name = "airdrop", version, about = "Plan, fly and evaluate aerial throws")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML, or JSON by extension).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    trigger: Option<TriggerMode>,
    #[arg(long, value_enum)]
    ablation: Option<Ablation>,
}

impl Overrides {
    fn apply(&self, s: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(t) = self.trigger {
            s.trigger = t;
        }
        if let Some(a) = self.ablation {
            s.ablation = a;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the throwing trajectory and write trajectory.json.
    Plan(Common),
    /// Fly one closed-loop throw and write its result, traces and plot data.
    Fly {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fly scenarios over consecutive seeds and write metrics.csv and summary.csv.
    Campaign {
        /// Scenario files; repeat the flag for several.
        #[arg(long, required = true)]
        scenario: Vec<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Flights per scenario, using seeds `seed..seed + repeats`.
        #[arg(long, default_value_t = 10)]
        repeats: u64,
        #[command(flatten)]
        overrides: Overrides,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Release-window duration against the window half-width tau.
    SweepTau {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2, 0.3])]
        taus: Vec<f64>,
        /// Landing-error threshold defining the window [m].
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
    },
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan(c) => {
            let s = ScenarioConfig::load(&c.scenario)?;
            let outcome = plan(&s.planner)?;
            create_dir(&c.out)?;
            let path = c.out.join("trajectory.json");
            std::fs::write(&path, outcome.document().to_json()).map_err(|e| SimError::io(&path, e))?;
            println!(
                "{}: {:?} after {} iterations, t_r = {:.4} s, total {:.3} s, worst window error {:.4} m -> {}",
                s.id,
                outcome.status,
                outcome.iterations,
                outcome.window.t_r,
                outcome.trajectory.total_duration(),
                outcome.worst_window_error,
                path.display()
            );
            if outcome.status == PlanStatus::NotConverged {
                eprintln!("warning: planner did not meet the window tolerance");
            }
        }
        Command::Fly { common, overrides } => {
            let mut s = ScenarioConfig::load(&common.scenario)?;
            overrides.apply(&mut s);
            let r = run_flight(&s);
            export_flight(&r, &common.out)?;
            match (&r.failure, r.landing_error) {
                (Some(f), _) => println!("{} seed {}: FAILED ({f})", r.scenario_id, r.seed),
                (None, Some(e)) => println!(
                    "{} seed {}: landing error {:.4} m, release at {:.3} s, tracking RMSE {:.4} m",
                    r.scenario_id,
                    r.seed,
                    e,
                    r.release_time.unwrap_or(f64::NAN),
                    r.tracking_rmse
                ),
                (None, None) => unreachable!("successful flights have a landing"),
            }
        }
        Command::Campaign { scenario, out, repeats, overrides, workers } => {
            if repeats == 0 {
                return Err(SimError::Config("--repeats must be at least 1".into()));
            }
            let mut scenarios = scenario.iter().map(|p| ScenarioConfig::load(p)).collect::<Result<Vec<_>>>()?;
            scenarios.iter_mut().for_each(|s| overrides.apply(s));
            let base = overrides.seed.unwrap_or(0);
            let seeds: Vec<u64> = (base..base + repeats).collect();
            let results = run_campaign(&scenarios, &seeds, workers)?;
            create_dir(&out)?;
            write_metrics_csv(&results, &out.join("metrics.csv"))?;
            let stats = summarize(&results);
            write_summary_csv(&stats, &results, &out.join("summary.csv"))?;
            for c in &stats {
                println!(
                    "{:<12} {:<8} {:<5} n={:<3} failed={:<2} RMSE {:.4} MEAN {:.4} MAX {:.4} m",
                    c.scenario_id,
                    c.trigger.as_str(),
                    c.ablation.as_str(),
                    c.flights,
                    c.failures,
                    c.rmse,
                    c.mean,
                    c.max
                );
            }
        }
        Command::SweepTau { common, taus, threshold } => {
            let s = ScenarioConfig::load(&common.scenario)?;
            create_dir(&common.out)?;
            let path = common.out.join("tau_sweep.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| SimError::io(&path, std::io::Error::other(e)))?;
            let csv_err = |e: csv::Error| SimError::io(&path, std::io::Error::other(e));
            w.write_record(["tau_s", "window_s", "t_r_s", "v_release", "status"]).map_err(csv_err)?;
            for tau in taus {
                let mut cfg = s.planner.clone();
                cfg.tau = tau;
                let o = plan(&cfg)?;
                let target = Vector3::from(cfg.target);
                let window = release_window_duration(&o.trajectory, o.window.t_r, threshold, &target, cfg.g_mag);
                let [_, v] = o.trajectory.derivatives::<2>(o.window.t_r);
                println!("tau {tau:.3} s: window {window:.4} s at t_r {:.4} s", o.window.t_r);
                w.write_record([
                    tau.to_string(),
                    window.to_string(),
                    o.window.t_r.to_string(),
                    v.norm().to_string(),
                    format!("{:?}", o.status),
                ])
                .map_err(csv_err)?;
            }
            w.flush().map_err(|e| SimError::io(&path, e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

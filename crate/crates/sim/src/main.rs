use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use lifeline_core::backup::{BackupOption, BackupStore, DEFAULT_STORE_CAPACITY};
use lifeline_core::power::{calibrate, EnergyModel, Observation, Profile};
use lifeline_sim::experiments::{run_battery_experiment, usage_profile};
use lifeline_sim::metrics::SnapshotFile;
use lifeline_sim::setups::{build_setup, SetupId, Usage};
use lifeline_sim::{export_metrics, export_topology, Format, MalformedScenario, Scenario, Simulation};

#[derive(Parser)]
#[command(name = "lifeline-sim", version, about = "Simulator for the lifeline emergency ad hoc network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write metrics.json and metrics.csv.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the seed stored in the scenario.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one of the built-in set-ups A to G.
    Setup {
        #[arg(value_enum, ignore_case = true)]
        id: SetupId,
        #[arg(long, default_value_t = 1000)]
        messages: u32,
        /// Backup option for E to G (default 1).
        #[arg(long)]
        backup_option: Option<u8>,
        /// Threshold of the backup option, where it takes one.
        #[arg(long)]
        threshold: Option<u8>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the scenario JSON here instead of running it.
        #[arg(long)]
        emit_scenario: Option<PathBuf>,
    },
    /// Phone lifetime under a usage pattern: idle, screen or <seconds>s.
    Battery {
        #[arg(long)]
        interval: Usage,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the topology of a finished run at a given time as DOT.
    Topo {
        /// Output directory of an earlier `run`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        at: u64,
    },
    /// List the records in a backup log.
    BackupDump { log: PathBuf },
    /// Fit the energy model to measured lifetimes (defaults to the phone
    /// measurements) and print held-out predictions.
    Calibrate {
        #[arg(long, default_value_t = 15.0)]
        idle_h: f64,
        #[arg(long, default_value_t = 7.0)]
        screen_h: f64,
        #[arg(long, default_value_t = 10.0)]
        interval_s: f64,
        #[arg(long, default_value_t = 7.0)]
        interval_h: f64,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<MalformedScenario>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { scenario, seed, out } => {
            let s = Scenario::load(&scenario)?;
            let seed = seed.unwrap_or(s.seed);
            run_and_write(&s, seed, &out)
        }
        Command::Setup {
            id,
            messages,
            backup_option,
            threshold,
            seed,
            out,
            emit_scenario,
        } => {
            let backup = backup_option.map(|n| BackupOption::new(n, threshold)).transpose()?;
            if backup.is_some() && !id.has_backup() {
                bail!("set-up {id} runs without backup; use E, F or G");
            }
            let mut s = build_setup(id, messages, backup);
            s.seed = seed;
            if let Some(path) = emit_scenario {
                fs::write(&path, s.to_json() + "\n").with_context(|| format!("writing {}", path.display()))?;
                return Ok(());
            }
            match out {
                Some(dir) => run_and_write(&s, seed, &dir),
                None => {
                    let mut sim = Simulation::new(&s, seed)?;
                    sim.run();
                    print!("{}", export_metrics(&sim.finish(), Format::Csv));
                    Ok(())
                }
            }
        }
        Command::Battery { interval, seed } => {
            let r = run_battery_experiment(interval, EnergyModel::default(), seed);
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }
        Command::Topo { run, at } => {
            let path = run.join("metrics.json");
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let file: SnapshotFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            print!("{}", export_topology(&file.snapshots, at)?);
            Ok(())
        }
        Command::BackupDump { log } => {
            let (store, report) = BackupStore::load(&log, DEFAULT_STORE_CAPACITY)
                .with_context(|| format!("reading {}", log.display()))?;
            println!("msg_id,src,dst,priority,hops,bytes,delivered");
            for m in store.messages() {
                println!(
                    "{},{},{},{},{},{},{}",
                    m.msg_id.0,
                    m.src,
                    m.dst,
                    m.priority.level(),
                    m.hop_count,
                    m.payload.len(),
                    store.is_delivered(m.msg_id)
                );
            }
            eprintln!("{} records, {} trailing bytes discarded", report.records, report.truncated_bytes);
            Ok(())
        }
        Command::Calibrate {
            idle_h,
            screen_h,
            interval_s,
            interval_h,
        } => {
            let obs = [
                Observation {
                    profile: Profile::IDLE,
                    lifetime_h: Some(idle_h),
                },
                Observation {
                    profile: Profile::SCREEN,
                    lifetime_h: Some(screen_h),
                },
                Observation {
                    profile: Profile::forwarding(interval_s),
                    lifetime_h: Some(interval_h),
                },
            ];
            let model = calibrate(&obs)?;
            println!("{}", serde_json::to_string_pretty(&model)?);
            for usage in [Usage::Every(60), Usage::Every(300)] {
                println!("{usage}: {:.2} h", model.lifetime_hours(&usage_profile(usage), 1.0));
            }
            Ok(())
        }
    }
}

fn run_and_write(s: &Scenario, seed: u64, out: &Path) -> Result<()> {
    let mut sim = Simulation::new(s, seed)?;
    sim.run();
    let metrics = sim.finish();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("metrics.json"), export_metrics(&metrics, Format::Json))?;
    fs::write(out.join("metrics.csv"), export_metrics(&metrics, Format::Csv))?;
    for (node, bytes) in sim.backup_logs() {
        fs::write(out.join(format!("backup-{node}.log")), bytes)?;
    }
    eprintln!(
        "{}: {} created, {} delivered, stop {:?} at {} ms",
        metrics.scenario, metrics.counters.created, metrics.counters.delivered, metrics.stop_reason, metrics.end_time_ms
    );
    Ok(())
}

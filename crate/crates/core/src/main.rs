use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use bwsched::engine::DEFAULT_ORACLE_BUDGET;
use bwsched::scenario::{
    comparison_table, generate_scenarios, load_scenario, run_detailed, run_oracle, save_scenario, GeneratorParams,
    RunError, Scenario,
};
use bwsched::SchedulerKind;

#[derive(Parser)]
#[command(name = "bwsched", version, about = "Bandwidth-aware task scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Output {
    Json,
    Csv,
    Gantt,
    Text,
}

#[derive(clap::Args)]
struct ScenarioArgs {
    /// Scenario file, or `example1` for the built-in example.
    #[arg(long)]
    scenario: String,
    /// Override the scenario's slot duration (seconds).
    #[arg(long)]
    slot_duration: Option<f64>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario, RunError> {
        let mut s = load_scenario(&self.scenario)?;
        if let Some(d) = self.slot_duration {
            s = s.with_slot_duration(d);
            s.validate()?;
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheduler.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "bass")]
        scheduler: SchedulerKind,
        /// Defaults to the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        output: Output,
        /// Print scheduling wall time to stderr.
        #[arg(long)]
        timing: bool,
    },
    /// Run several schedulers on the same scenario.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, value_delimiter = ',', default_value = "hds,bar,bass,prebass")]
        schedulers: Vec<SchedulerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "json")]
        output: Output,
        #[arg(long)]
        timing: bool,
    },
    /// Write random scenarios as TOML files.
    Generate {
        #[arg(long, default_value_t = 6)]
        nodes: u32,
        #[arg(long, default_value_t = 30)]
        tasks: u32,
        #[arg(long, default_value_t = 2)]
        replicas: u32,
        #[arg(long, default_value_t = 10)]
        count: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 64.0)]
        split_size: f64,
        #[arg(long, default_value_t = 100.0)]
        link_capacity: f64,
        #[arg(long, default_value_t = 6)]
        tp_min: u32,
        #[arg(long, default_value_t = 12)]
        tp_max: u32,
        #[arg(long, default_value_t = 0)]
        idle_min: u32,
        #[arg(long, default_value_t = 40)]
        idle_max: u32,
        #[arg(long, default_value_t = 1.0)]
        slot_duration: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Exhaustive optimum for a small scenario.
    Oracle {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = DEFAULT_ORACLE_BUDGET)]
        budget: u64,
        #[arg(long, value_enum, default_value = "json")]
        output: Output,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<RunError>().map_or(1, RunError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Run {
            scenario,
            scheduler,
            seed,
            output,
            timing,
        } => {
            let s = scenario.load()?;
            let out = run_detailed(&s, scheduler, seed.unwrap_or(s.seed))?;
            if timing {
                eprintln!("{}: {:?}", scheduler, out.report.runtime);
            }
            match output {
                Output::Json => println!("{}", serde_json::to_string_pretty(&out.report)?),
                Output::Csv => print!("{}", out.report.assignments_csv()?),
                Output::Gantt => print!("{}", out.timeline.render_gantt()),
                Output::Text => {
                    print!("{}", comparison_table(std::slice::from_ref(&out.report)));
                    print!("{}", out.timeline.render_gantt());
                }
            }
        }
        Command::Compare {
            scenario,
            schedulers,
            seed,
            output,
            timing,
        } => {
            let s = scenario.load()?;
            let seed = seed.unwrap_or(s.seed);
            let mut reports = Vec::new();
            let mut gantts = Vec::new();
            for kind in schedulers {
                let out = run_detailed(&s, kind, seed)?;
                if timing {
                    eprintln!("{}: {:?}", kind, out.report.runtime);
                }
                gantts.push((kind, out.timeline.render_gantt()));
                reports.push(out.report);
            }
            match output {
                Output::Json => println!("{}", serde_json::to_string_pretty(&reports)?),
                Output::Csv => {
                    let mut w = csv::Writer::from_writer(std::io::stdout());
                    w.write_record(["scenario", "scheduler", "seed", "makespan", "locality_ratio"])?;
                    for r in &reports {
                        w.write_record([
                            r.scenario.clone(),
                            r.scheduler.name().to_string(),
                            r.seed.to_string(),
                            r.makespan.to_string(),
                            r.locality_ratio.to_string(),
                        ])?;
                    }
                    w.flush()?;
                }
                Output::Text => print!("{}", comparison_table(&reports)),
                Output::Gantt => {
                    for (kind, g) in gantts {
                        println!("{kind}");
                        println!("{g}");
                    }
                }
            }
        }
        Command::Generate {
            nodes,
            tasks,
            replicas,
            count,
            seed,
            split_size,
            link_capacity,
            tp_min,
            tp_max,
            idle_min,
            idle_max,
            slot_duration,
            out_dir,
        } => {
            let params = GeneratorParams {
                nodes,
                tasks,
                replicas,
                count,
                seed,
                split_size,
                link_capacity,
                compute_time: (tp_min, tp_max),
                initial_idle: (idle_min, idle_max),
                slot_duration,
            };
            let batch = generate_scenarios(&params).map_err(RunError::from)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            for s in &batch {
                let path = out_dir.join(format!("{}.toml", s.id));
                save_scenario(s, &path).map_err(RunError::from)?;
                println!("{}", path.display());
            }
        }
        Command::Oracle {
            scenario,
            budget,
            output,
        } => {
            let s = scenario.load()?;
            let (schedule, timeline) = run_oracle(&s, budget)?;
            match output {
                Output::Gantt | Output::Text => {
                    println!("optimal makespan {:.3}", schedule.makespan);
                    print!("{}", timeline.render_gantt());
                }
                Output::Json | Output::Csv => {
                    let map: Vec<_> = schedule.assignments.iter().map(|a| (a.task, a.node)).collect();
                    println!(
                        "{}",
                        serde_json::json!({ "scenario": s.id, "makespan": schedule.makespan, "assignment": map })
                    );
                }
            }
        }
    }
    Ok(())
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};

use etgoa_core::assessment::semantic_label;
use etgoa_core::config::Config;
use etgoa_core::experiments::records::{write_reports, write_trace_reports, write_traces, write_trials};
use etgoa_core::experiments::stats::mean;
use etgoa_core::experiments::{
    run_experiment_1, run_experiment_2, run_trial, AssessmentKind, Condition, Environment, Harness, Schedule,
    SnapshotSlot,
};
use etgoa_core::policy::{train_goal, PolicySet};
use etgoa_core::Result;

#[derive(Parser)]
#[command(name = "etgoa", version, about = "Event-triggered outcome assessment for a gridworld delivery agent")]
struct Cli {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory of trained policies (`goal{i}.qtab`). Missing policies are
    /// trained and written there.
    #[arg(long, global = true)]
    policies: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the Q-table for one goal and write it to a file.
    Train {
        #[arg(long)]
        goal: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Goal-selection experiment: one condition in one environment.
    Exp1 {
        #[arg(long)]
        env: Environment,
        #[arg(long)]
        condition: AssessmentKind,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Difficulty-change experiment for one schedule.
    Exp2 {
        #[arg(long)]
        schedule: Schedule,
        #[arg(long, default_value_t = 100)]
        episodes: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the single episode described by the config's `[episode]` table
    /// and print a step-by-step trace.
    Assess,
    /// Print the full default configuration.
    Defaults,
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

fn policies(cli_dir: Option<&Path>, cfg: &Config) -> Result<Arc<PolicySet>> {
    let dir = cli_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.policies_dir.clone())
        .unwrap_or_else(|| PathBuf::from("policies"));
    let set = PolicySet::load_or_train(&dir, cfg.env.grid, &cfg.env.goals, &cfg.train, cfg.env.seed)?;
    Ok(Arc::new(set))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Train { goal, out } => {
            let t0 = Instant::now();
            let q = train_goal(cfg.env.grid, &cfg.env.goals, goal, &cfg.train, cfg.env.seed)?;
            q.save(&out)?;
            let len = q.greedy_path_len(cfg.env.start, cfg.env.horizon);
            println!(
                "goal {goal} ({}, {}): start path {} steps, wrote {} ({:.1?})",
                q.goal().x,
                q.goal().y,
                len.map_or_else(|| "unreachable".into(), |l| l.to_string()),
                out.display(),
                t0.elapsed()
            );
        }
        Command::Exp1 { env, condition, episodes, seed, out } => {
            let h = Harness::new(&cfg, policies(cli.policies.as_deref(), &cfg)?)?;
            let condition = Condition { kind: condition, environment: env };
            let trials = run_experiment_1(&h, condition, episodes, seed.unwrap_or(cfg.env.seed))?;
            write_trials(&out.join("trials.csv"), &trials)?;
            write_reports(&out.join("reports.csv"), &trials)?;
            let delivered: Vec<f64> = trials.iter().map(|t| f64::from(u8::from(t.result.delivered))).collect();
            let triggers: u64 = trials.iter().map(|t| u64::from(t.result.n_triggers)).sum();
            println!(
                "{env}/{}: {} of {episodes} delivered (mean {:.3}), {triggers} triggers",
                condition.kind,
                delivered.iter().sum::<f64>(),
                if delivered.is_empty() { 0.0 } else { mean(&delivered) },
            );
        }
        Command::Exp2 { schedule, episodes, seed, out } => {
            let h = Harness::new(&cfg, policies(cli.policies.as_deref(), &cfg)?)?;
            let traces = run_experiment_2(&h, schedule, episodes, seed.unwrap_or(cfg.env.seed))?;
            write_traces(&out.join("traces.csv"), &traces)?;
            write_trace_reports(&out.join("reports.csv"), &traces)?;
            for slot in SnapshotSlot::ALL {
                let c: Vec<f64> = traces.iter().map(|t| t.snapshot(slot).confidence).collect();
                let triggered = traces.iter().filter(|t| t.snapshot(slot).triggered).count();
                println!(
                    "{schedule} {:>8}: mean confidence {:.3} ({triggered} of {episodes} from a fresh report)",
                    slot.as_str(),
                    if c.is_empty() { 0.0 } else { mean(&c) },
                );
            }
        }
        Command::Assess => {
            if cli.config.is_none() {
                return Err(etgoa_core::Error::Config("assess needs --config".into()));
            }
            let h = Harness::new(&cfg, policies(cli.policies.as_deref(), &cfg)?)?;
            let condition = Condition {
                kind: cfg.episode.condition.parse()?,
                environment: cfg.episode.environment.parse()?,
            };
            let trial = run_trial(&h, condition, cfg.episode.episode, cfg.env.seed)?;
            print_trace(&trial);
        }
        Command::Defaults => print!("{}", Config::documented_defaults()),
    }
    Ok(())
}

fn print_trace(trial: &etgoa_core::experiments::Trial) {
    let r = &trial.result;
    println!(
        "episode {} ({}/{}), seed {:#018x}, world {:016x}",
        r.episode, r.condition.environment, r.condition.kind, r.seed, r.world_hash
    );
    let rec = &trial.record;
    let mut reports = rec.reports.iter().peekable();
    for (i, s) in rec.states.iter().enumerate() {
        while let Some(rep) = reports.next_if(|rep| rep.t == s.t) {
            let goals: Vec<String> = rep
                .per_goal
                .iter()
                .map(|&c| match semantic_label(c) {
                    Ok(label) => format!("{c:.2} ({label})"),
                    Err(_) => format!("{c:.2}"),
                })
                .collect();
            let si = rep.si_min.map_or_else(|| "-".into(), |v| format!("{v:.3}"));
            println!("  report t={} trigger={} si_min={si} goals=[{}]", rep.t, rep.trigger, goals.join(", "));
        }
        let action = rec.actions.get(i).map_or_else(|| "-".into(), |a| format!("{a:?}"));
        let goal = rec.goals.get(i).map_or_else(|| "-".into(), |g| g.to_string());
        println!(
            "t={:3} pos=({:2},{:2}) s_c={} s_z={} hits={} goal={goal} next={action}",
            s.t, s.pos.x, s.pos.y, s.s_c, s.s_z, s.hits
        );
    }
    println!(
        "outcome: {} after {} steps, {} crater hits, {} triggers, goals {:?}",
        if r.delivered { "delivered" } else if r.broken { "broken" } else { "timed out" },
        r.steps,
        r.craters_hit,
        r.n_triggers,
        r.goal_history
    );
}

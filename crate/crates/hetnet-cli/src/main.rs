//! Batch front-end: run one or many (scheduler × seed) simulations, write
//! per-run metrics and summaries, and print a side-by-side comparison when
//! both schedulers run on the same seed.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use hetnet_sim::adp::AdpScheduler;
use hetnet_sim::config::SimConfig;
use hetnet_sim::engine::{self, metrics_csv, RunOptions, RunOutput};
use hetnet_sim::pf::PfScheduler;
use hetnet_sim::scenario::build_scenario;
use hetnet_sim::{seeded_rng, RngStream};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// One three-sector macro site, 4 micros, 60 users: minutes-scale runs.
    Desk,
    /// 19 three-sector sites (57 macro cells), 228 micros, 3420 users.
    PaperScale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SchedulerArg {
    /// Rollout scheduler over per-tier weight triplets (uses D2D links).
    Adp,
    /// Proportional-fair cellular baseline with range expansion and
    /// almost-blank subframes (never uses D2D links).
    Pf,
    /// Run both on an identical scenario and request workload.
    Both,
}

/// Two-tier cellular network simulator with a device-to-device underlay.
#[derive(Debug, Parser)]
#[command(name = "hetnet", version, about)]
struct Args {
    /// Base preset; the config file and flags are applied on top of it.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,

    /// Configuration file (schema `hetnet-config-v1`, `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Scheduler(s) to run.
    #[arg(long, value_enum, default_value = "both")]
    scheduler: SchedulerArg,

    /// Steps to simulate (1 ms each); overrides the config.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    steps: Option<u64>,

    /// Seed(s); one simulation per seed. Overrides the config.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    seed: Vec<u64>,

    /// Weight-grid step of the rollout scheduler; overrides the config.
    #[arg(long)]
    alpha_granularity: Option<f64>,

    /// Rollout lookahead depth in steps; overrides the config.
    #[arg(long)]
    horizon: Option<u64>,

    /// Output directory for metric and summary files.
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Skip the per-step metrics files (summaries are always written).
    #[arg(long)]
    no_per_step: bool,

    /// Print the effective configuration (all keys) and exit.
    #[arg(long)]
    print_config: bool,
}

fn effective_config(args: &Args) -> Result<SimConfig> {
    let mut cfg = match args.preset {
        Preset::Desk => SimConfig::desk_preset(),
        Preset::PaperScale => SimConfig::paper_scale_preset(),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        cfg = cfg
            .with_kv_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
    }
    if let Some(steps) = args.steps {
        cfg.engine.n_steps = steps;
    }
    if let Some(g) = args.alpha_granularity {
        cfg.adp.alpha_granularity = g;
    }
    if let Some(h) = args.horizon {
        cfg.adp.horizon = h;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn run_one(cfg: &SimConfig, name: &str, args: &Args) -> Result<RunOutput> {
    let scenario = build_scenario(cfg)?;
    let workload = engine::generate_workload(
        &cfg.workload,
        &scenario.catalog,
        scenario.n_users(),
        &mut seeded_rng(cfg.scenario.seed, RngStream::Workload),
    );
    let opts = RunOptions { collect_steps: !args.no_per_step, check_invariants: false };
    let out = match name {
        "adp" => {
            let mut s = AdpScheduler::new(&cfg.adp);
            engine::run_prepared(cfg, &scenario, &workload, &mut s, &opts)?
        }
        _ => {
            let mut s = PfScheduler::new(&cfg.pf, scenario.n_users());
            engine::run_prepared(cfg, &scenario, &workload, &mut s, &opts)?
        }
    };
    Ok(out)
}

fn write_outputs(out_dir: &PathBuf, name: &str, seed: u64, out: &RunOutput) -> Result<()> {
    let summary_path = out_dir.join(format!("{name}_seed{seed}.summary.txt"));
    fs::write(&summary_path, out.summary.to_kv_string())
        .with_context(|| format!("writing {}", summary_path.display()))?;
    if let Some(steps) = &out.steps {
        let metrics_path = out_dir.join(format!("{name}_seed{seed}.metrics.csv"));
        fs::write(&metrics_path, metrics_csv(steps))
            .with_context(|| format!("writing {}", metrics_path.display()))?;
    }
    Ok(())
}

fn fmt_ratio(energy_j: f64, bits: u64) -> String {
    if bits == 0 { "undefined".into() } else { format!("{:.3e}", energy_j / bits as f64) }
}

fn comparison_table(seed: u64, adp: &RunOutput, pf: &RunOutput) -> String {
    let mut t = String::new();
    let row = |t: &mut String, k: &str, a: String, b: String| {
        let _ = writeln!(t, "{k:<24} {a:>18} {b:>18}");
    };
    let _ = writeln!(t, "seed {seed}: adp vs pf ({} steps)", adp.summary.steps);
    row(&mut t, "metric", "adp".into(), "pf".into());
    let (a, p) = (&adp.summary, &pf.summary);
    row(&mut t, "bits_total", a.bits_total().to_string(), p.bits_total().to_string());
    row(&mut t, "bits_d2d", a.bits_d2d.to_string(), p.bits_d2d.to_string());
    row(&mut t, "completed", a.completed.to_string(), p.completed.to_string());
    row(&mut t, "failed", a.failed.to_string(), p.failed.to_string());
    row(&mut t, "active_end", a.active_end.to_string(), p.active_end.to_string());
    row(
        &mut t,
        "energy_total_j",
        format!("{:.3}", a.energy_total_j()),
        format!("{:.3}", p.energy_total_j()),
    );
    row(
        &mut t,
        "energy_per_bit_j",
        fmt_ratio(a.energy_total_j(), a.bits_total()),
        fmt_ratio(p.energy_total_j(), p.bits_total()),
    );
    row(
        &mut t,
        "mean_rb_reuse",
        format!("{:.3}", a.mean_rb_reuse),
        format!("{:.3}", p.mean_rb_reuse),
    );
    row(
        &mut t,
        "scheduler_time_s",
        format!("{:.3}", adp.scheduler_nanos as f64 * 1e-9),
        format!("{:.3}", pf.scheduler_nanos as f64 * 1e-9),
    );
    t
}

fn main() -> Result<()> {
    let args = Args::parse();
    let base = effective_config(&args)?;
    if args.print_config {
        print!("{}", base.to_kv_string());
        return Ok(());
    }

    let seeds = if args.seed.is_empty() { vec![base.scenario.seed] } else { args.seed.clone() };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output directory {}", args.out.display()))?;

    for &seed in &seeds {
        let mut cfg = base.clone();
        cfg.scenario.seed = seed;
        let names: &[&str] = match args.scheduler {
            SchedulerArg::Adp => &["adp"],
            SchedulerArg::Pf => &["pf"],
            SchedulerArg::Both => &["adp", "pf"],
        };
        let mut outs = Vec::new();
        for name in names {
            let out = run_one(&cfg, name, &args)?;
            write_outputs(&args.out, name, seed, &out)?;
            let s = &out.summary;
            println!(
                "{name} seed {seed}: bits={} d2d={} completed={}/{} failed={} \
                 energy={:.1} J sched={:.2} s",
                s.bits_total(),
                s.bits_d2d,
                s.completed,
                s.inserted,
                s.failed,
                s.energy_total_j(),
                out.scheduler_nanos as f64 * 1e-9,
            );
            outs.push(out);
        }
        if let [adp, pf] = outs.as_slice() {
            let table = comparison_table(seed, adp, pf);
            let path = args.out.join(format!("comparison_seed{seed}.txt"));
            fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
            print!("{table}");
        }
    }
    Ok(())
}

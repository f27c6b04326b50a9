use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slim_core::hrl::{hrl_train, Controller, HighLevelPolicy, HrlBundle, HrlMode, TaskKind};
use slim_core::mcppo::{train, AlgoTag, SkillBundle};
use slim_core::metrics::{eval_skills, export_rollouts, CoverageGrid};
use slim_core::planner::{builtin_plans, follow, ReportSummary, WaypointPlan};
use slim_core::{ExperimentConfig, Result, SlimError};

/// Run log that `follow` appends its reports to.
const FOLLOW_LOG: &str = "follow.jsonl";
const EVAL_REPORT: &str = "eval.json";

#[derive(Parser)]
#[command(
    name = "slim",
    version,
    about = "Skill discovery, evaluation and hierarchical control"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a skill policy.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        variant: Option<AlgoTag>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Output directory; takes precedence over SLIM_OUT_DIR and the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coverage and safety of a skill checkpoint.
    Eval {
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        rollouts: usize,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Report path; defaults to eval.json next to the checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a goal-reaching controller over a skill checkpoint.
    Hrl {
        skill_ckpt: PathBuf,
        #[arg(long, default_value = "pos")]
        task: TaskKind,
        /// Defaults to the configuration stored in the skill checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Train a flat policy on primitive actions instead.
        #[arg(long)]
        scratch: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Follow a waypoint plan with a trained controller.
    Follow {
        hrl_ckpt: PathBuf,
        /// Built-in plan number (1 to 6) or a plan file.
        #[arg(long)]
        plan: String,
        /// Skill checkpoint overriding the one linked from the controller.
        #[arg(long)]
        skill: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Write per-step rollouts of random skills as JSONL.
    Export {
        ckpt: PathBuf,
        #[arg(long, default_value_t = 100)]
        skills: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn resolve_out(cfg: &mut ExperimentConfig, out: Option<PathBuf>) {
    cfg.apply_env_override();
    if let Some(o) = out {
        cfg.out_dir = o;
    }
}

fn append_report(path: &Path, v: &ReportSummary) -> Result<()> {
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| SlimError::io(path, e))?;
    let line = serde_json::to_string(v).map_err(|e| SlimError::Parse(e.to_string()))?;
    writeln!(f, "{line}").map_err(|e| SlimError::io(path, e))
}

fn cmd_train(
    config: &Path,
    variant: Option<AlgoTag>,
    seed: Option<u64>,
    iterations: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(v) = variant {
        cfg.train.variant = v;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(n) = iterations {
        cfg.train.n_iterations = n;
    }
    resolve_out(&mut cfg, out);
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    eprintln!(
        "training {} (seed {}) into {}",
        cfg.train.variant,
        cfg.train.seed,
        dir.display()
    );
    let res = train(&cfg, Some(&dir), |r| {
        eprintln!(
            "iter {:4} steps {:8} reach {:9.3} disc {:8.4} safe {:.3} cover {:3}",
            r.iteration, r.env_steps, r.return_reach, r.return_discovery, r.safety_rate, r.coverage
        );
    })?;
    if let Some(p) = res.checkpoint {
        println!("{}", p.display());
    }
    Ok(())
}

fn cmd_eval(ckpt: &Path, rollouts: usize, seeds: usize, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let b = SkillBundle::load(ckpt)?;
    let c = &b.config;
    let rep = eval_skills(
        &b.policy,
        &c.env,
        &c.skill,
        &c.reward,
        rollouts,
        seeds,
        seed.unwrap_or(c.eval.seed),
        &CoverageGrid::default(),
    )?;
    let path = out.unwrap_or_else(|| ckpt.with_file_name(EVAL_REPORT));
    let s = serde_json::to_string_pretty(&rep).map_err(|e| SlimError::Parse(e.to_string()))?;
    std::fs::write(&path, &s).map_err(|e| SlimError::io(&path, e))?;
    println!(
        "coverage {:.2} +- {:.2} (union {})  safety {:.4} +- {:.4}",
        rep.coverage_mean, rep.coverage_std, rep.coverage_count, rep.safety_rate, rep.safety_std
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_hrl(
    skill_ckpt: &Path,
    task: TaskKind,
    config: Option<PathBuf>,
    scratch: bool,
    seed: Option<u64>,
    iterations: Option<usize>,
    out: Option<PathBuf>,
) -> Result<()> {
    let bundle = SkillBundle::load(skill_ckpt)?;
    let mut cfg = match config {
        Some(p) => ExperimentConfig::load(&p)?,
        None => bundle.config.clone(),
    };
    cfg.hrl.task = task;
    cfg.hrl.mode = if scratch {
        HrlMode::Scratch
    } else {
        HrlMode::Hierarchical
    };
    if let Some(s) = seed {
        cfg.hrl.seed = s;
    }
    if let Some(n) = iterations {
        cfg.hrl.n_iterations = n;
    }
    resolve_out(&mut cfg, out);
    cfg.validate()?;
    let dir = cfg.out_dir.clone();
    let res = hrl_train(&cfg, Some(&bundle), Some(skill_ckpt), Some(&dir), |r| {
        eprintln!(
            "iter {:4} steps {:8} success {:.3} return {:9.3} error {:.4}",
            r.iteration, r.env_steps, r.success_rate, r.mean_return, r.mean_final_error
        );
    })?;
    if let Some(p) = res.checkpoint {
        println!("{}", p.display());
    }
    Ok(())
}

fn load_plan(spec: &str, cfg: &ExperimentConfig) -> Result<WaypointPlan> {
    if let Ok(i) = spec.parse::<usize>() {
        let plans = builtin_plans();
        return i
            .checked_sub(1)
            .and_then(|j| plans.get(j).cloned())
            .ok_or_else(|| SlimError::InvalidArgument(format!("built-in plans are numbered 1 to {}", plans.len())));
    }
    WaypointPlan::load(Path::new(spec), &cfg.env)
}

fn cmd_follow(hrl_ckpt: &Path, plan: &str, skill: Option<PathBuf>, seed: u64, budget: Option<usize>) -> Result<()> {
    let b = HrlBundle::load(hrl_ckpt, skill.as_deref())?;
    let mut plan = load_plan(plan, &b.config)?;
    if let Some(n) = budget {
        plan.budget = n;
    }
    let high;
    let ctrl = match &b.low {
        Some(low) => {
            high = HighLevelPolicy {
                policy: b.policy.clone(),
                k: b.k,
            };
            Controller::Hierarchical {
                high: &high,
                low: &low.policy,
            }
        }
        None => Controller::Flat(&b.policy),
    };
    let rep = follow(&plan, ctrl, &b.config.env, seed)?;
    let summary = rep.summary(&plan.name);
    println!("plan             {}", summary.plan);
    println!("overall_success  {}", summary.overall_success);
    println!("max_distance     {:.4}", summary.max_distance);
    println!("points_success   {}/{}", summary.points_success, summary.n_points);
    println!("safety_rate      {:.4}", summary.safety_rate);
    append_report(&hrl_ckpt.with_file_name(FOLLOW_LOG), &summary)
}

fn cmd_export(ckpt: &Path, skills: usize, out: &Path, seed: u64) -> Result<()> {
    let b = SkillBundle::load(ckpt)?;
    let c = &b.config;
    let recs = export_rollouts(
        &b.policy,
        b.discovery.as_ref(),
        &c.env,
        &c.skill,
        &c.reward,
        skills,
        seed,
        out,
    )?;
    println!("{} records -> {}", recs.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train {
            config,
            variant,
            seed,
            iterations,
            out,
        } => cmd_train(&config, variant, seed, iterations, out),
        Cmd::Eval {
            ckpt,
            rollouts,
            seeds,
            seed,
            out,
        } => cmd_eval(&ckpt, rollouts, seeds, seed, out),
        Cmd::Hrl {
            skill_ckpt,
            task,
            config,
            scratch,
            seed,
            iterations,
            out,
        } => cmd_hrl(&skill_ckpt, task, config, scratch, seed, iterations, out),
        Cmd::Follow {
            hrl_ckpt,
            plan,
            skill,
            seed,
            budget,
        } => cmd_follow(&hrl_ckpt, &plan, skill, seed, budget),
        Cmd::Export {
            ckpt,
            skills,
            out,
            seed,
        } => cmd_export(&ckpt, skills, &out, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SlimError::Numerical(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

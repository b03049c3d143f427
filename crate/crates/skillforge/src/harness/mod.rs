//! Experiment orchestration: the CLI, config files, desk-scale presets,
//! metrics persistence, and the canned replication pipelines.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};

use crate::agent::{train_dsn, EpochStats, EvaluationReport};
use crate::distill::distill_multi;
use crate::env::{make_domain, Action, OBS_LEN};
use crate::error::{Error, Result};
use crate::hdrln::{train_hdrln, zero_shot_eval, SkillUsageStats};
use crate::nn::{load_checkpoint, save_checkpoint, Metadata, QNetwork};
use crate::skills::{
    load_skill_manifest, DeepSkillModule, DistilledNetwork, Skill, SkillSource,
};

mod config;
pub mod presets;
mod replicate;

pub use config::{load_config, parse_config, serialize_config, ExperimentConfig};
pub use replicate::ReplicateTarget;

/// Which realization of the deep skill module a hierarchical run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModuleKind {
    Array,
    Distilled,
}

/// Exploration mixed into frozen-policy evaluations by the CLI commands.
pub const DEFAULT_EVAL_EPSILON: f64 = 0.05;

/// Epochs averaged for a run's "final-window" success.
pub const FINAL_WINDOW: usize = 3;

/// Mean success over the last [`FINAL_WINDOW`] epochs of a curve.
pub fn final_window_success(curve: &[EpochStats]) -> f64 {
    assert!(!curve.is_empty(), "empty learning curve");
    let tail = &curve[curve.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|e| e.success_pct).sum::<f64>() / tail.len() as f64
}

/// Output directory resolution: explicit flag, then the `SKILLFORGE_OUT`
/// environment variable, then `./out`.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os("SKILLFORGE_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Learning-curve CSV. The header is a stable external contract.
pub fn write_curve_csv(path: &Path, curve: &[EpochStats]) -> Result<()> {
    let mut text = String::from("epoch,optimization_steps,success_pct,mean_reward,mean_length,epsilon\n");
    for e in curve {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch, e.optimization_steps, e.success_pct, e.mean_reward, e.mean_length, e.epsilon
        ));
    }
    write_text(path, &text)
}

/// Skill-usage CSV. The header is a stable external contract.
pub fn write_usage_csv(path: &Path, usage: &SkillUsageStats) -> Result<()> {
    let mut text = String::from("epoch,skill_pct,primitive_pct,mean_reward\n");
    for u in &usage.epochs {
        text.push_str(&format!(
            "{},{},{},{}\n",
            u.epoch,
            u.skill_pct(),
            u.primitive_pct(),
            u.mean_reward
        ));
    }
    write_text(path, &text)
}

/// Aggregate evaluation report CSV: one data row.
pub fn write_report_csv(path: &Path, report: &EvaluationReport) -> Result<()> {
    let text = format!(
        "episodes,successes,success_pct,mean_reward,mean_length\n{},{},{},{},{}\n",
        report.episodes, report.successes, report.success_pct, report.mean_reward, report.mean_length
    );
    write_text(path, &text)
}

/// What a run produced, tied to the config and seeds that produced it.
/// Written at run end; the wall-clock line is the only field expected to
/// differ between identical reruns.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub tool_version: String,
    pub experiment: String,
    pub domain: String,
    pub seeds: Vec<u64>,
    /// Label -> output file, in creation order.
    pub outputs: Vec<(String, PathBuf)>,
    /// Label -> value, the run's headline numbers.
    pub final_metrics: Vec<(String, f64)>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(experiment: &str, domain: &str, seeds: &[u64]) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            domain: domain.to_string(),
            seeds: seeds.to_vec(),
            outputs: Vec::new(),
            final_metrics: Vec::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn add_output(&mut self, label: &str, path: &Path) {
        self.outputs.push((label.to_string(), path.to_path_buf()));
    }

    pub fn add_metric(&mut self, label: &str, value: f64) {
        self.final_metrics.push((label.to_string(), value));
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("tool_version = {}\n", self.tool_version));
        out.push_str(&format!("experiment = {}\n", self.experiment));
        out.push_str(&format!("domain = {}\n", self.domain));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        out.push_str(&format!("seeds = {}\n", seeds.join(",")));
        for (label, path) in &self.outputs {
            out.push_str(&format!("output.{label} = {}\n", path.display()));
        }
        for (label, value) in &self.final_metrics {
            out.push_str(&format!("metric.{label} = {value}\n"));
        }
        out.push_str(&format!("wall_clock_secs = {:.3}\n", self.wall_clock_secs));
        out
    }

    /// Writes via a temporary file and rename, so a crash never leaves a
    /// half-written manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        write_text(&tmp, &self.render())?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

fn load_primitive_checkpoint(path: &Path) -> Result<(QNetwork, Metadata)> {
    require_file(path)?;
    let (net, meta) = load_checkpoint(path)?;
    if net.input_dim() != OBS_LEN || net.output_dim() != Action::COUNT {
        return Err(Error::ConfigValidation(format!(
            "{}: expected an observation-to-primitive-action network, found {} -> {}",
            path.display(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    Ok((net, meta))
}

#[derive(Parser)]
#[command(
    name = "skillforge",
    version,
    about = "Gridworld agents that learn, reuse, and distill skills",
    disable_help_subcommand = true
)]
struct Cli {
    /// Output directory (overrides SKILLFORGE_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a single-domain skill network and save its checkpoint.
    TrainDsn {
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Distill teacher checkpoints into one multi-head network.
    Distill {
        /// Teacher domains, comma separated, one per checkpoint.
        #[arg(long, value_delimiter = ',', required = true)]
        domains: Vec<String>,
        /// Teacher checkpoint; repeat once per domain.
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        /// Softmax temperature override.
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        episodes: u32,
    },
    /// Train the hierarchical controller against frozen skills.
    TrainHdrln {
        #[arg(long)]
        domain: String,
        /// Skill manifest file.
        #[arg(long)]
        skills: PathBuf,
        /// Distilled checkpoint backing `head:` manifest entries.
        #[arg(long)]
        module: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Use the double-DQN target regardless of the config.
        #[arg(long)]
        double: bool,
    },
    /// Evaluate a single-network checkpoint on a domain.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 100)]
        episodes: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Evaluate a frozen skill checkpoint on a new domain, no training.
    ZeroShot {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        domain: String,
        #[arg(long, default_value_t = 100)]
        episodes: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Run a canned desk-scale replication pipeline.
    Replicate {
        #[arg(value_enum)]
        target: ReplicateTarget,
        /// Single seed (shorthand for a one-element seed list).
        #[arg(long, conflicts_with = "seeds")]
        seed: Option<u64>,
        /// Seed list, comma separated.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run seeds on parallel threads (independent outputs).
        #[arg(long)]
        parallel: bool,
    },
}

/// CLI entry point. Exit codes: 0 success, 1 usage/config errors, 2
/// runtime failures.
pub fn cli_main(args: &[String]) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let out = resolve_out_dir(cli.out.as_deref());
    let has_config = cli.config.is_some();
    let cfg = match &cli.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    match cli.cmd {
        Cmd::TrainDsn { domain, seed } => cmd_train_dsn(&cfg, &domain, seed, &out),
        Cmd::Distill {
            domains,
            checkpoints,
            tau,
            seed,
            episodes,
        } => cmd_distill(&cfg, &domains, &checkpoints, tau, seed, episodes, &out),
        Cmd::TrainHdrln {
            domain,
            skills,
            module,
            seed,
            double,
        } => cmd_train_hdrln(&cfg, &domain, &skills, module.as_deref(), seed, double, &out),
        Cmd::Evaluate {
            checkpoint,
            domain,
            episodes,
            seed,
        } => cmd_evaluate(&checkpoint, &domain, episodes, seed, &out, "evaluate"),
        Cmd::ZeroShot {
            checkpoint,
            domain,
            episodes,
            seed,
        } => cmd_evaluate(&checkpoint, &domain, episodes, seed, &out, "zero_shot"),
        Cmd::Replicate {
            target,
            seed,
            seeds,
            parallel,
        } => {
            let seeds = seed.map(|s| vec![s]).or(seeds);
            replicate::run(target, seeds, parallel, has_config.then_some(&cfg), &out)
        }
    }
}

fn base_metadata(kind: &str, domain: &str, seed: u64) -> Metadata {
    let mut meta = Metadata::new();
    meta.insert("kind".into(), kind.into());
    meta.insert("domain".into(), domain.into());
    meta.insert("seed".into(), seed.to_string());
    meta.insert("tool_version".into(), env!("CARGO_PKG_VERSION").into());
    meta
}

fn cmd_train_dsn(cfg: &ExperimentConfig, domain: &str, seed: u64, out: &Path) -> Result<()> {
    let spec = make_domain(domain)?;
    ensure_dir(out)?;
    let started = Instant::now();
    let (net, curve) = train_dsn(&spec, &cfg.agent, seed)?;
    let final_success = curve.last().map_or(0.0, |e| e.success_pct);

    let ckpt = out.join(format!("dsn_{domain}_seed{seed}.skfc"));
    let mut meta = base_metadata("dsn", domain, seed);
    meta.insert("final_success_pct".into(), final_success.to_string());
    save_checkpoint(&net, &meta, &ckpt)?;
    let curve_path = out.join(format!("dsn_{domain}_seed{seed}_curve.csv"));
    write_curve_csv(&curve_path, &curve)?;

    let mut manifest = RunManifest::new("train-dsn", domain, &[seed]);
    manifest.add_output("checkpoint", &ckpt);
    manifest.add_output("curve", &curve_path);
    manifest.add_metric("final_success_pct", final_success);
    manifest.add_metric("epochs_trained", curve.len() as f64);
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("dsn_{domain}_seed{seed}_manifest.txt")))?;

    println!(
        "trained {domain} for {} epochs: final success {:.1}% -> {}",
        curve.len(),
        final_success,
        ckpt.display()
    );
    Ok(())
}

fn cmd_distill(
    cfg: &ExperimentConfig,
    domains: &[String],
    checkpoints: &[PathBuf],
    tau: Option<f64>,
    seed: u64,
    episodes: u32,
    out: &Path,
) -> Result<()> {
    if domains.len() != checkpoints.len() {
        return Err(Error::Usage(format!(
            "got {} domains but {} checkpoints; pass one --checkpoint per domain",
            domains.len(),
            checkpoints.len()
        )));
    }
    let mut teachers = Vec::new();
    let mut specs = Vec::new();
    for (domain, path) in domains.iter().zip(checkpoints) {
        let (net, _) = load_primitive_checkpoint(path)?;
        teachers.push(net);
        specs.push(make_domain(domain)?);
    }
    let mut dcfg = cfg.distill.clone();
    if let Some(t) = tau {
        dcfg.tau = t;
        dcfg.validate()?;
    }
    ensure_dir(out)?;
    let started = Instant::now();
    let module = distill_multi(&teachers, &specs, &dcfg, seed)?;
    let reports = crate::distill::evaluate_distilled(&module, &specs, episodes, DEFAULT_EVAL_EPSILON, seed);

    let student = match &module {
        DeepSkillModule::Distilled(d) => d,
        DeepSkillModule::Array(_) => unreachable!("distillation yields a distilled module"),
    };
    let ckpt = out.join("distilled.skfc");
    let mut meta = base_metadata("distilled", &domains.join("+"), seed);
    meta.insert("tau".into(), dcfg.tau.to_string());
    student.save(&ckpt, &meta)?;

    let mut eval_text = String::from("task,success_pct,mean_reward\n");
    for (domain, report) in domains.iter().zip(&reports) {
        eval_text.push_str(&format!("{domain},{},{}\n", report.success_pct, report.mean_reward));
    }
    let eval_path = out.join("distill_eval.csv");
    write_text(&eval_path, &eval_text)?;

    let mut manifest = RunManifest::new("distill", &domains.join("+"), &[seed]);
    manifest.add_output("checkpoint", &ckpt);
    manifest.add_output("eval", &eval_path);
    for (domain, report) in domains.iter().zip(&reports) {
        manifest.add_metric(&format!("success_pct.{domain}"), report.success_pct);
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&out.join("distill_manifest.txt"))?;

    for (domain, report) in domains.iter().zip(&reports) {
        println!("{domain}: {:.1}% success", report.success_pct);
    }
    println!("distilled module -> {}", ckpt.display());
    Ok(())
}

fn cmd_train_hdrln(
    cfg: &ExperimentConfig,
    domain: &str,
    skills_path: &Path,
    module_path: Option<&Path>,
    seed: u64,
    double: bool,
    out: &Path,
) -> Result<()> {
    let spec = make_domain(domain)?;
    let entries = load_skill_manifest(skills_path)?;
    let manifest_err = |reason: String| Error::SkillManifest {
        path: skills_path.display().to_string(),
        reason,
    };

    let all_checkpoints = entries
        .iter()
        .all(|e| matches!(e.source, SkillSource::Checkpoint(_)));
    let all_heads = entries.iter().all(|e| matches!(e.source, SkillSource::Head(_)));
    let (module, skills) = if all_checkpoints {
        let mut nets = Vec::new();
        let mut skills = Vec::new();
        for (i, e) in entries.iter().enumerate() {
            let SkillSource::Checkpoint(path) = &e.source else {
                unreachable!()
            };
            let (net, _) = load_primitive_checkpoint(path)?;
            nets.push(net);
            skills.push(Skill {
                name: e.name.clone(),
                subgoal: e.subgoal,
                max_duration: e.max_duration,
                policy: i,
            });
        }
        (DeepSkillModule::array(nets), skills)
    } else if all_heads {
        let module_path = module_path.ok_or_else(|| {
            Error::Usage("manifest uses head: sources; pass --module <distilled.skfc>".into())
        })?;
        require_file(module_path)?;
        let (student, _) = DistilledNetwork::load(module_path)?;
        let mut skills = Vec::new();
        for e in &entries {
            let SkillSource::Head(idx) = e.source else {
                unreachable!()
            };
            if idx >= student.head_count() {
                return Err(manifest_err(format!(
                    "skill '{}' wants head {idx} but the module has {} heads",
                    e.name,
                    student.head_count()
                )));
            }
            skills.push(Skill {
                name: e.name.clone(),
                subgoal: e.subgoal,
                max_duration: e.max_duration,
                policy: idx,
            });
        }
        (DeepSkillModule::Distilled(student), skills)
    } else {
        return Err(manifest_err(
            "manifest mixes dsn: and head: sources; use one kind per run".into(),
        ));
    };

    let mut hcfg = cfg.hdrln.clone();
    if double {
        hcfg.double = true;
    }
    ensure_dir(out)?;
    let started = Instant::now();
    let (policy, curve, usage) = train_hdrln(&spec, &skills, &module, &hcfg, seed)?;
    let final_success = curve.last().map_or(0.0, |e| e.success_pct);

    let ckpt = out.join(format!("hdrln_{domain}_seed{seed}.skfc"));
    let mut meta = base_metadata("hdrln-controller", domain, seed);
    meta.insert("skills".into(), skills.iter().map(|s| s.name.clone()).collect::<Vec<_>>().join("+"));
    meta.insert("double".into(), hcfg.double.to_string());
    save_checkpoint(policy.controller(), &meta, &ckpt)?;
    let curve_path = out.join(format!("hdrln_{domain}_seed{seed}_curve.csv"));
    write_curve_csv(&curve_path, &curve)?;
    let usage_path = out.join(format!("hdrln_{domain}_seed{seed}_usage.csv"));
    write_usage_csv(&usage_path, &usage)?;

    let mut manifest = RunManifest::new("train-hdrln", domain, &[seed]);
    manifest.add_output("checkpoint", &ckpt);
    manifest.add_output("curve", &curve_path);
    manifest.add_output("usage", &usage_path);
    manifest.add_metric("final_success_pct", final_success);
    manifest.add_metric("final_window_success_pct", final_window_success(&curve));
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&out.join(format!("hdrln_{domain}_seed{seed}_manifest.txt")))?;

    println!(
        "trained hierarchical controller on {domain} ({} skills): final success {:.1}% -> {}",
        skills.len(),
        final_success,
        ckpt.display()
    );
    Ok(())
}

fn cmd_evaluate(
    checkpoint: &Path,
    domain: &str,
    episodes: u32,
    seed: u64,
    out: &Path,
    label: &str,
) -> Result<()> {
    let (net, _) = load_primitive_checkpoint(checkpoint)?;
    let spec = make_domain(domain)?;
    let report = zero_shot_eval(&net, &spec, episodes, DEFAULT_EVAL_EPSILON, seed);
    ensure_dir(out)?;
    let report_path = out.join(format!("{label}_report.csv"));
    write_report_csv(&report_path, &report)?;
    println!(
        "{domain}: {:.1}% success over {episodes} episodes (mean reward {:.3}) -> {}",
        report.success_pct,
        report.mean_reward,
        report_path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests;

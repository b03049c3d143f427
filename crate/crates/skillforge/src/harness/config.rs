//! The flat INI-style experiment config: four sections, `key = value`
//! lines, `#`/`;` comments. Unknown sections or keys are rejected with
//! their line number; an empty file yields the full desk-scale defaults.

use std::path::{Path, PathBuf};

use crate::agent::AgentConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};

use super::{presets, ModuleKind};

/// Everything one experiment run needs, as read from a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub domain: String,
    pub seeds: Vec<u64>,
    /// Output directory; `None` defers to the CLI flag / environment.
    pub out: Option<PathBuf>,
    /// Which skill-module realization hierarchical runs use.
    pub module: ModuleKind,
    /// Flat training (DSN and baseline runs).
    pub agent: AgentConfig,
    /// Hierarchical controller training.
    pub hdrln: AgentConfig,
    pub distill: DistillConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            domain: "nav1".into(),
            seeds: vec![1],
            out: None,
            module: ModuleKind::Array,
            agent: presets::desk_agent(),
            hdrln: presets::desk_hdrln(),
            distill: presets::desk_distill(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::ConfigValidation("seed list must not be empty".into()));
        }
        if self.name.is_empty() {
            return Err(Error::ConfigValidation("experiment name must not be empty".into()));
        }
        fn tag(section: &str, e: Error) -> Error {
            match e {
                Error::ConfigValidation(m) => Error::ConfigValidation(format!("[{section}] {m}")),
                other => other,
            }
        }
        self.agent.validate().map_err(|e| tag("agent", e))?;
        self.hdrln.validate().map_err(|e| tag("hdrln", e))?;
        self.distill.validate().map_err(|e| tag("distill", e))?;
        Ok(())
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut section: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let fail = |reason: String| Error::ConfigParse {
            path: origin.to_string(),
            line: lineno,
            reason,
        };
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| fail("unterminated section header".into()))?
                .trim();
            if !matches!(name, "experiment" | "agent" | "hdrln" | "distill") {
                return Err(fail(format!("unknown section '{name}'")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| fail("expected 'key = value'".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let section = section
            .as_deref()
            .ok_or_else(|| fail(format!("key '{key}' appears before any section header")))?;
        match section {
            "experiment" => apply_experiment_key(&mut cfg, key, value).map_err(fail)?,
            "agent" => apply_agent_key(&mut cfg.agent, key, value).map_err(fail)?,
            "hdrln" => apply_agent_key(&mut cfg.hdrln, key, value).map_err(fail)?,
            "distill" => apply_distill_key(&mut cfg.distill, key, value).map_err(fail)?,
            _ => unreachable!("section names validated above"),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: '{value}' is not {kind}"))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("{key}: '{s}' is not {kind}")))
        .collect()
}

fn apply_experiment_key(
    cfg: &mut ExperimentConfig,
    key: &str,
    value: &str,
) -> std::result::Result<(), String> {
    match key {
        "name" => cfg.name = value.to_string(),
        "domain" => cfg.domain = value.to_string(),
        "seeds" => cfg.seeds = parse_list(key, value, "a seed")?,
        "out" => cfg.out = Some(PathBuf::from(value)),
        "module" => {
            cfg.module = match value {
                "array" => ModuleKind::Array,
                "distilled" => ModuleKind::Distilled,
                other => return Err(format!("module: expected 'array' or 'distilled', got '{other}'")),
            }
        }
        other => return Err(format!("unknown key '{other}' in [experiment]")),
    }
    Ok(())
}

fn apply_agent_key(cfg: &mut AgentConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "gamma" => cfg.gamma = parse_scalar(key, value, "a number")?,
        "lr" => cfg.lr = parse_scalar(key, value, "a number")?,
        "eps_start" => cfg.eps_start = parse_scalar(key, value, "a number")?,
        "eps_end" => cfg.eps_end = parse_scalar(key, value, "a number")?,
        "eps_endt" => cfg.eps_endt = parse_scalar(key, value, "an integer")?,
        "n_replay" => cfg.n_replay = parse_scalar(key, value, "an integer")?,
        "target_sync" => cfg.target_sync = parse_scalar(key, value, "an integer")?,
        "batch_size" => cfg.batch_size = parse_scalar(key, value, "an integer")?,
        "replay_capacity" => cfg.replay_capacity = parse_scalar(key, value, "an integer")?,
        "learn_start" => cfg.learn_start = parse_scalar(key, value, "an integer")?,
        "epoch_steps" => cfg.epoch_steps = parse_scalar(key, value, "an integer")?,
        "epochs" => cfg.epochs = parse_scalar(key, value, "an integer")?,
        "eval_episodes" => cfg.eval_episodes = parse_scalar(key, value, "an integer")?,
        "eval_epsilon" => cfg.eval_epsilon = parse_scalar(key, value, "a number")?,
        "hidden" => cfg.hidden = parse_list(key, value, "a layer width")?,
        "double" => cfg.double = parse_scalar(key, value, "true or false")?,
        "stop_at_success" => {
            cfg.stop_at_success = if value == "none" {
                None
            } else {
                Some(parse_scalar(key, value, "a number or 'none'")?)
            }
        }
        other => return Err(format!("unknown key '{other}'")),
    }
    Ok(())
}

fn apply_distill_key(cfg: &mut DistillConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "tau" => cfg.tau = parse_scalar(key, value, "a number")?,
        "switch_interval" => cfg.switch_interval = parse_scalar(key, value, "an integer")?,
        "steps_per_teacher" => cfg.steps_per_teacher = parse_scalar(key, value, "an integer")?,
        "batch_size" => cfg.batch_size = parse_scalar(key, value, "an integer")?,
        "lr" => cfg.lr = parse_scalar(key, value, "a number")?,
        "dataset_size" => cfg.dataset_size = parse_scalar(key, value, "an integer")?,
        other => return Err(format!("unknown key '{other}' in [distill]")),
    }
    Ok(())
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn push_agent_section(out: &mut String, name: &str, cfg: &AgentConfig) {
    out.push_str(&format!("[{name}]\n"));
    out.push_str(&format!("gamma = {}\n", cfg.gamma));
    out.push_str(&format!("lr = {}\n", cfg.lr));
    out.push_str(&format!("eps_start = {}\n", cfg.eps_start));
    out.push_str(&format!("eps_end = {}\n", cfg.eps_end));
    out.push_str(&format!("eps_endt = {}\n", cfg.eps_endt));
    out.push_str(&format!("n_replay = {}\n", cfg.n_replay));
    out.push_str(&format!("target_sync = {}\n", cfg.target_sync));
    out.push_str(&format!("batch_size = {}\n", cfg.batch_size));
    out.push_str(&format!("replay_capacity = {}\n", cfg.replay_capacity));
    out.push_str(&format!("learn_start = {}\n", cfg.learn_start));
    out.push_str(&format!("epoch_steps = {}\n", cfg.epoch_steps));
    out.push_str(&format!("epochs = {}\n", cfg.epochs));
    out.push_str(&format!("eval_episodes = {}\n", cfg.eval_episodes));
    out.push_str(&format!("eval_epsilon = {}\n", cfg.eval_epsilon));
    out.push_str(&format!("hidden = {}\n", join(&cfg.hidden)));
    out.push_str(&format!("double = {}\n", cfg.double));
    match cfg.stop_at_success {
        Some(th) => out.push_str(&format!("stop_at_success = {th}\n")),
        None => out.push_str("stop_at_success = none\n"),
    }
}

/// Canonical text form; `parse_config` of the output yields an equal
/// config.
pub fn serialize_config(cfg: &ExperimentConfig) -> String {
    let mut out = String::new();
    out.push_str("[experiment]\n");
    out.push_str(&format!("name = {}\n", cfg.name));
    out.push_str(&format!("domain = {}\n", cfg.domain));
    out.push_str(&format!("seeds = {}\n", join(&cfg.seeds)));
    if let Some(dir) = &cfg.out {
        out.push_str(&format!("out = {}\n", dir.display()));
    }
    let module = match cfg.module {
        ModuleKind::Array => "array",
        ModuleKind::Distilled => "distilled",
    };
    out.push_str(&format!("module = {module}\n"));
    out.push('\n');
    push_agent_section(&mut out, "agent", &cfg.agent);
    out.push('\n');
    push_agent_section(&mut out, "hdrln", &cfg.hdrln);
    out.push('\n');
    out.push_str("[distill]\n");
    out.push_str(&format!("tau = {}\n", cfg.distill.tau));
    out.push_str(&format!("switch_interval = {}\n", cfg.distill.switch_interval));
    out.push_str(&format!("steps_per_teacher = {}\n", cfg.distill.steps_per_teacher));
    out.push_str(&format!("batch_size = {}\n", cfg.distill.batch_size));
    out.push_str(&format!("lr = {}\n", cfg.distill.lr));
    out.push_str(&format!("dataset_size = {}\n", cfg.distill.dataset_size));
    out
}

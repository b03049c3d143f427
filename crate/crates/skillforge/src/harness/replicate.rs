//! Canned experiment pipelines behind `skillforge replicate`.
//!
//! Each target trains everything it needs from scratch, writes per-seed
//! curves plus one aggregate CSV, and leaves a manifest tying the outputs
//! together. All randomness is derived from the seed list, so rerunning a
//! target with the same seeds reproduces every CSV byte for byte.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::ValueEnum;

use crate::agent::{train_dsn, AgentConfig};
use crate::distill::{
    argmax_agreement, collect_dataset, distill_multi, evaluate_distilled, DistillConfig,
};
use crate::env::{make_domain, DomainSpec};
use crate::error::Result;
use crate::hdrln::{train_hdrln, zero_shot_eval};
use crate::nn::{save_checkpoint, QNetwork};
use crate::skills::{DeepSkillModule, Skill, SubGoal, DEFAULT_SKILL_DURATION};

use super::{
    ensure_dir, final_window_success, presets, write_curve_csv, write_text, write_usage_csv,
    ExperimentConfig, RunManifest, DEFAULT_EVAL_EPSILON,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReplicateTarget {
    /// Transfer bar chart: flat agent, zero-shot skill, hierarchy start/end.
    Fig6,
    /// Complex-domain comparison: flat vs. skill-array vs. distilled hierarchy.
    Fig7,
    /// Skill-usage share across hierarchical training.
    Fig8,
    /// Distillation retention table at two temperatures.
    Table2,
}

impl ReplicateTarget {
    fn dir_name(self) -> &'static str {
        match self {
            ReplicateTarget::Fig6 => "fig6",
            ReplicateTarget::Fig7 => "fig7",
            ReplicateTarget::Fig8 => "fig8",
            ReplicateTarget::Table2 => "table2",
        }
    }

    fn default_seeds(self) -> Vec<u64> {
        match self {
            ReplicateTarget::Fig6 | ReplicateTarget::Fig7 => vec![1, 2, 3, 4, 5],
            ReplicateTarget::Fig8 | ReplicateTarget::Table2 => vec![1],
        }
    }
}

/// Config resolution for a pipeline: skill training, the matched flat/
/// hierarchical budget, and distillation. A user config replaces the desk
/// presets wholesale; early stopping is still cleared on the shared budget
/// so paired comparisons stay fair.
struct PipelineCfg {
    dsn: AgentConfig,
    run: AgentConfig,
    distill: DistillConfig,
}

fn pipeline_cfg(user: Option<&ExperimentConfig>, complex: bool) -> PipelineCfg {
    match user {
        Some(c) => {
            let mut run = c.hdrln.clone();
            run.stop_at_success = None;
            PipelineCfg {
                dsn: c.agent.clone(),
                run,
                distill: c.distill.clone(),
            }
        }
        None => PipelineCfg {
            dsn: presets::desk_agent(),
            run: if complex {
                presets::desk_hdrln_complex()
            } else {
                presets::desk_hdrln()
            },
            distill: presets::desk_distill(),
        },
    }
}

fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty());
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Runs `f` once per seed, optionally on parallel threads. Results come
/// back in seed order either way; workers only write seed-suffixed files.
fn for_each_seed<T, F>(seeds: &[u64], parallel: bool, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    if parallel && seeds.len() > 1 {
        std::thread::scope(|scope| {
            let f = &f;
            let handles: Vec<_> = seeds
                .iter()
                .map(|&s| scope.spawn(move || f(s)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed worker panicked"))
                .collect()
        })
    } else {
        seeds.iter().map(|&s| f(s)).collect()
    }
}

pub fn run(
    target: ReplicateTarget,
    seeds: Option<Vec<u64>>,
    parallel: bool,
    user_cfg: Option<&ExperimentConfig>,
    out: &Path,
) -> Result<()> {
    let seeds = seeds.unwrap_or_else(|| target.default_seeds());
    let dir = out.join(target.dir_name());
    ensure_dir(&dir)?;
    match target {
        ReplicateTarget::Fig6 => fig6(&seeds, parallel, user_cfg, &dir),
        ReplicateTarget::Fig7 => fig7(&seeds, parallel, user_cfg, &dir),
        ReplicateTarget::Fig8 => fig8(&seeds, parallel, user_cfg, &dir),
        ReplicateTarget::Table2 => table2(&seeds, user_cfg, &dir),
    }
}

fn save_dsn(dir: &Path, domain: &str, seed: u64, net: &QNetwork, success: f64) -> Result<PathBuf> {
    let path = dir.join(format!("dsn_{domain}.skfc"));
    let mut meta = super::base_metadata("dsn", domain, seed);
    meta.insert("final_success_pct".into(), success.to_string());
    save_checkpoint(net, &meta, &path)?;
    Ok(path)
}

/// Trains one DSN per listed domain with the skill-training config, saving
/// checkpoints and curves as it goes.
fn train_skill_set(
    domains: &[&str],
    cfg: &AgentConfig,
    seed: u64,
    dir: &Path,
    manifest: &mut RunManifest,
) -> Result<(Vec<QNetwork>, Vec<DomainSpec>)> {
    let mut nets = Vec::new();
    let mut specs = Vec::new();
    for &domain in domains {
        let spec = make_domain(domain)?;
        let (net, curve) = train_dsn(&spec, cfg, seed)?;
        let success = curve.last().map_or(0.0, |e| e.success_pct);
        println!(
            "  dsn {domain}: {:.1}% after {} epochs",
            success,
            curve.len()
        );
        let ckpt = save_dsn(dir, domain, seed, &net, success)?;
        let curve_path = dir.join(format!("dsn_{domain}_curve.csv"));
        write_curve_csv(&curve_path, &curve)?;
        manifest.add_output(&format!("dsn_{domain}"), &ckpt);
        manifest.add_metric(&format!("dsn_{domain}_success_pct"), success);
        nets.push(net);
        specs.push(spec);
    }
    Ok((nets, specs))
}

/// Skills used on the complex domain, in module order: cross the gap, pick
/// up the item, break the door, place it at the goal.
fn complex_skills() -> Vec<Skill> {
    let subgoals = [
        ("nav", SubGoal::ReachCell { row: 4, col: 9 }),
        ("pickup", SubGoal::Carrying),
        ("break", SubGoal::DoorBroken),
        ("place", SubGoal::Placed),
    ];
    subgoals
        .iter()
        .enumerate()
        .map(|(i, (name, subgoal))| Skill {
            name: (*name).to_string(),
            subgoal: *subgoal,
            max_duration: DEFAULT_SKILL_DURATION,
            policy: i,
        })
        .collect()
}

const COMPLEX_SKILL_DOMAINS: [&str; 4] = ["nav1", "pickup", "break", "placement"];
const DISTILL_DOMAINS: [&str; 4] = ["nav2", "pickup", "break", "placement"];
const ZERO_SHOT_EPISODES: u32 = 100;

fn fig6(seeds: &[u64], parallel: bool, user_cfg: Option<&ExperimentConfig>, dir: &Path) -> Result<()> {
    let cfg = pipeline_cfg(user_cfg, false);
    let started = Instant::now();
    let mut manifest = RunManifest::new("replicate-fig6", "two_room", seeds);

    println!("fig6: training the navigation skill");
    let (nets, _) = train_skill_set(&["nav1"], &cfg.dsn, seeds[0], dir, &mut manifest)?;
    let dsn = nets.into_iter().next().unwrap();
    let two_room = make_domain("two_room")?;
    let skills = vec![Skill {
        name: "nav".to_string(),
        // The gap between the rooms; past it the skill rides until the
        // episode ends or the duration cap trips.
        subgoal: SubGoal::ReachCell { row: 6, col: 9 },
        max_duration: DEFAULT_SKILL_DURATION,
        policy: 0,
    }];
    let module = DeepSkillModule::array(vec![dsn.clone()]);

    struct SeedOutcome {
        flat_end: f64,
        zero_shot: f64,
        hdrln_start: f64,
        hdrln_end: f64,
    }
    let outcomes = for_each_seed(seeds, parallel, |seed| {
        let (_, flat_curve) = train_dsn(&two_room, &cfg.run, seed)?;
        write_curve_csv(&dir.join(format!("flat_seed{seed}_curve.csv")), &flat_curve)?;
        let (_, h_curve, usage) = train_hdrln(&two_room, &skills, &module, &cfg.run, seed)?;
        write_curve_csv(&dir.join(format!("hdrln_seed{seed}_curve.csv")), &h_curve)?;
        write_usage_csv(&dir.join(format!("hdrln_seed{seed}_usage.csv")), &usage)?;
        let zero = zero_shot_eval(&dsn, &two_room, ZERO_SHOT_EPISODES, DEFAULT_EVAL_EPSILON, seed);
        println!(
            "  seed {seed}: flat {:.1}%, zero-shot {:.1}%, hierarchy {:.1}% -> {:.1}%",
            final_window_success(&flat_curve),
            zero.success_pct,
            h_curve[0].success_pct,
            final_window_success(&h_curve)
        );
        Ok(SeedOutcome {
            flat_end: final_window_success(&flat_curve),
            zero_shot: zero.success_pct,
            hdrln_start: h_curve[0].success_pct,
            hdrln_end: final_window_success(&h_curve),
        })
    })?;

    let bars = [
        ("dqn", mean(&outcomes.iter().map(|o| o.flat_end).collect::<Vec<_>>())),
        ("dsn_zero_shot", mean(&outcomes.iter().map(|o| o.zero_shot).collect::<Vec<_>>())),
        ("hdrln_start", mean(&outcomes.iter().map(|o| o.hdrln_start).collect::<Vec<_>>())),
        ("hdrln_end", mean(&outcomes.iter().map(|o| o.hdrln_end).collect::<Vec<_>>())),
    ];
    let mut text = String::from("system,success_pct\n");
    for (system, pct) in &bars {
        text.push_str(&format!("{system},{pct}\n"));
    }
    let bars_path = dir.join("fig6_bars.csv");
    write_text(&bars_path, &text)?;
    manifest.add_output("bars", &bars_path);
    for (system, pct) in &bars {
        manifest.add_metric(&format!("{system}_success_pct"), *pct);
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.txt"))?;
    for (system, pct) in &bars {
        println!("fig6 {system}: {pct:.1}%");
    }
    Ok(())
}

fn fig7(seeds: &[u64], parallel: bool, user_cfg: Option<&ExperimentConfig>, dir: &Path) -> Result<()> {
    let cfg = pipeline_cfg(user_cfg, true);
    let started = Instant::now();
    let mut manifest = RunManifest::new("replicate-fig7", "complex", seeds);

    println!("fig7: training the skill set");
    let (teachers, specs) =
        train_skill_set(&COMPLEX_SKILL_DOMAINS, &cfg.dsn, seeds[0], dir, &mut manifest)?;
    let complex = make_domain("complex")?;
    let skills = complex_skills();
    let array = DeepSkillModule::array(teachers.clone());

    println!("fig7: distilling the skill set");
    let distilled = distill_multi(&teachers, &specs, &cfg.distill, seeds[0])?;
    if let DeepSkillModule::Distilled(student) = &distilled {
        let path = dir.join("distilled.skfc");
        let mut meta = super::base_metadata("distilled", "complex-skills", seeds[0]);
        meta.insert("tau".into(), cfg.distill.tau.to_string());
        student.save(&path, &meta)?;
        manifest.add_output("distilled", &path);
    }

    struct SeedOutcome {
        flat: f64,
        array: f64,
        distilled: f64,
    }
    let outcomes = for_each_seed(seeds, parallel, |seed| {
        let (_, flat_curve) = train_dsn(&complex, &cfg.run, seed)?;
        write_curve_csv(&dir.join(format!("flat_seed{seed}_curve.csv")), &flat_curve)?;
        let (_, a_curve, a_usage) = train_hdrln(&complex, &skills, &array, &cfg.run, seed)?;
        write_curve_csv(&dir.join(format!("hdrln_array_seed{seed}_curve.csv")), &a_curve)?;
        write_usage_csv(&dir.join(format!("hdrln_array_seed{seed}_usage.csv")), &a_usage)?;
        let (_, d_curve, d_usage) = train_hdrln(&complex, &skills, &distilled, &cfg.run, seed)?;
        write_curve_csv(&dir.join(format!("hdrln_distilled_seed{seed}_curve.csv")), &d_curve)?;
        write_usage_csv(&dir.join(format!("hdrln_distilled_seed{seed}_usage.csv")), &d_usage)?;
        let outcome = SeedOutcome {
            flat: final_window_success(&flat_curve),
            array: final_window_success(&a_curve),
            distilled: final_window_success(&d_curve),
        };
        println!(
            "  seed {seed}: flat {:.1}%, array {:.1}%, distilled {:.1}%",
            outcome.flat, outcome.array, outcome.distilled
        );
        Ok(outcome)
    })?;

    let rows = [
        ("flat_ddqn", mean(&outcomes.iter().map(|o| o.flat).collect::<Vec<_>>())),
        ("hdrln_array", mean(&outcomes.iter().map(|o| o.array).collect::<Vec<_>>())),
        ("hdrln_distilled", mean(&outcomes.iter().map(|o| o.distilled).collect::<Vec<_>>())),
    ];
    let mut text = String::from("system,success_pct\n");
    for (system, pct) in &rows {
        text.push_str(&format!("{system},{pct}\n"));
    }
    let summary_path = dir.join("fig7_summary.csv");
    write_text(&summary_path, &text)?;
    manifest.add_output("summary", &summary_path);
    for (system, pct) in &rows {
        manifest.add_metric(&format!("{system}_success_pct"), *pct);
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.txt"))?;
    for (system, pct) in &rows {
        println!("fig7 {system}: {pct:.1}%");
    }
    Ok(())
}

fn fig8(seeds: &[u64], parallel: bool, user_cfg: Option<&ExperimentConfig>, dir: &Path) -> Result<()> {
    let cfg = pipeline_cfg(user_cfg, true);
    let started = Instant::now();
    let mut manifest = RunManifest::new("replicate-fig8", "complex", seeds);

    println!("fig8: training the skill set");
    let (teachers, _) =
        train_skill_set(&COMPLEX_SKILL_DOMAINS, &cfg.dsn, seeds[0], dir, &mut manifest)?;
    let complex = make_domain("complex")?;
    let skills = complex_skills();
    let array = DeepSkillModule::array(teachers);

    let shares = for_each_seed(seeds, parallel, |seed| {
        let (_, curve, usage) = train_hdrln(&complex, &skills, &array, &cfg.run, seed)?;
        write_curve_csv(&dir.join(format!("hdrln_seed{seed}_curve.csv")), &curve)?;
        write_usage_csv(&dir.join(format!("fig8_usage_seed{seed}.csv")), &usage)?;
        let first = usage.epochs.first().map_or(0.0, |u| u.skill_pct());
        let last = usage.epochs.last().map_or(0.0, |u| u.skill_pct());
        println!("  seed {seed}: skill share {first:.1}% -> {last:.1}%");
        Ok((first, last))
    })?;

    for (seed, (first, last)) in seeds.iter().zip(&shares) {
        manifest.add_output(
            &format!("usage_seed{seed}"),
            &dir.join(format!("fig8_usage_seed{seed}.csv")),
        );
        manifest.add_metric(&format!("seed{seed}_first_skill_pct"), *first);
        manifest.add_metric(&format!("seed{seed}_final_skill_pct"), *last);
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.txt"))?;
    Ok(())
}

fn table2(seeds: &[u64], user_cfg: Option<&ExperimentConfig>, dir: &Path) -> Result<()> {
    let cfg = pipeline_cfg(user_cfg, false);
    let started = Instant::now();
    let base_seed = seeds[0];
    let mut manifest = RunManifest::new("replicate-table2", &DISTILL_DOMAINS.join("+"), seeds);
    const EVAL_EPISODES: u32 = 200;
    const AGREEMENT_SAMPLES: usize = 1_000;

    println!("table2: training the teacher set");
    let (teachers, specs) =
        train_skill_set(&DISTILL_DOMAINS, &cfg.dsn, base_seed, dir, &mut manifest)?;

    let originals: Vec<f64> = teachers
        .iter()
        .zip(&specs)
        .map(|(net, spec)| {
            zero_shot_eval(net, spec, EVAL_EPISODES, DEFAULT_EVAL_EPSILON, base_seed).success_pct
        })
        .collect();

    let mut held_out = Vec::new();
    for (i, (net, spec)) in teachers.iter().zip(&specs).enumerate() {
        held_out.push(collect_dataset(
            net,
            spec,
            AGREEMENT_SAMPLES,
            base_seed.wrapping_add(7_100 + i as u64),
        ));
    }

    let mut students = Vec::new();
    for (label, tau) in [("tau01", 0.1), ("tau1", 1.0)] {
        println!("table2: distilling at temperature {tau}");
        let mut dcfg = cfg.distill.clone();
        dcfg.tau = tau;
        let module = distill_multi(&teachers, &specs, &dcfg, base_seed)?;
        let success: Vec<f64> = evaluate_distilled(&module, &specs, EVAL_EPISODES, DEFAULT_EVAL_EPSILON, base_seed)
            .iter()
            .map(|r| r.success_pct)
            .collect();
        let agreement: Vec<f64> = (0..teachers.len())
            .map(|i| argmax_agreement(&module, i, &held_out[i]) * 100.0)
            .collect();
        if let DeepSkillModule::Distilled(student) = &module {
            let path = dir.join(format!("distilled_{label}.skfc"));
            let mut meta = super::base_metadata("distilled", &DISTILL_DOMAINS.join("+"), base_seed);
            meta.insert("tau".into(), tau.to_string());
            student.save(&path, &meta)?;
            manifest.add_output(&format!("distilled_{label}"), &path);
        }
        students.push((success, agreement));
    }

    let mut text = String::from("task,original_dsn,distilled_tau01,distilled_tau1\n");
    for (i, domain) in DISTILL_DOMAINS.iter().enumerate() {
        text.push_str(&format!(
            "{domain},{},{},{}\n",
            originals[i], students[0].0[i], students[1].0[i]
        ));
    }
    let success_path = dir.join("table2_success.csv");
    write_text(&success_path, &text)?;

    let mut text = String::from("task,tau01_agreement_pct,tau1_agreement_pct\n");
    for (i, domain) in DISTILL_DOMAINS.iter().enumerate() {
        text.push_str(&format!("{domain},{},{}\n", students[0].1[i], students[1].1[i]));
    }
    let agreement_path = dir.join("table2_agreement.csv");
    write_text(&agreement_path, &text)?;

    manifest.add_output("success", &success_path);
    manifest.add_output("agreement", &agreement_path);
    for (i, domain) in DISTILL_DOMAINS.iter().enumerate() {
        manifest.add_metric(&format!("{domain}_original_pct"), originals[i]);
        manifest.add_metric(&format!("{domain}_tau01_pct"), students[0].0[i]);
        manifest.add_metric(&format!("{domain}_tau01_agreement_pct"), students[0].1[i]);
    }
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.txt"))?;

    for (i, domain) in DISTILL_DOMAINS.iter().enumerate() {
        println!(
            "table2 {domain}: original {:.1}%, distilled {:.1}% (agreement {:.1}%)",
            originals[i], students[0].0[i], students[0].1[i]
        );
    }
    Ok(())
}

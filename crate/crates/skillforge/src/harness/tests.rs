use std::path::{Path, PathBuf};

use tempfile::tempdir;

use super::*;
use crate::agent::EpochStats;
use crate::hdrln::{SkillUsageStats, UsageEpoch};

fn stats(epoch: u32, success: f64) -> EpochStats {
    EpochStats {
        epoch,
        optimization_steps: epoch as u64 * 1000,
        success_pct: success,
        mean_reward: 0.5,
        mean_length: 12.25,
        epsilon: 0.1,
    }
}

#[test]
fn curve_csv_layout_is_pinned() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("curve.csv");
    write_curve_csv(&path, &[stats(1, 62.5)]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        "epoch,optimization_steps,success_pct,mean_reward,mean_length,epsilon\n\
         1,1000,62.5,0.5,12.25,0.1\n"
    );
}

#[test]
fn usage_csv_layout_is_pinned() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("usage.csv");
    let usage = SkillUsageStats {
        epochs: vec![UsageEpoch {
            epoch: 1,
            skill_decisions: 1,
            primitive_decisions: 3,
            mean_reward: -0.25,
        }],
    };
    write_usage_csv(&path, &usage).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text, "epoch,skill_pct,primitive_pct,mean_reward\n1,25,75,-0.25\n");
}

#[test]
fn report_csv_layout_is_pinned() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let report = crate::agent::EvaluationReport {
        episodes: 100,
        successes: 91,
        success_pct: 91.0,
        mean_reward: 0.375,
        mean_length: 14.5,
        log: Vec::new(),
    };
    write_report_csv(&path, &report).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(
        text,
        "episodes,successes,success_pct,mean_reward,mean_length\n100,91,91,0.375,14.5\n"
    );
}

#[test]
fn final_window_averages_the_tail() {
    let curve: Vec<EpochStats> = [10.0, 20.0, 40.0, 60.0, 80.0]
        .iter()
        .enumerate()
        .map(|(i, &s)| stats(i as u32 + 1, s))
        .collect();
    assert_eq!(final_window_success(&curve), 60.0);
    // Shorter than the window: average everything.
    assert_eq!(final_window_success(&curve[..2]), 15.0);
}

#[test]
fn manifest_write_is_atomic_and_readable() {
    let dir = tempdir().unwrap();
    let path = dir.path().join("manifest.txt");
    let mut m = RunManifest::new("demo", "nav1", &[3, 4]);
    m.add_output("curve", Path::new("out/curve.csv"));
    m.add_metric("final_success_pct", 92.5);
    m.wall_clock_secs = 1.5;
    m.write(&path).unwrap();
    assert!(!path.with_extension("tmp").exists());
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("experiment = demo\n"));
    assert!(text.contains("domain = nav1\n"));
    assert!(text.contains("seeds = 3,4\n"));
    assert!(text.contains("output.curve = out/curve.csv\n"));
    assert!(text.contains("metric.final_success_pct = 92.5\n"));
    assert!(text.contains("wall_clock_secs = 1.500\n"));
}

#[test]
fn out_dir_flag_beats_everything() {
    assert_eq!(
        resolve_out_dir(Some(Path::new("/tmp/explicit"))),
        PathBuf::from("/tmp/explicit")
    );
}

#[test]
fn config_round_trips_through_serialization() {
    let mut cfg = ExperimentConfig::default();
    cfg.name = "roundtrip".into();
    cfg.domain = "two_room".into();
    cfg.seeds = vec![3, 5, 8];
    cfg.out = Some(PathBuf::from("/tmp/rt"));
    cfg.module = ModuleKind::Distilled;
    cfg.agent.lr = 0.001;
    cfg.agent.stop_at_success = Some(90.0);
    cfg.hdrln.double = true;
    cfg.hdrln.hidden = vec![32, 16];
    cfg.distill.tau = 1.0;
    let text = serialize_config(&cfg);
    let parsed = parse_config(&text, "mem").unwrap();
    assert_eq!(parsed, cfg);
}

#[test]
fn default_config_round_trips() {
    let text = serialize_config(&ExperimentConfig::default());
    let parsed = parse_config(&text, "mem").unwrap();
    assert_eq!(parsed, ExperimentConfig::default());
}

#[test]
fn config_errors_carry_line_numbers() {
    let reason = |text: &str| match parse_config(text, "mem") {
        Err(crate::Error::ConfigParse { line, reason, .. }) => (line, reason),
        other => panic!("expected parse error, got {other:?}"),
    };
    let (line, msg) = reason("[experiment]\nname = x\n[rocket]\n");
    assert_eq!(line, 3);
    assert!(msg.contains("unknown section"), "{msg}");

    let (line, msg) = reason("name = x\n");
    assert_eq!(line, 1);
    assert!(msg.contains("before any section header"), "{msg}");

    let (line, msg) = reason("[agent]\nwarp_speed = 9\n");
    assert_eq!(line, 2);
    assert!(msg.contains("warp_speed"), "{msg}");

    let (line, msg) = reason("[agent]\nlr = fast\n");
    assert_eq!(line, 2);
    assert!(msg.contains("lr"), "{msg}");
}

#[test]
fn config_validation_is_section_tagged() {
    let text = "[agent]\ngamma = 1.5\n";
    match parse_config(text, "mem") {
        Err(crate::Error::ConfigValidation(msg)) => {
            assert!(msg.starts_with("[agent]"), "{msg}")
        }
        other => panic!("expected validation error, got {other:?}"),
    }
}

#[test]
fn missing_config_file_is_a_config_error() {
    let err = load_config(Path::new("/nonexistent/skillforge.cfg")).unwrap_err();
    assert_eq!(err.exit_code(), 1);
    assert!(err.to_string().contains("/nonexistent/skillforge.cfg"));
}

fn run_cli(args: &[&str]) -> u8 {
    let argv: Vec<String> = std::iter::once("skillforge")
        .chain(args.iter().copied())
        .map(String::from)
        .collect();
    cli_main(&argv)
}

#[test]
fn cli_help_exits_zero() {
    assert_eq!(run_cli(&["--help"]), 0);
    assert_eq!(run_cli(&["train-dsn", "--help"]), 0);
}

#[test]
fn cli_rejects_unknown_flags_with_usage_code() {
    assert_eq!(run_cli(&["train-dsn", "--domain", "nav1", "--warp"]), 1);
    assert_eq!(run_cli(&["no-such-command"]), 1);
}

#[test]
fn cli_missing_checkpoint_is_a_config_error() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let code = run_cli(&[
        "evaluate",
        "--checkpoint",
        "/nonexistent/q.skfc",
        "--domain",
        "nav1",
        "--out",
        &out,
    ]);
    assert_eq!(code, 1);
}

#[test]
fn cli_unknown_domain_is_a_config_error() {
    let dir = tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let code = run_cli(&["train-dsn", "--domain", "atlantis", "--out", &out]);
    assert_eq!(code, 1);
}

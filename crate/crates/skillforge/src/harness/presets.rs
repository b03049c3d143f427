//! Desk-scale training budgets.
//!
//! [`AgentConfig::default`](crate::agent::AgentConfig::default) documents the
//! full-scale hyper-parameters; the presets here come from a sweep on the
//! single-room domains (one workstation core, minutes per run). Three choices
//! carry most of the weight: a long random prefill so the replay buffer holds
//! goal transitions before the first update (sparse rewards are otherwise
//! never discovered), a learning rate an order of magnitude under the
//! full-scale one (which diverges on these short dense inputs), and a low
//! replay ratio so the buffer keeps turning over with fresh on-policy
//! corrections. Paired comparisons (flat baseline vs. hierarchical) always
//! use matched optimization budgets with early stopping disabled.

use crate::agent::AgentConfig;
use crate::distill::DistillConfig;

/// Single-room skill training. Stops early once evaluation success clears
/// 95%, so the saved curve length doubles as a convergence measure.
pub fn desk_agent() -> AgentConfig {
    AgentConfig {
        lr: 0.000_25,
        n_replay: 4,
        learn_start: 12_000,
        eps_endt: 20_000,
        target_sync: 1_000,
        double: true,
        epoch_steps: 1_000,
        epochs: 100,
        eval_episodes: 40,
        stop_at_success: Some(95.0),
        ..AgentConfig::default()
    }
}

/// Flat baseline on the two-room domain: fixed budget, no early stop.
pub fn desk_flat_two_room() -> AgentConfig {
    AgentConfig {
        epochs: 50,
        stop_at_success: None,
        ..desk_agent()
    }
}

/// Hierarchical controller on the two-room domain; budget matched to
/// [`desk_flat_two_room`] so the comparison is step-for-step fair.
pub fn desk_hdrln() -> AgentConfig {
    desk_flat_two_room()
}

/// Flat baseline on the complex domain: fixed budget, double estimator.
pub fn desk_flat_complex() -> AgentConfig {
    AgentConfig {
        epochs: 60,
        stop_at_success: None,
        ..desk_agent()
    }
}

/// Hierarchical controller on the complex domain; budget matched to
/// [`desk_flat_complex`].
pub fn desk_hdrln_complex() -> AgentConfig {
    desk_flat_complex()
}

/// Multi-task distillation budget.
pub fn desk_distill() -> DistillConfig {
    DistillConfig {
        steps_per_teacher: 3_000,
        dataset_size: 5_000,
        ..DistillConfig::default()
    }
}

//! The hierarchical controller: a Q-network whose outputs are the six
//! primitives plus one entry per skill, trained with the variable-duration
//! bootstrap against the unified replay and executing skills closed-loop.
//!
//! Joint output layout: indices `0..6` are primitives in [`Action`]
//! order, index `6 + i` selects skill `i`.

use rand_chacha::ChaCha8Rng;

use crate::agent::{
    epsilon_at, evaluate, select_action, stream, streams, AgentConfig, EpochStats, Policy,
};
use crate::env::{Action, DomainSpec, GridEnv, OBS_LEN};
use crate::error::{Error, Result};
use crate::nn::{argmax, QNetwork};
use crate::replay::{ReplayBuffer, Transition};
use crate::skills::{beta_terminate, execute_skill, skill_act, DeepSkillModule, Skill};

/// SMDP target for a stored tuple of any duration: `r` on terminal, else
/// `r + gamma^k * max Q_target(s', .)` with the max over the full joint
/// output set. For `k = 1` this is exactly the one-step TD target.
pub fn smdp_target(t: &Transition, gamma: f64, target_net: &QNetwork) -> f64 {
    assert!(t.duration >= 1, "tuple duration must be at least 1");
    if t.terminal {
        return t.reward;
    }
    let tq = target_net.forward(&t.next_obs.to_vector());
    t.reward + gamma.powi(t.duration as i32) * tq[argmax(&tq)]
}

/// Double variant: the online net picks the bootstrap output, the target
/// net values it.
pub fn smdp_target_double(
    t: &Transition,
    gamma: f64,
    net: &QNetwork,
    target_net: &QNetwork,
) -> f64 {
    assert!(t.duration >= 1, "tuple duration must be at least 1");
    if t.terminal {
        return t.reward;
    }
    let v = t.next_obs.to_vector();
    let pick = argmax(&net.forward(&v));
    t.reward + gamma.powi(t.duration as i32) * target_net.forward(&v)[pick]
}

/// A trained hierarchical agent: the controller plus the frozen skills it
/// was trained against.
#[derive(Debug, Clone)]
pub struct HDRLNPolicy {
    controller: QNetwork,
    skills: Vec<Skill>,
    module: DeepSkillModule,
    gamma: f64,
}

impl HDRLNPolicy {
    pub fn new(
        controller: QNetwork,
        skills: Vec<Skill>,
        module: DeepSkillModule,
        gamma: f64,
    ) -> Self {
        assert!(!skills.is_empty(), "a hierarchical policy needs at least one skill");
        assert_eq!(controller.input_dim(), OBS_LEN, "controller input must be an observation");
        assert_eq!(
            controller.output_dim(),
            Action::COUNT + skills.len(),
            "controller must emit one value per primitive and per skill"
        );
        for s in &skills {
            assert!(
                s.policy < module.skill_count(),
                "skill '{}' points outside the module",
                s.name
            );
        }
        HDRLNPolicy {
            controller,
            skills,
            module,
            gamma,
        }
    }

    pub fn controller(&self) -> &QNetwork {
        &self.controller
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn module(&self) -> &DeepSkillModule {
        &self.module
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Builds the step-by-step acting adapter used for evaluation.
    pub fn acting(&self, eps: f64) -> HierarchicalActing<'_> {
        HierarchicalActing::new(&self.controller, &self.skills, &self.module, eps)
    }
}

/// Drives episodes one primitive step at a time while honoring skill
/// semantics: controller decisions happen epsilon-greedily at skill
/// boundaries, and a running skill keeps control until its termination
/// rule fires. Decision counts accumulate for usage statistics.
pub struct HierarchicalActing<'a> {
    controller: &'a QNetwork,
    skills: &'a [Skill],
    module: &'a DeepSkillModule,
    eps: f64,
    /// `(skill index, primitive steps already taken under it)`.
    active: Option<(usize, u32)>,
    pub skill_decisions: u64,
    pub primitive_decisions: u64,
}

impl<'a> HierarchicalActing<'a> {
    pub fn new(
        controller: &'a QNetwork,
        skills: &'a [Skill],
        module: &'a DeepSkillModule,
        eps: f64,
    ) -> Self {
        HierarchicalActing {
            controller,
            skills,
            module,
            eps,
            active: None,
            skill_decisions: 0,
            primitive_decisions: 0,
        }
    }
}

impl Policy for HierarchicalActing<'_> {
    fn begin_episode(&mut self) {
        self.active = None;
    }

    fn act(&mut self, env: &GridEnv, rng: &mut ChaCha8Rng) -> Action {
        if let Some((i, elapsed)) = self.active {
            if beta_terminate(&self.skills[i], env.state(), elapsed, false) {
                self.active = None;
            }
        }
        match self.active {
            Some((i, elapsed)) => {
                self.active = Some((i, elapsed + 1));
                skill_act(self.module, self.skills[i].policy, &env.observation())
            }
            None => {
                let q = self.controller.forward(&env.observation().to_vector());
                let choice = select_action(&q, self.eps, rng);
                if choice < Action::COUNT {
                    self.primitive_decisions += 1;
                    Action::from_index(choice)
                } else {
                    self.skill_decisions += 1;
                    let s = choice - Action::COUNT;
                    self.active = Some((s, 1));
                    skill_act(self.module, self.skills[s].policy, &env.observation())
                }
            }
        }
    }
}

/// What one controller decision produced.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    /// The tuple pushed to replay; `duration` is 1 for a primitive and
    /// the executed length for a skill, with `reward` the discounted
    /// in-skill sum in that case.
    pub transition: Transition,
    pub is_skill: bool,
    pub success: bool,
}

/// Executes one epsilon-greedy controller decision: a primitive becomes a
/// single environment step and a `k = 1` tuple; a skill runs closed-loop
/// to termination and becomes one tuple of duration `k`, with environment
/// time advancing by exactly `k`. The tuple is pushed to `buf`.
pub fn hdrln_step(
    controller: &QNetwork,
    skills: &[Skill],
    module: &DeepSkillModule,
    env: &mut GridEnv,
    eps: f64,
    gamma: f64,
    rng: &mut ChaCha8Rng,
    buf: &mut ReplayBuffer,
) -> StepOutcome {
    assert!(!env.is_terminal(), "cannot act on a finished episode");
    let obs = env.observation();
    let q = controller.forward(&obs.to_vector());
    let choice = select_action(&q, eps, rng);
    let outcome = if choice < Action::COUNT {
        let res = env.step(Action::from_index(choice));
        StepOutcome {
            transition: Transition {
                obs,
                choice,
                reward: res.reward,
                next_obs: res.observation,
                terminal: res.terminal,
                duration: 1,
            },
            is_skill: false,
            success: res.success,
        }
    } else {
        let rec = execute_skill(env, &skills[choice - Action::COUNT], module, gamma);
        StepOutcome {
            transition: Transition {
                obs: rec.start_obs,
                choice,
                reward: rec.rtilde,
                next_obs: rec.end_obs,
                terminal: rec.terminal,
                duration: rec.duration,
            },
            is_skill: true,
            success: rec.success,
        }
    };
    buf.push(outcome.transition);
    outcome
}

/// One epoch's selection counts from the evaluation rollouts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UsageEpoch {
    pub epoch: u32,
    pub skill_decisions: u64,
    pub primitive_decisions: u64,
    /// Mean evaluation episode reward, for plotting usage against return.
    pub mean_reward: f64,
}

impl UsageEpoch {
    pub fn skill_pct(&self) -> f64 {
        let total = self.skill_decisions + self.primitive_decisions;
        100.0 * self.skill_decisions as f64 / total as f64
    }

    pub fn primitive_pct(&self) -> f64 {
        let total = self.skill_decisions + self.primitive_decisions;
        100.0 * self.primitive_decisions as f64 / total as f64
    }
}

/// Per-epoch skill usage across a training run.
#[derive(Debug, Clone, Default)]
pub struct SkillUsageStats {
    pub epochs: Vec<UsageEpoch>,
}

/// Trains the hierarchical controller on one domain against frozen
/// skills.
///
/// Mirrors the flat training loop, but each iteration is one controller
/// decision (primitive or full skill execution), replay tuples carry
/// their durations, and batch targets bootstrap with `gamma^k` — the
/// double variant when `cfg.double`. Each epoch the frozen controller is
/// evaluated hierarchically, yielding the learning curve and the skill
/// usage row. The skill module is never modified.
pub fn train_hdrln(
    spec: &DomainSpec,
    skills: &[Skill],
    module: &DeepSkillModule,
    cfg: &AgentConfig,
    seed: u64,
) -> Result<(HDRLNPolicy, Vec<EpochStats>, SkillUsageStats)> {
    cfg.validate()?;
    assert!(!skills.is_empty(), "hierarchical training needs at least one skill");
    for s in skills {
        assert!(
            s.policy < module.skill_count(),
            "skill '{}' points outside the module",
            s.name
        );
    }
    let joint = Action::COUNT + skills.len();
    let mut init_rng = stream(seed, streams::INIT);
    let mut env_rng = stream(seed, streams::ENV);
    let mut act_rng = stream(seed, streams::ACT);
    let mut replay_rng = stream(seed, streams::REPLAY);

    let mut controller = QNetwork::dense(OBS_LEN, &cfg.hidden, joint, &mut init_rng);
    let mut target = controller.sync_target();
    let mut buf = ReplayBuffer::new(cfg.replay_capacity);
    let mut env = GridEnv::new(spec.clone());
    env.reset(&mut env_rng);

    let mut env_steps: u64 = 0;
    let mut opt_steps: u64 = 0;
    let total_steps = cfg.epochs as u64 * cfg.epoch_steps;
    let mut curve = Vec::new();
    let mut usage = SkillUsageStats::default();

    'training: while opt_steps < total_steps {
        if env.is_terminal() {
            env.reset(&mut env_rng);
        }
        let eps = epsilon_at(cfg, env_steps);
        let outcome = hdrln_step(
            &controller,
            skills,
            module,
            &mut env,
            eps,
            cfg.gamma,
            &mut act_rng,
            &mut buf,
        );
        env_steps += outcome.transition.duration as u64;

        if buf.len() < cfg.learn_start {
            continue;
        }
        for _ in 0..cfg.n_replay {
            let sampled = buf.sample(cfg.batch_size, &mut replay_rng)?;
            let batch =
                crate::agent::build_batch(&controller, &target, &sampled, cfg.gamma, cfg.double);
            controller.train_step(&batch, cfg.lr).map_err(|e| match e {
                Error::TrainingDiverged { loss, .. } => Error::TrainingDiverged {
                    step: opt_steps,
                    loss,
                },
                other => other,
            })?;
            opt_steps += 1;
            if opt_steps % cfg.target_sync == 0 {
                target = controller.sync_target();
            }
            if opt_steps % cfg.epoch_steps == 0 {
                let epoch = (opt_steps / cfg.epoch_steps) as u32;
                let mut eval_rng = stream(seed, streams::EVAL_BASE + epoch as u64);
                let mut acting =
                    HierarchicalActing::new(&controller, skills, module, cfg.eval_epsilon);
                let report = evaluate(&mut acting, spec, cfg.eval_episodes, &mut eval_rng);
                curve.push(EpochStats {
                    epoch,
                    optimization_steps: opt_steps,
                    success_pct: report.success_pct,
                    mean_reward: report.mean_reward,
                    mean_length: report.mean_length,
                    epsilon: epsilon_at(cfg, env_steps),
                });
                usage.epochs.push(UsageEpoch {
                    epoch,
                    skill_decisions: acting.skill_decisions,
                    primitive_decisions: acting.primitive_decisions,
                    mean_reward: report.mean_reward,
                });
                let reached = cfg
                    .stop_at_success
                    .is_some_and(|th| report.success_pct >= th);
                if reached || opt_steps >= total_steps {
                    break 'training;
                }
            }
        }
    }
    Ok((
        HDRLNPolicy::new(controller, skills.to_vec(), module.clone(), cfg.gamma),
        curve,
        usage,
    ))
}

/// Evaluates a frozen skill network directly on a (possibly different)
/// domain: no controller, no training, greedy with `eval_epsilon`
/// tie-breaking exploration.
pub fn zero_shot_eval(
    net: &QNetwork,
    spec: &DomainSpec,
    episodes: u32,
    eval_epsilon: f64,
    seed: u64,
) -> crate::agent::EvaluationReport {
    let mut rng = stream(seed, streams::EVAL_BASE);
    let mut policy = crate::agent::GreedyNetPolicy::new(net, eval_epsilon);
    evaluate(&mut policy, spec, episodes, &mut rng)
}

//! Flat DQN / DDQN learner: epsilon-greedy behavior, TD targets, the
//! single-domain training loop, and the evaluation protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Action, DomainSpec, GridEnv, OBS_LEN};
use crate::error::{Error, Result};
use crate::nn::{argmax, Batch, QNetwork};
use crate::replay::{ReplayBuffer, Transition};

/// RNG streams carved out of one seed so that the independent sources of
/// randomness (weight init, environment, exploration, replay sampling)
/// never interleave. Per-epoch evaluation gets its own stream family.
pub(crate) mod streams {
    pub const INIT: u64 = 0;
    pub const ENV: u64 = 1;
    pub const ACT: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const EVAL_BASE: u64 = 1000;
}

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Hyperparameters for flat and hierarchical training runs.
///
/// Defaults are the documented full-scale settings; the harness presets
/// shrink horizons for desk-scale runs. `n_replay` is the number of
/// gradient updates performed per environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Environment steps over which epsilon anneals linearly.
    pub eps_endt: u64,
    pub n_replay: u32,
    /// Optimization steps between target-network syncs.
    pub target_sync: u64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Stored transitions required before learning starts.
    pub learn_start: usize,
    /// Optimization steps per epoch; each epoch ends with an evaluation.
    pub epoch_steps: u64,
    pub epochs: u32,
    pub eval_episodes: u32,
    /// Exploration used during evaluation episodes, to break the loops
    /// that visually ambiguous states can trap a deterministic policy in.
    pub eval_epsilon: f64,
    pub hidden: Vec<usize>,
    /// Use the double-DQN target (select with the online net, evaluate
    /// with the target net).
    pub double: bool,
    /// Stop once an epoch evaluation reaches this success percentage.
    pub stop_at_success: Option<f64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            lr: 0.0025,
            eps_start: 1.0,
            eps_end: 0.1,
            eps_endt: 40_000,
            n_replay: 16,
            target_sync: 250,
            batch_size: 32,
            replay_capacity: 20_000,
            learn_start: 500,
            epoch_steps: 20_000,
            epochs: 10,
            eval_episodes: 100,
            eval_epsilon: 0.05,
            hidden: vec![64, 64],
            double: false,
            stop_at_success: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigValidation(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma must be in [0, 1), got {}", self.gamma));
        }
        if self.lr <= 0.0 {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..=1.0).contains(&self.eps_start)
            || !(0.0..=1.0).contains(&self.eps_end)
            || self.eps_end > self.eps_start
        {
            return fail(format!(
                "need 0 <= eps_end <= eps_start <= 1, got {} and {}",
                self.eps_end, self.eps_start
            ));
        }
        if !(0.0..=1.0).contains(&self.eval_epsilon) {
            return fail(format!("eval_epsilon must be in [0, 1], got {}", self.eval_epsilon));
        }
        for (name, value) in [
            ("eps_endt", self.eps_endt),
            ("n_replay", self.n_replay as u64),
            ("target_sync", self.target_sync),
            ("batch_size", self.batch_size as u64),
            ("replay_capacity", self.replay_capacity as u64),
            ("epoch_steps", self.epoch_steps),
            ("epochs", self.epochs as u64),
            ("eval_episodes", self.eval_episodes as u64),
        ] {
            if value == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.batch_size > self.replay_capacity {
            return fail("batch_size cannot exceed replay_capacity".into());
        }
        if self.learn_start < self.batch_size {
            return fail("learn_start must be at least batch_size".into());
        }
        if let Some(th) = self.stop_at_success {
            if !(0.0..=100.0).contains(&th) {
                return fail(format!("stop_at_success must be in [0, 100], got {th}"));
            }
        }
        Ok(())
    }
}

/// Linear exploration schedule: from `eps_start` at step 0 down to
/// `eps_end` at `eps_endt` environment steps, constant afterwards.
pub fn epsilon_at(cfg: &AgentConfig, step: u64) -> f64 {
    if step >= cfg.eps_endt {
        return cfg.eps_end;
    }
    let frac = step as f64 / cfg.eps_endt as f64;
    cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac
}

/// Epsilon-greedy choice over a value vector. Greedy ties break toward
/// the lowest index.
pub fn select_action<R: Rng>(q: &[f64], eps: f64, rng: &mut R) -> usize {
    assert!(!q.is_empty(), "empty value vector");
    assert!((0.0..=1.0).contains(&eps), "epsilon out of range: {eps}");
    if eps > 0.0 && rng.gen::<f64>() < eps {
        rng.gen_range(0..q.len())
    } else {
        argmax(q)
    }
}

/// One-step TD target from already-computed next-state values:
/// `r + gamma * max Q_target(s', .)`, or `r` alone on terminal.
pub fn dqn_target_values(reward: f64, terminal: bool, gamma: f64, next_q_target: &[f64]) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q_target[argmax(next_q_target)]
    }
}

/// Double-DQN variant: the online net selects the action, the target net
/// evaluates it.
pub fn ddqn_target_values(
    reward: f64,
    terminal: bool,
    gamma: f64,
    next_q_net: &[f64],
    next_q_target: &[f64],
) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * next_q_target[argmax(next_q_net)]
    }
}

/// TD target for a stored primitive transition.
pub fn dqn_target(t: &Transition, gamma: f64, target_net: &QNetwork) -> f64 {
    assert_eq!(t.duration, 1, "skill tuples need the SMDP target");
    if t.terminal {
        return t.reward;
    }
    dqn_target_values(t.reward, false, gamma, &target_net.forward(&t.next_obs.to_vector()))
}

/// Double-DQN target for a stored primitive transition.
pub fn ddqn_target(t: &Transition, gamma: f64, net: &QNetwork, target_net: &QNetwork) -> f64 {
    assert_eq!(t.duration, 1, "skill tuples need the SMDP target");
    if t.terminal {
        return t.reward;
    }
    let v = t.next_obs.to_vector();
    ddqn_target_values(t.reward, false, gamma, &net.forward(&v), &target_net.forward(&v))
}

/// Builds a regression batch from sampled transitions. Handles mixed
/// durations: a tuple of duration k bootstraps with `gamma^k`, so
/// primitive (k = 1) and skill (k > 1) tuples can share one batch.
pub(crate) fn build_batch(
    net: &QNetwork,
    target_net: &QNetwork,
    transitions: &[Transition],
    gamma: f64,
    double: bool,
) -> Batch {
    let mut inputs = Vec::with_capacity(transitions.len());
    let mut target_values = Vec::with_capacity(transitions.len());
    let mut target_indices = Vec::with_capacity(transitions.len());
    for t in transitions {
        inputs.push(t.obs.to_vector());
        let y = if t.terminal {
            t.reward
        } else {
            let v = t.next_obs.to_vector();
            let discount = gamma.powi(t.duration as i32);
            let tq = target_net.forward(&v);
            let bootstrap = if double {
                tq[argmax(&net.forward(&v))]
            } else {
                tq[argmax(&tq)]
            };
            t.reward + discount * bootstrap
        };
        target_values.push(y);
        target_indices.push(t.choice);
    }
    Batch {
        inputs,
        target_values,
        target_indices,
    }
}

/// Anything that can drive an episode one primitive action at a time.
/// Hierarchical policies keep their skill bookkeeping between calls and
/// reset it in [`Policy::begin_episode`].
pub trait Policy {
    fn begin_episode(&mut self) {}
    fn act(&mut self, env: &GridEnv, rng: &mut ChaCha8Rng) -> Action;
}

/// Epsilon-greedy wrapper over a value network's six primitive outputs.
pub struct GreedyNetPolicy<'a> {
    net: &'a QNetwork,
    eps: f64,
}

impl<'a> GreedyNetPolicy<'a> {
    pub fn new(net: &'a QNetwork, eps: f64) -> Self {
        assert_eq!(net.output_dim(), Action::COUNT, "expected a primitive-action head");
        GreedyNetPolicy { net, eps }
    }
}

impl Policy for GreedyNetPolicy<'_> {
    fn act(&mut self, env: &GridEnv, rng: &mut ChaCha8Rng) -> Action {
        let q = self.net.forward(&env.observation().to_vector());
        Action::from_index(select_action(&q, self.eps, rng))
    }
}

/// One evaluated episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub reward: f64,
    pub length: u32,
    pub success: bool,
}

/// Aggregate outcome of an evaluation run.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub episodes: u32,
    pub successes: u32,
    pub success_pct: f64,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub log: Vec<EpisodeLog>,
}

/// Runs `episodes` fresh episodes under the policy and aggregates them.
pub fn evaluate<P: Policy>(
    policy: &mut P,
    spec: &DomainSpec,
    episodes: u32,
    rng: &mut ChaCha8Rng,
) -> EvaluationReport {
    assert!(episodes >= 1, "need at least one evaluation episode");
    let mut env = GridEnv::new(spec.clone());
    let mut log = Vec::with_capacity(episodes as usize);
    for _ in 0..episodes {
        env.reset(rng);
        policy.begin_episode();
        let mut reward = 0.0;
        let mut length = 0;
        let mut success = false;
        while !env.is_terminal() {
            let action = policy.act(&env, rng);
            let r = env.step(action);
            reward += r.reward;
            length += 1;
            success = r.success;
        }
        log.push(EpisodeLog {
            reward,
            length,
            success,
        });
    }
    let successes = log.iter().filter(|e| e.success).count() as u32;
    EvaluationReport {
        episodes,
        successes,
        success_pct: 100.0 * successes as f64 / episodes as f64,
        mean_reward: log.iter().map(|e| e.reward).sum::<f64>() / episodes as f64,
        mean_length: log.iter().map(|e| e.length as f64).sum::<f64>() / episodes as f64,
        log,
    }
}

/// One row of a learning curve: the epoch's evaluation plus the schedule
/// position it was taken at.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: u32,
    pub optimization_steps: u64,
    pub success_pct: f64,
    pub mean_reward: f64,
    pub mean_length: f64,
    pub epsilon: f64,
}

/// Trains a flat DQN (or DDQN when `cfg.double`) on one domain.
///
/// Per environment step the agent acts epsilon-greedily, stores the
/// transition, and runs `n_replay` gradient updates on uniform batches;
/// the target net refreshes every `target_sync` optimization steps. Every
/// `epoch_steps` optimization steps the weights are frozen and evaluated,
/// producing one learning-curve row. Returns the final network and the
/// curve. Fully deterministic for a given seed.
pub fn train_dsn(spec: &DomainSpec, cfg: &AgentConfig, seed: u64) -> Result<(QNetwork, Vec<EpochStats>)> {
    cfg.validate()?;
    let mut init_rng = stream(seed, streams::INIT);
    let mut env_rng = stream(seed, streams::ENV);
    let mut act_rng = stream(seed, streams::ACT);
    let mut replay_rng = stream(seed, streams::REPLAY);

    let mut net = QNetwork::dense(OBS_LEN, &cfg.hidden, Action::COUNT, &mut init_rng);
    let mut target = net.sync_target();
    let mut buf = ReplayBuffer::new(cfg.replay_capacity);
    let mut env = GridEnv::new(spec.clone());
    let mut obs = env.reset(&mut env_rng);

    let mut env_steps: u64 = 0;
    let mut opt_steps: u64 = 0;
    let total_steps = cfg.epochs as u64 * cfg.epoch_steps;
    let mut curve = Vec::new();

    'training: while opt_steps < total_steps {
        if env.is_terminal() {
            obs = env.reset(&mut env_rng);
        }
        let eps = epsilon_at(cfg, env_steps);
        let q = net.forward(&obs.to_vector());
        let choice = select_action(&q, eps, &mut act_rng);
        let res = env.step(Action::from_index(choice));
        buf.push(Transition {
            obs,
            choice,
            reward: res.reward,
            next_obs: res.observation,
            terminal: res.terminal,
            duration: 1,
        });
        obs = res.observation;
        env_steps += 1;

        if buf.len() < cfg.learn_start {
            continue;
        }
        for _ in 0..cfg.n_replay {
            let sampled = buf.sample(cfg.batch_size, &mut replay_rng)?;
            let batch = build_batch(&net, &target, &sampled, cfg.gamma, cfg.double);
            net.train_step(&batch, cfg.lr).map_err(|e| match e {
                Error::TrainingDiverged { loss, .. } => Error::TrainingDiverged {
                    step: opt_steps,
                    loss,
                },
                other => other,
            })?;
            opt_steps += 1;
            if opt_steps % cfg.target_sync == 0 {
                target = net.sync_target();
            }
            if opt_steps % cfg.epoch_steps == 0 {
                let epoch = (opt_steps / cfg.epoch_steps) as u32;
                let mut eval_rng = stream(seed, streams::EVAL_BASE + epoch as u64);
                let mut policy = GreedyNetPolicy::new(&net, cfg.eval_epsilon);
                let report = evaluate(&mut policy, spec, cfg.eval_episodes, &mut eval_rng);
                curve.push(EpochStats {
                    epoch,
                    optimization_steps: opt_steps,
                    success_pct: report.success_pct,
                    mean_reward: report.mean_reward,
                    mean_length: report.mean_length,
                    epsilon: epsilon_at(cfg, env_steps),
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
    Ok((net, curve))
}

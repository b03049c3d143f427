//! Multi-skill policy distillation: teacher dataset collection, the
//! shared-trunk multi-head student, round-robin supervised training on
//! the tempered-softmax regression loss, and fidelity evaluation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{evaluate, select_action, stream, streams, EvaluationReport, Policy};
use crate::env::{Action, DomainSpec, GridEnv, Observation, OBS_LEN};
use crate::error::{Error, Result};
use crate::nn::{argmax, distill_loss_and_grad, Gradients, Mat, QNetwork};
use crate::skills::{DeepSkillModule, DistilledNetwork};

/// Exploration mixed into teacher rollouts while gathering states, so the
/// dataset covers the neighborhood of the teacher's trajectory and not
/// just its single deterministic path.
pub const TEACHER_ROLLOUT_EPS: f64 = 0.05;

/// RNG stream for batch sampling, disjoint from the agent's streams.
const TRAIN_STREAM: u64 = 4;

/// One supervised example: a state and the teacher's value row on it.
#[derive(Debug, Clone)]
pub struct DistillSample {
    pub obs: Observation,
    /// `Q_T(obs, .)` over the six primitives.
    pub teacher_q: Vec<f64>,
    /// Index of the teacher that produced it.
    pub teacher: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Softmax temperature applied to teacher outputs.
    pub tau: f64,
    /// Iterations spent on one teacher before cycling to the next.
    pub switch_interval: usize,
    /// Total iterations each teacher receives across all its phases.
    pub steps_per_teacher: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Training samples collected per teacher.
    pub dataset_size: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            tau: 0.1,
            switch_interval: 500,
            steps_per_teacher: 4000,
            batch_size: 32,
            lr: 0.0025,
            dataset_size: 20_000,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::ConfigValidation(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.lr <= 0.0 {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        for (name, v) in [
            ("switch_interval", self.switch_interval),
            ("steps_per_teacher", self.steps_per_teacher),
            ("batch_size", self.batch_size),
            ("dataset_size", self.dataset_size),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.batch_size > self.dataset_size {
            return fail("batch_size cannot exceed dataset_size".into());
        }
        Ok(())
    }
}

/// Rolls the teacher out on its own domain with [`TEACHER_ROLLOUT_EPS`]
/// exploration and records exactly `n` `(obs, Q_T(obs))` pairs, spanning
/// episode boundaries as needed. Samples carry teacher index 0; a
/// multi-teacher caller re-tags them. Deterministic in `seed`.
pub fn collect_dataset(
    teacher: &QNetwork,
    spec: &DomainSpec,
    n: usize,
    seed: u64,
) -> Vec<DistillSample> {
    assert!(n >= 1, "need at least one sample");
    assert_eq!(teacher.input_dim(), OBS_LEN, "teacher input must be an observation");
    assert_eq!(
        teacher.output_dim(),
        Action::COUNT,
        "teacher must emit primitive-action values"
    );
    let mut env_rng = stream(seed, streams::ENV);
    let mut act_rng = stream(seed, streams::ACT);
    let mut env = GridEnv::new(spec.clone());
    let mut obs = env.reset(&mut env_rng);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if env.is_terminal() {
            obs = env.reset(&mut env_rng);
        }
        let q = teacher.forward(&obs.to_vector());
        let choice = select_action(&q, TEACHER_ROLLOUT_EPS, &mut act_rng);
        out.push(DistillSample {
            obs,
            teacher_q: q,
            teacher: 0,
        });
        obs = env.step(Action::from_index(choice)).observation;
    }
    out
}

/// Forward, loss, and analytic gradients of the distillation objective on
/// one batch routed through one head. The loss is the mean over the batch
/// of the squared distance between the tempered-softmax teacher row and
/// the raw student output.
fn batch_pass(
    trunk: &QNetwork,
    head: &QNetwork,
    batch: &[&DistillSample],
    tau: f64,
) -> (f64, Gradients, Gradients) {
    assert!(!batch.is_empty(), "empty distillation batch");
    let n = batch.len();
    let in_dim = trunk.input_dim();
    let mut data = Vec::with_capacity(n * in_dim);
    for s in batch {
        data.extend_from_slice(&s.obs.to_vector());
    }
    let tcache = trunk.forward_cached(Mat {
        rows: n,
        cols: in_dim,
        data,
    });
    let hcache = head.forward_cached(tcache.output().clone());
    let out = hcache.output();
    let mut loss = 0.0;
    let mut d_out = Mat::zeros(n, head.output_dim());
    for (b, s) in batch.iter().enumerate() {
        let (l, g) = distill_loss_and_grad(out.row(b), &s.teacher_q, tau);
        loss += l;
        for (dst, src) in d_out.row_mut(b).iter_mut().zip(&g) {
            *dst = src / n as f64;
        }
    }
    loss /= n as f64;
    let (head_grads, d_feat) = head.backward(&hcache, d_out, true);
    let (trunk_grads, _) = trunk.backward(&tcache, d_feat.expect("input gradient requested"), false);
    (loss, trunk_grads, head_grads)
}

/// Distillation loss of a batch through head `head`, without updating.
pub fn distill_batch_loss(
    student: &DistilledNetwork,
    head: usize,
    batch: &[DistillSample],
    tau: f64,
) -> f64 {
    let refs: Vec<&DistillSample> = batch.iter().collect();
    batch_pass(student.trunk(), student.head(head), &refs, tau).0
}

/// Loss plus the analytic gradient flattened over the trunk's then the
/// head's parameters, matching [`DistilledNetwork::flat_params_for`].
/// Intended for gradient verification against finite differences.
pub fn distill_batch_loss_and_flat_grad(
    student: &DistilledNetwork,
    head: usize,
    batch: &[DistillSample],
    tau: f64,
) -> (f64, Vec<f64>) {
    let refs: Vec<&DistillSample> = batch.iter().collect();
    let (loss, trunk_grads, head_grads) = batch_pass(student.trunk(), student.head(head), &refs, tau);
    let mut flat = trunk_grads.flat();
    flat.extend(head_grads.flat());
    (loss, flat)
}

/// Runs `iterations` optimizer steps on one teacher's dataset, updating
/// only the trunk and that teacher's head. Returns the last pre-update
/// batch loss.
pub(crate) fn distill_steps(
    student: &mut DistilledNetwork,
    head: usize,
    dataset: &[DistillSample],
    iterations: usize,
    cfg: &DistillConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    assert!(head < student.head_count(), "head index out of range");
    assert!(!dataset.is_empty(), "empty distillation dataset");
    let mut last = 0.0;
    for it in 0..iterations {
        let batch: Vec<&DistillSample> = (0..cfg.batch_size)
            .map(|_| &dataset[rng.gen_range(0..dataset.len())])
            .collect();
        let (trunk, heads) = student.parts_mut();
        let (loss, trunk_grads, head_grads) = batch_pass(trunk, &heads[head].1, &batch, cfg.tau);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step: it as u64,
                loss,
            });
        }
        trunk.apply_gradients(&trunk_grads, cfg.lr)?;
        heads[head].1.apply_gradients(&head_grads, cfg.lr)?;
        last = loss;
    }
    Ok(last)
}

/// Distills N teachers into one shared-trunk, N-head student.
///
/// The trunk mirrors the teachers' hidden architecture; heads take the
/// teachers' domain names. Each teacher's dataset is collected up front
/// (teacher `i` with seed `seed + i`), then training cycles round-robin:
/// `switch_interval` iterations on one teacher's data (touching only the
/// trunk and that head) before moving to the next, until every teacher
/// has received `steps_per_teacher` iterations.
pub fn distill_multi(
    teachers: &[QNetwork],
    specs: &[DomainSpec],
    cfg: &DistillConfig,
    seed: u64,
) -> Result<DeepSkillModule> {
    cfg.validate()?;
    assert!(!teachers.is_empty(), "need at least one teacher");
    assert_eq!(teachers.len(), specs.len(), "one domain per teacher");
    let arch = teachers[0].layer_shapes();
    assert!(arch.len() >= 2, "teachers must have at least one hidden layer");
    for t in teachers {
        assert_eq!(t.input_dim(), OBS_LEN, "teacher input must be an observation");
        assert_eq!(
            t.output_dim(),
            Action::COUNT,
            "teacher must emit primitive-action values"
        );
        assert_eq!(t.layer_shapes(), arch, "teachers must share an architecture");
    }

    let mut dims = vec![OBS_LEN];
    dims.extend(arch[..arch.len() - 1].iter().map(|&(_, out, _)| out));
    let feature_dim = *dims.last().expect("nonempty");
    let mut init_rng = stream(seed, streams::INIT);
    let trunk = QNetwork::relu_stack(&dims, &mut init_rng);
    let heads = specs
        .iter()
        .map(|s| {
            (
                s.name.clone(),
                QNetwork::dense(feature_dim, &[], Action::COUNT, &mut init_rng),
            )
        })
        .collect();
    let mut student = DistilledNetwork::new(trunk, heads);

    let datasets: Vec<Vec<DistillSample>> = teachers
        .iter()
        .zip(specs)
        .enumerate()
        .map(|(i, (t, s))| {
            let mut d = collect_dataset(t, s, cfg.dataset_size, seed.wrapping_add(i as u64));
            for sample in &mut d {
                sample.teacher = i;
            }
            d
        })
        .collect();

    let mut train_rng = stream(seed, TRAIN_STREAM);
    let n = teachers.len();
    let mut remaining = vec![cfg.steps_per_teacher; n];
    let mut i = 0;
    while remaining.iter().any(|&r| r > 0) {
        let iters = remaining[i].min(cfg.switch_interval);
        if iters > 0 {
            distill_steps(&mut student, i, &datasets[i], iters, cfg, &mut train_rng)?;
            remaining[i] -= iters;
        }
        i = (i + 1) % n;
    }
    Ok(DeepSkillModule::Distilled(student))
}

/// Epsilon-greedy policy over one head of a skill module.
pub struct SkillModulePolicy<'a> {
    module: &'a DeepSkillModule,
    index: usize,
    eps: f64,
}

impl<'a> SkillModulePolicy<'a> {
    pub fn new(module: &'a DeepSkillModule, index: usize, eps: f64) -> Self {
        assert!(index < module.skill_count(), "skill index out of range");
        SkillModulePolicy { module, index, eps }
    }
}

impl Policy for SkillModulePolicy<'_> {
    fn act(&mut self, env: &GridEnv, rng: &mut ChaCha8Rng) -> Action {
        let q = self.module.q_values(self.index, &env.observation().to_vector());
        Action::from_index(select_action(&q, self.eps, rng))
    }
}

/// Evaluates each head on its own domain, in head order.
pub fn evaluate_distilled(
    module: &DeepSkillModule,
    specs: &[DomainSpec],
    episodes: u32,
    eval_epsilon: f64,
    seed: u64,
) -> Vec<EvaluationReport> {
    assert_eq!(specs.len(), module.skill_count(), "one domain per head");
    specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let mut rng = stream(seed, streams::EVAL_BASE + i as u64);
            let mut policy = SkillModulePolicy::new(module, i, eval_epsilon);
            evaluate(&mut policy, spec, episodes, &mut rng)
        })
        .collect()
}

/// Fraction of samples on which the module's greedy choice through `head`
/// matches the recorded teacher's greedy choice.
pub fn argmax_agreement(module: &DeepSkillModule, head: usize, samples: &[DistillSample]) -> f64 {
    assert!(!samples.is_empty(), "agreement over no samples");
    let hits = samples
        .iter()
        .filter(|s| argmax(&module.q_values(head, &s.obs.to_vector())) == argmax(&s.teacher_q))
        .count();
    hits as f64 / samples.len() as f64
}

//! The options layer: skills wrapping trained policies, the Deep Skill
//! Module with its two realizations, and closed-loop skill execution.
//!
//! A skill is available everywhere (its initiation set is all states) and
//! terminates deterministically: when its sub-goal holds, when it has run
//! for its maximum duration, or when the episode ends. Execution is
//! greedy on the wrapped network and cannot be interrupted from outside.

use std::path::{Path, PathBuf};

use crate::env::{Action, GridEnv, Observation, WorldState, OBS_LEN};
use crate::error::{Error, Result};
use crate::nn::{argmax, Metadata, QNetwork};

/// Default skill timeout: one single-task episode length.
pub const DEFAULT_SKILL_DURATION: u32 = 30;

/// Deterministic sub-goal predicates for skill termination.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubGoal {
    /// The agent stands on the given cell.
    ReachCell { row: usize, col: usize },
    /// The agent holds the item.
    Carrying,
    DoorBroken,
    Placed,
}

impl SubGoal {
    pub fn holds(&self, state: &WorldState) -> bool {
        match *self {
            SubGoal::ReachCell { row, col } => state.row == row && state.col == col,
            SubGoal::Carrying => state.carrying,
            SubGoal::DoorBroken => state.door_broken,
            SubGoal::Placed => state.placed,
        }
    }

    /// Parses a manifest tag: `exit@ROW,COL`, `carrying`, `door_broken`,
    /// or `placed`.
    pub fn parse(tag: &str) -> Option<SubGoal> {
        match tag {
            "carrying" => Some(SubGoal::Carrying),
            "door_broken" => Some(SubGoal::DoorBroken),
            "placed" => Some(SubGoal::Placed),
            _ => {
                let coords = tag.strip_prefix("exit@")?;
                let (r, c) = coords.split_once(',')?;
                Some(SubGoal::ReachCell {
                    row: r.trim().parse().ok()?,
                    col: c.trim().parse().ok()?,
                })
            }
        }
    }

    fn tag(&self) -> String {
        match *self {
            SubGoal::ReachCell { row, col } => format!("exit@{row},{col}"),
            SubGoal::Carrying => "carrying".into(),
            SubGoal::DoorBroken => "door_broken".into(),
            SubGoal::Placed => "placed".into(),
        }
    }
}

/// A reusable temporally extended action. `policy` indexes into the
/// [`DeepSkillModule`] that provides its behavior.
#[derive(Debug, Clone)]
pub struct Skill {
    pub name: String,
    pub subgoal: SubGoal,
    /// Forced-timeout duration K.
    pub max_duration: u32,
    pub policy: usize,
}

/// A shared trunk with one linear output head per skill.
#[derive(Debug, Clone)]
pub struct DistilledNetwork {
    trunk: QNetwork,
    heads: Vec<(String, QNetwork)>,
}

impl DistilledNetwork {
    pub fn new(trunk: QNetwork, heads: Vec<(String, QNetwork)>) -> Self {
        assert!(!heads.is_empty(), "distilled network needs at least one head");
        for (name, head) in &heads {
            assert_eq!(
                head.input_dim(),
                trunk.output_dim(),
                "head '{name}' does not fit the trunk"
            );
            assert_eq!(
                head.output_dim(),
                Action::COUNT,
                "head '{name}' must emit primitive-action values"
            );
        }
        DistilledNetwork { trunk, heads }
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_names(&self) -> Vec<&str> {
        self.heads.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn trunk(&self) -> &QNetwork {
        &self.trunk
    }

    pub fn head(&self, i: usize) -> &QNetwork {
        &self.heads[i].1
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut QNetwork, &mut Vec<(String, QNetwork)>) {
        (&mut self.trunk, &mut self.heads)
    }

    /// Trunk parameters followed by head `i`'s, one flat vector. The slice
    /// of the network that a batch through head `i` trains.
    pub fn flat_params_for(&self, i: usize) -> Vec<f64> {
        let mut flat = self.trunk.flat_params();
        flat.extend(self.heads[i].1.flat_params());
        flat
    }

    /// Inverse of [`DistilledNetwork::flat_params_for`].
    pub fn set_flat_params_for(&mut self, i: usize, flat: &[f64]) {
        let split = self.trunk.param_count();
        assert_eq!(
            flat.len(),
            split + self.heads[i].1.param_count(),
            "flat parameter length mismatch"
        );
        self.trunk.set_flat_params(&flat[..split]);
        self.heads[i].1.set_flat_params(&flat[split..]);
    }

    /// Q-values of head `i` on a decoded observation vector.
    pub fn forward_head(&self, i: usize, obs: &[f64]) -> Vec<f64> {
        self.heads[i].1.forward(&self.trunk.forward(obs))
    }

    pub fn save(&self, path: &Path, meta: &Metadata) -> Result<()> {
        crate::nn::save_distilled_checkpoint(&self.trunk, &self.heads, meta, path)
    }

    pub fn load(path: &Path) -> Result<(Self, Metadata)> {
        let (trunk, heads, meta) = crate::nn::load_distilled_checkpoint(path)?;
        Ok((DistilledNetwork::new(trunk, heads), meta))
    }
}

/// The policy store behind skills: either independent per-skill networks
/// or one distilled multi-head network.
#[derive(Debug, Clone)]
pub enum DeepSkillModule {
    Array(Vec<QNetwork>),
    Distilled(DistilledNetwork),
}

impl DeepSkillModule {
    pub fn array(nets: Vec<QNetwork>) -> Self {
        assert!(!nets.is_empty(), "skill array needs at least one network");
        for net in &nets {
            assert_eq!(net.input_dim(), OBS_LEN, "skill network input must be an observation");
            assert_eq!(
                net.output_dim(),
                Action::COUNT,
                "skill network must emit primitive-action values"
            );
        }
        DeepSkillModule::Array(nets)
    }

    pub fn skill_count(&self) -> usize {
        match self {
            DeepSkillModule::Array(nets) => nets.len(),
            DeepSkillModule::Distilled(d) => d.head_count(),
        }
    }

    /// Q-values of skill `i`'s policy on a decoded observation.
    pub fn q_values(&self, i: usize, obs_vec: &[f64]) -> Vec<f64> {
        match self {
            DeepSkillModule::Array(nets) => nets[i].forward(obs_vec),
            DeepSkillModule::Distilled(d) => d.forward_head(i, obs_vec),
        }
    }
}

/// Greedy primitive action of skill `i` on an observation. Pure; ties
/// break toward the lowest action index.
pub fn skill_act(module: &DeepSkillModule, i: usize, obs: &Observation) -> Action {
    assert!(i < module.skill_count(), "skill index {i} out of range");
    Action::from_index(argmax(&module.q_values(i, &obs.to_vector())))
}

/// Deterministic termination: sub-goal reached, timeout, or episode end.
pub fn beta_terminate(skill: &Skill, state: &WorldState, elapsed: u32, episode_over: bool) -> bool {
    episode_over || elapsed >= skill.max_duration || skill.subgoal.holds(state)
}

/// Everything observed while one skill ran.
#[derive(Debug, Clone)]
pub struct SkillExecutionRecord {
    pub skill_index: usize,
    pub start_state: WorldState,
    pub start_obs: Observation,
    pub end_state: WorldState,
    pub end_obs: Observation,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub duration: u32,
    /// Episode over when the skill returned control.
    pub terminal: bool,
    /// Domain task completed during the skill.
    pub success: bool,
    /// Discounted sum of `rewards`.
    pub rtilde: f64,
}

/// Runs skill `skill` greedily until it terminates, accumulating the
/// reward sequence and its discounted sum. Always executes at least one
/// step and at most `skill.max_duration`.
pub fn execute_skill(
    env: &mut GridEnv,
    skill: &Skill,
    module: &DeepSkillModule,
    gamma: f64,
) -> SkillExecutionRecord {
    assert!(!env.is_terminal(), "cannot start a skill on a finished episode");
    let start_state = *env.state();
    let start_obs = env.observation();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut success = false;
    loop {
        let action = skill_act(module, skill.policy, &env.observation());
        let res = env.step(action);
        actions.push(action);
        rewards.push(res.reward);
        success |= res.success;
        if beta_terminate(skill, env.state(), actions.len() as u32, env.is_terminal()) {
            break;
        }
    }
    let rtilde = discounted_sum(&rewards, gamma);
    SkillExecutionRecord {
        skill_index: skill.policy,
        start_state,
        start_obs,
        end_state: *env.state(),
        end_obs: env.observation(),
        duration: actions.len() as u32,
        actions,
        rewards,
        terminal: env.is_terminal(),
        success,
        rtilde,
    }
}

/// `sum_j gamma^j r_j` by Horner's scheme.
pub fn discounted_sum(rewards: &[f64], gamma: f64) -> f64 {
    assert!(!rewards.is_empty(), "discounted sum of an empty sequence");
    rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc)
}

/// Where a manifest entry's policy comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SkillSource {
    /// A single-network checkpoint file.
    Checkpoint(PathBuf),
    /// A head index into a distilled multi-skill checkpoint.
    Head(usize),
}

/// One parsed line of a skill manifest.
#[derive(Debug, Clone)]
pub struct SkillManifestEntry {
    pub name: String,
    pub source: SkillSource,
    pub subgoal: SubGoal,
    pub max_duration: u32,
}

/// Parses a skill manifest: one skill per line as
/// `NAME dsn:PATH|head:INDEX SUBGOAL K`, with `#` comments and blank
/// lines ignored. Sub-goal tags are those of [`SubGoal::parse`].
pub fn load_skill_manifest(path: &Path) -> Result<Vec<SkillManifestEntry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_skill_manifest(&text, &path.display().to_string())
}

pub fn parse_skill_manifest(text: &str, origin: &str) -> Result<Vec<SkillManifestEntry>> {
    let fail = |reason: String| Error::SkillManifest {
        path: origin.to_string(),
        reason,
    };
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(fail(format!(
                "line {lineno}: expected 'NAME SOURCE SUBGOAL K', got {} fields",
                fields.len()
            )));
        }
        let source = if let Some(p) = fields[1].strip_prefix("dsn:") {
            SkillSource::Checkpoint(PathBuf::from(p))
        } else if let Some(i) = fields[1].strip_prefix("head:") {
            SkillSource::Head(i.parse().map_err(|_| {
                fail(format!("line {lineno}: head index '{i}' is not a number"))
            })?)
        } else {
            return Err(fail(format!(
                "line {lineno}: source must be 'dsn:PATH' or 'head:INDEX'"
            )));
        };
        let subgoal = SubGoal::parse(fields[2]).ok_or_else(|| {
            fail(format!(
                "line {lineno}: unknown sub-goal '{}' (expected exit@R,C, carrying, door_broken, or placed)",
                fields[2]
            ))
        })?;
        let max_duration: u32 = fields[3]
            .parse()
            .map_err(|_| fail(format!("line {lineno}: K '{}' is not a number", fields[3])))?;
        if max_duration == 0 {
            return Err(fail(format!("line {lineno}: K must be at least 1")));
        }
        entries.push(SkillManifestEntry {
            name: fields[0].to_string(),
            source,
            subgoal,
            max_duration,
        });
    }
    if entries.is_empty() {
        return Err(fail("manifest lists no skills".into()));
    }
    Ok(entries)
}

/// Serializes entries back to the manifest format.
pub fn format_skill_manifest(entries: &[SkillManifestEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let source = match &e.source {
            SkillSource::Checkpoint(p) => format!("dsn:{}", p.display()),
            SkillSource::Head(i) => format!("head:{i}"),
        };
        out.push_str(&format!(
            "{} {} {} {}\n",
            e.name,
            source,
            e.subgoal.tag(),
            e.max_duration
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_domain, Heading};
    use crate::nn::{Activation, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(outputs: &[f64]) -> QNetwork {
        QNetwork::from_layer_specs(vec![LayerSpec {
            weights: vec![vec![0.0; OBS_LEN]; outputs.len()],
            bias: outputs.to_vec(),
            activation: Activation::Identity,
        }])
    }

    /// Always walks forward.
    fn forward_net() -> QNetwork {
        constant_net(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    }

    /// Always turns left: never reaches anything.
    fn spinner_net() -> QNetwork {
        constant_net(&[0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    }

    fn nav_skill(k: u32) -> Skill {
        Skill {
            name: "nav1".into(),
            subgoal: SubGoal::ReachCell { row: 4, col: 9 },
            max_duration: k,
            policy: 0,
        }
    }

    #[test]
    fn discounted_sum_oracles() {
        assert_eq!(discounted_sum(&[0.7], 0.3), 0.7);
        assert_eq!(discounted_sum(&[0.0, 0.0, 0.0], 0.99), 0.0);
        // -0.04 + 0.99 * -0.04 + 0.99^2 * 1.0
        let r = discounted_sum(&[-0.04, -0.04, 1.0], 0.99);
        assert!((r - 0.9005).abs() < 1e-9, "got {r}");
        // Horner agrees with the naive power sum.
        let rewards = [0.3, -0.2, 0.8, -0.04, 0.5];
        let naive: f64 = rewards
            .iter()
            .enumerate()
            .map(|(j, &x)| 0.97f64.powi(j as i32) * x)
            .sum();
        assert!((discounted_sum(&rewards, 0.97) - naive).abs() < 1e-12);
    }

    #[test]
    fn skill_act_matches_single_network_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = QNetwork::dense(OBS_LEN, &[16], Action::COUNT, &mut rng);
        let module = DeepSkillModule::array(vec![net.clone()]);
        let mut env = GridEnv::new(make_domain("nav1").unwrap());
        for seed in 0..5 {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let obs = env.reset(&mut r);
            let expected = Action::from_index(argmax(&net.forward(&obs.to_vector())));
            assert_eq!(skill_act(&module, 0, &obs), expected);
        }
    }

    #[test]
    fn distilled_decomposition_of_a_teacher_acts_identically() {
        // Split a trained-shape teacher into trunk + head: same network,
        // expressed as a distilled module. Outputs must match exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let teacher = QNetwork::dense(OBS_LEN, &[24, 24], Action::COUNT, &mut rng);
        let mut specs = teacher.to_layer_specs();
        let head_spec = specs.pop().unwrap();
        let trunk = QNetwork::from_layer_specs(specs);
        let head = QNetwork::from_layer_specs(vec![head_spec]);
        let distilled = DistilledNetwork::new(trunk, vec![("teacher".into(), head)]);
        let module = DeepSkillModule::Distilled(distilled);

        let mut env = GridEnv::new(make_domain("nav2").unwrap());
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let obs = env.reset(&mut r);
            let v = obs.to_vector();
            let direct = teacher.forward(&v);
            let via_module = module.q_values(0, &v);
            assert_eq!(direct, via_module);
            assert_eq!(
                skill_act(&module, 0, &obs),
                Action::from_index(argmax(&direct))
            );
        }
    }

    #[test]
    fn beta_rules() {
        let skill = nav_skill(5);
        let spec = make_domain("nav1").unwrap();
        let off_goal = crate::env::initial_state(&spec, (2, 2), Heading::North);
        assert!(!beta_terminate(&skill, &off_goal, 3, false));
        assert!(beta_terminate(&skill, &off_goal, 5, false), "timeout");
        assert!(beta_terminate(&skill, &off_goal, 0, true), "episode end");
        let mut on_goal = off_goal;
        (on_goal.row, on_goal.col) = (4, 9);
        assert!(beta_terminate(&skill, &on_goal, 1, false), "sub-goal");
    }

    #[test]
    fn skill_reaching_the_exit_terminates_with_known_return() {
        let module = DeepSkillModule::array(vec![forward_net()]);
        let mut env = GridEnv::new(make_domain("nav1").unwrap());
        env.reset_to((4, 6), Heading::East);
        let rec = execute_skill(&mut env, &nav_skill(30), &module, 0.99);
        assert_eq!(rec.duration, 3);
        assert_eq!(rec.rewards, vec![-0.04, -0.04, 1.0]);
        assert!(rec.terminal && rec.success);
        assert!((rec.rtilde - 0.9005).abs() < 1e-9);
        assert_eq!(rec.rtilde, discounted_sum(&rec.rewards, 0.99));
        assert_eq!((rec.end_state.row, rec.end_state.col), (4, 9));
    }

    #[test]
    fn skill_times_out_at_max_duration() {
        let module = DeepSkillModule::array(vec![spinner_net()]);
        let mut env = GridEnv::new(make_domain("nav1").unwrap());
        env.reset_to((2, 2), Heading::North);
        let rec = execute_skill(&mut env, &nav_skill(7), &module, 0.99);
        assert_eq!(rec.duration, 7);
        assert!(!rec.terminal && !rec.success);
    }

    #[test]
    fn skill_is_cut_by_the_episode_limit() {
        let module = DeepSkillModule::array(vec![spinner_net()]);
        let mut env = GridEnv::new(make_domain("nav1").unwrap());
        env.reset_to((2, 2), Heading::North);
        for _ in 0..28 {
            env.step(Action::TurnRight);
        }
        let rec = execute_skill(&mut env, &nav_skill(10), &module, 0.99);
        assert_eq!(rec.duration, 2, "episode limit 30 cuts the skill short");
        assert!(rec.terminal && !rec.success);
    }

    #[test]
    fn subgoal_holding_at_entry_still_runs_one_step() {
        // In the placement domain the agent spawns carrying, so a
        // carrying sub-goal holds immediately: the skill must still take
        // exactly one step.
        let module = DeepSkillModule::array(vec![spinner_net()]);
        let mut env = GridEnv::new(make_domain("placement").unwrap());
        env.reset_to((2, 2), Heading::North);
        let skill = Skill {
            name: "carry".into(),
            subgoal: SubGoal::Carrying,
            max_duration: 30,
            policy: 0,
        };
        let rec = execute_skill(&mut env, &skill, &module, 0.99);
        assert_eq!(rec.duration, 1);
    }

    #[test]
    fn execution_replays_exactly_from_the_recorded_actions() {
        let module = DeepSkillModule::array(vec![forward_net()]);
        let mut env = GridEnv::new(make_domain("two_room").unwrap());
        env.reset_to((6, 3), Heading::East);
        let mut shadow = env.clone();
        let skill = Skill {
            name: "nav".into(),
            subgoal: SubGoal::ReachCell { row: 6, col: 9 },
            max_duration: 30,
            policy: 0,
        };
        let rec = execute_skill(&mut env, &skill, &module, 0.99);
        let mut replayed_rewards = Vec::new();
        for &a in &rec.actions {
            replayed_rewards.push(shadow.step(a).reward);
        }
        assert_eq!(shadow.state(), env.state());
        assert_eq!(rec.rewards, replayed_rewards);
        assert_eq!(shadow.observation(), rec.end_obs);
    }

    #[test]
    fn array_and_distilled_modules_are_interchangeable() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let teacher = QNetwork::dense(OBS_LEN, &[16, 16], Action::COUNT, &mut rng);
        let mut specs = teacher.to_layer_specs();
        let head = QNetwork::from_layer_specs(vec![specs.pop().unwrap()]);
        let trunk = QNetwork::from_layer_specs(specs);
        let as_array = DeepSkillModule::array(vec![teacher]);
        let as_distilled =
            DeepSkillModule::Distilled(DistilledNetwork::new(trunk, vec![("t".into(), head)]));

        let skill = nav_skill(30);
        let run = |module: &DeepSkillModule| {
            let mut env = GridEnv::new(make_domain("nav1").unwrap());
            env.reset_to((7, 2), Heading::North);
            let rec = execute_skill(&mut env, &skill, module, 0.99);
            (rec.actions, rec.rewards, rec.duration, *env.state())
        };
        assert_eq!(run(&as_array), run(&as_distilled));
    }

    #[test]
    fn distilled_checkpoint_roundtrip_through_the_module() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skills.skfc");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trunk = QNetwork::relu_stack(&[OBS_LEN, 12], &mut rng);
        let heads = vec![
            ("a".to_string(), QNetwork::dense(12, &[], Action::COUNT, &mut rng)),
            ("b".to_string(), QNetwork::dense(12, &[], Action::COUNT, &mut rng)),
        ];
        let net = DistilledNetwork::new(trunk, heads);
        net.save(&path, &Metadata::new()).unwrap();
        let (loaded, _) = DistilledNetwork::load(&path).unwrap();
        assert_eq!(loaded.head_names(), vec!["a", "b"]);
        let mut env = GridEnv::new(make_domain("nav1").unwrap());
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let obs = env.reset(&mut r).to_vector();
        assert_eq!(net.forward_head(1, &obs), loaded.forward_head(1, &obs));
    }

    #[test]
    fn manifest_parses_and_rejects() {
        let text = "\
# two-room skills
nav1 dsn:out/nav1.skfc exit@6,9 30

pickup head:1 carrying 25
";
        let entries = parse_skill_manifest(text, "<test>").unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].name, "nav1");
        assert_eq!(
            entries[0].source,
            SkillSource::Checkpoint(PathBuf::from("out/nav1.skfc"))
        );
        assert_eq!(entries[0].subgoal, SubGoal::ReachCell { row: 6, col: 9 });
        assert_eq!(entries[1].source, SkillSource::Head(1));
        assert_eq!(entries[1].max_duration, 25);

        // Round-trip through the formatter.
        let reparsed = parse_skill_manifest(&format_skill_manifest(&entries), "<rt>").unwrap();
        assert_eq!(reparsed.len(), 2);
        assert_eq!(reparsed[1].subgoal, SubGoal::Carrying);

        let reason = |t: &str| match parse_skill_manifest(t, "<test>") {
            Err(Error::SkillManifest { reason, .. }) => reason,
            other => panic!("expected manifest error, got {other:?}"),
        };
        assert!(reason("nav1 dsn:x exit@6,9\n").contains("got 3 fields"));
        assert!(reason("nav1 file.skfc exit@6,9 30\n").contains("dsn:PATH"));
        assert!(reason("nav1 dsn:x fly 30\n").contains("unknown sub-goal"));
        assert!(reason("nav1 dsn:x exit@6,9 0\n").contains("at least 1"));
        assert!(reason("nav1 head:x carrying 30\n").contains("not a number"));
        assert!(reason("# nothing\n").contains("no skills"));
        assert!(matches!(
            load_skill_manifest(Path::new("/nonexistent/skills.txt")),
            Err(Error::MissingFile(_))
        ));
    }

    #[test]
    #[should_panic(expected = "primitive-action")]
    fn wrong_head_width_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trunk = QNetwork::relu_stack(&[OBS_LEN, 8], &mut rng);
        let bad_head = QNetwork::dense(8, &[], 4, &mut rng);
        DistilledNetwork::new(trunk, vec![("x".into(), bad_head)]);
    }
}

//! Batch experiments: specs, runs, regret aggregation and CSV artifacts.
//!
//! A run is one (algorithm, setting, seed, replication) tuple. In simulation a
//! setting is one action count and the agent serves every user of every group
//! with a single global contextual bandit; in replay a setting is one dataset
//! and every stream is a user.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{LinearAgent, LinearExploration, MeanUpdate, UcbAgent};
use crate::combine::{run_round, Agent, CbKind, CombineAgent, Params, TransitionSnapshot, VariantConfig};
use crate::env::{EnvConfig, Partition, RewardModel, SimUser};
use crate::rng::derived;
use crate::stream::{bandit_replay, ingest, smooth_stream, ColumnSchema, CorruptionMode, Dataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    UcbBanditNs,
    UcbBanditS,
    LinUcb,
    LinTs,
    LinUcbUcbBanditNs,
    LinTsUcbBanditNs,
    CombineUcb,
    CombineUcbCommon,
    CombineSoftmax,
    CombineSoftmaxCommon,
}

impl Algorithm {
    pub const ALL: [Algorithm; 10] = [
        Algorithm::UcbBanditNs,
        Algorithm::UcbBanditS,
        Algorithm::LinUcb,
        Algorithm::LinTs,
        Algorithm::LinUcbUcbBanditNs,
        Algorithm::LinTsUcbBanditNs,
        Algorithm::CombineUcb,
        Algorithm::CombineUcbCommon,
        Algorithm::CombineSoftmax,
        Algorithm::CombineSoftmaxCommon,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::UcbBanditNs => "UCBBanditNS",
            Algorithm::UcbBanditS => "UCBBanditS",
            Algorithm::LinUcb => "LinUCB",
            Algorithm::LinTs => "LinTS",
            Algorithm::LinUcbUcbBanditNs => "LinUCB+UCBBanditNS",
            Algorithm::LinTsUcbBanditNs => "LinTS+UCBBanditNS",
            Algorithm::CombineUcb => "COMBINE-UCB",
            Algorithm::CombineUcbCommon => "COMBINE-UCB common",
            Algorithm::CombineSoftmax => "COMBINE-softmax",
            Algorithm::CombineSoftmaxCommon => "COMBINE-softmax common",
        }
    }

    /// Variant configuration for the referee-based algorithms.
    pub fn variant(self, params: Params) -> Option<VariantConfig> {
        let cfg = match self {
            Algorithm::LinUcbUcbBanditNs => VariantConfig::pair_without_reach(CbKind::LinUcb),
            Algorithm::LinTsUcbBanditNs => VariantConfig::pair_without_reach(CbKind::LinTs),
            Algorithm::CombineUcb => VariantConfig::combine_ucb(),
            Algorithm::CombineUcbCommon => VariantConfig::combine_ucb_common(),
            Algorithm::CombineSoftmax => VariantConfig::combine_softmax(),
            Algorithm::CombineSoftmaxCommon => VariantConfig::combine_softmax_common(),
            _ => return None,
        };
        Some(cfg.with_params(params))
    }

    pub fn build(self, params: Params, num_users: usize, num_actions: usize, dimension: usize) -> Result<Box<dyn Agent>> {
        params.validate()?;
        Ok(match self {
            Algorithm::UcbBanditNs => Box::new(UcbAgent::new(
                num_users,
                num_actions,
                params.alpha_b,
                MeanUpdate::Discounted { gamma: params.gamma },
            )),
            Algorithm::UcbBanditS => Box::new(UcbAgent::new(num_users, num_actions, params.alpha_b, MeanUpdate::SampleAverage)),
            Algorithm::LinUcb => Box::new(LinearAgent::new(
                num_users,
                num_actions,
                dimension,
                LinearExploration::Ucb { alpha: params.alpha },
            )),
            Algorithm::LinTs => Box::new(LinearAgent::new(
                num_users,
                num_actions,
                dimension,
                LinearExploration::Thompson { v: params.v },
            )),
            other => {
                let cfg = other.variant(params).expect("referee-based algorithm");
                Box::new(CombineAgent::new(cfg, num_users, num_actions, dimension)?)
            }
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown algorithm '{s}' (known: {})", known.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSpec {
    pub name: String,
    pub users: usize,
    pub step_size: f64,
    pub corruption_prob: f64,
    #[serde(default = "half")]
    pub walk_up_prob: f64,
    #[serde(default)]
    pub reward_model: RewardModel,
}

fn half() -> f64 {
    0.5
}

impl GroupSpec {
    /// Fast-moving state, clean contexts.
    pub fn group_a(users: usize) -> Self {
        Self {
            name: "A".into(),
            users,
            step_size: 0.2,
            corruption_prob: 0.0,
            walk_up_prob: 0.5,
            reward_model: RewardModel::Deterministic,
        }
    }

    /// Slow state, contexts replaced by noise.
    pub fn group_b(users: usize) -> Self {
        Self {
            name: "B".into(),
            users,
            step_size: 0.01,
            corruption_prob: 1.0,
            walk_up_prob: 0.5,
            reward_model: RewardModel::Deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub num_actions: Vec<usize>,
    pub groups: Vec<GroupSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSpec {
    pub window: usize,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    /// Dataset label used in outputs.
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub schema: ColumnSchema,
    pub corruption: CorruptionMode,
    /// Start offsets are drawn uniformly from `[0, max_offset)`.
    #[serde(default = "default_max_offset")]
    pub max_offset: usize,
    #[serde(default)]
    pub smoothing: Option<SmoothingSpec>,
}

fn default_max_offset() -> usize {
    3000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Simulation(SimulationSpec),
    StreamReplay(StreamSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// A parameter name, `corruption` or `instability`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub referee_trace: bool,
    /// Per-user transition matrices at the end of each run.
    pub transition_dumps: bool,
    /// One row per user per step.
    pub steps: bool,
    /// Keep every `curve_stride`-th step in curve files (the last step is always kept).
    pub curve_stride: usize,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            referee_trace: true,
            transition_dumps: false,
            steps: false,
            curve_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "one")]
    pub replications: usize,
    pub algorithms: Vec<String>,
    #[serde(default)]
    pub params: Params,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub sweep: Option<SweepSpec>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn one() -> usize {
    1
}

impl ExperimentSpec {
    /// Spec mirroring the grouped simulation study.
    pub fn simulation(num_actions: Vec<usize>, users_per_group: usize, horizon: usize, seeds: Vec<u64>) -> Self {
        Self {
            horizon,
            seeds,
            replications: 1,
            algorithms: Algorithm::ALL.iter().map(|a| a.name().to_string()).collect(),
            params: Params::default(),
            environment: EnvironmentSpec::Simulation(SimulationSpec {
                num_actions,
                groups: vec![GroupSpec::group_a(users_per_group), GroupSpec::group_b(users_per_group)],
            }),
            sweep: None,
            output: OutputSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a spec; relative data paths resolve against the spec's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_toml(&text)?;
        if let EnvironmentSpec::StreamReplay(s) = &mut spec.environment {
            if s.path.is_relative() {
                if let Some(dir) = path.parent() {
                    s.path = dir.join(&s.path);
                }
            }
        }
        Ok(spec)
    }

    pub fn algorithms(&self) -> Result<Vec<Algorithm>> {
        self.algorithms.iter().map(|a| a.parse()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms listed".into()));
        }
        self.algorithms()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds listed".into()));
        }
        if self.horizon == 0 || self.replications == 0 {
            return Err(Error::Config("horizon and replications must be positive".into()));
        }
        if self.output.curve_stride == 0 {
            return Err(Error::Config("curve_stride must be positive".into()));
        }
        self.params.validate()?;
        match &self.environment {
            EnvironmentSpec::Simulation(sim) => {
                if sim.num_actions.is_empty() || sim.num_actions.contains(&0) {
                    return Err(Error::Config("num_actions must list positive action counts".into()));
                }
                if sim.groups.is_empty() {
                    return Err(Error::Config("no user groups".into()));
                }
                for g in &sim.groups {
                    group_env(g, 1, self.horizon)?.validate()?;
                }
            }
            EnvironmentSpec::StreamReplay(s) => s.corruption.validate()?,
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep grid is empty".into()));
            }
            for &v in &sweep.values {
                self.with_sweep_value(&sweep.parameter, v)?;
            }
        }
        Ok(())
    }

    /// Copy of the spec with one swept value applied.
    pub fn with_sweep_value(&self, parameter: &str, value: f64) -> Result<Self> {
        let mut spec = self.clone();
        spec.sweep = None;
        match (parameter, &mut spec.environment) {
            ("corruption", EnvironmentSpec::Simulation(sim)) => {
                sim.groups.iter_mut().for_each(|g| g.corruption_prob = value)
            }
            ("corruption", EnvironmentSpec::StreamReplay(s)) => s.corruption.prob = value,
            ("instability", EnvironmentSpec::Simulation(sim)) => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Config(format!("instability {value} outside [0, 1]")));
                }
                sim.groups.iter_mut().for_each(|g| g.step_size = 0.5 * value)
            }
            ("instability", EnvironmentSpec::StreamReplay(_)) => {
                return Err(Error::Config("instability applies to simulations only".into()))
            }
            (name, _) => spec.params.set(name, value)?,
        }
        spec.params.validate()?;
        Ok(spec)
    }
}

fn group_env(group: &GroupSpec, num_actions: usize, horizon: usize) -> Result<EnvConfig> {
    let cfg = EnvConfig {
        step_size: group.step_size,
        corruption_prob: group.corruption_prob,
        walk_up_prob: group.walk_up_prob,
        horizon,
        partition: Partition::uniform(num_actions),
        reward_model: group.reward_model,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Cumulative sum of `oracle - agent`.
pub fn dynamic_regret(agent_rewards: &[f64], oracle_rewards: &[f64]) -> Result<Vec<f64>> {
    if agent_rewards.len() != oracle_rewards.len() {
        return Err(Error::DimensionMismatch {
            expected: oracle_rewards.len(),
            got: agent_rewards.len(),
        });
    }
    let mut total = 0.0;
    Ok(agent_rewards
        .iter()
        .zip(oracle_rewards)
        .map(|(a, o)| {
            total += o - a;
            total
        })
        .collect())
}

/// Per-group curves of one run, averaged over the group's users.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupCurve {
    pub group: String,
    pub users: usize,
    pub cum_regret: Vec<f64>,
    pub pb_cb: Option<Vec<f64>>,
}

impl GroupCurve {
    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }
}

/// One user's step, with 1-based actions.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub user: String,
    pub t: usize,
    pub action: usize,
    pub optimal: usize,
    pub reward: f64,
    pub policy: Option<&'static str>,
    pub pb_cb: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub run_id: usize,
    pub algorithm: Algorithm,
    /// `K=<n>` in simulation, the dataset name in replay.
    pub setting: String,
    pub seed: u64,
    pub replication: usize,
    pub curves: Vec<GroupCurve>,
    /// Final cumulative regret of each user with its group.
    pub user_regret: Vec<(String, f64)>,
    pub steps: Option<Vec<StepRow>>,
    pub transitions: Option<Vec<TransitionSnapshot>>,
}

impl RunTrace {
    /// Mean final regret over every user of the run.
    pub fn total_regret(&self) -> f64 {
        mean(&self.user_regret.iter().map(|(_, r)| *r).collect::<Vec<_>>())
    }

    pub fn group_regret(&self, group: &str) -> Option<f64> {
        self.curves.iter().find(|c| c.group == group).map(GroupCurve::final_regret)
    }
}

#[derive(Debug, Clone)]
struct Job {
    run_id: usize,
    algorithm: Algorithm,
    setting: usize,
    seed: u64,
    replication: usize,
}

enum Prepared {
    Simulation(SimulationSpec),
    Streams(Dataset, StreamSpec),
}

/// Runs every (algorithm, setting, seed, replication) tuple on `workers`
/// threads (0 = all cores). Results come back in a fixed order.
pub fn run_experiment(spec: &ExperimentSpec, workers: usize) -> Result<Vec<RunTrace>> {
    spec.validate()?;
    let algorithms = spec.algorithms()?;
    let prepared = match &spec.environment {
        EnvironmentSpec::Simulation(sim) => Prepared::Simulation(sim.clone()),
        EnvironmentSpec::StreamReplay(s) => {
            let mut data = ingest(&s.path, &s.schema)?;
            if let Some(sm) = s.smoothing {
                data.streams = data
                    .streams
                    .iter()
                    .map(|st| smooth_stream(st, sm.window, sm.order, data.num_labels))
                    .collect::<Result<_>>()?;
            }
            for st in &data.streams {
                if st.len() < spec.horizon {
                    return Err(Error::StreamExhausted {
                        stream: st.stream_id.clone(),
                        needed: spec.horizon,
                        available: st.len(),
                    });
                }
            }
            Prepared::Streams(data, s.clone())
        }
    };
    let settings = match &prepared {
        Prepared::Simulation(sim) => sim.num_actions.len(),
        Prepared::Streams(..) => 1,
    };
    let mut jobs = Vec::new();
    for &algorithm in &algorithms {
        for setting in 0..settings {
            for &seed in &spec.seeds {
                for replication in 0..spec.replications {
                    jobs.push(Job {
                        run_id: jobs.len(),
                        algorithm,
                        setting,
                        seed,
                        replication,
                    });
                }
            }
        }
    }
    log::info!("{} runs of horizon {}", jobs.len(), spec.horizon);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| {
        jobs.par_iter()
            .map(|job| match &prepared {
                Prepared::Simulation(sim) => run_simulation(spec, sim, job),
                Prepared::Streams(data, s) => run_replay(spec, data, s, job),
            })
            .collect()
    })
}

fn run_simulation(spec: &ExperimentSpec, sim: &SimulationSpec, job: &Job) -> Result<RunTrace> {
    let k = sim.num_actions[job.setting];
    let horizon = spec.horizon;
    let mut users = Vec::new();
    let mut user_group = Vec::new();
    let mut env_rngs = Vec::new();
    for (gi, group) in sim.groups.iter().enumerate() {
        let cfg = group_env(group, k, horizon)?;
        for _ in 0..group.users {
            let idx = users.len() as u64;
            let mut rng = derived(job.seed, &[job.replication as u64, job.setting as u64, 1, idx]);
            let s0 = rng.random::<f64>();
            users.push(SimUser::new(cfg.clone(), s0)?);
            user_group.push(gi);
            env_rngs.push(rng);
        }
    }
    let n = users.len();
    let mut agent = job.algorithm.build(spec.params, n, k, k)?;
    let mut agent_rng = derived(job.seed, &[job.replication as u64, job.setting as u64, 2]);
    let mut cum = vec![0.0; n];
    let mut curves: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); sim.groups.len()];
    let keep_pb = spec.output.referee_trace && job.algorithm.variant(spec.params).is_some();
    let mut pb: Vec<Vec<f64>> = vec![Vec::new(); if keep_pb { sim.groups.len() } else { 0 }];
    let mut steps = spec.output.steps.then(Vec::new);
    for t in 1..=horizon {
        let contexts: Vec<Vec<f64>> = users
            .iter()
            .zip(env_rngs.iter_mut())
            .map(|(u, r)| u.observe(r).context)
            .collect();
        let records = run_round(
            agent.as_mut(),
            &contexts,
            |u, a| users[u].reward(a, &mut env_rngs[u]),
            t as u64,
            &mut agent_rng,
        )?;
        let mut pb_sum = vec![0.0; pb.len()];
        for rec in &records {
            let user = &users[rec.user];
            cum[rec.user] += user.oracle_reward() - user.expected_reward(rec.action);
            if keep_pb {
                pb_sum[user_group[rec.user]] += rec.pb_cb.unwrap_or(f64::NAN);
            }
            if let Some(steps) = steps.as_mut() {
                steps.push(StepRow {
                    user: rec.user.to_string(),
                    t,
                    action: rec.action + 1,
                    optimal: user.best_action() + 1,
                    reward: rec.reward,
                    policy: rec.policy.map(|p| p.label()),
                    pb_cb: rec.pb_cb,
                });
            }
        }
        for (gi, curve) in curves.iter_mut().enumerate() {
            curve.push(group_mean(&cum, &user_group, gi));
        }
        for (gi, trace) in pb.iter_mut().enumerate() {
            trace.push(pb_sum[gi] / sim.groups[gi].users.max(1) as f64);
        }
        if t < horizon {
            for (u, r) in users.iter_mut().zip(env_rngs.iter_mut()) {
                u.advance(r)?;
            }
        }
    }
    let groups: Vec<(String, usize)> = sim.groups.iter().map(|g| (g.name.clone(), g.users)).collect();
    let transitions = spec
        .output
        .transition_dumps
        .then(|| (0..n).filter_map(|u| agent.transition_snapshot(u)).collect());
    Ok(RunTrace {
        run_id: job.run_id,
        algorithm: job.algorithm,
        setting: format!("K={k}"),
        seed: job.seed,
        replication: job.replication,
        curves: assemble_curves(&groups, curves, pb, keep_pb),
        user_regret: cum
            .iter()
            .zip(&user_group)
            .map(|(r, &g)| (sim.groups[g].name.clone(), *r))
            .collect(),
        steps,
        transitions,
    })
}

fn run_replay(spec: &ExperimentSpec, data: &Dataset, stream: &StreamSpec, job: &Job) -> Result<RunTrace> {
    let horizon = spec.horizon;
    let streams = &data.streams;
    let mut offset_rng = derived(job.seed, &[job.replication as u64, 4]);
    let offsets: Vec<usize> = streams
        .iter()
        .map(|s| {
            let room = (s.len() - horizon + 1).min(stream.max_offset.max(1));
            offset_rng.random_range(0..room)
        })
        .collect();
    let mut agent = job.algorithm.build(spec.params, streams.len(), data.num_labels, data.dimension())?;
    let records = bandit_replay(
        streams,
        &stream.corruption,
        agent.as_mut(),
        &offsets,
        horizon,
        &mut derived(job.seed, &[job.replication as u64, 3]),
        &mut derived(job.seed, &[job.replication as u64, 2]),
    )?;
    let n = streams.len();
    let mut cum = vec![0.0; n];
    let mut curve = Vec::with_capacity(horizon);
    let keep_pb = spec.output.referee_trace && job.algorithm.variant(spec.params).is_some();
    let mut pb = Vec::new();
    let mut steps = spec.output.steps.then(Vec::new);
    // Records arrive round by round, streams in index order.
    for round in records.chunks(n) {
        let mut pb_sum = 0.0;
        for rec in round {
            cum[rec.stream] += 1.0 - rec.reward;
            pb_sum += rec.pb_cb.unwrap_or(f64::NAN);
            if let Some(steps) = steps.as_mut() {
                steps.push(StepRow {
                    user: streams[rec.stream].stream_id.clone(),
                    t: rec.t,
                    action: rec.action + 1,
                    optimal: rec.label + 1,
                    reward: rec.reward,
                    policy: rec.policy.map(|p| p.label()),
                    pb_cb: rec.pb_cb,
                });
            }
        }
        curve.push(mean(&cum));
        if keep_pb {
            pb.push(pb_sum / n as f64);
        }
    }
    let transitions = spec
        .output
        .transition_dumps
        .then(|| (0..n).filter_map(|u| agent.transition_snapshot(u)).collect());
    Ok(RunTrace {
        run_id: job.run_id,
        algorithm: job.algorithm,
        setting: stream.name.clone(),
        seed: job.seed,
        replication: job.replication,
        curves: assemble_curves(&[(stream.name.clone(), n)], vec![curve], vec![pb], keep_pb),
        user_regret: cum.iter().map(|r| (stream.name.clone(), *r)).collect(),
        steps,
        transitions,
    })
}

fn assemble_curves(groups: &[(String, usize)], curves: Vec<Vec<f64>>, pb: Vec<Vec<f64>>, keep_pb: bool) -> Vec<GroupCurve> {
    let mut pb = pb.into_iter();
    groups
        .iter()
        .zip(curves)
        .map(|((name, users), cum_regret)| GroupCurve {
            group: name.clone(),
            users: *users,
            cum_regret,
            pb_cb: if keep_pb { pb.next() } else { None },
        })
        .collect()
}

fn group_mean(values: &[f64], groups: &[usize], group: usize) -> f64 {
    let members: Vec<f64> = values
        .iter()
        .zip(groups)
        .filter(|(_, &g)| g == group)
        .map(|(v, _)| *v)
        .collect();
    mean(&members)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Group label of the all-user column.
pub const TOTAL: &str = "total";

fn algorithm_order(traces: &[RunTrace]) -> Vec<Algorithm> {
    let mut out: Vec<Algorithm> = Vec::new();
    for t in traces {
        if !out.contains(&t.algorithm) {
            out.push(t.algorithm);
        }
    }
    out
}

fn group_order(traces: &[RunTrace]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for c in traces.iter().flat_map(|t| &t.curves) {
        if !out.contains(&c.group) {
            out.push(c.group.clone());
        }
    }
    out
}

/// Mean and std of final per-group regret over every run of an algorithm.
pub fn summarize(traces: &[RunTrace]) -> Vec<SummaryRow> {
    let groups = group_order(traces);
    let mut rows = Vec::new();
    for alg in algorithm_order(traces) {
        for g in &groups {
            let values: Vec<f64> = traces
                .iter()
                .filter(|t| t.algorithm == alg)
                .filter_map(|t| t.group_regret(g))
                .collect();
            rows.push(SummaryRow {
                algorithm: alg.name().into(),
                group: g.clone(),
                mean: mean(&values),
                std: std_dev(&values),
                runs: values.len(),
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub algorithm: String,
    pub group: String,
    /// A setting label, `macro` (mean of per-setting means) or `micro` (mean over all runs).
    pub setting: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Per-setting, macro- and micro-averaged regret for every group and the total.
pub fn regret_table(traces: &[RunTrace]) -> Vec<TableRow> {
    let mut groups = group_order(traces);
    groups.push(TOTAL.into());
    let mut settings: Vec<String> = Vec::new();
    for t in traces {
        if !settings.contains(&t.setting) {
            settings.push(t.setting.clone());
        }
    }
    let value = |t: &RunTrace, g: &str| if g == TOTAL { Some(t.total_regret()) } else { t.group_regret(g) };
    let mut rows = Vec::new();
    for alg in algorithm_order(traces) {
        let runs: Vec<&RunTrace> = traces.iter().filter(|t| t.algorithm == alg).collect();
        for g in &groups {
            let mut setting_means = Vec::new();
            for s in &settings {
                let values: Vec<f64> = runs.iter().filter(|t| &t.setting == s).filter_map(|t| value(t, g)).collect();
                setting_means.push(mean(&values));
                rows.push(TableRow {
                    algorithm: alg.name().into(),
                    group: g.clone(),
                    setting: s.clone(),
                    mean: mean(&values),
                    std: std_dev(&values),
                    runs: values.len(),
                });
            }
            let all: Vec<f64> = runs.iter().filter_map(|t| value(t, g)).collect();
            rows.push(TableRow {
                algorithm: alg.name().into(),
                group: g.clone(),
                setting: "macro".into(),
                mean: mean(&setting_means),
                std: std_dev(&setting_means),
                runs: all.len(),
            });
            rows.push(TableRow {
                algorithm: alg.name().into(),
                group: g.clone(),
                setting: "micro".into(),
                mean: mean(&all),
                std: std_dev(&all),
                runs: all.len(),
            });
        }
    }
    rows
}

/// One row of `regret_curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub run_id: usize,
    pub algorithm: String,
    pub setting: String,
    pub group: String,
    pub seed: u64,
    pub replication: usize,
    pub t: usize,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefereeRow {
    pub run_id: usize,
    pub algorithm: String,
    pub setting: String,
    pub group: String,
    pub seed: u64,
    pub replication: usize,
    pub t: usize,
    pub pb_cb: f64,
}

fn kept(t: usize, len: usize, stride: usize) -> bool {
    t.is_multiple_of(stride) || t == len
}

pub fn curve_rows(traces: &[RunTrace], stride: usize) -> Vec<CurveRow> {
    let mut rows = Vec::new();
    for tr in traces {
        for c in &tr.curves {
            for (i, v) in c.cum_regret.iter().enumerate() {
                if kept(i + 1, c.cum_regret.len(), stride) {
                    rows.push(CurveRow {
                        run_id: tr.run_id,
                        algorithm: tr.algorithm.name().into(),
                        setting: tr.setting.clone(),
                        group: c.group.clone(),
                        seed: tr.seed,
                        replication: tr.replication,
                        t: i + 1,
                        cum_regret: *v,
                    });
                }
            }
        }
    }
    rows
}

pub fn referee_rows(traces: &[RunTrace], stride: usize) -> Vec<RefereeRow> {
    let mut rows = Vec::new();
    for tr in traces {
        for c in &tr.curves {
            let Some(pb) = &c.pb_cb else { continue };
            for (i, v) in pb.iter().enumerate() {
                if kept(i + 1, pb.len(), stride) {
                    rows.push(RefereeRow {
                        run_id: tr.run_id,
                        algorithm: tr.algorithm.name().into(),
                        setting: tr.setting.clone(),
                        group: c.group.clone(),
                        seed: tr.seed,
                        replication: tr.replication,
                        t: i + 1,
                        pb_cb: *v,
                    });
                }
            }
        }
    }
    rows
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    w.write_record(header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const CURVE_HEADER: [&str; 8] = ["run_id", "algorithm", "setting", "group", "seed", "replication", "t", "cum_regret"];
const REFEREE_HEADER: [&str; 8] = ["run_id", "algorithm", "setting", "group", "seed", "replication", "t", "pb_cb"];

/// Writes `regret_curves.csv`, `referee_trace.csv`, `summary.csv`,
/// `table.csv` and, when requested, per-step rows and transition dumps.
pub fn emit_outputs(traces: &[RunTrace], output: &OutputSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stride = output.curve_stride.max(1);
    let mut written = Vec::new();

    let path = out_dir.join("regret_curves.csv");
    write_rows(&path, &CURVE_HEADER, &curve_rows(traces, stride))?;
    written.push(path);

    if output.referee_trace {
        let path = out_dir.join("referee_trace.csv");
        write_rows(&path, &REFEREE_HEADER, &referee_rows(traces, stride))?;
        written.push(path);
    }

    let path = out_dir.join("summary.csv");
    let summary: Vec<(String, String, f64, f64, usize)> = summarize(traces)
        .into_iter()
        .map(|r| (r.algorithm, r.group, r.mean, r.std, r.runs))
        .collect();
    write_rows(&path, &["algorithm", "group", "mean", "std", "runs"], &summary)?;
    written.push(path);

    let path = out_dir.join("table.csv");
    let table: Vec<(String, String, String, f64, f64, usize)> = regret_table(traces)
        .into_iter()
        .map(|r| (r.algorithm, r.group, r.setting, r.mean, r.std, r.runs))
        .collect();
    write_rows(&path, &["algorithm", "group", "setting", "mean", "std", "runs"], &table)?;
    written.push(path);

    if output.steps {
        let path = out_dir.join("steps.csv");
        let mut rows = Vec::new();
        for tr in traces {
            for s in tr.steps.iter().flatten() {
                rows.push((
                    tr.run_id,
                    s.user.clone(),
                    s.t,
                    s.action,
                    s.optimal,
                    s.reward,
                    s.policy.unwrap_or(""),
                    s.pb_cb.map_or(String::new(), |p| p.to_string()),
                ));
            }
        }
        write_rows(
            &path,
            &["run_id", "stream_id", "t", "action", "label", "reward", "policy_chosen", "pb_cb"],
            &rows,
        )?;
        written.push(path);
    }

    if output.transition_dumps {
        for tr in traces {
            for (user, snap) in tr.transitions.iter().flatten().enumerate() {
                let path = out_dir.join(format!("adjacency_{}_{user}.csv", tr.run_id));
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                snap.adjacency.write_csv(file).map_err(|e| Error::io(&path, e))?;
                written.push(path);
                if let Some(pref) = &snap.preference {
                    let path = out_dir.join(format!("preference_{}_{user}.csv", tr.run_id));
                    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                    pref.write_csv(file).map_err(|e| Error::io(&path, e))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}

pub fn read_curve_rows(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

pub fn read_referee_rows(path: &Path) -> Result<Vec<RefereeRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| Error::csv(path, e))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: f64,
    pub algorithm: String,
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Runs the spec once per grid value of its sweep.
pub fn sweep(spec: &ExperimentSpec, workers: usize) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let grid = spec
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("spec has no [sweep] section".into()))?;
    let mut rows = Vec::new();
    for &value in &grid.values {
        let point = spec.with_sweep_value(&grid.parameter, value)?;
        let traces = run_experiment(&point, workers)?;
        let mut summary = summarize(&traces);
        // Total over all users, as in the table.
        let mut totals: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
        for t in &traces {
            totals.entry(t.algorithm).or_default().push(t.total_regret());
        }
        if group_order(&traces).len() > 1 {
            for alg in algorithm_order(&traces) {
                let v = &totals[&alg];
                summary.push(SummaryRow {
                    algorithm: alg.name().into(),
                    group: TOTAL.into(),
                    mean: mean(v),
                    std: std_dev(v),
                    runs: v.len(),
                });
            }
        }
        rows.extend(summary.into_iter().map(|r| SweepRow {
            parameter: grid.parameter.clone(),
            value,
            algorithm: r.algorithm,
            group: r.group,
            mean: r.mean,
            std: r.std,
            runs: r.runs,
        }));
    }
    Ok(rows)
}

pub fn write_sweep(rows: &[SweepRow], out_dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
    if rows.is_empty() {
        w.write_record(["parameter", "value", "algorithm", "group", "mean", "std", "runs"])
            .map_err(|e| Error::csv(&path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(algorithms: &[&str], k: Vec<usize>, horizon: usize, seeds: Vec<u64>) -> ExperimentSpec {
        let mut spec = ExperimentSpec::simulation(k, 3, horizon, seeds);
        spec.algorithms = algorithms.iter().map(|s| s.to_string()).collect();
        spec
    }

    #[test]
    fn dynamic_regret_examples() {
        assert_eq!(dynamic_regret(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap(), vec![0.0; 3]);
        assert_eq!(
            dynamic_regret(&[1.0, 0.0, 1.0, 0.0], &[1.0; 4]).unwrap(),
            vec![0.0, 1.0, 1.0, 2.0]
        );
        assert!(matches!(
            dynamic_regret(&[1.0], &[1.0, 1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("LinUCB2".parse::<Algorithm>().is_err());
    }

    #[test]
    fn single_action_has_no_regret() {
        let spec = small_spec(&["COMBINE-softmax"], vec![1], 50, vec![3]);
        let traces = run_experiment(&spec, 1).unwrap();
        assert_eq!(traces.len(), 1);
        assert_eq!(traces[0].total_regret(), 0.0);
    }

    #[test]
    fn runs_are_deterministic_across_worker_counts() {
        let spec = small_spec(&["LinTS", "COMBINE-UCB common"], vec![2, 4], 120, vec![1, 2]);
        let a = run_experiment(&spec, 1).unwrap();
        let b = run_experiment(&spec, 4).unwrap();
        assert_eq!(curve_rows(&a, 1), curve_rows(&b, 1));
        assert_eq!(referee_rows(&a, 1), referee_rows(&b, 1));
    }

    #[test]
    fn seed_isolation() {
        let base = small_spec(&["LinUCB"], vec![3], 100, vec![1, 2]);
        let mut changed = base.clone();
        changed.seeds = vec![1, 9];
        let a = run_experiment(&base, 2).unwrap();
        let b = run_experiment(&changed, 2).unwrap();
        assert_eq!(curve_rows(&a[..1], 1), curve_rows(&b[..1], 1));
        assert_ne!(curve_rows(&a[1..], 1), curve_rows(&b[1..], 1));
    }

    #[test]
    fn regret_counts_suboptimal_pulls() {
        let mut spec = small_spec(&["UCBBanditS", "COMBINE-softmax"], vec![4], 200, vec![5]);
        spec.output.steps = true;
        for tr in run_experiment(&spec, 1).unwrap() {
            let misses = tr.steps.as_ref().unwrap().iter().filter(|s| s.action != s.optimal).count();
            let total: f64 = tr.user_regret.iter().map(|(_, r)| r).sum();
            assert_eq!(total, misses as f64);
            let zero_reward = tr.steps.as_ref().unwrap().iter().filter(|s| s.reward == 0.0).count();
            assert_eq!(zero_reward, misses);
        }
    }

    #[test]
    fn cumulative_curves_are_monotone() {
        let spec = small_spec(&["LinUCB+UCBBanditNS"], vec![3], 150, vec![1]);
        for tr in run_experiment(&spec, 1).unwrap() {
            for c in &tr.curves {
                assert!(c.cum_regret.windows(2).all(|w| w[1] >= w[0]));
                assert_eq!(c.cum_regret.len(), 150);
                let pb = c.pb_cb.as_ref().unwrap();
                assert!(pb.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn summary_is_mean_of_final_regrets() {
        let spec = small_spec(&["UCBBanditNS", "LinUCB"], vec![2, 3], 80, vec![1, 2, 3]);
        let traces = run_experiment(&spec, 0).unwrap();
        let summary = summarize(&traces);
        assert_eq!(summary.len(), 2 * 2);
        for row in &summary {
            let finals: Vec<f64> = traces
                .iter()
                .filter(|t| t.algorithm.name() == row.algorithm)
                .map(|t| t.group_regret(&row.group).unwrap())
                .collect();
            let m = finals.iter().sum::<f64>() / finals.len() as f64;
            assert!((row.mean - m).abs() <= 1e-10);
            assert_eq!(row.runs, 6);
        }
        let table = regret_table(&traces);
        // (2 settings + macro + micro) x (2 groups + total) per algorithm.
        assert_eq!(table.len(), 2 * 4 * 3);
    }

    #[test]
    fn spec_errors_surface_before_running() {
        let mut spec = small_spec(&["LinUCB"], vec![3], 10, vec![1]);
        spec.seeds.clear();
        assert!(matches!(run_experiment(&spec, 1), Err(Error::Config(_))));
        let mut spec = small_spec(&["Nope"], vec![3], 10, vec![1]);
        assert!(run_experiment(&spec, 1).is_err());
        spec.algorithms.clear();
        assert!(spec.validate().is_err());
        let mut spec = small_spec(&["LinUCB"], vec![3], 10, vec![1]);
        spec.sweep = Some(SweepSpec {
            parameter: "gamma".into(),
            values: vec![],
        });
        assert!(spec.validate().is_err());
        spec.sweep = Some(SweepSpec {
            parameter: "bogus".into(),
            values: vec![1.0],
        });
        assert!(spec.validate().is_err());
    }

    #[test]
    fn sweep_of_one_point_matches_a_plain_run() {
        let mut spec = small_spec(&["COMBINE-UCB"], vec![3], 100, vec![4, 5]);
        spec.sweep = Some(SweepSpec {
            parameter: "alpha_b".into(),
            values: vec![1.0],
        });
        let rows = sweep(&spec, 2).unwrap();
        let mut plain = spec.clone();
        plain.sweep = None;
        let summary = summarize(&run_experiment(&plain, 2).unwrap());
        for s in &summary {
            let r = rows.iter().find(|r| r.group == s.group).unwrap();
            assert_eq!((r.mean, r.std), (s.mean, s.std));
        }
    }

    #[test]
    fn sweep_axes_modify_environment() {
        let spec = small_spec(&["LinUCB"], vec![3], 10, vec![1]);
        let swept = spec.with_sweep_value("instability", 0.4).unwrap();
        let EnvironmentSpec::Simulation(sim) = &swept.environment else { panic!() };
        assert!(sim.groups.iter().all(|g| (g.step_size - 0.2).abs() < 1e-15));
        let swept = spec.with_sweep_value("corruption", 0.25).unwrap();
        let EnvironmentSpec::Simulation(sim) = &swept.environment else { panic!() };
        assert!(sim.groups.iter().all(|g| g.corruption_prob == 0.25));
        assert_eq!(spec.with_sweep_value("alpha_s", 5.0).unwrap().params.alpha_s, 5.0);
        assert!(spec.with_sweep_value("instability", 2.0).is_err());
    }

    #[test]
    fn spec_parses_from_toml() {
        let text = r#"
            horizon = 100
            seeds = [1, 2]
            algorithms = ["LinUCB", "COMBINE-softmax common"]

            [params]
            alpha_s = 5.0

            [environment]
            kind = "simulation"
            num_actions = [2, 5]

            [[environment.groups]]
            name = "A"
            users = 4
            step_size = 0.2
            corruption_prob = 0.0

            [[environment.groups]]
            name = "B"
            users = 4
            step_size = 0.01
            corruption_prob = 1.0
            reward_model = { kind = "bernoulli", q_best = 0.9, q_other = 0.1 }

            [sweep]
            parameter = "corruption"
            values = [0.0, 0.5]
        "#;
        let spec = ExperimentSpec::from_toml(text).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.params.alpha_s, 5.0);
        assert_eq!(spec.params.gamma, 0.1);
        assert_eq!(spec.replications, 1);
        let EnvironmentSpec::Simulation(sim) = &spec.environment else { panic!() };
        assert_eq!(sim.groups[1].reward_model, RewardModel::Bernoulli { q_best: 0.9, q_other: 0.1 });
        assert!(ExperimentSpec::from_toml("horizon = 1\nseeds=[1]\nalgorithms=[]\nbogus=1").is_err());
    }

    #[test]
    fn replay_spec_runs() {
        let dir = tempfile::tempdir().unwrap();
        let stream = crate::stream::synthetic_drift_stream(600, 3, &mut crate::rng::seeded(1));
        let data = dir.path().join("drift.csv");
        crate::stream::write_stream_csv(&[stream], fs::File::create(&data).unwrap()).unwrap();
        let text = r#"
            horizon = 300
            seeds = [1, 2]
            algorithms = ["LinUCB", "COMBINE-softmax"]
            [environment]
            kind = "stream_replay"
            name = "drift"
            path = "drift.csv"
            max_offset = 200
            corruption = { kind = "uniform_box", prob = 0.5 }
        "#;
        let spec_path = dir.path().join("spec.toml");
        fs::write(&spec_path, text).unwrap();
        let spec = ExperimentSpec::from_file(&spec_path).unwrap();
        let traces = run_experiment(&spec, 2).unwrap();
        assert_eq!(traces.len(), 4);
        assert_eq!(traces[0].curves[0].group, "drift");
        assert_eq!(curve_rows(&traces, 1), curve_rows(&run_experiment(&spec, 1).unwrap(), 1));

        let mut long = spec.clone();
        long.horizon = 700;
        assert!(matches!(run_experiment(&long, 1), Err(Error::StreamExhausted { .. })));
    }
}

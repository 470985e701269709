//! Random-walk simulation environment.
//!
//! A hidden state `s` in `[0, 1]` moves by `+c` or `-c` each step and is
//! clipped at the boundaries. The unit interval is partitioned into K
//! subintervals, each with one best action. The agent sees the one-hot
//! encoding of the best action, except that with probability `p` the state
//! behind the context is replaced by a uniform draw.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Breakpoints `0 = q_0 < q_1 < ... < q_K = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    breakpoints: Vec<f64>,
}

impl Partition {
    pub fn uniform(num_actions: usize) -> Self {
        let k = num_actions.max(1);
        Self {
            breakpoints: (0..=k).map(|i| i as f64 / k as f64).collect(),
        }
    }

    pub fn from_breakpoints(breakpoints: Vec<f64>) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidParameter(
                "a partition needs at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 || *breakpoints.last().unwrap() != 1.0 {
            return Err(Error::InvalidParameter(
                "partition must start at 0 and end at 1".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter(
                "partition breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn num_actions(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn best_action(&self, s: f64) -> usize {
        best_action(s, self)
    }
}

/// Index `k` with `s` in `[q_k, q_{k+1})`; `s = 1` belongs to the last interval.
pub fn best_action(s: f64, partition: &Partition) -> usize {
    let interior = &partition.breakpoints[1..partition.breakpoints.len() - 1];
    interior.partition_point(|&q| q <= s)
}

/// One clipped random-walk step.
pub fn step_state(s: f64, c: f64, up: bool) -> f64 {
    let next = if up { s + c } else { s - c };
    next.clamp(0.0, 1.0)
}

/// One-hot encoding of the best action for state `s`.
pub fn gen_context(s: f64, partition: &Partition) -> Vec<f64> {
    let mut x = vec![0.0; partition.num_actions()];
    x[best_action(s, partition)] = 1.0;
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardModel {
    /// 1 for the best action, 0 otherwise.
    #[default]
    Deterministic,
    /// Bernoulli with success probability `q_best` for the best action and
    /// `q_other` for every other action.
    Bernoulli { q_best: f64, q_other: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub step_size: f64,
    pub corruption_prob: f64,
    pub walk_up_prob: f64,
    pub horizon: usize,
    pub partition: Partition,
    pub reward_model: RewardModel,
}

impl EnvConfig {
    pub fn new(num_actions: usize, step_size: f64, corruption_prob: f64, horizon: usize) -> Self {
        Self {
            step_size,
            corruption_prob,
            walk_up_prob: 0.5,
            horizon,
            partition: Partition::uniform(num_actions),
            reward_model: RewardModel::Deterministic,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.partition.num_actions()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")))
            }
        };
        unit("step_size", self.step_size)?;
        unit("corruption_prob", self.corruption_prob)?;
        unit("walk_up_prob", self.walk_up_prob)?;
        if let RewardModel::Bernoulli { q_best, q_other } = self.reward_model {
            unit("q_best", q_best)?;
            unit("q_other", q_other)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub hidden: f64,
    pub time: usize,
}

/// What one call to [`SimUser::observe`] produced. Only `context` goes to the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub context: Vec<f64>,
    pub corrupted: bool,
}

/// One simulated user: configuration plus evolving hidden state.
#[derive(Debug, Clone)]
pub struct SimUser {
    cfg: EnvConfig,
    state: EnvState,
}

impl SimUser {
    pub fn new(cfg: EnvConfig, initial_state: f64) -> Result<Self> {
        cfg.validate()?;
        if !(0.0..=1.0).contains(&initial_state) {
            return Err(Error::InvalidParameter(format!(
                "initial state {initial_state} outside [0, 1]"
            )));
        }
        Ok(Self {
            cfg,
            state: EnvState {
                hidden: initial_state,
                time: 0,
            },
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn best_action(&self) -> usize {
        best_action(self.state.hidden, &self.cfg.partition)
    }

    pub fn observe<R: Rng + ?Sized>(&self, rng: &mut R) -> Observation {
        let corrupted = self.cfg.corruption_prob > 0.0 && rng.random::<f64>() < self.cfg.corruption_prob;
        let s = if corrupted {
            rng.random::<f64>()
        } else {
            self.state.hidden
        };
        Observation {
            context: gen_context(s, &self.cfg.partition),
            corrupted,
        }
    }

    pub fn expected_reward(&self, action: usize) -> f64 {
        let best = action == self.best_action();
        match self.cfg.reward_model {
            RewardModel::Deterministic => best as u8 as f64,
            RewardModel::Bernoulli { q_best, q_other } => {
                if best {
                    q_best
                } else {
                    q_other
                }
            }
        }
    }

    /// Realized reward; the deterministic model draws nothing from `rng`.
    pub fn reward<R: Rng + ?Sized>(&self, action: usize, rng: &mut R) -> f64 {
        match self.cfg.reward_model {
            RewardModel::Deterministic => self.expected_reward(action),
            RewardModel::Bernoulli { .. } => {
                (rng.random::<f64>() < self.expected_reward(action)) as u8 as f64
            }
        }
    }

    /// Expected reward of the oracle that plays the best action.
    pub fn oracle_reward(&self) -> f64 {
        self.expected_reward(self.best_action())
    }

    pub fn advance<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.state.time >= self.cfg.horizon {
            return Err(Error::HorizonExceeded {
                horizon: self.cfg.horizon,
            });
        }
        let up = rng.random::<f64>() < self.cfg.walk_up_prob;
        self.state.hidden = step_state(self.state.hidden, self.cfg.step_size, up);
        self.state.time += 1;
        Ok(())
    }
}

/// One line of a state-trace export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateTraceRow {
    pub t: usize,
    pub state: f64,
    pub best_action: usize,
    pub corrupted: bool,
}

/// Writes `t,s,best_action,corrupted` with 1-based actions.
pub fn write_state_trace<W: Write>(rows: &[StateTraceRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "s", "best_action", "corrupted"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.state.to_string(),
            (r.best_action + 1).to_string(),
            (r.corrupted as u8).to_string(),
        ])?;
    }
    w.flush()
}

/// Simulates one user for its full horizon and records the trace.
pub fn record_state_trace<R: Rng + ?Sized>(user: &mut SimUser, rng: &mut R) -> Result<Vec<StateTraceRow>> {
    let mut rows = Vec::with_capacity(user.cfg.horizon);
    while user.state.time < user.cfg.horizon {
        let obs = user.observe(rng);
        rows.push(StateTraceRow {
            t: user.state.time + 1,
            state: user.state.hidden,
            best_action: user.best_action(),
            corrupted: obs.corrupted,
        });
        user.advance(rng)?;
    }
    Ok(rows)
}

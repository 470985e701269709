//! Single-policy agents used as baselines.

use crate::bandit::{linucb_select, lints_select, mab_select, LinearArmModel, MabArmState};
use crate::combine::{Agent, Decision};
use crate::rng::SimRng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanUpdate {
    SampleAverage,
    Discounted { gamma: f64 },
}

/// Per-user UCB over the full action set.
#[derive(Debug, Clone)]
pub struct UcbAgent {
    arms: Vec<Vec<MabArmState>>,
    all_actions: Vec<usize>,
    alpha_b: f64,
    mean_update: MeanUpdate,
}

impl UcbAgent {
    pub fn new(num_users: usize, num_actions: usize, alpha_b: f64, mean_update: MeanUpdate) -> Self {
        Self {
            arms: vec![vec![MabArmState::default(); num_actions]; num_users],
            all_actions: (0..num_actions).collect(),
            alpha_b,
            mean_update,
        }
    }

    pub fn arms(&self, user: usize) -> &[MabArmState] {
        &self.arms[user]
    }
}

impl Agent for UcbAgent {
    fn num_actions(&self) -> usize {
        self.all_actions.len()
    }

    fn num_users(&self) -> usize {
        self.arms.len()
    }

    fn select(&mut self, user: usize, _context: &[f64], t: u64, _rng: &mut SimRng) -> Result<Decision> {
        let arms = self.arms.get(user).ok_or_else(|| unknown_user(user))?;
        mab_select(arms, &self.all_actions, t, self.alpha_b).map(Decision::single)
    }

    fn update(&mut self, user: usize, _context: &[f64], decision: &Decision, reward: f64, _t: u64) -> Result<()> {
        let arm = self
            .arms
            .get_mut(user)
            .and_then(|a| a.get_mut(decision.action))
            .ok_or_else(|| unknown_user(user))?;
        match self.mean_update {
            MeanUpdate::SampleAverage => arm.record_average(reward),
            MeanUpdate::Discounted { gamma } => arm.record_discounted(reward, gamma),
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LinearExploration {
    Ucb { alpha: f64 },
    Thompson { v: f64 },
}

/// Global linear contextual bandit shared by all users.
#[derive(Debug, Clone)]
pub struct LinearAgent {
    models: Vec<LinearArmModel>,
    num_users: usize,
    exploration: LinearExploration,
}

impl LinearAgent {
    pub fn new(num_users: usize, num_actions: usize, dimension: usize, exploration: LinearExploration) -> Self {
        Self {
            models: vec![LinearArmModel::new(dimension); num_actions],
            num_users,
            exploration,
        }
    }

    pub fn models(&self) -> &[LinearArmModel] {
        &self.models
    }
}

impl Agent for LinearAgent {
    fn num_actions(&self) -> usize {
        self.models.len()
    }

    fn num_users(&self) -> usize {
        self.num_users
    }

    fn select(&mut self, _user: usize, context: &[f64], _t: u64, rng: &mut SimRng) -> Result<Decision> {
        let action = match self.exploration {
            LinearExploration::Ucb { alpha } => linucb_select(context, &self.models, alpha)?,
            LinearExploration::Thompson { v } => lints_select(context, &self.models, v, rng)?,
        };
        Ok(Decision::single(action))
    }

    fn update(&mut self, _user: usize, context: &[f64], decision: &Decision, reward: f64, _t: u64) -> Result<()> {
        self.models
            .get_mut(decision.action)
            .ok_or_else(|| Error::InvalidParameter(format!("action {} out of range", decision.action)))?
            .update(context, reward)
    }
}

fn unknown_user(user: usize) -> Error {
    Error::InvalidParameter(format!("unknown user {user}"))
}

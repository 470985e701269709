//! The referee-arbitrated meta-policy.
//!
//! Each user owns a referee, MAB arm statistics, indicator actions and a
//! transition matrix; the linear contextual bandit is global. Per decision:
//! the referee samples CB or MAB, the chosen policy picks an action (CB over
//! all actions, MAB over the user's candidate subset), and after the reward
//! the transition matrix, the chosen policy only, the referee and the
//! indicators are updated before the next candidate subset is drawn.

use serde::{Deserialize, Serialize};

use crate::bandit::{
    linucb_select, lints_select, mab_select, LinearArmModel, MabArmState, PolicyChoice,
    RefereeState,
};
use crate::rng::SimRng;
use crate::transition::{
    adj_select, common_adjacency, common_preference, softmax_action_sample, AdjacencyMatrix,
    IndicatorState, PreferenceMatrix, TransitionRanking,
};
use crate::{Error, Result};
use rand::Rng;

/// Outcome of one selection, carried to the matching update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: usize,
    /// Policy the referee delegated to; `None` for single-policy agents.
    pub policy: Option<PolicyChoice>,
    /// Probability the chosen policy had when it was sampled.
    pub pb_chosen: f64,
    /// Probability of the contextual bandit at selection time.
    pub pb_cb: Option<f64>,
}

impl Decision {
    pub fn single(action: usize) -> Self {
        Self {
            action,
            policy: None,
            pb_chosen: 1.0,
            pb_cb: None,
        }
    }
}

/// Step-wise driver interface: contexts in, actions out, rewards back.
///
/// Users are served one at a time; `update` for a user must follow its
/// `select` before the next user is served, since some state is shared.
pub trait Agent: Send {
    fn num_actions(&self) -> usize;

    fn num_users(&self) -> usize;

    fn select(&mut self, user: usize, context: &[f64], t: u64, rng: &mut SimRng) -> Result<Decision>;

    fn update(
        &mut self,
        user: usize,
        context: &[f64],
        decision: &Decision,
        reward: f64,
        t: u64,
    ) -> Result<()>;

    /// Called once after every user has acted in a round.
    fn end_round(&mut self) -> Result<()> {
        Ok(())
    }

    /// Transition matrices a user currently acts on, if the agent keeps any.
    fn transition_snapshot(&self, _user: usize) -> Option<TransitionSnapshot> {
        None
    }
}

#[derive(Debug, Clone)]
pub struct TransitionSnapshot {
    pub adjacency: AdjacencyMatrix,
    pub preference: Option<PreferenceMatrix>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CbKind {
    LinUcb,
    LinTs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MabKind {
    /// UCB1 over sample averages.
    StationaryUcb,
    /// UCB over exponentially discounted means.
    DiscountedUcb,
    /// Sampling from the softmax of the preference row of the previous indicator.
    SoftmaxTransition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    PerUser,
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefereeMode {
    Learning,
    /// Always delegate to one policy and never update the preferences.
    Frozen(PolicyChoice),
}

/// Algorithm parameters. Defaults are the values used for every experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// LinUCB exploration constant.
    pub alpha: f64,
    /// UCB exploration constant of the MAB.
    pub alpha_b: f64,
    /// Discount of the MAB mean update.
    pub gamma: f64,
    /// Referee step size.
    pub delta_r: f64,
    /// Preference-matrix step size.
    pub alpha_s: f64,
    /// LinTS posterior scale.
    pub v: f64,
}

impl Default for Params {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            alpha_b: 1.0,
            gamma: 0.1,
            delta_r: 0.5,
            alpha_s: 10.0,
            v: 0.2,
        }
    }
}

impl Params {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            ("alpha", self.alpha),
            ("alpha_b", self.alpha_b),
            ("delta_r", self.delta_r),
            ("alpha_s", self.alpha_s),
            ("v", self.v),
        ];
        for (name, value) in non_negative {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and non-negative, got {value}"
                )));
            }
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Looks up a parameter by its configuration name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "alpha" => self.alpha,
            "alpha_b" => self.alpha_b,
            "gamma" => self.gamma,
            "delta_r" => self.delta_r,
            "alpha_s" => self.alpha_s,
            "v" => self.v,
            _ => return None,
        })
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "alpha" => &mut self.alpha,
            "alpha_b" => &mut self.alpha_b,
            "gamma" => &mut self.gamma,
            "delta_r" => &mut self.delta_r,
            "alpha_s" => &mut self.alpha_s,
            "v" => &mut self.v,
            other => return Err(Error::InvalidParameter(format!("unknown parameter '{other}'"))),
        };
        *slot = value;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantConfig {
    pub cb_kind: CbKind,
    pub mab_kind: MabKind,
    pub transition_pooling: Pooling,
    /// When false the MAB always sees the full action set.
    pub use_reach: bool,
    pub referee: RefereeMode,
    pub params: Params,
}

impl VariantConfig {
    fn combine(mab_kind: MabKind, pooling: Pooling) -> Self {
        Self {
            cb_kind: CbKind::LinUcb,
            mab_kind,
            transition_pooling: pooling,
            use_reach: true,
            referee: RefereeMode::Learning,
            params: Params::default(),
        }
    }

    pub fn combine_ucb() -> Self {
        Self::combine(MabKind::DiscountedUcb, Pooling::PerUser)
    }

    pub fn combine_ucb_common() -> Self {
        Self::combine(MabKind::DiscountedUcb, Pooling::Common)
    }

    pub fn combine_softmax() -> Self {
        Self::combine(MabKind::SoftmaxTransition, Pooling::PerUser)
    }

    pub fn combine_softmax_common() -> Self {
        Self::combine(MabKind::SoftmaxTransition, Pooling::Common)
    }

    /// CB + discounted UCB under a learning referee, without candidate subsets.
    pub fn pair_without_reach(cb_kind: CbKind) -> Self {
        Self {
            cb_kind,
            mab_kind: MabKind::DiscountedUcb,
            transition_pooling: Pooling::PerUser,
            use_reach: false,
            referee: RefereeMode::Learning,
            params: Params::default(),
        }
    }

    pub fn with_params(mut self, params: Params) -> Self {
        self.params = params;
        self
    }

    pub fn with_referee(mut self, referee: RefereeMode) -> Self {
        self.referee = referee;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()
    }
}

/// Per-user state of the meta-policy.
#[derive(Debug, Clone)]
pub struct UserAgentState {
    pub mab_arms: Vec<MabArmState>,
    pub referee: RefereeState,
    pub indicators: IndicatorState,
    pub adjacency: AdjacencyMatrix,
    pub preference: Option<PreferenceMatrix>,
    pub candidates: Vec<usize>,
    pub ever_played: bool,
}

impl UserAgentState {
    pub fn new(num_actions: usize, cfg: &VariantConfig) -> Self {
        Self {
            mab_arms: vec![MabArmState::default(); num_actions],
            referee: RefereeState::new(cfg.params.delta_r),
            indicators: IndicatorState::default(),
            adjacency: AdjacencyMatrix::new(num_actions),
            preference: (cfg.mab_kind == MabKind::SoftmaxTransition)
                .then(|| PreferenceMatrix::new(num_actions, cfg.params.alpha_s)),
            candidates: (0..num_actions).collect(),
            ever_played: false,
        }
    }
}

/// State shared by all users: the global CB and pooled transition matrices.
#[derive(Debug, Clone)]
pub struct SharedAgentState {
    pub cb_models: Vec<LinearArmModel>,
    pub common_adjacency: Option<AdjacencyMatrix>,
    pub common_preference: Option<PreferenceMatrix>,
}

/// The meta-policy over a fixed population of users.
#[derive(Debug, Clone)]
pub struct CombineAgent {
    cfg: VariantConfig,
    num_actions: usize,
    users: Vec<UserAgentState>,
    shared: SharedAgentState,
}

impl CombineAgent {
    pub fn new(cfg: VariantConfig, num_users: usize, num_actions: usize, dimension: usize) -> Result<Self> {
        cfg.validate()?;
        if num_actions == 0 || dimension == 0 {
            return Err(Error::InvalidParameter(
                "need at least one action and one context dimension".into(),
            ));
        }
        let users: Vec<UserAgentState> = (0..num_users)
            .map(|_| UserAgentState::new(num_actions, &cfg))
            .collect();
        let pooled = cfg.transition_pooling == Pooling::Common && num_users > 0;
        let mut shared = SharedAgentState {
            cb_models: vec![LinearArmModel::new(dimension); num_actions],
            common_adjacency: None,
            common_preference: None,
        };
        if pooled {
            shared.common_adjacency = Some(AdjacencyMatrix::new(num_actions));
            if cfg.mab_kind == MabKind::SoftmaxTransition {
                shared.common_preference = Some(PreferenceMatrix::new(num_actions, cfg.params.alpha_s));
            }
        }
        let mut agent = Self {
            cfg,
            num_actions,
            users,
            shared,
        };
        agent.refresh_pooled()?;
        Ok(agent)
    }

    pub fn config(&self) -> &VariantConfig {
        &self.cfg
    }

    pub fn users(&self) -> &[UserAgentState] {
        &self.users
    }

    pub fn users_mut(&mut self) -> &mut [UserAgentState] {
        &mut self.users
    }

    pub fn shared(&self) -> &SharedAgentState {
        &self.shared
    }

    /// Referee draw and base-policy choice for one user.
    pub fn combine_select(
        &mut self,
        user: usize,
        context: &[f64],
        t: u64,
        rng: &mut SimRng,
    ) -> Result<Decision> {
        let cfg = self.cfg;
        let state = self.users.get(user).ok_or_else(|| unknown_user(user))?;
        let probs = state.referee.probabilities();
        let (choice, pb) = match cfg.referee {
            RefereeMode::Frozen(c) => (c, 1.0),
            RefereeMode::Learning => {
                let c = if rng.random::<f64>() < probs[0] {
                    PolicyChoice::ContextualBandit
                } else {
                    PolicyChoice::TransitionMab
                };
                (c, probs[c.index()])
            }
        };
        let action = match choice {
            PolicyChoice::ContextualBandit => match cfg.cb_kind {
                CbKind::LinUcb => linucb_select(context, &self.shared.cb_models, cfg.params.alpha)?,
                CbKind::LinTs => lints_select(context, &self.shared.cb_models, cfg.params.v, rng)?,
            },
            PolicyChoice::TransitionMab => match cfg.mab_kind {
                MabKind::StationaryUcb | MabKind::DiscountedUcb => {
                    mab_select(&state.mab_arms, &state.candidates, t, cfg.params.alpha_b)?
                }
                MabKind::SoftmaxTransition => {
                    let pref = self
                        .shared
                        .common_preference
                        .as_ref()
                        .or(state.preference.as_ref())
                        .expect("softmax variant keeps a preference matrix");
                    softmax_action_sample(pref, state.indicators.previous, &state.candidates, rng)?
                }
            },
        };
        let pb_cb = match cfg.referee {
            RefereeMode::Frozen(PolicyChoice::ContextualBandit) => 1.0,
            RefereeMode::Frozen(PolicyChoice::TransitionMab) => 0.0,
            RefereeMode::Learning => probs[0],
        };
        Ok(Decision {
            action,
            policy: Some(choice),
            pb_chosen: pb,
            pb_cb: Some(pb_cb),
        })
    }

    /// Bookkeeping after the reward of a [`combine_select`](Self::combine_select) decision.
    pub fn combine_update(
        &mut self,
        user: usize,
        context: &[f64],
        decision: &Decision,
        reward: f64,
    ) -> Result<()> {
        let cfg = self.cfg;
        let action = decision.action;
        let choice = decision
            .policy
            .ok_or_else(|| Error::InvalidParameter("decision carries no policy choice".into()))?;
        let state = self.users.get_mut(user).ok_or_else(|| unknown_user(user))?;

        let prev = state.indicators.previous;
        state.adjacency.update(prev, action, reward);
        if let (Some(pref), Some(p)) = (state.preference.as_mut(), prev) {
            pref.update(p, action, reward);
        }

        match choice {
            PolicyChoice::ContextualBandit => {
                let model = self.shared.cb_models.get_mut(action).ok_or_else(|| {
                    Error::InvalidParameter(format!("action {action} out of range"))
                })?;
                model.update(context, reward)?;
            }
            PolicyChoice::TransitionMab => {
                let arm = &mut state.mab_arms[action];
                match cfg.mab_kind {
                    MabKind::StationaryUcb => arm.record_average(reward),
                    MabKind::DiscountedUcb | MabKind::SoftmaxTransition => {
                        arm.record_discounted(reward, cfg.params.gamma)
                    }
                }
                state.ever_played = true;
            }
        }

        if cfg.referee == RefereeMode::Learning {
            state.referee.update(choice, reward, decision.pb_chosen);
        }

        state.indicators.update(action, reward);

        if cfg.use_reach {
            let ranking: &dyn TransitionRanking = match cfg.mab_kind {
                MabKind::SoftmaxTransition => match &self.shared.common_preference {
                    Some(common) => common,
                    None => state.preference.as_ref().expect("softmax variant keeps a preference matrix"),
                },
                _ => match &self.shared.common_adjacency {
                    Some(common) => common,
                    None => &state.adjacency,
                },
            };
            state.candidates = adj_select(&mut state.indicators, ranking, reward, state.ever_played);
        }
        Ok(())
    }

    /// Recomputes pooled matrices from the current per-user matrices.
    pub fn refresh_pooled(&mut self) -> Result<()> {
        if self.cfg.transition_pooling != Pooling::Common || self.users.is_empty() {
            return Ok(());
        }
        let adjs: Vec<AdjacencyMatrix> = self.users.iter().map(|u| u.adjacency.clone()).collect();
        let common = common_adjacency(&adjs)?;
        if self.cfg.mab_kind == MabKind::SoftmaxTransition {
            let prefs: Vec<PreferenceMatrix> = self
                .users
                .iter()
                .map(|u| u.preference.clone().expect("softmax variant keeps a preference matrix"))
                .collect();
            self.shared.common_preference = Some(common_preference(&prefs, &adjs, &common)?);
        }
        self.shared.common_adjacency = Some(common);
        Ok(())
    }
}

fn unknown_user(user: usize) -> Error {
    Error::InvalidParameter(format!("unknown user {user}"))
}

impl Agent for CombineAgent {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn num_users(&self) -> usize {
        self.users.len()
    }

    fn select(&mut self, user: usize, context: &[f64], t: u64, rng: &mut SimRng) -> Result<Decision> {
        self.combine_select(user, context, t, rng)
    }

    fn update(
        &mut self,
        user: usize,
        context: &[f64],
        decision: &Decision,
        reward: f64,
        _t: u64,
    ) -> Result<()> {
        self.combine_update(user, context, decision, reward)
    }

    fn end_round(&mut self) -> Result<()> {
        self.refresh_pooled()
    }

    fn transition_snapshot(&self, user: usize) -> Option<TransitionSnapshot> {
        let u = self.users.get(user)?;
        Some(TransitionSnapshot {
            adjacency: u.adjacency.clone(),
            preference: u.preference.clone(),
        })
    }
}

/// One user's step within a round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub user: usize,
    pub action: usize,
    pub reward: f64,
    pub policy: Option<PolicyChoice>,
    pub pb_cb: Option<f64>,
}

/// Serves every user once, in index order, then closes the round.
///
/// `reward_fn(user, action)` is the environment's response.
pub fn run_round<A, F>(
    agent: &mut A,
    contexts: &[Vec<f64>],
    mut reward_fn: F,
    t: u64,
    rng: &mut SimRng,
) -> Result<Vec<StepRecord>>
where
    A: Agent + ?Sized,
    F: FnMut(usize, usize) -> f64,
{
    if contexts.len() != agent.num_users() {
        return Err(Error::ShapeMismatch(format!(
            "{} contexts for {} users",
            contexts.len(),
            agent.num_users()
        )));
    }
    let mut records = Vec::with_capacity(contexts.len());
    for (user, context) in contexts.iter().enumerate() {
        let decision = agent.select(user, context, t, rng)?;
        let reward = reward_fn(user, decision.action);
        agent.update(user, context, &decision, reward, t)?;
        records.push(StepRecord {
            user,
            action: decision.action,
            reward,
            policy: decision.policy,
            pb_cb: decision.pb_cb,
        });
    }
    agent.end_round()?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn one_hot(k: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; k];
        v[i] = 1.0;
        v
    }

    #[test]
    fn fresh_referee_splits_evenly() {
        let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 1, 3, 3).unwrap();
        let mut rng = seeded(4);
        let n = 10_000;
        let cb = (0..n)
            .filter(|_| {
                agent.combine_select(0, &one_hot(3, 0), 1, &mut rng).unwrap().policy
                    == Some(PolicyChoice::ContextualBandit)
            })
            .count();
        assert!((cb as f64 / n as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn skewed_referee_prefers_cb() {
        let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 1, 3, 3).unwrap();
        agent.users_mut()[0].referee.preferences = [1.0, -2.0];
        let mut rng = seeded(5);
        let n = 10_000;
        let cb = (0..n)
            .filter(|_| {
                agent.combine_select(0, &one_hot(3, 0), 1, &mut rng).unwrap().policy
                    == Some(PolicyChoice::ContextualBandit)
            })
            .count();
        let expected = 1f64.exp() / (1f64.exp() + (-2f64).exp());
        assert!((cb as f64 / n as f64 - expected).abs() <= 0.01);
    }

    #[test]
    fn singleton_candidate_is_played() {
        let cfg = VariantConfig::combine_ucb().with_referee(RefereeMode::Frozen(PolicyChoice::TransitionMab));
        let mut agent = CombineAgent::new(cfg, 1, 5, 5).unwrap();
        agent.users_mut()[0].candidates = vec![2];
        let d = agent.combine_select(0, &one_hot(5, 0), 7, &mut seeded(0)).unwrap();
        assert_eq!(d.action, 2);

        let cfg = VariantConfig::combine_softmax().with_referee(RefereeMode::Frozen(PolicyChoice::TransitionMab));
        let mut agent = CombineAgent::new(cfg, 1, 5, 5).unwrap();
        agent.users_mut()[0].candidates = vec![3];
        assert_eq!(agent.combine_select(0, &one_hot(5, 0), 7, &mut seeded(0)).unwrap().action, 3);
    }

    #[test]
    fn cb_choice_leaves_mab_untouched() {
        let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 1, 3, 3).unwrap();
        let d = Decision {
            action: 1,
            policy: Some(PolicyChoice::ContextualBandit),
            pb_chosen: 0.5,
            pb_cb: Some(0.5),
        };
        agent.combine_update(0, &one_hot(3, 1), &d, 1.0).unwrap();
        let u = &agent.users()[0];
        assert!(u.mab_arms.iter().all(|a| a.play_count == 0));
        assert_eq!(agent.shared().cb_models[1].design()[(1, 1)], 2.0);
        assert_eq!(u.referee.preferences, [0.25, -0.25]);
        assert!(!u.ever_played);
    }

    #[test]
    fn mab_choice_updates_arm_only() {
        let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 1, 3, 3).unwrap();
        let d = Decision {
            action: 2,
            policy: Some(PolicyChoice::TransitionMab),
            pb_chosen: 0.5,
            pb_cb: Some(0.5),
        };
        agent.combine_update(0, &one_hot(3, 2), &d, 1.0).unwrap();
        let u = &agent.users()[0];
        assert!((u.mab_arms[2].mean_reward - 0.1).abs() < 1e-12);
        assert_eq!(u.mab_arms[2].play_count, 1);
        assert!(agent.shared().cb_models.iter().all(|m| m.reward_acc().sum() == 0.0));
        assert_eq!(u.referee.preferences, [-0.25, 0.25]);
    }

    #[test]
    fn reward_shrinks_candidates_to_one() {
        let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 1, 4, 4).unwrap();
        {
            let u = &mut agent.users_mut()[0];
            u.indicators = IndicatorState {
                current: Some(0),
                previous: Some(0),
                reach: 2,
            };
            u.ever_played = true;
        }
        let d = Decision {
            action: 1,
            policy: Some(PolicyChoice::ContextualBandit),
            pb_chosen: 0.5,
            pb_cb: Some(0.5),
        };
        agent.combine_update(0, &one_hot(4, 1), &d, 1.0).unwrap();
        let u = &agent.users()[0];
        assert_eq!(u.candidates, vec![1]);
        assert_eq!(u.indicators.reach, 0);
        assert_eq!(u.adjacency.get(0, 1), 2.0);
    }

    #[test]
    fn adjacency_uses_pre_step_indicator() {
        let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 1, 3, 3).unwrap();
        agent.users_mut()[0].indicators = IndicatorState {
            current: Some(2),
            previous: Some(0),
            reach: 1,
        };
        let d = Decision {
            action: 1,
            policy: Some(PolicyChoice::TransitionMab),
            pb_chosen: 0.5,
            pb_cb: Some(0.5),
        };
        agent.combine_update(0, &one_hot(3, 1), &d, 0.0).unwrap();
        // a miss credits nothing and moves a- to a+
        let u = &agent.users()[0];
        assert_eq!(u.adjacency.counts().sum(), 9.0);
        assert_eq!(u.indicators.previous, Some(2));
    }

    #[test]
    fn run_round_edge_cases() {
        let mut empty = CombineAgent::new(VariantConfig::combine_ucb(), 0, 3, 3).unwrap();
        assert!(run_round(&mut empty, &[], |_, _| 1.0, 1, &mut seeded(0)).unwrap().is_empty());

        let mut single = CombineAgent::new(VariantConfig::combine_softmax(), 1, 1, 1).unwrap();
        let mut rng = seeded(1);
        for t in 1..=50 {
            let recs = run_round(&mut single, &[vec![1.0]], |_, a| (a == 0) as u8 as f64, t, &mut rng).unwrap();
            assert_eq!(recs[0].action, 0);
            assert_eq!(recs[0].reward, 1.0);
        }

        assert!(run_round(&mut single, &[], |_, _| 1.0, 1, &mut rng).is_err());
    }

    #[test]
    fn global_cb_is_shared_within_a_round() {
        let cfg = VariantConfig::combine_ucb().with_referee(RefereeMode::Frozen(PolicyChoice::ContextualBandit));
        let mut agent = CombineAgent::new(cfg, 2, 2, 2).unwrap();
        let ctx = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let mut seen = Vec::new();
        // user 0 plays action 0 (tie) and is rewarded; user 1 must see the updated
        // model and the score of action 0 rise from 1 to 0.5 + sqrt(0.5).
        let recs = run_round(
            &mut agent,
            &ctx,
            |user, action| {
                seen.push((user, action));
                if user == 0 { 1.0 } else { 0.0 }
            },
            1,
            &mut seeded(0),
        )
        .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(seen, vec![(0, 0), (1, 0)]);
        let m = &agent.shared().cb_models[0];
        assert_eq!(m.design()[(0, 0)], 3.0);
        assert_eq!(m.reward_acc()[0], 1.0);
    }

    #[test]
    fn pooled_matrices_follow_users() {
        let mut agent = CombineAgent::new(VariantConfig::combine_softmax_common(), 2, 3, 3).unwrap();
        assert_eq!(agent.shared().common_adjacency.as_ref().unwrap().get(0, 1), 2.0);
        agent.users_mut()[0].adjacency.update(Some(0), 1, 1.0);
        agent.users_mut()[0].preference.as_mut().unwrap().update(0, 1, 1.0);
        agent.end_round().unwrap();
        let shared = agent.shared();
        assert_eq!(shared.common_adjacency.as_ref().unwrap().get(0, 1), 3.0);
        // user 0 holds 10 * (1 - 1/3) with weight 2, user 1 holds 0 with weight 1
        let pooled = shared.common_preference.as_ref().unwrap().get(0, 1);
        assert!((pooled - 2.0 * (20.0 / 3.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn params_validation_and_lookup() {
        let mut p = Params::default();
        assert!(p.validate().is_ok());
        assert_eq!(p.get("alpha_s"), Some(10.0));
        p.set("gamma", 0.0).unwrap();
        assert!(p.validate().is_err());
        assert!(p.set("beta", 1.0).is_err());
        assert!(CombineAgent::new(VariantConfig::combine_ucb().with_params(p), 1, 2, 2).is_err());
    }
}

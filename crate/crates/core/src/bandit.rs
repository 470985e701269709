//! Base action-selection policies and the referee.
//!
//! - UCB scores over per-arm running means (stationary sample average or
//!   exponentially discounted mean).
//! - Disjoint linear models with ridge estimates, selected by LinUCB or
//!   linear Thompson sampling.
//! - The two-policy gradient bandit that arbitrates between the contextual
//!   bandit and the transition-aware MAB.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Running reward statistics of one action for a UCB-style policy.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MabArmState {
    pub mean_reward: f64,
    pub play_count: u64,
}

impl MabArmState {
    /// Exponentially discounted mean update with weight `gamma` on the new reward.
    pub fn record_discounted(&mut self, reward: f64, gamma: f64) {
        self.mean_reward = discounted_mean_update(self.mean_reward, reward, gamma);
        self.play_count += 1;
    }

    /// Sample-average update (discount `1/n`).
    pub fn record_average(&mut self, reward: f64) {
        self.play_count += 1;
        self.mean_reward = discounted_mean_update(
            self.mean_reward,
            reward,
            1.0 / self.play_count as f64,
        );
    }
}

/// `mean + alpha_b * sqrt(2 ln t / n)`, or `+inf` for an untried arm.
pub fn ucb_score(arm: &MabArmState, t: u64, alpha_b: f64) -> f64 {
    if arm.play_count == 0 {
        return f64::INFINITY;
    }
    let t = t.max(1) as f64;
    arm.mean_reward + alpha_b * (2.0 * t.ln() / arm.play_count as f64).sqrt()
}

pub fn discounted_mean_update(mean: f64, reward: f64, gamma: f64) -> f64 {
    mean + gamma * (reward - mean)
}

/// Candidate with the highest UCB score; ties go to the lowest action index.
pub fn mab_select(
    arms: &[MabArmState],
    candidates: &[usize],
    t: u64,
    alpha_b: f64,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &a in candidates {
        let arm = arms.get(a).ok_or_else(|| {
            Error::InvalidParameter(format!("candidate {a} out of range ({} arms)", arms.len()))
        })?;
        let score = ucb_score(arm, t, alpha_b);
        best = match best {
            None => Some((a, score)),
            Some((b, s)) if score > s || (score == s && a < b) => Some((a, score)),
            keep => keep,
        };
    }
    best.map(|(a, _)| a).ok_or(Error::NoCandidates)
}

/// Ridge-regression statistics for one action: `A = I + sum x x^T`, `b = sum r x`.
///
/// The Cholesky factor of `A` is refreshed on every update so selection only
/// needs triangular solves.
#[derive(Debug, Clone)]
pub struct LinearArmModel {
    design: DMatrix<f64>,
    reward_acc: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl LinearArmModel {
    pub fn new(dimension: usize) -> Self {
        let design = DMatrix::identity(dimension, dimension);
        let factor = Cholesky::new(design.clone()).expect("identity is positive definite");
        Self {
            design,
            reward_acc: DVector::zeros(dimension),
            factor,
        }
    }

    /// Builds a model from explicit statistics; `design` must be symmetric positive definite.
    pub fn from_parts(design: DMatrix<f64>, reward_acc: DVector<f64>) -> Result<Self> {
        if !design.is_square() || design.nrows() != reward_acc.len() {
            return Err(Error::ShapeMismatch(format!(
                "design {}x{} with reward vector of length {}",
                design.nrows(),
                design.ncols(),
                reward_acc.len()
            )));
        }
        let factor = factorize(&design)?;
        Ok(Self {
            design,
            reward_acc,
            factor,
        })
    }

    pub fn dimension(&self) -> usize {
        self.reward_acc.len()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn reward_acc(&self) -> &DVector<f64> {
        &self.reward_acc
    }

    /// `A += x x^T`, `b += r x`.
    pub fn update(&mut self, context: &[f64], reward: f64) -> Result<()> {
        self.check_dim(context)?;
        if !reward.is_finite() || !context.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite observation".into()));
        }
        let x = DVector::from_column_slice(context);
        self.design.ger(1.0, &x, &x, 1.0);
        self.reward_acc.axpy(reward, &x, 1.0);
        self.factor = factorize(&self.design)?;
        Ok(())
    }

    /// Ridge estimate `A^{-1} b`.
    pub fn ridge_fit(&self) -> Result<DVector<f64>> {
        let mu = self.factor.solve(&self.reward_acc);
        if mu.iter().all(|v| v.is_finite()) {
            Ok(mu)
        } else {
            Err(Error::Numerical("non-finite ridge estimate".into()))
        }
    }

    /// `x^T A^{-1} x`.
    pub fn confidence_width_sq(&self, context: &[f64]) -> Result<f64> {
        self.check_dim(context)?;
        let x = DVector::from_column_slice(context);
        let y = self.factor.solve(&x);
        Ok(x.dot(&y))
    }

    /// Draws `mu ~ N(A^{-1} b, scale^2 A^{-1})`.
    pub fn sample_posterior<R: Rng + ?Sized>(&self, scale: f64, rng: &mut R) -> Result<DVector<f64>> {
        let mean = self.ridge_fit()?;
        let d = self.dimension();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        // A = L L^T, so w = L^{-T} z has covariance A^{-1}.
        let w = self
            .factor
            .l_dirty()
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
        let sample = mean + w * scale;
        if sample.iter().all(|v| v.is_finite()) {
            Ok(sample)
        } else {
            Err(Error::Numerical("non-finite posterior sample".into()))
        }
    }

    fn check_dim(&self, context: &[f64]) -> Result<()> {
        if context.len() != self.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.dimension(),
                got: context.len(),
            });
        }
        Ok(())
    }
}

fn factorize(design: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !design.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("non-finite design matrix".into()));
    }
    Cholesky::new(design.clone())
        .ok_or_else(|| Error::Numerical("design matrix is not positive definite".into()))
}

/// Free-function form of [`LinearArmModel::ridge_fit`].
pub fn ridge_fit(model: &LinearArmModel) -> Result<DVector<f64>> {
    model.ridge_fit()
}

/// Free-function form of [`LinearArmModel::update`].
pub fn linucb_update(model: &mut LinearArmModel, context: &[f64], reward: f64) -> Result<()> {
    model.update(context, reward)
}

/// `argmax_a x^T mu_a + alpha sqrt(x^T A_a^{-1} x)`, lowest index on ties.
pub fn linucb_select(context: &[f64], models: &[LinearArmModel], alpha: f64) -> Result<usize> {
    let scores = models
        .iter()
        .map(|m| {
            let mu = m.ridge_fit()?;
            let width = m.confidence_width_sq(context)?.max(0.0).sqrt();
            Ok(dot(context, mu.as_slice()) + alpha * width)
        })
        .collect::<Result<Vec<_>>>()?;
    argmax(&scores).ok_or(Error::NoCandidates)
}

/// Linear Thompson sampling: one posterior draw per action, then argmax of `x^T mu`.
pub fn lints_select<R: Rng + ?Sized>(
    context: &[f64],
    models: &[LinearArmModel],
    v: f64,
    rng: &mut R,
) -> Result<usize> {
    let mut scores = Vec::with_capacity(models.len());
    for m in models {
        if m.dimension() != context.len() {
            return Err(Error::DimensionMismatch {
                expected: m.dimension(),
                got: context.len(),
            });
        }
        let mu = m.sample_posterior(v, rng)?;
        scores.push(dot(context, mu.as_slice()));
    }
    argmax(&scores).ok_or(Error::NoCandidates)
}

/// Which base policy the referee handed the decision to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyChoice {
    ContextualBandit,
    TransitionMab,
}

impl PolicyChoice {
    pub fn index(self) -> usize {
        match self {
            PolicyChoice::ContextualBandit => 0,
            PolicyChoice::TransitionMab => 1,
        }
    }

    pub fn other(self) -> Self {
        match self {
            PolicyChoice::ContextualBandit => PolicyChoice::TransitionMab,
            PolicyChoice::TransitionMab => PolicyChoice::ContextualBandit,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PolicyChoice::ContextualBandit => "cb",
            PolicyChoice::TransitionMab => "mab",
        }
    }
}

/// Preference values of the two-policy gradient bandit (index 0 = CB, 1 = MAB).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefereeState {
    pub preferences: [f64; 2],
    pub step_size: f64,
}

impl RefereeState {
    pub fn new(step_size: f64) -> Self {
        Self {
            preferences: [0.0, 0.0],
            step_size,
        }
    }

    pub fn probabilities(&self) -> [f64; 2] {
        referee_probabilities(self)
    }

    pub fn probability_of(&self, choice: PolicyChoice) -> f64 {
        self.probabilities()[choice.index()]
    }

    pub fn update(&mut self, chosen: PolicyChoice, reward: f64, pb_chosen: f64) {
        referee_update(self, chosen, reward, pb_chosen);
    }
}

pub fn referee_probabilities(state: &RefereeState) -> [f64; 2] {
    let [h0, h1] = state.preferences;
    let m = h0.max(h1);
    let e0 = (h0 - m).exp();
    let e1 = (h1 - m).exp();
    let p0 = e0 / (e0 + e1);
    [p0, 1.0 - p0]
}

/// Modified gradient-bandit step.
///
/// The chosen policy moves by `delta * (r - pb)`; the other one by
/// `delta * (1 - 2r) * (1 - pb)`, where `pb` is the chosen policy's
/// probability at selection time.
pub fn referee_update(state: &mut RefereeState, chosen: PolicyChoice, reward: f64, pb_chosen: f64) {
    let delta = state.step_size;
    let c = chosen.index();
    let o = chosen.other().index();
    state.preferences[c] += delta * (reward - pb_chosen);
    state.preferences[o] += delta * (1.0 - 2.0 * reward) * (1.0 - pb_chosen);
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// First index of the maximum; `None` for an empty slice.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

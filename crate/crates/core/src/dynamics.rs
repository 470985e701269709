//! Mean-field dynamics of the two-policy referee.
//!
//! `p` is the probability of picking the better policy (mean reward `r*`);
//! the other policy's mean is `r* - gap`. One referee step is one unit of
//! continuous time.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandit::{referee_probabilities, referee_update, PolicyChoice, RefereeState};
use crate::rng::{derived, SimRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    pub delta_r: f64,
    pub r_star: f64,
    pub gap: f64,
    pub p0: f64,
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta_r > 0.0
            && self.delta_r.is_finite()
            && (0.0..=1.0).contains(&self.r_star)
            && self.gap >= 0.0
            && (0.0..=1.0).contains(&(self.r_star - self.gap))
            && self.p0 > 0.0
            && self.p0 < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid dynamics parameters {self:?}")))
        }
    }
}

/// `d pb[k] / d H[j]` of a softmax policy.
pub fn softmax_jacobian_entry(pb: &[f64], k: usize, j: usize) -> f64 {
    pb[k] * ((k == j) as u8 as f64 - pb[j])
}

pub fn ode_rhs(p: f64, params: &DynamicsParams) -> f64 {
    let DynamicsParams {
        delta_r: d,
        r_star: r,
        gap: g,
        ..
    } = *params;
    d * p * (g - r + p * (2.0 * p - 3.0) * (g * p - r + 1.0) + 1.0)
}

/// Interior fixed point of [`ode_rhs`].
pub fn c_infinity(params: &DynamicsParams) -> Result<f64> {
    let (g, r) = (params.gap, params.r_star);
    if g == 0.0 {
        return Err(Error::ZeroGap);
    }
    let disc = 9.0 * g * g - 4.0 * g * r + 4.0 * g + 4.0 * r * r - 8.0 * r + 4.0;
    let c = (g + 2.0 * r + disc.max(0.0).sqrt() - 2.0) / (4.0 * g);
    if (-1e-12..0.0).contains(&c) {
        Ok(0.0)
    } else if c > 1.0 && c - 1.0 < 1e-12 {
        Ok(1.0)
    } else {
        Ok(c)
    }
}

/// Classical Runge-Kutta integration from `p0` up to `t_end`.
///
/// Returns `(t, p)` at `t = 0, dt, 2dt, ...`; the final step is shortened to
/// land on `t_end`.
pub fn integrate_dynamics(params: &DynamicsParams, t_end: f64, dt: f64) -> Result<Vec<(f64, f64)>> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!("need dt > 0 and t_end >= 0, got {dt}, {t_end}")));
    }
    if !(params.p0 > 0.0 && params.p0 < 1.0) {
        return Err(Error::InvalidParameter(format!("p0 = {} outside (0, 1)", params.p0)));
    }
    let f = |p: f64| ode_rhs(p, params);
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut p = params.p0;
    out.push((0.0, p));
    for i in 0..steps {
        let t = i as f64 * dt;
        let h = dt.min(t_end - t);
        let k1 = f(p);
        let k2 = f(p + 0.5 * h * k1);
        let k3 = f(p + 0.5 * h * k2);
        let k4 = f(p + h * k3);
        let mut next = p + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !next.is_finite() {
            return Err(Error::Numerical(format!("non-finite state at t = {t}")));
        }
        if !(0.0..=1.0).contains(&next) {
            let excess = if next < 0.0 { -next } else { next - 1.0 };
            if excess < 1e-9 {
                log::warn!("clamping p = {next} at t = {}", t + h);
            } else {
                return Err(Error::Numerical(format!("p = {next} left [0, 1] at t = {}", t + h)));
            }
            next = next.clamp(0.0, 1.0);
        }
        p = next;
        out.push((t + h, p));
    }
    Ok(out)
}

fn check_means(params: &DynamicsParams) -> Result<(f64, f64)> {
    let good = params.r_star;
    let bad = params.r_star - params.gap;
    for m in [good, bad] {
        if !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidParameter(format!("Bernoulli mean {m} outside [0, 1]")));
        }
    }
    Ok((good, bad))
}

/// Referee whose better policy starts with probability `p0`.
fn initial_referee(params: &DynamicsParams) -> RefereeState {
    let mut referee = RefereeState::new(params.delta_r);
    referee.preferences = [(params.p0 / (1.0 - params.p0)).ln(), 0.0];
    referee
}

// The better policy sits in slot 0.
const BETTER: PolicyChoice = PolicyChoice::ContextualBandit;

/// One referee run. Returns the better policy's probability before each of the
/// `horizon` steps and after the last, plus the number of inferior pulls.
fn simulate_referee(params: &DynamicsParams, horizon: usize, rng: &mut SimRng) -> (Vec<f64>, Vec<u32>) {
    let mut referee = initial_referee(params);
    let mut probs = Vec::with_capacity(horizon + 1);
    let mut inferior = Vec::with_capacity(horizon);
    let mut pulls = 0u32;
    let (good, bad) = (params.r_star, params.r_star - params.gap);
    for _ in 0..horizon {
        let pb = referee_probabilities(&referee);
        probs.push(pb[0]);
        let chosen = if rng.random::<f64>() < pb[0] { BETTER } else { BETTER.other() };
        let mean = if chosen == BETTER { good } else { bad };
        let reward = (rng.random::<f64>() < mean) as u8 as f64;
        if chosen != BETTER {
            pulls += 1;
        }
        inferior.push(pulls);
        referee_update(&mut referee, chosen, reward, pb[chosen.index()]);
    }
    probs.push(referee_probabilities(&referee)[0]);
    (probs, inferior)
}

/// Mean over `replications` runs of the better policy's probability at
/// `t = 0..=horizon`.
pub fn monte_carlo_two_policy(
    params: &DynamicsParams,
    horizon: usize,
    replications: usize,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    Ok(monte_carlo_runs(params, horizon, replications, rng)?.0)
}

/// Mean cumulative inferior-policy pulls after `t = 1..=horizon` steps.
pub fn inferior_pulls(params: &DynamicsParams, horizon: usize, replications: usize, rng: &mut SimRng) -> Result<Vec<f64>> {
    Ok(monte_carlo_runs(params, horizon, replications, rng)?.1)
}

fn monte_carlo_runs(
    params: &DynamicsParams,
    horizon: usize,
    replications: usize,
    rng: &mut SimRng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_means(params)?;
    if replications == 0 {
        return Err(Error::InvalidParameter("need at least one replication".into()));
    }
    if !(params.p0 > 0.0 && params.p0 < 1.0) {
        return Err(Error::InvalidParameter(format!("p0 = {} outside (0, 1)", params.p0)));
    }
    let base: u64 = rng.random();
    // Collect first so the summation order does not depend on scheduling.
    let runs: Vec<(Vec<f64>, Vec<u32>)> = (0..replications)
        .into_par_iter()
        .map(|rep| simulate_referee(params, horizon, &mut derived(base, &[rep as u64])))
        .collect();
    let mut probs = vec![0.0; horizon + 1];
    let mut pulls = vec![0.0; horizon];
    for (p, n) in runs {
        probs.iter_mut().zip(p).for_each(|(a, b)| *a += b);
        pulls.iter_mut().zip(n).for_each(|(a, b)| *a += f64::from(b));
    }
    let n = replications as f64;
    Ok((
        probs.into_iter().map(|v| v / n).collect(),
        pulls.into_iter().map(|v| v / n).collect(),
    ))
}

/// One row of the theory-vs-simulation table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsRow {
    pub t: usize,
    pub p_theory: f64,
    pub p_empirical: f64,
    pub c_infinity: Option<f64>,
}

/// ODE solution (dt = 0.1) and Monte-Carlo mean at every integer step.
pub fn dynamics_table(params: &DynamicsParams, horizon: usize, replications: usize, rng: &mut SimRng) -> Result<Vec<DynamicsRow>> {
    params.validate()?;
    let theory = integrate_dynamics(params, horizon as f64, 0.1)?;
    let empirical = monte_carlo_two_policy(params, horizon, replications, rng)?;
    let c = match c_infinity(params) {
        Ok(c) => Some(c),
        Err(Error::ZeroGap) => None,
        Err(e) => return Err(e),
    };
    Ok((0..=horizon)
        .map(|t| DynamicsRow {
            t,
            p_theory: theory[t * 10].1,
            p_empirical: empirical[t],
            c_infinity: c,
        })
        .collect())
}

pub fn write_dynamics_csv<W: Write>(rows: &[DynamicsRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "p_theory", "p_empirical", "c_infinity"])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.p_theory.to_string(),
            r.p_empirical.to_string(),
            r.c_infinity.map_or(String::new(), |c| c.to_string()),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::softmax;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn params(delta_r: f64, gap: f64, r_star: f64, p0: f64) -> DynamicsParams {
        DynamicsParams {
            delta_r,
            r_star,
            gap,
            p0,
        }
    }

    #[test]
    fn jacobian_examples() {
        let pb = [0.5, 0.5];
        assert_eq!(softmax_jacobian_entry(&pb, 0, 0), 0.25);
        assert_eq!(softmax_jacobian_entry(&pb, 0, 1), -0.25);
        let pb = softmax(&[0.3, -1.2, 2.0]);
        for k in 0..3 {
            let row: f64 = (0..3).map(|j| softmax_jacobian_entry(&pb, k, j)).sum();
            assert!(row.abs() < 1e-15);
        }
    }

    #[test]
    fn rhs_examples() {
        let p = params(0.5, 0.5, 1.0, 0.5);
        assert_eq!(ode_rhs(0.0, &p), 0.0);
        assert!((ode_rhs(0.5, &p) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn c_infinity_examples() {
        assert_eq!(c_infinity(&params(0.5, 0.5, 1.0, 0.5)).unwrap(), 1.0);
        let p = params(0.5, 0.2, 0.6, 0.5);
        let c = c_infinity(&p).unwrap();
        assert!((c - 0.68614).abs() < 5e-6, "{c}");
        assert!(ode_rhs(c, &p).abs() < 1e-12);
        assert!(matches!(c_infinity(&params(0.5, 0.0, 0.6, 0.5)), Err(Error::ZeroGap)));
    }

    /// Expected one-step change of the better policy's probability, by
    /// enumerating which policy is chosen and whether it pays out.
    fn four_case_expectation(p: &DynamicsParams) -> f64 {
        let start = initial_referee(p);
        let pb = referee_probabilities(&start);
        let means = [p.r_star, p.r_star - p.gap];
        let mut expected = 0.0;
        for chosen in [BETTER, BETTER.other()] {
            let c = chosen.index();
            for reward in [0.0, 1.0] {
                let weight = pb[c] * if reward == 1.0 { means[c] } else { 1.0 - means[c] };
                let mut next = start;
                referee_update(&mut next, chosen, reward, pb[c]);
                expected += weight * (referee_probabilities(&next)[0] - pb[0]);
            }
        }
        expected
    }

    #[test]
    fn four_case_expectation_matches_rhs() {
        for &(gap, r) in &[(0.5, 1.0), (0.2, 0.6), (0.1, 0.3), (0.0, 0.5)] {
            for &p0 in &[0.5, 0.2, 0.85] {
                let small = 1e-3;
                let p = params(small, gap, r, p0);
                let diff = (four_case_expectation(&p) - ode_rhs(p0, &p)).abs();
                assert!(diff <= 2.0 * small * small, "gap {gap} r {r} p0 {p0}: {diff}");
            }
        }
    }

    #[test]
    fn trajectory_rises_to_one_when_c_infinity_is_one() {
        let p = params(0.5, 0.5, 1.0, 0.2);
        let traj = integrate_dynamics(&p, 500.0, 0.1).unwrap();
        assert_eq!(traj.len(), 5001);
        for w in traj.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        assert!(traj.last().unwrap().1 > 0.99);
    }

    #[test]
    fn fixed_point_trajectory_is_constant() {
        let mut p = params(0.5, 0.2, 0.6, 0.5);
        p.p0 = c_infinity(&p).unwrap();
        for (_, v) in integrate_dynamics(&p, 50.0, 0.1).unwrap() {
            assert!((v - p.p0).abs() < 1e-8);
        }
    }

    #[test]
    fn step_halving_converges() {
        let p = params(0.5, 0.2, 0.6, 0.1);
        let a = integrate_dynamics(&p, 40.0, 0.1).unwrap().last().unwrap().1;
        let b = integrate_dynamics(&p, 40.0, 0.05).unwrap().last().unwrap().1;
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn doubling_delta_halves_time() {
        let slow = params(0.25, 0.5, 1.0, 0.3);
        let fast = params(0.5, 0.5, 1.0, 0.3);
        let a = integrate_dynamics(&slow, 40.0, 0.1).unwrap();
        let b = integrate_dynamics(&fast, 20.0, 0.05).unwrap();
        assert_eq!(a.len(), b.len());
        for ((ta, pa), (tb, pb)) in a.iter().zip(&b) {
            assert!((ta / 2.0 - tb).abs() < 1e-9);
            assert!((pa - pb).abs() < 1e-6);
        }
    }

    #[test]
    fn integrate_rejects_bad_input() {
        let p = params(0.5, 0.5, 1.0, 0.5);
        assert!(integrate_dynamics(&p, 10.0, 0.0).is_err());
        assert!(integrate_dynamics(&params(0.5, 0.5, 1.0, 1.0), 10.0, 0.1).is_err());
        let wild = params(1e200, 0.5, 1.0, 0.5);
        assert!(integrate_dynamics(&wild, 10.0, 0.1).is_err());
    }

    #[test]
    fn symmetric_policies_stay_even() {
        let p = params(0.5, 0.0, 0.7, 0.5);
        let traj = monte_carlo_two_policy(&p, 500, 2000, &mut seeded(11)).unwrap();
        for v in traj {
            assert!((v - 0.5).abs() <= 0.02, "{v}");
        }
    }

    #[test]
    fn monte_carlo_converges_when_one_policy_dominates() {
        let p = params(0.05, 0.5, 1.0, 0.5);
        let traj = monte_carlo_two_policy(&p, 2000, 2000, &mut seeded(12)).unwrap();
        assert!(*traj.last().unwrap() >= 0.95);
    }

    #[test]
    fn monte_carlo_is_reproducible_and_validates() {
        let p = params(0.5, 0.2, 0.6, 0.5);
        let a = monte_carlo_two_policy(&p, 50, 16, &mut seeded(3)).unwrap();
        let b = monte_carlo_two_policy(&p, 50, 16, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo_two_policy(&params(0.5, 0.8, 0.6, 0.5), 5, 1, &mut seeded(0)).is_err());
        assert!(monte_carlo_two_policy(&p, 5, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn inferior_pulls_grow_sublinearly() {
        let p = params(0.5, 0.5, 1.0, 0.5);
        let pulls = inferior_pulls(&p, 8000, 200, &mut seeded(4)).unwrap();
        for t in [2000, 4000] {
            let ratio = pulls[2 * t - 1] / pulls[t - 1];
            assert!(ratio < 1.9, "T = {t}: {ratio}");
        }
    }

    #[test]
    fn table_rows_and_csv() {
        let p = params(0.5, 0.0, 0.5, 0.5);
        let rows = dynamics_table(&p, 20, 10, &mut seeded(0)).unwrap();
        assert_eq!(rows.len(), 21);
        assert!(rows.iter().all(|r| r.c_infinity.is_none()));
        let mut buf = Vec::new();
        write_dynamics_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,p_theory,p_empirical,c_infinity\n0,0.5,0.5,\n"));
    }

    proptest! {
        #[test]
        fn jacobian_matches_finite_differences(h0 in -3.0f64..3.0, h1 in -3.0f64..3.0) {
            let eps = 1e-5;
            let pb = softmax(&[h0, h1]);
            for j in 0..2 {
                let mut up = [h0, h1];
                let mut down = [h0, h1];
                up[j] += eps;
                down[j] -= eps;
                let (pu, pd) = (softmax(&up), softmax(&down));
                for k in 0..2 {
                    let fd = (pu[k] - pd[k]) / (2.0 * eps);
                    prop_assert!((fd - softmax_jacobian_entry(&pb, k, j)).abs() <= 1e-6);
                }
            }
        }

        #[test]
        fn c_infinity_is_a_fixed_point(gap in 0.01f64..1.0, frac in 0.0f64..=1.0) {
            let r_star = gap + frac * (1.0 - gap);
            let p = params(0.5, gap, r_star, 0.5);
            let c = c_infinity(&p).unwrap();
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert!(ode_rhs(c, &p).abs() <= 1e-9);
        }
    }
}

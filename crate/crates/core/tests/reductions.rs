use rand::Rng;

use combine_core::bandit::PolicyChoice;
use combine_core::baselines::{LinearAgent, LinearExploration};
use combine_core::combine::{run_round, Agent, CbKind, CombineAgent, RefereeMode, StepRecord, VariantConfig};
use combine_core::env::{EnvConfig, SimUser};
use combine_core::rng::{derived, SimRng};

fn drive(agent: &mut dyn Agent, seed: u64, horizon: usize, corruption: f64) -> Vec<StepRecord> {
    let k = agent.num_actions();
    let cfg = EnvConfig::new(k, 0.2, corruption, horizon);
    let mut users: Vec<(SimUser, SimRng)> = (0..agent.num_users() as u64)
        .map(|u| {
            let mut rng = derived(seed, &[u]);
            let s0 = rng.random::<f64>();
            (SimUser::new(cfg.clone(), s0).unwrap(), rng)
        })
        .collect();
    let mut agent_rng = derived(seed, &[99]);
    let mut out = Vec::new();
    for t in 1..=horizon {
        let contexts: Vec<Vec<f64>> = users.iter_mut().map(|(u, r)| u.observe(r).context).collect();
        let recs = run_round(
            agent,
            &contexts,
            |u, a| {
                let (env, r) = &mut users[u];
                env.reward(a, r)
            },
            t as u64,
            &mut agent_rng,
        )
        .unwrap();
        out.extend(recs);
        if t < horizon {
            for (u, r) in users.iter_mut() {
                u.advance(r).unwrap();
            }
        }
    }
    out
}

fn strip(records: &[StepRecord]) -> Vec<(usize, usize, u64)> {
    records.iter().map(|r| (r.user, r.action, r.reward.to_bits())).collect()
}

#[test]
fn frozen_lints_referee_matches_plain_lints() {
    for seed in 0..5 {
        let cfg = VariantConfig::pair_without_reach(CbKind::LinTs)
            .with_referee(RefereeMode::Frozen(PolicyChoice::ContextualBandit));
        let v = cfg.params.v;
        let mut combine = CombineAgent::new(cfg, 2, 4, 4).unwrap();
        let mut lints = LinearAgent::new(2, 4, 4, LinearExploration::Thompson { v });
        let a = drive(&mut combine, seed, 300, 0.3);
        let b = drive(&mut lints, seed, 300, 0.3);
        assert_eq!(strip(&a), strip(&b), "seed {seed}");
        assert!(a.iter().all(|r| r.policy == Some(PolicyChoice::ContextualBandit) && r.pb_cb == Some(1.0)));
    }
}

#[test]
fn mab_play_counts_match_mab_choices() {
    let mut agent = CombineAgent::new(VariantConfig::combine_ucb(), 3, 5, 5).unwrap();
    let records = drive(&mut agent, 7, 400, 0.5);
    for u in 0..3 {
        let mab_choices = records
            .iter()
            .filter(|r| r.user == u && r.policy == Some(PolicyChoice::TransitionMab))
            .count();
        let played: u64 = agent.users()[u].mab_arms.iter().map(|a| a.play_count).sum();
        assert_eq!(played as usize, mab_choices, "user {u}");
    }
}

#[test]
fn learning_referee_probabilities_stay_valid() {
    let mut agent = CombineAgent::new(VariantConfig::combine_softmax(), 2, 5, 5).unwrap();
    for r in drive(&mut agent, 3, 400, 0.5) {
        let p = r.pb_cb.unwrap();
        assert!((0.0..=1.0).contains(&p));
        assert!(r.policy.is_some());
    }
}

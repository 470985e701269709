use rand::Rng;

use combine_core::baselines::{LinearAgent, LinearExploration};
use combine_core::combine::{Agent, Decision};
use combine_core::Result;
use combine_core::rng::{derived, seeded, SimRng};
use combine_core::stream::{bandit_replay, synthetic_drift_stream, CorruptionKind, CorruptionMode, LabeledStream};

struct Fixed {
    action: usize,
    num_actions: usize,
}

impl Agent for Fixed {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn num_users(&self) -> usize {
        1
    }

    fn select(&mut self, _: usize, _: &[f64], _: u64, _: &mut SimRng) -> Result<Decision> {
        Ok(Decision::single(self.action))
    }

    fn update(&mut self, _: usize, _: &[f64], _: &Decision, _: f64, _: u64) -> Result<()> {
        Ok(())
    }
}

fn replay(stream: &LabeledStream, agent: &mut dyn Agent, mode: &CorruptionMode, horizon: usize, seed: u64) -> f64 {
    let records = bandit_replay(
        std::slice::from_ref(stream),
        mode,
        agent,
        &[0],
        horizon,
        &mut derived(seed, &[3]),
        &mut derived(seed, &[2]),
    )
    .unwrap();
    records.iter().map(|r| r.reward).sum()
}

#[test]
fn fixed_action_regret_is_the_label_count() {
    let stream = synthetic_drift_stream(4000, 3, &mut seeded(2));
    for action in 0..3 {
        let misses = stream.labels.iter().filter(|&&l| l != action).count() as f64;
        let hits = replay(&stream, &mut Fixed { action, num_actions: 3 }, &CorruptionMode::none(), 4000, 0);
        assert_eq!(4000.0 - hits, misses);
    }
}

#[test]
fn fully_corrupted_contexts_cannot_beat_the_majority_label() {
    // Independent labels, so nothing but the context could predict them.
    let mut rng = seeded(11);
    let n = 10_000;
    let labels: Vec<usize> = (0..n)
        .map(|_| match rng.random::<f64>() {
            u if u < 0.5 => 0,
            u if u < 0.8 => 1,
            _ => 2,
        })
        .collect();
    let features = labels
        .iter()
        .map(|&l| (0..3).map(|j| if j == l { 0.9 } else { 0.1 }).collect())
        .collect();
    let stream = LabeledStream {
        stream_id: "iid".into(),
        features,
        labels,
    };
    let top = stream.label_frequencies(3).into_iter().fold(0.0, f64::max);
    for kind in [CorruptionKind::UniformBox, CorruptionKind::RandomOneHot] {
        let mode = CorruptionMode {
            kind,
            prob: 1.0,
            binary_dims: Vec::new(),
        };
        let mut agent = LinearAgent::new(1, 3, 3, LinearExploration::Ucb { alpha: 1.0 });
        let accuracy = replay(&stream, &mut agent, &mode, n, 11) / n as f64;
        assert!(accuracy <= top + 0.02, "{kind:?}: accuracy {accuracy} vs top label frequency {top}");
    }
    let mut agent = LinearAgent::new(1, 3, 3, LinearExploration::Ucb { alpha: 1.0 });
    let clean = replay(&stream, &mut agent, &CorruptionMode::none(), n, 11) / n as f64;
    assert!(clean > 0.95, "clean accuracy {clean}");
}

#[test]
fn clean_drift_contexts_are_predictive() {
    let stream = synthetic_drift_stream(3000, 3, &mut seeded(5));
    let mut agent = LinearAgent::new(1, 3, stream.dimension(), LinearExploration::Ucb { alpha: 1.0 });
    let accuracy = replay(&stream, &mut agent, &CorruptionMode::none(), 3000, 5) / 3000.0;
    assert!(accuracy > 0.9, "accuracy {accuracy}");
}

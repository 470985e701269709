use std::path::PathBuf;

use combine_core::experiment::{sweep, ExperimentSpec, SweepRow};

fn load(name: &str) -> ExperimentSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../specs").join(name);
    ExperimentSpec::from_file(&path).unwrap()
}

fn at<'a>(rows: &'a [SweepRow], algorithm: &str, value: f64) -> &'a SweepRow {
    rows.iter()
        .find(|r| r.algorithm == algorithm && r.value == value)
        .unwrap_or_else(|| panic!("no row for {algorithm} at {value}"))
}

#[test]
fn transition_learning_helps_on_slow_noisy_group() {
    let rows = sweep(&load("alpha_s_sweep.toml"), 0).unwrap();
    let off = at(&rows, "COMBINE-softmax", 0.0).mean;
    for value in [5.0, 10.0, 20.0] {
        let on = at(&rows, "COMBINE-softmax", value).mean;
        assert!(on <= off, "alpha_s={value}: {on} > {off}");
    }
}

#[test]
fn linucb_regret_grows_with_corruption() {
    let rows = sweep(&load("corruption_sweep.toml"), 0).unwrap();
    let values = [0.0, 0.25, 0.5, 0.75, 1.0];
    let linucb: Vec<f64> = values.iter().map(|&v| at(&rows, "LinUCB", v).mean).collect();
    for w in linucb.windows(2) {
        assert!(w[1] >= 0.95 * w[0], "{linucb:?}");
    }
    assert!(linucb[4] > 10.0 * linucb[0].max(1.0), "{linucb:?}");
}

#[test]
fn sweep_rows_cover_the_grid() {
    let mut spec = load("corruption_sweep.toml");
    spec.horizon = 50;
    spec.seeds = vec![1, 2];
    let rows = sweep(&spec, 1).unwrap();
    // Single group, so no separate total rows.
    assert_eq!(rows.len(), 5 * 2);
    assert!(rows.iter().all(|r| r.parameter == "corruption" && r.runs == 2));
}

//! Action-to-action transition structure learned from rewarded plays.
//!
//! Two representations share the same bookkeeping: a count matrix (every
//! entry starts at 1 and grows by the reward of an observed transition) and a
//! real-valued preference matrix whose rows are read through a softmax. The
//! indicator actions record which rewarded action led into which, and the
//! reach controls how many top-ranked successors form the candidate set of
//! the transition-aware MAB.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;

use crate::bandit::softmax;
use crate::{Error, Result};

/// Anything whose rows rank successor actions.
pub trait TransitionRanking {
    fn num_actions(&self) -> usize;
    fn row(&self, from: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    counts: DMatrix<f64>,
}

impl AdjacencyMatrix {
    pub fn new(num_actions: usize) -> Self {
        Self {
            counts: DMatrix::from_element(num_actions, num_actions, 1.0),
        }
    }

    pub fn from_counts(counts: DMatrix<f64>) -> Result<Self> {
        if !counts.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "adjacency must be square, got {}x{}",
                counts.nrows(),
                counts.ncols()
            )));
        }
        Ok(Self { counts })
    }

    pub fn num_actions(&self) -> usize {
        self.counts.nrows()
    }

    pub fn counts(&self) -> &DMatrix<f64> {
        &self.counts
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.counts[(from, to)]
    }

    /// Credits `reward` to the transition `prev -> played` when they differ.
    pub fn update(&mut self, prev_indicator: Option<usize>, played: usize, reward: f64) {
        if let Some(prev) = prev_indicator {
            if prev != played {
                self.counts[(prev, played)] += reward;
            }
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_matrix_csv(&self.counts, out)
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        Self::from_counts(read_matrix_csv(input)?)
    }
}

impl TransitionRanking for AdjacencyMatrix {
    fn num_actions(&self) -> usize {
        self.counts.nrows()
    }

    fn row(&self, from: usize) -> Vec<f64> {
        self.counts.row(from).iter().copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferenceMatrix {
    prefs: DMatrix<f64>,
    step_size: f64,
}

impl PreferenceMatrix {
    pub fn new(num_actions: usize, step_size: f64) -> Self {
        Self {
            prefs: DMatrix::zeros(num_actions, num_actions),
            step_size,
        }
    }

    pub fn from_prefs(prefs: DMatrix<f64>, step_size: f64) -> Result<Self> {
        if !prefs.is_square() {
            return Err(Error::ShapeMismatch(format!(
                "preference matrix must be square, got {}x{}",
                prefs.nrows(),
                prefs.ncols()
            )));
        }
        Ok(Self { prefs, step_size })
    }

    pub fn num_actions(&self) -> usize {
        self.prefs.nrows()
    }

    pub fn prefs(&self) -> &DMatrix<f64> {
        &self.prefs
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.prefs[(from, to)]
    }

    /// Softmax over the full row `from`.
    pub fn row_distribution(&self, from: usize) -> Vec<f64> {
        softmax(&TransitionRanking::row(self, from))
    }

    /// Softmax of each row, as a matrix.
    pub fn row_normalized(&self) -> DMatrix<f64> {
        let k = self.num_actions();
        let mut out = DMatrix::zeros(k, k);
        for i in 0..k {
            for (j, p) in self.row_distribution(i).into_iter().enumerate() {
                out[(i, j)] = p;
            }
        }
        out
    }

    /// Gradient step on the entry `prev -> played` against the full-row softmax.
    pub fn update(&mut self, prev_indicator: usize, played: usize, reward: f64) {
        if prev_indicator == played {
            return;
        }
        let p = self.row_distribution(prev_indicator)[played];
        self.prefs[(prev_indicator, played)] += self.step_size * (reward - p);
    }

    /// Samples a successor of `prev` from the softmax restricted to `candidates`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        prev_indicator: Option<usize>,
        candidates: &[usize],
        rng: &mut R,
    ) -> Result<usize> {
        softmax_action_sample(self, prev_indicator, candidates, rng)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        write_matrix_csv(&self.prefs, out)
    }

    pub fn read_csv<R: Read>(input: R, step_size: f64) -> Result<Self> {
        Self::from_prefs(read_matrix_csv(input)?, step_size)
    }
}

impl TransitionRanking for PreferenceMatrix {
    fn num_actions(&self) -> usize {
        self.prefs.nrows()
    }

    fn row(&self, from: usize) -> Vec<f64> {
        self.prefs.row(from).iter().copied().collect()
    }
}

/// Indicator actions and reach of one user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndicatorState {
    /// Most recent rewarded action (a+).
    pub current: Option<usize>,
    /// Rewarded action preceding the current one (a-).
    pub previous: Option<usize>,
    pub reach: usize,
}

impl Default for IndicatorState {
    fn default() -> Self {
        Self {
            current: None,
            previous: None,
            reach: 1,
        }
    }
}

impl IndicatorState {
    pub fn update(&mut self, played: usize, reward: f64) {
        if reward == 1.0 {
            self.current = Some(played);
        } else {
            self.previous = self.current;
        }
    }
}

pub fn adjacency_update(adj: &mut AdjacencyMatrix, prev_indicator: Option<usize>, played: usize, reward: f64) {
    adj.update(prev_indicator, played, reward);
}

pub fn indicator_update(ind: &mut IndicatorState, played: usize, reward: f64) {
    ind.update(played, reward);
}

/// Candidate subset for the next MAB decision.
///
/// Returns every action while the user has no MAB history or no previous
/// indicator. Otherwise the reach is reset by a reward and grown (up to K) by a
/// miss, and the `reach + 1` highest entries of the previous indicator's row
/// are returned, ties going to the lower action index.
pub fn adj_select<T: TransitionRanking + ?Sized>(
    ind: &mut IndicatorState,
    ranking: &T,
    reward: f64,
    any_play_yet: bool,
) -> Vec<usize> {
    let k = ranking.num_actions();
    let prev = match (any_play_yet, ind.previous) {
        (true, Some(prev)) => prev,
        _ => return (0..k).collect(),
    };
    if reward == 1.0 {
        ind.reach = 0;
    } else {
        ind.reach = (ind.reach + 1).min(k);
    }
    let row = ranking.row(prev);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    order.truncate((ind.reach + 1).min(k));
    order
}

pub fn preference_update(pref: &mut PreferenceMatrix, prev_indicator: usize, played: usize, reward: f64) {
    pref.update(prev_indicator, played, reward);
}

/// Samples from the softmax of `prefs[prev, candidates]`, renormalized over
/// the candidates. Without a previous indicator the candidates are equally
/// likely.
pub fn softmax_action_sample<R: Rng + ?Sized>(
    pref: &PreferenceMatrix,
    prev_indicator: Option<usize>,
    candidates: &[usize],
    rng: &mut R,
) -> Result<usize> {
    match candidates {
        [] => return Err(Error::NoCandidates),
        [only] => return Ok(*only),
        _ => {}
    }
    let logits: Vec<f64> = match prev_indicator {
        Some(prev) => candidates.iter().map(|&a| pref.get(prev, a)).collect(),
        None => vec![0.0; candidates.len()],
    };
    let probs = softmax(&logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (&a, p) in candidates.iter().zip(&probs) {
        acc += p;
        if u < acc {
            return Ok(a);
        }
    }
    Ok(*candidates.last().expect("non-empty"))
}

/// Elementwise sum of the per-user count matrices.
pub fn common_adjacency(per_user: &[AdjacencyMatrix]) -> Result<AdjacencyMatrix> {
    let first = per_user
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no adjacency matrices to pool".into()))?;
    let k = first.num_actions();
    let mut sum = DMatrix::zeros(k, k);
    for adj in per_user {
        if adj.num_actions() != k {
            return Err(Error::ShapeMismatch(format!(
                "adjacency sizes {k} and {} differ",
                adj.num_actions()
            )));
        }
        sum += &adj.counts;
    }
    Ok(AdjacencyMatrix { counts: sum })
}

/// Count-weighted average of user preferences: `sum_j P_j * C_j / C_common`.
pub fn common_preference(
    per_user_prefs: &[PreferenceMatrix],
    per_user_adj: &[AdjacencyMatrix],
    common_adj: &AdjacencyMatrix,
) -> Result<PreferenceMatrix> {
    if per_user_prefs.len() != per_user_adj.len() || per_user_prefs.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} preference matrices for {} adjacency matrices",
            per_user_prefs.len(),
            per_user_adj.len()
        )));
    }
    let k = common_adj.num_actions();
    let mut weighted = DMatrix::zeros(k, k);
    for (p, a) in per_user_prefs.iter().zip(per_user_adj) {
        if p.num_actions() != k || a.num_actions() != k {
            return Err(Error::ShapeMismatch(format!(
                "user matrices of size {}/{} against common size {k}",
                p.num_actions(),
                a.num_actions()
            )));
        }
        weighted += p.prefs.component_mul(&a.counts);
    }
    let prefs = weighted.component_div(&common_adj.counts);
    Ok(PreferenceMatrix {
        prefs,
        step_size: per_user_prefs[0].step_size,
    })
}

fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (1..=m.ncols()).map(|a| a.to_string()).collect();
    w.write_record(&header)?;
    for i in 0..m.nrows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    w.flush()
}

fn read_matrix_csv<R: Read>(input: R) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_reader(input);
    let k = r
        .headers()
        .map_err(|e| Error::Data {
            row: 0,
            message: e.to_string(),
        })?
        .len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Data {
            row: i + 1,
            message: e.to_string(),
        })?;
        if rec.len() != k {
            return Err(Error::Data {
                row: i + 1,
                message: format!("expected {k} columns, found {}", rec.len()),
            });
        }
        for field in rec.iter() {
            values.push(field.trim().parse::<f64>().map_err(|e| Error::Data {
                row: i + 1,
                message: format!("'{field}': {e}"),
            })?);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, k, &values))
}

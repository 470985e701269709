//! Labeled time series replayed as a bandit problem.
//!
//! Each row's features are the context, each label the single rewarding
//! action. Contexts can be corrupted before the agent sees them; the reward
//! only says whether the chosen action equals the label.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::PolicyChoice;
use crate::combine::Agent;
use crate::rng::SimRng;
use crate::{Error, Result};

/// One user's stream. Labels are 0-based action indices.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledStream {
    pub stream_id: String,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl LabeledStream {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Fraction of rows carrying each label, over `num_labels` labels.
    pub fn label_frequencies(&self, num_labels: usize) -> Vec<f64> {
        let mut counts = vec![0.0; num_labels];
        for &l in &self.labels {
            counts[l] += 1.0;
        }
        let n = self.len().max(1) as f64;
        counts.into_iter().map(|c| c / n).collect()
    }
}

/// Column roles of an input CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnSchema {
    /// Feature columns; empty means every column named `f<digits>`, in file order.
    pub features: Vec<String>,
    pub label: String,
    pub stream_id: Option<String>,
    /// Number of labels K; labels must lie in `1..=K`. Inferred from the data when absent.
    pub num_labels: Option<usize>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            features: Vec::new(),
            label: "label".into(),
            stream_id: Some("stream_id".into()),
            num_labels: None,
        }
    }
}

/// Parsed file: streams in order of first appearance plus the label count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub streams: Vec<LabeledStream>,
    pub num_labels: usize,
}

impl Dataset {
    pub fn dimension(&self) -> usize {
        self.streams.first().map_or(0, LabeledStream::dimension)
    }
}

pub fn ingest(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(file, schema).map_err(|e| match e {
        Error::Csv { source, .. } => Error::csv(path, source),
        other => other,
    })
}

pub fn ingest_reader<R: Read>(input: R, schema: &ColumnSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = reader.headers().map_err(|e| Error::csv("<input>", e))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data {
                row: 0,
                message: format!("missing column '{name}'"),
            })
    };
    let feature_idx: Vec<usize> = if schema.features.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(_, h)| h.len() > 1 && h.starts_with('f') && h[1..].chars().all(|c| c.is_ascii_digit()))
            .map(|(i, _)| i)
            .collect()
    } else {
        schema.features.iter().map(|f| find(f)).collect::<Result<_>>()?
    };
    if feature_idx.is_empty() {
        return Err(Error::Data {
            row: 0,
            message: "no feature columns".into(),
        });
    }
    let label_idx = find(&schema.label)?;
    let stream_idx = match &schema.stream_id {
        Some(name) => headers.iter().position(|h| h == name.as_str()),
        None => None,
    };

    let mut by_stream: BTreeMap<String, (usize, LabeledStream)> = BTreeMap::new();
    let mut max_label = 0usize;
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let row = i + 2;
        let record = record.map_err(|e| Error::Data {
            row,
            message: e.to_string(),
        })?;
        let mut features = Vec::with_capacity(feature_idx.len());
        for &c in &feature_idx {
            let cell = record.get(c).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::Data {
                    row,
                    message: format!("missing value in column '{}'", &headers[c]),
                });
            }
            let v: f64 = cell.parse().map_err(|_| Error::Data {
                row,
                message: format!("non-numeric value '{cell}' in column '{}'", &headers[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    message: format!("non-finite value in column '{}'", &headers[c]),
                });
            }
            features.push(v);
        }
        let cell = record.get(label_idx).unwrap_or("");
        let label: usize = cell.parse().map_err(|_| Error::Data {
            row,
            message: format!("label '{cell}' is not a positive integer"),
        })?;
        let out_of_range = label == 0 || schema.num_labels.is_some_and(|k| label > k);
        if out_of_range {
            return Err(Error::Data {
                row,
                message: format!(
                    "unseen label {label} (expected 1..={})",
                    schema.num_labels.map_or("K".to_string(), |k| k.to_string())
                ),
            });
        }
        max_label = max_label.max(label);
        let id = stream_idx
            .and_then(|c| record.get(c))
            .unwrap_or("0")
            .to_string();
        let order = by_stream.len();
        let entry = by_stream.entry(id.clone()).or_insert_with(|| {
            (
                order,
                LabeledStream {
                    stream_id: id,
                    features: Vec::new(),
                    labels: Vec::new(),
                },
            )
        });
        entry.1.features.push(features);
        entry.1.labels.push(label - 1);
    }
    let mut streams: Vec<(usize, LabeledStream)> = by_stream.into_values().collect();
    streams.sort_by_key(|(order, _)| *order);
    Ok(Dataset {
        streams: streams.into_iter().map(|(_, s)| s).collect(),
        num_labels: schema.num_labels.unwrap_or(max_label),
    })
}

/// Equal-frequency discretization into labels `1..=k`.
///
/// Bin edges sit at the empirical `j/k` quantiles (the value of rank
/// `ceil(j T / k)`), so tied values always share a label.
pub fn equal_frequency_bins(values: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidParameter("bin count must be at least 1".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::InvalidParameter(format!(
            "{k} bins requested but only {} distinct values",
            distinct.len()
        )));
    }
    let n = sorted.len();
    let edges: Vec<f64> = (1..k).map(|j| sorted[(j * n).div_ceil(k)]).collect();
    Ok(values
        .iter()
        .map(|v| 1 + edges.iter().filter(|&&e| *v >= e).count())
        .collect())
}

/// Savitzky-Golay smoothing by local least-squares polynomial fits.
///
/// Interior points use the centred window; points within half a window of
/// either end are fitted on the truncated window, so the output has the
/// input's length.
pub fn savgol_smooth(series: &[f64], window: usize, order: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if window.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!("window {window} must be odd")));
    }
    if window > n {
        return Err(Error::InvalidParameter(format!(
            "window {window} longer than series ({n})"
        )));
    }
    if order >= window {
        return Err(Error::InvalidParameter(format!(
            "order {order} must be below window {window}"
        )));
    }
    let half = window / 2;
    let scale = half.max(1) as f64;
    let mut out = vec![0.0; n];
    let centred = fit_weights(-(half as isize), half as isize, order, scale)?;
    for i in 0..n {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(n - 1);
        let value = if lo + half == i && i + half == hi {
            weighted(&centred, &series[lo..=hi])
        } else {
            let w = fit_weights(lo as isize - i as isize, hi as isize - i as isize, order, scale)?;
            weighted(&w, &series[lo..=hi])
        };
        out[i] = value;
    }
    Ok(out)
}

fn weighted(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

/// Weights mapping samples at offsets `from..=to` to the value at offset 0 of
/// their least-squares polynomial.
fn fit_weights(from: isize, to: isize, order: usize, scale: f64) -> Result<Vec<f64>> {
    let m = (to - from + 1) as usize;
    let degree = order.min(m - 1);
    let vander = DMatrix::from_fn(m, degree + 1, |r, c| ((from + r as isize) as f64 / scale).powi(c as i32));
    // Row 0 of the pseudo-inverse: solve (V^T V) g = e0, weights = V g.
    let gram = vander.transpose() * &vander;
    let mut e0 = DVector::zeros(degree + 1);
    e0[0] = 1.0;
    let g = gram
        .lu()
        .solve(&e0)
        .ok_or_else(|| Error::Numerical("singular Savitzky-Golay system".into()))?;
    Ok((vander * g).iter().copied().collect())
}

/// Smooths the features and labels of a stream column by column and rounds
/// the labels back onto `0..num_labels`.
pub fn smooth_stream(stream: &LabeledStream, window: usize, order: usize, num_labels: usize) -> Result<LabeledStream> {
    let d = stream.dimension();
    let mut features = stream.features.clone();
    for j in 0..d {
        let column: Vec<f64> = stream.features.iter().map(|row| row[j]).collect();
        for (row, v) in features.iter_mut().zip(savgol_smooth(&column, window, order)?) {
            row[j] = v;
        }
    }
    let labels: Vec<f64> = stream.labels.iter().map(|&l| l as f64).collect();
    let labels = savgol_smooth(&labels, window, order)?
        .into_iter()
        .map(|v| v.round().clamp(0.0, (num_labels - 1) as f64) as usize)
        .collect();
    Ok(LabeledStream {
        stream_id: stream.stream_id.clone(),
        features,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Every coordinate replaced by a Uniform[0, 1] draw.
    UniformBox,
    /// Replaced by a uniformly chosen one-hot vector.
    RandomOneHot,
    /// Uniform on continuous coordinates, Bernoulli(0.5) on `binary_dims`.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionMode {
    pub kind: CorruptionKind,
    pub prob: f64,
    #[serde(default)]
    pub binary_dims: Vec<usize>,
}

impl CorruptionMode {
    pub fn none() -> Self {
        Self {
            kind: CorruptionKind::UniformBox,
            prob: 0.0,
            binary_dims: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prob) {
            return Err(Error::InvalidParameter(format!(
                "corruption probability {} outside [0, 1]",
                self.prob
            )));
        }
        Ok(())
    }
}

/// Returns the context the agent sees and whether it was corrupted.
pub fn corrupt_features<R: Rng + ?Sized>(x: &[f64], mode: &CorruptionMode, rng: &mut R) -> (Vec<f64>, bool) {
    if mode.prob <= 0.0 || rng.random::<f64>() >= mode.prob {
        return (x.to_vec(), false);
    }
    let d = x.len();
    let out = match mode.kind {
        CorruptionKind::UniformBox => (0..d).map(|_| rng.random::<f64>()).collect(),
        CorruptionKind::RandomOneHot => {
            let mut v = vec![0.0; d];
            v[rng.random_range(0..d)] = 1.0;
            v
        }
        CorruptionKind::Mixed => (0..d)
            .map(|j| {
                if mode.binary_dims.contains(&j) {
                    rng.random_bool(0.5) as u8 as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect(),
    };
    (out, true)
}

/// One agent decision during replay.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayRecord {
    pub stream: usize,
    pub t: usize,
    pub action: usize,
    pub label: usize,
    pub reward: f64,
    pub policy: Option<PolicyChoice>,
    pub pb_cb: Option<f64>,
}

/// Drives `agent` through `horizon` steps of every stream (one stream per user).
///
/// Row `offsets[i] + t` of stream `i` is shown at step `t`. Corruption draws
/// come from `corruption_rng`, agent randomness from `agent_rng`.
pub fn bandit_replay<A: Agent + ?Sized>(
    streams: &[LabeledStream],
    mode: &CorruptionMode,
    agent: &mut A,
    offsets: &[usize],
    horizon: usize,
    corruption_rng: &mut SimRng,
    agent_rng: &mut SimRng,
) -> Result<Vec<ReplayRecord>> {
    mode.validate()?;
    if offsets.len() != streams.len() || agent.num_users() != streams.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} streams, {} offsets, {} agent users",
            streams.len(),
            offsets.len(),
            agent.num_users()
        )));
    }
    for (s, &off) in streams.iter().zip(offsets) {
        if off + horizon > s.len() {
            return Err(Error::StreamExhausted {
                stream: s.stream_id.clone(),
                needed: off + horizon,
                available: s.len(),
            });
        }
    }
    let mut records = Vec::with_capacity(horizon * streams.len());
    for t in 0..horizon {
        for (i, s) in streams.iter().enumerate() {
            let row = offsets[i] + t;
            let (context, _) = corrupt_features(&s.features[row], mode, corruption_rng);
            let decision = agent.select(i, &context, t as u64 + 1, agent_rng)?;
            let label = s.labels[row];
            let reward = (decision.action == label) as u8 as f64;
            agent.update(i, &context, &decision, reward, t as u64 + 1)?;
            records.push(ReplayRecord {
                stream: i,
                t: t + 1,
                action: decision.action,
                label,
                reward,
                policy: decision.policy,
                pb_cb: decision.pb_cb,
            });
        }
        agent.end_round()?;
    }
    Ok(records)
}

/// Synthetic drifting stream with `num_classes` labels visited cyclically.
///
/// Segments last 60 to 240 rows. Feature `j < num_classes` is high for the
/// active class; their levels drift slowly with a sinusoid. One extra feature
/// carries pure noise.
pub fn synthetic_drift_stream(len: usize, num_classes: usize, rng: &mut SimRng) -> LabeledStream {
    use rand_distr::{Distribution, Normal};
    let noise = Normal::new(0.0, 0.12).expect("valid std");
    let mut labels = Vec::with_capacity(len);
    let mut class = 0;
    while labels.len() < len {
        let seg = rng.random_range(60..=240);
        labels.extend(std::iter::repeat_n(class, seg.min(len - labels.len())));
        class = (class + 1) % num_classes;
    }
    let features = labels
        .iter()
        .enumerate()
        .map(|(t, &c)| {
            let drift = 0.1 * (t as f64 / 700.0).sin();
            let mut row: Vec<f64> = (0..num_classes)
                .map(|j| {
                    let level = if j == c { 0.7 } else { 0.25 } + drift;
                    (level + noise.sample(rng)).clamp(0.0, 1.0)
                })
                .collect();
            row.push(rng.random::<f64>());
            row
        })
        .collect();
    LabeledStream {
        stream_id: "drift".into(),
        features,
        labels,
    }
}

/// Writes a stream in the ingest format (`f0..f{d-1},label,stream_id`, 1-based labels).
pub fn write_stream_csv<W: std::io::Write>(streams: &[LabeledStream], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = streams.first().map_or(0, LabeledStream::dimension);
    let mut header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    header.push("stream_id".into());
    w.write_record(&header)?;
    for s in streams {
        for (row, &label) in s.features.iter().zip(&s.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:.6}")).collect();
            rec.push((label + 1).to_string());
            rec.push(s.stream_id.clone());
            w.write_record(&rec)?;
        }
    }
    w.flush()
}

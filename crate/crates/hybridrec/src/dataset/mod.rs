//! Interaction ingestion and scoring: event scores, per-pair aggregation,
//! confidence weighting, per-visitor normalization, popularity-percentile
//! reduction, matrix materialization and de-normalized training rows.

pub mod io;
pub mod stats;
pub mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

/// Sequence slot filler for visitors with fewer than `m` devices.
pub const PAD_TOKEN: &str = "<PAD>";
/// Identifier used for unknown visitors/devices (cold start).
pub const UNK_TOKEN: &str = "<UNK>";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("percentile must lie strictly between 0 and 100, got {0}")]
    InvalidPercentile(f64),
    #[error("no aggregates to reduce")]
    EmptyAggregates,
    #[error("duplicate aggregate for ({visitor}, {device})")]
    DuplicatePair { visitor: String, device: String },
    #[error("aggregate for ({visitor}, {device}) is missing its {field} score")]
    UnsetScore {
        visitor: String,
        device: String,
        field: &'static str,
    },
    #[error("split needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    InvalidFraction(f64),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EventType {
    View,
    Cart,
    Order,
}

impl EventType {
    pub fn parse(s: &str) -> Option<EventType> {
        match s {
            "view" => Some(EventType::View),
            "cart" => Some(EventType::Cart),
            "order" => Some(EventType::Order),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::View => "view",
            EventType::Cart => "cart",
            EventType::Order => "order",
        }
    }
}

/// Fixed interaction-importance mapping: view 0.02, cart 0.04, order 1.0.
pub fn event_score(event_type: EventType) -> f64 {
    match event_type {
        EventType::View => 0.02,
        EventType::Cart => 0.04,
        EventType::Order => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InteractionEvent {
    pub visitor_id: String,
    pub device_id: String,
    pub event_type: EventType,
    pub timestamp: u64,
}

/// Per (visitor, device) rollup. `weighted_score` and `normalized_score`
/// start unset and are filled by [`weight_scores`] and [`normalize_scores`].
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionAggregate {
    pub visitor_id: String,
    pub device_id: String,
    pub hits: u64,
    pub cum_score: f64,
    pub avg_score: f64,
    pub weighted_score: Option<f64>,
    pub normalized_score: Option<f64>,
}

/// Groups events into one aggregate per distinct (visitor, device) pair,
/// ordered lexicographically by (visitor, device).
pub fn aggregate(events: &[InteractionEvent]) -> Vec<InteractionAggregate> {
    let mut acc: BTreeMap<(&str, &str), (u64, f64)> = BTreeMap::new();
    for e in events {
        let entry = acc
            .entry((e.visitor_id.as_str(), e.device_id.as_str()))
            .or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += event_score(e.event_type);
    }
    acc.into_iter()
        .map(|((v, d), (hits, cum))| InteractionAggregate {
            visitor_id: v.to_string(),
            device_id: d.to_string(),
            hits,
            cum_score: cum,
            avg_score: cum / hits as f64,
            weighted_score: None,
            normalized_score: None,
        })
        .collect()
}

/// Total hits per device across all visitors.
fn device_hit_totals(aggs: &[InteractionAggregate]) -> BTreeMap<String, u64> {
    let mut totals: BTreeMap<String, u64> = BTreeMap::new();
    for a in aggs {
        *totals.entry(a.device_id.clone()).or_insert(0) += a.hits;
    }
    totals
}

fn median_u64(mut values: Vec<u64>) -> f64 {
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] as f64 + values[n / 2] as f64) / 2.0
    }
}

/// Shrinks each pair's average score toward the global mean event score:
///
/// `weighted(u,d) = h_d/(h_d+H) * avg(u,d) + H/(h_d+H) * g`
///
/// where `h_d` is the device's total hits over all visitors, `H` the median
/// of device hit totals and `g` the global mean event score. Devices with few
/// interactions are pulled toward the global mean; heavily interacted devices
/// keep their observed average.
pub fn weight_scores(aggs: &mut [InteractionAggregate]) {
    if aggs.is_empty() {
        return;
    }
    let totals = device_hit_totals(aggs);
    let pivot = median_u64(totals.values().copied().collect());
    let total_hits: u64 = aggs.iter().map(|a| a.hits).sum();
    let total_cum: f64 = aggs.iter().map(|a| a.cum_score).sum();
    let global_mean = total_cum / total_hits as f64;
    for a in aggs.iter_mut() {
        let h_d = totals[&a.device_id] as f64;
        let w = h_d / (h_d + pivot);
        a.weighted_score = Some(w * a.avg_score + (1.0 - w) * global_mean);
    }
}

/// Scales each weighted score by the visitor's attention share
/// `hits(u,d) / t_u` where `t_u` is the visitor's total event count, keeping
/// every normalized score within `[0, weighted] ⊆ [0, 1]`.
pub fn normalize_scores(aggs: &mut [InteractionAggregate]) {
    let mut visitor_totals: BTreeMap<&str, u64> = BTreeMap::new();
    for a in aggs.iter() {
        *visitor_totals.entry(a.visitor_id.as_str()).or_insert(0) += a.hits;
    }
    let visitor_totals: BTreeMap<String, u64> = visitor_totals
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    for a in aggs.iter_mut() {
        let weighted = a
            .weighted_score
            .expect("normalize_scores requires weighted scores to be set");
        let t_u = visitor_totals[&a.visitor_id] as f64;
        a.normalized_score = Some(weighted * a.hits as f64 / t_u);
    }
}

/// Nearest-rank percentile over sorted values: the smallest value such that
/// at least `p` percent of the distribution is at or below it.
pub fn nearest_rank_percentile(sorted: &[u64], percentile: f64) -> u64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Clone, Debug)]
pub struct ReductionOutcome {
    pub aggregates: Vec<InteractionAggregate>,
    pub threshold: u64,
    pub devices_before: usize,
    pub devices_after: usize,
    pub visitors_before: usize,
    pub visitors_after: usize,
}

/// Keeps only devices whose total hits reach the given percentile of the
/// device-hits distribution, then drops visitors left without interactions.
pub fn reduce_by_percentile(
    aggs: &[InteractionAggregate],
    percentile: f64,
) -> Result<ReductionOutcome, DatasetError> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(DatasetError::InvalidPercentile(percentile));
    }
    if aggs.is_empty() {
        return Err(DatasetError::EmptyAggregates);
    }
    let totals = device_hit_totals(aggs);
    let mut sorted: Vec<u64> = totals.values().copied().collect();
    sorted.sort_unstable();
    let threshold = nearest_rank_percentile(&sorted, percentile);
    let devices_before = totals.len();
    let visitors_before = aggs
        .iter()
        .map(|a| a.visitor_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let kept: Vec<InteractionAggregate> = aggs
        .iter()
        .filter(|a| totals[a.device_id.as_str()] >= threshold)
        .cloned()
        .collect();
    let devices_after = kept
        .iter()
        .map(|a| a.device_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    let visitors_after = kept
        .iter()
        .map(|a| a.visitor_id.as_str())
        .collect::<std::collections::BTreeSet<_>>()
        .len();
    Ok(ReductionOutcome {
        aggregates: kept,
        threshold,
        devices_before,
        devices_after,
        visitors_before,
        visitors_after,
    })
}

/// Visitors-by-devices matrix of normalized scores, zero where a pair never
/// interacted. Row and column order is lexicographic over the ids.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub visitor_index: Vec<String>,
    pub device_index: Vec<String>,
    values: Vec<f64>, // row-major, rows = visitors
}

impl InteractionMatrix {
    pub fn new(visitor_index: Vec<String>, device_index: Vec<String>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), visitor_index.len() * device_index.len());
        InteractionMatrix {
            visitor_index,
            device_index,
            values,
        }
    }

    pub fn visitors(&self) -> usize {
        self.visitor_index.len()
    }

    pub fn devices(&self) -> usize {
        self.device_index.len()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.devices() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let d = self.devices();
        &self.values[row * d..(row + 1) * d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn visitor_pos(&self, id: &str) -> Option<usize> {
        self.visitor_index.binary_search_by(|v| v.as_str().cmp(id)).ok()
    }

    pub fn device_pos(&self, id: &str) -> Option<usize> {
        self.device_index.binary_search_by(|d| d.as_str().cmp(id)).ok()
    }
}

/// Materializes the interaction matrix from normalized aggregates. Missing
/// pairs default to 0; duplicate pairs are rejected.
pub fn build_matrix(aggs: &[InteractionAggregate]) -> Result<InteractionMatrix, DatasetError> {
    let mut visitors: Vec<&str> = aggs.iter().map(|a| a.visitor_id.as_str()).collect();
    visitors.sort_unstable();
    visitors.dedup();
    let mut devices: Vec<&str> = aggs.iter().map(|a| a.device_id.as_str()).collect();
    devices.sort_unstable();
    devices.dedup();
    let (nv, nd) = (visitors.len(), devices.len());
    let mut values = vec![0.0; nv * nd];
    let mut seen = vec![false; nv * nd];
    for a in aggs {
        let score = a.normalized_score.ok_or_else(|| DatasetError::UnsetScore {
            visitor: a.visitor_id.clone(),
            device: a.device_id.clone(),
            field: "normalized",
        })?;
        let r = visitors.binary_search(&a.visitor_id.as_str()).unwrap();
        let c = devices.binary_search(&a.device_id.as_str()).unwrap();
        if seen[r * nd + c] {
            return Err(DatasetError::DuplicatePair {
                visitor: a.visitor_id.clone(),
                device: a.device_id.clone(),
            });
        }
        seen[r * nd + c] = true;
        values[r * nd + c] = score;
    }
    Ok(InteractionMatrix::new(
        visitors.into_iter().map(String::from).collect(),
        devices.into_iter().map(String::from).collect(),
        values,
    ))
}

/// Named numeric feature vectors keyed by entity id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub columns: Vec<String>,
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn width(&self) -> usize {
        self.columns.len()
    }

    /// Column means over present rows; all zeros when the table is empty.
    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.width()];
        if self.rows.is_empty() {
            return means;
        }
        for row in self.rows.values() {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.len() as f64;
        for m in &mut means {
            *m /= n;
        }
        means
    }
}

/// One-row-per-visitor training input. `feature_vector` is imputed but not
/// yet standardized; [`FeatureStats`] handles that with train-split
/// statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DenormalizedRow {
    pub visitor_id: String,
    pub device_sequence: Vec<String>,
    pub feature_vector: Vec<f64>,
    pub target_row: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct DenormalizeReport {
    pub imputed_visitors: usize,
    pub imputed_devices: usize,
}

/// Builds one row per matrix visitor: device sequence ordered by first-event
/// time ascending (most recent `m` kept, left-padded with [`PAD_TOKEN`]),
/// the visitor's matrix row as target, and visitor features concatenated with
/// the mean feature vector of the devices the visitor interacted with.
pub fn denormalize(
    matrix: &InteractionMatrix,
    events: &[InteractionEvent],
    m: usize,
    visitor_features: &FeatureTable,
    device_features: &FeatureTable,
) -> (Vec<DenormalizedRow>, DenormalizeReport) {
    assert!(m >= 1, "sequence length m must be >= 1");
    let mut report = DenormalizeReport::default();
    // First event time per (visitor, device) restricted to matrix entries.
    let mut first_seen: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for e in events {
        let (Some(r), Some(c)) = (
            matrix.visitor_pos(&e.visitor_id),
            matrix.device_pos(&e.device_id),
        ) else {
            continue;
        };
        let t = first_seen.entry((r, c)).or_insert(u64::MAX);
        *t = (*t).min(e.timestamp);
    }
    let mut per_visitor: Vec<Vec<(u64, usize)>> = vec![Vec::new(); matrix.visitors()];
    for (&(r, c), &t) in &first_seen {
        per_visitor[r].push((t, c));
    }
    let visitor_means = visitor_features.column_means();
    let device_means = device_features.column_means();
    let mut rows = Vec::with_capacity(matrix.visitors());
    for (r, visitor_id) in matrix.visitor_index.iter().enumerate() {
        let mut hist = per_visitor[r].clone();
        hist.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| matrix.device_index[a.1].cmp(&matrix.device_index[b.1]))
        });
        let start = hist.len().saturating_sub(m);
        let recent = &hist[start..];
        let mut device_sequence = vec![PAD_TOKEN.to_string(); m - recent.len()];
        device_sequence.extend(recent.iter().map(|&(_, c)| matrix.device_index[c].clone()));

        let vfeat = match visitor_features.rows.get(visitor_id) {
            Some(row) => row.clone(),
            None => {
                report.imputed_visitors += 1;
                visitor_means.clone()
            }
        };
        let mut dfeat = vec![0.0; device_features.width()];
        if !hist.is_empty() {
            for &(_, c) in &hist {
                let row = match device_features.rows.get(&matrix.device_index[c]) {
                    Some(row) => row.clone(),
                    None => {
                        report.imputed_devices += 1;
                        device_means.clone()
                    }
                };
                for (d, v) in dfeat.iter_mut().zip(&row) {
                    *d += v;
                }
            }
            let n = hist.len() as f64;
            for d in &mut dfeat {
                *d /= n;
            }
        } else {
            dfeat = device_means.clone();
        }
        let mut feature_vector = vfeat;
        feature_vector.extend(dfeat);
        rows.push(DenormalizedRow {
            visitor_id: visitor_id.clone(),
            device_sequence,
            feature_vector,
            target_row: matrix.row(r).to_vec(),
        });
    }
    (rows, report)
}

/// Seeded, disjoint, exhaustive train/validation split.
pub fn split(
    rows: Vec<DenormalizedRow>,
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<DenormalizedRow>, Vec<DenormalizedRow>), DatasetError> {
    if rows.len() < 2 {
        return Err(DatasetError::TooFewRows(rows.len()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::InvalidFraction(train_fraction));
    }
    let n = rows.len();
    let train_count = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let pick: std::collections::BTreeSet<usize> = order[..train_count].iter().copied().collect();
    let mut train = Vec::with_capacity(train_count);
    let mut valid = Vec::with_capacity(n - train_count);
    for (i, row) in rows.into_iter().enumerate() {
        if pick.contains(&i) {
            train.push(row);
        } else {
            valid.push(row);
        }
    }
    Ok((train, valid))
}

/// Per-column z-score statistics, fitted on training rows only.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(rows: &[DenormalizedRow]) -> FeatureStats {
        assert!(!rows.is_empty(), "cannot fit feature stats on no rows");
        let width = rows[0].feature_vector.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(&r.feature_vector) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; width];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(&r.feature_vector).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0 // constant column, leave centered values at zero
                }
            })
            .collect();
        FeatureStats { mean, std }
    }

    pub fn apply_vec(&self, features: &mut [f64]) {
        for ((v, m), s) in features.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn apply(&self, rows: &mut [DenormalizedRow]) {
        for r in rows {
            self.apply_vec(&mut r.feature_vector);
        }
    }
}

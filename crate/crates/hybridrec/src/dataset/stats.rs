//! Descriptive statistics for the prep report: hits / average-score
//! histograms and the correlation among hits, average, weighted and
//! normalized scores.

use std::fmt::Write as _;

use super::InteractionAggregate;

#[derive(Clone, Debug)]
pub struct Histogram {
    pub label: String,
    pub edges: Vec<f64>, // len = buckets + 1
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn build(label: &str, values: &[f64], buckets: usize) -> Histogram {
        assert!(buckets >= 1);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() || lo == hi {
            (lo.min(0.0), lo.max(0.0) + 1.0)
        } else {
            (lo, hi)
        };
        let width = (hi - lo) / buckets as f64;
        let edges: Vec<f64> = (0..=buckets).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0u64; buckets];
        for &v in values {
            let idx = (((v - lo) / width) as usize).min(buckets - 1);
            counts[idx] += 1;
        }
        Histogram {
            label: label.to_string(),
            edges,
            counts,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_lo,bucket_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(out, "{:.6},{:.6},{}", self.edges[i], self.edges[i + 1], c);
        }
        out
    }
}

/// Pearson correlation; constant columns correlate 0 with everything
/// (diagonal stays 1).
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    if xs.is_empty() {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx <= 1e-24 || vy <= 1e-24 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

pub const SCORE_COLUMNS: [&str; 4] = ["hits", "avg_score", "weighted_score", "normalized_score"];

#[derive(Clone, Debug)]
pub struct PrepStats {
    pub hits_histogram: Histogram,
    pub avg_histogram: Histogram,
    /// 4x4 row-major correlation over [`SCORE_COLUMNS`].
    pub correlation: Vec<f64>,
}

pub fn prep_stats(aggs: &[InteractionAggregate]) -> PrepStats {
    let hits: Vec<f64> = aggs.iter().map(|a| a.hits as f64).collect();
    let avg: Vec<f64> = aggs.iter().map(|a| a.avg_score).collect();
    let weighted: Vec<f64> = aggs.iter().map(|a| a.weighted_score.unwrap_or(0.0)).collect();
    let normalized: Vec<f64> = aggs
        .iter()
        .map(|a| a.normalized_score.unwrap_or(0.0))
        .collect();
    let columns = [&hits, &avg, &weighted, &normalized];
    let mut correlation = vec![0.0; 16];
    for i in 0..4 {
        for j in 0..4 {
            correlation[i * 4 + j] = if i == j {
                1.0
            } else {
                pearson(columns[i], columns[j])
            };
        }
    }
    PrepStats {
        hits_histogram: Histogram::build("hits", &hits, 10),
        avg_histogram: Histogram::build("avg_score", &avg, 10),
        correlation,
    }
}

impl PrepStats {
    pub fn correlation_csv(&self) -> String {
        let mut out = String::from("score,");
        out.push_str(&SCORE_COLUMNS.join(","));
        out.push('\n');
        for i in 0..4 {
            out.push_str(SCORE_COLUMNS[i]);
            for j in 0..4 {
                let _ = write!(out, ",{:.6}", self.correlation[i * 4 + j]);
            }
            out.push('\n');
        }
        out
    }

    pub fn correlation_at(&self, a: &str, b: &str) -> f64 {
        let i = SCORE_COLUMNS.iter().position(|&c| c == a).unwrap();
        let j = SCORE_COLUMNS.iter().position(|&c| c == b).unwrap();
        self.correlation[i * 4 + j]
    }
}

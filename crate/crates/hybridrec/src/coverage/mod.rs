//! Device-device similarity, thresholded neighborhoods and budgeted
//! recommendation-coverage maximization (greedy approximation plus an exact
//! solver for small instances).

use thiserror::Error;

use crate::als::FactorModel;
use crate::dataset::InteractionMatrix;

#[derive(Debug, Error)]
pub enum CoverageError {
    #[error("lambda_n must lie in [-1, 1], got {0}")]
    BadThreshold(f64),
    #[error("unknown device `{0}`")]
    UnknownDevice(String),
    #[error("exact solver is limited to {max} devices, got {got}; use the greedy solver")]
    TooManyDevices { max: usize, got: usize },
    #[error("budget k must be >= 1")]
    ZeroBudget,
}

/// Comparisons against the threshold tolerate this much slack so that
/// self-similarity (1 up to rounding) lands inside a lambda_n = 1.0
/// neighborhood.
pub const SIM_EPS: f64 = 1e-9;

pub const EXACT_DEVICE_LIMIT: usize = 20;

/// Dense device-device cosine similarities plus the per-device neighborhoods
/// induced by the `lambda_n` threshold.
#[derive(Clone, Debug)]
pub struct NeighborhoodIndex {
    pub device_index: Vec<String>,
    pub lambda_n: f64,
    similarity: Vec<f64>,          // D x D row-major
    neighborhoods: Vec<Vec<usize>>, // sorted device positions
}

impl NeighborhoodIndex {
    pub fn devices(&self) -> usize {
        self.device_index.len()
    }

    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        self.similarity[a * self.devices() + b]
    }

    pub fn neighborhood(&self, d: usize) -> &[usize] {
        &self.neighborhoods[d]
    }

    pub fn device_pos(&self, id: &str) -> Option<usize> {
        self.device_index.iter().position(|x| x == id)
    }
}

fn build_from_vectors(
    device_index: Vec<String>,
    rows: &[Vec<f64>],
    lambda_n: f64,
) -> Result<NeighborhoodIndex, CoverageError> {
    if !(-1.0..=1.0).contains(&lambda_n) {
        return Err(CoverageError::BadThreshold(lambda_n));
    }
    let d = rows.len();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut similarity = vec![0.0; d * d];
    for i in 0..d {
        for j in i..d {
            let sim = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                dot / (norms[i] * norms[j])
            } else {
                0.0 // zero factor rows are similar to nothing
            };
            similarity[i * d + j] = sim;
            similarity[j * d + i] = sim;
        }
    }
    let neighborhoods = (0..d)
        .map(|i| {
            (0..d)
                .filter(|&j| similarity[i * d + j] >= lambda_n - SIM_EPS)
                .collect()
        })
        .collect();
    Ok(NeighborhoodIndex {
        device_index,
        lambda_n,
        similarity,
        neighborhoods,
    })
}

/// Cosine similarity over ALS item-factor rows.
pub fn build_index(model: &FactorModel, lambda_n: f64) -> Result<NeighborhoodIndex, CoverageError> {
    let rows: Vec<Vec<f64>> = (0..model.device_index.len())
        .map(|d| model.item_row(d).to_vec())
        .collect();
    build_from_vectors(model.device_index.clone(), &rows, lambda_n)
}

/// Cosine similarity over raw interaction-matrix columns, for use without a
/// trained factor model.
pub fn build_index_from_matrix(
    matrix: &InteractionMatrix,
    lambda_n: f64,
) -> Result<NeighborhoodIndex, CoverageError> {
    let d = matrix.devices();
    let rows: Vec<Vec<f64>> = (0..d)
        .map(|col| (0..matrix.visitors()).map(|v| matrix.get(v, col)).collect())
        .collect();
    build_from_vectors(matrix.device_index.clone(), &rows, lambda_n)
}

/// Recommendation coverage: cardinality of the union of the selected
/// devices' neighborhoods.
pub fn coverage(index: &NeighborhoodIndex, selected: &[usize]) -> Result<usize, CoverageError> {
    let d = index.devices();
    let mut covered = vec![false; d];
    for &s in selected {
        if s >= d {
            return Err(CoverageError::UnknownDevice(format!("#{s}")));
        }
        for &n in index.neighborhood(s) {
            covered[n] = true;
        }
    }
    Ok(covered.iter().filter(|&&c| c).count())
}

#[derive(Clone, Debug)]
pub struct GreedyPick {
    pub device: usize,
    pub marginal_gain: usize,
    pub cumulative_coverage: usize,
}

#[derive(Clone, Debug)]
pub struct GreedyOutcome {
    pub picks: Vec<GreedyPick>,
    pub coverage: usize,
    pub truncated_budget: bool,
}

impl GreedyOutcome {
    pub fn selection(&self) -> Vec<usize> {
        self.picks.iter().map(|p| p.device).collect()
    }
}

/// Standard greedy maximum-coverage: repeatedly add the device with the
/// largest marginal gain (ties to the lowest device index), stopping early
/// once no device adds anything. A first-line `seed_device` has its
/// neighborhood pre-counted as covered and does not consume budget.
pub fn greedy_pdrc(
    index: &NeighborhoodIndex,
    k: usize,
    seed_device: Option<usize>,
) -> Result<GreedyOutcome, CoverageError> {
    if k == 0 {
        return Err(CoverageError::ZeroBudget);
    }
    let d = index.devices();
    let truncated_budget = k > d;
    let budget = k.min(d);
    let mut covered = vec![false; d];
    let mut covered_count = 0usize;
    if let Some(s) = seed_device {
        if s >= d {
            return Err(CoverageError::UnknownDevice(format!("#{s}")));
        }
        for &n in index.neighborhood(s) {
            if !covered[n] {
                covered[n] = true;
                covered_count += 1;
            }
        }
    }
    let mut picked = vec![false; d];
    let mut picks = Vec::new();
    for _ in 0..budget {
        let mut best: Option<(usize, usize)> = None; // (gain, device)
        for cand in 0..d {
            if picked[cand] {
                continue;
            }
            let gain = index
                .neighborhood(cand)
                .iter()
                .filter(|&&n| !covered[n])
                .count();
            let better = match best {
                None => true,
                Some((bg, _)) => gain > bg,
            };
            if better {
                best = Some((gain, cand));
            }
        }
        match best {
            Some((gain, device)) if gain > 0 => {
                picked[device] = true;
                for &n in index.neighborhood(device) {
                    if !covered[n] {
                        covered[n] = true;
                        covered_count += 1;
                    }
                }
                picks.push(GreedyPick {
                    device,
                    marginal_gain: gain,
                    cumulative_coverage: covered_count,
                });
            }
            _ => break, // zero marginal gain everywhere
        }
    }
    Ok(GreedyOutcome {
        picks,
        coverage: covered_count,
        truncated_budget,
    })
}

/// Exhaustive search over all subsets of size <= k; among optimal subsets the
/// lexicographically smallest wins. Limited to [`EXACT_DEVICE_LIMIT`] devices.
pub fn exact_pdrc(
    index: &NeighborhoodIndex,
    k: usize,
) -> Result<(Vec<usize>, usize), CoverageError> {
    if k == 0 {
        return Err(CoverageError::ZeroBudget);
    }
    let d = index.devices();
    if d > EXACT_DEVICE_LIMIT {
        return Err(CoverageError::TooManyDevices {
            max: EXACT_DEVICE_LIMIT,
            got: d,
        });
    }
    // Neighborhoods as bitmasks; subsets enumerated in lexicographic order
    // (by prefix), so the first subset achieving the best coverage is the
    // lexicographically smallest optimum of its size class; shorter prefixes
    // are visited before their extensions.
    let masks: Vec<u32> = (0..d)
        .map(|i| {
            index
                .neighborhood(i)
                .iter()
                .fold(0u32, |m, &n| m | (1 << n))
        })
        .collect();
    let budget = k.min(d);
    let mut best_cov = 0usize;
    let mut best_sel: Vec<usize> = Vec::new();
    let mut current: Vec<usize> = Vec::new();

    #[allow(clippy::too_many_arguments)]
    fn visit(
        start: usize,
        d: usize,
        budget: usize,
        masks: &[u32],
        union: u32,
        current: &mut Vec<usize>,
        best_cov: &mut usize,
        best_sel: &mut Vec<usize>,
    ) {
        let cov = union.count_ones() as usize;
        if cov > *best_cov {
            *best_cov = cov;
            *best_sel = current.clone();
        }
        if current.len() == budget {
            return;
        }
        for next in start..d {
            current.push(next);
            visit(
                next + 1,
                d,
                budget,
                masks,
                union | masks[next],
                current,
                best_cov,
                best_sel,
            );
            current.pop();
        }
    }

    visit(
        0,
        d,
        budget,
        &masks,
        0,
        &mut current,
        &mut best_cov,
        &mut best_sel,
    );
    Ok((best_sel, best_cov))
}

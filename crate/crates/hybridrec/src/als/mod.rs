//! Implicit-feedback Alternating Least Squares.
//!
//! Interactions are turned into binary preferences with confidences
//! `c = 1 + alpha * r` over the normalized scores `r`; each sweep solves the
//! regularized normal equations row by row, either directly (Cholesky) or by
//! conjugate gradient without materializing the per-row confidence matrix.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::dataset::InteractionMatrix;
use crate::embeddings::EmbeddingTable;

#[derive(Debug, Error)]
pub enum AlsError {
    #[error("interaction matrix is empty")]
    EmptyMatrix,
    #[error("invalid hyper-parameter: {0}")]
    BadHyper(String),
    #[error("non-finite {side} factors after sweep {sweep}")]
    NonFinite { sweep: usize, side: &'static str },
    #[error("singular system in direct solve")]
    Singular,
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowSolver {
    Direct,
    Cg,
}

impl RowSolver {
    pub fn parse(s: &str) -> Option<RowSolver> {
        match s {
            "direct" => Some(RowSolver::Direct),
            "cg" => Some(RowSolver::Cg),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RowSolver::Direct => "direct",
            RowSolver::Cg => "cg",
        }
    }
}

#[derive(Clone, Debug)]
pub struct AlsHyper {
    pub factors: usize,
    pub alpha: f64,
    pub lambda_reg: f64,
    pub iterations: usize,
    pub cg_steps: usize,
    pub solver: RowSolver,
    pub seed: u64,
}

impl Default for AlsHyper {
    fn default() -> Self {
        AlsHyper {
            factors: 16,
            alpha: 40.0,
            lambda_reg: 0.01,
            iterations: 15,
            cg_steps: 3,
            solver: RowSolver::Cg,
            seed: 1,
        }
    }
}

/// Learned visitor/device factor matrices plus the hyper-parameters and the
/// id indices they were trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorModel {
    pub visitor_index: Vec<String>,
    pub device_index: Vec<String>,
    pub user_factors: Vec<f64>, // |V| x f row-major
    pub item_factors: Vec<f64>, // |D| x f row-major
    pub factors: usize,
    pub alpha: f64,
    pub lambda_reg: f64,
    /// Implicit objective J after each full sweep.
    pub objective_trace: Vec<f64>,
}

impl FactorModel {
    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_factors[u * self.factors..(u + 1) * self.factors]
    }

    pub fn item_row(&self, d: usize) -> &[f64] {
        &self.item_factors[d * self.factors..(d + 1) * self.factors]
    }
}

/// Dot product of the visitor and device factor rows.
pub fn predict(model: &FactorModel, visitor_row: usize, device_col: usize) -> f64 {
    assert!(
        visitor_row < model.visitor_index.len(),
        "visitor row {visitor_row} out of range"
    );
    assert!(
        device_col < model.device_index.len(),
        "device col {device_col} out of range"
    );
    model
        .user_row(visitor_row)
        .iter()
        .zip(model.item_row(device_col))
        .map(|(x, y)| x * y)
        .sum()
}

/// Dense reconstruction X Y^T clamped to [0, 1] so it can serve as a
/// regression target.
pub fn reconstruct(model: &FactorModel) -> InteractionMatrix {
    let (nv, nd) = (model.visitor_index.len(), model.device_index.len());
    let mut values = Vec::with_capacity(nv * nd);
    for u in 0..nv {
        for d in 0..nd {
            values.push(predict(model, u, d).clamp(0.0, 1.0));
        }
    }
    InteractionMatrix::new(
        model.visitor_index.clone(),
        model.device_index.clone(),
        values,
    )
}

/// Factor rows as embedding tables keyed by id, with zero UNK/PAD rows
/// appended for cold-start lookups.
pub fn export_embeddings(model: &FactorModel) -> (EmbeddingTable, EmbeddingTable) {
    let visitors = EmbeddingTable::from_rows(
        model.factors,
        model
            .visitor_index
            .iter()
            .enumerate()
            .map(|(u, id)| (id.clone(), model.user_row(u).to_vec()))
            .collect(),
    );
    let devices = EmbeddingTable::from_rows(
        model.factors,
        model
            .device_index
            .iter()
            .enumerate()
            .map(|(d, id)| (id.clone(), model.item_row(d).to_vec()))
            .collect(),
    );
    (visitors, devices)
}

/// Solves `(gram + lambda I) x = rhs` by Cholesky decomposition. `gram` is a
/// symmetric positive semi-definite `f x f` matrix in row-major order.
pub fn solve_row_direct(gram: &[f64], rhs: &[f64], lambda_reg: f64) -> Result<Vec<f64>, AlsError> {
    let f = rhs.len();
    assert_eq!(gram.len(), f * f, "gram must be f x f");
    let mut a = gram.to_vec();
    for i in 0..f {
        a[i * f + i] += lambda_reg;
    }
    // In-place lower Cholesky.
    let mut l = vec![0.0; f * f];
    for i in 0..f {
        for j in 0..=i {
            let mut sum = a[i * f + j];
            for k in 0..j {
                sum -= l[i * f + k] * l[j * f + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(AlsError::Singular);
                }
                l[i * f + i] = sum.sqrt();
            } else {
                l[i * f + j] = sum / l[j * f + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; f];
    for i in 0..f {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[i * f + k] * y[k];
        }
        y[i] = sum / l[i * f + i];
    }
    let mut x = vec![0.0; f];
    for i in (0..f).rev() {
        let mut sum = y[i];
        for k in i + 1..f {
            sum -= l[k * f + i] * x[k];
        }
        x[i] = sum / l[i * f + i];
    }
    Ok(x)
}

/// Sparse view of one row's observed interactions: `(item index, c - 1)`
/// pairs over the shared factor matrix.
pub struct ScaledItems<'a> {
    pub item_factors: &'a [f64],
    pub factors: usize,
    pub observed: &'a [(usize, f64)],
}

impl ScaledItems<'_> {
    /// `out = (gram_base + sum (c-1) y y^T + lambda I) v` without forming the
    /// full system matrix.
    fn matvec(&self, gram_base: &[f64], lambda_reg: f64, v: &[f64], out: &mut [f64]) {
        let f = self.factors;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &gram_base[i * f..(i + 1) * f];
            *o = row.iter().zip(v).map(|(g, x)| g * x).sum::<f64>() + lambda_reg * v[i];
        }
        for &(d, scale) in self.observed {
            let y = &self.item_factors[d * f..(d + 1) * f];
            let proj: f64 = y.iter().zip(v).map(|(a, b)| a * b).sum();
            let coeff = scale * proj;
            for (o, &yv) in out.iter_mut().zip(y) {
                *o += coeff * yv;
            }
        }
    }
}

/// Conjugate gradient on the same system as [`solve_row_direct`], starting
/// from zero. Returns the solution and the residual norm after each
/// iteration (position 0 holds the initial residual, i.e. `|rhs|`).
pub fn solve_row_cg_trace(
    gram_base: &[f64],
    scaled_items: &ScaledItems<'_>,
    rhs: &[f64],
    lambda_reg: f64,
    cg_steps: usize,
) -> (Vec<f64>, Vec<f64>) {
    let f = rhs.len();
    let mut x = vec![0.0; f];
    let mut r = rhs.to_vec();
    let mut p = r.clone();
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let mut norms = vec![rs.sqrt()];
    let mut ap = vec![0.0; f];
    for _ in 0..cg_steps {
        if rs <= 1e-30 {
            norms.push(rs.sqrt());
            continue;
        }
        scaled_items.matvec(gram_base, lambda_reg, &p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        for ((xi, pi), (ri, api)) in x.iter_mut().zip(&p).zip(r.iter_mut().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        for (pi, &ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
        norms.push(rs.sqrt());
    }
    (x, norms)
}

pub fn solve_row_cg(
    gram_base: &[f64],
    scaled_items: &ScaledItems<'_>,
    rhs: &[f64],
    lambda_reg: f64,
    cg_steps: usize,
) -> Vec<f64> {
    solve_row_cg_trace(gram_base, scaled_items, rhs, lambda_reg, cg_steps).0
}

/// The regularized implicit objective
/// `J = sum c_ud (p_ud - x_u . y_d)^2 + lambda (sum |x|^2 + sum |y|^2)`.
pub fn objective(matrix: &InteractionMatrix, model: &FactorModel) -> f64 {
    let (nv, nd) = (matrix.visitors(), matrix.devices());
    let mut j = 0.0;
    for u in 0..nv {
        let row = matrix.row(u);
        for d in 0..nd {
            let r = row[d];
            let p = if r > 0.0 { 1.0 } else { 0.0 };
            let c = 1.0 + model.alpha * r;
            let e = p - predict(model, u, d);
            j += c * e * e;
        }
    }
    let reg: f64 = model.user_factors.iter().map(|v| v * v).sum::<f64>()
        + model.item_factors.iter().map(|v| v * v).sum::<f64>();
    j + model.lambda_reg * reg
}

/// `gram = F^T F` over the full factor matrix (the "base" term shared by all
/// rows in a sweep; per-row confidence corrections are added on top).
fn gram_matrix(factors: &[f64], rows: usize, f: usize) -> Vec<f64> {
    let mut gram = vec![0.0; f * f];
    for r in 0..rows {
        let row = &factors[r * f..(r + 1) * f];
        for i in 0..f {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            let dst = &mut gram[i * f..(i + 1) * f];
            for (g, &rj) in dst.iter_mut().zip(row) {
                *g += ri * rj;
            }
        }
    }
    gram
}

struct SweepSide<'a> {
    /// Observed (other index, normalized score) per row of this side.
    observed: Vec<Vec<(usize, f64)>>,
    other_factors: &'a [f64],
}

fn sweep(
    side: &SweepSide<'_>,
    own_factors: &mut [f64],
    hyper: &AlsHyper,
    f: usize,
) -> Result<(), AlsError> {
    let other_rows = side.other_factors.len() / f;
    let gram = gram_matrix(side.other_factors, other_rows, f);
    let mut rhs = vec![0.0; f];
    for (row, obs) in side.observed.iter().enumerate() {
        rhs.iter_mut().for_each(|v| *v = 0.0);
        let mut scaled: Vec<(usize, f64)> = Vec::with_capacity(obs.len());
        for &(other, r) in obs {
            let c = 1.0 + hyper.alpha * r;
            scaled.push((other, c - 1.0));
            let y = &side.other_factors[other * f..(other + 1) * f];
            for (b, &yv) in rhs.iter_mut().zip(y) {
                *b += c * yv;
            }
        }
        let items = ScaledItems {
            item_factors: side.other_factors,
            factors: f,
            observed: &scaled,
        };
        let x = match hyper.solver {
            RowSolver::Direct => {
                // Fold the confidence correction into a dense per-row gram.
                let mut a = gram.clone();
                for &(other, scale) in &scaled {
                    let y = &side.other_factors[other * f..(other + 1) * f];
                    for i in 0..f {
                        let yi = y[i] * scale;
                        let dst = &mut a[i * f..(i + 1) * f];
                        for (g, &yj) in dst.iter_mut().zip(y) {
                            *g += yi * yj;
                        }
                    }
                }
                solve_row_direct(&a, &rhs, hyper.lambda_reg)?
            }
            RowSolver::Cg => solve_row_cg(&gram, &items, &rhs, hyper.lambda_reg, hyper.cg_steps),
        };
        own_factors[row * f..(row + 1) * f].copy_from_slice(&x);
    }
    Ok(())
}

/// Alternating sweeps over user and item factors. The objective after each
/// full sweep is recorded in the returned model.
pub fn als_fit(matrix: &InteractionMatrix, hyper: &AlsHyper) -> Result<FactorModel, AlsError> {
    if matrix.visitors() == 0 || matrix.devices() == 0 {
        return Err(AlsError::EmptyMatrix);
    }
    if hyper.factors == 0 {
        return Err(AlsError::BadHyper("factors must be >= 1".into()));
    }
    if hyper.lambda_reg <= 0.0 {
        return Err(AlsError::BadHyper("lambda_reg must be > 0".into()));
    }
    let f = hyper.factors;
    let (nv, nd) = (matrix.visitors(), matrix.devices());
    let mut rng = ChaCha12Rng::seed_from_u64(hyper.seed);
    let scale = 0.05 / (f as f64).sqrt();
    let mut user_factors: Vec<f64> = (0..nv * f).map(|_| rng.random_range(-scale..scale)).collect();
    let mut item_factors: Vec<f64> = (0..nd * f).map(|_| rng.random_range(-scale..scale)).collect();

    let mut by_user: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    let mut by_item: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nd];
    for u in 0..nv {
        let row = matrix.row(u);
        for (d, &r) in row.iter().enumerate() {
            if r > 0.0 {
                by_user[u].push((d, r));
                by_item[d].push((u, r));
            }
        }
    }

    let mut model = FactorModel {
        visitor_index: matrix.visitor_index.clone(),
        device_index: matrix.device_index.clone(),
        user_factors: Vec::new(),
        item_factors: Vec::new(),
        factors: f,
        alpha: hyper.alpha,
        lambda_reg: hyper.lambda_reg,
        objective_trace: Vec::new(),
    };

    for iteration in 0..hyper.iterations {
        let user_side = SweepSide {
            observed: by_user.clone(),
            other_factors: &item_factors,
        };
        sweep(&user_side, &mut user_factors, hyper, f)?;
        if user_factors.iter().any(|v| !v.is_finite()) {
            return Err(AlsError::NonFinite {
                sweep: iteration + 1,
                side: "user",
            });
        }
        let item_side = SweepSide {
            observed: by_item.clone(),
            other_factors: &user_factors,
        };
        sweep(&item_side, &mut item_factors, hyper, f)?;
        if item_factors.iter().any(|v| !v.is_finite()) {
            return Err(AlsError::NonFinite {
                sweep: iteration + 1,
                side: "item",
            });
        }
        model.user_factors = user_factors.clone();
        model.item_factors = item_factors.clone();
        model.objective_trace.push(objective(matrix, &model));
    }
    model.user_factors = user_factors;
    model.item_factors = item_factors;
    Ok(model)
}

fn io_err(path: &Path, source: std::io::Error) -> AlsError {
    AlsError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_fail(path: &Path, line: usize, msg: impl Into<String>) -> AlsError {
    AlsError::Parse {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

/// Snapshot format:
///
/// ```text
/// alsmodel v1 f=<f> alpha=<a> lambda=<l>
/// users <count>
/// <id> <f decimals>
/// items <count>
/// <id> <f decimals>
/// ```
pub fn write_model(path: &Path, model: &FactorModel) -> Result<(), AlsError> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "alsmodel v1 f={} alpha={:.16e} lambda={:.16e}",
        model.factors, model.alpha, model.lambda_reg
    );
    let _ = writeln!(out, "users {}", model.visitor_index.len());
    for (u, id) in model.visitor_index.iter().enumerate() {
        out.push_str(id);
        for v in model.user_row(u) {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "items {}", model.device_index.len());
    for (d, id) in model.device_index.iter().enumerate() {
        out.push_str(id);
        for v in model.item_row(d) {
            let _ = write!(out, " {v:.16e}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_model(path: &Path) -> Result<FactorModel, AlsError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_fail(path, 1, "empty model file"))?;
    let rest = header
        .strip_prefix("alsmodel v1 f=")
        .ok_or_else(|| parse_fail(path, 1, format!("bad header `{header}`")))?;
    let (f_str, rest) = rest
        .split_once(" alpha=")
        .ok_or_else(|| parse_fail(path, 1, "missing alpha"))?;
    let (a_str, l_str) = rest
        .split_once(" lambda=")
        .ok_or_else(|| parse_fail(path, 1, "missing lambda"))?;
    let factors: usize = f_str.parse().map_err(|_| parse_fail(path, 1, "bad f"))?;
    let alpha: f64 = a_str.parse().map_err(|_| parse_fail(path, 1, "bad alpha"))?;
    let lambda_reg: f64 = l_str.parse().map_err(|_| parse_fail(path, 1, "bad lambda"))?;

    let read_section = |tag: &str,
                            lines: &mut std::iter::Enumerate<std::str::Lines<'_>>|
     -> Result<(Vec<String>, Vec<f64>), AlsError> {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| parse_fail(path, 0, format!("missing `{tag}` section")))?;
        let count: usize = line
            .strip_prefix(tag)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| parse_fail(path, lno + 1, format!("bad `{tag}` line: {line}")))?;
        let mut index = Vec::with_capacity(count);
        let mut factors_out = Vec::with_capacity(count * factors);
        for _ in 0..count {
            let (vlno, vline) = lines
                .next()
                .ok_or_else(|| parse_fail(path, 0, "truncated model"))?;
            let mut fields = vline.split_whitespace();
            let id = fields
                .next()
                .ok_or_else(|| parse_fail(path, vlno + 1, "missing id"))?;
            index.push(id.to_string());
            let mut n = 0;
            for fld in fields {
                let v: f64 = fld
                    .parse()
                    .map_err(|_| parse_fail(path, vlno + 1, format!("bad value `{fld}`")))?;
                factors_out.push(v);
                n += 1;
            }
            if n != factors {
                return Err(parse_fail(
                    path,
                    vlno + 1,
                    format!("expected {factors} factors, found {n}"),
                ));
            }
        }
        Ok((index, factors_out))
    };

    let (visitor_index, user_factors) = read_section("users ", &mut lines)?;
    let (device_index, item_factors) = read_section("items ", &mut lines)?;
    Ok(FactorModel {
        visitor_index,
        device_index,
        user_factors,
        item_factors,
        factors,
        alpha,
        lambda_reg,
        objective_trace: Vec::new(),
    })
}

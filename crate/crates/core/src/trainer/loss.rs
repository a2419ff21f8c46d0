//! Cosine InfoNCE with exact analytic gradients, in f64.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::NORM_EPS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Every catalog item is a candidate.
    #[default]
    FullBatch,
    /// Candidates are the batch's own targets.
    InBatch,
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("loss temperature must be positive, got {0}")]
    BadTemperature(f64),
    #[error("zero-norm {which} embedding at row {row}")]
    ZeroNorm { which: &'static str, row: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("target {target} out of range for {n_candidates} candidates")]
    TargetOutOfRange { target: u32, n_candidates: usize },
}

#[derive(Debug, Clone)]
pub struct InfoNceOutput {
    pub loss: f64,
    /// Gradient w.r.t. the raw (unnormalized) user rows.
    pub d_users: Array2<f64>,
    /// Gradient w.r.t. the raw candidate rows.
    pub d_items: Array2<f64>,
}

fn normalize(m: &ArrayView2<f64>, which: &'static str) -> Result<(Array2<f64>, Array1<f64>), LossError> {
    let norms = m.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    if let Some(row) = norms.iter().position(|&n| n == 0.0) {
        return Err(LossError::ZeroNorm { which, row });
    }
    let mut out = m.to_owned();
    for (mut r, &n) in out.rows_mut().into_iter().zip(&norms) {
        r /= n + NORM_EPS;
    }
    Ok((out, norms))
}

/// Backpropagates through `x / (‖x‖ + eps)`.
fn normalize_backward(x: &ArrayView2<f64>, norms: &Array1<f64>, g: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (((mut o, xr), gr), &n) in out.rows_mut().into_iter().zip(x.rows()).zip(g.rows()).zip(norms) {
        let d = n + NORM_EPS;
        let xg = xr.dot(&gr);
        o.assign(&(&gr / d - &(&xr * (xg / (n * d * d)))));
    }
    out
}

/// Mean over the batch of `−log softmax(cos(u_b, e_c)/T)` at the positive.
///
/// `full_batch`: `items` is the catalog and `targets[b]` indexes it.
/// `in_batch`: `items[b]` is the embedding of `targets[b]`; rows sharing a
/// target item are removed from each other's denominators.
pub fn infonce_loss(
    users: &ArrayView2<f64>,
    targets: &[u32],
    items: &ArrayView2<f64>,
    mode: LossMode,
    temperature: f64,
) -> Result<InfoNceOutput, LossError> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(LossError::BadTemperature(temperature));
    }
    let b = users.nrows();
    if targets.len() != b {
        return Err(LossError::Shape(format!("{} users but {} targets", b, targets.len())));
    }
    if users.ncols() != items.ncols() {
        return Err(LossError::Shape(format!("user dim {} vs item dim {}", users.ncols(), items.ncols())));
    }
    let c = items.nrows();
    let positive: Vec<usize> = match mode {
        LossMode::FullBatch => targets
            .iter()
            .map(|&t| {
                if (t as usize) < c {
                    Ok(t as usize)
                } else {
                    Err(LossError::TargetOutOfRange { target: t, n_candidates: c })
                }
            })
            .collect::<Result<_, _>>()?,
        LossMode::InBatch => {
            if c != b {
                return Err(LossError::Shape(format!("in-batch mode needs {b} candidate rows, got {c}")));
            }
            (0..b).collect()
        }
    };
    let (u, un) = normalize(users, "user")?;
    let (e, en) = normalize(items, "item")?;
    let logits = u.dot(&e.t()) / temperature;
    let mut g = Array2::<f64>::zeros((b, c));
    let mut loss = 0.0;
    for r in 0..b {
        let keep = |col: usize| mode == LossMode::FullBatch || col == r || targets[col] != targets[r];
        let row = logits.row(r);
        let max = (0..c).filter(|&k| keep(k)).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for k in (0..c).filter(|&k| keep(k)) {
            let w = (row[k] - max).exp();
            g[[r, k]] = w;
            z += w;
        }
        loss += max + z.ln() - row[positive[r]];
        let mut gr = g.row_mut(r);
        gr /= z * b as f64;
        gr[positive[r]] -= 1.0 / b as f64;
    }
    let d_u_hat = g.dot(&e) / temperature;
    let d_e_hat = g.t().dot(&u) / temperature;
    Ok(InfoNceOutput {
        loss: loss / b as f64,
        d_users: normalize_backward(users, &un, &d_u_hat),
        d_items: normalize_backward(items, &en, &d_e_hat),
    })
}

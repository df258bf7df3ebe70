//! Loss terms and their derivatives. Every term averages over time steps
//! and batch columns.

use crate::numkit::Matrix;

use super::MechError;

/// Probabilities are floored here before taking logarithms so a saturated
/// softmax never yields `−∞`.
pub const LOG_FLOOR: f64 = 1e-12;

fn check_pair(a: &[Matrix], b: &[Matrix]) -> Result<(), MechError> {
    if a.is_empty() {
        return Err(MechError::Empty);
    }
    if a.len() != b.len() {
        return Err(MechError::Length(a.len(), b.len()));
    }
    for (t, (x, y)) in a.iter().zip(b).enumerate() {
        if x.shape() != y.shape() {
            return Err(MechError::Shape {
                step: t,
                left: x.shape(),
                right: y.shape(),
            });
        }
    }
    Ok(())
}

fn check_labels(pred: &[Matrix], labels: &[Vec<usize>]) -> Result<(), MechError> {
    if pred.is_empty() {
        return Err(MechError::Empty);
    }
    if pred.len() != labels.len() {
        return Err(MechError::Length(pred.len(), labels.len()));
    }
    for (t, (p, l)) in pred.iter().zip(labels).enumerate() {
        if l.len() != p.cols() {
            return Err(MechError::Shape {
                step: t,
                left: p.shape(),
                right: (1, l.len()),
            });
        }
        if let Some(&bad) = l.iter().find(|&&x| x >= p.rows()) {
            return Err(MechError::Label {
                label: bad,
                alphabet: p.rows(),
            });
        }
    }
    Ok(())
}

fn norm(seq: &[Matrix]) -> f64 {
    (seq.len() * seq[0].cols()) as f64
}

/// `(1/T) Σ_t ‖z_t − y_t‖²`, averaged over the batch.
pub fn distortion(z: &[Matrix], y: &[Matrix]) -> Result<f64, MechError> {
    check_pair(z, y)?;
    let total: f64 = z
        .iter()
        .zip(y)
        .map(|(a, b)| a.data().iter().zip(b.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>())
        .sum();
    Ok(total / norm(z))
}

pub fn distortion_grad(z: &[Matrix], y: &[Matrix]) -> Result<Vec<Matrix>, MechError> {
    check_pair(z, y)?;
    let k = 2.0 / norm(z);
    Ok(z
        .iter()
        .zip(y)
        .map(|(a, b)| a.sub(b).expect("shapes checked").scale(k))
        .collect())
}

/// `(1/T) Σ_t −log p̂_t(x_t)`, averaged over the batch.
pub fn adversary_loss(pred: &[Matrix], labels: &[Vec<usize>]) -> Result<f64, MechError> {
    check_labels(pred, labels)?;
    let mut total = 0.0;
    for (p, l) in pred.iter().zip(labels) {
        for (c, &x) in l.iter().enumerate() {
            total -= p[(x, c)].max(LOG_FLOOR).ln();
        }
    }
    Ok(total / norm(pred))
}

pub fn adversary_loss_grad(pred: &[Matrix], labels: &[Vec<usize>]) -> Result<Vec<Matrix>, MechError> {
    check_labels(pred, labels)?;
    let k = 1.0 / norm(pred);
    Ok(pred
        .iter()
        .zip(labels)
        .map(|(p, l)| {
            let mut d = Matrix::zeros(p.rows(), p.cols());
            for (c, &x) in l.iter().enumerate() {
                let q = p[(x, c)];
                if q > LOG_FLOOR {
                    d[(x, c)] = -k / q;
                }
            }
            d
        })
        .collect())
}

fn entropy_sum(p: &Matrix) -> f64 {
    p.data().iter().map(|&q| if q > 0.0 { -q * q.max(LOG_FLOOR).ln() } else { 0.0 }).sum()
}

/// `(1/T) Σ_t H(p̂_t)` with `H(p) = −Σ_i p_i log p_i`, averaged over the
/// batch. Lies in `[0, log|X|]`.
pub fn conditional_entropy_term(pred: &[Matrix]) -> Result<f64, MechError> {
    if pred.is_empty() {
        return Err(MechError::Empty);
    }
    Ok(pred.iter().map(entropy_sum).sum::<f64>() / norm(pred))
}

/// Derivative of [`conditional_entropy_term`] with respect to each
/// probability: `−(log p_i + 1)` scaled by the averaging factor.
pub fn conditional_entropy_grad(pred: &[Matrix]) -> Result<Vec<Matrix>, MechError> {
    if pred.is_empty() {
        return Err(MechError::Empty);
    }
    let k = 1.0 / norm(pred);
    Ok(pred
        .iter()
        .map(|p| {
            p.map(|q| {
                if q > LOG_FLOOR {
                    -k * (q.ln() + 1.0)
                } else {
                    -k * LOG_FLOOR.ln()
                }
            })
        })
        .collect())
}

/// `D(z, y) − λ · (1/T) Σ_t H(p̂_t)`. Equals `distortion(z, y)` exactly when
/// `λ = 0`.
pub fn releaser_loss(z: &[Matrix], y: &[Matrix], pred: &[Matrix], lambda: f64) -> Result<f64, MechError> {
    if !(lambda >= 0.0) {
        return Err(MechError::Lambda(lambda));
    }
    let d = distortion(z, y)?;
    if lambda == 0.0 {
        return Ok(d);
    }
    Ok(d - lambda * conditional_entropy_term(pred)?)
}

/// Per-sequence bound `T·log|X| − Σ_t H(p̂_t)`, averaged over the batch.
pub fn di_upper_bound(pred: &[Matrix], alphabet_size: usize) -> Result<f64, MechError> {
    if pred.is_empty() {
        return Err(MechError::Empty);
    }
    let steps = pred.len() as f64;
    let batch = pred[0].cols() as f64;
    let entropy: f64 = pred.iter().map(entropy_sum).sum::<f64>() / batch;
    Ok(steps * (alphabet_size as f64).ln() - entropy)
}

//! Losses over model outputs. Each returns the scalar loss together with the
//! gradient that [`SequenceModelParams::backward`](super::SequenceModelParams::backward)
//! expects.

use super::lstm::{ForwardPass, HeadKind, SequenceModelParams};
use super::matrix::Matrix2D;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    /// Two-class softmax cross-entropy against a class index.
    CrossEntropy { target: usize },
    /// Mean over steps of the squared error of a single-output linear head.
    SquaredError { targets: &'a [f64] },
    /// `1 − CCC(prediction, targets)` over the whole sequence.
    Concordance { targets: &'a [f64] },
}

/// Loss value and gradient with respect to the head output of `pass`.
pub fn loss_and_output_grad(
    params: &SequenceModelParams,
    pass: &ForwardPass,
    loss: Loss<'_>,
) -> Result<(f64, Matrix2D)> {
    let out = pass.output();
    match (params.head(), loss) {
        (HeadKind::FinalSoftmax2, Loss::CrossEntropy { target }) => {
            if target > 1 {
                return Err(Error::DimensionMismatch {
                    context: "cross-entropy target class",
                    expected: 1,
                    actual: target,
                });
            }
            let p = out.row(0);
            // log-sum-exp form stays accurate when one class dominates.
            let z = pass.logits();
            let m = z[0].max(z[1]);
            let value = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln() - z[target];
            let mut g = p.to_vec();
            g[target] -= 1.0;
            Ok((value, Matrix2D::from_vec(1, 2, g)?))
        }
        (HeadKind::PerStepLinear, Loss::SquaredError { targets }) => {
            let y = single_output(out, targets)?;
            let n = y.len() as f64;
            let mut value = 0.0;
            let mut g = Vec::with_capacity(y.len());
            for (&yi, &ti) in y.iter().zip(targets) {
                let d = yi - ti;
                value += d * d;
                g.push(2.0 * d / n);
            }
            Ok((value / n, Matrix2D::from_vec(y.len(), 1, g)?))
        }
        (HeadKind::PerStepLinear, Loss::Concordance { targets }) => {
            let y = single_output(out, targets)?;
            let (value, g) = concordance_loss_grad(y, targets);
            Ok((value, Matrix2D::from_vec(y.len(), 1, g)?))
        }
        _ => Err(Error::InvalidConfig(format!(
            "loss {loss:?} does not apply to head {:?}",
            params.head()
        ))),
    }
}

/// Forward pass, loss and full parameter gradient in one call.
pub fn loss_and_gradients(
    params: &SequenceModelParams,
    seq: &Matrix2D,
    loss: Loss<'_>,
) -> Result<(f64, SequenceModelParams)> {
    let pass = params.forward(seq)?;
    let (value, g) = loss_and_output_grad(params, &pass, loss)?;
    Ok((value, params.backward(seq, &pass, &g)?))
}

fn single_output<'m>(out: &'m Matrix2D, targets: &[f64]) -> Result<&'m [f64]> {
    if out.cols() != 1 {
        return Err(Error::DimensionMismatch {
            context: "regression head width",
            expected: 1,
            actual: out.cols(),
        });
    }
    if targets.len() != out.rows() {
        return Err(Error::DimensionMismatch {
            context: "regression targets length",
            expected: out.rows(),
            actual: targets.len(),
        });
    }
    Ok(out.as_slice())
}

fn concordance_loss_grad(y: &[f64], t: &[f64]) -> (f64, Vec<f64>) {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let mut vy = 0.0;
    let mut vt = 0.0;
    let mut cov = 0.0;
    for (&a, &b) in y.iter().zip(t) {
        vy += (a - my) * (a - my);
        vt += (b - mt) * (b - mt);
        cov += (a - my) * (b - mt);
    }
    vy /= n;
    vt /= n;
    cov /= n;
    let gap = my - mt;
    let denom = vy + vt + gap * gap;
    if denom < 1e-12 {
        return (1.0, vec![0.0; y.len()]);
    }
    let ccc = 2.0 * cov / denom;
    let grad = y
        .iter()
        .zip(t)
        .map(|(&a, &b)| {
            let dcov = (b - mt) / n;
            let ddenom = 2.0 * (a - my) / n + 2.0 * gap / n;
            -(2.0 * dcov * denom - 2.0 * cov * ddenom) / (denom * denom)
        })
        .collect();
    (1.0 - ccc, grad)
}

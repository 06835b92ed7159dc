//! Training objectives: soft Dice, auto-encoder reconstruction, latent
//! shape regularization, adversarial and discriminator losses, and the
//! weighted generator objective.
//!
//! Expectations are arithmetic means over the mini-batch. Every loss has a
//! `*_with_grad` variant returning the gradient w.r.t. its differentiable
//! arguments; the plain variant evaluates the same expression.

use ndarray::{Array1, Array2, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::nn::Scalar;
use crate::{Error, Result};

/// Smoothing added to the denominator of the soft Dice ratio. An item with
/// an empty target costs 1 whatever the prediction and contributes no
/// gradient, which is the limit of the unsmoothed ratio.
pub const DICE_SMOOTH: f64 = 1e-6;
/// Clamp inside every logarithm.
pub const LOG_EPS: f64 = 1e-7;

/// Weights of the adversarial (`lambda1`) and latent (`lambda2`) terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.01,
            lambda2: 0.0001,
        }
    }
}

impl LossWeights {
    pub const NONE: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::config("weights.lambda1", "must be finite and >= 0"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::config("weights.lambda2", "must be finite and >= 0"));
        }
        Ok(())
    }
}

fn check_dice_inputs<T: Scalar>(y: &Array4<T>, p: &Array4<T>) -> Result<()> {
    if y.dim() != p.dim() {
        return Err(Error::Shape(format!("dice: target {:?} vs prediction {:?}", y.dim(), p.dim())));
    }
    if y.iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::Validation("dice: target mask is not binary".into()));
    }
    if p.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::Validation("dice: prediction outside [0, 1]".into()));
    }
    Ok(())
}

/// Per-item `(sum(y*p), sum(y) + sum(p))`.
fn dice_sums<T: Scalar>(y: &Array4<T>, p: &Array4<T>) -> Vec<(T, T)> {
    y.outer_iter()
        .zip(p.outer_iter())
        .map(|(yi, pi)| {
            let mut inter = T::zero();
            let mut total = T::zero();
            Zip::from(&yi).and(&pi).for_each(|&a, &b| {
                inter += a * b;
                total += a + b;
            });
            (inter, total)
        })
        .collect()
}

/// Soft Dice loss `1 - 2|y.p| / (|y| + |p| + e)`, averaged over the batch.
pub fn dice_loss<T: Scalar>(y: &Array4<T>, p: &Array4<T>) -> Result<T> {
    check_dice_inputs(y, p)?;
    let eps = T::lit(DICE_SMOOTH);
    let two = T::lit(2.0);
    let sums = dice_sums(y, p);
    let n = T::lit(sums.len() as f64);
    Ok(sums
        .into_iter()
        .map(|(i, s)| T::one() - two * i / (s + eps))
        .sum::<T>()
        / n)
}

/// [`dice_loss`] and its gradient w.r.t. `p`.
pub fn dice_loss_with_grad<T: Scalar>(y: &Array4<T>, p: &Array4<T>) -> Result<(T, Array4<T>)> {
    check_dice_inputs(y, p)?;
    let eps = T::lit(DICE_SMOOTH);
    let two = T::lit(2.0);
    let sums = dice_sums(y, p);
    let n = T::lit(sums.len() as f64);
    let mut grad = Array4::zeros(p.dim());
    let mut loss = T::zero();
    for ((b, &(inter, total)), mut g) in sums.iter().enumerate().zip(grad.outer_iter_mut()) {
        let num = two * inter;
        let den = total + eps;
        loss += T::one() - num / den;
        // d/dp_k [-(num/den)] = -(2 y_k den - num) / den^2
        let den2 = den * den;
        Zip::from(&mut g)
            .and(&y.index_axis(Axis(0), b))
            .for_each(|g, &yk| *g = -(two * yk * den - num) / den2 / n);
    }
    Ok((loss / n, grad))
}

/// Reconstruction loss of the auto-encoder: Dice between `y` and `g(f(y))`.
pub fn cae_loss<T: Scalar>(y: &Array4<T>, recon: &Array4<T>) -> Result<T> {
    dice_loss(y, recon)
}

/// Exact Dice ratio on binarized inputs (`>= 0.5`), per item; both-empty
/// items count as 1.
pub fn hard_dice<T: Scalar>(y: &Array4<T>, p: &Array4<T>) -> Result<Vec<f64>> {
    if y.dim() != p.dim() {
        return Err(Error::Shape(format!("hard dice: {:?} vs {:?}", y.dim(), p.dim())));
    }
    let half = T::lit(0.5);
    Ok(y.outer_iter()
        .zip(p.outer_iter())
        .map(|(yi, pi)| {
            let (mut inter, mut total) = (0u64, 0u64);
            Zip::from(&yi).and(&pi).for_each(|&a, &b| {
                let (a, b) = (a >= half, b >= half);
                inter += (a && b) as u64;
                total += a as u64 + b as u64;
            });
            if total == 0 {
                1.0
            } else {
                2.0 * inter as f64 / total as f64
            }
        })
        .collect())
}

/// Shape regularization: mean over batch and latent dimensions of
/// `(z_pred - z_true)^2`.
pub fn latent_loss<T: Scalar>(z_pred: &Array2<T>, z_true: &Array2<T>) -> Result<T> {
    Ok(latent_loss_with_grad(z_pred, z_true)?.0)
}

/// [`latent_loss`] and its gradient w.r.t. `z_pred` (the gradient w.r.t.
/// `z_true` is its negation).
pub fn latent_loss_with_grad<T: Scalar>(z_pred: &Array2<T>, z_true: &Array2<T>) -> Result<(T, Array2<T>)> {
    if z_pred.dim() != z_true.dim() || z_pred.is_empty() {
        return Err(Error::Shape(format!("latent: {:?} vs {:?}", z_pred.dim(), z_true.dim())));
    }
    let n = T::lit(z_pred.len() as f64);
    let diff = z_pred - z_true;
    let loss = diff.iter().map(|&d| d * d).sum::<T>() / n;
    let grad = diff.mapv(|d| T::lit(2.0) * d / n);
    Ok((loss, grad))
}

fn check_scores<T: Scalar>(what: &str, s: &Array1<T>) -> Result<()> {
    if s.is_empty() {
        return Err(Error::Shape(format!("{what}: empty score batch")));
    }
    if s.iter().any(|&v| !(v >= T::zero() && v <= T::one())) {
        return Err(Error::Validation(format!("{what}: score outside [0, 1]")));
    }
    Ok(())
}

/// `mean(-log(D(x, G(x)) + e))`.
pub fn adversarial_loss<T: Scalar>(scores: &Array1<T>) -> Result<T> {
    Ok(adversarial_loss_with_grad(scores)?.0)
}

pub fn adversarial_loss_with_grad<T: Scalar>(scores: &Array1<T>) -> Result<(T, Array1<T>)> {
    check_scores("adversarial loss", scores)?;
    let eps = T::lit(LOG_EPS);
    let n = T::lit(scores.len() as f64);
    let loss = scores.iter().map(|&s| -(s + eps).ln()).sum::<T>() / n;
    let grad = scores.mapv(|s| -T::one() / ((s + eps) * n));
    Ok((loss, grad))
}

/// `mean(-log(D(x, y) + e)) + mean(-log(1 - D(x, G(x)) + e))`.
pub fn discriminator_loss<T: Scalar>(real: &Array1<T>, fake: &Array1<T>) -> Result<T> {
    Ok(discriminator_loss_with_grad(real, fake)?.0)
}

/// Returns the loss and its gradients w.r.t. the real and fake scores.
pub fn discriminator_loss_with_grad<T: Scalar>(
    real: &Array1<T>,
    fake: &Array1<T>,
) -> Result<(T, Array1<T>, Array1<T>)> {
    check_scores("discriminator loss (real)", real)?;
    check_scores("discriminator loss (fake)", fake)?;
    let eps = T::lit(LOG_EPS);
    let nr = T::lit(real.len() as f64);
    let nf = T::lit(fake.len() as f64);
    let real_term = real.iter().map(|&s| -(s + eps).ln()).sum::<T>() / nr;
    let fake_term = fake.iter().map(|&s| -(T::one() - s + eps).ln()).sum::<T>() / nf;
    let dreal = real.mapv(|s| -T::one() / ((s + eps) * nr));
    let dfake = fake.mapv(|s| T::one() / ((T::one() - s + eps) * nf));
    Ok((real_term + fake_term, dreal, dfake))
}

/// Total generator objective with its raw terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLoss {
    pub total: f64,
    pub dice: f64,
    pub adversarial: f64,
    pub latent: f64,
}

/// `dice + lambda1 * adversarial + lambda2 * latent`.
pub fn combine<T: Scalar>(dice: T, adversarial: T, latent: T, w: LossWeights) -> T {
    dice + T::lit(w.lambda1) * adversarial + T::lit(w.lambda2) * latent
}

/// Evaluates the weighted generator objective. The adversarial and latent
/// inputs may be omitted by ablations that do not use them; an omitted term
/// contributes zero and is reported as zero.
pub fn generator_loss<T: Scalar>(
    y: &Array4<T>,
    p: &Array4<T>,
    scores: Option<&Array1<T>>,
    latents: Option<(&Array2<T>, &Array2<T>)>,
    w: LossWeights,
) -> Result<GeneratorLoss> {
    w.validate()?;
    let dice = dice_loss(y, p)?;
    let adversarial = match scores {
        Some(s) => {
            if s.len() != y.dim().0 {
                return Err(Error::Shape(format!("generator loss: {} scores for {} items", s.len(), y.dim().0)));
            }
            adversarial_loss(s)?
        }
        None => T::zero(),
    };
    let latent = match latents {
        Some((zp, zt)) => latent_loss(zp, zt)?,
        None => T::zero(),
    };
    let total = combine(dice, adversarial, latent, w);
    Ok(GeneratorLoss {
        total: total.to_f64().unwrap_or(f64::NAN),
        dice: dice.to_f64().unwrap_or(f64::NAN),
        adversarial: adversarial.to_f64().unwrap_or(f64::NAN),
        latent: latent.to_f64().unwrap_or(f64::NAN),
    })
}

//! Training objectives: Gaussian NLL, closed-form Gaussian KL, the negative
//! ELBO, the VAE objective and the pinball loss.
//!
//! The plain `f64` functions check their contracts and are what metrics and
//! tests use. [`graph`] holds the same formulas as tape expressions for
//! training.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::layers::PriorSpec;
use crate::tensor::Tensor;

/// `½·ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mean: f64,
    pub std: f64,
}

impl GaussianPrediction {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(std > 0.0) {
            return Err(Error::contract(format!("predictive std must be > 0, got {std}")));
        }
        Ok(GaussianPrediction { mean, std })
    }
}

/// `½·ln(2πσ²) + (y−μ)²/(2σ²)`
pub fn gaussian_nll(pred: GaussianPrediction, y: f64) -> Result<f64> {
    if !(pred.std > 0.0) {
        return Err(Error::contract(format!("std must be > 0, got {}", pred.std)));
    }
    let var = pred.std * pred.std;
    Ok(0.5 * (2.0 * PI * var).ln() + (y - pred.mean).powi(2) / (2.0 * var))
}

/// Mean NLL over a batch.
pub fn gaussian_nll_batch(preds: &[GaussianPrediction], ys: &[f64]) -> Result<f64> {
    check_len(preds.len(), ys.len())?;
    let total = preds
        .iter()
        .zip(ys)
        .map(|(p, &y)| gaussian_nll(*p, y))
        .sum::<Result<f64>>()?;
    Ok(total / ys.len() as f64)
}

/// `KL(N(μq, σq²) ‖ N(μp, σp²)) = ln(σp/σq) + (σq² + (μq−μp)²)/(2σp²) − ½`
pub fn kl_gaussian(mu_q: f64, sigma_q: f64, mu_p: f64, sigma_p: f64) -> Result<f64> {
    if !(sigma_q > 0.0) || !(sigma_p > 0.0) {
        return Err(Error::contract(format!(
            "KL needs positive stds, got σq={sigma_q}, σp={sigma_p}"
        )));
    }
    Ok((sigma_p / sigma_q).ln() + (sigma_q * sigma_q + (mu_q - mu_p).powi(2)) / (2.0 * sigma_p * sigma_p)
        - 0.5)
}

/// KL of a factorised Gaussian against a shared scalar prior, summed over factors.
pub fn kl_gaussian_sum(mu_q: &[f64], sigma_q: &[f64], mu_p: f64, sigma_p: f64) -> Result<f64> {
    check_len(mu_q.len(), sigma_q.len())?;
    mu_q.iter()
        .zip(sigma_q)
        .map(|(&m, &s)| kl_gaussian(m, s, mu_p, sigma_p))
        .sum()
}

/// Negative-ELBO bookkeeping for one minibatch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboReport {
    pub nll: f64,
    pub kl: f64,
    pub kl_weight: f64,
    /// `nll + kl_weight·kl`, the quantity minimised.
    pub elbo_objective: f64,
}

/// With `nll` summed over a minibatch and `kl_weight = 1/num_batches`, an
/// epoch's objectives add up to the full-data negative ELBO.
pub fn elbo_loss(nll: f64, kl: f64, kl_weight: f64) -> Result<ElboReport> {
    if kl < 0.0 {
        return Err(Error::contract(format!("KL must be non-negative, got {kl}")));
    }
    Ok(ElboReport {
        nll,
        kl,
        kl_weight,
        elbo_objective: nll + kl_weight * kl,
    })
}

/// Default KL weight for minibatch training.
pub fn default_kl_weight(num_batches: usize) -> f64 {
    1.0 / num_batches.max(1) as f64
}

/// Single-window VAE objective: reconstruction MSE plus the latent KL
/// against the prior, summed over latent dimensions.
pub fn vae_loss(
    x: &[f64],
    x_hat: &[f64],
    mu_q: &[f64],
    sigma_q: &[f64],
    prior: PriorSpec,
) -> Result<f64> {
    check_len(x.len(), x_hat.len())?;
    let mse = mean_sq_diff(x, x_hat);
    let kl = kl_gaussian_sum(mu_q, sigma_q, prior.mu_z, prior.sigma_z_eps)?;
    Ok(mse + kl)
}

/// Batched VAE objective: MSE over all entries plus the per-window latent KL
/// averaged over the batch. Inputs are `B×L` and `B×d_z`.
pub fn vae_loss_batch(
    x: &Tensor,
    x_hat: &Tensor,
    mu_q: &Tensor,
    sigma_q: &Tensor,
    prior: PriorSpec,
) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension {
            op: "vae_loss",
            left: x.shape().to_vec(),
            right: x_hat.shape().to_vec(),
        });
    }
    let mse = mean_sq_diff(x.data(), x_hat.data());
    let kl = kl_gaussian_sum(mu_q.data(), sigma_q.data(), prior.mu_z, prior.sigma_z_eps)?;
    Ok(mse + kl / x.rows() as f64)
}

/// `q·(y−ŷ)` if `y ≥ ŷ`, else `(1−q)·(ŷ−y)`.
pub fn pinball_training_loss(y: f64, y_hat: f64, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::contract(format!("quantile level must be in (0,1), got {q}")));
    }
    Ok(if y >= y_hat {
        q * (y - y_hat)
    } else {
        (1.0 - q) * (y_hat - y)
    })
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b || a == 0 {
        return Err(Error::contract(format!("length mismatch or empty: {a} vs {b}")));
    }
    Ok(())
}

/// The same objectives as differentiable tape expressions.
pub mod graph {
    use super::HALF_LN_2PI;
    use crate::error::Result;
    use crate::tensor::Var;

    /// Summed Gaussian NLL; all operands share one shape.
    pub fn gaussian_nll_sum<'t>(mu: Var<'t>, sigma: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
        let n = mu.value().numel() as f64;
        let resid = y.sub(mu)?.square();
        let two_var = sigma.square().scale(2.0);
        let quad = resid.div(two_var)?.sum();
        let log_sigma = sigma.ln()?.sum();
        Ok(quad.add(log_sigma)?.add_scalar(n * HALF_LN_2PI))
    }

    /// Σ KL(N(μq,σq²) ‖ N(μp,σp²)) with one-element prior operands.
    pub fn kl_sum<'t>(
        mu_q: Var<'t>,
        sigma_q: Var<'t>,
        mu_p: Var<'t>,
        sigma_p: Var<'t>,
    ) -> Result<Var<'t>> {
        let shape = mu_q.shape();
        let n = mu_q.value().numel() as f64;
        let mu_p_b = mu_p.broadcast(&shape)?;
        let sp2 = sigma_p.square();
        let sp2_b = sp2.broadcast(&shape)?;
        // n·ln σp − Σ ln σq + Σ (σq² + (μq−μp)²) / (2σp²) − n/2
        let quad = sigma_q
            .square()
            .add(mu_q.sub(mu_p_b)?.square())?
            .div(sp2_b.scale(2.0))?
            .sum();
        let log_ratio = sigma_p.ln()?.sum().scale(n).sub(sigma_q.ln()?.sum())?;
        Ok(quad.add(log_ratio)?.add_scalar(-0.5 * n))
    }

    pub fn mse<'t>(a: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        Ok(a.sub(b)?.square().mean())
    }

    /// Mean pinball loss. `levels` holds the quantile level for each entry
    /// of `y_hat`; all three operands share one shape.
    pub fn pinball_mean<'t>(y: Var<'t>, y_hat: Var<'t>, levels: Var<'t>) -> Result<Var<'t>> {
        let r = y.sub(y_hat)?;
        Ok(levels.mul(r)?.add(r.neg().relu())?.mean())
    }
}

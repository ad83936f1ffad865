use serde::{Deserialize, Serialize};

use super::{Ctx, Dense};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{gaussian_draw, RngState, Tape, Tensor, Var};

/// Latent prior `N(mu_z, sigma_z_eps²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mu_z: f64,
    pub sigma_z_eps: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            mu_z: 0.0,
            sigma_z_eps: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn new(mu_z: f64, sigma_z_eps: f64) -> Result<Self> {
        if !(sigma_z_eps > 0.0) {
            return Err(Error::config(format!("latent prior std must be > 0, got {sigma_z_eps}")));
        }
        Ok(PriorSpec { mu_z, sigma_z_eps })
    }
}

/// Window autoencoder: `L → hidden (tanh) → (μ_q, ρ_q)` and
/// `d_z → hidden (tanh) → L (tanh)`, with `σ_q = softplus(ρ_q)`.
#[derive(Clone, Debug)]
pub struct Vae {
    pub params: ParamSet,
    enc_hidden: Dense,
    enc_mu: Dense,
    enc_rho: Dense,
    dec_hidden: Dense,
    dec_out: Dense,
    pub input_dim: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub prior: PriorSpec,
}

impl Vae {
    pub fn new(
        input_dim: usize,
        latent_dim: usize,
        hidden_dim: usize,
        prior: PriorSpec,
        rng: &mut RngState,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dim == 0 || hidden_dim == 0 {
            return Err(Error::config("VAE dimensions must be positive"));
        }
        let mut ps = ParamSet::new();
        let enc_hidden = Dense::new(&mut ps, "enc.hidden", input_dim, hidden_dim, rng);
        let enc_mu = Dense::new(&mut ps, "enc.mu", hidden_dim, latent_dim, rng);
        let enc_rho = Dense::new(&mut ps, "enc.rho", hidden_dim, latent_dim, rng);
        let dec_hidden = Dense::new(&mut ps, "dec.hidden", latent_dim, hidden_dim, rng);
        let dec_out = Dense::new(&mut ps, "dec.out", hidden_dim, input_dim, rng);
        Ok(Vae {
            params: ps,
            enc_hidden,
            enc_mu,
            enc_rho,
            dec_hidden,
            dec_out,
            input_dim,
            latent_dim,
            hidden_dim,
            prior,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_width(&self, op: &'static str, v: Var<'_>, want: usize) -> Result<()> {
        let shape = v.shape();
        if shape.len() != 2 || shape[1] != want {
            return Err(Error::Dimension {
                op,
                left: vec![want],
                right: shape,
            });
        }
        Ok(())
    }

    /// `x: B×L` to `(μ_q, σ_q)`, each `B×d_z`.
    pub fn encode<'t>(&self, cx: &mut Ctx<'_, 't>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        self.check_width("vae_encode", x, self.input_dim)?;
        let h = self.enc_hidden.forward(cx, x)?.tanh();
        let mu = self.enc_mu.forward(cx, h)?;
        let sigma = self.enc_rho.forward(cx, h)?.softplus();
        Ok((mu, sigma))
    }

    /// `z = μ + σ⊙ε`, with `ε` a constant fresh draw.
    pub fn reparameterize<'t>(cx: &mut Ctx<'_, 't>, mu: Var<'t>, sigma: Var<'t>) -> Result<Var<'t>> {
        let eps = gaussian_draw(cx.rng(), &mu.shape());
        reparameterize_with(mu, sigma, cx.tape.constant(eps))
    }

    /// `z: B×d_z` to `x̂: B×L` in `(−1, 1)`.
    pub fn decode<'t>(&self, cx: &mut Ctx<'_, 't>, z: Var<'t>) -> Result<Var<'t>> {
        self.check_width("vae_decode", z, self.latent_dim)?;
        let h = self.dec_hidden.forward(cx, z)?.tanh();
        Ok(self.dec_out.forward(cx, h)?.tanh())
    }

    fn frozen<R>(&self, f: impl FnOnce(&mut Ctx<'_, '_>) -> Result<R>) -> Result<R> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let mut rng = RngState::new(0);
        let mut cx = Ctx::eval(&tape, &p, &mut rng);
        f(&mut cx)
    }

    /// Posterior means and stds for every row of `x` (`n×L` to `n×d_z`).
    pub fn encode_stats(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.frozen(|cx| {
            let xv = cx.tape.constant(x.clone());
            let (m, s) = self.encode(cx, xv)?;
            Ok((m.value(), s.value()))
        })
    }

    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode_stats(x)?.0)
    }

    /// Posterior means and stds for a single window.
    pub fn encode_window(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                op: "vae_encode",
                left: vec![self.input_dim],
                right: vec![x.len()],
            });
        }
        self.frozen(|cx| {
            let xv = cx.tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
            let (m, s) = self.encode(cx, xv)?;
            Ok((m.value().into_data(), s.value().into_data()))
        })
    }

    /// Decode each row of `z`.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        self.frozen(|cx| {
            let zv = cx.tape.constant(z.clone());
            Ok(self.decode(cx, zv)?.value())
        })
    }

    /// Decode of the posterior mean, `n×L`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode_tensor(&self.encode_mean(x)?)
    }
}

/// `μ + σ⊙ε` for a given `ε`.
pub fn reparameterize_with<'t>(mu: Var<'t>, sigma: Var<'t>, eps: Var<'t>) -> Result<Var<'t>> {
    mu.add(sigma.mul(eps)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(mut v: Vae, bias: f64) -> Vae {
        for (name, t) in v.params.names().to_vec().iter().zip(v.params.values_mut()) {
            let fill = if name.ends_with(".b") { bias } else { 0.0 };
            t.data_mut().iter_mut().for_each(|x| *x = fill);
        }
        v
    }

    #[test]
    fn zero_weight_encoder_returns_bias() {
        let v = zeroed(Vae::new(4, 2, 3, PriorSpec::default(), &mut RngState::new(0)).unwrap(), 0.3);
        let (mu, sigma) = v.encode_window(&[0.1, 0.2, -0.3, 0.9]).unwrap();
        assert_eq!(mu, vec![0.3, 0.3]);
        let sp = (1.0 + 0.3f64.exp()).ln();
        assert!(sigma.iter().all(|s| (s - sp).abs() < 1e-15));
        assert!(v.encode_window(&[0.0; 3]).is_err());
    }

    #[test]
    fn zero_weight_decoder_returns_tanh_bias() {
        let v = zeroed(Vae::new(4, 2, 3, PriorSpec::default(), &mut RngState::new(0)).unwrap(), 0.3);
        let x = v.decode_tensor(&Tensor::from_rows(&[vec![5.0, -2.0]]).unwrap()).unwrap();
        assert!(x.data().iter().all(|e| (e - 0.3f64.tanh()).abs() < 1e-15));
    }

    #[test]
    fn decoder_output_bounded_and_sigma_positive() {
        let v = Vae::new(6, 3, 5, PriorSpec::default(), &mut RngState::new(1)).unwrap();
        let mut rng = RngState::new(2);
        let z = gaussian_draw(&mut rng, &[50, 3]).map(|e| 10.0 * e);
        assert!(v.decode_tensor(&z).unwrap().data().iter().all(|e| e.abs() < 1.0));
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| 3.0 * rng.normal()).collect();
            let (_, s) = v.encode_window(&x).unwrap();
            assert!(s.iter().all(|&e| e > 0.0));
        }
    }

    #[test]
    fn reparameterize_cases() {
        let tape = Tape::new();
        let mu = tape.constant(Tensor::vector(vec![1.0]));
        let sigma = tape.constant(Tensor::vector(vec![2.0]));
        let z = reparameterize_with(mu, sigma, tape.constant(Tensor::vector(vec![0.5]))).unwrap();
        assert_eq!(z.item(), 2.0);
        let z0 = reparameterize_with(mu, sigma, tape.constant(Tensor::vector(vec![0.0]))).unwrap();
        assert_eq!(z0.item(), 1.0);
        let s0 = tape.constant(Tensor::vector(vec![0.0]));
        let z1 = reparameterize_with(mu, s0, tape.constant(Tensor::vector(vec![3.7]))).unwrap();
        assert_eq!(z1.item(), 1.0);
    }

    #[test]
    fn reparameterize_grads_reach_mu_and_sigma_only() {
        let tape = Tape::new();
        let mu = tape.param(Tensor::vector(vec![1.0]));
        let sigma = tape.param(Tensor::vector(vec![2.0]));
        let ps = ParamSet::new();
        let p = ps.bind(&tape);
        let mut rng = RngState::new(3);
        let mut cx = Ctx::train(&tape, &p, &mut rng);
        let z = Vae::reparameterize(&mut cx, mu, sigma).unwrap();
        let eps = (z.item() - 1.0) / 2.0;
        let g = tape.backward(z.sum()).unwrap();
        assert_eq!(g.wrt(mu).item(), 1.0);
        assert!((g.wrt(sigma).item() - eps).abs() < 1e-15);
    }
}

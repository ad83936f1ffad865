//! Network building blocks on top of the tape.
//!
//! Every layer stores [`ParamId`]s into a [`ParamSet`] owned by its model and
//! runs inside a [`Ctx`], which carries the bound parameters, the random
//! source and the train/eval switches. A weight is either a point estimate or
//! a mean-field Gaussian ([`GaussianVariational`]); resolving a Gaussian
//! weight also records its KL term on the context.

mod recurrent;
mod vae;

pub use recurrent::{BiLstm, CellWeights, LstmCell, RnnCell};
pub use vae::{PriorSpec, Vae};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::graph::kl_sum;
use crate::params::{Bound, ParamId, ParamSet};
use crate::tensor::{gaussian_draw, RngState, Tape, Tensor, Var};

/// Forward-pass context.
pub struct Ctx<'a, 't> {
    pub tape: &'t Tape,
    pub p: &'a Bound<'t>,
    rng: &'a mut RngState,
    /// Draw Gaussian weights (`μ + σ⊙ε`) instead of using their means.
    pub sample_weights: bool,
    /// Enables dropout.
    pub training: bool,
    kl_terms: Vec<Var<'t>>,
}

impl<'a, 't> Ctx<'a, 't> {
    pub fn new(
        tape: &'t Tape,
        p: &'a Bound<'t>,
        rng: &'a mut RngState,
        sample_weights: bool,
        training: bool,
    ) -> Self {
        Ctx {
            tape,
            p,
            rng,
            sample_weights,
            training,
            kl_terms: Vec::new(),
        }
    }

    /// Sampled weights, dropout on.
    pub fn train(tape: &'t Tape, p: &'a Bound<'t>, rng: &'a mut RngState) -> Self {
        Ctx::new(tape, p, rng, true, true)
    }

    /// Mean weights, dropout off.
    pub fn eval(tape: &'t Tape, p: &'a Bound<'t>, rng: &'a mut RngState) -> Self {
        Ctx::new(tape, p, rng, false, false)
    }

    pub fn rng(&mut self) -> &mut RngState {
        self.rng
    }

    fn push_kl(&mut self, kl: Var<'t>) {
        self.kl_terms.push(kl);
    }

    fn kl_mark(&self) -> usize {
        self.kl_terms.len()
    }

    fn kl_since(&self, mark: usize) -> Var<'t> {
        let mut acc = self.tape.scalar(0.0);
        for t in &self.kl_terms[mark..] {
            acc = acc.add(*t).expect("scalar add");
        }
        acc
    }

    /// Sum of all KL terms recorded so far (zero if none).
    pub fn total_kl(&self) -> Var<'t> {
        self.kl_since(0)
    }
}

/// Prior over Gaussian weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GaussianPrior {
    Fixed { mu: f64, sigma: f64 },
    /// Learned `N(μ, softplus(ρ)²)`, both scalars shared across a layer.
    Trainable { mu: ParamId, rho: ParamId },
}

/// Variational settings for Gaussian-wrapped layers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VariationalConfig {
    pub prior_mu: f64,
    pub prior_sigma: f64,
    pub trainable_prior: bool,
    /// Posterior means start as `N(0, init_mu_std²)`.
    pub init_mu_std: f64,
    /// Posterior stds start here (`ρ = softplus⁻¹(init_sigma)`).
    pub init_sigma: f64,
}

impl Default for VariationalConfig {
    fn default() -> Self {
        VariationalConfig {
            prior_mu: 0.0,
            prior_sigma: 1.0,
            trainable_prior: false,
            init_mu_std: 0.1,
            init_sigma: 0.05,
        }
    }
}

impl VariationalConfig {
    fn prior(&self, ps: &mut ParamSet, name: &str) -> Result<GaussianPrior> {
        if !(self.prior_sigma > 0.0) {
            return Err(Error::config(format!("prior sigma must be > 0, got {}", self.prior_sigma)));
        }
        Ok(if self.trainable_prior {
            GaussianPrior::Trainable {
                mu: ps.add(format!("{name}.prior_mu"), Tensor::vector(vec![self.prior_mu])),
                rho: ps.add(
                    format!("{name}.prior_rho"),
                    Tensor::vector(vec![inverse_softplus(self.prior_sigma)]),
                ),
            }
        } else {
            GaussianPrior::Fixed {
                mu: self.prior_mu,
                sigma: self.prior_sigma,
            }
        })
    }
}

/// `softplus⁻¹(y) = ln(eʸ − 1)`
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Factorised Gaussian posterior over one weight tensor: `σ = softplus(ρ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianVariational {
    pub mu: ParamId,
    pub rho: ParamId,
    pub prior: GaussianPrior,
    shape: Vec<usize>,
}

impl GaussianVariational {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        shape: &[usize],
        prior: GaussianPrior,
        cfg: &VariationalConfig,
        rng: &mut RngState,
    ) -> Self {
        let mu = gaussian_draw(rng, shape).map(|e| e * cfg.init_mu_std);
        let rho = Tensor::full(shape, inverse_softplus(cfg.init_sigma));
        GaussianVariational {
            mu: ps.add(format!("{name}.mu"), mu),
            rho: ps.add(format!("{name}.rho"), rho),
            prior,
            shape: shape.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn prior_vars<'t>(&self, cx: &Ctx<'_, 't>) -> (Var<'t>, Var<'t>) {
        match self.prior {
            GaussianPrior::Fixed { mu, sigma } => (cx.tape.scalar(mu), cx.tape.scalar(sigma)),
            GaussianPrior::Trainable { mu, rho } => (cx.p[mu], cx.p[rho].softplus()),
        }
    }

    /// Closed-form KL of this factor set against its prior.
    pub fn kl<'t>(&self, cx: &Ctx<'_, 't>) -> Result<Var<'t>> {
        let (pm, ps) = self.prior_vars(cx);
        kl_sum(cx.p[self.mu], cx.p[self.rho].softplus(), pm, ps)
    }

    /// `μ + softplus(ρ)⊙ε` when sampling, otherwise `μ`. Records the KL term.
    pub fn resolve<'t>(&self, cx: &mut Ctx<'_, 't>) -> Result<Var<'t>> {
        let kl = self.kl(cx)?;
        cx.push_kl(kl);
        let mu = cx.p[self.mu];
        if !cx.sample_weights {
            return Ok(mu);
        }
        let eps = cx.tape.constant(gaussian_draw(cx.rng, &self.shape));
        let sigma = cx.p[self.rho].softplus();
        mu.add(sigma.mul(eps)?)
    }
}

/// A weight tensor: point estimate or Gaussian posterior.
#[derive(Clone, Debug, PartialEq)]
pub enum WeightParam {
    Point(ParamId),
    Gaussian(GaussianVariational),
}

impl WeightParam {
    pub fn point(ps: &mut ParamSet, name: &str, value: Tensor) -> Self {
        WeightParam::Point(ps.add(name, value))
    }

    pub fn resolve<'t>(&self, cx: &mut Ctx<'_, 't>) -> Result<Var<'t>> {
        match self {
            WeightParam::Point(id) => Ok(cx.p[*id]),
            WeightParam::Gaussian(g) => g.resolve(cx),
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, WeightParam::Gaussian(_))
    }
}

/// Uniform Glorot initialisation for a `fan_out × fan_in` matrix.
pub fn glorot(rng: &mut RngState, fan_out: usize, fan_in: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_out * fan_in)
        .map(|_| (2.0 * rng.uniform() - 1.0) * limit)
        .collect();
    Tensor::matrix(fan_out, fan_in, data).expect("glorot shape")
}

/// Either a point or Gaussian weight, initialised from `init` (point) or the
/// variational settings (Gaussian).
fn make_weight(
    ps: &mut ParamSet,
    name: &str,
    init: Tensor,
    variational: Option<(&VariationalConfig, GaussianPrior)>,
    rng: &mut RngState,
) -> WeightParam {
    match variational {
        None => WeightParam::point(ps, name, init),
        Some((cfg, prior)) => {
            WeightParam::Gaussian(GaussianVariational::new(ps, name, init.shape(), prior, cfg, rng))
        }
    }
}

/// Affine layer `y = x·Wᵀ + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: WeightParam,
    pub b: WeightParam,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(ps: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut RngState) -> Self {
        let w = glorot(rng, output, input);
        Dense {
            w: WeightParam::point(ps, &format!("{name}.w"), w),
            b: WeightParam::point(ps, &format!("{name}.b"), Tensor::zeros(&[output])),
            input,
            output,
        }
    }

    /// Dense layer whose weights and biases carry Gaussian posteriors.
    pub fn variational(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        output: usize,
        cfg: &VariationalConfig,
        rng: &mut RngState,
    ) -> Result<Self> {
        let prior = cfg.prior(ps, name)?;
        let w = GaussianVariational::new(ps, &format!("{name}.w"), &[output, input], prior, cfg, rng);
        let b = GaussianVariational::new(ps, &format!("{name}.b"), &[output], prior, cfg, rng);
        Ok(Dense {
            w: WeightParam::Gaussian(w),
            b: WeightParam::Gaussian(b),
            input,
            output,
        })
    }

    pub fn is_variational(&self) -> bool {
        self.w.is_gaussian()
    }

    /// Trainable scalars: `I·O + O`, doubled for Gaussian weights.
    pub fn param_count(&self) -> usize {
        let base = self.input * self.output + self.output;
        if self.is_variational() {
            2 * base
        } else {
            base
        }
    }

    pub fn forward<'t>(&self, cx: &mut Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let w = self.w.resolve(cx)?;
        let b = self.b.resolve(cx)?;
        x.matmul_t(w)?.add_row_bias(b)
    }

    /// Forward pass returning the KL contributed by this layer alone.
    pub fn forward_kl<'t>(&self, cx: &mut Ctx<'_, 't>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let mark = cx.kl_mark();
        let y = self.forward(cx, x)?;
        Ok((y, cx.kl_since(mark)))
    }
}

/// Inverted dropout: in training, zero each entry with probability `rate` and
/// scale survivors by `1/(1−rate)`; identity otherwise.
pub fn dropout<'t>(cx: &mut Ctx<'_, 't>, x: Var<'t>, rate: f64) -> Result<Var<'t>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::contract(format!("dropout rate must be in [0,1), got {rate}")));
    }
    if !cx.training || rate == 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let keep = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if cx.rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let mask = cx.tape.constant(Tensor::new(&shape, mask)?);
    x.mul(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_ctx<R>(ps: &ParamSet, seed: u64, sample: bool, f: impl FnOnce(&mut Ctx<'_, '_>) -> R) -> R {
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let mut rng = RngState::new(seed);
        let mut cx = Ctx::new(&tape, &p, &mut rng, sample, sample);
        f(&mut cx)
    }

    #[test]
    fn inverse_softplus_round_trips() {
        for y in [1e-3, 0.05, 1.0, 7.5] {
            let x = inverse_softplus(y);
            assert!((crate::tensor::Tape::new().scalar(x).softplus().item() - y).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_param_counts() {
        let mut ps = ParamSet::new();
        let mut rng = RngState::new(0);
        let d = Dense::new(&mut ps, "d", 3, 2, &mut rng);
        assert_eq!(d.param_count(), 8);
        assert_eq!(ps.scalar_count(), 8);
        let mut ps = ParamSet::new();
        let v = Dense::variational(&mut ps, "v", 3, 2, &VariationalConfig::default(), &mut rng).unwrap();
        assert_eq!(v.param_count(), 16);
        assert_eq!(ps.scalar_count(), 16);
    }

    #[test]
    fn collapsed_posterior_is_deterministic_dense() {
        let mut rng = RngState::new(5);
        let mut ps = ParamSet::new();
        let layer = Dense::variational(&mut ps, "v", 3, 2, &VariationalConfig::default(), &mut rng).unwrap();
        for v in ps.values_mut().iter_mut().skip(1).step_by(2) {
            // σ = softplus(−40) ≈ 4e−18
            v.data_mut().iter_mut().for_each(|r| *r = -40.0);
        }
        let x = Tensor::from_rows(&[vec![0.3, -1.0, 2.0]]).unwrap();
        let sampled = with_ctx(&ps, 9, true, |cx| {
            let xv = cx.tape.constant(x.clone());
            layer.forward(cx, xv).unwrap().value()
        });
        let mean = with_ctx(&ps, 9, false, |cx| {
            let xv = cx.tape.constant(x.clone());
            layer.forward(cx, xv).unwrap().value()
        });
        for (a, b) in sampled.data().iter().zip(mean.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn kl_zero_when_posterior_is_prior() {
        let mut rng = RngState::new(5);
        let mut ps = ParamSet::new();
        let layer = Dense::variational(&mut ps, "v", 2, 2, &VariationalConfig::default(), &mut rng).unwrap();
        let rho1 = inverse_softplus(1.0);
        for (i, v) in ps.values_mut().iter_mut().enumerate() {
            let fill = if i % 2 == 0 { 0.0 } else { rho1 };
            v.data_mut().iter_mut().for_each(|e| *e = fill);
        }
        let kl = with_ctx(&ps, 1, true, |cx| {
            let x = cx.tape.constant(Tensor::zeros(&[1, 2]));
            layer.forward_kl(cx, x).unwrap().1.item()
        });
        assert!(kl.abs() < 1e-12, "{kl}");
    }

    #[test]
    fn different_noise_gives_different_outputs() {
        let mut rng = RngState::new(5);
        let mut ps = ParamSet::new();
        let layer = Dense::variational(&mut ps, "v", 3, 1, &VariationalConfig::default(), &mut rng).unwrap();
        let run = |seed| {
            with_ctx(&ps, seed, true, |cx| {
                let x = cx.tape.constant(Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
                layer.forward(cx, x).unwrap().item()
            })
        };
        assert_ne!(run(1), run(2));
        assert_eq!(run(3), run(3));
    }

    #[test]
    fn trainable_prior_adds_two_scalars_and_gets_gradient() {
        let mut rng = RngState::new(5);
        let mut ps = ParamSet::new();
        let cfg = VariationalConfig {
            trainable_prior: true,
            ..Default::default()
        };
        let layer = Dense::variational(&mut ps, "v", 2, 1, &cfg, &mut rng).unwrap();
        assert_eq!(ps.scalar_count(), 2 * 3 + 2);
        let tape = Tape::new();
        let p = ps.bind(&tape);
        let mut r = RngState::new(0);
        let mut cx = Ctx::train(&tape, &p, &mut r);
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        let (_, kl) = layer.forward_kl(&mut cx, x).unwrap();
        let mut g = tape.backward(kl).unwrap();
        let grads = p.grads(&mut g);
        assert!(matches!(
            &layer.w,
            WeightParam::Gaussian(GaussianVariational {
                prior: GaussianPrior::Trainable { .. },
                ..
            })
        ));
        // prior_mu is the first parameter registered
        assert!(grads[0].data().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn dropout_contract_and_modes() {
        let ps = ParamSet::new();
        with_ctx(&ps, 1, true, |cx| {
            let x = cx.tape.constant(Tensor::full(&[4], 2.0));
            assert!(matches!(dropout(cx, x, 1.0), Err(Error::Contract(_))));
            assert_eq!(dropout(cx, x, 0.0).unwrap().value().data(), &[2.0; 4]);
        });
        with_ctx(&ps, 1, false, |cx| {
            let x = cx.tape.constant(Tensor::full(&[4], 2.0));
            assert_eq!(dropout(cx, x, 0.5).unwrap().value().data(), &[2.0; 4]);
        });
    }

    #[test]
    fn dropout_preserves_expectation() {
        let ps = ParamSet::new();
        let mean = with_ctx(&ps, 17, true, |cx| {
            let x = cx.tape.constant(Tensor::full(&[100_000], 2.0));
            dropout(cx, x, 0.5).unwrap().mean().item()
        });
        assert!((mean - 2.0).abs() < 0.04, "{mean}");
    }
}

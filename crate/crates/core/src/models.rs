//! Trainable networks: the Bayesian forecaster (feature block plus a
//! Gaussian-weight output head), linear quantile regression, and the VAE
//! training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{dropout, BiLstm, Ctx, Dense, LstmCell, RnnCell, Vae, VariationalConfig};
use crate::losses::graph::{gaussian_nll_sum, kl_sum, mse, pinball_mean};
use crate::metrics::reconstruction_error;
use crate::params::{ParamId, ParamSet};
use crate::tensor::{RngState, Tape, Tensor, Var};
use crate::train::{BatchInfo, Learner};

/// Rows per tape when evaluating large inputs.
pub(crate) const EVAL_CHUNK: usize = 256;

/// Floor added to the predictive std.
const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecurrentKind {
    Bilstm,
    Lstm,
    Rnn,
    Dense,
    QuantileRegression,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FeatureBlock {
    BiLstm(BiLstm),
    Lstm(LstmCell),
    Rnn(RnnCell),
    Dense(Dense),
}

/// Maps a `B×T` sequence (one feature per step) to a Gaussian prediction
/// `(μ, σ)` per row. The head's weights have Gaussian posteriors; the
/// feature block is deterministic unless built with `variational_hidden`.
#[derive(Clone, Debug)]
pub struct BayesForecaster {
    pub params: ParamSet,
    pub block: FeatureBlock,
    pub head: Dense,
    pub kind: RecurrentKind,
    pub seq_len: usize,
    pub neurons: usize,
    pub dropout: f64,
    pub variational_hidden: bool,
}

impl BayesForecaster {
    pub fn new(
        kind: RecurrentKind,
        seq_len: usize,
        neurons: usize,
        dropout: f64,
        var: &VariationalConfig,
        variational_hidden: bool,
        rng: &mut RngState,
    ) -> Result<Self> {
        if seq_len == 0 || neurons == 0 {
            return Err(Error::config("sequence length and neurons must be positive"));
        }
        let mut ps = ParamSet::new();
        let hidden_var = variational_hidden.then_some(var);
        let (block, width) = match kind {
            RecurrentKind::Bilstm => (
                FeatureBlock::BiLstm(BiLstm::new(&mut ps, "bilstm", 1, neurons, hidden_var, rng)?),
                2 * neurons,
            ),
            RecurrentKind::Lstm => (
                FeatureBlock::Lstm(LstmCell::new(&mut ps, "lstm", 1, neurons, hidden_var, rng)?),
                neurons,
            ),
            RecurrentKind::Rnn => (
                FeatureBlock::Rnn(RnnCell::new(&mut ps, "rnn", 1, neurons, hidden_var, rng)?),
                neurons,
            ),
            RecurrentKind::Dense => {
                let d = if variational_hidden {
                    Dense::variational(&mut ps, "hidden", seq_len, neurons, var, rng)?
                } else {
                    Dense::new(&mut ps, "hidden", seq_len, neurons, rng)
                };
                (FeatureBlock::Dense(d), neurons)
            }
            RecurrentKind::QuantileRegression => {
                return Err(Error::contract("quantile regression is not a Bayesian forecaster"))
            }
        };
        let head = Dense::variational(&mut ps, "head", width, 2, var, rng)?;
        Ok(BayesForecaster {
            params: ps,
            block,
            head,
            kind,
            seq_len,
            neurons,
            dropout,
            variational_hidden,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Feature vectors before dropout, `B×F`.
    pub fn features<'t>(&self, cx: &mut Ctx<'_, 't>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.seq_len {
            return Err(Error::Dimension {
                op: "forecaster_input",
                left: vec![self.seq_len],
                right: shape,
            });
        }
        let steps = || (0..self.seq_len).map(|t| x.slice_cols(t, t + 1)).collect::<Result<Vec<_>>>();
        match &self.block {
            FeatureBlock::BiLstm(b) => b.features(cx, &steps()?),
            FeatureBlock::Lstm(c) => Ok(*c.run(cx, &steps()?)?.last().expect("non-empty")),
            FeatureBlock::Rnn(c) => Ok(*c.run(cx, &steps()?)?.last().expect("non-empty")),
            FeatureBlock::Dense(d) => Ok(d.forward(cx, x)?.tanh()),
        }
    }

    /// Output head on features: `(μ, σ)`, each `B×1`.
    pub fn head<'t>(&self, cx: &mut Ctx<'_, 't>, feats: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let f = dropout(cx, feats, self.dropout)?;
        let out = self.head.forward(cx, f)?;
        let mu = out.slice_cols(0, 1)?;
        let sigma = out.slice_cols(1, 2)?.softplus().add_scalar(SIGMA_FLOOR);
        Ok((mu, sigma))
    }

    pub fn predict<'t>(&self, cx: &mut Ctx<'_, 't>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let f = self.features(cx, x)?;
        self.head(cx, f)
    }

    /// Feature matrix for every row of `x` with mean weights, no dropout.
    pub fn feature_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let mut out = Vec::new();
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut width = 0;
        for chunk in rows.chunks(EVAL_CHUNK) {
            let tape = Tape::new();
            let p = self.params.bind_frozen(&tape);
            let mut rng = RngState::new(0);
            let mut cx = Ctx::eval(&tape, &p, &mut rng);
            let xv = tape.constant(x.select_rows(chunk));
            let f = self.features(&mut cx, xv)?.value();
            width = f.cols();
            out.extend(f.into_data());
        }
        Tensor::matrix(x.rows(), width, out)
    }

    /// Mean NLL with mean weights, plus the posterior KL divided by `n_train`.
    fn heldout_objective(&self, x: &Tensor, y: &[f64], n_train: usize) -> Result<f64> {
        let rows: Vec<usize> = (0..x.rows()).collect();
        let mut nll = 0.0;
        let mut kl = 0.0;
        for chunk in rows.chunks(EVAL_CHUNK) {
            let tape = Tape::new();
            let p = self.params.bind_frozen(&tape);
            let mut rng = RngState::new(0);
            let mut cx = Ctx::eval(&tape, &p, &mut rng);
            let xv = tape.constant(x.select_rows(chunk));
            let yv = tape.constant(column(chunk.iter().map(|&i| y[i]).collect())?);
            let (mu, sigma) = self.predict(&mut cx, xv)?;
            nll += gaussian_nll_sum(mu, sigma, yv)?.item();
            kl = cx.total_kl().item();
        }
        Ok(nll / y.len() as f64 + kl / n_train as f64)
    }
}

fn column(v: Vec<f64>) -> Result<Tensor> {
    Tensor::matrix(v.len(), 1, v)
}

impl Learner for BayesForecaster {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_objective<'t>(&self, cx: &mut Ctx<'_, 't>, x: &Tensor, y: &[f64], info: &BatchInfo) -> Result<Var<'t>> {
        let xv = cx.tape.constant(x.clone());
        let yv = cx.tape.constant(column(y.to_vec())?);
        let (mu, sigma) = self.predict(cx, xv)?;
        let nll = gaussian_nll_sum(mu, sigma, yv)?;
        let kl = cx.total_kl();
        Ok(nll.add(kl.scale(info.kl_weight))?.scale(1.0 / y.len() as f64))
    }

    fn validation_loss(&self, x: &Tensor, y: &[f64], info: &BatchInfo) -> Result<f64> {
        self.heldout_objective(x, y, info.n_train)
    }
}

/// One linear map per quantile level, trained with the pinball loss.
#[derive(Clone, Debug)]
pub struct QuantileRegressor {
    pub params: ParamSet,
    w: ParamId,
    b: ParamId,
    pub levels: Vec<f64>,
    pub input: usize,
}

impl QuantileRegressor {
    /// Levels `{0.05, 0.10, …, 0.95}`.
    pub fn default_levels() -> Vec<f64> {
        (1..=19).map(|i| i as f64 / 20.0).collect()
    }

    pub fn new(input: usize, levels: Vec<f64>, rng: &mut RngState) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::config("quantile levels must be non-empty and inside (0,1)"));
        }
        if input == 0 {
            return Err(Error::config("quantile regression needs at least one input"));
        }
        let mut ps = ParamSet::new();
        let w = ps.add("qr.w", crate::layers::glorot(rng, levels.len(), input));
        let b = ps.add("qr.b", Tensor::zeros(&[levels.len()]));
        Ok(QuantileRegressor {
            params: ps,
            w,
            b,
            levels,
            input,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn forward<'t>(&self, tape: &'t Tape, p: &crate::params::Bound<'t>, x: &Tensor) -> Result<Var<'t>> {
        if x.cols() != self.input {
            return Err(Error::Dimension {
                op: "quantile_regression",
                left: vec![self.input],
                right: x.shape().to_vec(),
            });
        }
        tape.constant(x.clone()).matmul_t(p[self.w])?.add_row_bias(p[self.b])
    }

    fn targets(&self, y: &[f64]) -> Result<(Tensor, Tensor)> {
        let k = self.levels.len();
        let ys = y.iter().flat_map(|&v| std::iter::repeat_n(v, k)).collect();
        let qs = y.iter().flat_map(|_| self.levels.iter().copied()).collect();
        Ok((Tensor::matrix(y.len(), k, ys)?, Tensor::matrix(y.len(), k, qs)?))
    }

    /// `n×K` predictions, one column per level (not yet sorted).
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        Ok(self.forward(&tape, &p, x)?.value())
    }
}

impl Learner for QuantileRegressor {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn batch_objective<'t>(&self, cx: &mut Ctx<'_, 't>, x: &Tensor, y: &[f64], _: &BatchInfo) -> Result<Var<'t>> {
        let pred = self.forward(cx.tape, cx.p, x)?;
        let (ys, qs) = self.targets(y)?;
        pinball_mean(cx.tape.constant(ys), pred, cx.tape.constant(qs))
    }

    fn validation_loss(&self, x: &Tensor, y: &[f64], _: &BatchInfo) -> Result<f64> {
        let tape = Tape::new();
        let p = self.params.bind_frozen(&tape);
        let pred = self.forward(&tape, &p, x)?;
        let (ys, qs) = self.targets(y)?;
        Ok(pinball_mean(tape.constant(ys), pred, tape.constant(qs))?.item())
    }
}

/// VAE objective for one minibatch: reconstruction MSE plus `kl_weight`
/// times the latent KL averaged over the batch. Validation is the
/// reconstruction MSE of the posterior mean.
pub struct VaeLearner<'a> {
    pub vae: &'a mut Vae,
    pub kl_weight: f64,
}

impl Learner for VaeLearner<'_> {
    fn params(&self) -> &ParamSet {
        &self.vae.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.vae.params
    }

    fn batch_objective<'t>(&self, cx: &mut Ctx<'_, 't>, x: &Tensor, _: &[f64], _: &BatchInfo) -> Result<Var<'t>> {
        let xv = cx.tape.constant(x.clone());
        let (mu, sigma) = self.vae.encode(cx, xv)?;
        let z = Vae::reparameterize(cx, mu, sigma)?;
        let x_hat = self.vae.decode(cx, z)?;
        let prior = self.vae.prior;
        let kl = kl_sum(mu, sigma, cx.tape.scalar(prior.mu_z), cx.tape.scalar(prior.sigma_z_eps))?;
        let per_row = self.kl_weight / x.rows() as f64;
        mse(x_hat, xv)?.add(kl.scale(per_row))
    }

    fn validation_loss(&self, x: &Tensor, _: &[f64], _: &BatchInfo) -> Result<f64> {
        reconstruction_error(x, &self.vae.reconstruct(x)?)
    }
}

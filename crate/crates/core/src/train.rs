//! The learning loop: Adam, minibatching, a chronological validation split,
//! early stopping with best-epoch restoration, and grid search.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrainSplit;
use crate::error::{Error, Result};
use crate::layers::Ctx;
use crate::params::ParamSet;
use crate::tensor::{mix_seed, RngState, Tape, Tensor, Var};

/// Hyperparameters. Defaults follow the reference configuration; the
/// fields after `seed` are knobs the reference leaves open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub val_split: f64,
    pub neurons: usize,
    pub lags: usize,
    pub latent_dims: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Global L2 norm bound on each step's gradient.
    pub grad_clip: f64,
    /// Weight of the summed weight-posterior KL per minibatch; `None` means
    /// `1/num_batches`.
    pub kl_weight: Option<f64>,
    pub vae_hidden: usize,
    /// Weight of the per-window latent KL in the VAE objective; `None` means
    /// `1/lags`, which makes the objective a summed squared error plus KL.
    pub vae_kl_weight: Option<f64>,
    /// Epochs for the VAE stage; `None` reuses `epochs`.
    pub vae_epochs: Option<usize>,
    /// Resample stage-2 latent features every epoch instead of using `μ_q`.
    pub stochastic_z: bool,
    /// Wrap recurrent and hidden dense weights in Gaussian posteriors too.
    pub variational_recurrent: bool,
    pub trainable_prior: bool,
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 128,
            lr: 0.001,
            patience: 20,
            val_split: 0.2,
            neurons: 48,
            lags: 96,
            latent_dims: 48,
            dropout: 0.5,
            seed: 0,
            grad_clip: 5.0,
            kl_weight: None,
            vae_hidden: 64,
            vae_kl_weight: None,
            vae_epochs: None,
            stochastic_z: false,
            variational_recurrent: false,
            trainable_prior: false,
            mc_samples: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.val_split > 0.0 && self.val_split < 1.0) {
            return bad(format!("val_split must be in (0,1), got {}", self.val_split));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.patience > self.epochs {
            return bad(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.neurons == 0 || self.lags == 0 || self.latent_dims == 0 || self.vae_hidden == 0 {
            return bad("layer sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0,1), got {}", self.dropout));
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn vae_epochs(&self) -> usize {
        self.vae_epochs.unwrap_or(self.epochs)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros = |ps: &ParamSet| ps.values().iter().map(|t| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros(params),
            v: zeros(params),
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
        adam_step(self, params, grads)
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::contract(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.values().iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::contract(format!(
                "adam: parameter shape {:?} vs gradient shape {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= state.lr * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Per-epoch record of a fit. Epochs are numbered from 1.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub seconds: Vec<f64>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.val_loss
            .get(self.best_epoch.wrapping_sub(1))
            .copied()
            .unwrap_or(f64::NAN)
    }

    /// Equal losses and epochs, ignoring wall-clock time.
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        bits(&self.train_loss) == bits(&other.train_loss)
            && bits(&self.val_loss) == bits(&other.val_loss)
            && self.stopped_epoch == other.stopped_epoch
            && self.best_epoch == other.best_epoch
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "train_loss", "val_loss", "seconds"])?;
        for i in 0..self.train_loss.len() {
            out.write_record([
                (i + 1).to_string(),
                format!("{:.6}", self.train_loss[i]),
                format!("{:.6}", self.val_loss[i]),
                format!("{:.3}", self.seconds[i]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Patience-based stopping on a loss to be minimised. An epoch improves when
/// its loss is below `best − min_delta`.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    best: f64,
    best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            min_delta: 0.0,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn with_min_delta(mut self, min_delta: f64) -> Self {
        self.min_delta = min_delta;
        self
    }

    /// Records `loss` for `epoch`; returns `(improved, stop)`.
    pub fn update(&mut self, epoch: usize, loss: f64) -> (bool, bool) {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.best_epoch = epoch;
            self.wait = 0;
            (true, false)
        } else {
            self.wait += 1;
            (false, self.wait >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Scaling information handed to [`Learner::batch_objective`].
#[derive(Clone, Copy, Debug)]
pub struct BatchInfo {
    /// Rows used for gradient steps (excluding validation).
    pub n_train: usize,
    pub num_batches: usize,
    /// Multiplier on the summed KL of one minibatch.
    pub kl_weight: f64,
}

/// Something `fit` can train.
pub trait Learner {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;

    /// Per-row objective of one minibatch. Its value summed over an epoch
    /// and multiplied by batch length gives the epoch's total objective.
    fn batch_objective<'t>(
        &self,
        cx: &mut Ctx<'_, 't>,
        x: &Tensor,
        y: &[f64],
        info: &BatchInfo,
    ) -> Result<Var<'t>>;

    /// Deterministic held-out loss used for early stopping.
    fn validation_loss(&self, x: &Tensor, y: &[f64], info: &BatchInfo) -> Result<f64>;
}

/// Rows of an `n`-row training split used for gradient steps; the rest
/// validate.
pub fn fit_rows(n: usize, val_split: f64) -> usize {
    n.saturating_sub((n as f64 * val_split).round() as usize)
}

/// Trains on the earlier `1 − val_split` of `data`, monitoring the rest.
pub fn fit<L: Learner>(model: &mut L, data: &TrainSplit, cfg: &TrainConfig, rng: &mut RngState) -> Result<TrainHistory> {
    fit_resampled(model, data, cfg, rng, None)
}

/// Per-epoch replacement of the training-portion features.
pub type Resampler<'a> = &'a mut dyn FnMut(&mut RngState) -> Result<Tensor>;

/// As [`fit`], but when `resample` is given it supplies fresh features for
/// the fitting rows (all rows of `data` before the validation cut) at the
/// start of every epoch.
pub fn fit_resampled<L: Learner>(
    model: &mut L,
    data: &TrainSplit,
    cfg: &TrainConfig,
    rng: &mut RngState,
    mut resample: Option<Resampler<'_>>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let ds = &data.0;
    let n = ds.len();
    let n_fit = fit_rows(n, cfg.val_split);
    let n_val = n - n_fit;
    if n_val == 0 || n_fit < cfg.batch_size {
        return Err(Error::contract(format!(
            "{n} training rows leave {n_fit} for fitting and {n_val} for validation; need at least one batch of {}",
            cfg.batch_size
        )));
    }
    let fit_idx: Vec<usize> = (0..n_fit).collect();
    let val_idx: Vec<usize> = (n_fit..n).collect();
    let mut x_fit = ds.x.select_rows(&fit_idx);
    let y_fit: Vec<f64> = ds.y[..n_fit].to_vec();
    let x_val = ds.x.select_rows(&val_idx);
    let y_val: Vec<f64> = ds.y[n_fit..].to_vec();

    let num_batches = n_fit.div_ceil(cfg.batch_size);
    let info = BatchInfo {
        n_train: n_fit,
        num_batches,
        kl_weight: cfg.kl_weight.unwrap_or(1.0 / num_batches as f64),
    };
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = model.params().values().to_vec();
    let mut hist = TrainHistory::default();
    let mut order: Vec<usize> = (0..n_fit).collect();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        if let Some(f) = resample.as_mut() {
            let fresh = f(rng)?;
            if fresh.shape() != x_fit.shape() {
                return Err(Error::Dimension {
                    op: "resample",
                    left: x_fit.shape().to_vec(),
                    right: fresh.shape().to_vec(),
                });
            }
            x_fit = fresh;
        }
        rng.shuffle(&mut order);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = x_fit.select_rows(chunk);
            let yb: Vec<f64> = chunk.iter().map(|&i| y_fit[i]).collect();
            let tape = Tape::new();
            let bound = model.params().bind(&tape);
            let obj = {
                let mut cx = Ctx::train(&tape, &bound, rng);
                model.batch_objective(&mut cx, &xb, &yb, &info)?
            };
            let value = obj.item();
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            total += value * chunk.len() as f64;
            let mut g = tape.backward(obj)?;
            let mut grads = bound.grads(&mut g);
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(model.params_mut(), &grads)?;
        }
        let val = model.validation_loss(&x_val, &y_val, &info)?;
        if !val.is_finite() {
            return Err(Error::Divergence { epoch, loss: val });
        }
        hist.train_loss.push(total / n_fit as f64);
        hist.val_loss.push(val);
        hist.seconds.push(started.elapsed().as_secs_f64());
        hist.stopped_epoch = epoch;
        let (improved, stop) = stopper.update(epoch, val);
        if improved {
            best_params = model.params().values().to_vec();
        }
        if stop {
            break;
        }
    }
    hist.best_epoch = stopper.best_epoch();
    for (dst, src) in model.params_mut().values_mut().iter_mut().zip(best_params) {
        *dst = src;
    }
    Ok(hist)
}

/// Candidate lists per hyperparameter. Unlisted fields keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSpace {
    pub lr: Vec<f64>,
    pub neurons: Vec<usize>,
    pub batch_size: Vec<usize>,
    pub dropout: Vec<f64>,
    pub latent_dims: Vec<usize>,
}

impl SearchSpace {
    /// Cartesian product in a fixed order (`lr` varies slowest).
    pub fn candidates(&self, base: &TrainConfig) -> Result<Vec<TrainConfig>> {
        let pick = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let picku = |v: &[usize], d: usize| if v.is_empty() { vec![d] } else { v.to_vec() };
        if self.lr.is_empty()
            && self.neurons.is_empty()
            && self.batch_size.is_empty()
            && self.dropout.is_empty()
            && self.latent_dims.is_empty()
        {
            return Err(Error::contract("grid search space is empty"));
        }
        let mut out = Vec::new();
        for &lr in &pick(&self.lr, base.lr) {
            for &neurons in &picku(&self.neurons, base.neurons) {
                for &batch_size in &picku(&self.batch_size, base.batch_size) {
                    for &dropout in &pick(&self.dropout, base.dropout) {
                        for &latent_dims in &picku(&self.latent_dims, base.latent_dims) {
                            out.push(TrainConfig {
                                lr,
                                neurons,
                                batch_size,
                                dropout,
                                latent_dims,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub config: TrainConfig,
    /// Best validation loss, NaN when training failed or diverged.
    pub score: f64,
    pub params: usize,
    pub error: Option<String>,
}

/// Builds, trains and scores one candidate; returns `(best val loss, params)`.
pub type Evaluate<'a> = dyn Fn(&TrainConfig) -> Result<(f64, usize)> + Sync + 'a;

/// Exhaustive search. Candidates run in parallel, each with a seed derived
/// from the base seed and its position; rows come back in candidate order.
/// The best row has the lowest score, then fewest parameters, then lowest
/// lr; failed candidates rank last.
pub fn grid_search(space: &SearchSpace, base: &TrainConfig, eval: &Evaluate<'_>) -> Result<(TrainConfig, Vec<GridRow>)> {
    let cands = space.candidates(base)?;
    let rows: Vec<GridRow> = cands
        .into_par_iter()
        .enumerate()
        .map(|(i, mut c)| {
            c.seed = mix_seed(base.seed, i as u64);
            match eval(&c) {
                Ok((score, params)) => GridRow {
                    config: c,
                    score,
                    params,
                    error: None,
                },
                Err(e) => GridRow {
                    config: c,
                    score: f64::NAN,
                    params: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = rank(&rows)[0];
    Ok((rows[best].config.clone(), rows))
}

/// Row indices from best to worst.
pub fn rank(rows: &[GridRow]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    let key = |r: &GridRow| if r.score.is_finite() { r.score } else { f64::INFINITY };
    idx.sort_by(|&a, &b| {
        let (ra, rb) = (&rows[a], &rows[b]);
        key(ra)
            .total_cmp(&key(rb))
            .then(ra.params.cmp(&rb.params))
            .then(ra.config.lr.total_cmp(&rb.config.lr))
    });
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ScalerParams, WindowedDataset};
    use crate::layers::Dense;

    struct Linear {
        ps: ParamSet,
        layer: Dense,
    }

    impl Linear {
        fn new(seed: u64) -> Self {
            let mut ps = ParamSet::new();
            let layer = Dense::new(&mut ps, "lin", 1, 1, &mut RngState::new(seed));
            Linear { ps, layer }
        }

        fn slope(&self) -> f64 {
            self.ps.values()[0].item()
        }
    }

    impl Learner for Linear {
        fn params(&self) -> &ParamSet {
            &self.ps
        }
        fn params_mut(&mut self) -> &mut ParamSet {
            &mut self.ps
        }
        fn batch_objective<'t>(&self, cx: &mut Ctx<'_, 't>, x: &Tensor, y: &[f64], _: &BatchInfo) -> Result<Var<'t>> {
            let xv = cx.tape.constant(x.clone());
            let yv = cx.tape.constant(Tensor::matrix(y.len(), 1, y.to_vec())?);
            crate::losses::graph::mse(self.layer.forward(cx, xv)?, yv)
        }
        fn validation_loss(&self, x: &Tensor, y: &[f64], _: &BatchInfo) -> Result<f64> {
            let tape = Tape::new();
            let p = self.ps.bind_frozen(&tape);
            let mut rng = RngState::new(0);
            let mut cx = Ctx::eval(&tape, &p, &mut rng);
            let xv = tape.constant(x.clone());
            let yv = tape.constant(Tensor::matrix(y.len(), 1, y.to_vec())?);
            Ok(crate::losses::graph::mse(self.layer.forward(&mut cx, xv)?, yv)?.item())
        }
    }

    fn line_data(n: usize) -> TrainSplit {
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        let y = xs.iter().map(|x| 2.0 * x).collect();
        TrainSplit(WindowedDataset {
            x: Tensor::matrix(n, 1, xs).unwrap(),
            y,
            scaler: ScalerParams::identity(),
            times: None,
        })
    }

    #[test]
    fn adam_examples() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![0.5]));
        let mut st = AdamState::new(&ps, 0.001);
        adam_step(&mut st, &mut ps, &[Tensor::vector(vec![0.0])]).unwrap();
        assert_eq!(ps.values()[0].item(), 0.5);
        assert_eq!(st.t, 1);

        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![0.5]));
        let mut st = AdamState::new(&ps, 0.001);
        adam_step(&mut st, &mut ps, &[Tensor::vector(vec![1.0])]).unwrap();
        // m̂ = 1, v̂ = 1, Δ = −0.001/(1 + 1e−8)
        assert!((ps.values()[0].item() - 0.5 + 0.001).abs() < 1e-10);
        assert!(adam_step(&mut st, &mut ps, &[Tensor::vector(vec![1.0, 2.0])]).is_err());
        assert!(adam_step(&mut st, &mut ps, &[]).is_err());
    }

    #[test]
    fn adam_is_reproducible() {
        let run = || {
            let mut ps = ParamSet::new();
            ps.add("w", Tensor::vector(vec![0.5, -0.2]));
            let mut st = AdamState::new(&ps, 0.01);
            for _ in 0..2 {
                adam_step(&mut st, &mut ps, &[Tensor::vector(vec![0.3, -1.7])]).unwrap();
            }
            ps.values()[0].clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::vector(vec![3.0]), Tensor::vector(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].item() - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
        let mut small = vec![Tensor::vector(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].item(), 0.1);
    }

    #[test]
    fn early_stopping_patience_semantics() {
        // Nothing within 0.05 of the best counts as an improvement here.
        let mut es = EarlyStopping::new(20).with_min_delta(0.05);
        assert_eq!(es.update(1, 1.0), (true, false));
        let mut stopped = None;
        for e in 2..=40 {
            let v = 0.95 + 0.01 * (e % 3) as f64;
            if es.update(e, v).1 {
                stopped = Some(e);
                break;
            }
        }
        assert_eq!(stopped, Some(21));
        assert_eq!(es.best_epoch(), 1);

        let mut plain = EarlyStopping::new(20);
        plain.update(1, 1.0);
        let stop = (2..=21).map(|e| plain.update(e, 1.0).1).last().unwrap();
        assert!(stop);
        assert_eq!(plain.best_epoch(), 1);
    }

    #[test]
    fn patience_equal_to_epochs_never_stops_early() {
        let mut es = EarlyStopping::new(10);
        es.update(1, 0.5);
        assert!((2..=10).all(|e| !es.update(e, 1.0).1));
    }

    #[test]
    fn dense_regression_recovers_slope() {
        let mut m = Linear::new(1);
        let data = line_data(500);
        let cfg = TrainConfig {
            epochs: 125,
            batch_size: 100,
            lr: 0.05,
            patience: 125,
            dropout: 0.0,
            ..TrainConfig::default()
        };
        // 4 batches × 125 epochs = 500 steps
        let hist = fit(&mut m, &data, &cfg, &mut RngState::new(2)).unwrap();
        assert!((m.slope() - 2.0).abs() < 0.01, "slope {}", m.slope());
        assert_eq!(hist.stopped_epoch, 125);
    }

    #[test]
    fn fit_restores_best_epoch_and_is_deterministic() {
        let data = line_data(300);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 0.02,
            patience: 5,
            ..TrainConfig::default()
        };
        let mut a = Linear::new(3);
        let ha = fit(&mut a, &data, &cfg, &mut RngState::new(4)).unwrap();
        let mut b = Linear::new(3);
        let hb = fit(&mut b, &data, &cfg, &mut RngState::new(4)).unwrap();
        assert!(ha.same_trajectory(&hb));
        let best = ha.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(ha.best_val_loss(), best);
        let n_fit = 240;
        let val_x = data.0.x.select_rows(&(n_fit..300).collect::<Vec<_>>());
        let info = BatchInfo {
            n_train: n_fit,
            num_batches: 8,
            kl_weight: 0.125,
        };
        let now = a.validation_loss(&val_x, &data.0.y[n_fit..], &info).unwrap();
        assert!((now - best).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_tiny_data() {
        let mut m = Linear::new(0);
        let err = fit(&mut m, &line_data(10), &TrainConfig::default(), &mut RngState::new(0));
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            val_split: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig {
            patience: 200,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 5, "patience": 5}"#).unwrap();
        assert_eq!(parsed.epochs, 5);
        assert_eq!(parsed.lags, 96);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 5}"#).is_err());
    }

    #[test]
    fn history_csv_layout() {
        let h = TrainHistory {
            train_loss: vec![1.0, 0.5],
            val_loss: vec![1.1, 0.6],
            seconds: vec![0.1, 0.2],
            stopped_epoch: 2,
            best_epoch: 2,
        };
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss,seconds");
        assert_eq!(lines[2], "2,0.500000,0.600000,0.200");
    }

    fn scored(space: &SearchSpace, base: &TrainConfig) -> (TrainConfig, Vec<GridRow>) {
        let data = line_data(200);
        let eval = |c: &TrainConfig| -> Result<(f64, usize)> {
            let mut m = Linear::new(c.seed);
            let h = fit(&mut m, &data, c, &mut RngState::new(c.seed))?;
            Ok((h.best_val_loss(), m.ps.scalar_count()))
        };
        grid_search(space, base, &eval).unwrap()
    }

    #[test]
    fn grid_search_cases() {
        let base = TrainConfig {
            epochs: 10,
            patience: 10,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let single = SearchSpace {
            lr: vec![0.01],
            ..SearchSpace::default()
        };
        let (best, rows) = scored(&single, &base);
        assert_eq!(rows.len(), 1);
        assert_eq!(best.lr, 0.01);

        // Steps of size 1e200 overflow the squared error to infinity.
        let two = SearchSpace {
            lr: vec![1e200, 0.01],
            batch_size: vec![20, 40],
            ..SearchSpace::default()
        };
        let (best, rows) = scored(&two, &base);
        assert_eq!(rows.len(), 4);
        assert_eq!(best.lr, 0.01);
        let order = rank(&rows);
        assert!(rows[order[2]].score.is_nan() && rows[order[3]].score.is_nan());
        assert!(SearchSpace::default().candidates(&base).is_err());
    }

    #[test]
    fn ties_prefer_fewer_params_then_lower_lr() {
        let row = |lr, params| GridRow {
            config: TrainConfig {
                lr,
                ..TrainConfig::default()
            },
            score: 1.0,
            params,
            error: None,
        };
        let rows = vec![row(0.01, 10), row(0.001, 10), row(0.0001, 20)];
        assert_eq!(rank(&rows), vec![1, 0, 2]);
    }
}

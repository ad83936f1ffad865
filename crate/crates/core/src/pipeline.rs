//! The M1–M8 model zoo, Monte-Carlo prediction intervals, scoring and the
//! comparison harness.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ScalerParams, TestSplit, TrainSplit, WindowedDataset};
use crate::error::{Error, Result};
use crate::layers::{Ctx, PriorSpec, Vae, VariationalConfig};
use crate::metrics::{self, decile_levels, IntervalForecast, QuantileForecast};
use crate::models::{BayesForecaster, QuantileRegressor, RecurrentKind, VaeLearner, EVAL_CHUNK};
use crate::tensor::{mix_seed, RngState, Tape, Tensor};
use crate::train::{fit, fit_resampled, fit_rows, TrainConfig, TrainHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelId {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
}

impl ModelId {
    pub const ALL: [ModelId; 8] = [
        ModelId::M1,
        ModelId::M2,
        ModelId::M3,
        ModelId::M4,
        ModelId::M5,
        ModelId::M6,
        ModelId::M7,
        ModelId::M8,
    ];

    pub fn number(self) -> u64 {
        self as u64 + 1
    }

    pub fn kind(self) -> RecurrentKind {
        match self {
            ModelId::M1 | ModelId::M2 => RecurrentKind::Bilstm,
            ModelId::M3 | ModelId::M4 => RecurrentKind::Lstm,
            ModelId::M5 | ModelId::M6 => RecurrentKind::Rnn,
            ModelId::M7 => RecurrentKind::Dense,
            ModelId::M8 => RecurrentKind::QuantileRegression,
        }
    }

    pub fn uses_vae(self) -> bool {
        matches!(self, ModelId::M1 | ModelId::M3 | ModelId::M5)
    }

    pub fn label(self) -> &'static str {
        match self {
            ModelId::M1 => "VAE + Bayesian BiLSTM",
            ModelId::M2 => "Bayesian BiLSTM",
            ModelId::M3 => "VAE + Bayesian LSTM",
            ModelId::M4 => "Bayesian LSTM",
            ModelId::M5 => "VAE + Bayesian RNN",
            ModelId::M6 => "Bayesian RNN",
            ModelId::M7 => "Bayesian ANN",
            ModelId::M8 => "Quantile regression",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", self.number())
    }
}

impl FromStr for ModelId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let n: usize = s
            .strip_prefix(['m', 'M'])
            .and_then(|d| d.parse().ok())
            .filter(|n| (1..=8).contains(n))
            .ok_or_else(|| Error::config(format!("unknown model {s:?}; use m1..m8")))?;
        Ok(ModelId::ALL[n - 1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub id: ModelId,
    pub recurrent_kind: RecurrentKind,
    pub use_vae: bool,
    pub neurons: usize,
    pub lags: usize,
    pub latent: usize,
}

impl ModelConfig {
    pub fn new(id: ModelId, train: &TrainConfig) -> Self {
        ModelConfig {
            id,
            recurrent_kind: id.kind(),
            use_vae: id.uses_vae(),
            neurons: train.neurons,
            lags: train.lags,
            latent: train.latent_dims,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.recurrent_kind != self.id.kind() || self.use_vae != self.id.uses_vae() {
            return Err(Error::contract(format!(
                "{} is {:?} with vae={}, got {:?} with vae={}",
                self.id,
                self.id.kind(),
                self.id.uses_vae(),
                self.recurrent_kind,
                self.use_vae
            )));
        }
        if self.neurons == 0 || self.lags == 0 || self.latent == 0 {
            return Err(Error::contract("neurons, lags and latent must be positive"));
        }
        Ok(())
    }

    /// Sequence length the forecaster sees: the latent size behind a VAE,
    /// otherwise the number of lags.
    pub fn forecaster_input(&self) -> usize {
        if self.use_vae {
            self.latent
        } else {
            self.lags
        }
    }
}

#[derive(Clone, Debug)]
pub enum Network {
    Bayesian {
        vae: Option<Vae>,
        net: BayesForecaster,
    },
    Quantile(QuantileRegressor),
}

/// A configured network with the scaler of the data it was trained on.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub scaler: ScalerParams,
    pub network: Network,
}

pub fn build_model(cfg: &ModelConfig, train: &TrainConfig, rng: &mut RngState) -> Result<Model> {
    cfg.validate()?;
    train.validate()?;
    let network = if cfg.recurrent_kind == RecurrentKind::QuantileRegression {
        Network::Quantile(QuantileRegressor::new(cfg.lags, QuantileRegressor::default_levels(), rng)?)
    } else {
        let var = VariationalConfig {
            trainable_prior: train.trainable_prior,
            ..VariationalConfig::default()
        };
        let vae = if cfg.use_vae {
            Some(Vae::new(cfg.lags, cfg.latent, train.vae_hidden, PriorSpec::default(), rng)?)
        } else {
            None
        };
        let net = BayesForecaster::new(
            cfg.recurrent_kind,
            cfg.forecaster_input(),
            cfg.neurons,
            train.dropout,
            &var,
            train.variational_recurrent,
            rng,
        )?;
        Network::Bayesian { vae, net }
    };
    Ok(Model {
        config: cfg.clone(),
        train: train.clone(),
        scaler: ScalerParams::identity(),
        network,
    })
}

/// Scalar trainable values. `forecaster` excludes the VAE, which is
/// reported separately in `vae`; `total` includes both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub forecaster: usize,
    pub vae: usize,
}

pub fn count_params(model: &Model) -> ParamCount {
    let (forecaster, vae) = match &model.network {
        Network::Bayesian { vae, net } => (net.param_count(), vae.as_ref().map_or(0, Vae::param_count)),
        Network::Quantile(q) => (q.param_count(), 0),
    };
    ParamCount {
        total: forecaster + vae,
        trainable: forecaster + vae,
        forecaster,
        vae,
    }
}

/// Stage 1 trains the VAE on the input windows; stage 2 maps every window to
/// its latent features (posterior means, or fresh draws per epoch with
/// `stochastic_z`) and trains the forecaster on them.
pub fn fit_vae_then_bayesian(
    vae: &mut Vae,
    net: &mut BayesForecaster,
    data: &TrainSplit,
    cfg: &TrainConfig,
    rng: &mut RngState,
) -> Result<(TrainHistory, TrainHistory)> {
    let vae_epochs = cfg.vae_epochs();
    let stage1 = TrainConfig {
        epochs: vae_epochs,
        patience: cfg.patience.min(vae_epochs),
        ..cfg.clone()
    };
    let kl_weight = cfg.vae_kl_weight.unwrap_or(1.0 / vae.input_dim as f64);
    let h1 = fit(&mut VaeLearner { vae, kl_weight }, data, &stage1, rng)?;

    let (mu, sigma) = vae.encode_stats(&data.0.x)?;
    let latent = TrainSplit(WindowedDataset {
        x: mu.clone(),
        ..data.0.clone()
    });
    let h2 = if cfg.stochastic_z {
        let rows: Vec<usize> = (0..fit_rows(data.0.len(), cfg.val_split)).collect();
        let (mu_fit, sigma_fit) = (mu.select_rows(&rows), sigma.select_rows(&rows));
        let mut draw = |r: &mut RngState| -> Result<Tensor> {
            let eps = crate::tensor::gaussian_draw(r, mu_fit.shape());
            let z = mu_fit
                .data()
                .iter()
                .zip(sigma_fit.data())
                .zip(eps.data())
                .map(|((m, s), e)| m + s * e)
                .collect();
            Tensor::new(mu_fit.shape(), z)
        };
        fit_resampled(net, &latent, cfg, rng, Some(&mut draw))?
    } else {
        fit(net, &latent, cfg, rng)?
    };
    Ok((h1, h2))
}

impl Model {
    pub fn id(&self) -> ModelId {
        self.config.id
    }

    /// Trains every stage on `data` and adopts its scaler.
    pub fn fit(&mut self, data: &TrainSplit, rng: &mut RngState) -> Result<Vec<TrainHistory>> {
        if data.0.lags() != self.config.lags {
            return Err(Error::Dimension {
                op: "model_fit",
                left: vec![self.config.lags],
                right: vec![data.0.lags()],
            });
        }
        self.scaler = data.0.scaler;
        let cfg = self.train.clone();
        match &mut self.network {
            Network::Bayesian { vae: Some(vae), net } => {
                let (a, b) = fit_vae_then_bayesian(vae, net, data, &cfg, rng)?;
                Ok(vec![a, b])
            }
            Network::Bayesian { vae: None, net } => Ok(vec![fit(net, data, &cfg, rng)?]),
            Network::Quantile(q) => Ok(vec![fit(q, data, &cfg, rng)?]),
        }
    }

    /// Forecast with the configured number of MC samples and 50%/90% PIs.
    pub fn forecast(&self, x: &Tensor, rng: &mut RngState) -> Result<ForecastResult> {
        forecast_with_pis(self, x, self.train.mc_samples, rng, &[0.5, 0.9])
    }
}

/// Per-step forecast in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// `(coverage, interval)` sorted by coverage.
    pub intervals: Vec<(f64, IntervalForecast)>,
    /// Decile forecast used for the pinball score.
    pub quantiles: QuantileForecast,
    pub mc_samples: usize,
}

impl ForecastResult {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn interval(&self, coverage: f64) -> Option<&IntervalForecast> {
        self.intervals
            .iter()
            .find(|(c, _)| (c - coverage).abs() < 1e-9)
            .map(|(_, i)| i)
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn check_levels(levels: &[f64]) -> Result<Vec<f64>> {
    if levels.is_empty() || levels.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
        return Err(Error::contract("coverage levels must be non-empty and inside (0,1)"));
    }
    let mut l = levels.to_vec();
    l.sort_by(f64::total_cmp);
    l.dedup();
    Ok(l)
}

/// Widens intervals so each contains the mean and the next narrower one.
fn nest(mean: f64, bounds: &mut [(f64, f64)]) {
    let (mut lo, mut hi) = (mean, mean);
    for b in bounds.iter_mut() {
        b.0 = b.0.min(lo);
        b.1 = b.1.max(hi);
        (lo, hi) = *b;
    }
}

fn assemble(
    scaler: &ScalerParams,
    mean: Vec<f64>,
    std: Vec<f64>,
    levels: &[f64],
    bounds: Vec<Vec<(f64, f64)>>,
    deciles: Vec<Vec<f64>>,
    mc_samples: usize,
) -> Result<ForecastResult> {
    let mut intervals = Vec::with_capacity(levels.len());
    for (k, &c) in levels.iter().enumerate() {
        let lb = bounds.iter().map(|b| scaler.invert(b[k].0)).collect();
        let ub = bounds.iter().map(|b| scaler.invert(b[k].1)).collect();
        intervals.push((c, IntervalForecast::new(lb, ub, 1.0 - c)?));
    }
    let deciles = deciles.into_iter().map(|r| scaler.invert_all(&r)).collect();
    Ok(ForecastResult {
        mean: scaler.invert_all(&mean),
        std: std.iter().map(|&s| scaler.invert_spread(s)).collect(),
        intervals,
        quantiles: QuantileForecast::new(decile_levels(), deciles)?,
        mc_samples,
    })
}

/// Monte-Carlo predictive distribution for every row of the scaled windows
/// `x`. Each of `mc_samples` draws samples the Gaussian weights once, gives
/// `(μ_s, σ_s)` per window and one value `y_s ~ N(μ_s, σ_s²)`. The mean is
/// the average `μ_s`; intervals and deciles are empirical quantiles of the
/// `y_s`. The quantile-regression model reads its own quantiles instead.
pub fn forecast_with_pis(
    model: &Model,
    x: &Tensor,
    mc_samples: usize,
    rng: &mut RngState,
    levels: &[f64],
) -> Result<ForecastResult> {
    let levels = check_levels(levels)?;
    if x.shape().len() != 2 || x.cols() != model.config.lags {
        return Err(Error::Dimension {
            op: "forecast",
            left: vec![model.config.lags],
            right: x.shape().to_vec(),
        });
    }
    match &model.network {
        Network::Quantile(q) => quantile_forecast(q, &model.scaler, x, &levels),
        Network::Bayesian { vae, net } => {
            if mc_samples < 2 {
                return Err(Error::contract(format!("need at least 2 MC samples, got {mc_samples}")));
            }
            let input = match vae {
                Some(v) => v.encode_mean(x)?,
                None => x.clone(),
            };
            let (mu, ys) = sample_predictive(net, &input, mc_samples, rng)?;
            let n = input.rows();
            let s = mc_samples as f64;
            let mut mean = Vec::with_capacity(n);
            let mut std = Vec::with_capacity(n);
            let mut bounds = Vec::with_capacity(n);
            let mut deciles = Vec::with_capacity(n);
            let dl = decile_levels();
            let mut col = vec![0.0; mc_samples];
            for i in 0..n {
                for (k, c) in col.iter_mut().enumerate() {
                    *c = ys[k * n + i];
                }
                col.sort_by(f64::total_cmp);
                let m = (0..mc_samples).map(|k| mu[k * n + i]).sum::<f64>() / s;
                let ybar = col.iter().sum::<f64>() / s;
                let var = col.iter().map(|v| (v - ybar).powi(2)).sum::<f64>() / (s - 1.0);
                let mut b: Vec<(f64, f64)> = levels
                    .iter()
                    .map(|c| (quantile_sorted(&col, (1.0 - c) / 2.0), quantile_sorted(&col, (1.0 + c) / 2.0)))
                    .collect();
                nest(m, &mut b);
                mean.push(m);
                std.push(var.sqrt());
                bounds.push(b);
                deciles.push(dl.iter().map(|&q| quantile_sorted(&col, q)).collect());
            }
            assemble(&model.scaler, mean, std, &levels, bounds, deciles, mc_samples)
        }
    }
}

/// `(μ, y)` draws laid out `[sample][row]`.
fn sample_predictive(
    net: &BayesForecaster,
    input: &Tensor,
    samples: usize,
    rng: &mut RngState,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = input.rows();
    let weight_seed = rng.below(usize::MAX) as u64;
    // A deterministic feature block gives the same features for every draw,
    // so only the head is resampled.
    let feats = if net.variational_hidden {
        None
    } else {
        Some(net.feature_tensor(input)?)
    };
    let rows: Vec<usize> = (0..n).collect();
    let mut mu = Vec::with_capacity(samples * n);
    let mut ys = Vec::with_capacity(samples * n);
    for s in 0..samples {
        let seed = mix_seed(weight_seed, s as u64);
        for chunk in rows.chunks(EVAL_CHUNK) {
            // Same seed per chunk, so every chunk sees the same weight draw.
            let mut wr = RngState::new(seed);
            let tape = Tape::new();
            let p = net.params.bind_frozen(&tape);
            let mut cx = Ctx::new(&tape, &p, &mut wr, true, false);
            let (m, sd) = match &feats {
                Some(f) => {
                    let fv = tape.constant(f.select_rows(chunk));
                    net.head(&mut cx, fv)?
                }
                None => {
                    let xv = tape.constant(input.select_rows(chunk));
                    net.predict(&mut cx, xv)?
                }
            };
            for (mi, si) in m.value().data().iter().zip(sd.value().data()) {
                mu.push(*mi);
                ys.push(mi + si * rng.normal());
            }
        }
    }
    Ok((mu, ys))
}

const Z95: f64 = 1.644_853_626_951_472_2;

fn quantile_forecast(q: &QuantileRegressor, scaler: &ScalerParams, x: &Tensor, levels: &[f64]) -> Result<ForecastResult> {
    let pred = q.predict(x)?;
    let find = |p: f64| -> Result<usize> {
        q.levels
            .iter()
            .position(|l| (l - p).abs() < 1e-9)
            .ok_or_else(|| Error::contract(format!("quantile model has no level {p}")))
    };
    let mut order: Vec<usize> = (0..q.levels.len()).collect();
    order.sort_by(|&a, &b| q.levels[a].total_cmp(&q.levels[b]));
    let sorted_levels: Vec<f64> = order.iter().map(|&i| q.levels[i]).collect();
    let pos = |p: f64| -> Result<usize> {
        find(p)?;
        Ok(sorted_levels.iter().position(|l| (l - p).abs() < 1e-9).expect("present"))
    };
    let median = pos(0.5)?;
    let spread = (pos(0.05).ok(), pos(0.95).ok());
    let pairs: Vec<(usize, usize)> = levels
        .iter()
        .map(|c| Ok((pos((1.0 - c) / 2.0)?, pos((1.0 + c) / 2.0)?)))
        .collect::<Result<_>>()?;
    let dec: Vec<usize> = decile_levels().into_iter().map(pos).collect::<Result<_>>()?;

    let n = x.rows();
    let (mut mean, mut std, mut bounds, mut deciles) = (vec![], vec![], vec![], vec![]);
    for i in 0..n {
        // sorting the row repairs any quantile crossing
        let mut row: Vec<f64> = order.iter().map(|&k| pred.get(i, k)).collect();
        row.sort_by(f64::total_cmp);
        let m = row[median];
        let mut b: Vec<(f64, f64)> = pairs.iter().map(|&(lo, hi)| (row[lo], row[hi])).collect();
        nest(m, &mut b);
        mean.push(m);
        std.push(match spread {
            (Some(lo), Some(hi)) => (row[hi] - row[lo]) / (2.0 * Z95),
            _ => f64::NAN,
        });
        bounds.push(b);
        deciles.push(dec.iter().map(|&k| row[k]).collect());
    }
    assemble(scaler, mean, std, levels, bounds, deciles, 0)
}

/// `ŷ_i = X[i][L−1]`.
pub fn persistence_baseline(x: &Tensor) -> Vec<f64> {
    let l = x.cols();
    (0..x.rows()).map(|i| x.get(i, l - 1)).collect()
}

/// The score columns of a comparison row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub rmse: f64,
    pub mae: f64,
    pub r: f64,
    pub pinball_avg: f64,
    pub winkler: f64,
    pub brier: f64,
}

/// Scores a forecast against targets in original units. Winkler uses the
/// 90% interval.
pub fn score(result: &ForecastResult, y: &[f64]) -> Result<Scores> {
    let pi90 = result
        .interval(0.9)
        .ok_or_else(|| Error::contract("scoring needs a 90% interval"))?;
    Ok(Scores {
        rmse: metrics::rmse(&result.mean, y)?,
        mae: metrics::mae(&result.mean, y)?,
        r: metrics::r_score(&result.mean, y)?,
        pinball_avg: metrics::pinball_avg(&result.quantiles, y)?,
        winkler: metrics::winkler(pi90, y)?,
        brier: metrics::brier(&result.mean, y)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub model: ModelId,
    pub scores: Option<Scores>,
    pub weight_count: usize,
    pub vae_weight_count: usize,
    pub train_seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub dataset: String,
    pub rows: Vec<ReportRow>,
}

const METRICS: [&str; 8] = [
    "rmse",
    "mae",
    "r",
    "pinball_avg",
    "winkler",
    "brier",
    "weight_count",
    "vae_weight_count",
];

impl ComparisonReport {
    pub fn row(&self, id: ModelId) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.model == id)
    }

    /// Long layout `model,dataset,metric,value`, six decimals. Scores of a
    /// failed model are written as NaN.
    pub fn write_metrics_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "dataset", "metric", "value"])?;
        for r in &self.rows {
            let s = r.scores;
            let vals = [
                s.map_or(f64::NAN, |s| s.rmse),
                s.map_or(f64::NAN, |s| s.mae),
                s.map_or(f64::NAN, |s| s.r),
                s.map_or(f64::NAN, |s| s.pinball_avg),
                s.map_or(f64::NAN, |s| s.winkler),
                s.map_or(f64::NAN, |s| s.brier),
                r.weight_count as f64,
                r.vae_weight_count as f64,
            ];
            for (name, v) in METRICS.iter().zip(vals) {
                out.write_record([r.model.to_string(), self.dataset.clone(), name.to_string(), format!("{v:.6}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Wall-clock training seconds and status per model. Kept apart from the
    /// metrics so those stay byte-identical across runs.
    pub fn write_timing_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["model", "dataset", "train_seconds", "status"])?;
        for r in &self.rows {
            let status = r.error.clone().unwrap_or_else(|| "ok".into());
            out.write_record([
                r.model.to_string(),
                self.dataset.clone(),
                format!("{:.3}", r.train_seconds),
                status,
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_metrics_csv(std::fs::File::create(dir.join("metrics.csv"))?)?;
        self.write_timing_csv(std::fs::File::create(dir.join("timing.csv"))?)
    }

    /// Parses [`write_metrics_csv`](Self::write_metrics_csv) output. Timing
    /// is not part of that file and comes back as zero.
    pub fn read_metrics_csv(r: impl Read) -> Result<ComparisonReport> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut dataset = String::new();
        let mut rows: Vec<(ModelId, [f64; 8])> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let id: ModelId = rec[0].parse().map_err(|_| Error::data(format!("line {line}: bad model {:?}", &rec[0])))?;
            dataset = rec[1].to_string();
            let k = METRICS
                .iter()
                .position(|m| *m == &rec[2])
                .ok_or_else(|| Error::data(format!("line {line}: unknown metric {:?}", &rec[2])))?;
            let v: f64 = rec[3]
                .parse()
                .map_err(|_| Error::data(format!("line {line}: bad value {:?}", &rec[3])))?;
            if rows.last().map(|r| r.0) != Some(id) {
                rows.push((id, [f64::NAN; 8]));
            }
            rows.last_mut().expect("pushed").1[k] = v;
        }
        let rows = rows
            .into_iter()
            .map(|(model, v)| {
                let failed = v[..6].iter().any(|x| x.is_nan());
                ReportRow {
                    model,
                    scores: (!failed).then_some(Scores {
                        rmse: v[0],
                        mae: v[1],
                        r: v[2],
                        pinball_avg: v[3],
                        winkler: v[4],
                        brier: v[5],
                    }),
                    weight_count: v[6] as usize,
                    vae_weight_count: v[7] as usize,
                    train_seconds: 0.0,
                    error: failed.then(|| "failed".to_string()),
                }
            })
            .collect();
        Ok(ComparisonReport { dataset, rows })
    }
}

/// Trains and scores one model; the seed depends only on the base seed and
/// the model id.
pub fn evaluate_model(
    cfg: &ModelConfig,
    train: &TrainSplit,
    test: &TestSplit,
    tc: &TrainConfig,
) -> (ReportRow, Option<(Model, ForecastResult)>) {
    let mut row = ReportRow {
        model: cfg.id,
        scores: None,
        weight_count: 0,
        vae_weight_count: 0,
        train_seconds: 0.0,
        error: None,
    };
    let mut rng = RngState::new(mix_seed(tc.seed, cfg.id.number()));
    let run = |row: &mut ReportRow, rng: &mut RngState| -> Result<(Model, ForecastResult)> {
        let mut model = build_model(cfg, tc, rng)?;
        let pc = count_params(&model);
        row.weight_count = pc.forecaster;
        row.vae_weight_count = pc.vae;
        let started = Instant::now();
        model.fit(train, rng)?;
        row.train_seconds = started.elapsed().as_secs_f64();
        let fc = model.forecast(&test.0.x, rng)?;
        row.scores = Some(score(&fc, &test.0.y_original())?);
        Ok((model, fc))
    };
    match run(&mut row, &mut rng) {
        Ok(out) => (row, Some(out)),
        Err(e) => {
            row.error = Some(e.to_string());
            (row, None)
        }
    }
}

/// Trains and scores each model on the same split. Models run in parallel
/// with independent seeds; rows keep the order of `models`, and a failing
/// model yields a row with `error` set.
pub fn run_comparison(
    models: &[ModelConfig],
    train: &TrainSplit,
    test: &TestSplit,
    tc: &TrainConfig,
    dataset: &str,
) -> ComparisonReport {
    let rows = models
        .par_iter()
        .map(|m| evaluate_model(m, train, test, tc).0)
        .collect();
    ComparisonReport {
        dataset: dataset.to_string(),
        rows,
    }
}

/// Directional checks for repeated comparisons on real data: median M1 at
/// most median M2 on RMSE and pinball, and every VAE model lighter than its
/// counterpart. Returns `(description, holds)` pairs.
pub fn directional_checks(reports: &[ComparisonReport]) -> Vec<(String, bool)> {
    let median = |id: ModelId, f: fn(&Scores) -> f64| -> Option<f64> {
        let mut v: Vec<f64> = reports
            .iter()
            .filter_map(|r| r.row(id).and_then(|row| row.scores.as_ref()).map(f))
            .collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(quantile_sorted(&v, 0.5))
    };
    let mut out = Vec::new();
    for (name, f) in [("rmse", (|s: &Scores| s.rmse) as fn(&Scores) -> f64), ("pinball_avg", |s| s.pinball_avg)] {
        if let (Some(a), Some(b)) = (median(ModelId::M1, f), median(ModelId::M2, f)) {
            out.push((format!("median {name}: M1 {a:.6} <= M2 {b:.6}"), a <= b));
        }
    }
    if let Some(r) = reports.first() {
        for (v, p) in [(ModelId::M1, ModelId::M2), (ModelId::M3, ModelId::M4), (ModelId::M5, ModelId::M6)] {
            if let (Some(a), Some(b)) = (r.row(v), r.row(p)) {
                out.push((
                    format!("{v} weights {} < {p} weights {}", a.weight_count, b.weight_count),
                    a.weight_count < b.weight_count,
                ));
            }
        }
    }
    out
}

/// Columns `t, y_true, mean, lb50, ub50, lb90, ub90`.
pub fn write_plot_data(result: &ForecastResult, y_true: &[f64], w: impl Write) -> Result<()> {
    if y_true.len() != result.len() {
        return Err(Error::contract(format!(
            "{} observations for {} forecasts",
            y_true.len(),
            result.len()
        )));
    }
    let (p50, p90) = match (result.interval(0.5), result.interval(0.9)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::contract("plot data needs 50% and 90% intervals")),
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "y_true", "mean", "lb50", "ub50", "lb90", "ub90"])?;
    for t in 0..y_true.len() {
        let vals = [y_true[t], result.mean[t], p50.lb[t], p50.ub[t], p90.lb[t], p90.ub[t]];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite plot value at step {t}")));
        }
        let mut rec = vec![t.to_string()];
        rec.extend(vals.iter().map(|v| format!("{v:.6}")));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn emit_plot_data(result: &ForecastResult, y_true: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_plot_data(result, y_true, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_windows;

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            patience: 3,
            batch_size: 32,
            neurons: 4,
            lags: 8,
            latent_dims: 4,
            vae_hidden: 8,
            mc_samples: 20,
            lr: 0.01,
            ..TrainConfig::default()
        }
    }

    fn sine_splits(n: usize, lags: usize) -> (TrainSplit, TestSplit) {
        let s: Vec<f64> = (0..n).map(|t| (t as f64 * 0.3).sin()).collect();
        let ds = make_windows(&s, lags, ScalerParams { min: -2.0, max: 2.0 }).unwrap();
        crate::data::split(&ds, 0.8).unwrap()
    }

    #[test]
    fn model_ids_and_configs() {
        assert_eq!("m1".parse::<ModelId>().unwrap(), ModelId::M1);
        assert_eq!("M8".parse::<ModelId>().unwrap(), ModelId::M8);
        assert!("m9".parse::<ModelId>().is_err());
        assert_eq!(ModelId::M7.to_string(), "M7");
        let tc = TrainConfig::default();
        assert_eq!(ModelConfig::new(ModelId::M1, &tc).forecaster_input(), 48);
        assert_eq!(ModelConfig::new(ModelId::M2, &tc).forecaster_input(), 96);
        let mut bad = ModelConfig::new(ModelId::M2, &tc);
        bad.use_vae = true;
        assert!(matches!(build_model(&bad, &tc, &mut RngState::new(0)), Err(Error::Contract(_))));
    }

    #[test]
    fn default_param_counts() {
        let tc = TrainConfig::default();
        let mut rng = RngState::new(0);
        let mut count = |id| count_params(&build_model(&ModelConfig::new(id, &tc), &tc, &mut rng).unwrap());
        let m1 = count(ModelId::M1);
        let m2 = count(ModelId::M2);
        assert_eq!(m1.forecaster, m2.forecaster);
        assert_eq!(m1.vae, (96 * 64 + 64) + 2 * (64 * 48 + 48) + (48 * 64 + 64) + (64 * 96 + 96));
        assert_eq!(m2.vae, 0);
        assert_eq!(m1.total, m1.forecaster + m1.vae);
        assert_eq!(count(ModelId::M8).forecaster, 19 * 96 + 19);
    }

    #[test]
    fn quantile_sorted_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
    }

    #[test]
    fn nesting_repairs_crossing() {
        let mut b = vec![(0.2, 0.4), (0.3, 0.35)];
        nest(0.1, &mut b);
        assert_eq!(b, vec![(0.1, 0.4), (0.1, 0.4)]);
    }

    #[test]
    fn degenerate_model_has_zero_width() {
        let tc = small_cfg();
        let mut rng = RngState::new(1);
        let mut m = build_model(&ModelConfig::new(ModelId::M2, &tc), &tc, &mut rng).unwrap();
        if let Network::Bayesian { net, .. } = &mut m.network {
            let names = net.params.names().to_vec();
            for (name, v) in names.iter().zip(net.params.values_mut()) {
                if name.starts_with("head") && name.ends_with(".rho") {
                    v.data_mut().iter_mut().for_each(|r| *r = -40.0);
                }
                if name.starts_with("head.b") && !name.ends_with(".rho") {
                    v.data_mut()[1] = -40.0;
                }
            }
        }
        let (_, test) = sine_splits(120, 8);
        let fc = forecast_with_pis(&m, &test.0.x, 10, &mut rng, &[0.5, 0.9]).unwrap();
        // only the σ floor of 1e-6 (scaled units) is left
        for (_, iv) in &fc.intervals {
            assert!(iv.mean_width() < 2e-5);
        }
        assert!(fc.std.iter().all(|s| *s < 1e-5));
        assert!(forecast_with_pis(&m, &test.0.x, 1, &mut rng, &[0.9]).is_err());
    }

    #[test]
    fn intervals_nest_and_forecasts_reproduce() {
        let tc = small_cfg();
        let (train, test) = sine_splits(600, 8);
        for id in [ModelId::M1, ModelId::M4, ModelId::M7, ModelId::M8] {
            let mut rng = RngState::new(3);
            let mut m = build_model(&ModelConfig::new(id, &tc), &tc, &mut rng).unwrap();
            let hist = m.fit(&train, &mut rng).unwrap();
            assert_eq!(hist.len(), if id.uses_vae() { 2 } else { 1 });
            let a = forecast_with_pis(&m, &test.0.x, 20, &mut RngState::new(9), &[0.9, 0.5]).unwrap();
            let b = forecast_with_pis(&m, &test.0.x, 20, &mut RngState::new(9), &[0.5, 0.9]).unwrap();
            assert_eq!(a, b, "{id}");
            let (p50, p90) = (a.interval(0.5).unwrap(), a.interval(0.9).unwrap());
            for t in 0..a.len() {
                assert!(p90.lb[t] <= p50.lb[t] && p50.lb[t] <= a.mean[t] && a.mean[t] <= p50.ub[t] && p50.ub[t] <= p90.ub[t]);
            }
            assert_eq!(a.quantiles.levels.len(), 9);
        }
    }

    #[test]
    fn comparison_rows_and_csv_round_trip() {
        let tc = small_cfg();
        let (train, test) = sine_splits(600, 8);
        let models: Vec<ModelConfig> = [ModelId::M2, ModelId::M8].iter().map(|&id| ModelConfig::new(id, &tc)).collect();
        let rep = run_comparison(&models, &train, &test, &tc, "sine");
        assert_eq!(rep.rows.len(), 2);
        assert!(rep.rows.iter().all(|r| r.scores.is_some() && r.error.is_none() && r.weight_count > 0));
        let mut buf = Vec::new();
        rep.write_metrics_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8_lossy(&buf).lines().count(), 1 + 2 * 8);
        let back = ComparisonReport::read_metrics_csv(buf.as_slice()).unwrap();
        assert_eq!(back.dataset, "sine");
        for (a, b) in rep.rows.iter().zip(&back.rows) {
            let (sa, sb) = (a.scores.unwrap(), b.scores.unwrap());
            assert!((sa.rmse - sb.rmse).abs() <= 5e-7 && (sa.winkler - sb.winkler).abs() <= 5e-7);
            assert_eq!(a.weight_count, b.weight_count);
        }
    }

    #[test]
    fn failed_model_is_reported_not_fatal() {
        let tc = small_cfg();
        let (train, test) = sine_splits(600, 8);
        let mut broken = ModelConfig::new(ModelId::M4, &tc);
        broken.lags = 5;
        let rep = run_comparison(&[broken, ModelConfig::new(ModelId::M8, &tc)], &train, &test, &tc, "sine");
        assert!(rep.rows[0].error.is_some() && rep.rows[0].scores.is_none());
        assert!(rep.rows[1].scores.is_some());
        let mut buf = Vec::new();
        rep.write_metrics_csv(&mut buf).unwrap();
        let back = ComparisonReport::read_metrics_csv(buf.as_slice()).unwrap();
        assert!(back.rows[0].scores.is_none());
    }

    #[test]
    fn plot_data_layout() {
        let fc = ForecastResult {
            mean: vec![1.0; 96],
            std: vec![0.1; 96],
            intervals: vec![
                (0.5, IntervalForecast::new(vec![0.9; 96], vec![1.1; 96], 0.5).unwrap()),
                (0.9, IntervalForecast::new(vec![0.8; 96], vec![1.2; 96], 0.1).unwrap()),
            ],
            quantiles: QuantileForecast::new(decile_levels(), vec![vec![1.0; 9]; 96]).unwrap(),
            mc_samples: 2,
        };
        let mut buf = Vec::new();
        write_plot_data(&fc, &[1.0; 96], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 97);
        assert!(lines.iter().all(|l| l.split(',').count() == 7));
        assert!(write_plot_data(&fc, &[1.0; 95], &mut Vec::new()).is_err());
        let mut bad = fc.clone();
        bad.mean[3] = f64::NAN;
        assert!(write_plot_data(&bad, &[1.0; 96], &mut Vec::new()).is_err());
    }

    #[test]
    fn persistence_cases() {
        let flat = make_windows(&[0.5; 20], 4, ScalerParams::identity()).unwrap();
        let p = persistence_baseline(&flat.x);
        assert_eq!(p.len(), flat.len());
        assert_eq!(metrics::rmse(&p, &flat.y).unwrap(), 0.0);

        let mut rng = RngState::new(6);
        let mut walk = vec![0.0];
        for _ in 0..20_000 {
            let next = walk.last().unwrap() + 0.1 * rng.normal();
            walk.push(next);
        }
        let ds = make_windows(&walk, 3, ScalerParams::identity()).unwrap();
        let e = metrics::rmse(&persistence_baseline(&ds.x), &ds.y).unwrap();
        assert!((e - 0.1).abs() < 0.003);
    }
}

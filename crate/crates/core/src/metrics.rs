//! Point and probabilistic forecast scores.

use crate::error::{Error, Result};
use crate::losses::pinball_training_loss;
use crate::tensor::Tensor;

/// Per-step prediction interval at miscoverage `gamma` (0.1 → 90% PI).
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalForecast {
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub gamma: f64,
}

impl IntervalForecast {
    pub fn new(lb: Vec<f64>, ub: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::contract(format!("gamma must be in (0,1), got {gamma}")));
        }
        check_lengths(lb.len(), ub.len())?;
        if let Some(i) = (0..lb.len()).find(|&i| !(lb[i] <= ub[i])) {
            return Err(Error::contract(format!(
                "interval {i} has lb {} > ub {}",
                lb[i], ub[i]
            )));
        }
        Ok(IntervalForecast { lb, ub, gamma })
    }

    pub fn len(&self) -> usize {
        self.lb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lb.is_empty()
    }

    /// Fraction of `y` inside `[lb, ub]`.
    pub fn coverage(&self, y: &[f64]) -> Result<f64> {
        check_lengths(self.lb.len(), y.len())?;
        let inside = y
            .iter()
            .enumerate()
            .filter(|(i, &v)| self.lb[*i] <= v && v <= self.ub[*i])
            .count();
        Ok(inside as f64 / y.len() as f64)
    }

    pub fn mean_width(&self) -> f64 {
        self.lb.iter().zip(&self.ub).map(|(l, u)| u - l).sum::<f64>() / self.lb.len() as f64
    }
}

/// Quantile predictions `values[t][k]` at sorted `levels[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileForecast {
    pub levels: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl QuantileForecast {
    /// Sorts levels ascending and each step's values ascending, which also
    /// repairs quantile crossing.
    pub fn new(levels: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::contract("quantile forecast needs at least one level"));
        }
        if let Some(q) = levels.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
            return Err(Error::contract(format!("quantile level {q} outside (0,1)")));
        }
        if let Some(row) = values.iter().find(|r| r.len() != levels.len()) {
            return Err(Error::Dimension {
                op: "quantile_forecast",
                left: vec![levels.len()],
                right: vec![row.len()],
            });
        }
        let mut order: Vec<usize> = (0..levels.len()).collect();
        order.sort_by(|&a, &b| levels[a].total_cmp(&levels[b]));
        let levels: Vec<f64> = order.iter().map(|&i| levels[i]).collect();
        let values = values
            .into_iter()
            .map(|mut r| {
                r.sort_by(f64::total_cmp);
                r
            })
            .collect();
        Ok(QuantileForecast { levels, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `{0.1, 0.2, …, 0.9}`
pub fn decile_levels() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::contract("empty series"));
    }
    Ok(())
}

fn sse(y_hat: &[f64], y: &[f64]) -> f64 {
    y_hat.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum()
}

pub fn rmse(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y_hat.len(), y.len())?;
    Ok((sse(y_hat, y) / y.len() as f64).sqrt())
}

pub fn mae(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y_hat.len(), y.len())?;
    Ok(y_hat.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Coefficient of determination `1 − Σ(ŷ−y)²/Σ(y−ȳ)²`.
pub fn r_score(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(y_hat.len(), y.len())?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if sst == 0.0 {
        return Err(Error::Domain("R is undefined for a constant target".into()));
    }
    Ok(1.0 - sse(y_hat, y) / sst)
}

/// Pinball loss averaged over every step and level.
pub fn pinball_avg(qf: &QuantileForecast, y: &[f64]) -> Result<f64> {
    check_lengths(qf.values.len(), y.len())?;
    let mut total = 0.0;
    for (row, &obs) in qf.values.iter().zip(y) {
        for (&q, &v) in qf.levels.iter().zip(row) {
            total += pinball_training_loss(obs, v, q)?;
        }
    }
    Ok(total / (y.len() * qf.levels.len()) as f64)
}

/// Mean Winkler score: interval width, plus `2/γ` times the distance by
/// which the observation falls outside.
pub fn winkler(intv: &IntervalForecast, y: &[f64]) -> Result<f64> {
    check_lengths(intv.lb.len(), y.len())?;
    let g = intv.gamma;
    let total: f64 = y
        .iter()
        .zip(intv.lb.iter().zip(&intv.ub))
        .map(|(&obs, (&lb, &ub))| {
            let width = ub - lb;
            if obs < lb {
                width + 2.0 * (lb - obs) / g
            } else if obs > ub {
                width + 2.0 * (obs - ub) / g
            } else {
                width
            }
        })
        .sum();
    Ok(total / y.len() as f64)
}

/// `(1/n)·Σ(f−y)²` over real-valued forecasts.
pub fn brier(f: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(f.len(), y.len())?;
    Ok(sse(f, y) / y.len() as f64)
}

/// Mean squared error over all entries of two equally shaped window sets.
pub fn reconstruction_error(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::Dimension {
            op: "reconstruction_error",
            left: x.shape().to_vec(),
            right: x_hat.shape().to_vec(),
        });
    }
    Ok(sse(x_hat.data(), x.data()) / x.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;
    use proptest::prelude::*;

    #[test]
    fn point_metric_examples() {
        assert_eq!(rmse(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(mae(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn r_score_cases() {
        let y = [1.0, 2.0, 4.0];
        assert_eq!(r_score(&y, &y).unwrap(), 1.0);
        let m = 7.0 / 3.0;
        assert!(r_score(&[m; 3], &y).unwrap().abs() < 1e-15);
        assert!(matches!(r_score(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn pinball_avg_cases() {
        let y = [1.0];
        let qf = QuantileForecast::new(vec![0.1, 0.9], vec![vec![0.8, 1.2]]).unwrap();
        assert!((pinball_avg(&qf, &y).unwrap() - 0.02).abs() < 1e-12);
        let exact = QuantileForecast::new(decile_levels(), vec![vec![1.0; 9]]).unwrap();
        assert_eq!(pinball_avg(&exact, &y).unwrap(), 0.0);
    }

    #[test]
    fn median_pinball_is_half_mae() {
        let y = [0.3, -1.2, 2.5, 0.0];
        let yh = [0.1, -1.0, 3.0, 0.4];
        let qf = QuantileForecast::new(vec![0.5], yh.iter().map(|v| vec![*v]).collect()).unwrap();
        assert!((pinball_avg(&qf, &y).unwrap() - 0.5 * mae(&yh, &y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn quantile_crossing_is_sorted_away() {
        let qf = QuantileForecast::new(vec![0.9, 0.1], vec![vec![0.2, 0.5]]).unwrap();
        assert_eq!(qf.levels, vec![0.1, 0.9]);
        assert_eq!(qf.values[0], vec![0.2, 0.5]);
        assert!(QuantileForecast::new(vec![], vec![]).is_err());
        assert!(QuantileForecast::new(vec![1.0], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn winkler_examples() {
        let inside = IntervalForecast::new(vec![0.0], vec![1.0], 0.1).unwrap();
        assert_eq!(winkler(&inside, &[0.5]).unwrap(), 1.0);
        assert!((winkler(&inside, &[1.5]).unwrap() - 11.0).abs() < 1e-12);
        let half = IntervalForecast::new(vec![0.0], vec![1.0], 0.5).unwrap();
        assert!((winkler(&half, &[-0.5]).unwrap() - 3.0).abs() < 1e-12);
        assert!(IntervalForecast::new(vec![1.0], vec![0.0], 0.1).is_err());
        assert!(IntervalForecast::new(vec![0.0], vec![1.0], 1.0).is_err());
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(brier(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(brier(&[0.5], &[0.0]).unwrap(), 0.25);
    }

    #[test]
    fn reconstruction_error_examples() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let xh = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(reconstruction_error(&x, &x).unwrap(), 0.0);
        assert_eq!(reconstruction_error(&x, &xh).unwrap(), 1.0);
        assert!(reconstruction_error(&x, &Tensor::zeros(&[2, 1])).is_err());
    }

    #[test]
    fn reconstruction_noise_adds_its_variance() {
        let mut rng = RngState::new(21);
        let n = 100_000;
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.01).sin()).collect();
        let xh: Vec<f64> = x.iter().map(|v| v + 0.1 * (rng.uniform() - 0.5)).collect();
        let s = 0.3;
        let noisy: Vec<f64> = xh.iter().map(|v| v + s * rng.normal()).collect();
        let base = reconstruction_error(&Tensor::vector(x.clone()), &Tensor::vector(xh)).unwrap();
        let raised = reconstruction_error(&Tensor::vector(x), &Tensor::vector(noisy)).unwrap();
        let delta = raised - base;
        assert!((delta - s * s).abs() < 0.01 * s * s * 2.0, "{delta}");
    }

    proptest! {
        #[test]
        fn mae_le_rmse_and_rmse_homogeneous(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..40),
            a in -5.0f64..5.0,
        ) {
            let (yh, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let r = rmse(&yh, &y).unwrap();
            prop_assert!(mae(&yh, &y).unwrap() <= r + 1e-12);
            let ayh: Vec<f64> = yh.iter().map(|v| a * v).collect();
            let ay: Vec<f64> = y.iter().map(|v| a * v).collect();
            prop_assert!((rmse(&ayh, &ay).unwrap() - a.abs() * r).abs() < 1e-9 * (1.0 + r));
            prop_assert!((brier(&yh, &y).unwrap() - r * r).abs() < 1e-9 * (1.0 + r * r));
        }

        #[test]
        fn winkler_is_width_when_covered(
            rows in proptest::collection::vec((-5.0f64..5.0, 0.0f64..3.0, 0.0f64..1.0), 1..30),
            gamma in 0.01f64..0.99,
        ) {
            let lb: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let ub: Vec<f64> = rows.iter().map(|r| r.0 + r.1).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.0 + r.2 * r.1).collect();
            let iv = IntervalForecast::new(lb, ub, gamma).unwrap();
            prop_assert!((winkler(&iv, &y).unwrap() - iv.mean_width()).abs() < 1e-12);
        }

        #[test]
        fn metrics_permutation_equivariant(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, 0.0f64..2.0), 2..30),
            seed in 0u64..1000,
        ) {
            let mut perm: Vec<usize> = (0..rows.len()).collect();
            RngState::new(seed).shuffle(&mut perm);
            let pick = |f: &dyn Fn(&(f64, f64, f64)) -> f64, p: &[usize]| -> Vec<f64> {
                p.iter().map(|&i| f(&rows[i])).collect()
            };
            let id: Vec<usize> = (0..rows.len()).collect();
            let yh = pick(&|r| r.0, &id);
            let y = pick(&|r| r.1, &id);
            let yhp = pick(&|r| r.0, &perm);
            let yp = pick(&|r| r.1, &perm);
            prop_assert!((rmse(&yh, &y).unwrap() - rmse(&yhp, &yp).unwrap()).abs() < 1e-12);
            prop_assert!((mae(&yh, &y).unwrap() - mae(&yhp, &yp).unwrap()).abs() < 1e-12);
            let lb = pick(&|r| r.0 - r.2, &id);
            let ub = pick(&|r| r.0 + r.2, &id);
            let lbp = pick(&|r| r.0 - r.2, &perm);
            let ubp = pick(&|r| r.0 + r.2, &perm);
            let w = winkler(&IntervalForecast::new(lb, ub, 0.1).unwrap(), &y).unwrap();
            let wp = winkler(&IntervalForecast::new(lbp, ubp, 0.1).unwrap(), &yp).unwrap();
            prop_assert!((w - wp).abs() < 1e-9);
            let q = QuantileForecast::new(vec![0.25, 0.75], pick(&|r| r.0, &id).iter().map(|v| vec![*v, v + 0.5]).collect()).unwrap();
            let qp = QuantileForecast::new(vec![0.25, 0.75], pick(&|r| r.0, &perm).iter().map(|v| vec![*v, v + 0.5]).collect()).unwrap();
            prop_assert!((pinball_avg(&q, &y).unwrap() - pinball_avg(&qp, &yp).unwrap()).abs() < 1e-12);
        }
    }
}

//! Synthetic half-hourly series with known structure, for tests and demos.

use std::f64::consts::PI;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};

use crate::data::{records_from_values, SeriesRecord, SLOTS_PER_DAY};
use crate::error::{Error, Result};
use crate::tensor::RngState;

/// Generator kinds. All are non-negative and start at 2011-07-01 00:00.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// `1 + sin(2πt/48)`.
    Sine,
    /// The sine plus N(0, 0.1²) noise, clipped at zero.
    NoisySine,
    /// `2 + sin(2πt/48) + σ(t)·ε` with `σ(t) = 0.05 + 0.2·(1 + cos(2πt/48))/2`.
    Heteroscedastic,
    /// Zero at night, a daily bell between 06:00 and 18:00 scaled by a
    /// persistent cloudiness factor, with multiplicative noise.
    Solar,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SynthKind::Sine),
            "noisy-sine" => Ok(SynthKind::NoisySine),
            "hetero" | "heteroscedastic" => Ok(SynthKind::Heteroscedastic),
            "solar" => Ok(SynthKind::Solar),
            _ => Err(Error::config(format!(
                "unknown synthetic series {s:?}; use sine, noisy-sine, hetero or solar"
            ))),
        }
    }
}

/// Values with the noise std used at each step (zero where noiseless).
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl Synthetic {
    pub fn records(&self) -> Vec<SeriesRecord> {
        records_from_values(start_time(), &self.values)
    }
}

pub fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2011, 7, 1)
        .expect("valid date")
        .and_time(NaiveTime::MIN)
}

fn phase(t: usize) -> f64 {
    2.0 * PI * t as f64 / SLOTS_PER_DAY as f64
}

/// Noise std of the heteroscedastic series at step `t`.
pub fn hetero_sigma(t: usize) -> f64 {
    0.05 + 0.1 * (1.0 + phase(t).cos())
}

pub fn generate(kind: SynthKind, n: usize, seed: u64) -> Synthetic {
    let mut rng = RngState::new(seed);
    let mut values = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut cloud = 1.0;
    for t in 0..n {
        let (v, s) = match kind {
            SynthKind::Sine => (1.0 + phase(t).sin(), 0.0),
            SynthKind::NoisySine => ((1.0 + phase(t).sin() + 0.1 * rng.normal()).max(0.0), 0.1),
            SynthKind::Heteroscedastic => {
                let s = hetero_sigma(t);
                (2.0 + phase(t).sin() + s * rng.normal(), s)
            }
            SynthKind::Solar => {
                let slot = t % SLOTS_PER_DAY;
                if slot == 0 {
                    cloud = (0.7 * cloud + 0.3 * (0.4 + 0.6 * rng.uniform())).clamp(0.2, 1.0);
                }
                let hour = slot as f64 / 2.0;
                if (6.0..18.0).contains(&hour) {
                    let bell = (PI * (hour - 6.0) / 12.0).sin().powi(2);
                    let noise = 1.0 + 0.08 * rng.normal();
                    ((1.4 * cloud * bell * noise).max(0.0), 0.08 * 1.4 * cloud * bell)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        values.push(v);
        sigma.push(s);
    }
    Synthetic { values, sigma }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_seeded_and_non_negative() {
        for kind in [SynthKind::Sine, SynthKind::NoisySine, SynthKind::Heteroscedastic, SynthKind::Solar] {
            let a = generate(kind, 48 * 20, 5);
            assert_eq!(a, generate(kind, 48 * 20, 5));
            assert!(a.values.iter().all(|v| *v >= 0.0), "{kind:?}");
        }
        assert_ne!(
            generate(SynthKind::NoisySine, 100, 1).values,
            generate(SynthKind::NoisySine, 100, 2).values
        );
    }

    #[test]
    fn sine_is_exact_and_periodic() {
        let s = generate(SynthKind::Sine, 200, 0);
        assert_eq!(s.values[0], 1.0);
        assert!((s.values[12] - 2.0).abs() < 1e-15);
        assert!((s.values[100] - s.values[52]).abs() < 1e-12);
    }

    #[test]
    fn hetero_noise_matches_sigma() {
        let s = generate(SynthKind::Heteroscedastic, 48 * 2000, 3);
        // residuals at the noisiest phase (t ≡ 0 mod 48) have σ = 0.25
        let r: Vec<f64> = (0..2000).map(|d| s.values[d * 48] - 2.0).collect();
        let var = r.iter().map(|x| x * x).sum::<f64>() / r.len() as f64;
        assert!((var.sqrt() - 0.25).abs() < 0.02);
        assert_eq!(hetero_sigma(24), 0.05);
    }

    #[test]
    fn solar_is_dark_at_night() {
        let s = generate(SynthKind::Solar, 48 * 3, 9);
        assert!(s.values[..12].iter().all(|v| *v == 0.0));
        assert!(s.values[24] > 0.0);
        assert_eq!(s.records()[1].timestamp.format("%H:%M").to_string(), "00:30");
        assert!("bogus".parse::<SynthKind>().is_err());
    }
}

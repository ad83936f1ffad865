//! Binary array files and model persistence.
//!
//! Array file layout, all little-endian: the magic `BCAST1`, a `u32` array
//! count, then per array a `u32` rank, `rank` `u64` dimensions and the
//! `f64` data in row-major order. A model is stored as `<stem>.bin` holding
//! its parameters plus `<stem>.json` describing how to rebuild it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ScalerParams, WindowedDataset};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::pipeline::{build_model, Model, ModelConfig, Network};
use crate::tensor::{RngState, Tensor};
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 6] = b"BCAST1";

// Guards against absurd allocations from corrupt headers.
const MAX_RANK: u32 = 8;
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn write_arrays(mut w: impl Write, arrays: &[&Tensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(arrays.len() as u32).to_le_bytes())?;
    for t in arrays {
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated array file".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_arrays(mut r: impl Read) -> Result<Vec<Tensor>> {
    if &read_exact::<6>(&mut r)? != MAGIC {
        return Err(Error::Format("bad magic, expected BCAST1".into()));
    }
    let count = u32::from_le_bytes(read_exact(&mut r)?);
    let mut out = Vec::new();
    for k in 0..count {
        let rank = u32::from_le_bytes(read_exact(&mut r)?);
        if rank > MAX_RANK {
            return Err(Error::Format(format!("array {k}: rank {rank} too large")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = u64::from_le_bytes(read_exact(&mut r)?);
            numel = numel.saturating_mul(d);
            shape.push(d as usize);
        }
        if numel > MAX_ELEMENTS {
            return Err(Error::Format(format!("array {k}: {numel} elements")));
        }
        let mut data = Vec::with_capacity(numel as usize);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(read_exact(&mut r)?));
        }
        out.push(if rank == 0 {
            Tensor::scalar(data[0])
        } else {
            Tensor::new(&shape, data).map_err(|e| Error::Format(format!("array {k}: {e}")))?
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last array".into()));
    }
    Ok(out)
}

pub fn save_arrays(path: impl AsRef<Path>, arrays: &[&Tensor]) -> Result<()> {
    write_arrays(BufWriter::new(File::create(path)?), arrays)
}

pub fn load_arrays(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.display().to_string()),
        _ => Error::Io(e),
    })?;
    read_arrays(BufReader::new(f))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

/// The JSON half of a saved model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    pub format: String,
    pub config: ModelConfig,
    pub train: TrainConfig,
    pub scaler: ScalerParams,
    pub arrays: Vec<ArrayEntry>,
}

fn param_sets(model: &Model) -> Vec<(&'static str, &ParamSet)> {
    match &model.network {
        Network::Bayesian { vae, net } => {
            let mut v = Vec::new();
            if let Some(vae) = vae {
                v.push(("vae", &vae.params));
            }
            v.push(("net", &net.params));
            v
        }
        Network::Quantile(q) => vec![("qr", &q.params)],
    }
}

fn param_sets_mut(model: &mut Model) -> Vec<(&'static str, &mut ParamSet)> {
    match &mut model.network {
        Network::Bayesian { vae, net } => {
            let mut v = Vec::new();
            if let Some(vae) = vae {
                v.push(("vae", &mut vae.params));
            }
            v.push(("net", &mut net.params));
            v
        }
        Network::Quantile(q) => vec![("qr", &mut q.params)],
    }
}

fn stem_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("bin"), stem.with_extension("json"))
}

pub fn descriptor(model: &Model) -> ModelDescriptor {
    let arrays = param_sets(model)
        .into_iter()
        .flat_map(|(prefix, ps)| {
            ps.names().iter().zip(ps.values()).map(move |(n, t)| ArrayEntry {
                name: format!("{prefix}/{n}"),
                shape: t.shape().to_vec(),
            })
        })
        .collect();
    ModelDescriptor {
        format: "BCAST1".into(),
        config: model.config.clone(),
        train: model.train.clone(),
        scaler: model.scaler,
        arrays,
    }
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_model(model: &Model, stem: impl AsRef<Path>) -> Result<()> {
    let (bin, json) = stem_paths(stem.as_ref());
    let arrays: Vec<&Tensor> = param_sets(model)
        .into_iter()
        .flat_map(|(_, ps)| ps.values().iter())
        .collect();
    save_arrays(bin, &arrays)?;
    let text = serde_json::to_string_pretty(&descriptor(model))?;
    std::fs::write(json, text)?;
    Ok(())
}

/// Rebuilds the architecture from the descriptor and loads the weights.
pub fn load_model(stem: impl AsRef<Path>) -> Result<Model> {
    let (bin, json) = stem_paths(stem.as_ref());
    let text = std::fs::read_to_string(&json).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(json.display().to_string()),
        _ => Error::Io(e),
    })?;
    let desc: ModelDescriptor =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    if desc.format != "BCAST1" {
        return Err(Error::Format(format!("unsupported format {:?}", desc.format)));
    }
    let mut arrays = load_arrays(&bin)?.into_iter();
    if arrays.len() != desc.arrays.len() {
        return Err(Error::Format(format!(
            "descriptor lists {} arrays, file holds {}",
            desc.arrays.len(),
            arrays.len()
        )));
    }
    let mut model = build_model(&desc.config, &desc.train, &mut RngState::new(0))?;
    model.scaler = desc.scaler;
    let mut entries = desc.arrays.iter();
    for (prefix, ps) in param_sets_mut(&mut model) {
        let k = ps.len();
        let names: Vec<String> = entries
            .by_ref()
            .take(k)
            .map(|e| {
                e.name
                    .strip_prefix(&format!("{prefix}/"))
                    .map(str::to_string)
                    .ok_or_else(|| Error::Format(format!("unexpected array {}", e.name)))
            })
            .collect::<Result<_>>()?;
        let values: Vec<Tensor> = arrays.by_ref().take(k).collect();
        ps.load(&names, values).map_err(|e| Error::Format(e.to_string()))?;
    }
    if entries.next().is_some() {
        return Err(Error::Format("descriptor lists arrays the model does not have".into()));
    }
    Ok(model)
}

/// Caches windows as three arrays: `x`, `y` and `[min, max]`. Timestamps
/// are not kept.
pub fn save_dataset(ds: &WindowedDataset, path: impl AsRef<Path>) -> Result<()> {
    let y = Tensor::vector(ds.y.clone());
    let s = Tensor::vector(vec![ds.scaler.min, ds.scaler.max]);
    save_arrays(path, &[&ds.x, &y, &s])
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<WindowedDataset> {
    let a = load_arrays(path)?;
    match a.as_slice() {
        [x, y, s] if x.shape().len() == 2 && y.numel() == x.rows() && s.numel() == 2 => Ok(WindowedDataset {
            x: x.clone(),
            y: y.data().to_vec(),
            scaler: ScalerParams {
                min: s.data()[0],
                max: s.data()[1],
            },
            times: None,
        }),
        _ => Err(Error::Format("not a dataset file".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_windows;
    use crate::pipeline::{forecast_with_pis, ModelId};

    #[test]
    fn arrays_round_trip_bit_exact() {
        let a = Tensor::matrix(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap();
        let b = Tensor::scalar(std::f64::consts::PI);
        let c = Tensor::new(&[2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut buf = Vec::new();
        write_arrays(&mut buf, &[&a, &b, &c]).unwrap();
        assert_eq!(&buf[..6], b"BCAST1");
        let back = read_arrays(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 3);
        for (x, y) in [&a, &b, &c].iter().zip(&back) {
            assert_eq!(x.shape(), y.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x), bits(y));
        }
    }

    #[test]
    fn corrupt_files_are_format_errors() {
        let mut buf = Vec::new();
        write_arrays(&mut buf, &[&Tensor::vector(vec![1.0, 2.0])]).unwrap();
        assert!(matches!(read_arrays(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_arrays(bad.as_slice()), Err(Error::Format(_))));
        let mut extra = buf.clone();
        extra.push(0);
        assert!(matches!(read_arrays(extra.as_slice()), Err(Error::Format(_))));
        assert!(matches!(load_arrays("/nonexistent/x.bin"), Err(Error::NotFound(_))));
    }

    #[test]
    fn saved_models_forecast_identically() {
        let dir = tempfile::tempdir().unwrap();
        let tc = TrainConfig {
            epochs: 2,
            patience: 2,
            batch_size: 16,
            neurons: 4,
            lags: 6,
            latent_dims: 3,
            vae_hidden: 5,
            ..TrainConfig::default()
        };
        let s: Vec<f64> = (0..200).map(|t| (t as f64 * 0.2).sin()).collect();
        let ds = make_windows(&s, 6, ScalerParams { min: -1.0, max: 1.0 }).unwrap();
        let (train, test) = crate::data::split(&ds, 0.8).unwrap();
        for id in [ModelId::M1, ModelId::M6, ModelId::M8] {
            let mut rng = RngState::new(4);
            let mut m = build_model(&ModelConfig::new(id, &tc), &tc, &mut rng).unwrap();
            m.fit(&train, &mut rng).unwrap();
            let stem = dir.path().join(format!("{id}"));
            save_model(&m, &stem).unwrap();
            let back = load_model(&stem).unwrap();
            assert_eq!(back.scaler, m.scaler);
            let a = forecast_with_pis(&m, &test.0.x, 5, &mut RngState::new(1), &[0.9]).unwrap();
            let b = forecast_with_pis(&back, &test.0.x, 5, &mut RngState::new(1), &[0.9]).unwrap();
            assert_eq!(a, b, "{id}");
        }
        assert!(matches!(load_model(dir.path().join("missing")), Err(Error::NotFound(_))));
    }

    #[test]
    fn dataset_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = make_windows(&[0.0, 1.0, 2.0, 3.0, 4.0], 2, ScalerParams { min: 0.0, max: 4.0 }).unwrap();
        let p = dir.path().join("ds.bin");
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back.x, ds.x);
        assert_eq!(back.y, ds.y);
        assert_eq!(back.scaler, ds.scaler);
    }
}

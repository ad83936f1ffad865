use super::{glorot, make_weight, Ctx, VariationalConfig, WeightParam};
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{RngState, Tensor, Var};

/// Resolved (sampled or mean) weights of one recurrent cell.
#[derive(Clone, Copy, Debug)]
pub struct CellWeights<'t> {
    pub w: Var<'t>,
    pub u: Var<'t>,
    pub b: Var<'t>,
}

/// Standard LSTM cell with gates stacked `[i; f; g; o]`:
/// `W: 4H×I`, `U: 4H×H`, `b: 4H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w: WeightParam,
    pub u: WeightParam,
    pub b: WeightParam,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Glorot input weights, orthogonal recurrent blocks, forget bias 1.
    /// With `variational`, the same shapes are wrapped in Gaussian posteriors.
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        variational: Option<&VariationalConfig>,
        rng: &mut RngState,
    ) -> Result<Self> {
        let h = hidden;
        let w0 = glorot(rng, 4 * h, input);
        let mut u0 = Vec::with_capacity(4 * h * h);
        for _ in 0..4 {
            u0.extend(orthogonal(rng, h).into_data());
        }
        let u0 = Tensor::matrix(4 * h, h, u0)?;
        let mut b0 = vec![0.0; 4 * h];
        b0[h..2 * h].iter_mut().for_each(|v| *v = 1.0);
        let var = match variational {
            Some(cfg) => Some((cfg, cfg.prior(ps, name)?)),
            None => None,
        };
        Ok(LstmCell {
            w: make_weight(ps, &format!("{name}.w"), w0, var, rng),
            u: make_weight(ps, &format!("{name}.u"), u0, var, rng),
            b: make_weight(ps, &format!("{name}.b"), Tensor::vector(b0), var, rng),
            input,
            hidden,
        })
    }

    /// `4·(H·(I+H) + H)`, doubled when Gaussian.
    pub fn param_count(&self) -> usize {
        let base = 4 * (self.hidden * (self.input + self.hidden) + self.hidden);
        if self.w.is_gaussian() {
            2 * base
        } else {
            base
        }
    }

    pub fn resolve<'t>(&self, cx: &mut Ctx<'_, 't>) -> Result<CellWeights<'t>> {
        Ok(CellWeights {
            w: self.w.resolve(cx)?,
            u: self.u.resolve(cx)?,
            b: self.b.resolve(cx)?,
        })
    }

    /// One step on a batch: `x: B×I`, `h, c: B×H`.
    pub fn step<'t>(
        &self,
        wts: &CellWeights<'t>,
        x: Var<'t>,
        h: Var<'t>,
        c: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let hs = self.hidden;
        if x.shape().get(1) != Some(&self.input) {
            return Err(Error::Dimension {
                op: "lstm_cell",
                left: vec![self.input],
                right: x.shape(),
            });
        }
        let gates = x.matmul_t(wts.w)?.add(h.matmul_t(wts.u)?)?.add_row_bias(wts.b)?;
        let i = gates.slice_cols(0, hs)?.sigmoid();
        let f = gates.slice_cols(hs, 2 * hs)?.sigmoid();
        let g = gates.slice_cols(2 * hs, 3 * hs)?.tanh();
        let o = gates.slice_cols(3 * hs, 4 * hs)?.sigmoid();
        let c_next = f.mul(c)?.add(i.mul(g)?)?;
        let h_next = o.mul(c_next.tanh())?;
        Ok((h_next, c_next))
    }

    /// Resolve weights and run a single step.
    pub fn forward<'t>(
        &self,
        cx: &mut Ctx<'_, 't>,
        x: Var<'t>,
        state: (Var<'t>, Var<'t>),
    ) -> Result<(Var<'t>, Var<'t>)> {
        let wts = self.resolve(cx)?;
        self.step(&wts, x, state.0, state.1)
    }

    /// Hidden states for every step of `steps` (each `B×I`) from a zero state.
    pub fn run<'t>(&self, cx: &mut Ctx<'_, 't>, steps: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let first = steps
            .first()
            .ok_or_else(|| Error::contract("recurrent input must have at least one step"))?;
        let batch = first.shape()[0];
        let wts = self.resolve(cx)?;
        let zero = cx.tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let (mut h, mut c) = (zero, zero);
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            (h, c) = self.step(&wts, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

/// Bidirectional LSTM: one cell reads the sequence forwards, the other
/// backwards; step `t` reports `[h_fwd(t), h_bwd(t)]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
}

impl BiLstm {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        variational: Option<&VariationalConfig>,
        rng: &mut RngState,
    ) -> Result<Self> {
        Ok(BiLstm {
            fwd: LstmCell::new(ps, &format!("{name}.fwd"), input, hidden, variational, rng)?,
            bwd: LstmCell::new(ps, &format!("{name}.bwd"), input, hidden, variational, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }

    pub fn param_count(&self) -> usize {
        self.fwd.param_count() + self.bwd.param_count()
    }

    fn both<'t>(&self, cx: &mut Ctx<'_, 't>, steps: &[Var<'t>]) -> Result<(Vec<Var<'t>>, Vec<Var<'t>>)> {
        let fwd = self.fwd.run(cx, steps)?;
        let rev: Vec<Var<'t>> = steps.iter().rev().copied().collect();
        let mut bwd = self.bwd.run(cx, &rev)?;
        bwd.reverse();
        Ok((fwd, bwd))
    }

    /// Per-step outputs, each `B×2H`.
    pub fn run<'t>(&self, cx: &mut Ctx<'_, 't>, steps: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let (fwd, bwd) = self.both(cx, steps)?;
        fwd.into_iter()
            .zip(bwd)
            .map(|(f, b)| Var::concat_cols(&[f, b]))
            .collect()
    }

    /// Sequence summary `[h_fwd(T−1), h_bwd(0)]`, i.e. each direction's final
    /// state, `B×2H`.
    pub fn features<'t>(&self, cx: &mut Ctx<'_, 't>, steps: &[Var<'t>]) -> Result<Var<'t>> {
        let (fwd, bwd) = self.both(cx, steps)?;
        Var::concat_cols(&[*fwd.last().expect("non-empty"), bwd[0]])
    }

    /// Single sequence `T×I` to `T×2H`.
    pub fn forward_sequence<'t>(&self, cx: &mut Ctx<'_, 't>, seq: Var<'t>) -> Result<Var<'t>> {
        let shape = seq.shape();
        if shape.len() != 2 {
            return Err(Error::contract("sequence must be T×I"));
        }
        let steps = (0..shape[0])
            .map(|t| seq.slice_rows(t, t + 1))
            .collect::<Result<Vec<_>>>()?;
        let rows = self.run(cx, &steps)?;
        Var::concat_rows(&rows)
    }
}

/// Elman cell `h' = tanh(x·Wᵀ + h·Uᵀ + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCell {
    pub w: WeightParam,
    pub u: WeightParam,
    pub b: WeightParam,
    pub input: usize,
    pub hidden: usize,
}

impl RnnCell {
    pub fn new(
        ps: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        variational: Option<&VariationalConfig>,
        rng: &mut RngState,
    ) -> Result<Self> {
        let w0 = glorot(rng, hidden, input);
        let u0 = orthogonal(rng, hidden);
        let var = match variational {
            Some(cfg) => Some((cfg, cfg.prior(ps, name)?)),
            None => None,
        };
        Ok(RnnCell {
            w: make_weight(ps, &format!("{name}.w"), w0, var, rng),
            u: make_weight(ps, &format!("{name}.u"), u0, var, rng),
            b: make_weight(ps, &format!("{name}.b"), Tensor::zeros(&[hidden]), var, rng),
            input,
            hidden,
        })
    }

    pub fn param_count(&self) -> usize {
        let base = self.hidden * (self.input + self.hidden) + self.hidden;
        if self.w.is_gaussian() {
            2 * base
        } else {
            base
        }
    }

    pub fn run<'t>(&self, cx: &mut Ctx<'_, 't>, steps: &[Var<'t>]) -> Result<Vec<Var<'t>>> {
        let first = steps
            .first()
            .ok_or_else(|| Error::contract("recurrent input must have at least one step"))?;
        let batch = first.shape()[0];
        let w = self.w.resolve(cx)?;
        let u = self.u.resolve(cx)?;
        let b = self.b.resolve(cx)?;
        let mut h = cx.tape.constant(Tensor::zeros(&[batch, self.hidden]));
        let mut out = Vec::with_capacity(steps.len());
        for &x in steps {
            h = x.matmul_t(w)?.add(h.matmul_t(u)?)?.add_row_bias(b)?.tanh();
            out.push(h);
        }
        Ok(out)
    }
}

/// Random orthogonal `n×n` matrix (Gram–Schmidt on Gaussian rows).
fn orthogonal(rng: &mut RngState, n: usize) -> Tensor {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    Tensor::from_rows(&rows).expect("square")
}

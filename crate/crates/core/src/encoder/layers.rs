use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::kernel::{ParamId, ParamSet, Real, Tape, Tensor, Var};

/// `x W + b`.
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w = tape.param(params, self.w);
        let y = tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = tape.param(params, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn ids(&self) -> Vec<ParamId> {
        std::iter::once(self.w).chain(self.b).collect()
    }
}

/// Row-wise layer normalization with gain and bias.
pub struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, x: Var, eps: f64) -> Result<Var> {
        let y = tape.layernorm(x, T::of(eps))?;
        let g = tape.param(params, self.gain);
        let y = tape.mul_row(y, g)?;
        let b = tape.param(params, self.bias);
        tape.add_row(y, b)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Multi-head scaled dot-product attention with Q/K/V/O projections.
pub struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
}

impl Attention {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, params: &ParamSet<T>, queries: Var, context: Var) -> Result<Var> {
        let q = self.q.apply(tape, params, queries)?;
        let k = self.k.apply(tape, params, context)?;
        let v = self.v.apply(tape, params, context)?;
        let dh = tape.value(q).cols() / self.heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut out: Option<Var> = None;
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let s = tape.matmul_bt(qh, kh)?;
            let s = tape.scale(s, scale);
            let a = tape.softmax(s)?;
            let oh = tape.matmul(a, vh)?;
            out = Some(match out {
                Some(prev) => tape.concat(prev, oh)?,
                None => oh,
            });
        }
        let out = out.expect("at least one head");
        self.o.apply(tape, params, out)
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].into_iter().flat_map(Linear::ids).collect()
    }
}

pub(crate) struct Init<'a, T> {
    params: &'a mut ParamSet<T>,
    rng: ChaCha8Rng,
    trainable: bool,
}

impl<'a, T: Real> Init<'a, T> {
    pub(crate) fn new(params: &'a mut ParamSet<T>, rng: ChaCha8Rng, trainable: bool) -> Self {
        Init { params, rng, trainable }
    }

    fn add(&mut self, name: &str, rows: usize, cols: usize, data: Vec<f64>) -> ParamId {
        let t = Tensor::from_f64(&[rows, cols], &data).expect("init shape");
        self.params.add(name, t, self.trainable)
    }

    pub(crate) fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let data = (0..rows * cols).map(|_| self.rng.sample::<f64, _>(StandardNormal) * std).collect();
        self.add(name, rows, cols, data)
    }

    fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, rows, cols, vec![v; rows * cols])
    }

    pub(crate) fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Linear {
        let w = self.normal(&format!("{name}.w"), fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
        let b = bias.then(|| self.constant(&format!("{name}.b"), 1, fan_out, 0.0));
        Linear { w, b }
    }

    pub(crate) fn zero_linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let w = self.constant(&format!("{name}.w"), fan_in, fan_out, 0.0);
        Linear { w, b: None }
    }

    pub(crate) fn layernorm(&mut self, name: &str, width: usize) -> LayerNorm {
        LayerNorm {
            gain: self.constant(&format!("{name}.gain"), 1, width, 1.0),
            bias: self.constant(&format!("{name}.bias"), 1, width, 0.0),
        }
    }

    pub(crate) fn attention(&mut self, name: &str, in_width: usize, width: usize, heads: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{name}.q"), in_width, width, true),
            k: self.linear(&format!("{name}.k"), in_width, width, true),
            v: self.linear(&format!("{name}.v"), in_width, width, true),
            o: self.linear(&format!("{name}.o"), width, width, true),
            heads,
        }
    }
}

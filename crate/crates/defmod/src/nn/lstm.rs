//! Single LSTM cell with hand-derived backward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ops::{matvec, matvec_t_acc, outer_acc, sigmoid};
use crate::nn::tensor::{ParamTensor, Parameterized};

pub const INIT_RANGE: f64 = 0.05;

/// Standard LSTM cell. Gate pre-activations are stacked as `[i; f; o; g]`
/// rows in `wx` (input weights), `wh` (recurrent weights) and `bias`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    d_in: usize,
    d_h: usize,
    pub wx: ParamTensor,
    pub wh: ParamTensor,
    pub bias: ParamTensor,
}

/// Per-step activations kept for backward.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    tc: Vec<f64>,
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmCell {
    pub fn new(name: &str, d_in: usize, d_h: usize, rng: &mut impl Rng) -> Self {
        LstmCell {
            d_in,
            d_h,
            wx: ParamTensor::uniform(
                &format!("{name}.wx"),
                &[4 * d_h, d_in],
                -INIT_RANGE,
                INIT_RANGE,
                rng,
            ),
            wh: ParamTensor::uniform(
                &format!("{name}.wh"),
                &[4 * d_h, d_h],
                -INIT_RANGE,
                INIT_RANGE,
                rng,
            ),
            bias: ParamTensor::zeros(&format!("{name}.bias"), &[4 * d_h]),
        }
    }

    pub fn input_size(&self) -> usize {
        self.d_in
    }

    pub fn hidden_size(&self) -> usize {
        self.d_h
    }

    pub fn zero_state(&self) -> (Vec<f64>, Vec<f64>) {
        (vec![0.0; self.d_h], vec![0.0; self.d_h])
    }

    pub fn forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmCache> {
        if x.len() != self.d_in || h_prev.len() != self.d_h || c_prev.len() != self.d_h {
            return Err(Error::Shape(format!(
                "lstm_step: got x={}, h={}, c={} for cell ({} -> {})",
                x.len(),
                h_prev.len(),
                c_prev.len(),
                self.d_in,
                self.d_h
            )));
        }
        let dh = self.d_h;
        let mut z = self.bias.values().to_vec();
        let mut zx = vec![0.0; 4 * dh];
        matvec(self.wx.values(), 4 * dh, self.d_in, x, &mut zx);
        let mut zh = vec![0.0; 4 * dh];
        matvec(self.wh.values(), 4 * dh, dh, h_prev, &mut zh);
        for k in 0..4 * dh {
            z[k] += zx[k] + zh[k];
        }

        let i: Vec<f64> = z[..dh].iter().map(|v| sigmoid(*v)).collect();
        let f: Vec<f64> = z[dh..2 * dh].iter().map(|v| sigmoid(*v)).collect();
        let o: Vec<f64> = z[2 * dh..3 * dh].iter().map(|v| sigmoid(*v)).collect();
        let g: Vec<f64> = z[3 * dh..].iter().map(|v| v.tanh()).collect();

        let mut c = vec![0.0; dh];
        let mut tc = vec![0.0; dh];
        let mut h = vec![0.0; dh];
        for k in 0..dh {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tc[k] = c[k].tanh();
            h[k] = o[k] * tc[k];
        }

        Ok(LstmCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            i,
            f,
            o,
            g,
            tc,
            h,
            c,
        })
    }

    /// Backward through one step. `dh` and `dc` are gradients flowing into
    /// this step's outputs; returns gradients for (x, h_prev, c_prev) and
    /// accumulates parameter gradients in place.
    pub fn backward(&mut self, cache: &LstmCache, dh: &[f64], dc: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dhid = self.d_h;
        let mut dz = vec![0.0; 4 * dhid];
        let mut dc_prev = vec![0.0; dhid];

        for k in 0..dhid {
            let do_ = dh[k] * cache.tc[k];
            let dct = dc[k] + dh[k] * cache.o[k] * (1.0 - cache.tc[k] * cache.tc[k]);
            let di = dct * cache.g[k];
            let df = dct * cache.c_prev[k];
            let dg = dct * cache.i[k];
            dc_prev[k] = dct * cache.f[k];

            dz[k] = di * cache.i[k] * (1.0 - cache.i[k]);
            dz[dhid + k] = df * cache.f[k] * (1.0 - cache.f[k]);
            dz[2 * dhid + k] = do_ * cache.o[k] * (1.0 - cache.o[k]);
            dz[3 * dhid + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
        }

        outer_acc(self.wx.grad_mut(), 4 * dhid, self.d_in, &dz, &cache.x);
        outer_acc(self.wh.grad_mut(), 4 * dhid, dhid, &dz, &cache.h_prev);
        for (b, d) in self.bias.grad_mut().iter_mut().zip(dz.iter()) {
            *b += d;
        }

        let mut dx = vec![0.0; self.d_in];
        matvec_t_acc(self.wx.values(), 4 * dhid, self.d_in, &dz, &mut dx);
        let mut dh_prev = vec![0.0; dhid];
        matvec_t_acc(self.wh.values(), 4 * dhid, dhid, &dz, &mut dh_prev);

        (dx, dh_prev, dc_prev)
    }
}

impl Parameterized for LstmCell {
    fn tensors(&self) -> Vec<&ParamTensor> {
        vec![&self.wx, &self.wh, &self.bias]
    }

    fn tensors_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.wx, &mut self.wh, &mut self.bias]
    }
}

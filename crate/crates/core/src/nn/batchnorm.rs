use super::{Module, Param, Real, Tensor};
use crate::error::{Error, Result};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalization over `N x H x W`.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates; eval mode uses the frozen running estimates.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    name: String,
    cache: Option<(Vec<T>, Vec<T>)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::filled(format!("{name}.gamma"), &[channels], T::one()),
            beta: Param::zeros(format!("{name}.beta"), &[channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            name: name.to_string(),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.gamma.len() {
            return Err(Error::shape(format!("{}: expected {} channels, got {c}", self.name, self.gamma.len())));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let mut out = Tensor::zeros(&x.dims);
        if !train {
            for ch in 0..c {
                let inv = T::one() / (self.running_var[ch] + T::lit(EPS)).sqrt();
                let scale = self.gamma.value[ch] * inv;
                let shift = self.beta.value[ch] - self.running_mean[ch] * scale;
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for i in base..base + hw {
                        out.data[i] = x.data[i] * scale + shift;
                    }
                }
            }
            self.cache = None;
            return Ok(out);
        }

        let mut x_hat = vec![T::zero(); x.numel()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let mut sum = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sum += x.data[base..base + hw].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                sq += x.data[base..base + hw]
                    .iter()
                    .map(|v| (v.to_f64().unwrap() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[ch] = T::lit(inv);
            let (mean_t, inv_t) = (T::lit(mean), T::lit(inv));
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    let xh = (x.data[i] - mean_t) * inv_t;
                    x_hat[i] = xh;
                    out.data[i] = g * xh + b;
                }
            }
            let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
            let m = T::lit(MOMENTUM);
            self.running_mean[ch] = (T::one() - m) * self.running_mean[ch] + m * mean_t;
            self.running_var[ch] = (T::one() - m) * self.running_var[ch] + m * T::lit(unbiased);
        }
        self.cache = Some((x_hat, inv_std));
        Ok(out)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (x_hat, inv_std) = self
            .cache
            .take()
            .ok_or_else(|| Error::shape("batch-norm backward without cached forward"))?;
        let (n, c, h, w) = dy.dims4()?;
        if x_hat.len() != dy.numel() {
            return Err(Error::shape(format!("{}: gradient shape mismatch", self.name)));
        }
        let hw = h * w;
        let count = T::lit((n * hw) as f64);
        let mut dx = Tensor::zeros(&dy.dims);
        for ch in 0..c {
            let (mut dg, mut db) = (T::zero(), T::zero());
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    dg += dy.data[i] * x_hat[i];
                    db += dy.data[i];
                }
            }
            self.gamma.grad[ch] += dg;
            self.beta.grad[ch] += db;
            let k = self.gamma.value[ch] * inv_std[ch] / count;
            for s in 0..n {
                let base = (s * c + ch) * hw;
                for i in base..base + hw {
                    dx.data[i] = k * (count * dy.data[i] - db - x_hat[i] * dg);
                }
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
    }
    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Vec<T>)) {
        f(&format!("{}.running_mean", self.name), &mut self.running_mean);
        f(&format!("{}.running_var", self.name), &mut self.running_var);
    }
    fn visit_buffers<'a>(&'a self, f: &mut dyn FnMut(&str, &'a Vec<T>)) {
        f(&format!("{}.running_mean", self.name), &self.running_mean);
        f(&format!("{}.running_var", self.name), &self.running_var);
    }
}

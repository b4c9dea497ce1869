use rand::Rng;

use super::{gemm, orthogonal, sigmoid, Module, Param, Real, Tensor};
use crate::error::{Error, Result};

struct Step<T> {
    x: Tensor<T>,
    h_prev: Vec<T>,
    c_prev: Vec<T>,
    /// activated gates, `B x 4H`, order input/forget/cell/output
    gates: Vec<T>,
    c: Vec<T>,
}

/// Single-layer LSTM returning the final hidden state (many-to-one).
///
/// Gate pre-activations are `x W_ih^T + h W_hh^T + b` with one bias vector
/// per gate; blocks are stacked as input, forget, cell, output.
pub struct Lstm<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub hidden: usize,
    steps: Vec<Step<T>>,
}

impl<T: Real> Lstm<T> {
    pub fn new(name: &str, inputs: usize, hidden: usize) -> Self {
        Self {
            w_ih: Param::zeros(format!("{name}.w_ih"), &[4 * hidden, inputs]),
            w_hh: Param::zeros(format!("{name}.w_hh"), &[4 * hidden, hidden]),
            bias: Param::zeros(format!("{name}.bias"), &[4 * hidden]),
            hidden,
            steps: Vec::new(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w_ih.dims[1]
    }

    /// Xavier-uniform input weights and orthogonal recurrent weights, both
    /// per gate block; zero bias.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let (h, i) = (self.hidden, self.inputs());
        let bound = (6.0 / (i + h) as f64).sqrt();
        self.w_ih.init_uniform(bound, rng);
        for gate in 0..4 {
            let q = orthogonal(h, rng);
            for (dst, src) in self.w_hh.value[gate * h * h..(gate + 1) * h * h].iter_mut().zip(q) {
                *dst = T::lit(src);
            }
        }
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn forward(&mut self, xs: &[Tensor<T>], train: bool) -> Result<Tensor<T>> {
        let first = xs.first().ok_or_else(|| Error::shape("empty input sequence"))?;
        let (b, _) = first.dims2()?;
        let (h, i) = (self.hidden, self.inputs());
        self.steps.clear();
        let mut hs = vec![T::zero(); b * h];
        let mut cs = vec![T::zero(); b * h];
        for x in xs {
            if x.dims != [b, i] {
                return Err(Error::shape(format!("lstm step expects {:?}, got {:?}", [b, i], x.dims)));
            }
            let mut z = vec![T::zero(); b * 4 * h];
            for r in 0..b {
                z[r * 4 * h..(r + 1) * 4 * h].copy_from_slice(&self.bias.value);
            }
            gemm(b, i, 4 * h, &x.data, false, &self.w_ih.value, true, &mut z, true);
            gemm(b, h, 4 * h, &hs, false, &self.w_hh.value, true, &mut z, true);
            let mut c_new = vec![T::zero(); b * h];
            let mut h_new = vec![T::zero(); b * h];
            for r in 0..b {
                let zr = &mut z[r * 4 * h..(r + 1) * 4 * h];
                for u in 0..h {
                    let ig = sigmoid(zr[u]);
                    let fg = sigmoid(zr[h + u]);
                    let gg = zr[2 * h + u].tanh();
                    let og = sigmoid(zr[3 * h + u]);
                    zr[u] = ig;
                    zr[h + u] = fg;
                    zr[2 * h + u] = gg;
                    zr[3 * h + u] = og;
                    let c = fg * cs[r * h + u] + ig * gg;
                    c_new[r * h + u] = c;
                    h_new[r * h + u] = og * c.tanh();
                }
            }
            if train {
                self.steps.push(Step {
                    x: x.clone(),
                    h_prev: hs.clone(),
                    c_prev: cs.clone(),
                    gates: z,
                    c: c_new.clone(),
                });
            }
            hs = h_new;
            cs = c_new;
        }
        Tensor::from_vec(&[b, h], hs)
    }

    /// Backpropagates a gradient on the final hidden state through time;
    /// returns one input gradient per step.
    pub fn backward(&mut self, dh_last: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if self.steps.is_empty() {
            return Err(Error::shape("lstm backward without cached forward"));
        }
        let (b, h) = dh_last.dims2()?;
        let i = self.inputs();
        let mut dh = dh_last.data.clone();
        let mut dc = vec![T::zero(); b * h];
        let mut dxs = Vec::with_capacity(self.steps.len());
        let steps = std::mem::take(&mut self.steps);
        for step in steps.iter().rev() {
            let mut dz = vec![T::zero(); b * 4 * h];
            for r in 0..b {
                let g = &step.gates[r * 4 * h..(r + 1) * 4 * h];
                let dzr = &mut dz[r * 4 * h..(r + 1) * 4 * h];
                for u in 0..h {
                    let k = r * h + u;
                    let (ig, fg, gg, og) = (g[u], g[h + u], g[2 * h + u], g[3 * h + u]);
                    let tc = step.c[k].tanh();
                    let d_o = dh[k] * tc;
                    let dck = dc[k] + dh[k] * og * (T::one() - tc * tc);
                    dzr[u] = dck * gg * ig * (T::one() - ig);
                    dzr[h + u] = dck * step.c_prev[k] * fg * (T::one() - fg);
                    dzr[2 * h + u] = dck * ig * (T::one() - gg * gg);
                    dzr[3 * h + u] = d_o * og * (T::one() - og);
                    dc[k] = dck * fg;
                }
            }
            gemm(4 * h, b, i, &dz, true, &step.x.data, false, &mut self.w_ih.grad, true);
            gemm(4 * h, b, h, &dz, true, &step.h_prev, false, &mut self.w_hh.grad, true);
            for r in 0..b {
                for (g, d) in self.bias.grad.iter_mut().zip(&dz[r * 4 * h..(r + 1) * 4 * h]) {
                    *g += *d;
                }
            }
            let mut dx = Tensor::zeros(&[b, i]);
            gemm(b, 4 * h, i, &dz, false, &self.w_ih.value, false, &mut dx.data, false);
            dxs.push(dx);
            gemm(b, 4 * h, h, &dz, false, &self.w_hh.value, false, &mut dh, false);
        }
        dxs.reverse();
        Ok(dxs)
    }
}

impl<T: Real> Module<T> for Lstm<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.w_ih);
        f(&self.w_hh);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.w_ih);
        f(&mut self.w_hh);
        f(&mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let mut lstm = Lstm::<f64>::new("l", 4, 3);
        let x = Tensor::from_vec(&[2, 4], vec![1.0; 8]).unwrap();
        let h = lstm.forward(&[x], false).unwrap();
        assert!(h.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parameter_count_for_paper_sizes() {
        let lstm = Lstm::<f32>::new("l", 1024, 32);
        assert_eq!(lstm.param_count(), 4 * ((1024 + 32) * 32 + 32));
        assert_eq!(lstm.param_count(), 135_296);
    }

    #[test]
    fn single_unit_scalar_oracle() {
        // input gate and cell candidate pre-activations equal the input (1),
        // forget/output gates have zero pre-activation
        let mut lstm = Lstm::<f64>::new("l", 1, 1);
        lstm.w_ih.value = vec![1.0, 0.0, 1.0, 0.0];
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let h = lstm.forward(&[x], false).unwrap().data[0];
        // c = sigma(1) * tanh(1); h = sigma(0) * tanh(c)
        let c = sig(1.0) * 1f64.tanh();
        assert!((h - sig(0.0) * c.tanh()).abs() < 1e-15);

        // with the output gate driven to sigma(1) as well
        lstm.w_ih.value = vec![1.0, 0.0, 1.0, 1.0];
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let h = lstm.forward(&[x], false).unwrap().data[0];
        let want = sig(1.0) * (sig(1.0) * 1f64.tanh()).tanh();
        assert!((h - want).abs() < 1e-15);
    }
}

use rand::Rng;

use super::{gemm, relu_backward_inplace, relu_inplace, Module, Param, Real, Tensor};
use crate::error::{Error, Result};

/// Fully connected layer `y = x W^T + b`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[outputs, inputs]),
            bias: Param::zeros(format!("{name}.bias"), &[outputs]),
            input: None,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims[0]
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, bias zero.
    pub fn init(&mut self, rng: &mut impl Rng) {
        self.weight.init_uniform(1.0 / (self.inputs() as f64).sqrt(), rng);
        self.bias.value.iter_mut().for_each(|b| *b = T::zero());
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (b, i) = x.dims2()?;
        if i != self.inputs() {
            return Err(Error::shape(format!("{}: expected {} inputs, got {i}", self.weight.name, self.inputs())));
        }
        let o = self.outputs();
        let mut y = Tensor::zeros(&[b, o]);
        for r in 0..b {
            y.data[r * o..(r + 1) * o].copy_from_slice(&self.bias.value);
        }
        gemm(b, i, o, &x.data, false, &self.weight.value, true, &mut y.data, true);
        self.input = if train { Some(x.clone()) } else { None };
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::shape("linear backward without cached forward"))?;
        let (b, i) = x.dims2()?;
        let o = self.outputs();
        if dy.dims != [b, o] {
            return Err(Error::shape(format!("{}: bad upstream gradient {:?}", self.weight.name, dy.dims)));
        }
        gemm(o, b, i, &dy.data, true, &x.data, false, &mut self.weight.grad, true);
        for r in 0..b {
            for (g, d) in self.bias.grad.iter_mut().zip(&dy.data[r * o..(r + 1) * o]) {
                *g += *d;
            }
        }
        let mut dx = Tensor::zeros(&[b, i]);
        gemm(b, o, i, &dy.data, false, &self.weight.value, false, &mut dx.data, false);
        Ok(dx)
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Stack of linear layers with ReLU between them and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    activations: Vec<Tensor<T>>,
}

impl<T: Real> Mlp<T> {
    /// `widths = [in, hidden.., out]`.
    pub fn new(name: &str, widths: &[usize]) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.{i}"), w[0], w[1]))
            .collect();
        Self {
            layers,
            activations: Vec::new(),
        }
    }

    pub fn init(&mut self, rng: &mut impl Rng) {
        self.layers.iter_mut().for_each(|l| l.init(rng));
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        self.activations.clear();
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, train)?;
            if i < last {
                relu_inplace(&mut h.data);
                if train {
                    self.activations.push(h.clone());
                }
            }
        }
        Ok(h)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i < self.layers.len() - 1 {
                let act = self
                    .activations
                    .pop()
                    .ok_or_else(|| Error::shape("mlp backward without cached forward"))?;
                relu_backward_inplace(&mut g.data, &act.data);
            }
            g = self.layers[i].backward(&g)?;
        }
        Ok(g)
    }
}

impl<T: Real> Module<T> for Mlp<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.layers.iter().for_each(|l| l.visit_params(f));
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_params_mut(f));
    }
}

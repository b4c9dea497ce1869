use rand::Rng;
use rayon::prelude::*;

use super::{gemm, Module, Param, Real, Tensor};
use crate::error::{Error, Result};

/// 2D convolution without bias (always followed by batch norm here),
/// computed as im2col + GEMM per sample.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor<T>>,
}

#[derive(Clone, Copy)]
struct Geometry {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Real>(x: &[T], g: Geometry, cols: &mut [T]) {
    let hw = g.cols();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(cols: &[T], g: Geometry, dx: &mut [T]) {
    let hw = g.cols();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            weight: Param::zeros(format!("{name}.weight"), &[cout, cin, kernel, kernel]),
            cin,
            cout,
            kernel,
            stride,
            pad,
            input: None,
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn init(&mut self, rng: &mut impl Rng) {
        let fan_in = (self.cin * self.kernel * self.kernel) as f64;
        self.weight.init_uniform(1.0 / fan_in.sqrt(), rng);
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h + 2 * self.pad < self.kernel || w + 2 * self.pad < self.kernel {
            return Err(Error::shape(format!(
                "input {h}x{w} smaller than {}x{} kernel",
                self.kernel, self.kernel
            )));
        }
        Ok((
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        ))
    }

    fn geometry(&self, h: usize, w: usize) -> Result<Geometry> {
        let (ho, wo) = self.output_size(h, w)?;
        Ok(Geometry {
            cin: self.cin,
            h,
            w,
            k: self.kernel,
            stride: self.stride,
            pad: self.pad,
            ho,
            wo,
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if c != self.cin {
            return Err(Error::shape(format!("{}: expected {} channels, got {c}", self.weight.name, self.cin)));
        }
        let g = self.geometry(h, w)?;
        let mut out = Tensor::zeros(&[n, self.cout, g.ho, g.wo]);
        let weight = &self.weight.value;
        let (cout, rows, hw) = (self.cout, g.rows(), g.cols());
        out.data
            .par_chunks_mut(cout * hw)
            .zip(x.data.par_chunks(c * h * w))
            .for_each_init(
                || vec![T::zero(); rows * hw],
                |cols, (y, xs)| {
                    im2col(xs, g, cols);
                    gemm(cout, rows, hw, weight, false, cols, false, y, false);
                },
            );
        self.input = if train { Some(x.clone()) } else { None };
        Ok(out)
    }

    /// Accumulates the weight gradient and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .take()
            .ok_or_else(|| Error::shape("conv backward without cached forward"))?;
        let (n, c, h, w) = x.dims4()?;
        let g = self.geometry(h, w)?;
        let (cout, rows, hw) = (self.cout, g.rows(), g.cols());
        if dy.dims != [n, cout, g.ho, g.wo] {
            return Err(Error::shape(format!("{}: bad upstream gradient {:?}", self.weight.name, dy.dims)));
        }
        let weight = &self.weight.value;
        let mut dx = Tensor::zeros(&x.dims);
        let partial: Vec<Vec<T>> = dx
            .data
            .par_chunks_mut(c * h * w)
            .zip(x.data.par_chunks(c * h * w))
            .zip(dy.data.par_chunks(cout * hw))
            .map(|((dxs, xs), dys)| {
                let mut cols = vec![T::zero(); rows * hw];
                im2col(xs, g, &mut cols);
                let mut dw = vec![T::zero(); cout * rows];
                gemm(cout, hw, rows, dys, false, &cols, true, &mut dw, false);
                gemm(rows, cout, hw, weight, true, dys, false, &mut cols, false);
                col2im(&cols, g, dxs);
                dw
            })
            .collect();
        // fixed-order reduction keeps gradients independent of thread count
        for dw in partial {
            for (a, b) in self.weight.grad.iter_mut().zip(dw) {
                *a += b;
            }
        }
        Ok(dx)
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
    }
}

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Adaptive average pooling to a fixed `size x size` grid, flattened to
/// `(N, C * size * size)` in channel-major order.
///
/// Bin `i` along an axis of length `L` covers `floor(i*L/size) ..
/// ceil((i+1)*L/size)`, so neighbouring bins may overlap.
#[derive(Debug, Clone)]
pub struct AdaptiveAvgPool2d {
    pub size: usize,
    input_dims: Option<(usize, usize, usize, usize)>,
}

fn bin(i: usize, len: usize, size: usize) -> (usize, usize) {
    let start = i * len / size;
    let end = ((i + 1) * len).div_ceil(size);
    (start, end)
}

impl AdaptiveAvgPool2d {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            input_dims: None,
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if h == 0 || w == 0 {
            return Err(Error::shape("pooling over an empty plane"));
        }
        let s = self.size;
        let mut out = Tensor::zeros(&[n, c * s * s]);
        for plane in 0..n * c {
            let src = &x.data[plane * h * w..(plane + 1) * h * w];
            for oy in 0..s {
                let (y0, y1) = bin(oy, h, s);
                for ox in 0..s {
                    let (x0, x1) = bin(ox, w, s);
                    let mut acc = T::zero();
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            acc += src[yy * w + xx];
                        }
                    }
                    out.data[plane * s * s + oy * s + ox] = acc / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                }
            }
        }
        self.input_dims = Some((n, c, h, w));
        Ok(out)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = self
            .input_dims
            .ok_or_else(|| Error::shape("pool backward without forward"))?;
        let s = self.size;
        if dy.dims != [n, c * s * s] {
            return Err(Error::shape(format!("pool: bad upstream gradient {:?}", dy.dims)));
        }
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        for plane in 0..n * c {
            let dst = &mut dx.data[plane * h * w..(plane + 1) * h * w];
            for oy in 0..s {
                let (y0, y1) = bin(oy, h, s);
                for ox in 0..s {
                    let (x0, x1) = bin(ox, w, s);
                    let g = dy.data[plane * s * s + oy * s + ox] / T::lit(((y1 - y0) * (x1 - x0)) as f64);
                    for yy in y0..y1 {
                        for xx in x0..x1 {
                            dst[yy * w + xx] += g;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

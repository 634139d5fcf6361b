use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { inputs: usize, outputs: usize },
    Relu,
    /// Valid (unpadded) 2-D convolution over a `(channels, h, w)` sample.
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    /// `out × in × k × k`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Dense(Dense<T>),
    Relu,
    Conv2d(Conv2d<T>),
    Flatten,
}

/// He-uniform bound `√(6 / fan_in)`.
fn init_uniform<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize) -> Vec<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub(crate) fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec<R: Rng + ?Sized>(spec: LayerSpec, rng: &mut R) -> Self {
        match spec {
            LayerSpec::Dense { inputs, outputs } => Layer::Dense(Dense {
                inputs,
                outputs,
                weight: init_uniform(rng, inputs * outputs, inputs),
                bias: vec![T::zero(); outputs],
            }),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => Layer::Conv2d(Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                weight: init_uniform(rng, out_channels * in_channels * kernel * kernel, in_channels * kernel * kernel),
                bias: vec![T::zero(); out_channels],
            }),
            LayerSpec::Flatten => Layer::Flatten,
        }
    }

    pub fn spec(&self) -> LayerSpec {
        match self {
            Layer::Dense(d) => LayerSpec::Dense {
                inputs: d.inputs,
                outputs: d.outputs,
            },
            Layer::Relu => LayerSpec::Relu,
            Layer::Conv2d(c) => LayerSpec::Conv2d {
                in_channels: c.in_channels,
                out_channels: c.out_channels,
                kernel: c.kernel,
                stride: c.stride,
            },
            Layer::Flatten => LayerSpec::Flatten,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Relu => "relu",
            Layer::Conv2d(_) => "conv2d",
            Layer::Flatten => "flatten",
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, Vec<usize>> {
        match self {
            Layer::Dense(d) => {
                if input == [d.inputs] {
                    Ok(vec![d.outputs])
                } else {
                    Err(vec![d.inputs])
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Conv2d(c) => match *input {
                [ch, h, w] if ch == c.in_channels && h >= c.kernel && w >= c.kernel => Ok(vec![
                    c.out_channels,
                    (h - c.kernel) / c.stride + 1,
                    (w - c.kernel) / c.stride + 1,
                ]),
                _ => Err(vec![c.in_channels, c.kernel, c.kernel]),
            },
        }
    }

    pub fn params(&self) -> Vec<&[T]> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            _ => Vec::new(),
        }
    }

    /// Parameter block names and per-block shapes.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match self {
            Layer::Dense(d) => vec![("weight", vec![d.outputs, d.inputs]), ("bias", vec![d.outputs])],
            Layer::Conv2d(c) => vec![
                ("weight", vec![c.out_channels, c.in_channels, c.kernel, c.kernel]),
                ("bias", vec![c.out_channels]),
            ],
            _ => Vec::new(),
        }
    }

    /// Caller guarantees `x` has a shape accepted by [`Layer::output_shape`].
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let out_shape = self.output_shape(x.shape()).expect("shape checked by caller");
        match self {
            Layer::Dense(d) => {
                let mut out = Tensor::zeros(x.batch(), out_shape);
                for b in 0..x.batch() {
                    let xb = x.sample(b);
                    let ob = out.sample_mut(b);
                    for (o, (w, bias)) in d.weight.chunks_exact(d.inputs).zip(&d.bias).enumerate() {
                        ob[o] = *bias + dot(w, xb);
                    }
                }
                out
            }
            Layer::Relu => {
                let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
                Tensor::new(x.batch(), out_shape, data).expect("same size")
            }
            Layer::Flatten => x.clone().reshaped(out_shape).expect("same size"),
            Layer::Conv2d(c) => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let k = c.kernel;
                let mut out = Tensor::zeros(x.batch(), out_shape);
                for b in 0..x.batch() {
                    let xb = x.sample(b);
                    let ob = out.sample_mut(b);
                    for oc in 0..c.out_channels {
                        for i in 0..oh {
                            for j in 0..ow {
                                let mut s = c.bias[oc];
                                for ic in 0..c.in_channels {
                                    let wbase = ((oc * c.in_channels) + ic) * k * k;
                                    for di in 0..k {
                                        let row = (ic * h + i * c.stride + di) * w + j * c.stride;
                                        s += dot(&c.weight[wbase + di * k..wbase + di * k + k], &xb[row..row + k]);
                                    }
                                }
                                ob[(oc * oh + i) * ow + j] = s;
                            }
                        }
                    }
                }
                out
            }
        }
    }

    /// Returns (gradient w.r.t. the input, gradients per parameter block).
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> (Tensor<T>, Vec<Vec<T>>) {
        match self {
            Layer::Dense(d) => {
                let mut gx = Tensor::zeros(x.batch(), x.shape().to_vec());
                let mut gw = vec![T::zero(); d.weight.len()];
                let mut gb = vec![T::zero(); d.bias.len()];
                for b in 0..x.batch() {
                    let xb = x.sample(b);
                    let gob = grad_out.sample(b);
                    let gxb = gx.sample_mut(b);
                    for o in 0..d.outputs {
                        let g = gob[o];
                        if g == T::zero() {
                            continue;
                        }
                        gb[o] += g;
                        axpy(g, xb, &mut gw[o * d.inputs..(o + 1) * d.inputs]);
                        axpy(g, &d.weight[o * d.inputs..(o + 1) * d.inputs], gxb);
                    }
                }
                (gx, vec![gw, gb])
            }
            Layer::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xi, &g)| if xi > T::zero() { g } else { T::zero() })
                    .collect();
                (Tensor::new(x.batch(), x.shape().to_vec(), data).expect("same size"), Vec::new())
            }
            Layer::Flatten => (
                grad_out.clone().reshaped(x.shape().to_vec()).expect("same size"),
                Vec::new(),
            ),
            Layer::Conv2d(c) => {
                let (h, w) = (x.shape()[1], x.shape()[2]);
                let (oh, ow) = (grad_out.shape()[1], grad_out.shape()[2]);
                let k = c.kernel;
                let mut gx = Tensor::zeros(x.batch(), x.shape().to_vec());
                let mut gw = vec![T::zero(); c.weight.len()];
                let mut gb = vec![T::zero(); c.bias.len()];
                for b in 0..x.batch() {
                    let xb = x.sample(b);
                    let gob = grad_out.sample(b);
                    let gxb = gx.sample_mut(b);
                    for oc in 0..c.out_channels {
                        for i in 0..oh {
                            for j in 0..ow {
                                let g = gob[(oc * oh + i) * ow + j];
                                if g == T::zero() {
                                    continue;
                                }
                                gb[oc] += g;
                                for ic in 0..c.in_channels {
                                    let wbase = ((oc * c.in_channels) + ic) * k * k;
                                    for di in 0..k {
                                        let row = (ic * h + i * c.stride + di) * w + j * c.stride;
                                        let wr = wbase + di * k;
                                        axpy(g, &xb[row..row + k], &mut gw[wr..wr + k]);
                                        axpy(g, &c.weight[wr..wr + k], &mut gxb[row..row + k]);
                                    }
                                }
                            }
                        }
                    }
                }
                (gx, vec![gw, gb])
            }
        }
    }
}

impl<T: Scalar> Dense<T> {
    /// Square identity map (unit weights on the diagonal, zero bias).
    pub fn identity(n: usize) -> Self {
        let mut weight = vec![T::zero(); n * n];
        for i in 0..n {
            weight[i * n + i] = T::one();
        }
        Self {
            inputs: n,
            outputs: n,
            weight,
            bias: vec![T::zero(); n],
        }
    }
}

/// Rejects specs that cannot be wired (zero sizes or strides).
pub fn validate_spec(spec: &LayerSpec) -> Result<()> {
    let ok = match *spec {
        LayerSpec::Dense { inputs, outputs } => inputs > 0 && outputs > 0,
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
        } => in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0,
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("degenerate layer spec {spec:?}")))
    }
}

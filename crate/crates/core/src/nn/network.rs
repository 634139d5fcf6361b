use std::sync::atomic::{AtomicU64, Ordering};

use super::layers::{validate_spec, Layer, LayerSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeding::rng_for;

/// Process-wide source of parameter versions; a cache is only valid for
/// the exact parameter version that produced it.
static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Feed-forward stack of layers with a fixed per-sample input shape.
#[derive(Debug)]
pub struct Network<T> {
    name: String,
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    seed: u64,
    version: u64,
}

impl<T: Clone> Clone for Network<T> {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            input_shape: self.input_shape.clone(),
            layers: self.layers.clone(),
            seed: self.seed,
            version: self.version,
        }
    }
}

impl<T: PartialEq> PartialEq for Network<T> {
    /// Structural and parameter equality; versions are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.input_shape == other.input_shape && self.layers == other.layers
    }
}

/// Layer inputs recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct Cache<T> {
    version: u64,
    inputs: Vec<Tensor<T>>,
}

impl<T: Scalar> Network<T> {
    /// Wires `specs` after checking every consecutive shape. Parameters are
    /// drawn from a stream keyed by `seed`.
    pub fn build(name: &str, input_shape: Vec<usize>, specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let mut rng = rng_for(&[crate::seeding::tag::INIT, seed]);
        let mut shape = input_shape.clone();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            validate_spec(spec)?;
            let layer = Layer::from_spec(*spec, &mut rng);
            shape = layer.output_shape(&shape).map_err(|expected| Error::ShapeMismatch {
                layer: format!("{name}[{i}] {}", layer.kind()),
                expected,
                got: shape.clone(),
            })?;
            layers.push(layer);
        }
        Ok(Self {
            name: name.to_string(),
            input_shape,
            layers,
            seed,
            version: fresh_version(),
        })
    }

    pub fn from_layers(name: &str, input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for (i, layer) in layers.iter().enumerate() {
            shape = layer.output_shape(&shape).map_err(|expected| Error::ShapeMismatch {
                layer: format!("{name}[{i}] {}", layer.kind()),
                expected,
                got: shape.clone(),
            })?;
        }
        Ok(Self {
            name: name.to_string(),
            input_shape,
            layers,
            seed: 0,
            version: fresh_version(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.layers.iter().fold(self.input_shape.clone(), |s, l| {
            l.output_shape(&s).expect("validated at build")
        })
    }

    pub fn output_len(&self) -> usize {
        self.output_shape().iter().product()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Mutable access to a layer. Bumps the parameter version.
    pub fn layer_mut(&mut self, i: usize) -> &mut Layer<T> {
        self.version = fresh_version();
        &mut self.layers[i]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn params(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Mutable parameter blocks. Bumps the parameter version.
    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.version = fresh_version();
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    /// `(name, shape)` per parameter block, in [`Network::params`] order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.param_shapes()
                    .into_iter()
                    .map(move |(n, s)| (format!("{i}.{n}"), s))
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Cache<T>)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: format!("{} input", self.name),
                expected: self.input_shape.clone(),
                got: input.shape().to_vec(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let y = layer.forward(&x);
            inputs.push(x);
            x = y;
        }
        Ok((
            x,
            Cache {
                version: self.version,
                inputs,
            },
        ))
    }

    /// Reverse pass. Returns gradients per parameter block (in
    /// [`Network::params`] order) and the gradient with respect to the input.
    pub fn backward(&self, cache: &Cache<T>, grad_out: &Tensor<T>) -> Result<(Vec<Vec<T>>, Tensor<T>)> {
        if cache.version != self.version {
            return Err(Error::StaleCache {
                cached: cache.version,
                current: self.version,
            });
        }
        let out_shape = self.output_shape();
        let batch = cache.inputs.first().map_or(grad_out.batch(), Tensor::batch);
        if grad_out.shape() != out_shape.as_slice() || grad_out.batch() != batch {
            return Err(Error::ShapeMismatch {
                layer: format!("{} output gradient", self.name),
                expected: out_shape,
                got: grad_out.shape().to_vec(),
            });
        }
        let mut grads_rev: Vec<Vec<Vec<T>>> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (layer, x) in self.layers.iter().zip(&cache.inputs).rev() {
            let (gx, gp) = layer.backward(x, &g);
            grads_rev.push(gp);
            g = gx;
        }
        Ok((grads_rev.into_iter().rev().flatten().collect(), g))
    }
}

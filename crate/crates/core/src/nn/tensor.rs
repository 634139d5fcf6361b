use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A batch of samples, each of a fixed per-sample shape of rank ≤ 3,
/// stored contiguously sample after sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    batch: usize,
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(batch: usize, shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::InvalidConfig(format!("tensor rank {} not in 1..=3", shape.len())));
        }
        let per: usize = shape.iter().product();
        if per * batch != data.len() {
            return Err(Error::ShapeMismatch {
                layer: "tensor".into(),
                expected: vec![batch * per],
                got: vec![data.len()],
            });
        }
        Ok(Self { batch, shape, data })
    }

    pub fn zeros(batch: usize, shape: Vec<usize>) -> Self {
        let n = batch * shape.iter().product::<usize>();
        Self {
            batch,
            shape,
            data: vec![T::zero(); n],
        }
    }

    /// Batch of flat vectors; all rows must share a length.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidConfig("ragged tensor rows".into()));
        }
        Self::new(rows.len(), vec![width], rows.concat())
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample(&self, b: usize) -> &[T] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn sample_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.sample_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.sample_len() {
            return Err(Error::ShapeMismatch {
                layer: "reshape".into(),
                expected: self.shape.clone(),
                got: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Concatenates per-sample features of several batches along the feature
/// axis (all inputs must be flat and share a batch size).
pub fn concat_features<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let batch = parts.first().map_or(0, |t| t.batch());
    if parts.iter().any(|t| t.batch() != batch || t.shape().len() != 1) {
        return Err(Error::InvalidConfig("concat needs flat tensors of equal batch".into()));
    }
    let width: usize = parts.iter().map(|t| t.sample_len()).sum();
    let mut data = Vec::with_capacity(batch * width);
    for b in 0..batch {
        for t in parts {
            data.extend_from_slice(t.sample(b));
        }
    }
    Tensor::new(batch, vec![width], data)
}

/// Inverse of [`concat_features`] for gradients.
pub fn split_features<T: Scalar>(joined: &Tensor<T>, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
    if widths.iter().sum::<usize>() != joined.sample_len() {
        return Err(Error::ShapeMismatch {
            layer: "split".into(),
            expected: widths.to_vec(),
            got: joined.shape().to_vec(),
        });
    }
    let mut out: Vec<Vec<T>> = widths.iter().map(|w| Vec::with_capacity(w * joined.batch())).collect();
    for b in 0..joined.batch() {
        let mut off = 0;
        let s = joined.sample(b);
        for (o, &w) in out.iter_mut().zip(widths) {
            o.extend_from_slice(&s[off..off + w]);
            off += w;
        }
    }
    out.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::new(joined.batch(), vec![w], d))
        .collect()
}

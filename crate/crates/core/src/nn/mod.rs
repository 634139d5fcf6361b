//! Small dense/convolutional network kernel with hand-written reverse mode
//! and ADAM.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, ParamBlock};
pub use layers::{Conv2d, Dense, Layer, LayerSpec};
pub use network::{Cache, Network};
pub use tensor::{concat_features, split_features, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::seeding::rng_for;
    use rand::Rng;

    fn random_tensor(batch: usize, shape: Vec<usize>, seed: u64) -> Tensor<f64> {
        let mut rng = rng_for(&[seed]);
        let n = batch * shape.iter().product::<usize>();
        Tensor::new(batch, shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Linear functional of the output, `Σ c·y`.
    fn probe(net: &Network<f64>, x: &Tensor<f64>, c: &[f64]) -> f64 {
        let (y, _) = net.forward(x).unwrap();
        y.data().iter().zip(c).map(|(a, b)| a * b).sum()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        if scale == 0.0 {
            0.0
        } else {
            diff / scale
        }
    }

    /// Central differences over every parameter and every input entry.
    fn check_gradients(net: &Network<f64>, x: &Tensor<f64>) {
        let eps = 1e-5;
        let out_len = net.output_len() * x.batch();
        let mut rng = rng_for(&[99]);
        let c: Vec<f64> = (0..out_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (y, cache) = net.forward(x).unwrap();
        let g = Tensor::new(x.batch(), y.shape().to_vec(), c.clone()).unwrap();
        let (gp, gx) = net.backward(&cache, &g).unwrap();

        let n_blocks = net.params().len();
        assert_eq!(gp.len(), n_blocks);
        for blk in 0..n_blocks {
            let len = net.params()[blk].len();
            let mut fd = vec![0.0; len];
            for i in 0..len {
                let mut plus = net.clone();
                plus.params_mut()[blk][i] += eps;
                let mut minus = net.clone();
                minus.params_mut()[blk][i] -= eps;
                fd[i] = (probe(&plus, x, &c) - probe(&minus, x, &c)) / (2.0 * eps);
            }
            let e = rel_err(&gp[blk], &fd);
            assert!(e < 1e-4, "{} block {blk}: rel err {e}", net.name());
        }
        let mut fd = vec![0.0; x.data().len()];
        for i in 0..fd.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            fd[i] = (probe(net, &xp, &c) - probe(net, &xm, &c)) / (2.0 * eps);
        }
        let e = rel_err(gx.data(), &fd);
        assert!(e < 1e-4, "{} input: rel err {e}", net.name());
    }

    #[test]
    fn dense_relu_gradients_match_finite_differences() {
        let net = Network::<f64>::build(
            "mlp",
            vec![5],
            &[
                LayerSpec::Dense { inputs: 5, outputs: 7 },
                LayerSpec::Relu,
                LayerSpec::Dense { inputs: 7, outputs: 3 },
            ],
            11,
        )
        .unwrap();
        check_gradients(&net, &random_tensor(4, vec![5], 1));
    }

    #[test]
    fn conv_flatten_gradients_match_finite_differences() {
        let net = Network::<f64>::build(
            "conv",
            vec![2, 7, 6],
            &[
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Flatten,
                LayerSpec::Dense { inputs: 18, outputs: 4 },
            ],
            12,
        )
        .unwrap();
        check_gradients(&net, &random_tensor(3, vec![2, 7, 6], 2));
    }

    #[test]
    fn stacked_convolutions_match_finite_differences() {
        let net = Network::<f64>::build(
            "conv2",
            vec![1, 9, 9],
            &[
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Conv2d {
                    in_channels: 2,
                    out_channels: 2,
                    kernel: 3,
                    stride: 1,
                },
                LayerSpec::Flatten,
            ],
            13,
        )
        .unwrap();
        assert_eq!(net.output_shape(), vec![8]);
        check_gradients(&net, &random_tensor(2, vec![1, 9, 9], 3));
    }

    #[test]
    fn quadratic_loss_gradient_matches_closed_form() {
        // L = ½‖Wx + b − t‖²  ⇒  ∂L/∂W = (y − t) xᵀ, ∂L/∂b = y − t.
        let net = Network::<f64>::build("lin", vec![3], &[LayerSpec::Dense { inputs: 3, outputs: 2 }], 5).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap();
        let t = [0.5, -0.25];
        let (y, cache) = net.forward(&x).unwrap();
        let r: Vec<f64> = y.data().iter().zip(&t).map(|(a, b)| a - b).collect();
        let (gp, _) = net.backward(&cache, &Tensor::from_rows(&[r.clone()]).unwrap()).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert!((gp[0][o * 3 + i] - r[o] * x.data()[i]).abs() < 1e-14);
            }
            assert!((gp[1][o] - r[o]).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let net = Network::from_layers("id", vec![4], vec![Layer::Dense(Dense::<f64>::identity(4))]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5, 9.0]]).unwrap();
        assert_eq!(net.forward(&x).unwrap().0, x);
    }

    #[test]
    fn relu_clips_negatives() {
        let net = Network::<f64>::from_layers("r", vec![2], vec![Layer::Relu]).unwrap();
        let x = Tensor::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        assert_eq!(net.forward(&x).unwrap().0.data(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = Network::<f64>::build(
            "z",
            vec![3],
            &[LayerSpec::Dense { inputs: 3, outputs: 3 }, LayerSpec::Relu, LayerSpec::Dense { inputs: 3, outputs: 2 }],
            2,
        )
        .unwrap();
        let x = random_tensor(2, vec![3], 4);
        let (_, cache) = net.forward(&x).unwrap();
        let (gp, gx) = net.backward(&cache, &Tensor::zeros(2, vec![2])).unwrap();
        assert!(gp.iter().flatten().all(|&g| g == 0.0));
        assert!(gx.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn same_seed_same_network_and_output() {
        let specs = [LayerSpec::Dense { inputs: 4, outputs: 6 }, LayerSpec::Relu];
        let a = Network::<f32>::build("a", vec![4], &specs, 42).unwrap();
        let b = Network::<f32>::build("a", vec![4], &specs, 42).unwrap();
        let c = Network::<f32>::build("a", vec![4], &specs, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let x = Tensor::<f32>::from_rows(&[vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        assert_eq!(a.forward(&x).unwrap().0, b.forward(&x).unwrap().0);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = Network::<f64>::build(
            "branch",
            vec![4],
            &[LayerSpec::Dense { inputs: 4, outputs: 6 }, LayerSpec::Dense { inputs: 5, outputs: 2 }],
            1,
        )
        .unwrap_err();
        match err {
            Error::ShapeMismatch { layer, .. } => assert!(layer.contains("branch[1] dense"), "{layer}"),
            other => panic!("unexpected {other:?}"),
        }
        let net = Network::<f64>::build("b", vec![4], &[LayerSpec::Dense { inputs: 4, outputs: 2 }], 1).unwrap();
        let bad = Tensor::from_rows(&[vec![1.0; 3]]).unwrap();
        assert!(matches!(net.forward(&bad), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Network::<f64>::build("s", vec![2], &[LayerSpec::Dense { inputs: 2, outputs: 2 }], 1).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (y, cache) = net.forward(&x).unwrap();
        net.params_mut()[0][0] += 1.0;
        assert!(matches!(net.backward(&cache, &y), Err(Error::StaleCache { .. })));
    }
}

use num_complex::Complex;

use super::loss::{compute_loss, LossConfig};
use crate::airlink::{enforce_power, enforce_power_backward, rates_backward, user_rates, PrecodingMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Result of one BS evaluation over a minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerStep<T> {
    /// Loss averaged over the batch.
    pub loss: T,
    /// Mean sum rate over the batch.
    pub sum_rate: T,
    /// Mean rate of each user over the batch.
    pub user_rates: Vec<T>,
    /// Mean over the batch of the weakest user's rate.
    pub min_rate: T,
    /// `∂loss/∂v_k` for every user `k` and sample, in the
    /// `∂/∂Re + j∂/∂Im` convention.
    pub grads: Vec<Vec<Vec<Complex<T>>>>,
    pub clamped: usize,
}

/// Forms `V` per sample, applies the power projection, evaluates rates
/// and loss, and differentiates back to each user's column.
///
/// `outputs[k][b]` is user `k`'s vector for sample `b`; `channels[b][k]`
/// the channel the BS uses for user `k` in sample `b`.
pub fn server_step<T: Scalar>(
    outputs: &[Vec<Vec<Complex<T>>>],
    channels: &[Vec<Vec<Complex<T>>>],
    power: T,
    noise_var: T,
    loss: &LossConfig,
    with_grads: bool,
) -> Result<ServerStep<T>> {
    let k_users = outputs.len();
    let batch = channels.len();
    if k_users == 0 || batch == 0 {
        return Err(Error::InvalidConfig("server step needs at least one user and one sample".into()));
    }
    if outputs.iter().any(|o| o.len() != batch) || channels.iter().any(|c| c.len() != k_users) {
        return Err(Error::Protocol("uplink batch does not match the channel batch".into()));
    }
    let inv_b = T::one() / T::of(batch as f64);
    let mut out = ServerStep {
        loss: T::zero(),
        sum_rate: T::zero(),
        user_rates: vec![T::zero(); k_users],
        min_rate: T::zero(),
        grads: if with_grads {
            vec![Vec::with_capacity(batch); k_users]
        } else {
            Vec::new()
        },
        clamped: 0,
    };
    for (b, h) in channels.iter().enumerate() {
        let cols: Vec<Vec<Complex<T>>> = outputs.iter().map(|o| o[b].clone()).collect();
        let v = PrecodingMatrix::from_columns(&cols);
        if !v.0.is_finite() {
            return Err(Error::NonFinite("uplink precoder"));
        }
        let v_hat = enforce_power(&v, power);
        let rates = user_rates(h, &v_hat, noise_var);
        let lv = compute_loss(&rates, loss)?;
        out.loss += lv.value * inv_b;
        out.clamped += lv.clamped;
        let mut min = T::infinity();
        for (acc, &r) in out.user_rates.iter_mut().zip(&rates) {
            *acc += r * inv_b;
            out.sum_rate += r * inv_b;
            min = min.min(r);
        }
        out.min_rate += min * inv_b;
        if with_grads {
            let g_hat = rates_backward(h, &v_hat, noise_var, &lv.grad);
            let g = enforce_power_backward(&v, power, &g_hat);
            for (k, gk) in out.grads.iter_mut().enumerate() {
                gk.push(g.col(k).iter().map(|z| *z * inv_b).collect());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airlink::complex_gaussian;
    use crate::seeding::rng_for;

    #[test]
    fn server_gradient_matches_finite_differences() {
        let mut rng = rng_for(&[5]);
        let (n, k, batch) = (4, 3, 2);
        let mut cv = |scale: f64| -> Vec<Complex<f64>> { (0..n).map(|_| complex_gaussian(&mut rng, scale)).collect() };
        let channels: Vec<Vec<Vec<Complex<f64>>>> = (0..batch).map(|_| (0..k).map(|_| cv(1.0)).collect()).collect();
        // Large outputs so the power projection is active.
        let outputs: Vec<Vec<Vec<Complex<f64>>>> = (0..k).map(|_| (0..batch).map(|_| cv(2.0)).collect()).collect();
        let loss = LossConfig::default();
        let step = server_step(&outputs, &channels, 1.0, 0.1, &loss, true).unwrap();
        let eps = 1e-6;
        let mut num = 0.0;
        let mut den = 0.0;
        for u in 0..k {
            for b in 0..batch {
                for i in 0..n {
                    for part in 0..2 {
                        let d = if part == 0 { Complex::new(eps, 0.0) } else { Complex::new(0.0, eps) };
                        let mut p = outputs.clone();
                        p[u][b][i] += d;
                        let mut m = outputs.clone();
                        m[u][b][i] -= d;
                        let fd = (server_step(&p, &channels, 1.0, 0.1, &loss, false).unwrap().loss
                            - server_step(&m, &channels, 1.0, 0.1, &loss, false).unwrap().loss)
                            / (2.0 * eps);
                        let g = step.grads[u][b][i];
                        let an = if part == 0 { g.re } else { g.im };
                        num += (fd - an) * (fd - an);
                        den += fd * fd;
                    }
                }
            }
        }
        assert!((num / den).sqrt() < 1e-4);
    }

    #[test]
    fn mismatched_batches_are_protocol_errors() {
        let h = vec![vec![vec![Complex::new(1.0, 0.0); 2]; 2]; 3];
        let o = vec![vec![vec![Complex::new(1.0, 0.0); 2]; 2]; 2];
        assert!(matches!(
            server_step(&o, &h, 1.0, 0.1, &LossConfig::default(), true),
            Err(Error::Protocol(_))
        ));
    }
}

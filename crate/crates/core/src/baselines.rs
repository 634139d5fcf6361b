//! Perfect-CSI reference precoders: zero forcing, WMMSE and matched
//! filtering (MRT).

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::airlink::{sum_rate, PrecodingMatrix};
use crate::error::{Error, Result};
use crate::linalg::{dot_h, norm_sq, real_embedding, sym_eigen, CMatrix, Cholesky};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WmmseConfig {
    pub max_iter: usize,
    /// Stop once the relative sum-rate gain of an iteration drops below this.
    pub tol: f64,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self { max_iter: 20_000, tol: 1e-12 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult<T> {
    pub v: PrecodingMatrix<T>,
    /// Sum rate after initialization and after each iteration.
    pub trace: Vec<T>,
    pub iterations: usize,
}

fn check_channels<T: Scalar>(h: &[Vec<Complex<T>>]) -> Result<usize> {
    let n = h.first().map_or(0, Vec::len);
    if h.is_empty() || n == 0 || h.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidConfig("need K ≥ 1 channels of a common length N ≥ 1".into()));
    }
    if h.iter().flatten().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("channel"));
    }
    Ok(n)
}

fn gram<T: Scalar>(h: &[Vec<Complex<T>>]) -> CMatrix<T> {
    let k = h.len();
    let mut g = CMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            g[(i, j)] = dot_h(&h[i], &h[j]);
        }
    }
    g
}

/// Scales every column by the same factor so that `Tr(VVᴴ) = P`.
fn scale_to_power<T: Scalar>(mut v: CMatrix<T>, power: T) -> CMatrix<T> {
    let t = v.frobenius_sq();
    if t > T::zero() {
        v.scale((power / t).sqrt());
    }
    v
}

/// `V = H(HᴴH)⁻¹` scaled to `Tr(VVᴴ) = P`.
pub fn zf_precoder<T: Scalar>(h: &[Vec<Complex<T>>], power: T) -> Result<PrecodingMatrix<T>> {
    let n = check_channels(h)?;
    let k = h.len();
    if k > n {
        return Err(Error::ZfInfeasible(format!("{k} users exceed {n} antennas")));
    }
    let chol = Cholesky::new(&gram(h), T::of(1e-12))
        .ok_or_else(|| Error::ZfInfeasible("channel matrix is rank deficient".into()))?;
    let hmat = CMatrix::from_columns(h);
    let mut v = CMatrix::zeros(n, k);
    for j in 0..k {
        let mut e = vec![Complex::new(T::zero(), T::zero()); k];
        e[j] = Complex::new(T::one(), T::zero());
        let x = chol.solve(&e);
        let col = hmat.matvec(&x);
        v.col_mut(j).copy_from_slice(&col);
    }
    Ok(PrecodingMatrix(scale_to_power(v, power)))
}

/// ZF over the users whose channel is non-zero; fully blocked users get a
/// zero column. Returns the precoder and the indices of those users.
pub fn zf_precoder_served<T: Scalar>(h: &[Vec<Complex<T>>], power: T) -> Result<(PrecodingMatrix<T>, Vec<usize>)> {
    let n = check_channels(h)?;
    let (served, blocked): (Vec<usize>, Vec<usize>) = (0..h.len()).partition(|&k| norm_sq(&h[k]) > T::zero());
    let mut v = CMatrix::zeros(n, h.len());
    if !served.is_empty() {
        let sub: Vec<Vec<Complex<T>>> = served.iter().map(|&k| h[k].clone()).collect();
        let vs = zf_precoder(&sub, power)?;
        for (j, &k) in served.iter().enumerate() {
            v.col_mut(k).copy_from_slice(vs.column(j));
        }
    }
    Ok((PrecodingMatrix(v), blocked))
}

/// `v_k = √(P/K) h_k/‖h_k‖`. Returns the precoder and the indices of users
/// whose channel is zero (their column is left at zero).
pub fn mrt_precoder<T: Scalar>(h: &[Vec<Complex<T>>], power: T) -> Result<(PrecodingMatrix<T>, Vec<usize>)> {
    let n = check_channels(h)?;
    let per_user = (power / T::of(h.len() as f64)).sqrt();
    let mut zero = Vec::new();
    let mut v = CMatrix::zeros(n, h.len());
    for (k, hk) in h.iter().enumerate() {
        let norm = norm_sq(hk).sqrt();
        if norm > T::zero() {
            for (dst, z) in v.col_mut(k).iter_mut().zip(hk) {
                *dst = *z * (per_user / norm);
            }
        } else {
            zero.push(k);
        }
    }
    Ok((PrecodingMatrix(v), zero))
}

/// `S = D^{1/2} M D^{1/2}` over the users with `d_j > 0`, with those users
/// and `√d_j`.
fn scaled_gram<T: Scalar>(m: &CMatrix<T>, d: &[T]) -> (Vec<usize>, Vec<T>, CMatrix<T>) {
    let active: Vec<usize> = (0..d.len()).filter(|&j| d[j] > T::zero()).collect();
    let root: Vec<T> = active.iter().map(|&j| d[j].sqrt()).collect();
    let mut s = CMatrix::zeros(active.len(), active.len());
    for (a, &i) in active.iter().enumerate() {
        for (b, &j) in active.iter().enumerate() {
            s[(a, b)] = m[(i, j)] * (root[a] * root[b]);
        }
    }
    (active, root, s)
}

/// `Tr(VVᴴ)` as a function of `μ`: `Σ_i λ_i r_i / (λ_i + μ)²` over the
/// spectrum of `S` (taken on its real embedding, so each value appears
/// twice with its share of the weight).
struct PowerCurve<T> {
    lambda: Vec<T>,
    weight: Vec<T>,
}

impl<T: Scalar> PowerCurve<T> {
    fn new(m: &CMatrix<T>, d: &[T], c: &[Complex<T>]) -> Self {
        let (active, root, s) = scaled_gram(m, d);
        let na = active.len();
        let dim = 2 * na;
        let (lambda, q) = sym_eigen(&real_embedding(&s), dim);
        let mut weight = vec![T::zero(); dim];
        for (a, &l) in active.iter().enumerate() {
            // Right-hand side D^{-1/2} c_l e_l, embedded as [Re; Im].
            let x = c[l] / root[a];
            for (i, w) in weight.iter_mut().enumerate() {
                let r = q[a * dim + i] * x.re + q[(na + a) * dim + i] * x.im;
                *w = *w + r * r;
            }
        }
        let lambda = lambda.into_iter().map(|l| l.max(T::zero())).collect();
        Self { lambda, weight }
    }

    fn power(&self, mu: T) -> T {
        self.lambda
            .iter()
            .zip(&self.weight)
            .map(|(&l, &w)| l * w / ((l + mu) * (l + mu)))
            .sum()
    }
}

/// Transmit update `v_k = (A + μI)⁻¹ b_k` for `μ > 0`, with `A = G D Gᴴ`
/// and `b_k = h_k c_k`, carried out in user space: `V = G Y` where
/// `Y = (D M + μI)⁻¹ C` and `M = GᴴG`. Users with `d_j = 0` get a zero
/// column. Returns `Y` (K×K) and `Tr(VᴴV) = Tr(Yᴴ M Y)`.
fn transmit_update<T: Scalar>(m: &CMatrix<T>, d: &[T], c: &[Complex<T>], mu: T) -> Option<(CMatrix<T>, T)> {
    let k = d.len();
    let (active, root, mut s) = scaled_gram(m, d);
    if active.is_empty() {
        return Some((CMatrix::zeros(k, k), T::zero()));
    }
    for a in 0..active.len() {
        s[(a, a)] += Complex::new(mu, T::zero());
    }
    let chol = Cholesky::new(&s, T::zero())?;
    let mut y = CMatrix::zeros(k, k);
    for (a, &l) in active.iter().enumerate() {
        let mut rhs = vec![Complex::new(T::zero(), T::zero()); active.len()];
        rhs[a] = c[l] / root[a];
        let z = chol.solve(&rhs);
        for (b, &i) in active.iter().enumerate() {
            y[(i, l)] = z[b] * root[b];
        }
    }
    let my = m.matmul(&y);
    let power = y.as_slice().iter().zip(my.as_slice()).map(|(a, b)| (a.conj() * b).re).sum();
    Some((y, power))
}

/// Unconstrained (`μ = 0`) transmit update. With `A = H D Hᴴ`, the
/// minimum-norm solution is `H(HᴴH)⁻¹ diag(1/conj(u_k))`, which exists
/// whenever `H` has full column rank and every `u_k ≠ 0`.
fn transmit_update_free<T: Scalar>(hmat: &CMatrix<T>, gram_chol: Option<&Cholesky<T>>, u: &[Complex<T>]) -> Option<CMatrix<T>> {
    if u.iter().any(|z| z.norm_sqr() == T::zero()) {
        return None;
    }
    let chol = gram_chol?;
    let k = u.len();
    let mut cols = Vec::with_capacity(k);
    for j in 0..k {
        let mut e = vec![Complex::new(T::zero(), T::zero()); k];
        e[j] = Complex::new(T::one(), T::zero()) / u[j].conj();
        cols.push(hmat.matvec(&chol.solve(&e)));
    }
    Some(CMatrix::from_columns(&cols))
}

/// Finds the smallest `μ ≥ 0` meeting the power budget and returns the
/// corresponding transmit update.
struct UserSpace<T> {
    hmat: CMatrix<T>,
    gram: CMatrix<T>,
    gram_chol: Option<Cholesky<T>>,
}

fn solve_mu<T: Scalar>(us: &UserSpace<T>, d: &[T], c: &[Complex<T>], u: &[Complex<T>], power: T) -> Result<CMatrix<T>> {
    let m = &us.gram;
    if let Some(v) = transmit_update_free(&us.hmat, us.gram_chol.as_ref(), u) {
        if v.frobenius_sq() <= power {
            return Ok(v);
        }
    }
    let k = d.len();
    let trace_a: T = (0..k).map(|j| d[j] * m[(j, j)].re).sum();
    let mut lo = T::zero();
    let mut hi = (trace_a / T::of(us.hmat.rows() as f64)).max(T::min_positive_value().sqrt()) * T::of(1e-6);
    let curve = PowerCurve::new(m, d, c);
    let mut grown = 0;
    while !(curve.power(hi) <= power) {
        lo = hi;
        hi = hi * T::of(10.0);
        grown += 1;
        if grown > 400 || !hi.is_finite() {
            return Err(Error::Bisection(format!(
                "no feasible μ up to {:e} (P = {:e}, Tr(A) = {:e})",
                hi.as_f64(),
                power.as_f64(),
                trace_a.as_f64()
            )));
        }
    }
    for _ in 0..200 {
        if hi - lo <= hi * T::of(1e-14) {
            break;
        }
        let mid = (lo + hi) / T::of(2.0);
        if curve.power(mid) <= power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let (mut y_hi, p) = transmit_update(m, d, c, hi)
        .ok_or_else(|| Error::Bisection(format!("singular transmit system at μ = {:e}", hi.as_f64())))?;
    if p > power {
        y_hi.scale((power / p).sqrt());
    }
    Ok(us.hmat.matmul(&y_hi))
}

/// Alternating WMMSE sum-rate maximization from a scaled-MRT start.
pub fn wmmse_precoder<T: Scalar>(
    h: &[Vec<Complex<T>>],
    power: T,
    noise_var: T,
    cfg: &WmmseConfig,
) -> Result<BaselineResult<T>> {
    check_channels(h)?;
    if !(noise_var > T::zero()) {
        return Err(Error::InvalidConfig("WMMSE needs σ² > 0".into()));
    }
    let k_users = h.len();
    let (mut v, _) = mrt_precoder(h, power)?;
    let mut trace = vec![sum_rate(h, &v, noise_var)];
    let mut iterations = 0;
    let zero = Complex::new(T::zero(), T::zero());
    let gram = gram(h);
    let us = UserSpace {
        hmat: CMatrix::from_columns(h),
        gram_chol: Cholesky::new(&gram, T::of(1e-10)),
        gram,
    };
    for _ in 0..cfg.max_iter {
        // Receivers and weights for the current precoder.
        let mut u = vec![zero; k_users];
        let mut w = vec![T::zero(); k_users];
        for k in 0..k_users {
            let gains: Vec<Complex<T>> = v.0.columns().map(|c| dot_h(&h[k], c)).collect();
            let total: T = gains.iter().map(|g| g.norm_sqr()).sum::<T>() + noise_var;
            u[k] = gains[k] / total;
            let mse = T::one() - (u[k].conj() * gains[k]).re;
            w[k] = T::one() / mse.max(T::epsilon());
        }
        // A = Σ_j d_j h_j h_jᴴ with d_j = w_j |u_j|², b_k = h_k c_k with c_k = u_k w_k.
        let d: Vec<T> = (0..k_users).map(|j| w[j] * u[j].norm_sqr()).collect();
        let c: Vec<Complex<T>> = (0..k_users).map(|j| u[j] * w[j]).collect();
        v = PrecodingMatrix(solve_mu(&us, &d, &c, &u, power)?);
        iterations += 1;
        let rate = sum_rate(h, &v, noise_var);
        let prev = *trace.last().expect("initial rate recorded");
        trace.push(rate);
        if (rate - prev).abs() <= T::of(cfg.tol) * prev.abs().max(T::min_positive_value()) {
            break;
        }
    }
    Ok(BaselineResult { v, trace, iterations })
}

/// I.i.d. complex Gaussian columns scaled to `Tr(VVᴴ) = P`.
pub fn random_precoder<T: Scalar, R: rand::Rng + ?Sized>(n: usize, k: usize, power: T, rng: &mut R) -> PrecodingMatrix<T> {
    let cols: Vec<Vec<Complex<T>>> = (0..k)
        .map(|_| (0..n).map(|_| crate::airlink::complex_gaussian(rng, 1.0)).collect())
        .collect();
    PrecodingMatrix(scale_to_power(CMatrix::from_columns(&cols), power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::airlink::{complex_gaussian, user_rate};
    use crate::seeding::rng_for;

    fn random_h(seed: u64, n: usize, k: usize) -> Vec<Vec<Complex<f64>>> {
        let mut rng = rng_for(&[seed]);
        (0..k).map(|_| (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect()).collect()
    }

    #[test]
    fn zf_on_orthonormal_channels_is_diagonal() {
        let n = 3;
        let h: Vec<Vec<Complex<f64>>> = (0..n)
            .map(|k| (0..n).map(|i| Complex::new((i == k) as u8 as f64, 0.0)).collect())
            .collect();
        let v = zf_precoder(&h, 3.0).unwrap();
        for k in 0..n {
            for i in 0..n {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((v.0[(i, k)].norm() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zf_nulls_interference_and_meets_power() {
        for s in 0..20 {
            let h = random_h(s, 8, 3);
            let v = zf_precoder(&h, 2.0).unwrap();
            assert!((v.power() - 2.0).abs() < 1e-9);
            for k in 0..3 {
                let own = dot_h(&h[k], v.column(k)).norm();
                for i in (0..3).filter(|&i| i != k) {
                    assert!(dot_h(&h[k], v.column(i)).norm() / own < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zf_single_user_is_mrt_direction() {
        let h = random_h(4, 6, 1);
        let zf = zf_precoder(&h, 1.0).unwrap();
        let (mrt, _) = mrt_precoder(&h, 1.0).unwrap();
        for (a, b) in zf.column(0).iter().zip(mrt.column(0)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zf_rejects_rank_deficiency() {
        let mut h = random_h(1, 4, 2);
        h[1] = h[0].iter().map(|z| z * 2.0).collect();
        assert!(matches!(zf_precoder(&h, 1.0), Err(Error::ZfInfeasible(_))));
        assert!(matches!(zf_precoder(&random_h(1, 2, 3), 1.0), Err(Error::ZfInfeasible(_))));
    }

    #[test]
    fn mrt_splits_power_equally_and_flags_zero_channels() {
        let mut h = random_h(2, 5, 3);
        let (v, zero) = mrt_precoder(&h, 3.0).unwrap();
        assert!(zero.is_empty());
        for k in 0..3 {
            assert!((norm_sq(v.column(k)) - 1.0).abs() < 1e-12);
        }
        h[1] = vec![Complex::new(0.0, 0.0); 5];
        let (v, zero) = mrt_precoder(&h, 3.0).unwrap();
        assert_eq!(zero, vec![1]);
        assert_eq!(norm_sq(v.column(1)), 0.0);
    }

    #[test]
    fn mrt_collinear_channels_give_parallel_columns() {
        let base = random_h(3, 4, 1).remove(0);
        let h = vec![base.clone(), base.iter().map(|z| z * Complex::new(0.0, 3.0)).collect()];
        let (v, _) = mrt_precoder(&h, 1.0).unwrap();
        let c = dot_h(v.column(0), v.column(1)).norm();
        assert!((c - norm_sq(v.column(0))).abs() < 1e-12);
    }

    #[test]
    fn wmmse_single_user_reaches_closed_form() {
        for s in 0..10 {
            let h = random_h(100 + s, 8, 1);
            let sigma2 = 0.1;
            let r = wmmse_precoder(&h, 1.0, sigma2, &WmmseConfig::default()).unwrap();
            let opt = (1.0 + norm_sq(&h[0]) / sigma2).log2();
            let got = user_rate(&h[0], &r.v, 0, sigma2);
            assert!((got - opt).abs() < 1e-4, "{got} vs {opt}");
        }
    }

    #[test]
    fn wmmse_is_monotone_and_feasible() {
        for s in 0..20 {
            let h = random_h(200 + s, 6, 4);
            let r = wmmse_precoder(&h, 1.0, 0.05, &WmmseConfig::default()).unwrap();
            assert!(r.v.power() <= 1.0 + 1e-9);
            for w in r.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-6, "{:?}", r.trace);
            }
        }
    }

    #[test]
    fn wmmse_supports_more_users_than_antennas() {
        let h = random_h(7, 2, 4);
        let r = wmmse_precoder(&h, 1.0, 0.1, &WmmseConfig::default()).unwrap();
        assert!(r.v.power() <= 1.0 + 1e-9);
        assert!(r.trace.last().unwrap() >= &r.trace[0]);
    }

    #[test]
    fn served_zf_skips_blocked_users() {
        let mut rng = rng_for(&[41]);
        let mut h: Vec<Vec<Complex<f64>>> = (0..3).map(|_| (0..4).map(|_| complex_gaussian(&mut rng, 1.0)).collect()).collect();
        h[1] = vec![Complex::new(0.0, 0.0); 4];
        assert!(zf_precoder(&h, 1.0).is_err());
        let (v, blocked) = zf_precoder_served(&h, 1.0).unwrap();
        assert_eq!(blocked, vec![1]);
        assert!(v.column(1).iter().all(|z| z.norm() == 0.0));
        assert!((v.power() - 1.0).abs() < 1e-12);
        assert!(dot_h(&h[0], v.column(2)).norm() < 1e-12);
        let w = wmmse_precoder(&h, 1.0, 0.01, &WmmseConfig::default()).unwrap();
        assert!(w.v.0.is_finite());
        assert!(sum_rate(&h, &w.v, 0.01) >= sum_rate(&h, &v, 0.01) * (1.0 - 1e-3));
    }
}

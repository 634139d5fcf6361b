//! Downlink pilots, the real/complex mapping, B-bit limited feedback, the
//! sum-power constraint and achievable rates.
//!
//! Gradients with respect to complex quantities use the convention
//! `∂L/∂Re z + j·∂L/∂Im z`, which lines up element for element with the
//! stacked real vector that the local networks emit.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot_h, norm_sq, CMatrix};
use crate::scalar::Scalar;
use crate::seeding::{rng_for, tag};

/// Draws a circularly symmetric complex Gaussian with variance `var`.
pub fn complex_gaussian<T: Scalar, R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex<T> {
    let s = (0.5 * var).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(T::of(re * s), T::of(im * s))
}

/// `N × L_P` pilot matrix; every column carries exactly power `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotMatrix<T> {
    pub x: CMatrix<T>,
}

impl<T: Scalar> PilotMatrix<T> {
    pub fn n_antennas(&self) -> usize {
        self.x.rows()
    }

    pub fn len(&self) -> usize {
        self.x.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.x.cols() == 0
    }
}

pub fn make_pilots<T: Scalar>(n: usize, l_p: usize, power: f64, seed: u64) -> Result<PilotMatrix<T>> {
    if n == 0 || l_p == 0 || !(power > 0.0) {
        return Err(Error::InvalidConfig("pilots need N, L_P ≥ 1 and P > 0".into()));
    }
    let mut rng = rng_for(&[tag::PILOTS, seed]);
    let mut x = CMatrix::zeros(n, l_p);
    for l in 0..l_p {
        let col: Vec<Complex<f64>> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let s = (power / norm_sq(&col)).sqrt();
        for (dst, z) in x.col_mut(l).iter_mut().zip(col) {
            *dst = Complex::new(T::of(z.re * s), T::of(z.im * s));
        }
    }
    Ok(PilotMatrix { x })
}

/// `σ² = P / 10^(SNR/10)`.
pub fn noise_var_from_snr(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedPilot<T> {
    pub y: Vec<Complex<T>>,
}

impl<T: Scalar> ReceivedPilot<T> {
    /// `Re(y) ++ Im(y)`.
    pub fn real_form(&self) -> Vec<T> {
        eta_inv(&self.y)
    }
}

/// `y = hᴴX + z` with `z ~ CN(0, σ²I)`.
pub fn downlink_train<T: Scalar, R: Rng + ?Sized>(
    h: &[Complex<T>],
    pilots: &PilotMatrix<T>,
    noise_var: f64,
    rng: &mut R,
) -> ReceivedPilot<T> {
    assert_eq!(h.len(), pilots.n_antennas(), "channel and pilot dimensions differ");
    let y = pilots
        .x
        .columns()
        .map(|col| {
            let clean = dot_h(h, col);
            if noise_var > 0.0 {
                clean + complex_gaussian::<T, _>(rng, noise_var)
            } else {
                clean
            }
        })
        .collect();
    ReceivedPilot { y }
}

/// First half real parts, second half imaginary parts.
pub fn eta<T: Scalar>(x: &[T]) -> Result<Vec<Complex<T>>> {
    if x.len() % 2 != 0 {
        return Err(Error::OddLength(x.len()));
    }
    let n = x.len() / 2;
    Ok((0..n).map(|i| Complex::new(x[i], x[n + i])).collect())
}

pub fn eta_inv<T: Scalar>(z: &[Complex<T>]) -> Vec<T> {
    z.iter().map(|c| c.re).chain(z.iter().map(|c| c.im)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    /// Bits per real component.
    pub bits: u8,
    /// Skip quantization (training-time feedback).
    pub training_bypass: bool,
}

impl QuantizerConfig {
    pub fn new(bits: u8) -> Self {
        Self {
            bits,
            training_bypass: false,
        }
    }

    pub fn bypass() -> Self {
        Self {
            bits: 32,
            training_bypass: true,
        }
    }

    pub fn levels(&self) -> u32 {
        1u32 << self.bits
    }

    pub fn step(&self) -> f64 {
        2.0 / self.levels() as f64
    }

    /// Feedback size in bits for an `n`-antenna vector: `2NB` codes plus a
    /// 32-bit norm.
    pub fn feedback_bits(&self, n: usize) -> usize {
        2 * n * self.bits as usize + 32
    }
}

/// Quantized precoding vector: unit-norm codes plus the norm as side value.
#[derive(Clone, Debug, PartialEq)]
pub enum Feedback<T> {
    Raw(Vec<Complex<T>>),
    Quantized {
        bits: u8,
        n: usize,
        norm: T,
        /// One level index per real component (`Re` block then `Im` block).
        codes: Vec<u16>,
    },
}

impl<T: Scalar> Feedback<T> {
    /// Codes packed LSB-first, `bits` per code.
    pub fn packed_codes(&self) -> Vec<u8> {
        match self {
            Feedback::Raw(_) => Vec::new(),
            Feedback::Quantized { bits, codes, .. } => pack_codes(codes, *bits),
        }
    }
}

pub fn pack_codes(codes: &[u16], bits: u8) -> Vec<u8> {
    let total = codes.len() * bits as usize;
    let mut out = vec![0u8; total.div_ceil(8)];
    let mut pos = 0;
    for &c in codes {
        for b in 0..bits {
            if (c >> b) & 1 == 1 {
                out[pos / 8] |= 1 << (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_codes(packed: &[u8], bits: u8, count: usize) -> Result<Vec<u16>> {
    if packed.len() * 8 < count * bits as usize {
        return Err(Error::Format("packed code stream too short".into()));
    }
    let mut codes = Vec::with_capacity(count);
    let mut pos = 0;
    for _ in 0..count {
        let mut c = 0u16;
        for b in 0..bits {
            if (packed[pos / 8] >> (pos % 8)) & 1 == 1 {
                c |= 1 << b;
            }
            pos += 1;
        }
        codes.push(c);
    }
    Ok(codes)
}

/// Midrise uniform quantizer on `[-1, 1]`: index of the cell containing `x`.
fn quantize_component(x: f64, levels: u32) -> u16 {
    let step = 2.0 / levels as f64;
    (((x + 1.0) / step).floor()).clamp(0.0, (levels - 1) as f64) as u16
}

/// Reconstruction point of a cell: `(i + ½)·step - 1`.
pub fn reconstruction_level(code: u16, bits: u8) -> f64 {
    let step = 2.0 / (1u32 << bits) as f64;
    (code as f64 + 0.5) * step - 1.0
}

pub fn quantize<T: Scalar>(v: &[Complex<T>], cfg: &QuantizerConfig) -> Result<Feedback<T>> {
    if v.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("precoding vector"));
    }
    if cfg.training_bypass {
        return Ok(Feedback::Raw(v.to_vec()));
    }
    if cfg.bits == 0 || cfg.bits > 16 {
        return Err(Error::InvalidConfig("quantizer bits must be in 1..=16".into()));
    }
    let norm = norm_sq(v).sqrt();
    let inv = if norm > T::zero() { norm.recip().as_f64() } else { 0.0 };
    let levels = cfg.levels();
    let codes = eta_inv(v)
        .into_iter()
        .map(|x| quantize_component(x.as_f64() * inv, levels))
        .collect();
    Ok(Feedback::Quantized {
        bits: cfg.bits,
        n: v.len(),
        norm,
        codes,
    })
}

pub fn dequantize<T: Scalar>(fb: &Feedback<T>) -> Result<Vec<Complex<T>>> {
    match fb {
        Feedback::Raw(v) => Ok(v.clone()),
        Feedback::Quantized { bits, n, norm, codes } => {
            if codes.len() != 2 * n {
                return Err(Error::Format("code count does not match vector length".into()));
            }
            let real: Vec<T> = codes
                .iter()
                .map(|&c| *norm * T::of(reconstruction_level(c, *bits)))
                .collect();
            eta(&real)
        }
    }
}

/// `N × K` precoder, one column per user.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecodingMatrix<T>(pub CMatrix<T>);

impl<T: Scalar> PrecodingMatrix<T> {
    pub fn from_columns(columns: &[Vec<Complex<T>>]) -> Self {
        Self(CMatrix::from_columns(columns))
    }

    pub fn n_users(&self) -> usize {
        self.0.cols()
    }

    pub fn column(&self, k: usize) -> &[Complex<T>] {
        self.0.col(k)
    }

    /// `Tr(V Vᴴ)`.
    pub fn power(&self) -> T {
        self.0.frobenius_sq()
    }
}

/// Scale factor applied by [`enforce_power`]: `min(1, √(P / Tr(VVᴴ)))`.
pub fn power_scale<T: Scalar>(v: &PrecodingMatrix<T>, power: T) -> T {
    let t = v.power();
    if t > power {
        (power / t).sqrt()
    } else {
        T::one()
    }
}

/// Projects onto `Tr(VVᴴ) ≤ P` by uniform scaling.
pub fn enforce_power<T: Scalar>(v: &PrecodingMatrix<T>, power: T) -> PrecodingMatrix<T> {
    let s = power_scale(v, power);
    let mut out = v.clone();
    if s < T::one() {
        out.0.scale(s);
    }
    out
}

/// Pulls a gradient with respect to the scaled precoder back through
/// [`enforce_power`], including the dependence of the scale on `V`.
pub fn enforce_power_backward<T: Scalar>(
    v: &PrecodingMatrix<T>,
    power: T,
    grad_out: &CMatrix<T>,
) -> CMatrix<T> {
    let t = v.power();
    let mut g = grad_out.clone();
    if t <= power {
        return g;
    }
    let s = (power / t).sqrt();
    // d/dx [s(t)·x] with t = Σx², s = √P·t^{-1/2}: s·g − √P·t^{-3/2}(g·x)·x.
    let gx: T = grad_out
        .as_slice()
        .iter()
        .zip(v.0.as_slice())
        .map(|(a, b)| a.re * b.re + a.im * b.im)
        .sum();
    let coef = power.sqrt() * t.powf(T::of(-1.5)) * gx;
    for (gi, vi) in g.as_mut_slice().iter_mut().zip(v.0.as_slice()) {
        *gi = *gi * s - *vi * coef;
    }
    g
}

/// Achievable rate of user `k` in bits/s/Hz.
pub fn user_rate<T: Scalar>(h_k: &[Complex<T>], v: &PrecodingMatrix<T>, k: usize, noise_var: T) -> T {
    let mut signal = T::zero();
    let mut interference = T::zero();
    for (i, col) in v.0.columns().enumerate() {
        let g = dot_h(h_k, col).norm_sqr();
        if i == k {
            signal = g;
        } else {
            interference += g;
        }
    }
    (T::one() + signal / (interference + noise_var)).log2()
}

pub fn user_rates<T: Scalar>(h: &[Vec<Complex<T>>], v: &PrecodingMatrix<T>, noise_var: T) -> Vec<T> {
    assert_eq!(h.len(), v.n_users(), "one channel per precoder column");
    h.iter()
        .enumerate()
        .map(|(k, hk)| user_rate(hk, v, k, noise_var))
        .collect()
}

pub fn sum_rate<T: Scalar>(h: &[Vec<Complex<T>>], v: &PrecodingMatrix<T>, noise_var: T) -> T {
    user_rates(h, v, noise_var).into_iter().sum()
}

/// Gradient of `Σ_k w_k R_k` with respect to `V`, given weights
/// `w_k = ∂L/∂R_k`.
pub fn rates_backward<T: Scalar>(
    h: &[Vec<Complex<T>>],
    v: &PrecodingMatrix<T>,
    noise_var: T,
    rate_grads: &[T],
) -> CMatrix<T> {
    let k_users = v.n_users();
    let n = v.0.rows();
    let ln2 = T::LN_2();
    let two = T::of(2.0);
    let mut grad = CMatrix::zeros(n, k_users);
    for (k, hk) in h.iter().enumerate() {
        let a: Vec<Complex<T>> = v.0.columns().map(|col| dot_h(hk, col)).collect();
        let total: T = a.iter().map(|z| z.norm_sqr()).sum::<T>() + noise_var;
        let interf_plus_noise = total - a[k].norm_sqr();
        // R_k = log2(total) − log2(interference + σ²); ∂|hᴴv_i|²/∂v_i = 2(hᴴv_i)h.
        for (i, ai) in a.iter().enumerate() {
            let mut c = T::one() / total;
            if i != k {
                c -= T::one() / interf_plus_noise;
            }
            let coef = *ai * (rate_grads[k] * two * c / ln2);
            for (g, hn) in grad.col_mut(i).iter_mut().zip(hk) {
                *g += *hn * coef;
            }
        }
    }
    grad
}

/// `ĥ = h + e` with `e` along a uniformly random complex direction and
/// `‖e‖² = nmse · ‖h‖²` exactly.
pub fn estimate_channel<T: Scalar, R: Rng + ?Sized>(h: &[Complex<T>], nmse: f64, rng: &mut R) -> Vec<Complex<T>> {
    let e: Vec<Complex<T>> = (0..h.len()).map(|_| complex_gaussian(rng, 1.0)).collect();
    let en = norm_sq(&e);
    if !(en > T::zero()) {
        return h.to_vec();
    }
    let scale = (T::of(nmse) * norm_sq(h) / en).sqrt();
    h.iter().zip(&e).map(|(a, b)| *a + *b * scale).collect()
}

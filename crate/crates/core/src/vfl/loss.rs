use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// `L = −Σ_k (R_k + λ^{R_T − R_k})`.
    NegatedSum,
    /// `L = −Σ_k R_k + Σ_k λ^{R_T − R_k}`.
    #[default]
    Penalty,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub form: LossForm,
    pub lambda: f64,
    pub r_t: f64,
    /// Upper bound on the exponent `R_T − R_k`.
    pub max_exponent: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            form: LossForm::Penalty,
            lambda: 10.0,
            r_t: 0.3,
            max_exponent: 30.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 1.0) || !(self.r_t > 0.0) || !(self.max_exponent > 0.0) {
            return Err(Error::InvalidConfig("loss needs λ > 1, R_T > 0 and a positive exponent bound".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    /// `∂L/∂R_k`.
    pub grad: Vec<T>,
    /// Terms whose exponent hit `max_exponent`.
    pub clamped: usize,
}

pub fn compute_loss<T: Scalar>(rates: &[T], cfg: &LossConfig) -> Result<LossValue<T>> {
    if rates.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("user rate"));
    }
    let lambda = T::of(cfg.lambda);
    let ln_lambda = lambda.ln();
    let r_t = T::of(cfg.r_t);
    let cap = T::of(cfg.max_exponent);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(rates.len());
    let mut clamped = 0;
    for &r in rates {
        let e = r_t - r;
        let (term, dterm) = if e > cap {
            clamped += 1;
            (lambda.powf(cap), T::zero())
        } else {
            let t = lambda.powf(e);
            // d/dR λ^{R_T − R} = −ln λ · λ^{R_T − R}
            (t, -ln_lambda * t)
        };
        match cfg.form {
            LossForm::NegatedSum => {
                value -= r + term;
                grad.push(-T::one() - dterm);
            }
            LossForm::Penalty => {
                value += term - r;
                grad.push(dterm - T::one());
            }
        }
    }
    Ok(LossValue { value, grad, clamped })
}

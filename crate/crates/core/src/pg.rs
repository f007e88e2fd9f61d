//! Exact Polya-Gamma sampling for positive integer shape.
//!
//! `PG(1, c)` is drawn with Devroye's alternating-series accept/reject
//! scheme for the Jacobi distribution `J*(1, c/2)` and `PG(1, c) = J*/4`. The
//! proposal is a mixture of a truncated inverse Gaussian on `(0, t]` and an
//! exponential tail on `(t, inf)` with `t = 0.64`. `PG(b, c)` for integer `b`
//! is the sum of `b` independent `PG(1, c)` draws.

use std::f64::consts::PI;

use rand_distr::{Distribution, Exp1, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Truncation point between the two proposal pieces.
pub const TRUNCATION: f64 = 0.64;

/// Proposals rejected in a row before the sampler gives up.
pub const MAX_PROPOSALS: usize = 1_000_000;

/// Parameters of `PG(b, c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgParams {
    b: u32,
    c: f64,
}

impl PgParams {
    pub fn new(b: u32, c: f64) -> Result<Self> {
        if b == 0 {
            return Err(Error::InvalidParameter("Polya-Gamma shape must be >= 1".into()));
        }
        if !c.is_finite() {
            return Err(Error::InvalidParameter(format!("Polya-Gamma tilt {c} is not finite")));
        }
        Ok(Self { b, c })
    }

    pub fn b(&self) -> u32 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

/// `E[PG(b, c)] = b / (2c) * tanh(c / 2)`, with the series near `c = 0`.
pub fn pg_mean(params: PgParams) -> f64 {
    let b = params.b as f64;
    let c = params.c.abs();
    if c < 1e-4 {
        // tanh(x)/x = 1 - x^2/3 + 2x^4/15, x = c/2
        let x2 = c * c / 4.0;
        b / 4.0 * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0)
    } else {
        b / (2.0 * c) * (c / 2.0).tanh()
    }
}

/// `Var[PG(b, c)] = b / (4c^3) * (sinh c - c) / cosh^2(c/2)`, limit `b/24`.
pub fn pg_variance(params: PgParams) -> f64 {
    let b = params.b as f64;
    let c = params.c.abs();
    let sech_sq = (c / 2.0).cosh().powi(-2);
    let ratio = if c < 1e-3 {
        // (sinh c - c) / c^3 = 1/6 + c^2/120 + c^4/5040
        let c2 = c * c;
        1.0 / 6.0 + c2 / 120.0 + c2 * c2 / 5040.0
    } else if c > 50.0 {
        // (sinh c - c) sech^2(c/2) = 2 up to terms of order c e^{-c}
        return b / (2.0 * c * c * c);
    } else {
        (c.sinh() - c) / (c * c * c)
    };
    b / 4.0 * ratio * sech_sq
}

/// One draw from `PG(b, c)`.
pub fn sample_pg<R: rand::Rng + ?Sized>(params: PgParams, rng: &mut R) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..params.b {
        total += sample_pg1(params.c, rng)?;
    }
    Ok(total)
}

/// One draw from `PG(1, c)`.
pub fn sample_pg1<R: rand::Rng + ?Sized>(c: f64, rng: &mut R) -> Result<f64> {
    let z = 0.5 * c.abs();
    let k = PI * PI / 8.0 + 0.5 * z * z;
    let p_exponential = exponential_mass(z, k);
    for _ in 0..MAX_PROPOSALS {
        let x = if rng.random::<f64>() < p_exponential {
            TRUNCATION + Distribution::<f64>::sample(&Exp1, rng) / k
        } else {
            truncated_inverse_gaussian(z, rng)
        };
        if accept(x, rng) {
            return Ok(0.25 * x);
        }
    }
    Err(Error::PgIterationCap(MAX_PROPOSALS))
}

/// Alternating-series test `U * a_0(x) <= S_n(x)`.
fn accept<R: rand::Rng + ?Sized>(x: f64, rng: &mut R) -> bool {
    let mut s = series_coefficient(0, x);
    let y = rng.random::<f64>() * s;
    let mut n = 0;
    loop {
        n += 1;
        if n % 2 == 1 {
            s -= series_coefficient(n, x);
            if y <= s {
                return true;
            }
        } else {
            s += series_coefficient(n, x);
            if y > s {
                return false;
            }
        }
    }
}

/// Piecewise coefficients `a_n(x)` of the `J*(1, 0)` density.
fn series_coefficient(n: u32, x: f64) -> f64 {
    let h = n as f64 + 0.5;
    let k = h * PI;
    if x > TRUNCATION {
        k * (-0.5 * k * k * x).exp()
    } else if x > 0.0 {
        (-1.5 * ((0.5 * PI).ln() + x.ln()) + k.ln() - 2.0 * h * h / x).exp()
    } else {
        0.0
    }
}

fn ln_normal_cdf(x: f64) -> f64 {
    (0.5 * erfc(-x / std::f64::consts::SQRT_2)).ln()
}

/// Probability of proposing from the exponential tail, `p / (p + q)`.
fn exponential_mass(z: f64, k: f64) -> f64 {
    let t = TRUNCATION;
    let b = (1.0 / t).sqrt() * (t * z - 1.0);
    let a = -(1.0 / t).sqrt() * (t * z + 1.0);
    let x0 = k.ln() + k * t;
    let xb = x0 - z + ln_normal_cdf(b);
    let xa = x0 + z + ln_normal_cdf(a);
    let q_over_p = 4.0 / PI * (xb.exp() + xa.exp());
    1.0 / (1.0 + q_over_p)
}

/// Inverse Gaussian with mean `1/z`, shape 1, truncated to `(0, t]`.
fn truncated_inverse_gaussian<R: rand::Rng + ?Sized>(z: f64, rng: &mut R) -> f64 {
    let t = TRUNCATION;
    if z < 1.0 / t {
        // mean above t: propose from the z = 0 case (1/chi^2_1 truncated) and thin
        loop {
            let x = loop {
                let e1: f64 = Exp1.sample(rng);
                let e2: f64 = Exp1.sample(rng);
                if e1 * e1 <= 2.0 * e2 / t {
                    let d = 1.0 + e1 * t;
                    break t / (d * d);
                }
            };
            if rng.random::<f64>() <= (-0.5 * z * z * x).exp() {
                return x;
            }
        }
    } else {
        let mu = 1.0 / z;
        loop {
            let y: f64 = StandardNormal.sample(rng);
            let y = y * y;
            let mu_y = mu * y;
            let mut x = mu + 0.5 * mu * mu_y - 0.5 * mu * (4.0 * mu_y + mu_y * mu_y).sqrt();
            if rng.random::<f64>() > mu / (mu + x) {
                x = mu * mu / x;
            }
            if x <= t {
                return x;
            }
        }
    }
}

//! Single-chain MCMC diagnostics.

use crate::error::{Error, Result};

/// Effective sample size of one chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ess {
    pub value: f64,
    /// The chain never moved; `value` is then the chain length.
    pub constant: bool,
}

/// ESS by Geyer's initial positive sequence estimator.
///
/// Autocorrelations are summed in adjacent pairs `rho_{2m} + rho_{2m+1}`
/// until the first non-positive pair. The estimate is capped at
/// `n log10(n)` for strongly antithetic chains.
pub fn effective_sample_size(chain: &[f64]) -> Result<Ess> {
    let n = chain.len();
    if n < 10 {
        return Err(Error::InvalidParameter(format!(
            "effective sample size needs at least 10 draws, got {n}"
        )));
    }
    if chain.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("chain contains non-finite values".into()));
    }
    let mean = chain.iter().sum::<f64>() / n as f64;
    let centred: Vec<f64> = chain.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centred[..n - lag]
            .iter()
            .zip(&centred[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = autocov(0);
    let scale = chain.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    if gamma0.sqrt() <= 1e-12 * scale {
        log::warn!("constant chain of length {n}; reporting ESS = n");
        return Ok(Ess { value: n as f64, constant: true });
    }
    let mut tau = -1.0;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    let cap = n as f64 * (n as f64).log10();
    Ok(Ess { value: (n as f64 / tau).min(cap), constant: false })
}

/// Monte Carlo standard error of the chain mean, `sd / sqrt(ESS)`.
pub fn mc_standard_error(chain: &[f64]) -> Result<f64> {
    let ess = effective_sample_size(chain)?;
    Ok((crate::stats::variance(chain) / ess.value).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_for;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iid_chain_has_full_ess() {
        let mut rng = rng_for(21, 0);
        let chain: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&chain).unwrap();
        assert!(!ess.constant);
        assert!((8_000.0..=12_000.0).contains(&ess.value), "ess {}", ess.value);
    }

    #[test]
    fn ar1_chain_matches_analytic_ess() {
        let rho: f64 = 0.9;
        let n = 100_000;
        let mut rng = rng_for(22, 0);
        let innov = (1.0 - rho * rho).sqrt();
        let mut x = 0.0;
        let chain: Vec<f64> = (0..n)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = rho * x + innov * e;
                x
            })
            .collect();
        let expected = n as f64 * (1.0 - rho) / (1.0 + rho);
        let ess = effective_sample_size(&chain).unwrap().value;
        assert!((ess / expected - 1.0).abs() < 0.25, "ess {ess} vs {expected}");
    }

    #[test]
    fn constant_chain_is_flagged() {
        let ess = effective_sample_size(&[2.5; 50]).unwrap();
        assert!(ess.constant);
        assert_eq!(ess.value, 50.0);
        assert!(effective_sample_size(&[1.0; 5]).is_err());
    }
}

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_conditioning, Forecaster};
use crate::data::ChangePanel;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_ORDER: usize = 10;
/// Smallest-to-largest singular value ratio below which a design is singular.
const SINGULAR_RTOL: f64 = 1e-10;
/// Extra observations required beyond `max_order`.
const MIN_EXTRA_ROWS: usize = 10;

/// `x_t = c + Σ_j φ_j x_{t−j} + e_t` for one asset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArFit {
    pub order: usize,
    pub intercept: f64,
    /// `φ_1 .. φ_p`.
    pub coefs: Vec<f64>,
    /// Training mean, used for lags older than the conditioning window.
    pub mean: f64,
    pub aic: f64,
    /// Every candidate design was singular; forecasts repeat the last value.
    pub fallback: bool,
}

impl ArFit {
    /// Least squares for orders `1..=max_order` on the common sample
    /// `t = max_order .. n`, choosing the order with the lowest
    /// `n·ln(RSS/n) + 2(p + 1)`. Orders stop at the first singular design,
    /// since adding lags cannot restore rank.
    pub fn fit(series: &[f64], max_order: usize) -> Result<ArFit> {
        if max_order == 0 {
            return Err(Error::invalid("max_order must be positive"));
        }
        let n = series.len();
        if n <= max_order + MIN_EXTRA_ROWS {
            return Err(Error::TooFewRows {
                needed: max_order + MIN_EXTRA_ROWS + 1,
                found: n,
            });
        }
        let mean = series.iter().sum::<f64>() / n as f64;
        let rows = n - max_order;
        let target = DVector::from_iterator(rows, series[max_order..].iter().copied());
        let mut best: Option<ArFit> = None;
        for p in 1..=max_order {
            let x = DMatrix::from_fn(rows, p + 1, |r, c| {
                if c == 0 {
                    1.0
                } else {
                    series[max_order + r - c]
                }
            });
            let svd = x.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let smin = svd.singular_values.min();
            if !(smax > 0.0) || smin / smax < SINGULAR_RTOL {
                break;
            }
            let beta = svd
                .solve(&target, SINGULAR_RTOL * smax)
                .map_err(|e| Error::invalid(format!("least squares failed: {e}")))?;
            let resid = &target - &x * &beta;
            let rss = resid.norm_squared();
            let nf = rows as f64;
            // Floored so an exact fit compares by its penalty alone.
            let aic = nf * (rss / nf).max(f64::MIN_POSITIVE).ln() + 2.0 * (p as f64 + 1.0);
            if best.as_ref().is_none_or(|b| aic < b.aic) {
                best = Some(ArFit {
                    order: p,
                    intercept: beta[0],
                    coefs: beta.iter().skip(1).copied().collect(),
                    mean,
                    aic,
                    fallback: false,
                });
            }
        }
        Ok(best.unwrap_or(ArFit {
            order: 0,
            intercept: 0.0,
            coefs: Vec::new(),
            mean,
            aic: f64::NAN,
            fallback: true,
        }))
    }

    /// Recursive `horizon`-step forecast after `history` (oldest first).
    pub fn forecast(&self, history: &[f64], horizon: usize) -> Vec<f64> {
        if self.fallback {
            let last = history.last().copied().unwrap_or(self.mean);
            return vec![last; horizon];
        }
        let mut h = history.to_vec();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            let next = self.intercept
                + self
                    .coefs
                    .iter()
                    .enumerate()
                    .map(|(j, phi)| phi * h.len().checked_sub(j + 1).map_or(self.mean, |i| h[i]))
                    .sum::<f64>();
            h.push(next);
            out.push(next);
        }
        out
    }
}

/// One [`ArFit`] per asset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArForecaster {
    assets: Vec<String>,
    horizon: usize,
    fits: Vec<ArFit>,
}

impl ArForecaster {
    pub fn fit(train: &ChangePanel, max_order: usize, horizon: usize) -> Result<ArForecaster> {
        let fits = (0..train.n_assets())
            .map(|i| ArFit::fit(&train.column(i), max_order))
            .collect::<Result<Vec<_>>>()?;
        for (name, f) in train.assets().iter().zip(&fits) {
            if f.fallback {
                log::warn!("ar: singular design for {name}; using persistence");
            }
        }
        Ok(ArForecaster {
            assets: train.assets().to_vec(),
            horizon,
            fits,
        })
    }

    pub fn fits(&self) -> &[ArFit] {
        &self.fits
    }
}

impl Forecaster for ArForecaster {
    fn name(&self) -> &str {
        "ar"
    }

    fn assets(&self) -> &[String] {
        &self.assets
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, conditioning: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_conditioning(self, conditioning)?;
        let cols: Vec<Vec<f64>> = self
            .fits
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let hist: Vec<f64> = conditioning.iter().map(|r| r[i]).collect();
                f.forecast(&hist, self.horizon)
            })
            .collect();
        Ok((0..self.horizon).map(|t| cols.iter().map(|c| c[t]).collect()).collect())
    }

    fn flagged_assets(&self) -> Vec<String> {
        self.assets
            .iter()
            .zip(&self.fits)
            .filter(|(_, f)| f.fallback)
            .map(|(a, _)| a.clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn simulate(phi: &[f64], sigma: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let burn = 200;
        let mut x = vec![0.0; phi.len()];
        for _ in 0..burn + n {
            let e: f64 = rng.sample(StandardNormal);
            let t = x.len();
            let v = phi.iter().enumerate().map(|(j, p)| p * x[t - 1 - j]).sum::<f64>() + sigma * e;
            x.push(v);
        }
        x.split_off(x.len() - n)
    }

    #[test]
    fn recovers_noise_free_ar1() {
        let mut x = vec![1.0];
        for _ in 0..199 {
            let last = *x.last().unwrap();
            x.push(0.8 * last);
        }
        let f = ArFit::fit(&x, DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(f.order, 1);
        assert!((f.coefs[0] - 0.8).abs() < 1e-3, "{:?}", f.coefs);
        assert!(!f.fallback);
    }

    #[test]
    fn selects_true_order_at_small_noise() {
        let x = simulate(&[0.5, -0.3], 1e-3, 800, 11);
        let f = ArFit::fit(&x, DEFAULT_MAX_ORDER).unwrap();
        assert_eq!(f.order, 2, "{f:?}");
        assert!((f.coefs[0] - 0.5).abs() < 0.1 && (f.coefs[1] + 0.3).abs() < 0.1);
    }

    #[test]
    fn white_noise_forecasts_near_mean() {
        let n = 600;
        let x = simulate(&[], 1.0, n, 12);
        let f = ArFit::fit(&x, DEFAULT_MAX_ORDER).unwrap();
        let fc = f.forecast(&x[n - 5..], 10);
        let bound = 3.0 / (n as f64).sqrt();
        // far-horizon forecasts revert to the process mean
        assert!(fc[9].abs() < bound, "{fc:?}");
    }

    #[test]
    fn constant_series_falls_back_and_repeats() {
        let x = vec![2.5; 50];
        let f = ArFit::fit(&x, 5).unwrap();
        assert!(f.fallback);
        assert_eq!(f.forecast(&[2.5, 2.5], 3), vec![2.5; 3]);
    }

    #[test]
    fn short_series_rejected() {
        assert!(matches!(ArFit::fit(&[1.0; 15], 10), Err(Error::TooFewRows { .. })));
    }

    #[test]
    fn missing_lags_use_training_mean() {
        let f = ArFit {
            order: 2,
            intercept: 1.0,
            coefs: vec![0.5, 0.25],
            mean: 4.0,
            aic: 0.0,
            fallback: false,
        };
        // first step: 1 + 0.5·2 + 0.25·mean
        let fc = f.forecast(&[2.0], 2);
        assert_eq!(fc[0], 1.0 + 1.0 + 1.0);
        assert_eq!(fc[1], 1.0 + 0.5 * 3.0 + 0.25 * 2.0);
    }
}

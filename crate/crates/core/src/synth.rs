//! Synthetic change panels from a vector autoregression with known couplings.

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{business_days, unique_names, ChangePanel, PricePanel};
use crate::error::{Error, Result};
use crate::imaging::REFERENCE_ARRANGEMENT;
use crate::seed;

/// Steps simulated and discarded before the first recorded row.
pub const BURN_IN: usize = 100;

pub fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 6, 29).expect("valid date")
}

/// `x_t = drift + A · x_{t−1} + ε_t`, `ε_t ~ N(0, noise_std² I)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarProcessSpec {
    pub assets: Vec<String>,
    /// `coupling[i][j]`: effect of asset `j` yesterday on asset `i` today.
    pub coupling: Vec<Vec<f64>>,
    pub noise_std: f64,
    pub length: usize,
    pub drift: Vec<f64>,
    pub seed: u64,
    /// Lag recorded on the produced panel.
    pub lag: usize,
    pub start_date: NaiveDate,
}

impl VarProcessSpec {
    pub fn validate(&self) -> Result<()> {
        let n = self.assets.len();
        if n == 0 || self.length == 0 {
            return Err(Error::invalid("VAR spec needs assets and a positive length"));
        }
        unique_names(&self.assets)?;
        if self.coupling.len() != n || self.coupling.iter().any(|r| r.len() != n) {
            return Err(Error::invalid(format!("coupling must be {n}x{n}")));
        }
        if self.drift.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                found: self.drift.len(),
            });
        }
        if !(self.noise_std > 0.0 && self.noise_std.is_finite()) {
            return Err(Error::invalid(format!("noise_std must be positive, got {}", self.noise_std)));
        }
        if let Some(v) = self.coupling.iter().flatten().chain(&self.drift).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*v));
        }
        let rho = spectral_radius(&self.coupling);
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        Ok(())
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn generate_var_panel(spec: &VarProcessSpec) -> Result<ChangePanel> {
    spec.validate()?;
    let n = spec.assets.len();
    let mut rng = seed::rng(spec.seed, "var_panel");
    let mut x = vec![0.0; n];
    let mut rows = Vec::with_capacity(spec.length);
    for step in 0..BURN_IN + spec.length {
        let next: Vec<f64> = (0..n)
            .map(|i| {
                let ar: f64 = spec.coupling[i].iter().zip(&x).map(|(a, v)| a * v).sum();
                let eps: f64 = rng.sample(StandardNormal);
                spec.drift[i] + ar + spec.noise_std * eps
            })
            .collect();
        x = next;
        if step >= BURN_IN {
            rows.push(x.clone());
        }
    }
    ChangePanel::new(
        business_days(spec.start_date, spec.length),
        spec.assets.clone(),
        rows,
        spec.lag,
    )
}

/// Per-asset fraction of rows with a strictly positive change.
pub fn up_fraction(panel: &ChangePanel) -> Vec<f64> {
    let t = panel.len().max(1) as f64;
    (0..panel.n_assets())
        .map(|i| panel.rows().iter().filter(|r| r[i] > 0.0).count() as f64 / t)
        .collect()
}

/// Cells of a `rows × cols` grid in boustrophedon order, so consecutive
/// cells are always edge-adjacent.
pub fn snake_order(rows: usize, cols: usize) -> Vec<(usize, usize)> {
    (0..rows)
        .flat_map(|r| {
            let cs: Vec<usize> = if r % 2 == 0 { (0..cols).collect() } else { (0..cols).rev().collect() };
            cs.into_iter().map(move |c| (r, c))
        })
        .collect()
}

/// Nine market tickers driven around a ring: each asset follows its
/// predecessor on a snake through the reference 3×3 arrangement with weight
/// `±coupling` (alternating signs) and has no own-lag term. Every asset's
/// next value is predictable only from its neighbour.
pub fn coupled_ring_spec(coupling: f64, noise_std: f64, length: usize, seed: u64) -> VarProcessSpec {
    let ring: Vec<String> = snake_order(3, 3)
        .into_iter()
        .map(|(r, c)| REFERENCE_ARRANGEMENT[r][c].to_string())
        .collect();
    let n = ring.len();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        a[i][(i + n - 1) % n] = sign * coupling;
    }
    VarProcessSpec {
        assets: ring,
        coupling: a,
        noise_std,
        length,
        drift: vec![0.0; n],
        seed,
        lag: 1,
        start_date: default_start_date(),
    }
}

/// Next-step sign accuracy of the conditional-mean forecast for a stationary
/// Gaussian series whose one-step predictable part has correlation `rho`
/// with the series: `1/2 + asin(rho)/π`.
pub fn oracle_sign_accuracy(rho: f64) -> f64 {
    0.5 + rho.clamp(-1.0, 1.0).asin() / std::f64::consts::PI
}

/// Daily log-return loadings on (equity, rates, commodity) factors and the
/// idiosyncratic std, for the nine reference tickers. SPY and DIA are nearly
/// the same asset, as index trackers are.
const MARKET_LOADINGS: [(&str, [f64; 3], f64); 9] = [
    ("DAL", [1.3, 0.0, -0.4], 1.2),
    ("USO", [0.4, 0.0, 1.0], 0.8),
    ("GLD", [0.0, 0.3, 0.6], 0.5),
    ("SPY", [1.0, 0.0, 0.0], 0.03),
    ("DIA", [1.0, 0.0, 0.0], 0.03),
    ("VNQ", [0.9, 0.4, 0.0], 0.4),
    ("TSLA", [1.5, 0.0, 0.0], 2.0),
    ("TLT", [-0.3, 1.0, 0.0], 0.2),
    ("AGG", [-0.1, 0.4, 0.0], 0.05),
];

/// Close prices for the nine reference tickers driven by three Gaussian
/// factors (daily std 1%, 0.5%, 1.2%) plus idiosyncratic noise, starting at
/// 100. A stand-in for a real market download.
pub fn market_factor_prices(length: usize, seed: u64) -> Result<PricePanel> {
    if length == 0 {
        return Err(Error::invalid("length must be positive"));
    }
    let factor_std = [0.01, 0.005, 0.012];
    let mut rng = seed::rng(seed, "market_factor_prices");
    let mut log_price = vec![100f64.ln(); MARKET_LOADINGS.len()];
    let mut closes = Vec::with_capacity(length);
    for _ in 0..length {
        closes.push(log_price.iter().map(|v| v.exp()).collect());
        let f: Vec<f64> = factor_std.iter().map(|s| s * rng.sample::<f64, _>(StandardNormal)).collect();
        for (lp, (_, load, idio)) in log_price.iter_mut().zip(&MARKET_LOADINGS) {
            let common: f64 = load.iter().zip(&f).map(|(l, v)| l * v).sum();
            *lp += common + 0.01 * idio * rng.sample::<f64, _>(StandardNormal);
        }
    }
    PricePanel::new(
        business_days(default_start_date(), length),
        MARKET_LOADINGS.iter().map(|(n, _, _)| n.to_string()).collect(),
        closes,
    )
}

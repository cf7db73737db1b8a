//! Forecasters compared in the benchmark.

mod ar;
mod video;

use crate::error::{Error, Result};

pub use ar::{ArFit, ArForecaster, DEFAULT_MAX_ORDER};
pub use video::{
    default_grid_layout, fit_video, vector_forecaster, video_full_forecaster, video_ind_forecaster,
    video_scatter_forecaster, video_shuffled_forecaster, IndependentVideo, VideoConfig, VideoForecaster,
};

/// Maps `k` conditioning rows `[k][asset]` to `horizon` predicted rows.
pub trait Forecaster {
    fn name(&self) -> &str;
    fn assets(&self) -> &[String];
    fn horizon(&self) -> usize;
    fn forecast(&self, conditioning: &[Vec<f64>]) -> Result<Vec<Vec<f64>>>;

    fn forecast_many(&self, conditioning: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
        conditioning.iter().map(|c| self.forecast(c)).collect()
    }

    /// Assets whose forecasts are placeholders (fallbacks or undecodable).
    fn flagged_assets(&self) -> Vec<String> {
        Vec::new()
    }
}

pub(crate) fn check_conditioning(f: &dyn Forecaster, conditioning: &[Vec<f64>]) -> Result<()> {
    if conditioning.is_empty() {
        return Err(Error::Forecast {
            method: f.name().to_string(),
            message: "empty conditioning window".into(),
        });
    }
    let n = f.assets().len();
    if let Some(r) = conditioning.iter().find(|r| r.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: r.len(),
        });
    }
    if let Some(v) = conditioning.iter().flatten().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(*v));
    }
    Ok(())
}

/// Always predicts a rise of `+1`.
#[derive(Clone, Debug)]
pub struct NaiveUp {
    assets: Vec<String>,
    horizon: usize,
}

impl NaiveUp {
    pub fn new(assets: Vec<String>, horizon: usize) -> Self {
        Self { assets, horizon }
    }
}

impl Forecaster for NaiveUp {
    fn name(&self) -> &str {
        "naive_up"
    }

    fn assets(&self) -> &[String] {
        &self.assets
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, conditioning: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_conditioning(self, conditioning)?;
        Ok(vec![vec![1.0; self.assets.len()]; self.horizon])
    }
}

/// Repeats the last observed change.
#[derive(Clone, Debug)]
pub struct Persistence {
    assets: Vec<String>,
    horizon: usize,
}

impl Persistence {
    pub fn new(assets: Vec<String>, horizon: usize) -> Self {
        Self { assets, horizon }
    }
}

impl Forecaster for Persistence {
    fn name(&self) -> &str {
        "persistence"
    }

    fn assets(&self) -> &[String] {
        &self.assets
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn forecast(&self, conditioning: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        check_conditioning(self, conditioning)?;
        let last = conditioning.last().expect("checked non-empty").clone();
        Ok(vec![last; self.horizon])
    }
}

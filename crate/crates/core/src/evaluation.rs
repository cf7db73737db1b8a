//! Exponentially weighted sign accuracy and benchmark tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::baselines::Forecaster;
use crate::data::WindowedDataset;
use crate::error::{Error, Result};

/// Decay rates reported by default: a week-long view and a next-day view.
pub const DEFAULT_LAMBDAS: [f64; 2] = [0.5, 10.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Zero counts as a rise, for truth and prediction alike.
    #[default]
    ZeroIsUp,
    /// A zero on either side never matches.
    ZeroIsMiss,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub lambda: f64,
    pub zero_policy: ZeroPolicy,
}

impl MetricConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            zero_policy: ZeroPolicy::default(),
        }
    }
}

/// `w_k = e^{−λk}` for `k = 0 .. horizon − 1`; `k = 0` is the next step.
pub fn decay_weights(lambda: f64, horizon: usize) -> Vec<f64> {
    (0..horizon).map(|k| (-lambda * k as f64).exp()).collect()
}

pub fn sign_match(delta: f64, delta_hat: f64, policy: ZeroPolicy) -> bool {
    match policy {
        ZeroPolicy::ZeroIsUp => (delta >= 0.0) == (delta_hat >= 0.0),
        ZeroPolicy::ZeroIsMiss => delta != 0.0 && delta_hat != 0.0 && (delta > 0.0) == (delta_hat > 0.0),
    }
}

/// Predictions and truths, both `[sample][step][asset]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub method: String,
    pub assets: Vec<String>,
    pub predictions: Vec<Vec<Vec<f64>>>,
    pub truths: Vec<Vec<Vec<f64>>>,
    pub flagged_assets: Vec<String>,
}

impl ForecastSet {
    pub fn validate(&self) -> Result<()> {
        if self.truths.is_empty() {
            return Err(Error::EmptySplit("forecast set"));
        }
        if self.predictions.len() != self.truths.len() {
            return Err(Error::LengthMismatch {
                expected: self.truths.len(),
                found: self.predictions.len(),
            });
        }
        let h = self.truths[0].len();
        let a = self.assets.len();
        for (p, t) in self.predictions.iter().zip(&self.truths) {
            if p.len() != h || t.len() != h {
                return Err(Error::LengthMismatch {
                    expected: h,
                    found: if p.len() != h { p.len() } else { t.len() },
                });
            }
            for (pr, tr) in p.iter().zip(t) {
                if pr.len() != a || tr.len() != a {
                    return Err(Error::LengthMismatch {
                        expected: a,
                        found: if pr.len() != a { pr.len() } else { tr.len() },
                    });
                }
            }
        }
        if let Some(v) = self.predictions.iter().flatten().flatten().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*v));
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.truths.first().map_or(0, Vec::len)
    }
}

/// Per-asset accuracies with their mean and population std.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub lambda: f64,
    pub per_asset: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// For each asset, `Σ_k w_k · match_k / Σ_k w_k` averaged over samples.
pub fn weighted_sign_accuracy(fs: &ForecastSet, cfg: &MetricConfig) -> Result<Accuracy> {
    fs.validate()?;
    if !(cfg.lambda >= 0.0) {
        return Err(Error::invalid(format!("lambda must be >= 0, got {}", cfg.lambda)));
    }
    let w = decay_weights(cfg.lambda, fs.horizon());
    let n_assets = fs.assets.len();
    let mut per_asset = vec![0.0; n_assets];
    // summed in the same order as the hits so a perfect forecast gives exactly 1
    let mut denom = 0.0;
    for (pred, truth) in fs.predictions.iter().zip(&fs.truths) {
        for (k, wk) in w.iter().enumerate() {
            denom += wk;
            for (i, acc) in per_asset.iter_mut().enumerate() {
                if sign_match(truth[k][i], pred[k][i], cfg.zero_policy) {
                    *acc += wk;
                }
            }
        }
    }
    per_asset.iter_mut().for_each(|a| *a /= denom);
    let (mean, std) = mean_std(&per_asset);
    Ok(Accuracy {
        lambda: cfg.lambda,
        per_asset,
        mean,
        std,
    })
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `forecaster` on every test window.
pub fn collect_forecasts(forecaster: &dyn Forecaster, test: &WindowedDataset) -> Result<ForecastSet> {
    if forecaster.assets() != test.assets.as_slice() {
        return Err(Error::Forecast {
            method: forecaster.name().to_string(),
            message: "asset order differs from the test set".into(),
        });
    }
    if forecaster.horizon() != test.horizon {
        return Err(Error::Forecast {
            method: forecaster.name().to_string(),
            message: format!("horizon {} but test windows have {}", forecaster.horizon(), test.horizon),
        });
    }
    let cond: Vec<Vec<Vec<f64>>> = test.samples.iter().map(|w| w.conditioning.clone()).collect();
    let predictions = forecaster.forecast_many(&cond)?;
    let fs = ForecastSet {
        method: forecaster.name().to_string(),
        assets: test.assets.clone(),
        predictions,
        truths: test.samples.iter().map(|w| w.target.clone()).collect(),
        flagged_assets: forecaster.flagged_assets(),
    };
    fs.validate().map_err(|e| Error::Forecast {
        method: forecaster.name().to_string(),
        message: e.to_string(),
    })?;
    Ok(fs)
}

/// Reference accuracies (mean, std) at λ = 0.5 and λ = 10 for the market panel.
pub fn reference_values(method: &str) -> Option<[(f64, f64); 2]> {
    Some(match method {
        "video_full" => [(0.65, 0.03), (0.76, 0.05)],
        "video_ind" => [(0.61, 0.04), (0.69, 0.08)],
        "video_shuffled" => [(0.61, 0.04), (0.69, 0.05)],
        "video_scatter" => [(0.60, 0.06), (0.66, 0.05)],
        "vector" => [(0.61, 0.05), (0.65, 0.04)],
        // reported for ARIMA; this crate fits AR(p)
        "ar" => [(0.59, 0.06), (0.65, 0.04)],
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum RowOutcome {
    Scored(Vec<Accuracy>),
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: String,
    pub outcome: RowOutcome,
    pub flagged_assets: Vec<String>,
}

/// Methods × λ accuracy table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTable {
    pub assets: Vec<String>,
    pub lambdas: Vec<f64>,
    pub zero_policy: ZeroPolicy,
    pub rows: Vec<BenchmarkRow>,
}

/// Scores every method on `test`. A method that errors gets a failed row
/// rather than being dropped.
pub fn benchmark(
    methods: &[&dyn Forecaster],
    test: &WindowedDataset,
    lambdas: &[f64],
    zero_policy: ZeroPolicy,
) -> Result<BenchmarkTable> {
    if test.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let rows = methods
        .iter()
        .map(|m| {
            let outcome = collect_forecasts(*m, test).and_then(|fs| {
                lambdas
                    .iter()
                    .map(|&lambda| weighted_sign_accuracy(&fs, &MetricConfig { lambda, zero_policy }))
                    .collect::<Result<Vec<_>>>()
            });
            let outcome = match outcome {
                Ok(acc) => RowOutcome::Scored(acc),
                Err(e) => {
                    log::error!("{}: {e}", m.name());
                    RowOutcome::Failed(e.to_string())
                }
            };
            BenchmarkRow {
                method: m.name().to_string(),
                outcome,
                flagged_assets: m.flagged_assets(),
            }
        })
        .collect();
    Ok(BenchmarkTable {
        assets: test.assets.clone(),
        lambdas: lambdas.to_vec(),
        zero_policy,
        rows,
    })
}

fn lambda_label(l: f64) -> String {
    format!("{l}")
}

impl BenchmarkTable {
    pub fn row(&self, method: &str) -> Option<&BenchmarkRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Records a method that could not be scored at all, e.g. because fitting failed.
    pub fn insert_failure(&mut self, index: usize, method: &str, message: String) {
        let row = BenchmarkRow {
            method: method.to_string(),
            outcome: RowOutcome::Failed(message),
            flagged_assets: Vec::new(),
        };
        self.rows.insert(index.min(self.rows.len()), row);
    }

    pub fn n_failed(&self) -> usize {
        self.rows.iter().filter(|r| matches!(r.outcome, RowOutcome::Failed(_))).count()
    }

    /// Accuracy of `method` at `lambda`, if it was scored.
    pub fn accuracy(&self, method: &str, lambda: f64) -> Option<&Accuracy> {
        match &self.row(method)?.outcome {
            RowOutcome::Scored(acc) => acc.iter().find(|a| a.lambda == lambda),
            RowOutcome::Failed(_) => None,
        }
    }

    /// One line per method: status, mean and std per λ, flagged assets.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,status");
        for l in &self.lambdas {
            let l = lambda_label(*l);
            let _ = write!(out, ",mean_lambda_{l},std_lambda_{l}");
        }
        out.push_str(",flagged\n");
        for r in &self.rows {
            out.push_str(&r.method);
            match &r.outcome {
                RowOutcome::Scored(acc) => {
                    out.push_str(",ok");
                    for a in acc {
                        let _ = write!(out, ",{:.6},{:.6}", a.mean, a.std);
                    }
                }
                RowOutcome::Failed(_) => {
                    out.push_str(",failed");
                    out.push_str(&",,".repeat(self.lambdas.len()));
                }
            }
            let _ = writeln!(out, ",{}", r.flagged_assets.join(";"));
        }
        out
    }

    /// `(asset, method, lambda, accuracy)` rows for per-asset bar charts.
    pub fn chart_csv(&self) -> String {
        let mut out = String::from("asset,method,lambda,accuracy\n");
        for r in &self.rows {
            if let RowOutcome::Scored(acc) = &r.outcome {
                for a in acc {
                    for (asset, v) in self.assets.iter().zip(&a.per_asset) {
                        let _ = writeln!(out, "{asset},{},{},{v:.6}", r.method, lambda_label(a.lambda));
                    }
                }
            }
        }
        out
    }

    /// Human-readable table with per-asset breakdowns and reference values.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sign accuracy, mean ± std across {} assets", self.assets.len());
        let _ = write!(out, "{:<16}", "method");
        for l in &self.lambdas {
            let _ = write!(out, "{:>18}", format!("lambda={}", lambda_label(*l)));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{:<16}", r.method);
            match &r.outcome {
                RowOutcome::Scored(acc) => {
                    for a in acc {
                        let _ = write!(out, "{:>18}", format!("{:.4} ± {:.4}", a.mean, a.std));
                    }
                }
                RowOutcome::Failed(e) => {
                    let _ = write!(out, "  FAILED: {e}");
                }
            }
            if !r.flagged_assets.is_empty() {
                let _ = write!(out, "  [flagged: {}]", r.flagged_assets.join(", "));
            }
            out.push('\n');
        }

        out.push_str("\nper-asset accuracy\n");
        for r in &self.rows {
            if let RowOutcome::Scored(acc) = &r.outcome {
                for a in acc {
                    let cells: Vec<String> = self
                        .assets
                        .iter()
                        .zip(&a.per_asset)
                        .map(|(n, v)| format!("{n}={v:.3}"))
                        .collect();
                    let _ = writeln!(out, "{} lambda={}: {}", r.method, lambda_label(a.lambda), cells.join(" "));
                }
            }
        }

        let refs: Vec<String> = self
            .rows
            .iter()
            .filter_map(|r| {
                let vals = reference_values(&r.method)?;
                let cells: Vec<String> = self
                    .lambdas
                    .iter()
                    .filter_map(|l| {
                        let i = [0.5, 10.0].iter().position(|x| x == l)?;
                        Some(format!("lambda={}: {:.2} ± {:.2}", lambda_label(*l), vals[i].0, vals[i].1))
                    })
                    .collect();
                (!cells.is_empty()).then(|| format!("{}: {}", r.method, cells.join(", ")))
            })
            .collect();
        if !refs.is_empty() {
            out.push_str("\nreference values (nine-asset market panel, full-scale training; not targets)\n");
            for line in refs {
                let _ = writeln!(out, "{line}");
            }
        }
        out
    }
}

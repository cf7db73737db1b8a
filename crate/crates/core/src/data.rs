//! Price ingestion, relative changes, date splits and sliding windows.
//!
//! Panels are row-major: one row per trading day, one column per asset.
//! Rows are treated as consecutive steps regardless of calendar gaps.

use std::collections::HashSet;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DATE_COLUMN: &str = "date";
pub const DATE_FORMAT: &str = "%Y-%m-%d";

/// Default lag for relative changes, in trading days.
pub const DEFAULT_LAG: usize = 5;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_HORIZON: usize = 10;
pub const DEFAULT_VAL_FRACTION: f64 = 0.05;

pub fn default_train_val_end() -> NaiveDate {
    NaiveDate::from_ymd_opt(2018, 12, 31).expect("valid date")
}

pub fn default_test_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date")
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "dates must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn check_matrix(rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<()> {
    if rows.len() != n_rows {
        return Err(Error::LengthMismatch {
            expected: n_rows,
            found: rows.len(),
        });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n_cols) {
        return Err(Error::LengthMismatch {
            expected: n_cols,
            found: r.len(),
        });
    }
    Ok(())
}

/// Close prices, `[time][asset]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PricePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    closes: Vec<Vec<f64>>,
}

impl PricePanel {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<String>, closes: Vec<Vec<f64>>) -> Result<Self> {
        check_dates(&dates)?;
        check_matrix(&closes, dates.len(), assets.len())?;
        Ok(Self {
            dates,
            assets,
            closes,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn closes(&self) -> &[Vec<f64>] {
        &self.closes
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Outcome of [`load_close_prices`] besides the panel itself.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
}

/// Reads a comma-separated file with a `date` column and one column per asset.
///
/// Rows with a missing or unparsable date or value in any requested column
/// are dropped as a whole so that assets stay aligned.
pub fn load_close_prices(
    path: impl AsRef<Path>,
    asset_columns: &[String],
    min_rows: usize,
) -> Result<(PricePanel, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let headers = reader.headers()?.clone();
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let date_col = position(DATE_COLUMN)?;
    let cols = asset_columns
        .iter()
        .map(|a| position(a))
        .collect::<Result<Vec<_>>>()?;

    let mut report = LoadReport::default();
    let mut rows: Vec<(NaiveDate, Vec<f64>)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        report.rows_read += 1;
        let date = record
            .get(date_col)
            .and_then(|s| NaiveDate::parse_from_str(s, DATE_FORMAT).ok());
        let values: Option<Vec<f64>> = cols
            .iter()
            .map(|&c| {
                record
                    .get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .filter(|v| v.is_finite())
            })
            .collect();
        match (date, values) {
            (Some(d), Some(v)) => rows.push((d, v)),
            _ => report.rows_dropped += 1,
        }
    }
    if report.rows_dropped > 0 {
        log::warn!(
            "{}: dropped {} of {} rows with missing or unparsable values",
            path.display(),
            report.rows_dropped,
            report.rows_read
        );
    }
    rows.sort_by_key(|(d, _)| *d);
    if rows.len() < min_rows {
        return Err(Error::TooFewRows {
            needed: min_rows,
            found: rows.len(),
        });
    }
    let (dates, closes) = rows.into_iter().unzip();
    let panel = PricePanel::new(dates, asset_columns.to_vec(), closes)?;
    Ok((panel, report))
}

/// Relative percentage changes, `[time][asset]`; `3.0` means +3 %.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePanel {
    dates: Vec<NaiveDate>,
    assets: Vec<String>,
    changes: Vec<Vec<f64>>,
    lag: usize,
}

impl ChangePanel {
    pub fn new(
        dates: Vec<NaiveDate>,
        assets: Vec<String>,
        changes: Vec<Vec<f64>>,
        lag: usize,
    ) -> Result<Self> {
        if lag == 0 {
            return Err(Error::invalid("lag must be positive"));
        }
        check_dates(&dates)?;
        check_matrix(&changes, dates.len(), assets.len())?;
        Ok(Self {
            dates,
            assets,
            changes,
            lag,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn assets(&self) -> &[String] {
        &self.assets
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.changes
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn column(&self, asset: usize) -> Vec<f64> {
        self.changes.iter().map(|r| r[asset]).collect()
    }

    /// Contiguous row range as a new panel.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ChangePanel {
        ChangePanel {
            dates: self.dates[range.clone()].to_vec(),
            assets: self.assets.clone(),
            changes: self.changes[range].to_vec(),
            lag: self.lag,
        }
    }

    /// Panel restricted to a subset of asset columns, in the given order.
    pub fn select_assets(&self, indices: &[usize]) -> ChangePanel {
        ChangePanel {
            dates: self.dates.clone(),
            assets: indices.iter().map(|&i| self.assets[i].clone()).collect(),
            changes: self
                .changes
                .iter()
                .map(|r| indices.iter().map(|&i| r[i]).collect())
                .collect(),
            lag: self.lag,
        }
    }

    /// Appends a later panel with the same assets.
    pub fn concat(&self, later: &ChangePanel) -> Result<ChangePanel> {
        if self.assets != later.assets {
            return Err(Error::invalid("cannot concatenate panels with different assets"));
        }
        let mut dates = self.dates.clone();
        dates.extend_from_slice(&later.dates);
        let mut changes = self.changes.clone();
        changes.extend_from_slice(&later.changes);
        ChangePanel::new(dates, self.assets.clone(), changes, self.lag)
    }

    /// Pearson correlation between asset columns. Constant columns correlate 0
    /// with everything except themselves.
    pub fn correlations(&self) -> Vec<Vec<f64>> {
        let n = self.n_assets();
        let t = self.len() as f64;
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = self.column(i);
                let mean = c.iter().sum::<f64>() / t;
                c.into_iter().map(|v| v - mean).collect()
            })
            .collect();
        let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else if norms[i] == 0.0 || norms[j] == 0.0 {
                            0.0
                        } else {
                            let dot: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                            dot / (norms[i] * norms[j])
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec![DATE_COLUMN.to_string()];
        header.extend(self.assets.iter().cloned());
        w.write_record(&header)?;
        for (d, row) in self.dates.iter().zip(&self.changes) {
            let mut rec = vec![d.format(DATE_FORMAT).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a panel written by [`ChangePanel::write_csv`]; every non-date
    /// column is an asset. Incomplete rows are dropped.
    pub fn read_csv(path: impl AsRef<Path>, lag: usize) -> Result<ChangePanel> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let assets: Vec<String> = reader
            .headers()?
            .iter()
            .filter(|h| *h != DATE_COLUMN)
            .map(str::to_string)
            .collect();
        drop(reader);
        let (prices, _) = load_close_prices(path, &assets, 0)?;
        ChangePanel::new(prices.dates, prices.assets, prices.closes, lag)
    }
}

/// `100 · (close[t] − close[t−lag]) / close[t−lag]` for every row `t ≥ lag`.
pub fn compute_relative_change(panel: &PricePanel, lag: usize) -> Result<ChangePanel> {
    if lag == 0 {
        return Err(Error::invalid("lag must be positive"));
    }
    if panel.len() <= lag {
        return Err(Error::TooFewRows {
            needed: lag + 1,
            found: panel.len(),
        });
    }
    for (d, row) in panel.dates.iter().zip(&panel.closes) {
        if let Some((i, &v)) = row.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::NonPositivePrice {
                date: *d,
                asset: panel.assets[i].clone(),
                value: v,
            });
        }
    }
    let changes = (lag..panel.len())
        .map(|t| {
            panel.closes[t]
                .iter()
                .zip(&panel.closes[t - lag])
                .map(|(now, before)| 100.0 * (now - before) / before)
                .collect()
        })
        .collect();
    ChangePanel::new(panel.dates[lag..].to_vec(), panel.assets.clone(), changes, lag)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_val_end: NaiveDate,
    /// `None` requests no test split.
    pub test_start: Option<NaiveDate>,
    pub val_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_val_end: default_train_val_end(),
            test_start: Some(default_test_start()),
            val_fraction: DEFAULT_VAL_FRACTION,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: ChangePanel,
    pub val: ChangePanel,
    pub test: Option<ChangePanel>,
}

/// Chronological split. Validation is the trailing `val_fraction` of the rows
/// up to `train_val_end`; rows strictly between the two dates are unused.
pub fn split_by_date(panel: &ChangePanel, spec: &SplitSpec) -> Result<Splits> {
    if !(spec.val_fraction > 0.0 && spec.val_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "val_fraction must lie in (0, 1), got {}",
            spec.val_fraction
        )));
    }
    if let Some(ts) = spec.test_start {
        if ts <= spec.train_val_end {
            return Err(Error::invalid(format!(
                "test start {ts} must follow train/val end {}",
                spec.train_val_end
            )));
        }
    }
    let n_pre = panel.dates.partition_point(|d| *d <= spec.train_val_end);
    let n_val = ((n_pre as f64) * spec.val_fraction).round().max(1.0) as usize;
    if n_pre == 0 || n_val >= n_pre {
        return Err(Error::EmptySplit(if n_pre == 0 { "train" } else { "validation" }));
    }
    let train = panel.slice(0..n_pre - n_val);
    let val = panel.slice(n_pre - n_val..n_pre);
    let test = match spec.test_start {
        None => None,
        Some(ts) => {
            let start = panel.dates.partition_point(|d| *d < ts);
            if start == panel.len() {
                return Err(Error::EmptySplit("test"));
            }
            Some(panel.slice(start..panel.len()))
        }
    };
    Ok(Splits { train, val, test })
}

/// Chronological split by row counts: the trailing `test_fraction` of rows is
/// test, then the trailing `val_fraction` of the remainder is validation.
pub fn split_by_fraction(panel: &ChangePanel, test_fraction: f64, val_fraction: f64) -> Result<Splits> {
    for (name, f) in [("test_fraction", test_fraction), ("val_fraction", val_fraction)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    let n = panel.len();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    let n_pre = n - n_test.min(n);
    let n_val = ((n_pre as f64) * val_fraction).round().max(1.0) as usize;
    if n_test == 0 {
        return Err(Error::EmptySplit("test"));
    }
    if n_val >= n_pre {
        return Err(Error::EmptySplit(if n_pre == 0 { "train" } else { "validation" }));
    }
    Ok(Splits {
        train: panel.slice(0..n_pre - n_val),
        val: panel.slice(n_pre - n_val..n_pre),
        test: Some(panel.slice(n_pre..n)),
    })
}

/// One `(conditioning, target)` pair of adjacent row blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Date of the first conditioning row.
    pub anchor_date: NaiveDate,
    /// `[k][asset]`
    pub conditioning: Vec<Vec<f64>>,
    /// `[horizon][asset]`
    pub target: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub assets: Vec<String>,
    pub k: usize,
    pub horizon: usize,
    pub samples: Vec<Window>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Slides a `k + horizon` window over `panel` with the given stride.
pub fn make_windows(
    panel: &ChangePanel,
    k: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowedDataset> {
    if k == 0 || horizon == 0 || stride == 0 {
        return Err(Error::invalid("k, horizon and stride must be positive"));
    }
    let span = k + horizon;
    if panel.len() < span {
        return Err(Error::TooFewRows {
            needed: span,
            found: panel.len(),
        });
    }
    let samples = (0..=panel.len() - span)
        .step_by(stride)
        .map(|s| Window {
            anchor_date: panel.dates[s],
            conditioning: panel.changes[s..s + k].to_vec(),
            target: panel.changes[s + k..s + span].to_vec(),
        })
        .collect();
    Ok(WindowedDataset {
        assets: panel.assets.clone(),
        k,
        horizon,
        samples,
    })
}

/// Consecutive weekdays starting at `start` (moved forward off a weekend).
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    use chrono::{Datelike, Weekday};
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

pub(crate) fn unique_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::invalid(format!("duplicate asset `{n}`")));
        }
    }
    Ok(())
}

//! Commands behind the `vidcast` binary.
//!
//! Each command reads a [`Config`], writes its outputs into one directory and
//! finishes with a `manifest.json` recording the tool version, seed and a
//! hash of the effective configuration.

pub mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use vidcast_core::baselines::{
    default_grid_layout, vector_forecaster, video_full_forecaster, video_ind_forecaster, video_scatter_forecaster,
    video_shuffled_forecaster, ArForecaster, Forecaster, NaiveUp, Persistence, VideoConfig, VideoForecaster,
};
use vidcast_core::data::{
    compute_relative_change, load_close_prices, make_windows, split_by_date, split_by_fraction, ChangePanel, LoadReport,
    SplitSpec, Splits, DATE_FORMAT,
};
use vidcast_core::evaluation::{benchmark, BenchmarkTable};
use vidcast_core::imaging::{
    render_frame, scatter_layout_from_projection, shuffle_layout, tiled_vector_layout, Layout,
};
use vidcast_core::manifest::Manifest;
use vidcast_core::model::TrainingMeta;
use vidcast_core::synth::{coupled_ring_spec, generate_var_panel, market_factor_prices};
use vidcast_core::seed;

pub use config::{Config, DataSource};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] vidcast_core::Error),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage errors, 2 for everything that fails at run time.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

/// Relative paths of every file under `dir`, sorted, excluding the manifest.
fn list_outputs(dir: &Path) -> CliResult<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else if let Ok(rel) = path.strip_prefix(root) {
                out.push(rel.to_string_lossy().replace('\\', "/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out).map_err(|e| io_err(dir, e))?;
    out.retain(|p| p != vidcast_core::manifest::MANIFEST_FILE);
    out.sort();
    Ok(out)
}

fn finish(out: &Path, command: &str, cfg: &Config, seed: u64, methods: Vec<String>) -> CliResult<()> {
    let mut m = Manifest::new(command, seed, &cfg.to_toml());
    m.methods = methods;
    m.outputs = list_outputs(out)?;
    m.write(out)?;
    Ok(())
}

/// Change panel named by `[data]`, plus the load report for file sources.
pub fn load_changes(cfg: &Config, seed: u64) -> CliResult<(ChangePanel, Option<LoadReport>)> {
    let d = &cfg.data;
    let data_seed = seed::derive(seed, "data");
    Ok(match d.source {
        DataSource::Csv => {
            let path = d.path.as_ref().ok_or_else(|| CliError::Usage("data.path is required".into()))?;
            let (prices, report) = load_close_prices(path, &d.assets, d.min_rows)?;
            log::info!("loaded {} rows ({} dropped) from {}", prices.len(), report.rows_dropped, path.display());
            (compute_relative_change(&prices, d.lag)?, Some(report))
        }
        DataSource::SyntheticMarket => {
            let prices = market_factor_prices(d.length + d.lag, data_seed)?;
            (compute_relative_change(&prices, d.lag)?, None)
        }
        DataSource::SyntheticRing => {
            let spec = coupled_ring_spec(d.coupling, d.noise_std, d.length, data_seed);
            (generate_var_panel(&spec)?, None)
        }
    })
}

pub fn make_splits(cfg: &Config, panel: &ChangePanel) -> CliResult<Splits> {
    let d = &cfg.data;
    Ok(match d.test_fraction {
        Some(f) => split_by_fraction(panel, f, d.val_fraction)?,
        None => split_by_date(
            panel,
            &SplitSpec {
                train_val_end: d.train_val_end,
                test_start: Some(d.test_start),
                val_fraction: d.val_fraction,
            },
        )?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitSummary {
    pub rows: usize,
    pub first_date: Option<String>,
    pub last_date: Option<String>,
}

impl SplitSummary {
    fn of(p: &ChangePanel) -> Self {
        let fmt = |d: &chrono::NaiveDate| d.format(DATE_FORMAT).to_string();
        Self {
            rows: p.len(),
            first_date: p.dates().first().map(fmt),
            last_date: p.dates().last().map(fmt),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct IngestSummary {
    pub assets: Vec<String>,
    pub lag: usize,
    pub rows_read: Option<usize>,
    pub rows_dropped: Option<usize>,
    pub change_rows: usize,
    pub splits: BTreeMap<String, SplitSummary>,
}

/// Loads, transforms and splits the data; writes `train.csv`, `val.csv`,
/// `test.csv` and `summary.json`.
pub fn cmd_ingest(cfg: &Config, seed: u64, out: &Path) -> CliResult<IngestSummary> {
    let (panel, report) = load_changes(cfg, seed)?;
    let splits = make_splits(cfg, &panel)?;
    create_dir(out)?;
    let mut parts = vec![("train", &splits.train), ("val", &splits.val)];
    if let Some(t) = &splits.test {
        parts.push(("test", t));
    }
    let mut summary = IngestSummary {
        assets: panel.assets().to_vec(),
        lag: panel.lag(),
        rows_read: report.as_ref().map(|r| r.rows_read),
        rows_dropped: report.as_ref().map(|r| r.rows_dropped),
        change_rows: panel.len(),
        splits: BTreeMap::new(),
    };
    for (name, p) in parts {
        p.write_csv(out.join(format!("{name}.csv")))?;
        summary.splits.insert(name.to_string(), SplitSummary::of(p));
    }
    write_json(&out.join("summary.json"), &summary)?;
    finish(out, "ingest", cfg, seed, Vec::new())?;
    Ok(summary)
}

/// Layout for a render variant, fitted on `panel` where fitting is needed.
pub fn variant_layout(cfg: &Config, variant: &str, panel: &ChangePanel, seed: u64) -> CliResult<Layout> {
    let size = cfg.layout.image_size;
    let assets = panel.assets();
    Ok(match variant {
        "grid" => default_grid_layout(assets, size)?,
        "single" => {
            if assets.len() != 1 {
                return Err(CliError::Usage("the single layout needs exactly one asset".into()));
            }
            vidcast_core::imaging::single_tile_layout(&assets[0], size)?
        }
        "shuffled" => {
            let grid = default_grid_layout(assets, size)?;
            shuffle_layout(&grid, seed, &panel.correlations(), cfg.layout.shuffle_candidates)?
        }
        "scatter" => scatter_layout_from_projection(panel, size)?,
        "vector" => tiled_vector_layout(assets, size)?,
        other => return Err(CliError::Usage(format!("unknown layout variant `{other}`"))),
    })
}

/// Writes one grayscale PNG per row of the change panel for each configured
/// layout variant, as `<variant>/<date>_<variant>.png`. Layouts that need
/// fitting are fitted on the whole panel. Returns the number of PNGs.
pub fn cmd_render(cfg: &Config, seed: u64, out: &Path) -> CliResult<usize> {
    let (panel, _) = load_changes(cfg, seed)?;
    create_dir(out)?;
    let mut written = 0;
    for variant in &cfg.layout.variants {
        let layout = variant_layout(cfg, variant, &panel, seed::derive(seed, "shuffled"))?;
        let dir = out.join(variant);
        create_dir(&dir)?;
        layout.write_json(dir.join("layout.json"))?;
        for (date, row) in panel.dates().iter().zip(panel.rows()) {
            let frame = render_frame(row, &layout)?;
            frame.write_png(dir.join(format!("{}_{variant}.png", date.format(DATE_FORMAT))))?;
            written += 1;
        }
        log::info!("{variant}: {} frames", panel.len());
    }
    finish(out, "render", cfg, seed, cfg.layout.variants.clone())?;
    Ok(written)
}

pub fn video_config(cfg: &Config) -> VideoConfig {
    VideoConfig {
        model: cfg.model_config(),
        train: cfg.train.to_train_config(),
        window_stride: cfg.data.window_stride,
        predict_mode: cfg.benchmark.predict_mode,
        n_samples: cfg.benchmark.n_samples,
    }
}

/// Fits `method` on the training split. Each method draws from its own seed
/// stream, so the set of configured methods does not change any one of them.
pub fn fit_method(cfg: &Config, method: &str, splits: &Splits, seed: u64) -> CliResult<Box<dyn Forecaster>> {
    let vcfg = video_config(cfg);
    let s = seed::derive(seed, method);
    let train = &splits.train;
    let val = Some(&splits.val);
    let horizon = cfg.model.horizon;
    Ok(match method {
        "video_full" => {
            let layout = default_grid_layout(train.assets(), cfg.layout.image_size)?;
            Box::new(video_full_forecaster(train, val, layout, &vcfg, s)?)
        }
        "video_ind" => Box::new(video_ind_forecaster(train, val, &vcfg, s)?),
        "video_shuffled" => Box::new(video_shuffled_forecaster(
            train,
            val,
            &vcfg,
            cfg.layout.shuffle_candidates,
            s,
        )?),
        "video_scatter" => Box::new(video_scatter_forecaster(train, val, &vcfg, s)?),
        "vector" => Box::new(vector_forecaster(train, val, &vcfg, s)?),
        "ar" => Box::new(ArForecaster::fit(train, cfg.benchmark.ar_max_order, horizon)?),
        "persistence" => Box::new(Persistence::new(train.assets().to_vec(), horizon)),
        "naive_up" => Box::new(NaiveUp::new(train.assets().to_vec(), horizon)),
        other => return Err(CliError::Usage(format!("unknown method `{other}`"))),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub final_train: Option<f64>,
    pub final_val: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn loss_rows(label: &str, meta: &TrainingMeta, out: &mut String) {
    for e in &meta.history {
        let val = e.val.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{label},{},{},{val}\n", e.epoch, e.train));
    }
}

fn save_video(f: &VideoForecaster, dir: &Path, label: &str, curve: &mut String) -> CliResult<TrainSummary> {
    f.save(dir)?;
    let meta = &f.model().meta;
    loss_rows(label, meta, curve);
    let last = meta.history.last();
    Ok(TrainSummary {
        final_train: last.map(|e| e.train),
        final_val: last.and_then(|e| e.val),
        best_epoch: meta.best_epoch,
    })
}

/// Trains `[train].method` and writes its checkpoint(s) and `loss_curve.csv`.
/// For `video_ind` the summary reports the per-asset mean of final losses.
pub fn cmd_train(cfg: &Config, seed: u64, out: &Path) -> CliResult<TrainSummary> {
    let (panel, _) = load_changes(cfg, seed)?;
    let splits = make_splits(cfg, &panel)?;
    let method = cfg.train.method.as_str();
    let vcfg = video_config(cfg);
    let s = seed::derive(seed, method);
    let (train, val) = (&splits.train, Some(&splits.val));
    create_dir(out)?;
    let mut curve = String::from("model,epoch,train,val\n");
    let summary = match method {
        "video_ind" => {
            let ind = video_ind_forecaster(train, val, &vcfg, s)?;
            let mut sums = Vec::new();
            for (asset, m) in ind.assets().iter().zip(ind.models()) {
                sums.push(save_video(m, &out.join(asset), asset, &mut curve)?);
            }
            let mean = |xs: Vec<Option<f64>>| -> Option<f64> {
                let xs: Option<Vec<f64>> = xs.into_iter().collect();
                xs.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
            };
            TrainSummary {
                final_train: mean(sums.iter().map(|s| s.final_train).collect()),
                final_val: mean(sums.iter().map(|s| s.final_val).collect()),
                best_epoch: None,
            }
        }
        "video_full" | "video_shuffled" | "video_scatter" | "vector" => {
            let f = match method {
                "video_full" => {
                    video_full_forecaster(train, val, default_grid_layout(train.assets(), cfg.layout.image_size)?, &vcfg, s)?
                }
                "video_shuffled" => video_shuffled_forecaster(train, val, &vcfg, cfg.layout.shuffle_candidates, s)?,
                "video_scatter" => video_scatter_forecaster(train, val, &vcfg, s)?,
                _ => vector_forecaster(train, val, &vcfg, s)?,
            };
            save_video(&f, out, method, &mut curve)?
        }
        "ar" => {
            let ar = ArForecaster::fit(train, cfg.benchmark.ar_max_order, cfg.model.horizon)?;
            write_json(&out.join("ar.json"), &ar)?;
            TrainSummary {
                final_train: None,
                final_val: None,
                best_epoch: None,
            }
        }
        other => return Err(CliError::Usage(format!("`{other}` has nothing to train"))),
    };
    if method != "ar" {
        write_text(&out.join("loss_curve.csv"), &curve)?;
    }
    finish(out, "train", cfg, seed, vec![method.to_string()])?;
    Ok(summary)
}

/// Fits every configured method, scores it on the test windows and writes
/// `results.csv`, `report.txt` and `chart.csv`. Methods that fail to fit or
/// forecast get a failed row; the table is still written.
pub fn cmd_benchmark(cfg: &Config, seed: u64, out: &Path) -> CliResult<BenchmarkTable> {
    let (panel, _) = load_changes(cfg, seed)?;
    let splits = make_splits(cfg, &panel)?;
    let test_panel = splits.test.as_ref().ok_or_else(|| CliError::Usage("benchmark needs a test split".into()))?;
    let test = make_windows(test_panel, cfg.model.k, cfg.model.horizon, 1)?;
    log::info!(
        "{} train rows, {} validation rows, {} test windows",
        splits.train.len(),
        splits.val.len(),
        test.len()
    );

    let mut fitted: Vec<Box<dyn Forecaster>> = Vec::new();
    let mut failures: Vec<(usize, String, String)> = Vec::new();
    for (i, m) in cfg.benchmark.methods.iter().enumerate() {
        log::info!("fitting {m}");
        match fit_method(cfg, m, &splits, seed) {
            Ok(f) => fitted.push(f),
            Err(e) => {
                log::error!("{m}: {e}");
                failures.push((i, m.clone(), e.to_string()));
            }
        }
    }
    let refs: Vec<&dyn Forecaster> = fitted.iter().map(|f| f.as_ref()).collect();
    let mut table = benchmark(&refs, &test, &cfg.benchmark.lambdas, cfg.benchmark.zero_policy)?;
    for (i, m, e) in failures {
        table.insert_failure(i, &m, e);
    }

    create_dir(out)?;
    write_text(&out.join("results.csv"), &table.to_csv())?;
    write_text(&out.join("report.txt"), &table.to_report())?;
    write_text(&out.join("chart.csv"), &table.chart_csv())?;
    finish(out, "benchmark", cfg, seed, cfg.benchmark.methods.clone())?;
    Ok(table)
}

/// Output directory: `--out`, else `$VIDCAST_OUT/<command>`, else
/// `vidcast-out/<command>`.
pub fn resolve_out(out: Option<PathBuf>, command: &str) -> PathBuf {
    out.unwrap_or_else(|| {
        let root = std::env::var_os("VIDCAST_OUT").map_or_else(|| PathBuf::from("vidcast-out"), PathBuf::from);
        root.join(command)
    })
}

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_conditioning, Forecaster};
use crate::data::{make_windows, ChangePanel};
use crate::error::{Error, Result};
use crate::imaging::{
    build_grid_layout, decode_frame, default_arrangement, render_sequence, scatter_layout_from_projection,
    shuffle_layout, single_tile_layout, tiled_vector_layout, FrameSequence, Layout,
};
use crate::model::{train, ModelConfig, PredictMode, TrainConfig, TrainedModel};
use crate::seed;

/// Everything needed to fit one video forecaster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Step between consecutive training windows.
    pub window_stride: usize,
    pub predict_mode: PredictMode,
    /// Rollouts averaged in sample mode.
    pub n_samples: usize,
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            window_stride: 1,
            predict_mode: PredictMode::Mean,
            n_samples: 16,
        }
    }
}

/// A trained video model plus the layout that turns changes into frames.
#[derive(Clone, Debug)]
pub struct VideoForecaster {
    name: String,
    assets: Vec<String>,
    layout: Layout,
    model: TrainedModel,
    predict_mode: PredictMode,
    n_samples: usize,
    seed: u64,
}

fn sequences(panel: &ChangePanel, layout: &Layout, k: usize, horizon: usize, stride: usize) -> Result<Vec<FrameSequence>> {
    let windows = make_windows(panel, k, horizon, stride)?;
    windows
        .samples
        .iter()
        .map(|w| {
            let rows: Vec<Vec<f64>> = w.conditioning.iter().chain(&w.target).cloned().collect();
            render_sequence(&rows, layout, Some(w.anchor_date))
        })
        .collect()
}

/// Trains a video model on frames rendered from `train` under `layout`.
/// `val` rows (when long enough for one window) select the kept epoch.
pub fn fit_video(
    name: &str,
    train_panel: &ChangePanel,
    val_panel: Option<&ChangePanel>,
    layout: Layout,
    cfg: &VideoConfig,
    seed: u64,
) -> Result<VideoForecaster> {
    if layout.assets() != train_panel.assets() {
        return Err(Error::invalid(format!(
            "{name}: layout assets {:?} differ from panel assets {:?}",
            layout.assets(),
            train_panel.assets()
        )));
    }
    if cfg.window_stride == 0 {
        return Err(Error::invalid("window_stride must be positive"));
    }
    let mcfg = ModelConfig {
        image_size: layout.image_size(),
        ..cfg.model.clone()
    };
    let (k, h) = (mcfg.k, mcfg.horizon);
    let train_seqs = sequences(train_panel, &layout, k, h, cfg.window_stride)?;
    let val_seqs = match val_panel {
        Some(v) if v.len() >= k + h => sequences(v, &layout, k, h, 1)?,
        _ => Vec::new(),
    };
    log::info!(
        "{name}: training on {} sequences ({} validation), {:?} frames",
        train_seqs.len(),
        val_seqs.len(),
        mcfg.image_size
    );
    let model = train(&train_seqs, &val_seqs, mcfg, &cfg.train, seed::derive(seed, "train"))?;
    Ok(VideoForecaster {
        name: name.to_string(),
        assets: train_panel.assets().to_vec(),
        layout,
        model,
        predict_mode: cfg.predict_mode,
        n_samples: cfg.n_samples,
        seed: seed::derive(seed, "predict"),
    })
}

/// Grid layout from the default arrangement of `assets`.
pub fn default_grid_layout(assets: &[String], image_size: (usize, usize)) -> Result<Layout> {
    let (shape, cells) = default_arrangement(assets);
    build_grid_layout(assets, &cells, shape, image_size)
}

/// Joint model over the curated grid.
pub fn video_full_forecaster(
    train: &ChangePanel,
    val: Option<&ChangePanel>,
    layout: Layout,
    cfg: &VideoConfig,
    seed: u64,
) -> Result<VideoForecaster> {
    fit_video("video_full", train, val, layout, cfg, seed)
}

/// Joint model over a grid rearranged to separate correlated assets, chosen
/// from `candidates` seeded permutations.
pub fn video_shuffled_forecaster(
    train: &ChangePanel,
    val: Option<&ChangePanel>,
    cfg: &VideoConfig,
    candidates: usize,
    seed: u64,
) -> Result<VideoForecaster> {
    let grid = default_grid_layout(train.assets(), cfg.model.image_size)?;
    let layout = shuffle_layout(&grid, seed, &train.correlations(), candidates)?;
    fit_video("video_shuffled", train, val, layout, cfg, seed)
}

/// Joint model over single pixels placed by a projection of the training series.
pub fn video_scatter_forecaster(
    train: &ChangePanel,
    val: Option<&ChangePanel>,
    cfg: &VideoConfig,
    seed: u64,
) -> Result<VideoForecaster> {
    let layout = scatter_layout_from_projection(train, cfg.model.image_size)?;
    fit_video("video_scatter", train, val, layout, cfg, seed)
}

/// Joint model over the change vector repeated across the image.
pub fn vector_forecaster(
    train: &ChangePanel,
    val: Option<&ChangePanel>,
    cfg: &VideoConfig,
    seed: u64,
) -> Result<VideoForecaster> {
    let layout = tiled_vector_layout(train.assets(), cfg.model.image_size)?;
    fit_video("vector", train, val, layout, cfg, seed)
}

impl VideoForecaster {
    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn model(&self) -> &TrainedModel {
        &self.model
    }

    /// Writes `layout.json` and `model.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.layout.write_json(dir.join("layout.json"))?;
        self.model.save(dir.join("model.json"))
    }
}

impl Forecaster for VideoForecaster {
    fn name(&self) -> &str {
        &self.name
    }

    fn assets(&self) -> &[String] {
        &self.assets
    }

    fn horizon(&self) -> usize {
        self.model.model.config().horizon
    }

    fn forecast(&self, conditioning: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forecast_many(std::slice::from_ref(&conditioning.to_vec()))?.remove(0))
    }

    fn forecast_many(&self, conditioning: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
        let k = self.model.model.config().k;
        let seqs = conditioning
            .iter()
            .map(|c| {
                check_conditioning(self, c)?;
                if c.len() != k {
                    return Err(Error::LengthMismatch {
                        expected: k,
                        found: c.len(),
                    });
                }
                render_sequence(c, &self.layout, None)
            })
            .collect::<Result<Vec<_>>>()?;
        let preds = self
            .model
            .model
            .predict_batch(&seqs, self.horizon(), self.predict_mode, self.n_samples, self.seed)?;
        preds
            .iter()
            .map(|p| {
                p.frames()
                    .iter()
                    .map(|f| Ok(decode_frame(f, &self.layout)?.changes))
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    }

    fn flagged_assets(&self) -> Vec<String> {
        self.layout.overwritten().to_vec()
    }
}

/// One single-tile model per asset; forecasts are concatenated.
#[derive(Clone, Debug)]
pub struct IndependentVideo {
    assets: Vec<String>,
    models: Vec<VideoForecaster>,
}

/// Fits each asset on its own. Seeds derive from the asset name, so an
/// asset's model does not depend on which other assets are present.
pub fn video_ind_forecaster(
    train: &ChangePanel,
    val: Option<&ChangePanel>,
    cfg: &VideoConfig,
    seed: u64,
) -> Result<IndependentVideo> {
    let models = train
        .assets()
        .iter()
        .enumerate()
        .map(|(i, asset)| {
            let sub_train = train.select_assets(&[i]);
            let sub_val = val.map(|v| v.select_assets(&[i]));
            let layout = single_tile_layout(asset, cfg.model.image_size)?;
            let s = seed::derive(seed, &format!("video_ind/{asset}"));
            fit_video(&format!("video_ind/{asset}"), &sub_train, sub_val.as_ref(), layout, cfg, s)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IndependentVideo {
        assets: train.assets().to_vec(),
        models,
    })
}

impl IndependentVideo {
    pub fn models(&self) -> &[VideoForecaster] {
        &self.models
    }
}

impl Forecaster for IndependentVideo {
    fn name(&self) -> &str {
        "video_ind"
    }

    fn assets(&self) -> &[String] {
        &self.assets
    }

    fn horizon(&self) -> usize {
        self.models.first().map_or(0, |m| m.horizon())
    }

    fn forecast(&self, conditioning: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forecast_many(std::slice::from_ref(&conditioning.to_vec()))?.remove(0))
    }

    fn forecast_many(&self, conditioning: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<Vec<f64>>>> {
        for c in conditioning {
            check_conditioning(self, c)?;
        }
        let per_asset = self
            .models
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let cols: Vec<Vec<Vec<f64>>> = conditioning
                    .iter()
                    .map(|c| c.iter().map(|r| vec![r[i]]).collect())
                    .collect();
                m.forecast_many(&cols)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((0..conditioning.len())
            .map(|s| {
                (0..self.horizon())
                    .map(|t| per_asset.iter().map(|a| a[s][t][0]).collect())
                    .collect()
            })
            .collect())
    }
}

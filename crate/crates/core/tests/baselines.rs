mod common;

use common::tiny_config;
use vidcast_core::baselines::*;
use vidcast_core::data::{business_days, make_windows, ChangePanel};
use vidcast_core::imaging::LayoutKind;
use vidcast_core::model::TrainConfig;
use vidcast_core::synth::{coupled_ring_spec, generate_var_panel};

fn cfg(epochs: usize) -> VideoConfig {
    VideoConfig {
        model: tiny_config(),
        train: TrainConfig {
            epochs,
            batch_size: 8,
            ..TrainConfig::default()
        },
        ..VideoConfig::default()
    }
}

fn ring(len: usize, seed: u64) -> ChangePanel {
    generate_var_panel(&coupled_ring_spec(0.6, 1.0, len, seed)).unwrap()
}

fn panel(cols: Vec<Vec<f64>>, names: &[&str]) -> ChangePanel {
    let n = cols[0].len();
    let rows = (0..n).map(|t| cols.iter().map(|c| c[t]).collect()).collect();
    ChangePanel::new(
        business_days(chrono::NaiveDate::from_ymd_opt(2015, 1, 5).unwrap(), n),
        names.iter().map(|s| s.to_string()).collect(),
        rows,
        1,
    )
    .unwrap()
}

fn conditioning(p: &ChangePanel, k: usize) -> Vec<Vec<Vec<f64>>> {
    let w = make_windows(p, k, 2, 7).unwrap();
    w.samples.into_iter().map(|s| s.conditioning).collect()
}

#[test]
fn video_full_forecast_shape_and_determinism() {
    let p = ring(80, 1);
    let c = cfg(2);
    let layout = default_grid_layout(p.assets(), c.model.image_size).unwrap();
    let a = video_full_forecaster(&p, None, layout.clone(), &c, 4).unwrap();
    let b = video_full_forecaster(&p, None, layout, &c, 4).unwrap();
    let cond = conditioning(&p, c.model.k);
    let fa = a.forecast_many(&cond).unwrap();
    assert_eq!(fa, b.forecast_many(&cond).unwrap());
    assert_eq!((fa[0].len(), fa[0][0].len()), (2, 9));
    assert!(fa.iter().flatten().flatten().all(|v| v.is_finite()));
    assert_eq!(a.forecast(&cond[0]).unwrap(), fa[0]);
    assert!(a.forecast(&cond[0][..2]).is_err());
}

#[test]
fn default_size_forecast_shape() {
    // 64×64 frames, k = 5, H = 10, nine assets; no training needed for shape.
    let p = ring(40, 2);
    let c = VideoConfig {
        train: TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        model: vidcast_core::model::ModelConfig {
            d_y: 4,
            d_z: 4,
            base_channels: 2,
            enc_dim: 8,
            hidden_dim: 8,
            content_dim: 4,
            ..Default::default()
        },
        ..VideoConfig::default()
    };
    let layout = default_grid_layout(p.assets(), (64, 64)).unwrap();
    let f = video_full_forecaster(&p, None, layout, &c, 0).unwrap();
    let out = f.forecast(&p.rows()[..5]).unwrap();
    assert_eq!((out.len(), out[0].len()), (10, 9));
}

#[test]
fn constant_data_gives_near_constant_forecasts() {
    let n = 60;
    let p = panel(vec![vec![0.8; n], vec![-0.5; n]], &["A", "B"]);
    let f = video_full_forecaster(
        &p,
        None,
        default_grid_layout(p.assets(), (8, 8)).unwrap(),
        &VideoConfig {
            model: vidcast_core::model::ModelConfig {
                obs_std: 0.05,
                ..tiny_config()
            },
            ..cfg(40)
        },
        3,
    )
    .unwrap();
    let out = f.forecast(&p.rows()[..3]).unwrap();
    for row in &out {
        assert!((row[0] - 0.8).abs() < 0.25 && (row[1] + 0.5).abs() < 0.25, "{out:?}");
    }
}

#[test]
fn independent_models_ignore_other_assets() {
    let p = ring(60, 3);
    let c = cfg(1);
    let all = video_ind_forecaster(&p, None, &c, 9).unwrap();
    assert_eq!(all.models().len(), 9);
    assert!(all.models().iter().all(|m| m.layout().kind() == LayoutKind::SingleTile));
    let keep: Vec<usize> = (0..9).filter(|&i| i != 4).collect();
    let fewer = video_ind_forecaster(&p.select_assets(&keep), None, &c, 9).unwrap();

    let cond = conditioning(&p, c.model.k);
    let cond_fewer: Vec<Vec<Vec<f64>>> = cond
        .iter()
        .map(|w| w.iter().map(|r| keep.iter().map(|&i| r[i]).collect()).collect())
        .collect();
    let fa = all.forecast_many(&cond).unwrap();
    let fb = fewer.forecast_many(&cond_fewer).unwrap();
    for (sa, sb) in fa.iter().zip(&fb) {
        for (ra, rb) in sa.iter().zip(sb) {
            let kept: Vec<f64> = keep.iter().map(|&i| ra[i]).collect();
            assert_eq!(&kept, rb);
        }
    }
}

#[test]
fn vector_and_full_share_architecture() {
    let p = ring(50, 4);
    let c = cfg(0);
    let full = video_full_forecaster(&p, None, default_grid_layout(p.assets(), (8, 8)).unwrap(), &c, 1).unwrap();
    let vec = vector_forecaster(&p, None, &c, 1).unwrap();
    assert_eq!(full.model().model.config(), vec.model().model.config());
    assert_eq!(
        full.model().model.params().num_scalars(),
        vec.model().model.params().num_scalars()
    );
    assert_eq!(vec.layout().kind(), LayoutKind::TiledVector);
}

#[test]
fn shuffled_layout_differs_and_is_seeded() {
    let p = ring(60, 5);
    let c = cfg(0);
    let a = video_shuffled_forecaster(&p, None, &c, 64, 2).unwrap();
    let b = video_shuffled_forecaster(&p, None, &c, 64, 2).unwrap();
    let grid = default_grid_layout(p.assets(), (8, 8)).unwrap();
    assert_eq!(a.layout(), b.layout());
    assert_ne!(a.layout().cells(), grid.cells());
}

#[test]
fn scatter_overwritten_asset_forecasts_zero_and_is_flagged() {
    let n = 60;
    let x: Vec<f64> = (0..n).map(|t| (t as f64 * 0.37).sin()).collect();
    let y: Vec<f64> = (0..n).map(|t| (t as f64 * 1.1).cos()).collect();
    let z: Vec<f64> = (0..n).map(|t| (t as f64 * 0.2).sin() - 0.3).collect();
    // B duplicates A, so the two land on one pixel and B wins
    let p = panel(vec![x.clone(), x, y, z], &["A", "B", "C", "D"]);
    let f = video_scatter_forecaster(&p, None, &cfg(1), 0).unwrap();
    assert_eq!(f.flagged_assets(), vec!["A".to_string()]);
    let out = f.forecast(&p.rows()[..3]).unwrap();
    assert!(out.iter().all(|r| r[0] == 0.0));

    let two = panel(vec![(0..n).map(|t| t as f64 * 0.01).collect(), (0..n).map(|t| -(t as f64) * 0.02 + (t % 3) as f64).collect()], &["P", "Q"]);
    let g = video_scatter_forecaster(&two, None, &cfg(1), 0).unwrap();
    assert!(g.flagged_assets().is_empty());
}

#[test]
fn save_writes_layout_and_checkpoint() {
    let p = ring(50, 6);
    let c = cfg(1);
    let f = vector_forecaster(&p, None, &c, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    f.save(dir.path().join("vec")).unwrap();
    let layout = vidcast_core::imaging::Layout::read_json(dir.path().join("vec").join("layout.json")).unwrap();
    assert_eq!(&layout, f.layout());
    let m = vidcast_core::model::TrainedModel::load(dir.path().join("vec").join("model.json")).unwrap();
    assert_eq!(m.model.params(), f.model().model.params());
}

//! Where each asset lives on the image plane.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{unique_names, ChangePanel};
use crate::error::{Error, Result};
use crate::seed;

pub const DEFAULT_IMAGE_SIZE: (usize, usize) = (64, 64);
pub const DEFAULT_SHUFFLE_CANDIDATES: usize = 4096;

/// Domain-informed 3×3 arrangement for the nine-asset market panel:
/// the two equity indices side by side, the two bond funds side by side,
/// and the airline next to the oil fund.
pub const REFERENCE_ARRANGEMENT: [[&str; 3]; 3] = [
    ["DAL", "USO", "GLD"],
    ["SPY", "DIA", "VNQ"],
    ["TSLA", "TLT", "AGG"],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    GridTiles,
    SingleTile,
    ScatterPixels,
    TiledVector,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Region {
    Tile { row: usize, col: usize },
    Pixel { row: usize, col: usize },
    /// Every raster index `r` with `r mod n_assets == phase`.
    Raster { phase: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub asset: String,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    kind: LayoutKind,
    grid_shape: Option<(usize, usize)>,
    image_size: (usize, usize),
    cells: Vec<Placement>,
    /// Scatter assets whose pixel was taken by a later asset.
    overwritten: Vec<String>,
}

/// Splits `size` pixels into `n` contiguous bands; the first `size mod n`
/// bands are one pixel wider (64 over 3 gives 22/21/21).
pub fn bands(size: usize, n: usize) -> Vec<std::ops::Range<usize>> {
    let base = size / n;
    let extra = size % n;
    let mut start = 0;
    (0..n)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

impl Layout {
    pub fn kind(&self) -> LayoutKind {
        self.kind
    }

    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.grid_shape
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.image_size
    }

    pub fn cells(&self) -> &[Placement] {
        &self.cells
    }

    pub fn n_assets(&self) -> usize {
        self.cells.len()
    }

    pub fn assets(&self) -> Vec<String> {
        self.cells.iter().map(|c| c.asset.clone()).collect()
    }

    pub fn overwritten(&self) -> &[String] {
        &self.overwritten
    }

    pub fn is_overwritten(&self, asset: usize) -> bool {
        self.overwritten.contains(&self.cells[asset].asset)
    }

    pub fn region(&self, asset: usize) -> Region {
        self.cells[asset].region
    }

    /// Raster indices of the pixels that encode `asset`.
    pub fn pixel_indices(&self, asset: usize) -> Vec<usize> {
        let (h, w) = self.image_size;
        match self.cells[asset].region {
            Region::Tile { row, col } => {
                let (gr, gc) = self.grid_shape.unwrap_or((1, 1));
                let rows = bands(h, gr)[row].clone();
                let cols = bands(w, gc)[col].clone();
                rows.flat_map(|r| cols.clone().map(move |c| r * w + c)).collect()
            }
            Region::Pixel { row, col } => {
                if self.is_overwritten(asset) {
                    Vec::new()
                } else {
                    vec![row * w + col]
                }
            }
            Region::Raster { phase } => (phase..h * w).step_by(self.cells.len()).collect(),
        }
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Layout> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let layout: Layout = serde_json::from_str(&text)?;
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || self.cells.is_empty() {
            return Err(Error::invalid("layout needs a non-empty image and at least one asset"));
        }
        unique_names(&self.assets())?;
        let mut taken = HashMap::new();
        for c in &self.cells {
            match c.region {
                Region::Tile { row, col } => {
                    let (gr, gc) = self.grid_shape.ok_or_else(|| Error::invalid("tile layout without grid shape"))?;
                    if row >= gr || col >= gc {
                        return Err(Error::invalid(format!("tile ({row}, {col}) outside {gr}x{gc} grid")));
                    }
                    if taken.insert((row, col), ()).is_some() {
                        return Err(Error::DuplicateCell { row, col });
                    }
                }
                Region::Pixel { row, col } if row >= h || col >= w => {
                    return Err(Error::invalid(format!("pixel ({row}, {col}) outside image")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Grid of equal tiles, one asset per tile. A single asset on a 1×1 grid
/// yields a [`LayoutKind::SingleTile`] layout.
pub fn build_grid_layout(
    assets: &[String],
    arrangement: &[(usize, usize)],
    grid_shape: (usize, usize),
    image_size: (usize, usize),
) -> Result<Layout> {
    if assets.len() != arrangement.len() {
        return Err(Error::LengthMismatch {
            expected: assets.len(),
            found: arrangement.len(),
        });
    }
    let (gr, gc) = grid_shape;
    if gr == 0 || gc == 0 || gr > image_size.0 || gc > image_size.1 {
        return Err(Error::invalid(format!(
            "grid {gr}x{gc} does not fit a {}x{} image",
            image_size.0, image_size.1
        )));
    }
    let kind = if assets.len() == 1 && grid_shape == (1, 1) {
        LayoutKind::SingleTile
    } else {
        LayoutKind::GridTiles
    };
    let layout = Layout {
        kind,
        grid_shape: Some(grid_shape),
        image_size,
        cells: assets
            .iter()
            .zip(arrangement)
            .map(|(a, &(row, col))| Placement {
                asset: a.clone(),
                region: Region::Tile { row, col },
            })
            .collect(),
        overwritten: Vec::new(),
    };
    layout.validate()?;
    Ok(layout)
}

/// Grid shape and cells for `assets`: the reference arrangement when the
/// assets are exactly the nine market tickers, otherwise row-major order on
/// the smallest near-square grid.
pub fn default_arrangement(assets: &[String]) -> ((usize, usize), Vec<(usize, usize)>) {
    let mut reference: HashMap<&str, (usize, usize)> = HashMap::new();
    for (r, row) in REFERENCE_ARRANGEMENT.iter().enumerate() {
        for (c, name) in row.iter().enumerate() {
            reference.insert(name, (r, c));
        }
    }
    if assets.len() == reference.len() && assets.iter().all(|a| reference.contains_key(a.as_str())) {
        return ((3, 3), assets.iter().map(|a| reference[a.as_str()]).collect());
    }
    let n = assets.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    ((rows, cols), (0..assets.len()).map(|i| (i / cols, i % cols)).collect())
}

pub fn single_tile_layout(asset: &str, image_size: (usize, usize)) -> Result<Layout> {
    build_grid_layout(&[asset.to_string()], &[(0, 0)], (1, 1), image_size)
}

/// Change vector repeated in raster order until the image is full.
pub fn tiled_vector_layout(assets: &[String], image_size: (usize, usize)) -> Result<Layout> {
    let layout = Layout {
        kind: LayoutKind::TiledVector,
        grid_shape: None,
        image_size,
        cells: assets
            .iter()
            .enumerate()
            .map(|(phase, a)| Placement {
                asset: a.clone(),
                region: Region::Raster { phase },
            })
            .collect(),
        overwritten: Vec::new(),
    };
    layout.validate()?;
    if assets.len() > image_size.0 * image_size.1 {
        return Err(Error::invalid("more assets than pixels"));
    }
    Ok(layout)
}

fn tile_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    (dr * dr + dc * dc).sqrt()
}

/// `Σ_{i<j} |corr_ij| · dist(tile_i, tile_j)`: large when correlated assets sit far apart.
pub(crate) fn separation_score(cells: &[(usize, usize)], correlations: &[Vec<f64>]) -> f64 {
    let mut score = 0.0;
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            score += correlations[i][j].abs() * tile_distance(cells[i], cells[j]);
        }
    }
    score
}

/// Adversarial rearrangement of a grid layout.
///
/// Samples `candidates` seeded permutations of the occupied tiles (never the
/// identity) and keeps the one that pushes correlated assets furthest apart
/// under [`separation_score`]. Ties keep the earliest candidate.
pub fn shuffle_layout(
    layout: &Layout,
    seed: u64,
    correlations: &[Vec<f64>],
    candidates: usize,
) -> Result<Layout> {
    if !matches!(layout.kind, LayoutKind::GridTiles | LayoutKind::SingleTile) {
        return Err(Error::invalid("only grid layouts can be shuffled"));
    }
    let n = layout.n_assets();
    if correlations.len() != n || correlations.iter().any(|r| r.len() != n) {
        return Err(Error::LengthMismatch {
            expected: n,
            found: correlations.len(),
        });
    }
    let cells: Vec<(usize, usize)> = layout
        .cells
        .iter()
        .map(|c| match c.region {
            Region::Tile { row, col } => (row, col),
            _ => unreachable!("grid layouts hold tiles"),
        })
        .collect();
    if n < 2 {
        return Ok(layout.clone());
    }
    let mut rng = seed::rng(seed, "shuffle_layout");
    let identity: Vec<usize> = (0..n).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut perm = identity.clone();
    for _ in 0..candidates.max(1) {
        perm.shuffle(&mut rng);
        if perm == identity {
            continue;
        }
        let placed: Vec<(usize, usize)> = perm.iter().map(|&p| cells[p]).collect();
        let score = separation_score(&placed, correlations);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, perm.clone()));
        }
    }
    let perm = match best {
        Some((_, p)) => p,
        // Every draw was the identity; fall back to a rotation.
        None => (0..n).map(|i| (i + 1) % n).collect(),
    };
    let mut out = layout.clone();
    for (cell, &p) in out.cells.iter_mut().zip(&perm) {
        let (row, col) = cells[p];
        cell.region = Region::Tile { row, col };
    }
    Ok(out)
}

/// Projects each asset's training series (a point in time-dimensional
/// space) onto its first two principal components and scales the result to
/// pixel coordinates: component 1 to columns, component 2 to rows.
///
/// Assets landing on an occupied pixel overwrite the earlier occupant, which
/// is then listed in [`Layout::overwritten`].
pub fn scatter_layout_from_projection(train: &ChangePanel, image_size: (usize, usize)) -> Result<Layout> {
    let n = train.n_assets();
    let t = train.len();
    if n < 2 || t < 3 {
        return Err(Error::invalid(format!(
            "projection needs >= 2 assets and >= 3 rows, got {n} and {t}"
        )));
    }
    let (h, w) = image_size;
    if h == 0 || w == 0 {
        return Err(Error::invalid("empty image"));
    }
    // points[i] = asset i's series, centred across assets per time step
    let cols: Vec<Vec<f64>> = (0..n).map(|i| train.column(i)).collect();
    let mean: Vec<f64> = (0..t).map(|s| cols.iter().map(|c| c[s]).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| c.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let gram = DMatrix::from_fn(n, n, |i, j| {
        centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>()
    });
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let scale_ref = eig.eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let component = |rank: usize| -> Vec<f64> {
        let idx = order[rank];
        let lambda = eig.eigenvalues[idx];
        if lambda <= 1e-12 * scale_ref.max(1e-300) {
            return vec![0.0; n];
        }
        let v = eig.eigenvectors.column(idx);
        // Orient so the largest-magnitude loading is positive.
        let pivot = (0..n).fold(0, |best, i| if v[i].abs() > v[best].abs() + 1e-12 { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        (0..n).map(|i| sign * v[i] * lambda.sqrt()).collect()
    };
    let pc1 = component(0);
    let pc2 = component(1);
    let degenerate = pc1.iter().all(|v| *v == 0.0);
    if degenerate {
        log::warn!("projection is degenerate: all assets collapse onto one pixel");
    }
    let to_pixels = |xs: &[f64], size: usize| -> Vec<usize> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        xs.iter()
            .map(|&x| {
                let u = if span > 1e-12 * (hi.abs() + lo.abs()).max(1e-300) {
                    (x - lo) / span
                } else {
                    0.5
                };
                (u * (size - 1) as f64).round() as usize
            })
            .collect()
    };
    let px_cols = to_pixels(&pc1, w);
    let px_rows = to_pixels(&pc2, h);

    let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
    let mut overwritten = Vec::new();
    for i in 0..n {
        let key = (px_rows[i], px_cols[i]);
        if let Some(prev) = owner.insert(key, i) {
            overwritten.push(prev);
        }
    }
    overwritten.sort_unstable();
    let assets = train.assets();
    if !overwritten.is_empty() {
        let names: Vec<&str> = overwritten.iter().map(|&i| assets[i].as_str()).collect();
        log::warn!("scatter layout pixel conflicts; overwritten: {}", names.join(", "));
    }
    let layout = Layout {
        kind: LayoutKind::ScatterPixels,
        grid_shape: None,
        image_size,
        cells: (0..n)
            .map(|i| Placement {
                asset: assets[i].clone(),
                region: Region::Pixel {
                    row: px_rows[i],
                    col: px_cols[i],
                },
            })
            .collect(),
        overwritten: overwritten.iter().map(|&i| assets[i].clone()).collect(),
    };
    layout.validate()?;
    Ok(layout)
}

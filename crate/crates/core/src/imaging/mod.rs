//! Change vectors ⇄ grayscale frames.
//!
//! A change `δ` (percent) maps to a pixel through `255 · sigmoid(δ)`, so
//! brighter means a larger rise and 127.5 is "no change". Frames stay
//! continuous in memory; quantization to 8 bits happens only in
//! [`Frame::write_png`] and [`Frame::quantized`].

mod layout;

use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use layout::{
    bands, build_grid_layout, default_arrangement, scatter_layout_from_projection, shuffle_layout,
    single_tile_layout, tiled_vector_layout, Layout, LayoutKind, Placement, Region,
    DEFAULT_IMAGE_SIZE, DEFAULT_SHUFFLE_CANDIDATES, REFERENCE_ARRANGEMENT,
};

pub const MAX_PIXEL: f64 = 255.0;
/// Pixel value of a zero change.
pub const NEUTRAL_PIXEL: f64 = 127.5;
/// Pixels are clamped to `[PIXEL_CLAMP, 255 − PIXEL_CLAMP]` before inversion.
pub const PIXEL_CLAMP: f64 = 0.5;

/// `255 / (1 + e^{−δ})`.
pub fn sigmoid_pixel(delta: f64) -> Result<f64> {
    if !delta.is_finite() {
        return Err(Error::NonFinite(delta));
    }
    Ok(MAX_PIXEL / (1.0 + (-delta).exp()))
}

/// Result of inverting one pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Inverted {
    pub change: f64,
    pub clamped: bool,
}

/// `ln(p / (255 − p))` after clamping `p` away from 0 and 255.
pub fn pixel_to_change(p: f64) -> Inverted {
    let lo = PIXEL_CLAMP;
    let hi = MAX_PIXEL - PIXEL_CLAMP;
    // NaN clamps to the midpoint rather than propagating.
    let (q, clamped) = if p.is_nan() {
        (NEUTRAL_PIXEL, true)
    } else if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    };
    Inverted {
        change: (q / (MAX_PIXEL - q)).ln(),
        clamped,
    }
}

/// Grayscale image, row-major, values in `[0, 255]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: pixels.len(),
            });
        }
        if let Some(&bad) = pixels.iter().find(|p| !(0.0..=MAX_PIXEL).contains(*p)) {
            return Err(Error::invalid(format!("pixel {bad} outside [0, 255]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn uniform(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| p.round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn from_u8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    /// The frame as it would read back from an 8-bit image file.
    pub fn quantized(&self) -> Frame {
        Frame {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|p| p.round().clamp(0.0, 255.0)).collect(),
        }
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.to_u8())?;
        writer.finish()?;
        Ok(())
    }
}

/// Ordered frames sharing one size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    anchor_date: Option<NaiveDate>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, anchor_date: Option<NaiveDate>) -> Result<Self> {
        if let Some(first) = frames.first() {
            if frames.iter().any(|f| f.size() != first.size()) {
                return Err(Error::invalid("frames in a sequence must share one size"));
            }
        }
        Ok(Self { frames, anchor_date })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn anchor_date(&self) -> Option<NaiveDate> {
        self.anchor_date
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn size(&self) -> Option<(usize, usize)> {
        self.frames.first().map(Frame::size)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> FrameSequence {
        FrameSequence {
            frames: self.frames[range].to_vec(),
            anchor_date: self.anchor_date,
        }
    }
}

/// Draws one change vector under `layout`.
pub fn render_frame(changes: &[f64], layout: &Layout) -> Result<Frame> {
    if changes.len() != layout.n_assets() {
        return Err(Error::LengthMismatch {
            expected: layout.n_assets(),
            found: changes.len(),
        });
    }
    let (h, w) = layout.image_size();
    let mut pixels = vec![NEUTRAL_PIXEL; h * w];
    for (asset, &delta) in changes.iter().enumerate() {
        let p = sigmoid_pixel(delta)?;
        for idx in layout.pixel_indices(asset) {
            pixels[idx] = p;
        }
    }
    Frame::new(h, w, pixels)
}

/// Renders consecutive change rows into a sequence.
pub fn render_sequence(
    rows: &[Vec<f64>],
    layout: &Layout,
    anchor_date: Option<NaiveDate>,
) -> Result<FrameSequence> {
    let frames = rows
        .iter()
        .map(|r| render_frame(r, layout))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, anchor_date)
}

/// Per-asset changes read back from a frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub changes: Vec<f64>,
    /// Region averages that had to be clamped before inversion.
    pub clamp_events: usize,
    /// Assets without any pixel (overwritten scatter points); reported as 0.
    pub undecodable: Vec<usize>,
}

/// Averages each asset's region and inverts the pixel map.
pub fn decode_frame(frame: &Frame, layout: &Layout) -> Result<Decoded> {
    if frame.size() != layout.image_size() {
        return Err(Error::invalid(format!(
            "frame is {:?} but layout expects {:?}",
            frame.size(),
            layout.image_size()
        )));
    }
    let mut out = Decoded {
        changes: Vec::with_capacity(layout.n_assets()),
        clamp_events: 0,
        undecodable: Vec::new(),
    };
    for asset in 0..layout.n_assets() {
        let idx = layout.pixel_indices(asset);
        if idx.is_empty() {
            out.changes.push(0.0);
            out.undecodable.push(asset);
            continue;
        }
        let mean = idx.iter().map(|&i| frame.pixels[i]).sum::<f64>() / idx.len() as f64;
        let inv = pixel_to_change(mean);
        out.clamp_events += usize::from(inv.clamped);
        out.changes.push(inv.change);
    }
    Ok(out)
}

//! Image patches and the HOG + colour-names + intensity feature stack.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::signal::{hann_window, Grid2D};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("image must have 1 or 3 channels, got {0}")]
    ChannelCount(usize),
    #[error("image {height}x{width}x{channels} needs {expected} values, got {actual}")]
    BufferSize {
        height: usize,
        width: usize,
        channels: usize,
        expected: usize,
        actual: usize,
    },
    #[error("non-positive geometry: {0}")]
    Geometry(String),
    #[error("patch {height}x{width} is smaller than one {cell}px cell")]
    TooSmall { height: usize, width: usize, cell: usize },
    #[error("colour names need an RGB patch")]
    Grayscale,
    #[error("colour-name table must hold {expected} bytes, found {actual}")]
    TableSize { expected: usize, actual: usize },
    #[error("colour-name table: {0}")]
    TableIo(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Interleaved image with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(FeatureError::ChannelCount(channels));
        }
        if height == 0 || width == 0 {
            return Err(FeatureError::Geometry(format!("image {height}x{width}")));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(FeatureError::BufferSize {
                height,
                width,
                channels,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        )
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for k in 0..channels {
                    data.push(f(r, c, k));
                }
            }
        }
        Self::new(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn is_color(&self) -> bool {
        self.channels == 3
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + channel]
    }

    /// Intensity: the single channel, or Rec. 601 luma for RGB.
    pub fn intensity(&self, row: usize, col: usize) -> f32 {
        let i = (row * self.width + col) * self.channels;
        if self.channels == 1 {
            self.data[i]
        } else {
            0.299 * self.data[i] + 0.587 * self.data[i + 1] + 0.114 * self.data[i + 2]
        }
    }

    /// 8-bit samples, rounded.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Crops the `size = (h, w)` region centered on `center = (row, col)` and
/// resamples it to `output_size` bilinearly. Out-of-image samples replicate
/// the nearest edge pixel.
///
/// Continuous coordinates put pixel `k` on `[k, k+1)`; output pixel `i` is
/// sampled at `top + (i + 0.5)·h/H − 0.5` in pixel-index units.
pub fn extract_patch(img: &Image, center: (f64, f64), size: (f64, f64), output_size: (usize, usize)) -> Result<Image> {
    let (sh, sw) = size;
    let (oh, ow) = output_size;
    if !(sh > 0.0 && sw > 0.0) || oh == 0 || ow == 0 {
        return Err(FeatureError::Geometry(format!("region {sh}x{sw}, output {oh}x{ow}")));
    }
    if !center.0.is_finite() || !center.1.is_finite() {
        return Err(FeatureError::Geometry("non-finite center".into()));
    }
    let top = center.0 - sh / 2.0;
    let left = center.1 - sw / 2.0;
    let sy = sh / oh as f64;
    let sx = sw / ow as f64;
    let ch = img.channels;

    let max_r = (img.height - 1) as f64;
    let max_c = (img.width - 1) as f64;
    let cols: Vec<(usize, usize, f32)> = (0..ow)
        .map(|j| {
            let x = (left + (j as f64 + 0.5) * sx - 0.5).clamp(0.0, max_c);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(img.width - 1);
            (x0, x1, (x - x0 as f64) as f32)
        })
        .collect();

    let mut data = Vec::with_capacity(oh * ow * ch);
    for i in 0..oh {
        let y = (top + (i as f64 + 0.5) * sy - 0.5).clamp(0.0, max_r);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(img.height - 1);
        let fy = (y - y0 as f64) as f32;
        for &(x0, x1, fx) in &cols {
            for k in 0..ch {
                let a = img.get(y0, x0, k);
                let b = img.get(y0, x1, k);
                let c = img.get(y1, x0, k);
                let d = img.get(y1, x1, k);
                let top_row = a + (b - a) * fx;
                let bottom_row = c + (d - c) * fx;
                data.push(top_row + (bottom_row - top_row) * fy);
            }
        }
    }
    Image::new(oh, ow, ch, data)
}

/// Channel-major feature tensor on a cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: Vec<Grid2D>,
}

impl FeatureMap {
    pub fn rows(&self) -> usize {
        self.channels[0].height()
    }

    pub fn cols(&self) -> usize {
        self.channels[0].width()
    }

    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn concat(mut self, other: FeatureMap) -> Self {
        debug_assert_eq!(self.channels[0].dims(), other.channels[0].dims());
        self.channels.extend(other.channels);
        self
    }

    /// Multiplies every channel by `window` cell-wise.
    pub fn windowed(&self, window: &Grid2D) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.zip_with(window, |a, b| a * b).expect("window matches grid"))
                .collect(),
        }
    }
}

pub const HOG_CHANNELS: usize = 31;
pub const CN_CHANNELS: usize = 11;
const HOG_CLIP: f64 = 0.2;
const HOG_TEXTURE_SCALE: f64 = 0.2357;
const HOG_EPS: f64 = 1e-4;

/// Felzenszwalb-style HOG: 18 contrast-sensitive bins, 9 insensitive bins
/// and 4 texture-energy channels, one vector per `cell_size` cell.
///
/// Gradients use central differences on the colour channel with the largest
/// magnitude; the outermost pixel ring does not vote. Each pixel votes
/// bilinearly into its four nearest cells. Normalization uses the four 2×2
/// cell blocks touching a cell, with indices clamped at the grid edge so the
/// output grid keeps `⌊H/cell⌋ × ⌊W/cell⌋` cells.
pub fn hog_features(patch: &Image, cell_size: usize) -> Result<FeatureMap> {
    let (h, w) = (patch.height(), patch.width());
    if cell_size == 0 || h < cell_size || w < cell_size {
        return Err(FeatureError::TooSmall {
            height: h,
            width: w,
            cell: cell_size,
        });
    }
    let rows = h / cell_size;
    let cols = w / cell_size;
    let hist = orientation_histogram(patch, cell_size, rows, cols);

    let mut energy = vec![0.0; rows * cols];
    for (i, e) in energy.iter_mut().enumerate() {
        let b = &hist[i * 18..(i + 1) * 18];
        *e = (0..9).map(|o| (b[o] + b[o + 9]).powi(2)).sum();
    }
    let en = |r: isize, c: isize| {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        energy[r * cols + c]
    };

    let mut channels = vec![Grid2D::zeros(rows, cols); HOG_CHANNELS];
    for r in 0..rows {
        for c in 0..cols {
            let (ri, ci) = (r as isize, c as isize);
            let mut norms = [0.0; 4];
            for (k, (dr, dc)) in [(-1, -1), (-1, 0), (0, -1), (0, 0)].iter().enumerate() {
                let s = en(ri + dr, ci + dc)
                    + en(ri + dr, ci + dc + 1)
                    + en(ri + dr + 1, ci + dc)
                    + en(ri + dr + 1, ci + dc + 1);
                norms[k] = 1.0 / (s + HOG_EPS).sqrt();
            }
            let b = &hist[(r * cols + c) * 18..(r * cols + c + 1) * 18];
            let mut texture = [0.0; 4];
            for o in 0..18 {
                let mut acc = 0.0;
                for (k, n) in norms.iter().enumerate() {
                    let v = (b[o] * n).min(HOG_CLIP);
                    acc += v;
                    texture[k] += v;
                }
                channels[o][(r, c)] = 0.5 * acc;
            }
            for o in 0..9 {
                let sum = b[o] + b[o + 9];
                let acc: f64 = norms.iter().map(|n| (sum * n).min(HOG_CLIP)).sum();
                channels[18 + o][(r, c)] = 0.5 * acc;
            }
            for k in 0..4 {
                channels[27 + k][(r, c)] = HOG_TEXTURE_SCALE * texture[k];
            }
        }
    }
    Ok(FeatureMap { channels })
}

/// Unit vectors of the nine unsigned orientations, `o·20°`.
fn orientation_basis() -> &'static [(f64, f64); 9] {
    static BASIS: OnceLock<[(f64, f64); 9]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut basis = [(0.0, 0.0); 9];
        for (o, b) in basis.iter_mut().enumerate() {
            let a = o as f64 * PI / 9.0;
            *b = (a.cos(), a.sin());
        }
        basis
    })
}

/// Dominant-channel gradient at an interior pixel: `(dx, dy)` with `dx`
/// along columns and `dy` along rows.
pub fn pixel_gradient(patch: &Image, r: usize, c: usize) -> (f64, f64) {
    let mut best = (0.0, 0.0);
    let mut best_mag = -1.0;
    for k in 0..patch.channels() {
        let dx = (patch.get(r, c + 1, k) - patch.get(r, c - 1, k)) as f64;
        let dy = (patch.get(r + 1, c, k) - patch.get(r - 1, c, k)) as f64;
        let mag = dx * dx + dy * dy;
        if mag > best_mag {
            best_mag = mag;
            best = (dx, dy);
        }
    }
    best
}

/// Signed orientation bin in `0..18` of a gradient.
pub fn orientation_bin(dx: f64, dy: f64) -> usize {
    let mut best = 0.0;
    let mut bin = 0;
    for (o, (u, v)) in orientation_basis().iter().enumerate() {
        let dot = u * dx + v * dy;
        if dot > best {
            best = dot;
            bin = o;
        } else if -dot > best {
            best = -dot;
            bin = o + 9;
        }
    }
    bin
}

fn orientation_histogram(patch: &Image, cell: usize, rows: usize, cols: usize) -> Vec<f64> {
    let (h, w) = (patch.height(), patch.width());
    let mut hist = vec![0.0; rows * cols * 18];
    if h < 3 || w < 3 {
        return hist;
    }
    let cs = cell as f64;
    let ch = patch.channels();
    let data = patch.data();
    let stride = w * ch;
    let column_votes: Vec<(isize, f64, f64)> = (0..w)
        .map(|c| {
            let xp = (c as f64 + 0.5) / cs - 0.5;
            let ix = xp.floor() as isize;
            let vx0 = xp - ix as f64;
            (ix, 1.0 - vx0, vx0)
        })
        .collect();
    for r in 1..h - 1 {
        let yp = (r as f64 + 0.5) / cs - 0.5;
        let iy = yp.floor() as isize;
        let vy0 = yp - iy as f64;
        let vy1 = 1.0 - vy0;
        let up = &data[(r - 1) * stride..r * stride];
        let mid = &data[r * stride..(r + 1) * stride];
        let down = &data[(r + 1) * stride..(r + 2) * stride];
        for c in 1..w - 1 {
            // same arithmetic as `pixel_gradient`, on raw rows
            let (mut dx, mut dy, mut best_mag) = (0.0, 0.0, -1.0);
            for k in 0..ch {
                let gx = (mid[(c + 1) * ch + k] - mid[(c - 1) * ch + k]) as f64;
                let gy = (down[c * ch + k] - up[c * ch + k]) as f64;
                let m = gx * gx + gy * gy;
                if m > best_mag {
                    best_mag = m;
                    dx = gx;
                    dy = gy;
                }
            }
            let mag = (dx * dx + dy * dy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let o = orientation_bin(dx, dy);
            let (ix, vx1, vx0) = column_votes[c];
            for (cy, wy) in [(iy, vy1), (iy + 1, vy0)] {
                if cy < 0 || cy >= rows as isize {
                    continue;
                }
                for (cx, wx) in [(ix, vx1), (ix + 1, vx0)] {
                    if cx < 0 || cx >= cols as isize {
                        continue;
                    }
                    hist[((cy as usize) * cols + cx as usize) * 18 + o] += wy * wx * mag;
                }
            }
        }
    }
    hist
}

/// Colour-name names in table column order.
pub const COLOR_NAMES: [&str; CN_CHANNELS] = [
    "black", "blue", "brown", "grey", "green", "orange", "pink", "purple", "red", "white", "yellow",
];

const CN_PROTOTYPES: [[f64; 3]; CN_CHANNELS] = [
    [0.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.5, 0.3, 0.1],
    [0.5, 0.5, 0.5],
    [0.0, 0.6, 0.0],
    [1.0, 0.55, 0.0],
    [1.0, 0.6, 0.75],
    [0.5, 0.0, 0.5],
    [0.85, 0.0, 0.0],
    [1.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
];
const CN_TEMPERATURE: f64 = 0.05;
pub const CN_TABLE_ROWS: usize = 32 * 32 * 32;

/// RGB → 11 colour-name probabilities, indexed by 5-bit quantized colour
/// `r5 + 32·g5 + 1024·b5`.
///
/// On disk: `32768 × 11` little-endian `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorNames {
    table: Vec<f32>,
}

impl ColorNames {
    /// Built-in table: a soft assignment of each quantized colour to eleven
    /// prototype colours. Stands in for a learned mapping when no table file
    /// is supplied.
    pub fn builtin() -> Arc<ColorNames> {
        static TABLE: OnceLock<Arc<ColorNames>> = OnceLock::new();
        TABLE
            .get_or_init(|| {
                let mut table = Vec::with_capacity(CN_TABLE_ROWS * CN_CHANNELS);
                for idx in 0..CN_TABLE_ROWS {
                    let q = [idx % 32, (idx / 32) % 32, idx / 1024];
                    let rgb = q.map(|v| (v as f64 * 8.0 + 4.0) / 255.0);
                    let logits: Vec<f64> = CN_PROTOTYPES
                        .iter()
                        .map(|p| {
                            let d: f64 = (0..3).map(|k| (rgb[k] - p[k]).powi(2)).sum();
                            -d / CN_TEMPERATURE
                        })
                        .collect();
                    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                    let z: f64 = exps.iter().sum();
                    table.extend(exps.iter().map(|e| (e / z) as f32));
                }
                Arc::new(ColorNames { table })
            })
            .clone()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let expected = CN_TABLE_ROWS * CN_CHANNELS * 4;
        if bytes.len() != expected {
            return Err(FeatureError::TableSize {
                expected,
                actual: bytes.len(),
            });
        }
        let table = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Ok(Self { table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.table.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn index(r: u8, g: u8, b: u8) -> usize {
        (r >> 3) as usize + 32 * (g >> 3) as usize + 1024 * (b >> 3) as usize
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.table[index * CN_CHANNELS..(index + 1) * CN_CHANNELS]
    }

    pub fn lookup(&self, r: u8, g: u8, b: u8) -> &[f32] {
        self.row(Self::index(r, g, b))
    }
}

fn to_byte(v: f32) -> u8 {
    // round-half-up equals `round` on non-negative input
    (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8
}

/// Cell-averaged colour-name probabilities.
pub fn cn_features(patch: &Image, cell_size: usize, table: &ColorNames) -> Result<FeatureMap> {
    if !patch.is_color() {
        return Err(FeatureError::Grayscale);
    }
    let (rows, cols) = cell_grid(patch, cell_size)?;
    let mut channels = vec![Grid2D::zeros(rows, cols); CN_CHANNELS];
    let norm = 1.0 / (cell_size * cell_size) as f64;
    for cr in 0..rows {
        for cc in 0..cols {
            let mut acc = [0.0f64; CN_CHANNELS];
            for r in cr * cell_size..(cr + 1) * cell_size {
                for c in cc * cell_size..(cc + 1) * cell_size {
                    let probs = table.lookup(
                        to_byte(patch.get(r, c, 0)),
                        to_byte(patch.get(r, c, 1)),
                        to_byte(patch.get(r, c, 2)),
                    );
                    for (a, p) in acc.iter_mut().zip(probs) {
                        *a += *p as f64;
                    }
                }
            }
            for (ch, a) in channels.iter_mut().zip(acc) {
                ch[(cr, cc)] = a * norm;
            }
        }
    }
    Ok(FeatureMap { channels })
}

/// Cell-mean intensity, shifted to be zero-mean for mid-grey.
pub fn gray_features(patch: &Image, cell_size: usize) -> Result<FeatureMap> {
    let (rows, cols) = cell_grid(patch, cell_size)?;
    let mut g = Grid2D::zeros(rows, cols);
    let norm = 1.0 / (cell_size * cell_size) as f64;
    for r in 0..rows * cell_size {
        for c in 0..cols * cell_size {
            g[(r / cell_size, c / cell_size)] += patch.intensity(r, c) as f64 * norm;
        }
    }
    Ok(FeatureMap {
        channels: vec![g.map(|v| v - 0.5)],
    })
}

fn cell_grid(patch: &Image, cell_size: usize) -> Result<(usize, usize)> {
    if cell_size == 0 || patch.height() < cell_size || patch.width() < cell_size {
        return Err(FeatureError::TooSmall {
            height: patch.height(),
            width: patch.width(),
            cell: cell_size,
        });
    }
    Ok((patch.height() / cell_size, patch.width() / cell_size))
}

/// Feature-extraction settings shared by the tracker.
#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub cell_size: usize,
    pub color_names: Arc<ColorNames>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cell_size: 4,
            color_names: ColorNames::builtin(),
        }
    }
}

/// Number of channels produced for an image with `image_channels` planes.
pub fn feature_depth(image_channels: usize) -> usize {
    if image_channels == 3 {
        HOG_CHANNELS + CN_CHANNELS + 1
    } else {
        HOG_CHANNELS + 1
    }
}

/// Unwindowed features of an already extracted patch.
pub fn patch_features(patch: &Image, cfg: &FeatureConfig) -> Result<FeatureMap> {
    let mut map = hog_features(patch, cfg.cell_size)?;
    if patch.is_color() {
        map = map.concat(cn_features(patch, cfg.cell_size, &cfg.color_names)?);
    }
    Ok(map.concat(gray_features(patch, cfg.cell_size)?))
}

/// Samples `size` pixels around `center` onto a `cells` grid and returns the
/// Hann-windowed HOG ⊕ CN ⊕ intensity stack (CN omitted for gray input).
pub fn build_sample(
    img: &Image,
    center: (f64, f64),
    size: (f64, f64),
    cells: (usize, usize),
    cfg: &FeatureConfig,
) -> Result<FeatureMap> {
    let out = (cells.0 * cfg.cell_size, cells.1 * cfg.cell_size);
    let patch = extract_patch(img, center, size, out)?;
    let map = patch_features(&patch, cfg)?;
    Ok(map.windowed(&hann_window(cells.0, cells.1)))
}

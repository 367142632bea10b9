//! Frame-to-frame tracking: multi-scale detection, appearance-model update,
//! response quality, dynamic consistency label and filter retraining.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{self, dynamic_factor, dynamic_label, psrm, ConsistencyError, FixedLabelCache, ResponseMap};
use crate::features::{self, build_sample, FeatureConfig, FeatureError, Image};
use crate::signal::{self, dft2, gaussian_label, wrapped_offset, Grid2D, SignalError, Spectrum2D};
use crate::solver::{
    self, solve_filter, spatial_weight, AdmmSettings, FilterStack, SolverError, SpatialWeight, TrainingProblem,
};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("degenerate bounding box {0:?}")]
    DegenerateBox(BoundingBox),
    #[error("bounding box {bbox:?} lies outside the {width}x{height} frame")]
    OutsideFrame {
        bbox: BoundingBox,
        width: usize,
        height: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("frame has {got} channels, tracker was initialized with {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, TrackerError>;

/// Axis-aligned box: top-left corner and size, in pixels, 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    /// `(cx, cy)`.
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }
}

/// Tracker hyperparameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub gamma: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub cell_size: usize,
    /// Search-region side length relative to the target (2 gives 4x area).
    pub padding: f64,
    pub scale_count: usize,
    pub scale_step: f64,
    pub scale_penalty: f64,
    pub admm_iters: usize,
    pub admm_penalty: f64,
    pub admm_penalty_growth: f64,
    pub admm_penalty_max: f64,
    pub sidelobe_margin: f64,
    pub label_sigma_factor: f64,
    pub spatial_mu: f64,
    pub spatial_theta: f64,
    /// Upper bound on the sampled search area, in pixels.
    pub max_sample_area: f64,
    /// Lower bound on the sampled search area; small targets are upsampled.
    pub min_sample_area: f64,
    /// Scale the detection response to unit peak before it enters the
    /// consistency term. Off by default: responses enter raw.
    pub normalize_response: bool,
    /// Replace the PSRM-driven factor by a constant (ablation).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_h: Option<f64>,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            h_min: 0.6,
            h_max: 1.2,
            alpha: 50.0,
            beta: 100.0,
            eta: 0.042,
            cell_size: 4,
            padding: 2.0,
            scale_count: 5,
            scale_step: 1.01,
            scale_penalty: 0.99,
            admm_iters: 3,
            admm_penalty: 1.0,
            admm_penalty_growth: 10.0,
            admm_penalty_max: 1e4,
            sidelobe_margin: 0.15,
            label_sigma_factor: 1.0 / 16.0,
            spatial_mu: 0.1,
            spatial_theta: 3.0,
            max_sample_area: 200.0 * 200.0,
            min_sample_area: 150.0 * 150.0,
            normalize_response: false,
            fixed_h: None,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha", self.alpha),
            ("padding", self.padding),
            ("scale_step", self.scale_step),
            ("scale_penalty", self.scale_penalty),
            ("admm_penalty", self.admm_penalty),
            ("admm_penalty_growth", self.admm_penalty_growth),
            ("admm_penalty_max", self.admm_penalty_max),
            ("sidelobe_margin", self.sidelobe_margin),
            ("label_sigma_factor", self.label_sigma_factor),
            ("spatial_mu", self.spatial_mu),
            ("max_sample_area", self.max_sample_area),
            ("min_sample_area", self.min_sample_area),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(TrackerError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("h_min", self.h_min),
            ("spatial_theta", self.spatial_theta),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(TrackerError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.h_min <= self.h_max) || !self.h_max.is_finite() {
            return Err(TrackerError::Config(format!(
                "h_min {} exceeds h_max {}",
                self.h_min, self.h_max
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(TrackerError::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.cell_size == 0 || self.scale_count == 0 || self.admm_iters == 0 {
            return Err(TrackerError::Config(
                "cell_size, scale_count and admm_iters must be >= 1".into(),
            ));
        }
        if self.padding < 1.0 {
            return Err(TrackerError::Config(format!("padding {} below 1", self.padding)));
        }
        if self.min_sample_area > self.max_sample_area {
            return Err(TrackerError::Config("min_sample_area exceeds max_sample_area".into()));
        }
        if let Some(h) = self.fixed_h {
            if !h.is_finite() {
                return Err(TrackerError::Config(format!("fixed_h {h} is not finite")));
            }
        }
        Ok(())
    }

    pub fn admm_settings(&self) -> AdmmSettings {
        AdmmSettings {
            iterations: self.admm_iters,
            penalty: self.admm_penalty,
            penalty_growth: self.admm_penalty_growth,
            penalty_max: self.admm_penalty_max,
            relaxation: 1.0,
            anderson_depth: 0,
        }
    }
}

/// Per-frame record of the quantities that drive training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub psrm: f64,
    pub h: f64,
    pub peak: f64,
    pub scale: f64,
    pub solver_ok: bool,
}

/// Result of searching one frame.
#[derive(Debug, Clone)]
pub struct Detection {
    pub response: ResponseMap,
    /// New target center `(row, col)` in pixels.
    pub position: (f64, f64),
    /// New scale relative to the initial target size.
    pub scale: f64,
    pub scale_index: usize,
    /// Sub-cell peak offset from zero displacement, in cells.
    pub offset_cells: (f64, f64),
}

/// `x̂_model ← (1 − η) x̂_model + η x̂`.
pub fn update_model(model: &mut [Spectrum2D], sample: &[Spectrum2D], eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(TrackerError::Config(format!("eta {eta} outside [0, 1]")));
    }
    if model.len() != sample.len() {
        return Err(TrackerError::ChannelMismatch {
            expected: model.len(),
            got: sample.len(),
        });
    }
    for (m, s) in model.iter_mut().zip(sample) {
        *m = m.zip_with(s, |a, b| (1.0 - eta) * a + eta * b)?;
    }
    Ok(())
}

/// Peak offset of a 3-point parabola through `(−1, a), (0, b), (1, c)`.
fn parabolic_offset(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den < 0.0 {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// `idft2(Σ_d conj(ŵ_d) ẑ_d)`.
fn response_map(w_hat: &[Spectrum2D], z_hat: &[Spectrum2D], (h, w): (usize, usize)) -> Result<ResponseMap> {
    let mut acc = Spectrum2D::zeros(h, w);
    for (wh, zh) in w_hat.iter().zip(z_hat) {
        for ((a, wv), zv) in acc.values_mut().iter_mut().zip(wh.values()).zip(zh.values()) {
            *a += wv.conj() * zv;
        }
    }
    Ok(ResponseMap::new(signal::idft2(&acc)?))
}

/// Nearest size ≥ 8 whose only prime factors are 2, 3 and 5.
fn fft_friendly(n: usize) -> usize {
    let smooth = |mut m: usize| {
        for p in [2, 3, 5] {
            while m % p == 0 {
                m /= p;
            }
        }
        m == 1
    };
    let n = n.max(8);
    (0..n)
        .flat_map(|d| [n + d, n - d])
        .find(|&m| m >= 8 && smooth(m))
        .expect("8 is smooth")
}

/// Single-target CPCF tracker.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    feat: FeatureConfig,
    channels: usize,
    cells: (usize, usize),
    /// Search-region size in pixels at scale 1.
    base_search: (f64, f64),
    base_target: (f64, f64),
    position: (f64, f64),
    scale: f64,
    y_hat: Spectrum2D,
    l_f: Grid2D,
    weight: SpatialWeight,
    model: Vec<Spectrum2D>,
    filter: FilterStack,
    prev_response: Option<ResponseMap>,
    frame_index: usize,
    frame_dims: (usize, usize),
    labels: FixedLabelCache,
}

impl Tracker {
    pub fn init(frame: &Image, bbox: BoundingBox, cfg: TrackerConfig) -> Result<Self> {
        Self::init_with_features(frame, bbox, cfg, FeatureConfig::default())
    }

    pub fn init_with_features(
        frame: &Image,
        bbox: BoundingBox,
        cfg: TrackerConfig,
        mut feat: FeatureConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        feat.cell_size = cfg.cell_size;
        let min_side = cfg.cell_size as f64;
        if !bbox.is_valid() || bbox.w < min_side || bbox.h < min_side {
            return Err(TrackerError::DegenerateBox(bbox));
        }
        let (fw, fh) = (frame.width() as f64, frame.height() as f64);
        if bbox.x >= fw || bbox.y >= fh || bbox.x + bbox.w <= 0.0 || bbox.y + bbox.h <= 0.0 {
            return Err(TrackerError::OutsideFrame {
                bbox,
                width: frame.width(),
                height: frame.height(),
            });
        }

        let base_target = (bbox.h, bbox.w);
        let base_search = (bbox.h * cfg.padding, bbox.w * cfg.padding);
        let area = base_search.0 * base_search.1;
        let resize = if area > cfg.max_sample_area {
            (area / cfg.max_sample_area).sqrt()
        } else if area < cfg.min_sample_area {
            (area / cfg.min_sample_area).sqrt()
        } else {
            1.0
        };
        let cell_px = cfg.cell_size as f64 * resize;
        let cells = (
            fft_friendly((base_search.0 / cell_px).round() as usize),
            fft_friendly((base_search.1 / cell_px).round() as usize),
        );
        // keep the pixel extent consistent with the integer cell grid
        let base_search = (cells.0 as f64 * cell_px, cells.1 as f64 * cell_px);
        let target_cells = (base_target.0 / cell_px, base_target.1 / cell_px);

        let sigma = cfg.label_sigma_factor * (target_cells.0 * target_cells.1).sqrt();
        let y = gaussian_label(cells.0, cells.1, sigma, (0, 0))?;
        let labels = FixedLabelCache::new();
        let l_f = labels.get(cells.0, cells.1, sigma)?.as_ref().clone();
        let weight = spatial_weight(
            (target_cells.0.min(cells.0 as f64), target_cells.1.min(cells.1 as f64)),
            cells,
            cfg.spatial_mu,
            cfg.spatial_theta,
        )?;

        let (cx, cy) = bbox.center();
        let channels = features::feature_depth(frame.channels());
        let mut tracker = Self {
            filter: FilterStack::zeros(channels, cells.0, cells.1),
            cfg,
            feat,
            channels,
            cells,
            base_search,
            base_target,
            position: (cy, cx),
            scale: 1.0,
            y_hat: dft2(&y),
            l_f,
            weight,
            model: Vec::new(),
            prev_response: None,
            frame_index: 1,
            frame_dims: (frame.height(), frame.width()),
            labels,
        };
        tracker.model = tracker.sample_spectra(frame, tracker.position, tracker.scale)?;
        let problem = tracker.build_problem(None)?.0;
        let (filter, _) = solve_filter(&problem, &tracker.filter, &tracker.cfg.admm_settings())?;
        tracker.filter = filter;
        Ok(tracker)
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn cells(&self) -> (usize, usize) {
        self.cells
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Target center `(row, col)` in pixels.
    pub fn position(&self) -> (f64, f64) {
        self.position
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn filter(&self) -> &FilterStack {
        &self.filter
    }

    pub fn model(&self) -> &[Spectrum2D] {
        &self.model
    }

    pub fn prev_response(&self) -> Option<&ResponseMap> {
        self.prev_response.as_ref()
    }

    pub fn fixed_label(&self) -> &Grid2D {
        &self.l_f
    }

    pub fn bbox(&self) -> BoundingBox {
        let (h, w) = (self.base_target.0 * self.scale, self.base_target.1 * self.scale);
        BoundingBox::from_center(self.position.1, self.position.0, w, h)
    }

    fn check_frame(&self, frame: &Image) -> Result<()> {
        let got = features::feature_depth(frame.channels());
        if got != self.channels {
            return Err(TrackerError::ChannelMismatch {
                expected: self.channels,
                got,
            });
        }
        Ok(())
    }

    fn sample_spectra(&self, frame: &Image, position: (f64, f64), scale: f64) -> Result<Vec<Spectrum2D>> {
        let size = (self.base_search.0 * scale, self.base_search.1 * scale);
        let map = build_sample(frame, position, size, self.cells, &self.feat)?;
        Ok(map.channels.iter().map(dft2).collect())
    }

    /// Filter response to a set of sample spectra: `idft2(Σ_d conj(ŵ_d) ẑ_d)`.
    pub fn response(&self, z_hat: &[Spectrum2D]) -> Result<ResponseMap> {
        response_map(&self.filter.w_hat(), z_hat, self.cells)
    }

    fn scale_factors(&self) -> Vec<f64> {
        let n = self.cfg.scale_count;
        let mid = (n as f64 - 1.0) / 2.0;
        (0..n).map(|i| self.cfg.scale_step.powf(i as f64 - mid)).collect()
    }

    /// Searches the frame around the current position over all scales.
    pub fn detect(&self, frame: &Image) -> Result<Detection> {
        self.check_frame(frame)?;
        let factors = self.scale_factors();
        let mid = (factors.len() as f64 - 1.0) / 2.0;
        let w_hat = self.filter.w_hat();
        let mut best: Option<(f64, usize, ResponseMap)> = None;
        for (i, f) in factors.iter().enumerate() {
            let z_hat = self.sample_spectra(frame, self.position, self.scale * f)?;
            let resp = response_map(&w_hat, &z_hat, self.cells)?;
            let score = resp.peak_value() * self.cfg.scale_penalty.powf((i as f64 - mid).abs());
            if best.as_ref().is_none_or(|(s, _, _)| score > *s) {
                best = Some((score, i, resp));
            }
        }
        let (_, scale_index, response) = best.expect("at least one scale");
        let (rows, cols) = self.cells;
        let (pr, pc) = response.peak_pos();
        let g = response.grid();
        let (pri, pci) = (pr as isize, pc as isize);
        let dr = parabolic_offset(g.get_wrapped(pri - 1, pci), g.get(pr, pc), g.get_wrapped(pri + 1, pci));
        let dc = parabolic_offset(g.get_wrapped(pri, pci - 1), g.get(pr, pc), g.get_wrapped(pri, pci + 1));
        let offset = (
            wrapped_offset(pri, 0, rows) as f64 + dr,
            wrapped_offset(pci, 0, cols) as f64 + dc,
        );
        let new_scale = self.scale * factors[scale_index];
        let cell_px = (
            self.base_search.0 * self.scale * factors[scale_index] / rows as f64,
            self.base_search.1 * self.scale * factors[scale_index] / cols as f64,
        );
        let (fh, fw) = self.frame_dims;
        let position = (
            (self.position.0 + offset.0 * cell_px.0).clamp(0.0, fh as f64 - 1.0),
            (self.position.1 + offset.1 * cell_px.1).clamp(0.0, fw as f64 - 1.0),
        );
        Ok(Detection {
            response,
            position,
            scale: new_scale,
            scale_index,
            offset_cells: offset,
        })
    }

    /// Dynamic factor for a detection response (or the configured constant).
    pub fn regulatory_factor(&self, response: &ResponseMap) -> Result<(f64, f64)> {
        let score = psrm(response, self.cfg.beta, self.cfg.sidelobe_margin)?;
        let h = match self.cfg.fixed_h {
            Some(h) => h,
            None => dynamic_factor(&score, self.cfg.h_min, self.cfg.h_max, self.cfg.alpha)?,
        };
        Ok((score.value, h))
    }

    /// Training problem on the current model. With a detection response the
    /// consistency term is active; returns the problem and the factor used.
    pub fn build_problem(&self, response: Option<&ResponseMap>) -> Result<(TrainingProblem, Option<(f64, f64)>)> {
        match response {
            None => Ok((
                TrainingProblem::new(self.model.clone(), self.y_hat.clone(), self.weight.clone())?,
                None,
            )),
            Some(resp) => {
                let (score, h) = self.regulatory_factor(resp)?;
                let label = dynamic_label(h, &self.l_f);
                let mut r = resp.recentered();
                if self.cfg.normalize_response && resp.peak_value() > 0.0 {
                    r = r.scale(1.0 / resp.peak_value());
                }
                let problem = TrainingProblem::with_consistency(
                    self.model.clone(),
                    self.y_hat.clone(),
                    dft2(&r),
                    dft2(&label.grid),
                    self.cfg.gamma,
                    self.weight.clone(),
                )?;
                Ok((problem, Some((score, h))))
            }
        }
    }

    /// Retrains the filter against `response`. On solver divergence the
    /// previous filter is kept and `Ok(false)` is returned.
    pub fn train(&mut self, response: &ResponseMap) -> Result<(f64, f64, bool)> {
        let (problem, factor) = self.build_problem(Some(response))?;
        let (score, h) = factor.expect("response given");
        let mut init = self.filter.clone();
        init.reset_multiplier();
        let ok = match solve_filter(&problem, &init, &self.cfg.admm_settings()) {
            Ok((filter, _)) if filter.is_finite() => {
                self.filter = filter;
                true
            }
            Ok(_) | Err(SolverError::Diverged { .. }) => false,
            Err(e) => return Err(e.into()),
        };
        Ok((score, h, ok))
    }

    /// One full frame: detect, move, update the model, retrain.
    pub fn step(&mut self, frame: &Image) -> Result<(BoundingBox, FrameDiagnostics)> {
        let det = self.detect(frame)?;
        self.position = det.position;
        self.scale = det.scale;
        let sample = self.sample_spectra(frame, self.position, self.scale)?;
        update_model(&mut self.model, &sample, self.cfg.eta)?;
        let (score, h, ok) = self.train(&det.response)?;
        self.frame_index += 1;
        let diag = FrameDiagnostics {
            frame: self.frame_index,
            psrm: score,
            h,
            peak: det.response.peak_value(),
            scale: self.scale,
            solver_ok: ok,
        };
        self.prev_response = Some(det.response);
        Ok((self.bbox(), diag))
    }

    /// Training objective of the current filter on a problem.
    pub fn objective(&self, problem: &TrainingProblem) -> Result<f64> {
        Ok(solver::objective_value(problem, &self.filter.w)?)
    }

    pub fn label_cache(&self) -> &FixedLabelCache {
        &self.labels
    }
}

/// Convenience for tests and examples: the consistency map between the
/// current filter's response on `frame` and a detection response.
pub fn frame_consistency(tracker: &Tracker, frame: &Image, detection: &ResponseMap) -> Result<Grid2D> {
    let x_hat = tracker.sample_spectra(frame, tracker.position, tracker.scale)?;
    let target = tracker.response(&x_hat)?;
    Ok(consistency::consistency_map(&target, detection)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::num_complex::Complex64;

    fn texture(r: f64, c: f64) -> f32 {
        let v = (r * 0.31).sin() * (c * 0.23).cos() + (r * 0.11 + c * 0.17).sin() * 0.5 + ((r * c) * 0.002).cos() * 0.3;
        (0.5 + 0.25 * v) as f32
    }

    fn textured_frame(h: usize, w: usize, dy: f64, dx: f64) -> Image {
        Image::from_fn(h, w, 3, |r, c, k| {
            let v = texture(r as f64 - dy, c as f64 - dx);
            (v * (0.7 + 0.15 * k as f32)).clamp(0.0, 1.0)
        })
        .unwrap()
    }

    fn square_frame() -> Image {
        Image::from_fn(120, 120, 3, |r, c, _| {
            if (45..75).contains(&r) && (45..75).contains(&c) {
                1.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn bbox_helpers() {
        let b = BoundingBox::from_center(10.0, 20.0, 4.0, 6.0);
        assert_eq!(b, BoundingBox::new(8.0, 17.0, 4.0, 6.0));
        assert_eq!(b.center(), (10.0, 20.0));
        assert!(!BoundingBox::new(0.0, 0.0, 0.0, 1.0).is_valid());
    }

    #[test]
    fn model_update_examples() {
        let one = vec![Spectrum2D::new(2, 2, vec![Complex64::new(1.0, 0.0); 4]).unwrap()];
        let two = vec![Spectrum2D::new(2, 2, vec![Complex64::new(2.0, 0.0); 4]).unwrap()];
        let mut m = one.clone();
        update_model(&mut m, &two, 0.0).unwrap();
        assert_eq!(m, one);
        update_model(&mut m, &two, 1.0).unwrap();
        assert_eq!(m, two);
        let mut m = one.clone();
        update_model(&mut m, &two, 0.042).unwrap();
        assert!(m[0]
            .values()
            .iter()
            .all(|v| (v.re - 1.042).abs() < 1e-12 && v.im == 0.0));
        assert!(update_model(&mut m, &two, 1.5).is_err());
    }

    #[test]
    fn friendly_sizes() {
        assert_eq!(fft_friendly(38), 40);
        assert_eq!(fft_friendly(37), 36);
        assert_eq!(fft_friendly(3), 8);
        assert_eq!(fft_friendly(49), 50);
    }

    #[test]
    fn parabola_offsets() {
        assert_eq!(parabolic_offset(1.0, 2.0, 1.0), 0.0);
        assert!((parabolic_offset(1.0, 2.0, 1.5) - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(parabolic_offset(1.0, 1.0, 1.0), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrackerConfig::default().validate().is_ok());
        let bad = TrackerConfig {
            h_min: 2.0,
            ..TrackerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrackerConfig {
            eta: -0.1,
            ..TrackerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_degenerate_boxes() {
        let f = textured_frame(64, 64, 0.0, 0.0);
        let cfg = TrackerConfig::default();
        assert!(matches!(
            Tracker::init(&f, BoundingBox::new(10.0, 10.0, 1.0, 1.0), cfg.clone()),
            Err(TrackerError::DegenerateBox(_))
        ));
        assert!(matches!(
            Tracker::init(&f, BoundingBox::new(100.0, 10.0, 10.0, 10.0), cfg),
            Err(TrackerError::OutsideFrame { .. })
        ));
    }

    #[test]
    fn self_detection_is_stationary() {
        let f = textured_frame(160, 160, 0.0, 0.0);
        let t = Tracker::init(&f, BoundingBox::new(60.0, 60.0, 40.0, 40.0), TrackerConfig::default()).unwrap();
        let d = t.detect(&f).unwrap();
        assert!(d.offset_cells.0.abs() <= 1.0 && d.offset_cells.1.abs() <= 1.0);
        assert!((d.position.0 - 80.0).abs() < 0.5 && (d.position.1 - 80.0).abs() < 0.5);
        assert_eq!(d.scale_index, 2);
    }

    #[test]
    fn recovers_an_eight_pixel_shift() {
        let f0 = textured_frame(200, 200, 0.0, 0.0);
        let f1 = textured_frame(200, 200, 0.0, 8.0);
        let t = Tracker::init(&f0, BoundingBox::new(80.0, 80.0, 40.0, 40.0), TrackerConfig::default()).unwrap();
        let d = t.detect(&f1).unwrap();
        assert!((d.position.1 - 100.0 - 8.0).abs() <= 1.0, "x {}", d.position.1);
        assert!((d.position.0 - 100.0).abs() <= 1.0, "y {}", d.position.0);
    }

    /// Dense texture with periods of 6 to 14 px, zoomed by `zoom` about
    /// (100, 100).
    fn fine_frame(zoom: f64) -> Image {
        Image::from_fn(200, 200, 3, |r, c, k| {
            let (y, x) = ((r as f64 - 100.0) / zoom, (c as f64 - 100.0) / zoom);
            let mut v = 0.0;
            for (i, period) in [6.0, 7.5, 9.0, 11.0, 14.0].iter().enumerate() {
                let theta = 0.7 * i as f64 + 0.3;
                let f = std::f64::consts::TAU / period;
                v += (f * (y * theta.sin() + x * theta.cos()) + i as f64).sin();
            }
            (0.5 + 0.08 * v * (0.8 + 0.1 * k as f64)).clamp(0.0, 1.0) as f32
        })
        .unwrap()
    }

    #[test]
    fn zoomed_frame_selects_the_next_scale_up() {
        let cfg = TrackerConfig::default();
        let t = Tracker::init(&fine_frame(1.0), BoundingBox::new(80.0, 80.0, 40.0, 40.0), cfg.clone()).unwrap();
        let mid = cfg.scale_count / 2;
        assert_eq!(t.detect(&fine_frame(1.0)).unwrap().scale_index, mid);
        let d = t.detect(&fine_frame(cfg.scale_step)).unwrap();
        assert_eq!(d.scale_index, mid + 1);
        assert!((d.scale - cfg.scale_step).abs() < 1e-12);
    }

    #[test]
    fn square_target_has_positive_psr() {
        let f = square_frame();
        let t = Tracker::init(&f, BoundingBox::new(45.0, 45.0, 30.0, 30.0), TrackerConfig::default()).unwrap();
        let d = t.detect(&f).unwrap();
        let s = psrm(&d.response, 100.0, 0.15).unwrap();
        assert!(s.psr_part > 0.0);
        assert!(s.value > 100.0 * d.response.peak_value());
    }

    #[test]
    fn flat_response_gives_h_min() {
        let f = textured_frame(96, 96, 0.0, 0.0);
        let t = Tracker::init(&f, BoundingBox::new(30.0, 30.0, 30.0, 30.0), TrackerConfig::default()).unwrap();
        let (rows, cols) = t.cells();
        let flat = ResponseMap::new(Grid2D::zeros(rows, cols));
        let (score, h) = t.regulatory_factor(&flat).unwrap();
        assert_eq!(score, 0.0);
        assert_eq!(h, 0.6);
    }

    #[test]
    fn static_sequence_stays_put() {
        let f = textured_frame(120, 120, 0.0, 0.0);
        let bbox = BoundingBox::new(40.0, 40.0, 32.0, 32.0);
        let mut t = Tracker::init(&f, bbox, TrackerConfig::default()).unwrap();
        for _ in 0..9 {
            let (b, d) = t.step(&f).unwrap();
            let (cx, cy) = b.center();
            assert!(((cx - 56.0).powi(2) + (cy - 56.0).powi(2)).sqrt() <= 1.0);
            assert!((0.6..=1.2).contains(&d.h));
        }
        assert_eq!(t.frame_index(), 10);
    }

    #[test]
    fn training_lowers_the_objective() {
        let f0 = textured_frame(128, 128, 0.0, 0.0);
        let f1 = textured_frame(128, 128, 1.0, 2.0);
        let mut t = Tracker::init(&f0, BoundingBox::new(44.0, 44.0, 40.0, 40.0), TrackerConfig::default()).unwrap();
        let det = t.detect(&f1).unwrap();
        t.position = det.position;
        t.scale = det.scale;
        let sample = t.sample_spectra(&f1, t.position, t.scale).unwrap();
        update_model(&mut t.model, &sample, t.cfg.eta).unwrap();
        let (problem, _) = t.build_problem(Some(&det.response)).unwrap();
        let before = t.objective(&problem).unwrap();
        t.train(&det.response).unwrap();
        let after = t.objective(&problem).unwrap();
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn step_is_deterministic_and_leaves_frame_untouched() {
        let f0 = textured_frame(100, 100, 0.0, 0.0);
        let f1 = textured_frame(100, 100, 2.0, -1.0);
        let copy = f1.clone();
        let bbox = BoundingBox::new(35.0, 35.0, 30.0, 30.0);
        let mut a = Tracker::init(&f0, bbox, TrackerConfig::default()).unwrap();
        let mut b = Tracker::init(&f0, bbox, TrackerConfig::default()).unwrap();
        let ra = a.step(&f1).unwrap();
        let rb = b.step(&f1).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(f1, copy);
        assert!(ra.0.is_valid());
    }
}

//! Box, frame and mask types shared by every stage, plus the elementary
//! geometry (corner conversion, IoU).
//!
//! Coordinates are pixels with a top-left origin and y growing downward.
//! Pixel `(x, y)` covers the unit square `[x, x+1) × [y, y+1)` and is
//! considered inside a box when its center `(x + 0.5, y + 0.5)` is.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("degenerate box: width {width} and height {height} must both be positive")]
    Degenerate { width: f64, height: f64 },
    #[error("non-finite coordinate in box")]
    NonFinite,
    #[error("{what} = {value} is outside [0, 1]")]
    OutOfUnitRange { what: &'static str, value: f64 },
    #[error("expected {expected} class scores, found {found}")]
    ClassCount { expected: usize, found: usize },
    #[error("covariance is not symmetric: xy = {xy}, yx = {yx}")]
    Asymmetric { xy: f64, yx: f64 },
    #[error("{corner} covariance is not positive semi-definite")]
    NotPsd { corner: &'static str },
    #[error("class id {class_id} out of range for {classes} classes")]
    ClassOutOfRange { class_id: usize, classes: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask pixel ({x}, {y}) lies outside the {width}x{height} frame")]
    MaskOutOfFrame { x: u32, y: u32, width: u32, height: u32 },
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyFrame { width: u32, height: u32 },
}

fn check_unit(what: &'static str, value: f64) -> Result<(), GeomError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(GeomError::OutOfUnitRange { what, value })
    }
}

/// One detector output vector in center form.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub objectness: f64,
    pub class_scores: Vec<f64>,
}

impl RawBox {
    pub fn new(
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
        objectness: f64,
        class_scores: Vec<f64>,
    ) -> Result<Self, GeomError> {
        let b = Self {
            cx,
            cy,
            width,
            height,
            objectness,
            class_scores,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeomError> {
        if ![self.cx, self.cy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(GeomError::NonFinite);
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(GeomError::Degenerate {
                width: self.width,
                height: self.height,
            });
        }
        check_unit("objectness", self.objectness)?;
        for &s in &self.class_scores {
            check_unit("class score", s)?;
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_scores.len()
    }

    /// Converts the center/size layout into top-left and bottom-right corners.
    pub fn to_corner_form(&self) -> Result<BBox, GeomError> {
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(GeomError::Degenerate {
                width: self.width,
                height: self.height,
            });
        }
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        BBox::new(
            Corner::new(self.cx - hw, self.cy - hh),
            Corner::new(self.cx + hw, self.cy + hh),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: f64,
    pub y: f64,
}

impl Corner {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned box in corner form. Always satisfies `tl < br` on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    tl: Corner,
    br: Corner,
}

impl BBox {
    pub fn new(tl: Corner, br: Corner) -> Result<Self, GeomError> {
        if ![tl.x, tl.y, br.x, br.y].iter().all(|v| v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        if !(tl.x < br.x && tl.y < br.y) {
            return Err(GeomError::Degenerate {
                width: br.x - tl.x,
                height: br.y - tl.y,
            });
        }
        Ok(Self { tl, br })
    }

    pub fn from_xyxy(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, GeomError> {
        Self::new(Corner::new(x1, y1), Corner::new(x2, y2))
    }

    pub fn tl(&self) -> Corner {
        self.tl
    }

    pub fn br(&self) -> Corner {
        self.br
    }

    pub fn width(&self) -> f64 {
        self.br.x - self.tl.x
    }

    pub fn height(&self) -> f64 {
        self.br.y - self.tl.y
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// `(cx, cy, width, height)`.
    pub fn center_form(&self) -> (f64, f64, f64, f64) {
        (
            (self.tl.x + self.br.x) / 2.0,
            (self.tl.y + self.br.y) / 2.0,
            self.width(),
            self.height(),
        )
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.br.x.min(other.br.x) - self.tl.x.max(other.tl.x);
        let h = self.br.y.min(other.br.y) - self.tl.y.max(other.tl.y);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }

    /// True when every corner lies in `[0, width] × [0, height]`.
    pub fn inside_frame(&self, width: f64, height: f64) -> bool {
        self.tl.x >= 0.0 && self.tl.y >= 0.0 && self.br.x <= width && self.br.y <= height
    }

    /// Pixels whose centers lie inside the box, clipped to the frame.
    pub fn pixel_rect(&self, frame_width: u32, frame_height: u32) -> PixelRect {
        PixelRect::covering(self.tl.x, self.tl.y, self.br.x, self.br.y, frame_width, frame_height)
    }
}

/// Continuous-area intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Half-open rectangle of pixel indices `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    /// Pixels with centers in the closed region `[left, right] × [top, bottom]`,
    /// clipped to a `frame_width × frame_height` frame.
    pub fn covering(left: f64, top: f64, right: f64, bottom: f64, frame_width: u32, frame_height: u32) -> Self {
        let lo = |v: f64, max: u32| -> u32 { (v - 0.5).ceil().clamp(0.0, max as f64) as u32 };
        let hi = |v: f64, max: u32| -> u32 { ((v - 0.5).floor() + 1.0).clamp(0.0, max as f64) as u32 };
        let x0 = lo(left, frame_width);
        let y0 = lo(top, frame_height);
        let x1 = hi(right, frame_width).max(x0);
        let y1 = hi(bottom, frame_height).max(y0);
        Self { x0, y0, x1, y1 }
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn len(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) as usize * (self.y1 - self.y0) as usize
        }
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    /// Row-major iteration.
    pub fn pixels(&self) -> impl Iterator<Item = Pixel> + '_ {
        let (x0, x1) = (self.x0, self.x1);
        (self.y0..self.y1).flat_map(move |y| (x0..x1).map(move |x| Pixel { x, y }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Pixel {
    // field order gives row-major ordering
    pub y: u32,
    pub x: u32,
}

impl Pixel {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    pub fn center(&self) -> Corner {
        Corner::new(self.x as f64 + 0.5, self.y as f64 + 0.5)
    }
}

/// Symmetric 2×2 covariance of one corner, in pixels².
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CovMatrix2 {
    xx: f64,
    xy: f64,
    yy: f64,
}

impl CovMatrix2 {
    pub const ZERO: CovMatrix2 = CovMatrix2 {
        xx: 0.0,
        xy: 0.0,
        yy: 0.0,
    };

    /// Tolerance on the determinant for [`CovMatrix2::is_psd`].
    pub const PSD_TOL: f64 = 1e-9;

    /// Builds from all four entries, rejecting asymmetric input.
    pub fn new(xx: f64, xy: f64, yx: f64, yy: f64) -> Result<Self, GeomError> {
        if ![xx, xy, yx, yy].iter().all(|v| v.is_finite()) {
            return Err(GeomError::NonFinite);
        }
        let scale = xy.abs().max(yx.abs()).max(1.0);
        if (xy - yx).abs() > 1e-12 * scale {
            return Err(GeomError::Asymmetric { xy, yx });
        }
        Ok(Self { xx, xy, yy })
    }

    pub const fn symmetric(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub const fn diagonal(xx: f64, yy: f64) -> Self {
        Self { xx, xy: 0.0, yy }
    }

    pub fn xx(&self) -> f64 {
        self.xx
    }
    pub fn xy(&self) -> f64 {
        self.xy
    }
    pub fn yx(&self) -> f64 {
        self.xy
    }
    pub fn yy(&self) -> f64 {
        self.yy
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn is_zero(&self) -> bool {
        self.xx == 0.0 && self.xy == 0.0 && self.yy == 0.0
    }

    pub fn is_psd(&self) -> bool {
        self.xx >= 0.0 && self.yy >= 0.0 && self.det() >= -Self::PSD_TOL
    }

    pub fn max_abs_diff(&self, other: &CovMatrix2) -> f64 {
        (self.xx - other.xx)
            .abs()
            .max((self.xy - other.xy).abs())
            .max((self.yy - other.yy).abs())
    }
}

/// A fused probabilistic detection: mean corners, their covariances and
/// objectness-scaled label probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbBox {
    pub tl: Corner,
    pub br: Corner,
    pub cov_tl: CovMatrix2,
    pub cov_br: CovMatrix2,
    pub label_probs: Vec<f64>,
}

impl ProbBox {
    pub fn validate(&self) -> Result<(), GeomError> {
        BBox::new(self.tl, self.br)?;
        for (corner, c) in [("top-left", &self.cov_tl), ("bottom-right", &self.cov_br)] {
            if ![c.xx(), c.xy(), c.yy()].iter().all(|v| v.is_finite()) {
                return Err(GeomError::NonFinite);
            }
            if !c.is_psd() {
                return Err(GeomError::NotPsd { corner });
            }
        }
        for &p in &self.label_probs {
            check_unit("label probability", p)?;
        }
        Ok(())
    }

    pub fn bbox(&self) -> Result<BBox, GeomError> {
        BBox::new(self.tl, self.br)
    }

    pub fn num_classes(&self) -> usize {
        self.label_probs.len()
    }

    /// Index and value of the most probable class; `None` without classes.
    pub fn top_class(&self) -> Option<(usize, f64)> {
        self.label_probs
            .iter()
            .copied()
            .enumerate()
            .fold(None, |best, (i, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((i, p)),
            })
    }
}

/// Pixel set of one object, kept sorted row-major and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pixels: Vec<Pixel>,
}

impl Mask {
    pub fn from_pixels(mut pixels: Vec<Pixel>) -> Result<Self, GeomError> {
        if pixels.is_empty() {
            return Err(GeomError::EmptyMask);
        }
        pixels.sort_unstable();
        pixels.dedup();
        Ok(Self { pixels })
    }

    pub fn from_rect(rect: PixelRect) -> Result<Self, GeomError> {
        Self::from_pixels(rect.pixels().collect())
    }

    pub fn pixels(&self) -> &[Pixel] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, p: Pixel) -> bool {
        self.pixels.binary_search(&p).is_ok()
    }

    /// Tight continuous bounding box of the pixel squares.
    pub fn tight_bbox(&self) -> BBox {
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        for p in &self.pixels {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        BBox::from_xyxy(x0 as f64, y0 as f64, x1 as f64 + 1.0, y1 as f64 + 1.0)
            .expect("non-empty mask has a non-degenerate box")
    }

    /// Row runs as `(y, x_start, run_length)` triples in row-major order.
    pub fn to_runs(&self) -> Vec<(u32, u32, u32)> {
        let mut runs: Vec<(u32, u32, u32)> = Vec::new();
        for p in &self.pixels {
            match runs.last_mut() {
                Some((y, xs, len)) if *y == p.y && *xs + *len == p.x => *len += 1,
                _ => runs.push((p.y, p.x, 1)),
            }
        }
        runs
    }

    pub fn from_runs(runs: &[(u32, u32, u32)]) -> Result<Self, GeomError> {
        let pixels = runs
            .iter()
            .flat_map(|&(y, xs, len)| (xs..xs + len).map(move |x| Pixel { x, y }))
            .collect();
        Self::from_pixels(pixels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthObject {
    pub class_id: usize,
    pub bbox: BBox,
    pub mask: Mask,
}

impl GroundTruthObject {
    /// Object whose segment is every pixel of its box.
    pub fn box_shaped(class_id: usize, bbox: BBox, frame_width: u32, frame_height: u32) -> Result<Self, GeomError> {
        let mask = Mask::from_rect(bbox.pixel_rect(frame_width, frame_height))?;
        Ok(Self { class_id, bbox, mask })
    }

    /// Object with an explicit segment; the box is the segment's tight box.
    pub fn with_mask(class_id: usize, mask: Mask) -> Self {
        Self {
            class_id,
            bbox: mask.tight_bbox(),
            mask,
        }
    }

    /// Pixels counted as belonging to the ground-truth box.
    pub fn box_pixels(&self, frame_width: u32, frame_height: u32) -> PixelRect {
        self.bbox.pixel_rect(frame_width, frame_height)
    }

    pub fn validate(&self, frame_width: u32, frame_height: u32) -> Result<(), GeomError> {
        if self.mask.is_empty() {
            return Err(GeomError::EmptyMask);
        }
        for p in self.mask.pixels() {
            if p.x >= frame_width || p.y >= frame_height {
                return Err(GeomError::MaskOutOfFrame {
                    x: p.x,
                    y: p.y,
                    width: frame_width,
                    height: frame_height,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub ground_truths: Vec<GroundTruthObject>,
    pub detections: Vec<ProbBox>,
}

impl Frame {
    pub fn new(frame_id: impl Into<String>, width: u32, height: u32) -> Result<Self, GeomError> {
        if width == 0 || height == 0 {
            return Err(GeomError::EmptyFrame { width, height });
        }
        Ok(Self {
            frame_id: frame_id.into(),
            width,
            height,
            ground_truths: Vec::new(),
            detections: Vec::new(),
        })
    }
}

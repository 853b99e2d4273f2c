//! Filtering and format conversion: turning `N` MC-Dropout samples per
//! detector slot into fused probabilistic boxes.
//!
//! Samples of one slot are averaged first (Pre-NMS), suppression runs once
//! on the averaged boxes, and each survivor gets corner covariances from its
//! own samples.

use thiserror::Error;

use crate::geom::{BBox, CovMatrix2, GeomError, ProbBox, RawBox};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("a sample set needs at least one sample")]
    EmptySampleSet,
    #[error("sample {index} has {found} class scores, expected {expected}")]
    ClassCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sample set {index} has {found} samples, expected {expected}")]
    SampleCount {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("{what} threshold {value} is outside [0, 1]")]
    Threshold { what: &'static str, value: f64 },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// The `N` samples of one detection across MC-Dropout passes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<RawBox>,
}

impl SampleSet {
    pub fn new(samples: Vec<RawBox>) -> Result<Self, FusionError> {
        let first = samples.first().ok_or(FusionError::EmptySampleSet)?;
        let classes = first.num_classes();
        for (index, s) in samples.iter().enumerate() {
            if s.num_classes() != classes {
                return Err(FusionError::ClassCount {
                    index,
                    expected: classes,
                    found: s.num_classes(),
                });
            }
            s.validate()?;
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[RawBox] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.samples[0].num_classes()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub conf_threshold: f64,
    pub iou_threshold: f64,
    pub frame_width: u32,
    pub frame_height: u32,
}

impl FilterConfig {
    pub const DEFAULT_IOU_THRESHOLD: f64 = 0.6;

    pub fn new(
        conf_threshold: f64,
        iou_threshold: f64,
        frame_width: u32,
        frame_height: u32,
    ) -> Result<Self, FusionError> {
        let cfg = Self {
            conf_threshold,
            iou_threshold,
            frame_width,
            frame_height,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return Err(FusionError::Threshold {
                what: "confidence",
                value: self.conf_threshold,
            });
        }
        if !(0.0..=1.0).contains(&self.iou_threshold) {
            return Err(FusionError::Threshold {
                what: "IoU",
                value: self.iou_threshold,
            });
        }
        Ok(())
    }
}

/// Scalar compared against the confidence threshold: objectness times the
/// best class score.
pub fn confidence_of(b: &RawBox) -> f64 {
    let best = b.class_scores.iter().copied().fold(0.0_f64, f64::max);
    b.objectness * best
}

/// Runs the three suppression rules in order: confidence threshold, frame
/// boundary, then greedy NMS. Returns the surviving indices sorted by
/// descending confidence (ties by lower index).
pub fn suppress(boxes: &[RawBox], cfg: &FilterConfig) -> Vec<usize> {
    let (fw, fh) = (cfg.frame_width as f64, cfg.frame_height as f64);
    let mut candidates: Vec<(usize, f64, BBox)> = boxes
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            let conf = confidence_of(b);
            if conf < cfg.conf_threshold {
                return None;
            }
            let bbox = b.to_corner_form().ok()?;
            bbox.inside_frame(fw, fh).then_some((i, conf, bbox))
        })
        .collect();
    // stable sort keeps lower indices first among equal confidences
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut kept: Vec<(usize, BBox)> = Vec::with_capacity(candidates.len());
    for (i, _, bbox) in candidates {
        if kept.iter().all(|(_, k)| k.iou(&bbox) <= cfg.iou_threshold) {
            kept.push((i, bbox));
        }
    }
    kept.into_iter().map(|(i, _)| i).collect()
}

/// Componentwise mean of every field across the samples.
pub fn pre_nms_average(s: &SampleSet) -> RawBox {
    let n = s.len() as f64;
    let classes = s.num_classes();
    let mut acc = RawBox {
        cx: 0.0,
        cy: 0.0,
        width: 0.0,
        height: 0.0,
        objectness: 0.0,
        class_scores: vec![0.0; classes],
    };
    for b in s.samples() {
        acc.cx += b.cx;
        acc.cy += b.cy;
        acc.width += b.width;
        acc.height += b.height;
        acc.objectness += b.objectness;
        for (a, p) in acc.class_scores.iter_mut().zip(&b.class_scores) {
            *a += p;
        }
    }
    acc.cx /= n;
    acc.cy /= n;
    acc.width /= n;
    acc.height /= n;
    acc.objectness /= n;
    for a in &mut acc.class_scores {
        *a /= n;
    }
    acc
}

/// Sample covariances of the two corners, before PSD repair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerCovariances {
    pub tl: CovMatrix2,
    pub br: CovMatrix2,
    /// Set for single-sample sets, whose covariances are zero by definition.
    pub deterministic: bool,
}

/// Unbiased (`N - 1`) covariance of the top-left and bottom-right corners.
pub fn corner_covariances(s: &SampleSet) -> Result<CornerCovariances, FusionError> {
    if s.is_empty() {
        return Err(FusionError::EmptySampleSet);
    }
    if s.len() == 1 {
        return Ok(CornerCovariances {
            tl: CovMatrix2::ZERO,
            br: CovMatrix2::ZERO,
            deterministic: true,
        });
    }
    let corners: Vec<BBox> = s
        .samples()
        .iter()
        .map(RawBox::to_corner_form)
        .collect::<Result<_, _>>()?;
    let tl: Vec<(f64, f64)> = corners.iter().map(|b| (b.tl().x, b.tl().y)).collect();
    let br: Vec<(f64, f64)> = corners.iter().map(|b| (b.br().x, b.br().y)).collect();
    Ok(CornerCovariances {
        tl: sample_covariance(&tl),
        br: sample_covariance(&br),
        deterministic: false,
    })
}

fn sample_covariance(points: &[(f64, f64)]) -> CovMatrix2 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (dx, dy) = (x - mx, y - my);
        xx += dx * dx;
        xy += dx * dy;
        yy += dy * dy;
    }
    let d = n - 1.0;
    CovMatrix2::symmetric(xx / d, xy / d, yy / d)
}

/// Projects a symmetric matrix onto the PSD cone by zeroing negative
/// eigenvalues. PSD input is returned untouched.
pub fn psd_repair(m: CovMatrix2) -> CovMatrix2 {
    let (a, b, d) = (m.xx(), m.xy(), m.yy());
    let mean = 0.5 * (a + d);
    let radius = (0.5 * (a - d)).hypot(b);
    let hi = mean + radius;
    let lo = mean - radius;
    if lo >= 0.0 {
        return m;
    }
    if hi <= 0.0 {
        return CovMatrix2::ZERO;
    }
    // hi * P where P = (M - lo I) / (hi - lo) projects onto the eigenvector of hi
    let s = hi / (hi - lo);
    let (xx, xy, yy) = ((a - lo) * s, b * s, (d - lo) * s);
    CovMatrix2::symmetric(xx.max(0.0), xy, yy.max(0.0))
}

/// Builds the probabilistic box: corners from the mean box, label
/// probabilities scaled by objectness.
pub fn to_prob_box(mean: &RawBox, cov_tl: CovMatrix2, cov_br: CovMatrix2) -> Result<ProbBox, FusionError> {
    let bbox = mean.to_corner_form()?;
    Ok(ProbBox {
        tl: bbox.tl(),
        br: bbox.br(),
        cov_tl,
        cov_br,
        label_probs: mean.class_scores.iter().map(|p| p * mean.objectness).collect(),
    })
}

/// Result of fusing one frame: the boxes plus which input sets survived.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedFrame {
    pub boxes: Vec<ProbBox>,
    /// Index into the input sets for each entry of `boxes`.
    pub kept: Vec<usize>,
}

/// Stochastic path: average, suppress, then convert each survivor using
/// the covariances of its own sample set.
pub fn fuse_frame(sets: &[SampleSet], cfg: &FilterConfig) -> Result<FusedFrame, FusionError> {
    cfg.validate()?;
    if let Some(first) = sets.first() {
        let (n, c) = (first.len(), first.num_classes());
        for (index, s) in sets.iter().enumerate() {
            if s.len() != n {
                return Err(FusionError::SampleCount {
                    index,
                    expected: n,
                    found: s.len(),
                });
            }
            if s.num_classes() != c {
                return Err(FusionError::ClassCount {
                    index,
                    expected: c,
                    found: s.num_classes(),
                });
            }
        }
    }
    let means: Vec<RawBox> = sets.iter().map(pre_nms_average).collect();
    let kept = suppress(&means, cfg);
    let boxes = kept
        .iter()
        .map(|&i| {
            let covs = corner_covariances(&sets[i])?;
            to_prob_box(&means[i], psd_repair(covs.tl), psd_repair(covs.br))
        })
        .collect::<Result<_, _>>()?;
    Ok(FusedFrame { boxes, kept })
}

/// Deterministic path: suppression followed by conversion with zero
/// covariances.
pub fn fuse_deterministic(boxes: &[RawBox], cfg: &FilterConfig) -> Result<Vec<ProbBox>, FusionError> {
    cfg.validate()?;
    suppress(boxes, cfg)
        .into_iter()
        .map(|i| to_prob_box(&boxes[i], CovMatrix2::ZERO, CovMatrix2::ZERO))
        .collect()
}

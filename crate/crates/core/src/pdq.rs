//! Probability-based Detection Quality.
//!
//! Each detection is a spatial probability map over pixels: a pixel is
//! inside the detection when the top-left corner lies up-left of it and the
//! bottom-right corner lies down-right of it, each corner being Gaussian
//! with its own covariance. Against a ground-truth segment this gives a
//! foreground loss (missed object pixels) and a background loss (probability
//! spilled outside the object's box); spatial quality is `exp(-(fg + bg))`.
//! Label quality is the probability given to the true class. Their geometric
//! mean (pPDQ) drives an optimal one-to-one assignment per frame, and the
//! dataset score averages pPDQ over all TPs, FPs and FNs.
//!
//! Fixed choices:
//! - pixel probabilities are evaluated at pixel centers and clamped to
//!   `[PROB_EPS, 1 - PROB_EPS]` before taking logs;
//! - both losses are normalized by the segment size;
//! - the background support of a detection is the set of pixels with
//!   probability above `PROB_EPS` inside the mean box widened by
//!   `SUPPORT_SIGMAS` per-axis corner standard deviations, clipped to the frame;
//! - a detection that gives no segment pixel more than `PROB_EPS` has
//!   spatial quality 0.

use rayon::prelude::*;
use thiserror::Error;

use crate::assignment::max_weight_assignment;
use crate::geom::{Frame, GeomError, GroundTruthObject, Pixel, PixelRect, ProbBox};
use crate::normal::centered_cdf_pair;

pub const PROB_EPS: f64 = 1e-14;
pub const SUPPORT_SIGMAS: f64 = 3.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdqError {
    #[error("ground-truth class {class_id} out of range for a detection with {classes} classes")]
    ClassOutOfRange { class_id: usize, classes: usize },
    #[error("ground-truth mask is empty")]
    EmptyMask,
    #[error("frame {frame_id}: {source}")]
    Frame {
        frame_id: String,
        #[source]
        source: Box<PdqError>,
    },
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Qualities of one ground-truth/detection pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairQuality {
    pub label_q: f64,
    pub spatial_q: f64,
    pub ppdq: f64,
    pub fg_loss: f64,
    pub bg_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialQuality {
    pub spatial_q: f64,
    pub fg_loss: f64,
    pub bg_loss: f64,
}

/// Probability mass the detection puts on the ground-truth class, whatever
/// its rank.
pub fn label_quality(det: &ProbBox, gt_class: usize) -> Result<f64, PdqError> {
    det.label_probs.get(gt_class).copied().ok_or(PdqError::ClassOutOfRange {
        class_id: gt_class,
        classes: det.label_probs.len(),
    })
}

/// Geometric mean of label and spatial quality.
pub fn ppdq(label_q: f64, spatial_q: f64) -> f64 {
    (label_q * spatial_q).sqrt()
}

/// Unclamped `(p, 1 - p)` for a pixel being inside the detection.
///
/// The complement is assembled from tail terms, so it is accurate even when
/// `p` rounds to 1.
pub fn pixel_probability_pair(det: &ProbBox, pixel: Pixel) -> (f64, f64) {
    let c = pixel.center();
    let (a, qa) = centered_cdf_pair(c.x - det.tl.x, c.y - det.tl.y, &det.cov_tl);
    let (b, qb) = centered_cdf_pair(det.br.x - c.x, det.br.y - c.y, &det.cov_br);
    (a * b, (qa + a * qb).min(1.0))
}

/// Probability that `pixel` lies inside the detection, clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn pixel_probability(det: &ProbBox, pixel: Pixel) -> f64 {
    pixel_probability_pair(det, pixel).0.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Rectangle of pixels that can contribute to the background loss.
pub fn support_region(det: &ProbBox, frame_width: u32, frame_height: u32) -> PixelRect {
    let sd = |v: f64| v.max(0.0).sqrt() * SUPPORT_SIGMAS;
    PixelRect::covering(
        det.tl.x - sd(det.cov_tl.xx()),
        det.tl.y - sd(det.cov_tl.yy()),
        det.br.x + sd(det.cov_br.xx()),
        det.br.y + sd(det.cov_br.yy()),
        frame_width,
        frame_height,
    )
}

/// Pixel probabilities of one detection over its support region, computed
/// once and shared by every ground truth in the frame.
#[derive(Debug, Clone)]
pub struct DetectionMap<'a> {
    det: &'a ProbBox,
    support: PixelRect,
    values: Vec<(f64, f64)>,
}

impl<'a> DetectionMap<'a> {
    pub fn new(det: &'a ProbBox, frame_width: u32, frame_height: u32) -> Self {
        let support = support_region(det, frame_width, frame_height);
        let values = support.pixels().map(|p| pixel_probability_pair(det, p)).collect();
        Self { det, support, values }
    }

    pub fn support(&self) -> PixelRect {
        self.support
    }

    fn get(&self, p: Pixel) -> (f64, f64) {
        if self.support.contains(p) {
            let w = (self.support.x1 - self.support.x0) as usize;
            let idx = (p.y - self.support.y0) as usize * w + (p.x - self.support.x0) as usize;
            self.values[idx]
        } else {
            pixel_probability_pair(self.det, p)
        }
    }

    pub fn spatial_quality(
        &self,
        gt: &GroundTruthObject,
        frame_width: u32,
        frame_height: u32,
    ) -> Result<SpatialQuality, PdqError> {
        let mask = gt.mask.pixels();
        if mask.is_empty() {
            return Err(PdqError::EmptyMask);
        }
        let n = mask.len() as f64;

        let mut fg = 0.0;
        let mut touched = false;
        for &px in mask {
            let (p, _) = self.get(px);
            touched |= p > PROB_EPS;
            fg -= p.clamp(PROB_EPS, 1.0 - PROB_EPS).ln();
        }

        let gt_box = gt.box_pixels(frame_width, frame_height);
        let mut bg = 0.0;
        for (px, &(p, q)) in self.support.pixels().zip(&self.values) {
            if p > PROB_EPS && !gt_box.contains(px) {
                bg -= q.clamp(PROB_EPS, 1.0 - PROB_EPS).ln();
            }
        }

        let fg_loss = fg / n;
        let bg_loss = bg / n;
        let spatial_q = if touched { (-(fg_loss + bg_loss)).exp() } else { 0.0 };
        Ok(SpatialQuality {
            spatial_q,
            fg_loss,
            bg_loss,
        })
    }
}

/// Foreground/background losses and spatial quality of one pair.
pub fn spatial_quality(
    det: &ProbBox,
    gt: &GroundTruthObject,
    frame_width: u32,
    frame_height: u32,
) -> Result<SpatialQuality, PdqError> {
    DetectionMap::new(det, frame_width, frame_height).spatial_quality(gt, frame_width, frame_height)
}

pub fn pair_quality(
    det: &ProbBox,
    gt: &GroundTruthObject,
    frame_width: u32,
    frame_height: u32,
) -> Result<PairQuality, PdqError> {
    let map = DetectionMap::new(det, frame_width, frame_height);
    pair_quality_with(&map, gt, frame_width, frame_height)
}

fn pair_quality_with(
    map: &DetectionMap<'_>,
    gt: &GroundTruthObject,
    frame_width: u32,
    frame_height: u32,
) -> Result<PairQuality, PdqError> {
    let label_q = label_quality(map.det, gt.class_id)?;
    let s = map.spatial_quality(gt, frame_width, frame_height)?;
    Ok(PairQuality {
        label_q,
        spatial_q: s.spatial_q,
        ppdq: ppdq(label_q, s.spatial_q),
        fg_loss: s.fg_loss,
        bg_loss: s.bg_loss,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruePositive {
    pub gt_index: usize,
    pub det_index: usize,
    pub quality: PairQuality,
}

/// Assignment outcome of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTally {
    pub frame_id: String,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    /// Matched pairs in ground-truth order.
    pub matches: Vec<TruePositive>,
}

impl FrameTally {
    pub fn empty(frame_id: impl Into<String>) -> Self {
        Self {
            frame_id: frame_id.into(),
            n_tp: 0,
            n_fp: 0,
            n_fn: 0,
            matches: Vec::new(),
        }
    }

    pub fn ppdq_values(&self) -> Vec<f64> {
        self.matches.iter().map(|m| m.quality.ppdq).collect()
    }

    pub fn ppdq_sum(&self) -> f64 {
        self.matches.iter().map(|m| m.quality.ppdq).sum()
    }
}

/// Full pPDQ matrix of a frame, rows are ground truths.
pub fn quality_matrix(frame: &Frame) -> Result<Vec<Vec<PairQuality>>, PdqError> {
    let maps: Vec<DetectionMap<'_>> = frame
        .detections
        .iter()
        .map(|d| DetectionMap::new(d, frame.width, frame.height))
        .collect();
    frame
        .ground_truths
        .iter()
        .map(|gt| {
            maps.iter()
                .map(|m| pair_quality_with(m, gt, frame.width, frame.height))
                .collect()
        })
        .collect()
}

/// Optimal pPDQ assignment of one frame. Pairs assigned with pPDQ 0 count
/// as a false negative plus a false positive.
pub fn assign_frame(frame: &Frame) -> Result<FrameTally, PdqError> {
    let matrix = quality_matrix(frame).map_err(|e| PdqError::Frame {
        frame_id: frame.frame_id.clone(),
        source: Box::new(e),
    })?;
    let weights: Vec<Vec<f64>> = matrix.iter().map(|row| row.iter().map(|q| q.ppdq).collect()).collect();
    let assignment = max_weight_assignment(&weights);
    let matches: Vec<TruePositive> = assignment
        .iter()
        .enumerate()
        .filter_map(|(gt_index, det)| {
            let det_index = (*det)?;
            let quality = matrix[gt_index][det_index];
            (quality.ppdq > 0.0).then_some(TruePositive {
                gt_index,
                det_index,
                quality,
            })
        })
        .collect();
    let n_tp = matches.len();
    Ok(FrameTally {
        frame_id: frame.frame_id.clone(),
        n_tp,
        n_fp: frame.detections.len() - n_tp,
        n_fn: frame.ground_truths.len() - n_tp,
        matches,
    })
}

/// Assigns every frame in parallel; output order follows the input.
pub fn assign_frames(frames: &[Frame]) -> Result<Vec<FrameTally>, PdqError> {
    frames.par_iter().map(assign_frame).collect()
}

/// mAP recorded alongside PDQ, with the IoU threshold it was computed at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapScore {
    pub iou_threshold: f64,
    pub value: f64,
}

/// Dataset-level evaluation result.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub pdq: f64,
    /// Mean label quality over true positives.
    pub avg_label_q: f64,
    /// Mean spatial quality over true positives.
    pub avg_spatial_q: f64,
    pub n_tp: usize,
    pub n_fp: usize,
    pub n_fn: usize,
    pub map: Option<MapScore>,
    /// Per-frame tallies sorted by `frame_id`.
    pub frames: Vec<FrameTally>,
}

/// Sums pPDQ over all frames and divides by TP + FN + FP. Frames are
/// reduced in `frame_id` order so the result does not depend on input order.
pub fn pdq_score(frames: &[FrameTally]) -> EvalReport {
    let mut frames = frames.to_vec();
    frames.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));

    let (mut sum, mut label, mut spatial) = (0.0, 0.0, 0.0);
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for f in &frames {
        for m in &f.matches {
            sum += m.quality.ppdq;
            label += m.quality.label_q;
            spatial += m.quality.spatial_q;
        }
        tp += f.n_tp;
        fp += f.n_fp;
        fneg += f.n_fn;
    }
    let denom = tp + fp + fneg;
    let mean = |s: f64| if tp == 0 { 0.0 } else { s / tp as f64 };
    EvalReport {
        pdq: if denom == 0 { 0.0 } else { sum / denom as f64 },
        avg_label_q: mean(label),
        avg_spatial_q: mean(spatial),
        n_tp: tp,
        n_fp: fp,
        n_fn: fneg,
        map: None,
        frames,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{BBox, Corner, CovMatrix2, Mask};

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, cov: CovMatrix2, probs: &[f64]) -> ProbBox {
        ProbBox {
            tl: Corner::new(x1, y1),
            br: Corner::new(x2, y2),
            cov_tl: cov,
            cov_br: cov,
            label_probs: probs.to_vec(),
        }
    }

    fn gt(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize) -> GroundTruthObject {
        GroundTruthObject::box_shaped(class_id, BBox::from_xyxy(x1, y1, x2, y2).unwrap(), 64, 64).unwrap()
    }

    fn tally(id: &str, ppdqs: &[f64], fp: usize, fneg: usize) -> FrameTally {
        FrameTally {
            frame_id: id.into(),
            n_tp: ppdqs.len(),
            n_fp: fp,
            n_fn: fneg,
            matches: ppdqs
                .iter()
                .enumerate()
                .map(|(i, &q)| TruePositive {
                    gt_index: i,
                    det_index: i,
                    quality: PairQuality {
                        label_q: 1.0,
                        spatial_q: q * q,
                        ppdq: q,
                        fg_loss: 0.0,
                        bg_loss: 0.0,
                    },
                })
                .collect(),
        }
    }

    #[test]
    fn label_quality_examples() {
        let uniform = det(0.0, 0.0, 1.0, 1.0, CovMatrix2::ZERO, &[0.1; 10]);
        assert_eq!(label_quality(&uniform, 7).unwrap(), 0.1);
        let d = det(0.0, 0.0, 1.0, 1.0, CovMatrix2::ZERO, &[0.7, 0.2, 0.1]);
        assert_eq!(label_quality(&d, 1).unwrap(), 0.2);
        let zero = det(0.0, 0.0, 1.0, 1.0, CovMatrix2::ZERO, &[0.0, 0.0]);
        assert_eq!(label_quality(&zero, 0).unwrap(), 0.0);
        assert!(matches!(label_quality(&d, 3), Err(PdqError::ClassOutOfRange { .. })));
    }

    #[test]
    fn ppdq_examples() {
        assert_eq!(ppdq(1.0, 1.0), 1.0);
        assert_eq!(ppdq(0.0, 0.7), 0.0);
        assert_eq!(ppdq(1.0, 0.25), 0.5);
    }

    #[test]
    fn pixel_probability_indicator_cases() {
        let d = det(2.0, 2.0, 6.0, 6.0, CovMatrix2::ZERO, &[1.0]);
        assert_eq!(pixel_probability(&d, Pixel::new(3, 3)), 1.0 - PROB_EPS);
        assert_eq!(pixel_probability(&d, Pixel::new(6, 3)), PROB_EPS);
        assert_eq!(pixel_probability(&d, Pixel::new(1, 3)), PROB_EPS);
    }

    #[test]
    fn pixel_probability_deep_inside() {
        let sigma = 0.5;
        let d = det(
            0.0,
            0.0,
            20.0,
            20.0,
            CovMatrix2::diagonal(sigma * sigma, sigma * sigma),
            &[1.0],
        );
        // center 10.5 is 21 sigma from every edge
        assert!(pixel_probability(&d, Pixel::new(10, 10)) >= 1.0 - 1e-8);
        // 7 sigma from the nearest edge
        let p = pixel_probability(&d, Pixel::new(3, 10));
        assert!(p >= 1.0 - 1e-8, "{p}");
    }

    #[test]
    fn perfect_deterministic_box_scores_one() {
        let g = gt(10.0, 10.0, 20.0, 18.0, 0);
        let d = det(10.0, 10.0, 20.0, 18.0, CovMatrix2::ZERO, &[1.0]);
        let s = spatial_quality(&d, &g, 64, 64).unwrap();
        assert!(s.spatial_q >= 1.0 - 1e-10);
        assert_eq!(s.bg_loss, 0.0);
    }

    #[test]
    fn background_spill_costs_log_eps_per_pixel() {
        // 2x2 object, detection one column wider: 2 background pixels
        let g = gt(10.0, 10.0, 12.0, 12.0, 0);
        let d = det(10.0, 10.0, 13.0, 12.0, CovMatrix2::ZERO, &[1.0]);
        let s = spatial_quality(&d, &g, 64, 64).unwrap();
        let want_bg = 2.0 * -(PROB_EPS.ln()) / 4.0;
        assert!((s.bg_loss - want_bg).abs() < 1e-12, "{} vs {}", s.bg_loss, want_bg);
        assert!(s.spatial_q <= 1e-6);
    }

    #[test]
    fn disjoint_detection_has_zero_spatial_quality() {
        let g = gt(10.0, 10.0, 12.0, 12.0, 0);
        let d = det(30.0, 30.0, 34.0, 34.0, CovMatrix2::ZERO, &[1.0]);
        let q = pair_quality(&d, &g, 64, 64).unwrap();
        assert_eq!(q.spatial_q, 0.0);
        assert_eq!(q.ppdq, 0.0);
    }

    #[test]
    fn partial_mask_ignores_unlabelled_box_pixels() {
        // segment is the left column of a 2x2 box; the right column is
        // neither foreground nor background
        let mask = Mask::from_pixels(vec![Pixel::new(0, 0), Pixel::new(0, 1)]).unwrap();
        let mut g = GroundTruthObject::with_mask(0, mask);
        g.bbox = BBox::from_xyxy(0.0, 0.0, 2.0, 2.0).unwrap();
        let d = det(0.0, 0.0, 2.0, 2.0, CovMatrix2::ZERO, &[1.0]);
        let s = spatial_quality(&d, &g, 64, 64).unwrap();
        assert_eq!(s.bg_loss, 0.0);
        assert!(s.spatial_q >= 1.0 - 1e-10);
    }

    #[test]
    fn quality_invariants_hold() {
        let g = gt(10.0, 10.0, 22.0, 20.0, 1);
        let d = det(9.5, 10.5, 21.0, 20.5, CovMatrix2::symmetric(1.2, 0.3, 0.8), &[0.2, 0.7]);
        let q = pair_quality(&d, &g, 64, 64).unwrap();
        assert!((q.ppdq - (q.label_q * q.spatial_q).sqrt()).abs() < 1e-12);
        assert!((q.spatial_q - (-(q.fg_loss + q.bg_loss)).exp()).abs() < 1e-12);
        assert!(q.spatial_q > 0.0 && q.spatial_q < 1.0);
    }

    #[test]
    fn assign_frame_examples() {
        let empty = Frame::new("e", 64, 64).unwrap();
        let t = assign_frame(&empty).unwrap();
        assert_eq!((t.n_tp, t.n_fp, t.n_fn), (0, 0, 0));

        // label quality 0 gives pPDQ 0: not a match
        let mut f = Frame::new("z", 64, 64).unwrap();
        f.ground_truths.push(gt(10.0, 10.0, 20.0, 20.0, 0));
        f.detections
            .push(det(10.0, 10.0, 20.0, 20.0, CovMatrix2::ZERO, &[0.0, 1.0]));
        let t = assign_frame(&f).unwrap();
        assert_eq!((t.n_tp, t.n_fp, t.n_fn), (0, 1, 1));
    }

    #[test]
    fn pdq_score_examples() {
        let s = pdq_score(&[tally("a", &[1.0, 1.0], 0, 0)]);
        assert_eq!(s.pdq, 1.0);
        let s = pdq_score(&[tally("a", &[0.6], 1, 0)]);
        assert!((s.pdq - 0.3).abs() < 1e-15);
        let s = pdq_score(&[tally("a", &[], 0, 3)]);
        assert_eq!(s.pdq, 0.0);
        assert_eq!(pdq_score(&[]).pdq, 0.0);
    }

    #[test]
    fn pdq_score_is_order_independent_and_scale_consistent() {
        let a = tally("a", &[0.3, 0.9], 1, 2);
        let b = tally("b", &[0.55], 0, 1);
        let c = tally("c", &[0.1, 0.2, 0.7], 3, 0);
        let s1 = pdq_score(&[a.clone(), b.clone(), c.clone()]);
        let s2 = pdq_score(&[c.clone(), a.clone(), b.clone()]);
        assert_eq!(s1, s2);
        let doubled = pdq_score(&[a.clone(), b.clone(), c.clone(), a, b, c]);
        assert!((doubled.pdq - s1.pdq).abs() < 1e-12);
    }
}

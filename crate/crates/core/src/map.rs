//! Point-detection mean average precision, the deterministic counterpart
//! to PDQ. 101-point interpolated AP per class at a single IoU threshold.

use crate::geom::{BBox, Frame, ProbBox};

pub const DEFAULT_MAP_IOU: f64 = 0.5;

const RECALL_LEVELS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection2D {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

impl Detection2D {
    /// Collapses a probabilistic box to its mean box and most likely class.
    pub fn from_prob_box(det: &ProbBox) -> Option<Self> {
        let (class_id, confidence) = det.top_class()?;
        Some(Self {
            bbox: det.bbox().ok()?,
            class_id,
            confidence,
        })
    }
}

/// Detections and ground-truth boxes of one image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageDetections {
    pub detections: Vec<Detection2D>,
    /// `(class_id, box)` per ground-truth object.
    pub ground_truths: Vec<(usize, BBox)>,
}

impl ImageDetections {
    pub fn from_frame(frame: &Frame) -> Self {
        Self {
            detections: frame.detections.iter().filter_map(Detection2D::from_prob_box).collect(),
            ground_truths: frame.ground_truths.iter().map(|g| (g.class_id, g.bbox)).collect(),
        }
    }
}

/// Single-class AP on one image.
pub fn average_precision(dets: &[Detection2D], gts: &[BBox], iou_thr: f64) -> f64 {
    ap_over_images(&[(dets.to_vec(), gts.to_vec())], iou_thr)
}

/// Single-class AP with detections pooled across images; each detection can
/// only match ground truths of its own image.
pub fn ap_over_images(images: &[(Vec<Detection2D>, Vec<BBox>)], iou_thr: f64) -> f64 {
    let n_gt: usize = images.iter().map(|(_, g)| g.len()).sum();
    if n_gt == 0 {
        return 0.0;
    }
    let mut order: Vec<(usize, usize)> = images
        .iter()
        .enumerate()
        .flat_map(|(img, (d, _))| (0..d.len()).map(move |i| (img, i)))
        .collect();
    // stable: ties keep image then input order
    order.sort_by(|a, b| {
        let ca = images[a.0].0[a.1].confidence;
        let cb = images[b.0].0[b.1].confidence;
        cb.total_cmp(&ca)
    });

    let mut taken: Vec<Vec<bool>> = images.iter().map(|(_, g)| vec![false; g.len()]).collect();
    let mut hits = Vec::with_capacity(order.len());
    for (img, i) in order {
        let det = &images[img].0[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[img].1.iter().enumerate() {
            if taken[img][g] {
                continue;
            }
            let iou = det.bbox.iou(gt);
            if iou >= iou_thr && best.map_or(true, |(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[img][g] = true;
        }
        hits.push(best.is_some());
    }
    interpolated_ap(&hits, n_gt)
}

/// 101-point interpolated AP from a ranked hit list.
pub fn interpolated_ap(hits: &[bool], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(hits.len());
    let mut precision = Vec::with_capacity(hits.len());
    let mut tp = 0usize;
    for (rank, &hit) in hits.iter().enumerate() {
        tp += hit as usize;
        recall.push(tp as f64 / n_gt as f64);
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut total = 0.0;
    let mut idx = 0;
    for level in 0..RECALL_LEVELS {
        let r = level as f64 / (RECALL_LEVELS - 1) as f64;
        while idx < recall.len() && recall[idx] < r {
            idx += 1;
        }
        if idx < recall.len() {
            total += precision[idx];
        }
    }
    total / RECALL_LEVELS as f64
}

/// Per-class AP for every class with at least one ground truth.
pub fn per_class_ap(images: &[ImageDetections], iou_thr: f64) -> Vec<(usize, f64)> {
    let mut classes: Vec<usize> = images
        .iter()
        .flat_map(|im| im.ground_truths.iter().map(|(c, _)| *c))
        .collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let per_image: Vec<(Vec<Detection2D>, Vec<BBox>)> = images
                .iter()
                .map(|im| {
                    (
                        im.detections.iter().filter(|d| d.class_id == c).copied().collect(),
                        im.ground_truths
                            .iter()
                            .filter(|(gc, _)| *gc == c)
                            .map(|(_, b)| *b)
                            .collect(),
                    )
                })
                .collect();
            (c, ap_over_images(&per_image, iou_thr))
        })
        .collect()
}

/// Mean of per-class AP; 0 when there are no ground truths.
pub fn mean_ap(images: &[ImageDetections], iou_thr: f64) -> f64 {
    let aps = per_class_ap(images, iou_thr);
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().map(|(_, ap)| ap).sum::<f64>() / aps.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64) -> BBox {
        BBox::from_xyxy(x, y, x + 10.0, y + 10.0).unwrap()
    }

    fn d(b: BBox, class_id: usize, confidence: f64) -> Detection2D {
        Detection2D {
            bbox: b,
            class_id,
            confidence,
        }
    }

    /// Precision/recall oracle: for each recall level, scan every cut-off
    /// of the ranked list and keep the best precision reaching that recall.
    fn brute_force_ap(hits: &[bool], n_gt: usize) -> f64 {
        let mut total = 0.0;
        for level in 0..=100 {
            let r = level as f64 / 100.0;
            let mut best = 0.0_f64;
            for cut in 1..=hits.len() {
                let tp = hits[..cut].iter().filter(|h| **h).count();
                if tp as f64 / n_gt as f64 >= r {
                    best = best.max(tp as f64 / cut as f64);
                }
            }
            total += best;
        }
        total / 101.0
    }

    #[test]
    fn ap_examples() {
        let gts = [bx(0.0, 0.0), bx(50.0, 50.0)];
        let perfect = [d(gts[0], 0, 0.3), d(gts[1], 0, 0.9)];
        assert_eq!(average_precision(&perfect, &gts, 0.5), 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5), 0.0);

        let dets = [d(gts[0], 0, 0.9), d(bx(200.0, 200.0), 0, 0.8), d(gts[1], 0, 0.7)];
        let ap = average_precision(&dets, &gts, 0.5);
        let want = (51.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((ap - want).abs() < 1e-12);
        assert!((ap - 0.8350).abs() < 1e-4);
        assert!((brute_force_ap(&[true, false, true], 2) - want).abs() < 1e-12);

        assert_eq!(average_precision(&dets, &[], 0.5), 0.0);
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let gts = [bx(0.0, 0.0)];
        let dets = [d(gts[0], 0, 0.9), d(gts[0], 0, 0.8)];
        assert_eq!(average_precision(&dets, &gts, 0.5), 1.0);
        let dets = [d(gts[0], 0, 0.8), d(gts[0], 0, 0.9), d(bx(100.0, 0.0), 0, 0.95)];
        // ranked: FP, TP, FP -> precision 1/2 at full recall
        assert!((average_precision(&dets, &gts, 0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn map_examples() {
        let g0 = bx(0.0, 0.0);
        let single = ImageDetections {
            detections: vec![d(g0, 0, 0.9), d(bx(40.0, 0.0), 0, 0.95)],
            ground_truths: vec![(0, g0)],
        };
        let ap = average_precision(&single.detections, &[g0], 0.5);
        assert_eq!(mean_ap(std::slice::from_ref(&single), 0.5), ap);

        // class 1 has a ground truth but no detection
        let two = ImageDetections {
            detections: vec![d(g0, 0, 0.9)],
            ground_truths: vec![(0, g0), (1, bx(60.0, 60.0))],
        };
        assert!((mean_ap(&[two], 0.5) - 0.5).abs() < 1e-12);
        assert_eq!(mean_ap(&[], 0.5), 0.0);
    }

    #[test]
    fn map_is_mean_of_class_aps() {
        // class 0: AP 1; class 1: FP ranked first -> 0.5
        let g0 = bx(0.0, 0.0);
        let g1 = bx(30.0, 30.0);
        let im = ImageDetections {
            detections: vec![d(g0, 0, 0.9), d(g1, 1, 0.5), d(bx(80.0, 80.0), 1, 0.8)],
            ground_truths: vec![(0, g0), (1, g1)],
        };
        let aps = per_class_ap(std::slice::from_ref(&im), 0.5);
        assert_eq!(aps.len(), 2);
        assert!((mean_ap(&[im], 0.5) - 0.75).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn interpolation_matches_brute_force(hits in proptest::collection::vec(any::<bool>(), 0..40),
                                             extra in 0usize..5) {
            let n_gt = hits.iter().filter(|h| **h).count() + extra;
            prop_assume!(n_gt > 0);
            let fast = interpolated_ap(&hits, n_gt);
            prop_assert!((fast - brute_force_ap(&hits, n_gt)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&fast));
        }

        #[test]
        fn leading_false_positive_never_helps(hits in proptest::collection::vec(any::<bool>(), 1..30)) {
            let n_gt = hits.iter().filter(|h| **h).count().max(1);
            let mut with_fp = vec![false];
            with_fp.extend_from_slice(&hits);
            prop_assert!(interpolated_ap(&with_fp, n_gt) <= interpolated_ap(&hits, n_gt) + 1e-15);
        }

        #[test]
        fn trailing_detections_never_hurt(hits in proptest::collection::vec(any::<bool>(), 0..30),
                                         tail in proptest::collection::vec(any::<bool>(), 0..30)) {
            let n_gt = hits.iter().chain(&tail).filter(|h| **h).count().max(1);
            let mut longer = hits.clone();
            longer.extend_from_slice(&tail);
            prop_assert!(interpolated_ap(&longer, n_gt) >= interpolated_ap(&hits, n_gt) - 1e-15);
        }

        #[test]
        fn detection_order_is_irrelevant(
            confs in proptest::collection::hash_set(1u32..1000, 1..12),
            seed in any::<u64>(),
        ) {
            use rand::{seq::SliceRandom, Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let gts: Vec<BBox> = (0..6).map(|i| bx(i as f64 * 20.0, 0.0)).collect();
            let dets: Vec<Detection2D> = confs
                .iter()
                .map(|&c| {
                    let g = gts[rng.random_range(0..gts.len())];
                    let shift = rng.random_range(0.0..8.0);
                    let b = BBox::from_xyxy(g.tl().x + shift, 0.0, g.br().x + shift, 10.0).unwrap();
                    d(b, 0, c as f64 / 1000.0)
                })
                .collect();
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rng);
            prop_assert_eq!(average_precision(&dets, &gts, 0.5), average_precision(&shuffled, &gts, 0.5));
        }
    }
}

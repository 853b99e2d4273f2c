//! Dataset-level evaluation: PDQ with its label/spatial breakdown plus mAP.

use crate::geom::Frame;
use crate::map::{mean_ap, ImageDetections};
use crate::pdq::{assign_frames, pdq_score, EvalReport, MapScore, PdqError};

/// Evaluates every frame and reduces in `frame_id` order. mAP is computed at
/// `map_iou` and stored in the report.
pub fn evaluate(frames: &[Frame], map_iou: f64) -> Result<EvalReport, PdqError> {
    let tallies = assign_frames(frames)?;
    let mut report = pdq_score(&tallies);
    let mut sorted: Vec<&Frame> = frames.iter().collect();
    sorted.sort_by(|a, b| a.frame_id.cmp(&b.frame_id));
    let images: Vec<ImageDetections> = sorted.iter().map(|f| ImageDetections::from_frame(f)).collect();
    report.map = Some(MapScore {
        iou_threshold: map_iou,
        value: mean_ap(&images, map_iou),
    });
    Ok(report)
}

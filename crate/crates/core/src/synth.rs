//! Seeded synthetic scenes: non-overlapping ground-truth boxes and, for each
//! of them, `N` raw detector samples whose corners are the true corners plus
//! Gaussian noise. False positives, misses and weak (low-objectness) hits are
//! injected at configurable rates.
//!
//! Frame `f` draws from ChaCha8 seeded with `seed`, stream `f`. The corner
//! noise is drawn as standard normals and scaled by `sigma`, so scenes that
//! differ only in `sigma` share every other random choice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::fusion::{fuse_frame, FilterConfig, FusionError, SampleSet};
use crate::geom::{BBox, Frame, GeomError, GroundTruthObject, RawBox};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("frame {frame}: could not place {what} after {attempts} attempts")]
    Infeasible {
        frame: usize,
        what: &'static str,
        attempts: usize,
    },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

/// Smallest width or height a noisy sample may have.
const MIN_SAMPLE_SIZE: f64 = 0.5;
const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub frames: usize,
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub classes: usize,
    /// Ground-truth box sides are integers in `[min_size, max_size]`.
    pub min_size: u32,
    pub max_size: u32,
    /// Free pixels kept between ground-truth boxes and the frame border.
    pub margin: u32,
    /// Corner noise standard deviation in pixels.
    pub sigma: f64,
    /// Noise levels of [`severity_ladder`], mildest first.
    pub severity_sigmas: Vec<f64>,
    /// Samples per detection.
    pub samples: usize,
    /// The true class keeps `1 - label_noise·u` of the class mass, `u ~ U(0,1)`.
    pub label_noise: f64,
    pub objectness: [f64; 2],
    /// Probability that a detected object is a weak, low-objectness hit.
    pub weak_rate: f64,
    pub weak_objectness: [f64; 2],
    /// Probability per ground truth of one extra false positive.
    pub fp_rate: f64,
    pub fp_objectness: [f64; 2],
    /// Probability per ground truth of producing no detection.
    pub fn_rate: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 10,
            width: 64,
            height: 64,
            min_objects: 1,
            max_objects: 3,
            classes: 3,
            min_size: 8,
            max_size: 20,
            margin: 4,
            sigma: 1.0,
            severity_sigmas: vec![0.5, 1.0, 1.5, 2.0, 3.0],
            samples: 10,
            label_noise: 0.0,
            objectness: [1.0, 1.0],
            weak_rate: 0.0,
            weak_objectness: [0.15, 0.45],
            fp_rate: 0.0,
            fp_objectness: [0.05, 0.45],
            fn_rate: 0.0,
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<(), SynthError> {
    if !(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0) {
        return Err(SynthError::Spec(format!(
            "{name} must satisfy 0 <= lo <= hi <= 1, got {r:?}"
        )));
    }
    Ok(())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Spec(m));
        if self.width == 0 || self.height == 0 {
            return bad("frame size must be positive".into());
        }
        if self.min_objects > self.max_objects {
            return bad("min_objects exceeds max_objects".into());
        }
        if self.classes == 0 {
            return bad("classes must be at least 1".into());
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad("need 1 <= min_size <= max_size".into());
        }
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if let Some(s) = self.severity_sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
            return bad(format!("severity sigma must be finite and >= 0, got {s}"));
        }
        for (name, v) in [
            ("label_noise", self.label_noise),
            ("weak_rate", self.weak_rate),
            ("fp_rate", self.fp_rate),
            ("fn_rate", self.fn_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        check_range("objectness", self.objectness)?;
        check_range("weak_objectness", self.weak_objectness)?;
        check_range("fp_objectness", self.fp_objectness)?;
        let need = self.max_size + 2 * self.margin;
        if need > self.width || need > self.height {
            return bad(format!(
                "a {}px box with {}px margins does not fit a {}x{} frame",
                self.max_size, self.margin, self.width, self.height
            ));
        }
        Ok(())
    }
}

/// One generated frame: ground truth plus one raw sample set per detection.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub frame_id: String,
    pub width: u32,
    pub height: u32,
    pub ground_truths: Vec<GroundTruthObject>,
    pub sample_sets: Vec<SampleSet>,
}

impl SynthFrame {
    /// Runs the fusion filter and attaches the result to the ground truth.
    pub fn fuse(&self, conf_threshold: f64, iou_threshold: f64) -> Result<Frame, SynthError> {
        let cfg = FilterConfig::new(conf_threshold, iou_threshold, self.width, self.height)?;
        let fused = fuse_frame(&self.sample_sets, &cfg)?;
        Ok(Frame {
            frame_id: self.frame_id.clone(),
            width: self.width,
            height: self.height,
            ground_truths: self.ground_truths.clone(),
            detections: fused.boxes,
        })
    }
}

/// Fuses every frame of a scene.
pub fn fuse_scene(scene: &[SynthFrame], conf_threshold: f64, iou_threshold: f64) -> Result<Vec<Frame>, SynthError> {
    scene
        .par_iter()
        .map(|f| f.fuse(conf_threshold, iou_threshold))
        .collect()
}

pub fn frame_id(index: usize) -> String {
    format!("frame_{index:06}")
}

/// Generates `spec.frames` frames, in parallel, identically for equal specs.
pub fn generate(spec: &SceneSpec) -> Result<Vec<SynthFrame>, SynthError> {
    spec.validate()?;
    (0..spec.frames)
        .into_par_iter()
        .map(|f| generate_frame(spec, f))
        .collect()
}

/// One scene per entry of `spec.severity_sigmas`, sharing all randomness
/// except the noise scale.
pub fn severity_ladder(spec: &SceneSpec) -> Result<Vec<Vec<SynthFrame>>, SynthError> {
    let mut sigmas = spec.severity_sigmas.clone();
    if sigmas.windows(2).any(|w| w[1] < w[0]) {
        return Err(SynthError::Spec(format!(
            "severity_sigmas must be non-decreasing, got {sigmas:?}"
        )));
    }
    sigmas
        .drain(..)
        .map(|sigma| generate(&SceneSpec { sigma, ..spec.clone() }))
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        // still consume a draw so the stream layout is fixed
        let _: f64 = rng.random();
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn disjoint(a: &BBox, b: &BBox, gap: f64) -> bool {
    a.br().x + gap <= b.tl().x || b.br().x + gap <= a.tl().x || a.br().y + gap <= b.tl().y || b.br().y + gap <= a.tl().y
}

fn place_box(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    taken: &[BBox],
    frame: usize,
    what: &'static str,
) -> Result<BBox, SynthError> {
    let m = spec.margin;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let w = rng.random_range(spec.min_size..=spec.max_size);
        let h = rng.random_range(spec.min_size..=spec.max_size);
        let x = rng.random_range(m..=spec.width - m - w);
        let y = rng.random_range(m..=spec.height - m - h);
        let b = BBox::from_xyxy(x as f64, y as f64, (x + w) as f64, (y + h) as f64)?;
        if taken.iter().all(|t| disjoint(&b, t, m as f64)) {
            return Ok(b);
        }
    }
    Err(SynthError::Infeasible {
        frame,
        what,
        attempts: PLACEMENT_ATTEMPTS,
    })
}

fn class_scores(rng: &mut ChaCha8Rng, spec: &SceneSpec, class_id: usize) -> Vec<f64> {
    let u: f64 = rng.random();
    let main = 1.0 - spec.label_noise * u;
    let c = spec.classes;
    let mut scores = vec![if c > 1 { (1.0 - main) / (c - 1) as f64 } else { 0.0 }; c];
    scores[class_id] = if c > 1 { main } else { 1.0 };
    scores
}

fn noisy_samples(
    rng: &mut ChaCha8Rng,
    spec: &SceneSpec,
    b: &BBox,
    objectness: f64,
    scores: &[f64],
) -> Result<SampleSet, SynthError> {
    let samples = (0..spec.samples)
        .map(|_| {
            let mut z = [0.0f64; 4];
            for v in &mut z {
                *v = rng.sample(StandardNormal);
            }
            let x1 = b.tl().x + spec.sigma * z[0];
            let y1 = b.tl().y + spec.sigma * z[1];
            let x2 = (b.br().x + spec.sigma * z[2]).max(x1 + MIN_SAMPLE_SIZE);
            let y2 = (b.br().y + spec.sigma * z[3]).max(y1 + MIN_SAMPLE_SIZE);
            RawBox::new(
                (x1 + x2) / 2.0,
                (y1 + y2) / 2.0,
                x2 - x1,
                y2 - y1,
                objectness,
                scores.to_vec(),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SampleSet::new(samples)?)
}

fn generate_frame(spec: &SceneSpec, index: usize) -> Result<SynthFrame, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);

    let n_objects = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut boxes = Vec::with_capacity(n_objects);
    let mut ground_truths = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let b = place_box(&mut rng, spec, &boxes, index, "ground truth")?;
        let class_id = rng.random_range(0..spec.classes);
        boxes.push(b);
        ground_truths.push(GroundTruthObject::box_shaped(class_id, b, spec.width, spec.height)?);
    }

    let mut sample_sets = Vec::new();
    for gt in &ground_truths {
        let missed = rng.random_bool(spec.fn_rate);
        let weak = rng.random_bool(spec.weak_rate);
        let objectness = if weak {
            uniform(&mut rng, spec.weak_objectness)
        } else {
            uniform(&mut rng, spec.objectness)
        };
        let scores = class_scores(&mut rng, spec, gt.class_id);
        let set = noisy_samples(&mut rng, spec, &gt.bbox, objectness, &scores)?;
        if !missed {
            sample_sets.push(set);
        }
    }

    let n_fp = (0..ground_truths.len())
        .filter(|_| rng.random_bool(spec.fp_rate))
        .count();
    for _ in 0..n_fp {
        // false positives avoid the ground truth but may overlap each other
        let b = place_box(&mut rng, spec, &boxes, index, "false positive")?;
        let class_id = rng.random_range(0..spec.classes);
        let objectness = uniform(&mut rng, spec.fp_objectness);
        let scores = class_scores(&mut rng, spec, class_id);
        sample_sets.push(noisy_samples(&mut rng, spec, &b, objectness, &scores)?);
    }

    Ok(SynthFrame {
        frame_id: frame_id(index),
        width: spec.width,
        height: spec.height,
        ground_truths,
        sample_sets,
    })
}

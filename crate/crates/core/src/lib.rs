//! Post-processing and evaluation for probabilistic object detection.
//!
//! Monte-Carlo box samples are fused into Gaussian-cornered detections
//! ([`fusion`]), scored with PDQ ([`pdq`]) and mAP ([`map`]), and
//! aggregated over corruption grids ([`robustness`]). [`sampler`] holds the
//! cached MC-Dropout sampler and its benchmark, [`synth`] a seeded scene
//! generator and [`io`] the text formats used by the command-line tool.

pub mod assignment;
pub mod eval;
pub mod fusion;
pub mod geom;
pub mod io;
pub mod map;
pub mod normal;
pub mod pdq;
pub mod robustness;
pub mod sampler;
pub mod synth;

pub use eval::evaluate;
pub use fusion::{fuse_frame, FilterConfig, FusedFrame, FusionError, SampleSet};
pub use geom::{
    BBox, Corner, CovMatrix2, Frame, GeomError, GroundTruthObject, Mask, Pixel, PixelRect, ProbBox, RawBox,
};
pub use map::{Detection2D, DEFAULT_MAP_IOU};
pub use pdq::{EvalReport, FrameTally, MapScore, PairQuality, PdqError};
pub use robustness::{Metric, PerformanceGrid, RpcError};

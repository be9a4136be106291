//! Blastomere boundary detection in embryo micrographs.
//!
//! Pipeline: multiscale ridge edges, curve tracing and clustering, inner zona
//! estimation, FFT-correlated ellipse hypotheses and greedy compliance-driven
//! selection. Evaluation against polygon ground truth and a synthetic scene
//! generator are included.
//!
//! Everything numeric is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar to `f64` or `f32`.

pub mod clustering;
pub mod config;
pub mod detector;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod hypothesis;
pub mod image;
pub mod scalar;
pub mod synth;
pub mod vesselness;
pub mod zp;

pub use config::PipelineConfig;
pub use detector::{detect_blastomeres, detect_edges, Detection, DetectionRecord, DetectionReport, DetectionResult};
pub use error::{Error, Result};
pub use evaluation::{embryo_report, BatchReport, EvalOptions, EvalReport, GroundTruth, RegionMask};
pub use geometry::{EllipseModel, Point2};
pub use image::GrayImage;
pub use scalar::Real;
pub use synth::{generate_embryo, SynthEmbryo, SynthSpec};
pub use vesselness::EdgeMap;
pub use zp::ZpModel;

pub type Point = Point2<f64>;
pub type Ellipse = EllipseModel<f64>;
pub type Image = GrayImage<f64>;
pub type Zona = ZpModel<f64>;
pub type Blastomere = Detection<f64>;
pub type Detections = DetectionResult<f64>;

pub type PointF32 = Point2<f32>;
pub type EllipseF32 = EllipseModel<f32>;
pub type ImageF32 = GrayImage<f32>;
pub type ZonaF32 = ZpModel<f32>;
pub type BlastomereF32 = Detection<f32>;
pub type DetectionsF32 = DetectionResult<f32>;

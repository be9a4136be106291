//! Pipeline configuration and its flat `section.key = value` text form.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::clustering::CoAssociation;
use crate::error::{Error, Result};
use crate::hypothesis::RegionConstants;
use crate::scalar::Real;
use crate::zp::ZpParams;

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConfig {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub scales: usize,
    pub alpha: f64,
    /// `None` picks half the maximum structureness of the image.
    pub beta: Option<f64>,
    pub low: f64,
    pub high: f64,
    pub min_segment_len: usize,
    pub border_margin: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub epsilon: f64,
    pub slope_gate: f64,
    pub centroid_gate: f64,
    pub max_gap: f64,
    pub tangent_window: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZpConfig {
    pub beams: usize,
    pub max_rounds: usize,
    pub reject_factor: f64,
    pub residual_floor: f64,
    pub vertex_tolerance: f64,
    pub centroid_tolerance: f64,
    pub contour_samples: usize,
    /// Beam origin; `None` uses the image centre.
    pub center: Option<(f64, f64)>,
    /// Use the inscribed image ellipse when no ZP is found.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisConfig {
    pub lower: f64,
    pub upper: f64,
    pub slack: f64,
    pub eta_few: f64,
    pub eta_many: f64,
    pub many_from: usize,
    pub axis_steps: usize,
    pub rotations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub top_k: usize,
    pub compliance_floor: f64,
    pub normal_window: usize,
    pub normal_slack: f64,
    pub angle_gate: f64,
    pub removal_tolerance: f64,
    pub magnitude_floor: f64,
    pub gradient_sigma: f64,
    pub sample_spacing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub oq_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub edges: EdgeConfig,
    pub clustering: ClusterConfig,
    pub zp: ZpConfig,
    pub hypothesis: HypothesisConfig,
    pub detector: DetectorConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            edges: EdgeConfig {
                sigma_min: 1.0,
                sigma_max: 5.0625,
                scales: 5,
                alpha: 0.5,
                beta: None,
                low: 0.05,
                high: 0.15,
                min_segment_len: 10,
                border_margin: None,
            },
            clustering: ClusterConfig {
                epsilon: 2.0,
                slope_gate: PI / 8.0,
                centroid_gate: 0.25,
                max_gap: 15.0,
                tangent_window: 8,
            },
            zp: ZpConfig {
                beams: 360,
                max_rounds: 5,
                reject_factor: 2.0,
                residual_floor: 0.5,
                vertex_tolerance: 0.02,
                centroid_tolerance: 0.10,
                contour_samples: 720,
                center: None,
                fallback: false,
            },
            hypothesis: HypothesisConfig {
                lower: 0.7,
                upper: 1.0,
                slack: 0.15,
                eta_few: 1.6,
                eta_many: 1.3,
                many_from: 6,
                axis_steps: 8,
                rotations: 18,
            },
            detector: DetectorConfig {
                top_k: 40,
                compliance_floor: 0.15,
                normal_window: 5,
                normal_slack: 5.0,
                angle_gate: PI / 16.0,
                removal_tolerance: 3.0,
                magnitude_floor: 1e-6,
                gradient_sigma: 1.0,
                sample_spacing: 1.0,
            },
            eval: EvalConfig { oq_threshold: 0.7 },
        }
    }
}

trait ConfigValue: Sized {
    fn render(&self) -> String;
    fn parse(s: &str) -> std::result::Result<Self, String>;
}

impl ConfigValue for f64 {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a number, got `{s}`"))
    }
}

impl ConfigValue for usize {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected a non-negative integer, got `{s}`"))
    }
}

impl ConfigValue for bool {
    fn render(&self) -> String {
        self.to_string()
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        s.parse().map_err(|_| format!("expected true or false, got `{s}`"))
    }
}

impl ConfigValue for Option<f64> {
    fn render(&self) -> String {
        self.map_or_else(|| "none".to_string(), |v| v.to_string())
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s == "none" || s == "auto" {
            Ok(None)
        } else {
            f64::parse(s).map(Some)
        }
    }
}

impl ConfigValue for Option<(f64, f64)> {
    fn render(&self) -> String {
        self.map_or_else(|| "none".to_string(), |(x, y)| format!("{x},{y}"))
    }
    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            return Ok(None);
        }
        let (x, y) = s.split_once(',').ok_or_else(|| format!("expected `x,y`, got `{s}`"))?;
        Ok(Some((f64::parse(x.trim())?, f64::parse(y.trim())?)))
    }
}

macro_rules! config_fields {
    ($($key:literal => $($field:ident).+;)*) => {
        impl PipelineConfig {
            /// `(key, value)` pairs in file order.
            pub fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, ConfigValue::render(&self.$($field).+))),*]
            }

            fn assign(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $($key => self.$($field).+ = ConfigValue::parse(value)?,)*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }
        }
    };
}

config_fields! {
    "edges.sigma_min" => edges.sigma_min;
    "edges.sigma_max" => edges.sigma_max;
    "edges.scales" => edges.scales;
    "edges.alpha" => edges.alpha;
    "edges.beta" => edges.beta;
    "edges.low" => edges.low;
    "edges.high" => edges.high;
    "edges.min_segment_len" => edges.min_segment_len;
    "edges.border_margin" => edges.border_margin;
    "clustering.epsilon" => clustering.epsilon;
    "clustering.slope_gate" => clustering.slope_gate;
    "clustering.centroid_gate" => clustering.centroid_gate;
    "clustering.max_gap" => clustering.max_gap;
    "clustering.tangent_window" => clustering.tangent_window;
    "zp.beams" => zp.beams;
    "zp.max_rounds" => zp.max_rounds;
    "zp.reject_factor" => zp.reject_factor;
    "zp.residual_floor" => zp.residual_floor;
    "zp.vertex_tolerance" => zp.vertex_tolerance;
    "zp.centroid_tolerance" => zp.centroid_tolerance;
    "zp.contour_samples" => zp.contour_samples;
    "zp.center" => zp.center;
    "zp.fallback" => zp.fallback;
    "hypothesis.lower" => hypothesis.lower;
    "hypothesis.upper" => hypothesis.upper;
    "hypothesis.slack" => hypothesis.slack;
    "hypothesis.eta_few" => hypothesis.eta_few;
    "hypothesis.eta_many" => hypothesis.eta_many;
    "hypothesis.many_from" => hypothesis.many_from;
    "hypothesis.axis_steps" => hypothesis.axis_steps;
    "hypothesis.rotations" => hypothesis.rotations;
    "detector.top_k" => detector.top_k;
    "detector.compliance_floor" => detector.compliance_floor;
    "detector.normal_window" => detector.normal_window;
    "detector.normal_slack" => detector.normal_slack;
    "detector.angle_gate" => detector.angle_gate;
    "detector.removal_tolerance" => detector.removal_tolerance;
    "detector.magnitude_floor" => detector.magnitude_floor;
    "detector.gradient_sigma" => detector.gradient_sigma;
    "detector.sample_spacing" => detector.sample_spacing;
    "eval.oq_threshold" => eval.oq_threshold;
}

impl PipelineConfig {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = "";
        for (key, value) in self.entries() {
            let s = key.split('.').next().unwrap_or("");
            if s != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                section = s;
            }
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Parses a config file; keys not present keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Config { line: i + 1, reason: "expected `key = value`".into() })?;
            cfg.assign(key.trim(), value.trim()).map_err(|reason| Error::Config { line: i + 1, reason })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Err(Error::Config { line: 0, reason: reason.to_string() });
        let e = &self.edges;
        if !(e.sigma_min > 0.0 && e.sigma_max >= e.sigma_min && e.scales >= 1) {
            return bad("scale ladder needs 0 < sigma_min <= sigma_max and at least one scale");
        }
        if !(e.alpha > 0.0) || e.beta.is_some_and(|b| !(b > 0.0)) {
            return bad("Frangi sensitivities must be positive");
        }
        if !(0.0 < e.low && e.low <= e.high && e.high <= 1.0) {
            return bad("hysteresis needs 0 < low <= high <= 1");
        }
        let c = &self.clustering;
        if !(c.epsilon > 0.0 && c.slope_gate > 0.0 && c.centroid_gate > 0.0 && c.max_gap > 0.0 && c.tangent_window > 0) {
            return bad("clustering gates must be positive");
        }
        let z = &self.zp;
        if !(z.beams >= 8 && z.reject_factor > 0.0 && z.vertex_tolerance > 0.0 && z.centroid_tolerance > 0.0 && z.contour_samples >= 8) {
            return bad("ZP gates must be positive");
        }
        let h = &self.hypothesis;
        if !(h.lower > 0.0 && h.upper > 0.0 && h.slack >= 0.0 && h.eta_few > 1.0 && h.eta_many > 1.0) {
            return bad("size band constants out of range");
        }
        if h.axis_steps == 0 || h.rotations == 0 {
            return bad("axis grid and rotation count must be positive");
        }
        let d = &self.detector;
        if d.top_k == 0 || d.normal_window % 2 == 0 {
            return bad("top_k must be positive and the normal window odd");
        }
        if !(0.0..=1.0).contains(&d.compliance_floor) {
            return bad("compliance floor must lie in [0, 1]");
        }
        if !(d.normal_slack >= 0.0 && d.angle_gate > 0.0 && d.removal_tolerance >= 0.0 && d.gradient_sigma > 0.0 && d.sample_spacing > 0.0) {
            return bad("detector gates must be positive");
        }
        if !(0.0..=1.0).contains(&self.eval.oq_threshold) {
            return bad("OQ threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn zp_params(&self) -> ZpParams {
        let z = &self.zp;
        ZpParams {
            beams: z.beams,
            max_rounds: z.max_rounds,
            reject_factor: z.reject_factor,
            residual_floor: z.residual_floor,
            vertex_tolerance: z.vertex_tolerance,
            centroid_tolerance: z.centroid_tolerance,
            contour_samples: z.contour_samples,
        }
    }

    pub fn region_constants(&self) -> RegionConstants {
        let h = &self.hypothesis;
        RegionConstants {
            lower: h.lower,
            upper: h.upper,
            slack: h.slack,
            eta_few: h.eta_few,
            eta_many: h.eta_many,
            many_from: h.many_from,
        }
    }

    pub fn co_association<T: Real>(&self) -> CoAssociation<T> {
        let c = &self.clustering;
        CoAssociation {
            slope_gate: T::of(c.slope_gate),
            centroid_gate: T::of(c.centroid_gate),
            max_gap: T::of(c.max_gap),
            tangent_window: c.tangent_window,
        }
    }
}

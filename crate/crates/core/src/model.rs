//! Fibers, their segment decomposition, and synthetic bundle generation.
//!
//! A [`Fiber`] is an ordered 3D polyline (mm) with one scalar signal value per
//! vertex. Kernel evaluations consume the [`SegmentedFiber`] form: per-segment
//! centers, tangent vectors, lengths, and center signal values.

use nalgebra::{Point3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Segments shorter than this (mm) are dropped at construction.
pub const DEGENERATE_SEGMENT_LENGTH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("fiber {id}: need at least 2 points, got {got}")]
    TooFewPoints { id: u64, got: usize },
    #[error("fiber {id}: {points} points but {signal} signal values")]
    SignalLengthMismatch { id: u64, points: usize, signal: usize },
    #[error("fiber {id}: non-finite coordinate or signal value")]
    NonFinite { id: u64 },
    #[error("fiber {id}: every segment is degenerate")]
    AllSegmentsDegenerate { id: u64 },
    #[error("invalid synthetic bundle spec: {0}")]
    InvalidSpec(String),
}

/// An ordered 3D polyline with a scalar signal value at every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Fiber {
    id: u64,
    points: Vec<Point3<f64>>,
    signal: Vec<f64>,
}

impl Fiber {
    /// Validates the polyline: at least 2 points, one signal value per point,
    /// everything finite.
    pub fn new(id: u64, points: Vec<Point3<f64>>, signal: Vec<f64>) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::TooFewPoints {
                id,
                got: points.len(),
            });
        }
        if signal.len() != points.len() {
            return Err(ModelError::SignalLengthMismatch {
                id,
                points: points.len(),
                signal: signal.len(),
            });
        }
        let coords_finite = points.iter().all(|p| p.coords.iter().all(|c| c.is_finite()));
        if !coords_finite || !signal.iter().all(|s| s.is_finite()) {
            return Err(ModelError::NonFinite { id });
        }
        Ok(Self { id, points, signal })
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn signal(&self) -> &[f64] {
        &self.signal
    }

    /// Vertex count.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least 2 points by construction
    }

    /// Same polyline traversed backwards, signal reversed consistently.
    pub fn reversed(&self) -> Fiber {
        let mut points = self.points.clone();
        let mut signal = self.signal.clone();
        points.reverse();
        signal.reverse();
        Fiber {
            id: self.id,
            points,
            signal,
        }
    }

    /// Rigid translation of every vertex.
    pub fn translated(&self, offset: Vector3<f64>) -> Fiber {
        Fiber {
            id: self.id,
            points: self.points.iter().map(|p| p + offset).collect(),
            signal: self.signal.clone(),
        }
    }
}

/// Per-segment decomposition of a fiber: midpoints, difference vectors,
/// lengths, and midpoint signal values. All lists share the same length and
/// every segment length is strictly positive.
#[derive(Debug, Clone)]
pub struct SegmentedFiber {
    centers: Vec<Point3<f64>>,
    tangents: Vec<Vector3<f64>>,
    lengths: Vec<f64>,
    center_signal: Vec<f64>,
}

impl SegmentedFiber {
    pub fn centers(&self) -> &[Point3<f64>] {
        &self.centers
    }

    pub fn tangents(&self) -> &[Vector3<f64>] {
        &self.tangents
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn center_signal(&self) -> &[f64] {
        &self.center_signal
    }

    pub fn segment_count(&self) -> usize {
        self.centers.len()
    }

    /// Total length of the cleaned polyline.
    pub fn arc_length(&self) -> f64 {
        self.lengths.iter().sum()
    }
}

/// Decomposes a fiber into segments. For each consecutive vertex pair with a
/// nonzero gap: tangent = difference vector, center = midpoint, length =
/// tangent norm, signal = mean of the endpoint signal values. Segments shorter
/// than [`DEGENERATE_SEGMENT_LENGTH`] are dropped.
pub fn segment(fiber: &Fiber) -> Result<SegmentedFiber, ModelError> {
    let points = fiber.points();
    let signal = fiber.signal();
    let mut centers = Vec::with_capacity(points.len() - 1);
    let mut tangents = Vec::with_capacity(points.len() - 1);
    let mut lengths = Vec::with_capacity(points.len() - 1);
    let mut center_signal = Vec::with_capacity(points.len() - 1);
    for k in 0..points.len() - 1 {
        let tangent = points[k + 1] - points[k];
        let length = tangent.norm();
        if length < DEGENERATE_SEGMENT_LENGTH {
            continue;
        }
        centers.push(nalgebra::center(&points[k], &points[k + 1]));
        tangents.push(tangent);
        lengths.push(length);
        center_signal.push(0.5 * (signal[k] + signal[k + 1]));
    }
    if centers.is_empty() {
        return Err(ModelError::AllSegmentsDegenerate { id: fiber.id() });
    }
    Ok(SegmentedFiber {
        centers,
        tangents,
        lengths,
        center_signal,
    })
}

/// Along-fiber signal template, evaluated at arc-length fraction `s ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalProfile {
    Constant { value: f64 },
    Linear { start: f64, end: f64 },
    /// Gaussian bump over the baseline, centered at arc fraction `center`.
    Bump {
        base: f64,
        peak: f64,
        center: f64,
        width: f64,
    },
}

impl SignalProfile {
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            SignalProfile::Constant { value } => value,
            SignalProfile::Linear { start, end } => start + (end - start) * s,
            SignalProfile::Bump {
                base,
                peak,
                center,
                width,
            } => {
                let z = (s - center) / width;
                base + (peak - base) * (-z * z).exp()
            }
        }
    }

    /// Built-in family of mutually distinct profiles, indexed by bundle.
    pub fn default_family(index: usize) -> SignalProfile {
        match index % 4 {
            0 => SignalProfile::Constant { value: 0.3 },
            1 => SignalProfile::Linear {
                start: 0.2,
                end: 0.8,
            },
            2 => SignalProfile::Bump {
                base: 0.25,
                peak: 0.85,
                center: 0.5,
                width: 0.18,
            },
            _ => SignalProfile::Constant { value: 0.7 },
        }
    }
}

/// Recipe for a synthetic fiber set with planted bundle structure.
///
/// Bundle `b` samples its geometry from the parametric template curve with
/// index `geometry_templates[b]` (two bundles listing the same index share the
/// template exactly) and its per-vertex signal from `signal_profiles[b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBundleSpec {
    pub bundle_count: usize,
    pub fibers_per_bundle: usize,
    pub points_per_fiber: usize,
    /// Std-dev (mm) of iid Gaussian noise added to every vertex coordinate.
    pub geometry_jitter: f64,
    pub signal_profiles: Vec<SignalProfile>,
    pub geometry_templates: Vec<usize>,
    pub seed: u64,
}

impl SyntheticBundleSpec {
    /// Spec with one distinct template curve and one default-family signal
    /// profile per bundle.
    pub fn new(
        bundle_count: usize,
        fibers_per_bundle: usize,
        points_per_fiber: usize,
        geometry_jitter: f64,
        seed: u64,
    ) -> Self {
        Self {
            bundle_count,
            fibers_per_bundle,
            points_per_fiber,
            geometry_jitter,
            signal_profiles: (0..bundle_count).map(SignalProfile::default_family).collect(),
            geometry_templates: (0..bundle_count).collect(),
            seed,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.bundle_count == 0 {
            return Err(ModelError::InvalidSpec("bundle_count must be >= 1".into()));
        }
        if self.fibers_per_bundle == 0 {
            return Err(ModelError::InvalidSpec(
                "fibers_per_bundle must be >= 1".into(),
            ));
        }
        if self.points_per_fiber < 2 {
            return Err(ModelError::InvalidSpec(
                "points_per_fiber must be >= 2".into(),
            ));
        }
        if !(self.geometry_jitter >= 0.0 && self.geometry_jitter.is_finite()) {
            return Err(ModelError::InvalidSpec(
                "geometry_jitter must be finite and >= 0".into(),
            ));
        }
        if self.signal_profiles.len() != self.bundle_count {
            return Err(ModelError::InvalidSpec(format!(
                "{} signal profiles for {} bundles",
                self.signal_profiles.len(),
                self.bundle_count
            )));
        }
        if self.geometry_templates.len() != self.bundle_count {
            return Err(ModelError::InvalidSpec(format!(
                "{} geometry templates for {} bundles",
                self.geometry_templates.len(),
                self.bundle_count
            )));
        }
        Ok(())
    }
}

/// Point on the parametric template curve `template` at arc fraction `s`.
///
/// The family is a set of circular arcs with a slight axial drift, placed at
/// well-separated centers and rotated into distinct planes, giving ~59 mm of
/// arc length each.
pub fn template_point(template: usize, s: f64) -> Point3<f64> {
    let k = template as f64;
    let rotation = Rotation3::from_euler_angles(0.25 * k, 0.35 * k, 0.7 * k);
    let center = Point3::new(
        60.0 * k,
        25.0 * (1.7 * k).sin(),
        20.0 * (0.9 * k).cos(),
    );
    let theta = 1.3 * s;
    let local = Vector3::new(
        45.0 * theta.sin(),
        45.0 * (1.0 - theta.cos()),
        6.0 * s,
    );
    center + rotation * local
}

/// Generates `bundle_count * fibers_per_bundle` fibers plus their planted
/// bundle labels. Pure function of its input: a fixed seed gives
/// bit-identical output.
pub fn synthesize(spec: &SyntheticBundleSpec) -> Result<(Vec<Fiber>, Vec<usize>), ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.bundle_count * spec.fibers_per_bundle;
    let mut fibers = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut id = 0u64;
    for bundle in 0..spec.bundle_count {
        let template = spec.geometry_templates[bundle];
        let profile = &spec.signal_profiles[bundle];
        for _ in 0..spec.fibers_per_bundle {
            let mut points = Vec::with_capacity(spec.points_per_fiber);
            let mut signal = Vec::with_capacity(spec.points_per_fiber);
            for v in 0..spec.points_per_fiber {
                let s = v as f64 / (spec.points_per_fiber - 1) as f64;
                let noise = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                points.push(template_point(template, s) + spec.geometry_jitter * noise);
                signal.push(profile.value(s));
            }
            fibers.push(Fiber::new(id, points, signal)?);
            labels.push(bundle);
            id += 1;
        }
    }
    Ok((fibers, labels))
}

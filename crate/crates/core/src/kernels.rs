//! Pairwise fiber-comparison models.
//!
//! Four models are provided:
//!
//! * functional varifold — spatial Gaussian × signal Gaussian × squared
//!   Cauchy-Binet tangent kernel, weighted by segment lengths;
//! * varifold — the same with the signal factor removed (geometry only);
//! * signal-only — the same with both geometric factors removed
//!   (signal Gaussian weighted by segment lengths);
//! * MCP + RBF — symmetrized mean closest-point distance between vertex sets,
//!   mapped through `exp(-gamma * d^2)`.
//!
//! All of them are symmetric in their arguments and invariant to reversing a
//! fiber's traversal orientation.

use crate::model::{Fiber, ModelError, SegmentedFiber};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("fiber has zero self inner product under the chosen model")]
    ZeroNormFiber,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Kernel bandwidths. `lambda_w` (mm) scales the spatial Gaussian, `lambda_m`
/// (signal units) the signal Gaussian, `gamma` the RBF applied to the MCP
/// distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lambda_w: f64,
    pub lambda_m: f64,
    pub gamma: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            lambda_w: 7.0,
            lambda_m: 0.01,
            gamma: 0.007,
        }
    }
}

impl KernelParams {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("lambda_w", self.lambda_w),
            ("lambda_m", self.lambda_m),
            ("gamma", self.gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be finite and > 0, got {v}"));
            }
        }
        Ok(())
    }
}

/// Which pairwise model to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelModel {
    FunctionalVarifold,
    Varifold,
    SignalOnly,
    McpRbf,
}

impl KernelModel {
    pub const ALL: [KernelModel; 4] = [
        KernelModel::FunctionalVarifold,
        KernelModel::Varifold,
        KernelModel::SignalOnly,
        KernelModel::McpRbf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelModel::FunctionalVarifold => "fvar",
            KernelModel::Varifold => "var",
            KernelModel::SignalOnly => "signal",
            KernelModel::McpRbf => "mcp",
        }
    }

    pub fn parse(s: &str) -> Option<KernelModel> {
        match s {
            "fvar" => Some(KernelModel::FunctionalVarifold),
            "var" => Some(KernelModel::Varifold),
            "signal" | "gfa" => Some(KernelModel::SignalOnly),
            "mcp" => Some(KernelModel::McpRbf),
            _ => None,
        }
    }
}

impl std::fmt::Display for KernelModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Functional-varifold inner product:
///
/// `sum_pq exp(-(f_p-g_q)^2/lambda_m^2) * exp(-|x_p-y_q|^2/lambda_w^2)
///  * (beta_p . gamma_q / (c_p d_q))^2 * c_p d_q`
pub fn fvar_inner(a: &SegmentedFiber, b: &SegmentedFiber, params: &KernelParams) -> f64 {
    let inv_w2 = 1.0 / (params.lambda_w * params.lambda_w);
    let inv_m2 = 1.0 / (params.lambda_m * params.lambda_m);
    let mut total = 0.0;
    for p in 0..a.segment_count() {
        let xp = &a.centers()[p];
        let bp = &a.tangents()[p];
        let cp = a.lengths()[p];
        let fp = a.center_signal()[p];
        for q in 0..b.segment_count() {
            let df = fp - b.center_signal()[q];
            let dx2 = (xp - b.centers()[q]).norm_squared();
            let dot = bp.dot(&b.tangents()[q]);
            // (dot/(c d))^2 * c d  ==  dot^2 / (c d)
            total += (-df * df * inv_m2).exp()
                * (-dx2 * inv_w2).exp()
                * (dot * dot / (cp * b.lengths()[q]));
        }
    }
    total
}

/// Varifold inner product: [`fvar_inner`] with the signal factor removed.
pub fn var_inner(a: &SegmentedFiber, b: &SegmentedFiber, params: &KernelParams) -> f64 {
    let inv_w2 = 1.0 / (params.lambda_w * params.lambda_w);
    let mut total = 0.0;
    for p in 0..a.segment_count() {
        let xp = &a.centers()[p];
        let bp = &a.tangents()[p];
        let cp = a.lengths()[p];
        for q in 0..b.segment_count() {
            let dx2 = (xp - b.centers()[q]).norm_squared();
            let dot = bp.dot(&b.tangents()[q]);
            total += (-dx2 * inv_w2).exp() * (dot * dot / (cp * b.lengths()[q]));
        }
    }
    total
}

/// Signal-only inner product: the signal Gaussian weighted by segment
/// lengths, with both geometric factors removed.
pub fn signal_inner(a: &SegmentedFiber, b: &SegmentedFiber, params: &KernelParams) -> f64 {
    let inv_m2 = 1.0 / (params.lambda_m * params.lambda_m);
    let mut total = 0.0;
    for p in 0..a.segment_count() {
        let fp = a.center_signal()[p];
        let cp = a.lengths()[p];
        for q in 0..b.segment_count() {
            let df = fp - b.center_signal()[q];
            total += (-df * df * inv_m2).exp() * cp * b.lengths()[q];
        }
    }
    total
}

/// Symmetrized mean closest-point distance (mm) between the vertex sets of
/// two fibers: the average of the two directed mean nearest-vertex distances.
pub fn mcp_distance(a: &Fiber, b: &Fiber) -> f64 {
    0.5 * (directed_mcp(a, b) + directed_mcp(b, a))
}

fn directed_mcp(from: &Fiber, to: &Fiber) -> f64 {
    let mut sum = 0.0;
    for p in from.points() {
        let nearest = to
            .points()
            .iter()
            .map(|q| (p - q).norm_squared())
            .fold(f64::INFINITY, f64::min);
        sum += nearest.sqrt();
    }
    sum / from.points().len() as f64
}

/// RBF kernel on the MCP distance: `exp(-gamma * d^2)`, in (0, 1].
pub fn mcp_rbf(a: &Fiber, b: &Fiber, params: &KernelParams) -> f64 {
    let d = mcp_distance(a, b);
    (-params.gamma * d * d).exp()
}

/// Pairwise value of `model` on two already-segmented fibers. `McpRbf` works
/// on raw vertices, so the original fibers are also required.
pub(crate) fn model_inner(
    model: KernelModel,
    a: &Fiber,
    b: &Fiber,
    seg_a: &SegmentedFiber,
    seg_b: &SegmentedFiber,
    params: &KernelParams,
) -> f64 {
    match model {
        KernelModel::FunctionalVarifold => fvar_inner(seg_a, seg_b, params),
        KernelModel::Varifold => var_inner(seg_a, seg_b, params),
        KernelModel::SignalOnly => signal_inner(seg_a, seg_b, params),
        KernelModel::McpRbf => mcp_rbf(a, b, params),
    }
}

/// Angle in degrees between two fibers under the chosen model:
/// `arccos(<a,b> / sqrt(<a,a><b,b>))`, with the ratio clamped to [-1, 1].
pub fn cosine_angle(
    a: &Fiber,
    b: &Fiber,
    model: KernelModel,
    params: &KernelParams,
) -> Result<f64, KernelError> {
    let seg_a = crate::model::segment(a)?;
    let seg_b = crate::model::segment(b)?;
    let saa = model_inner(model, a, a, &seg_a, &seg_a, params);
    let sbb = model_inner(model, b, b, &seg_b, &seg_b, params);
    if !(saa > 0.0 && sbb > 0.0) {
        return Err(KernelError::ZeroNormFiber);
    }
    let sab = model_inner(model, a, b, &seg_a, &seg_b, params);
    let ratio = (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0);
    Ok(ratio.acos().to_degrees())
}

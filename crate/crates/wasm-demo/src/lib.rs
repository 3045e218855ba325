//! Browser bindings for the fibervar pipeline. Every entry point takes a JSON
//! configuration string and returns a JSON result string, so the page needs
//! no generated glue types: `JSON.parse(cluster_demo(JSON.stringify(cfg)))`.

use fibervar::evaluation::{adjusted_rand_index, silhouette, ClusterAssignment};
use fibervar::{
    compute_gram, cosine_angle, fit, hard_assign, synthesize, FitConfig, KernelModel,
    KernelParams, SignalProfile, SyntheticBundleSpec,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

fn default_bundles() -> usize {
    4
}
fn default_per_bundle() -> usize {
    25
}
fn default_points() -> usize {
    16
}
fn default_jitter() -> f64 {
    0.6
}
fn default_model() -> String {
    "fvar".into()
}
fn default_lambda_w() -> f64 {
    7.0
}
fn default_lambda_m() -> f64 {
    0.01
}
fn default_gamma() -> f64 {
    0.007
}
fn default_true() -> bool {
    true
}
fn default_lambda_w_grid() -> Vec<f64> {
    vec![3.0, 5.0, 7.0, 9.0, 11.0]
}
fn default_lambda_m_grid() -> Vec<f64> {
    vec![0.001, 0.005, 0.01, 0.05, 0.1]
}

#[derive(Deserialize)]
struct ClusterDemoConfig {
    #[serde(default = "default_bundles")]
    bundles: usize,
    #[serde(default = "default_per_bundle")]
    per_bundle: usize,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default = "default_jitter")]
    jitter: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_model")]
    model: String,
    #[serde(default = "default_lambda_w")]
    lambda_w: f64,
    #[serde(default = "default_lambda_m")]
    lambda_m: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
    /// Give bundles 0 and 1 the same template curve with different signal
    /// profiles, so geometry-only models cannot separate them.
    #[serde(default = "default_true")]
    shared_geometry: bool,
}

#[derive(Serialize)]
struct FiberOut {
    points: Vec<[f64; 3]>,
    signal: Vec<f64>,
}

#[derive(Serialize)]
struct ClusterDemoOut {
    fibers: Vec<FiberOut>,
    labels: Vec<Option<usize>>,
    planted: Vec<usize>,
    mean_silhouette: f64,
    ari: f64,
    objective_trace: Vec<f64>,
    model: String,
}

fn err_json(message: impl std::fmt::Display) -> String {
    serde_json::json!({ "error": message.to_string() }).to_string()
}

fn parse_model(name: &str) -> Result<KernelModel, String> {
    KernelModel::parse(name).ok_or_else(|| format!("unknown model '{name}'"))
}

fn demo_spec(cfg: &ClusterDemoConfig) -> SyntheticBundleSpec {
    let mut spec = SyntheticBundleSpec::new(
        cfg.bundles,
        cfg.per_bundle,
        cfg.points,
        cfg.jitter,
        cfg.seed,
    );
    if cfg.shared_geometry && cfg.bundles >= 2 {
        // Bundle 1 reuses bundle 0's curve but keeps its own signal profile.
        spec.geometry_templates[1] = spec.geometry_templates[0];
        spec.signal_profiles[0] = SignalProfile::Constant { value: 0.25 };
        spec.signal_profiles[1] = SignalProfile::Constant { value: 0.75 };
    }
    spec
}

/// Synthesize a planted fiber set, cluster it under the chosen model, and
/// report labels, silhouette, and ARI against the planted truth.
#[wasm_bindgen]
pub fn cluster_demo(config_json: &str) -> String {
    let cfg: ClusterDemoConfig = match serde_json::from_str(config_json) {
        Ok(c) => c,
        Err(e) => return err_json(e),
    };
    match run_cluster_demo(&cfg) {
        Ok(out) => serde_json::to_string(&out).unwrap(),
        Err(e) => err_json(e),
    }
}

fn run_cluster_demo(cfg: &ClusterDemoConfig) -> Result<ClusterDemoOut, String> {
    let model = parse_model(&cfg.model)?;
    let params = KernelParams {
        lambda_w: cfg.lambda_w,
        lambda_m: cfg.lambda_m,
        gamma: cfg.gamma,
    };
    let spec = demo_spec(cfg);
    let (fibers, planted) = synthesize(&spec).map_err(|e| e.to_string())?;
    let gram = compute_gram(&fibers, model, &params).map_err(|e| e.to_string())?;
    let config = FitConfig {
        m: cfg.bundles,
        s_max: 1,
        seed: cfg.seed,
        ..FitConfig::default()
    };
    let result = fit(&gram, &config).map_err(|e| e.to_string())?;
    let assignment = hard_assign(&result.codes);
    let report = silhouette(&gram, &assignment).map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(
        &ClusterAssignment::from_planted(planted.clone()),
        &assignment,
    )
    .map_err(|e| e.to_string())?;
    Ok(ClusterDemoOut {
        fibers: fibers
            .iter()
            .map(|f| FiberOut {
                points: f.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
                signal: f.signal().to_vec(),
            })
            .collect(),
        labels: assignment.labels().to_vec(),
        planted,
        mean_silhouette: report.mean,
        ari,
        objective_trace: result.objective_trace.clone(),
        model: model.name().into(),
    })
}

#[derive(Deserialize)]
struct SweepConfig {
    #[serde(default = "default_model")]
    model: String,
    #[serde(default = "default_lambda_w_grid")]
    lambda_w_grid: Vec<f64>,
    #[serde(default = "default_lambda_m_grid")]
    lambda_m_grid: Vec<f64>,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_jitter")]
    jitter: f64,
    #[serde(default)]
    seed: u64,
    /// When true the two compared fibers share geometry and differ only in
    /// signal; otherwise they come from different template curves.
    #[serde(default = "default_true")]
    shared_geometry: bool,
}

#[derive(Serialize)]
struct SweepOut {
    lambda_w_grid: Vec<f64>,
    lambda_m_grid: Vec<f64>,
    /// angles[i][j] for lambda_w_grid[i] × lambda_m_grid[j], in degrees.
    angles: Vec<Vec<f64>>,
    model: String,
}

/// Angle between one fiber pair over a lambda_w × lambda_m grid.
#[wasm_bindgen]
pub fn angle_sweep(config_json: &str) -> String {
    let cfg: SweepConfig = match serde_json::from_str(config_json) {
        Ok(c) => c,
        Err(e) => return err_json(e),
    };
    match run_angle_sweep(&cfg) {
        Ok(out) => serde_json::to_string(&out).unwrap(),
        Err(e) => err_json(e),
    }
}

fn run_angle_sweep(cfg: &SweepConfig) -> Result<SweepOut, String> {
    let model = parse_model(&cfg.model)?;
    for &lw in &cfg.lambda_w_grid {
        for &lm in &cfg.lambda_m_grid {
            (KernelParams {
                lambda_w: lw,
                lambda_m: lm,
                gamma: cfg.gamma,
            })
            .validate()?;
        }
    }
    let mut spec = SyntheticBundleSpec::new(2, 1, default_points(), cfg.jitter, cfg.seed);
    spec.signal_profiles = vec![
        SignalProfile::Constant { value: 0.35 },
        SignalProfile::Linear {
            start: 0.2,
            end: 0.9,
        },
    ];
    if cfg.shared_geometry {
        spec.geometry_templates = vec![0, 0];
    }
    let (fibers, _) = synthesize(&spec).map_err(|e| e.to_string())?;
    let mut angles = Vec::with_capacity(cfg.lambda_w_grid.len());
    for &lw in &cfg.lambda_w_grid {
        let mut row = Vec::with_capacity(cfg.lambda_m_grid.len());
        for &lm in &cfg.lambda_m_grid {
            let params = KernelParams {
                lambda_w: lw,
                lambda_m: lm,
                gamma: cfg.gamma,
            };
            let angle =
                cosine_angle(&fibers[0], &fibers[1], model, &params).map_err(|e| e.to_string())?;
            row.push(angle);
        }
        angles.push(row);
    }
    Ok(SweepOut {
        lambda_w_grid: cfg.lambda_w_grid.clone(),
        lambda_m_grid: cfg.lambda_m_grid.clone(),
        angles,
        model: model.name().into(),
    })
}

#[derive(Deserialize)]
struct HeatmapConfig {
    #[serde(default = "default_bundles")]
    bundles: usize,
    #[serde(default = "default_per_bundle")]
    per_bundle: usize,
    #[serde(default = "default_jitter")]
    jitter: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_model")]
    model: String,
    #[serde(default = "default_lambda_w")]
    lambda_w: f64,
    #[serde(default = "default_lambda_m")]
    lambda_m: f64,
    #[serde(default = "default_gamma")]
    gamma: f64,
    #[serde(default = "default_true")]
    shared_geometry: bool,
}

#[derive(Serialize)]
struct HeatmapOut {
    n: usize,
    /// Row-major normalized similarities Q_ij / sqrt(Q_ii Q_jj).
    values: Vec<f64>,
    planted: Vec<usize>,
    model: String,
}

/// Normalized Gram heatmap of a planted fiber set under the chosen model.
#[wasm_bindgen]
pub fn gram_heatmap(config_json: &str) -> String {
    let cfg: HeatmapConfig = match serde_json::from_str(config_json) {
        Ok(c) => c,
        Err(e) => return err_json(e),
    };
    match run_gram_heatmap(&cfg) {
        Ok(out) => serde_json::to_string(&out).unwrap(),
        Err(e) => err_json(e),
    }
}

fn run_gram_heatmap(cfg: &HeatmapConfig) -> Result<HeatmapOut, String> {
    let model = parse_model(&cfg.model)?;
    let params = KernelParams {
        lambda_w: cfg.lambda_w,
        lambda_m: cfg.lambda_m,
        gamma: cfg.gamma,
    };
    let demo_cfg = ClusterDemoConfig {
        bundles: cfg.bundles,
        per_bundle: cfg.per_bundle,
        points: default_points(),
        jitter: cfg.jitter,
        seed: cfg.seed,
        model: cfg.model.clone(),
        lambda_w: cfg.lambda_w,
        lambda_m: cfg.lambda_m,
        gamma: cfg.gamma,
        shared_geometry: cfg.shared_geometry,
    };
    let spec = demo_spec(&demo_cfg);
    let (fibers, planted) = synthesize(&spec).map_err(|e| e.to_string())?;
    let gram = compute_gram(&fibers, model, &params).map_err(|e| e.to_string())?;
    let n = gram.n();
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let denom = (gram.get(i, i) * gram.get(j, j)).sqrt();
            values.push(if denom > 0.0 { gram.get(i, j) / denom } else { 0.0 });
        }
    }
    Ok(HeatmapOut {
        n,
        values,
        planted,
        model: model.name().into(),
    })
}

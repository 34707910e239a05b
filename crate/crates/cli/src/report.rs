//! On-disk documents the CLI produces: the explain/verify report, the
//! sampling section, table rows, and the surface overlay.

use serde::{Deserialize, Serialize};
use survcf::{ClosestTrain, SearchRegion, VerificationReport};

/// The sampling oracle's outcome, kept verbatim in the report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledSection {
    pub z: Option<Vec<f64>>,
    pub distance: Option<f64>,
    pub shift: Option<f64>,
    pub n_samples: u64,
    pub n_feasible: u64,
    pub seed: u64,
}

/// A full explanation record: the verification-report fields plus solver
/// metadata and the search region needed to verify the result later.
#[derive(Serialize, Deserialize)]
pub struct ExplainDocument {
    pub method: String,
    #[serde(flatten)]
    pub report: VerificationReport,
    /// Loss of the swarm solution.
    pub loss_opt: Option<f64>,
    /// Root of the shift equation (exact route).
    pub predictor_root: Option<f64>,
    /// Where z_ver came from: "exact" or "sampling".
    pub verifier: Option<String>,
    pub sampled: Option<SampledSection>,
    pub anchor: Option<ClosestTrain>,
    pub region: Option<SearchRegion>,
    pub model_file: String,
    pub manifest: String,
}

/// One CSV table row in column order theta, r, r_ver, r_opt, dist_ver,
/// dist_opt, then the accuracy column: ||z_ver - z_opt|| for a Cox model,
/// the distance difference A for a forest.
pub fn table_row(report: &VerificationReport, model_kind: &str) -> (Vec<String>, Vec<String>) {
    let fmt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    let (last_header, last_value) = match model_kind {
        "cox" => ("zver_zopt_dist", fmt(report.ver_opt_gap)),
        _ => ("A", fmt(report.a)),
    };
    let header = vec![
        "theta".to_string(),
        "r".to_string(),
        "r_ver".to_string(),
        "r_opt".to_string(),
        "dist_ver".to_string(),
        "dist_opt".to_string(),
        last_header.to_string(),
    ];
    let row = vec![
        format!("{}", report.theta),
        format!("{}", report.r),
        fmt(report.r_ver),
        fmt(report.r_opt),
        fmt(report.dist_ver),
        fmt(report.dist_opt),
        last_value,
    ];
    (header, row)
}

/// Plot-ready geometry accompanying a surface grid: the box outline, the
/// search ball when a report provides one, and the three marked points.
#[derive(Serialize, Deserialize)]
pub struct SurfaceOverlay {
    pub box_outline: Vec<[f64; 2]>,
    pub ball_outline: Option<Vec<[f64; 2]>>,
    pub x: Option<Vec<f64>>,
    pub z_ver: Option<Vec<f64>>,
    pub z_opt: Option<Vec<f64>>,
    pub manifest: String,
}

pub fn box_outline(lower: &[f64], upper: &[f64]) -> Vec<[f64; 2]> {
    vec![
        [lower[0], lower[1]],
        [upper[0], lower[1]],
        [upper[0], upper[1]],
        [lower[0], upper[1]],
        [lower[0], lower[1]],
    ]
}

pub fn ball_outline(center: &[f64], radius: f64) -> Vec<[f64; 2]> {
    let segments = 128;
    (0..=segments)
        .map(|i| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / segments as f64;
            [
                center[0] + radius * angle.cos(),
                center[1] + radius * angle.sin(),
            ]
        })
        .collect()
}

//! Brute-force verification: uniform sampling in the search ball mapped
//! through the restriction procedure, feasibility filtering, and the argmin
//! of distance to the original point. Sampling is chunked with one ChaCha
//! stream per chunk, so the scan parallelizes without losing determinism and
//! growing the sample count only ever appends samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    euclidean_distance, CounterfactualObjective, CounterfactualQuery, SearchRegion, SurvivalModel,
};
use crate::error::{Error, Result};
use crate::pso::sample_in_ball;

/// Samples per RNG chunk; chunk `c` always reproduces the same points.
const CHUNK: u64 = 10_000;

/// Outcome of a sampling search.
#[derive(Debug, Clone)]
pub struct SampleSearch {
    /// Nearest feasible sampled point, if any was feasible.
    pub z: Option<Vec<f64>>,
    /// Its distance to the original point.
    pub distance: Option<f64>,
    pub n_feasible: u64,
    pub n_samples: u64,
    pub seed: u64,
}

impl SampleSearch {
    /// The found point, or the no-feasible-sample error.
    pub fn require_feasible(&self) -> Result<(&[f64], f64)> {
        match (&self.z, self.distance) {
            (Some(z), Some(d)) => Ok((z, d)),
            _ => Err(Error::NoFeasibleSample {
                n_samples: self.n_samples,
            }),
        }
    }
}

pub(crate) fn chunk_samples(
    seed: u64,
    chunk: u64,
    n_samples: u64,
    region: &SearchRegion,
) -> Vec<Vec<f64>> {
    let radius = region.radius.expect("sampling requires a radius");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    let start = chunk * CHUNK;
    let end = n_samples.min(start + CHUNK);
    (start..end)
        .map(|_| {
            let raw = sample_in_ball(&mut rng, &region.center, radius);
            region.restrict(&raw)
        })
        .collect()
}

/// Draw `n_samples` points uniformly in the region's ball, map them through
/// the restriction procedure, keep the feasible ones, and return the one
/// closest to the original point (ties break to the lowest sample index).
pub fn sample_nearest_feasible(
    query: &CounterfactualQuery,
    model: &dyn SurvivalModel,
    region: &SearchRegion,
    n_samples: u64,
    seed: u64,
) -> Result<SampleSearch> {
    if n_samples == 0 {
        return Err(Error::InvalidData("need at least one sample".into()));
    }
    if region.radius.is_none() {
        return Err(Error::MissingRadius);
    }
    let objective = CounterfactualObjective::new(query, model)?;

    struct ChunkBest {
        n_feasible: u64,
        best: Option<(f64, u64, Vec<f64>)>, // (distance, global index, point)
    }

    let n_chunks = n_samples.div_ceil(CHUNK);
    let results: Vec<Result<ChunkBest>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let points = chunk_samples(seed, chunk, n_samples, region);
            let mut n_feasible = 0;
            let mut best: Option<(f64, u64, Vec<f64>)> = None;
            for (offset, z) in points.into_iter().enumerate() {
                if objective.gap(&z)? <= 0.0 {
                    n_feasible += 1;
                    let dist = euclidean_distance(&z, &query.x);
                    let index = chunk * CHUNK + offset as u64;
                    let better = match &best {
                        Some((b_dist, b_idx, _)) => {
                            dist < *b_dist || (dist == *b_dist && index < *b_idx)
                        }
                        None => true,
                    };
                    if better {
                        best = Some((dist, index, z));
                    }
                }
            }
            Ok(ChunkBest { n_feasible, best })
        })
        .collect();

    let mut n_feasible = 0;
    let mut best: Option<(f64, u64, Vec<f64>)> = None;
    for result in results {
        let chunk_best = result?;
        n_feasible += chunk_best.n_feasible;
        if let Some((dist, idx, z)) = chunk_best.best {
            let better = match &best {
                Some((b_dist, b_idx, _)) => dist < *b_dist || (dist == *b_dist && idx < *b_idx),
                None => true,
            };
            if better {
                best = Some((dist, idx, z));
            }
        }
    }

    Ok(SampleSearch {
        distance: best.as_ref().map(|(d, _, _)| *d),
        z: best.map(|(_, _, z)| z),
        n_feasible,
        n_samples,
        seed,
    })
}

/// A full result row: the query, both solutions, their achieved shifts and
/// distances, and the sampling metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationReport {
    pub theta: i8,
    pub r: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub x: Vec<f64>,
    pub mean_x: f64,
    /// Reference solution (exact for a Cox model, sampled otherwise).
    pub z_ver: Option<Vec<f64>>,
    /// Swarm solution.
    pub z_opt: Option<Vec<f64>>,
    pub r_ver: Option<f64>,
    pub r_opt: Option<f64>,
    pub dist_ver: Option<f64>,
    pub dist_opt: Option<f64>,
    /// ||z_ver - z_opt||, the accuracy measure for the exact route.
    pub ver_opt_gap: Option<f64>,
    /// dist_ver - dist_opt; positive when the swarm beat the sampler.
    pub a: Option<f64>,
    pub n_samples: Option<u64>,
    pub n_feasible: Option<u64>,
    pub seed: Option<u64>,
}

/// Derive every report field from the two candidate solutions. The shifts
/// r_ver and r_opt are recomputed from the model, never trusted from the
/// solver that produced the points.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    query: &CounterfactualQuery,
    model: &dyn SurvivalModel,
    z_ver: Option<Vec<f64>>,
    z_opt: Option<Vec<f64>>,
    n_samples: Option<u64>,
    n_feasible: Option<u64>,
    seed: Option<u64>,
) -> Result<VerificationReport> {
    let objective = CounterfactualObjective::new(query, model)?;
    let shift_and_dist = |z: &Option<Vec<f64>>| -> Result<(Option<f64>, Option<f64>)> {
        match z {
            Some(z) => Ok((
                Some(objective.shift(z)?),
                Some(euclidean_distance(z, &query.x)),
            )),
            None => Ok((None, None)),
        }
    };
    let (r_ver, dist_ver) = shift_and_dist(&z_ver)?;
    let (r_opt, dist_opt) = shift_and_dist(&z_opt)?;
    let ver_opt_gap = match (&z_ver, &z_opt) {
        (Some(v), Some(o)) => Some(euclidean_distance(v, o)),
        _ => None,
    };
    let a = match (dist_ver, dist_opt) {
        (Some(v), Some(o)) => Some(v - o),
        _ => None,
    };
    Ok(VerificationReport {
        theta: query.theta,
        r: query.r,
        c: query.c,
        x: query.x.clone(),
        mean_x: objective.mean_x(),
        z_ver,
        z_opt,
        r_ver,
        r_opt,
        dist_ver,
        dist_opt,
        ver_opt_gap,
        a,
        n_samples,
        n_feasible,
        seed,
    })
}

//! Particle swarm optimization with constriction coefficients, plus the
//! survival-counterfactual front end: the swarm starts at the closest
//! feasible training point, fills the ball around the query point, and every
//! position update passes through the restriction procedure so iterates never
//! leave box-intersect-ball.
//!
//! Randomness is drawn from per-(iteration, particle) ChaCha streams derived
//! from the seed, so parallel and serial runs produce identical trajectories.
//!
//! Two details matter in higher dimensions. The stochastic factors are drawn
//! per coordinate: with one shared draw per particle the step lies in the
//! plane spanned by (pbest - u) and (gbest - u), and that rank-2 confinement
//! collapses the swarm's reachable subspace. And when the position filter
//! moves a particle, the stored velocity becomes the realized displacement;
//! carrying the unfiltered velocity instead leaves phantom momentum pointing
//! permanently out of the search region, which grinds particles onto box
//! faces and pins coordinates there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{
    closest_feasible_train, feature_bounds, ClosestTrain, CounterfactualObjective,
    CounterfactualQuery, SearchRegion, SurvivalModel,
};
use crate::error::{Error, Result};
use crate::survival::Dataset;

/// Swarm parameters. Defaults follow the constriction heuristic at
/// phi_1 = phi_2 = 2.05, kappa = 1 with a 2000-particle, 1000-iteration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub n_particles: usize,
    pub n_iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        let (inertia, cognitive, social) =
            constriction_coefficients(2.05, 2.05, 1.0).expect("default coefficients are in range");
        Self {
            n_particles: 2000,
            n_iterations: 1000,
            inertia,
            cognitive,
            social,
            seed: 0,
        }
    }
}

impl SwarmConfig {
    /// Config from the constriction heuristic with the given swarm size.
    pub fn constricted(
        n_particles: usize,
        n_iterations: usize,
        phi_1: f64,
        phi_2: f64,
        kappa: f64,
        seed: u64,
    ) -> Result<Self> {
        let (inertia, cognitive, social) = constriction_coefficients(phi_1, phi_2, kappa)?;
        Ok(Self {
            n_particles,
            n_iterations,
            inertia,
            cognitive,
            social,
            seed,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.n_iterations == 0 {
            return Err(Error::InvalidData(
                "swarm needs at least one particle and one iteration".into(),
            ));
        }
        if self.inertia < 0.0 || self.cognitive < 0.0 || self.social < 0.0 {
            return Err(Error::InvalidData(
                "swarm coefficients must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// The constriction heuristic: eta = 2 kappa / |2 - phi - sqrt(phi^2 - 4 phi)|
/// with phi = phi_1 + phi_2 > 4; returns (w, c_1, c_2) =
/// (eta, eta phi_1, eta phi_2).
pub fn constriction_coefficients(phi_1: f64, phi_2: f64, kappa: f64) -> Result<(f64, f64, f64)> {
    let phi = phi_1 + phi_2;
    if !(phi > 4.0) {
        return Err(Error::InvalidData(format!(
            "phi_1 + phi_2 must exceed 4, got {phi}"
        )));
    }
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidData(format!(
            "kappa must lie in [0, 1], got {kappa}"
        )));
    }
    let eta = 2.0 * kappa / (2.0 - phi - (phi * phi - 4.0 * phi).sqrt()).abs();
    Ok((eta, eta * phi_1, eta * phi_2))
}

/// Result of a swarm run: the best position, its objective value, and the
/// best value after each iteration (index 0 is the initial best).
#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub position: Vec<f64>,
    pub value: f64,
    pub best_values: Vec<f64>,
}

fn rng_for(seed: u64, iteration: usize, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | particle as u64);
    rng
}

/// Minimize `objective` with a particle swarm started from the given
/// positions and velocities. Each new position passes through
/// `position_filter` when one is supplied. Personal and global bests only
/// ever improve; the global best trajectory is returned for inspection.
pub fn pso_minimize<F, P>(
    objective: F,
    init_positions: &[Vec<f64>],
    init_velocities: &[Vec<f64>],
    config: &SwarmConfig,
    position_filter: Option<P>,
) -> Result<PsoOutcome>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
    P: Fn(&[f64]) -> Vec<f64> + Sync,
{
    config.validate()?;
    if init_positions.is_empty() {
        return Err(Error::InvalidData("no initial positions".into()));
    }
    if init_positions.len() != init_velocities.len() {
        return Err(Error::InvalidData(
            "positions and velocities differ in count".into(),
        ));
    }
    let dim = init_positions[0].len();
    for v in init_positions.iter().chain(init_velocities) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
    }

    let evaluate = |positions: &[Vec<f64>]| -> Result<Vec<f64>> {
        positions
            .par_iter()
            .map(|p| {
                let v = objective(p)?;
                if !v.is_finite() {
                    return Err(Error::NonFiniteObjective);
                }
                Ok(v)
            })
            .collect()
    };

    let mut positions: Vec<Vec<f64>> = init_positions.to_vec();
    let mut velocities: Vec<Vec<f64>> = init_velocities.to_vec();
    let mut best_positions = positions.clone();
    let mut best_values = evaluate(&positions)?;

    let mut global_value = f64::INFINITY;
    let mut global_idx = 0;
    for (k, v) in best_values.iter().enumerate() {
        if *v < global_value {
            global_value = *v;
            global_idx = k;
        }
    }
    let mut global_position = best_positions[global_idx].clone();
    let mut trajectory = Vec::with_capacity(config.n_iterations + 1);
    trajectory.push(global_value);

    let n = positions.len();

    for iteration in 1..=config.n_iterations {
        for k in 0..n {
            let mut rng = rng_for(config.seed, iteration, k);
            for i in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                velocities[k][i] = config.inertia * velocities[k][i]
                    + r1 * config.cognitive * (best_positions[k][i] - positions[k][i])
                    + r2 * config.social * (global_position[i] - positions[k][i]);
            }
            let raw: Vec<f64> = (0..dim)
                .map(|i| positions[k][i] + velocities[k][i])
                .collect();
            let filtered = match &position_filter {
                Some(filter) => filter(&raw),
                None => raw,
            };
            for i in 0..dim {
                velocities[k][i] = filtered[i] - positions[k][i];
            }
            positions[k] = filtered;
        }

        let values = evaluate(&positions)?;
        for (k, value) in values.iter().enumerate() {
            if *value < best_values[k] {
                best_values[k] = *value;
                best_positions[k] = positions[k].clone();
            }
        }
        for (k, value) in best_values.iter().enumerate() {
            if *value < global_value {
                global_value = *value;
                global_idx = k;
            }
        }
        global_position = best_positions[global_idx].clone();
        trajectory.push(global_value);
    }

    Ok(PsoOutcome {
        position: global_position,
        value: global_value,
        best_values: trajectory,
    })
}

/// One point uniform in the ball of `radius` around `center`: an isotropic
/// direction scaled by radius * U^(1/d).
pub(crate) fn sample_in_ball(rng: &mut ChaCha8Rng, center: &[f64], radius: f64) -> Vec<f64> {
    let dim = center.len();
    let mut direction: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm: f64 = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return center.to_vec();
    }
    let u: f64 = rng.random();
    let scale = radius * u.powf(1.0 / dim as f64) / norm;
    for (d, c) in direction.iter_mut().zip(center) {
        *d = c + scale * *d;
    }
    direction
}

/// A counterfactual found by the swarm.
#[derive(Debug, Clone)]
pub struct CounterfactualSolution {
    pub z: Vec<f64>,
    /// Achieved shift theta * (m(z) - m(x)).
    pub shift: f64,
    pub loss: f64,
    pub distance: f64,
    /// The anchoring training point.
    pub anchor: ClosestTrain,
    /// The region the search ran in.
    pub region: SearchRegion,
    /// Global best loss per iteration.
    pub best_values: Vec<f64>,
}

/// Swarm search for the nearest counterfactual. Particle 1 starts at the
/// closest feasible training point z_ct; when that point is feasible the
/// search region is box-intersect-ball(x, ||x - z_ct||), otherwise the full
/// feature box. Remaining particles start uniform in the ball (or box) passed
/// through the restriction procedure; all velocities start at zero.
pub fn solve_counterfactual_pso(
    query: &CounterfactualQuery,
    model: &dyn SurvivalModel,
    dataset: &Dataset,
    config: &SwarmConfig,
) -> Result<CounterfactualSolution> {
    config.validate()?;
    let objective = CounterfactualObjective::new(query, model)?;
    let bounds = feature_bounds(dataset);
    let anchor = closest_feasible_train(query, model, dataset)?;

    let mut region = SearchRegion::new(bounds, query.x.clone())?;
    if anchor.feasible_found {
        region = region.with_radius(anchor.radius)?;
    }

    let dim = query.x.len();
    let mut positions = Vec::with_capacity(config.n_particles);
    positions.push(anchor.z_ct.clone());
    for k in 1..config.n_particles {
        let mut rng = rng_for(config.seed, 0, k);
        let raw = match region.radius {
            Some(radius) => sample_in_ball(&mut rng, &query.x, radius),
            None => region
                .bounds
                .lower()
                .iter()
                .zip(region.bounds.upper())
                .map(|(lo, hi)| {
                    if hi > lo {
                        rng.random_range(*lo..*hi)
                    } else {
                        *lo
                    }
                })
                .collect(),
        };
        positions.push(region.restrict(&raw));
    }
    let velocities = vec![vec![0.0; dim]; config.n_particles];

    let filter_region = region.clone();
    let outcome = pso_minimize(
        |z| objective.loss(z),
        &positions,
        &velocities,
        config,
        Some(move |z: &[f64]| {
            let restricted = filter_region.restrict(z);
            debug_assert!(
                filter_region.contains(&restricted, 1e-9),
                "restricted position escaped the search region"
            );
            restricted
        }),
    )?;

    let shift = objective.shift(&outcome.position)?;
    let distance = crate::counterfactual::euclidean_distance(&outcome.position, &query.x);
    Ok(CounterfactualSolution {
        z: outcome.position,
        shift,
        loss: outcome.value,
        distance,
        anchor,
        region,
        best_values: outcome.best_values,
    })
}

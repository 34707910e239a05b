//! Cox proportional hazards: partial-likelihood fitting by Newton-Raphson
//! with step halving (Breslow tie handling), the Breslow baseline survival
//! estimator, and step-SF predictions for arbitrary feature vectors.

use crate::counterfactual::{check_dim, SurvivalModel};
use crate::error::{Error, Result};
use crate::exact::mean_at_predictor;
use crate::survival::{unit_pow, Dataset, StepSurvivalFunction, TimeGrid};

/// A fitted Cox model: coefficients plus the baseline survival step function
/// on the training grid.
#[derive(Debug, Clone)]
pub struct CoxModel {
    coeffs: Vec<f64>,
    baseline: StepSurvivalFunction,
}

impl CoxModel {
    pub fn new(coeffs: Vec<f64>, baseline: StepSurvivalFunction) -> Result<Self> {
        if coeffs.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidData("non-finite coefficient".into()));
        }
        Ok(Self { coeffs, baseline })
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn baseline(&self) -> &StepSurvivalFunction {
        &self.baseline
    }

    /// x^T b.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

impl SurvivalModel for CoxModel {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn grid(&self) -> &TimeGrid {
        self.baseline.grid()
    }

    /// Baseline values raised to exp(x^T b), elementwise.
    fn predict_sf(&self, x: &[f64]) -> Result<StepSurvivalFunction> {
        check_dim(self, x)?;
        let risk = self.linear_predictor(x).exp();
        let values = self
            .baseline
            .values()
            .iter()
            .map(|&s| unit_pow(s, risk))
            .collect();
        StepSurvivalFunction::new(self.baseline.grid().clone(), values)
    }

    fn mean(&self, x: &[f64]) -> Result<f64> {
        check_dim(self, x)?;
        Ok(mean_at_predictor(
            self.baseline.values(),
            self.baseline.grid().gaps(),
            self.linear_predictor(x),
        ))
    }
}

/// Diagnostics from a fit.
#[derive(Debug, Clone)]
pub struct CoxFitReport {
    pub log_partial_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone)]
pub struct CoxFitOptions {
    /// Ridge strength lambda; the fitted objective is
    /// log PL - (lambda / 2) ||b||^2.
    pub l2_penalty: f64,
    /// Convergence threshold on the penalized gradient norm.
    pub tolerance: f64,
    pub max_iter: usize,
    /// Tail gap for the grid; data-scale default when absent.
    pub t_gamma: Option<f64>,
}

impl Default for CoxFitOptions {
    fn default() -> Self {
        Self {
            l2_penalty: 0.0,
            tolerance: 1e-8,
            max_iter: 100,
            t_gamma: None,
        }
    }
}

/// Risk-set statistics of the Breslow log partial likelihood at `coeffs`:
/// (log PL, score vector, observed information matrix, row-major d x d).
/// All three are for the unpenalized likelihood.
pub fn partial_likelihood_parts(
    dataset: &Dataset,
    coeffs: &[f64],
) -> (f64, Vec<f64>, Vec<f64>) {
    let d = dataset.dim();
    let n = dataset.len();
    let x = |i: usize, j: usize| dataset.records()[i].features[j];

    // records ordered by descending time so risk sets grow as time falls
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dataset.records()[b]
            .time
            .partial_cmp(&dataset.records()[a].time)
            .unwrap()
    });

    let mut ll = 0.0;
    let mut score = vec![0.0; d];
    let mut info = vec![0.0; d * d];

    // running sums over the risk set
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d * d];

    let mut i = 0;
    while i < n {
        let t = dataset.records()[order[i]].time;
        // absorb everyone tied at time t into the risk set
        let tie_start = i;
        while i < n && dataset.records()[order[i]].time == t {
            let subj = order[i];
            let eta: f64 = (0..d).map(|j| coeffs[j] * x(subj, j)).sum();
            let w = eta.exp();
            s0 += w;
            for j in 0..d {
                s1[j] += w * x(subj, j);
                for k in 0..d {
                    s2[j * d + k] += w * x(subj, j) * x(subj, k);
                }
            }
            i += 1;
        }
        // Breslow: each event at t contributes against the full risk set
        let mut d_t = 0.0;
        for &subj in &order[tie_start..i] {
            if dataset.records()[subj].event {
                d_t += 1.0;
                let eta: f64 = (0..d).map(|j| coeffs[j] * x(subj, j)).sum();
                ll += eta;
                for j in 0..d {
                    score[j] += x(subj, j);
                }
            }
        }
        if d_t > 0.0 {
            ll -= d_t * s0.ln();
            for j in 0..d {
                score[j] -= d_t * s1[j] / s0;
                for k in 0..d {
                    info[j * d + k] += d_t * (s2[j * d + k] / s0 - s1[j] * s1[k] / (s0 * s0));
                }
            }
        }
    }

    (ll, score, info)
}

/// Solve the d x d system a * x = rhs by Gaussian elimination with partial
/// pivoting; errors on a (near-)singular matrix.
fn solve_linear_system(a: &[f64], rhs: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut aug = vec![0.0; d * (d + 1)];
    for i in 0..d {
        aug[i * (d + 1)..i * (d + 1) + d].copy_from_slice(&a[i * d..(i + 1) * d]);
        aug[i * (d + 1) + d] = rhs[i];
    }
    let cols = d + 1;
    for col in 0..d {
        let mut pivot_row = col;
        let mut pivot_val = aug[col * cols + col].abs();
        for row in (col + 1)..d {
            let v = aug[row * cols + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val < 1e-12 {
            return Err(Error::InvalidData(
                "singular information matrix (collinear or constant features)".into(),
            ));
        }
        if pivot_row != col {
            for j in 0..cols {
                aug.swap(col * cols + j, pivot_row * cols + j);
            }
        }
        let pivot = aug[col * cols + col];
        for row in (col + 1)..d {
            let factor = aug[row * cols + col] / pivot;
            for j in col..cols {
                let head = aug[col * cols + j];
                aug[row * cols + j] -= factor * head;
            }
        }
    }
    let mut sol = vec![0.0; d];
    for i in (0..d).rev() {
        let mut acc = aug[i * cols + d];
        for j in (i + 1)..d {
            acc -= aug[i * cols + j] * sol[j];
        }
        sol[i] = acc / aug[i * cols + i];
    }
    Ok(sol)
}

/// Maximize the (optionally ridge-penalized) log partial likelihood and fill
/// the Breslow baseline. Non-convergence is reported, not fatal.
pub fn fit_cox(dataset: &Dataset, options: &CoxFitOptions) -> Result<(CoxModel, CoxFitReport)> {
    if dataset.n_events() == 0 {
        return Err(Error::InvalidData("no events to fit on".into()));
    }
    if !(options.tolerance > 0.0) {
        return Err(Error::InvalidData("tolerance must be positive".into()));
    }
    let d = dataset.dim();
    let lambda = options.l2_penalty;
    if lambda < 0.0 {
        return Err(Error::InvalidData("l2 penalty must be non-negative".into()));
    }

    let penalized = |coeffs: &[f64]| -> (f64, Vec<f64>, Vec<f64>) {
        let (mut ll, mut score, mut info) = partial_likelihood_parts(dataset, coeffs);
        if lambda > 0.0 {
            for j in 0..d {
                ll -= 0.5 * lambda * coeffs[j] * coeffs[j];
                score[j] -= lambda * coeffs[j];
                info[j * d + j] += lambda;
            }
        }
        (ll, score, info)
    };

    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();

    let mut coeffs = vec![0.0; d];
    let (mut ll, mut score, mut info) = penalized(&coeffs);
    let mut iterations = 0;
    let mut converged = norm(&score) <= options.tolerance;

    while !converged && iterations < options.max_iter {
        iterations += 1;
        let direction = match solve_linear_system(&info, &score, d) {
            Ok(step) => step,
            Err(_) => break, // flat direction; leave convergence to the gradient check
        };
        // step halving until the penalized objective does not decrease
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = coeffs
                .iter()
                .zip(&direction)
                .map(|(b, s)| b + step * s)
                .collect();
            let (trial_ll, trial_score, trial_info) = penalized(&trial);
            if trial_ll.is_finite() && (trial_ll >= ll - 1e-12) {
                coeffs = trial;
                ll = trial_ll;
                score = trial_score;
                info = trial_info;
                break;
            }
            step *= 0.5;
            if step < 1e-10 {
                break; // no acceptable step along this direction
            }
        }
        converged = norm(&score) <= options.tolerance;
    }

    let gradient_norm = norm(&score);
    let grid = match options.t_gamma {
        Some(t_gamma) => TimeGrid::from_dataset(dataset, t_gamma)?,
        None => TimeGrid::from_dataset_default_tail(dataset)?,
    };
    let baseline = breslow_baseline(dataset, &coeffs, &grid)?;
    let model = CoxModel::new(coeffs, baseline)?;
    let report = CoxFitReport {
        log_partial_likelihood: ll,
        iterations,
        converged,
        gradient_norm,
    };
    Ok((model, report))
}

/// The Breslow baseline survival estimator: cumulative-hazard increments
/// d_j / sum_{i in risk set} exp(x_i^T b) at each event time, exponentiated
/// to a step survival function on `grid`.
pub fn breslow_baseline(
    dataset: &Dataset,
    coeffs: &[f64],
    grid: &TimeGrid,
) -> Result<StepSurvivalFunction> {
    if coeffs.len() != dataset.dim() {
        return Err(Error::DimensionMismatch {
            expected: dataset.dim(),
            got: coeffs.len(),
        });
    }
    let risks: Vec<f64> = dataset
        .records()
        .iter()
        .map(|rec| {
            coeffs
                .iter()
                .zip(&rec.features)
                .map(|(b, v)| b * v)
                .sum::<f64>()
                .exp()
        })
        .collect();

    // hazard increment at each interior knot t_j (j = 1..q)
    let n_steps = grid.n_steps();
    let mut values = Vec::with_capacity(n_steps);
    values.push(1.0);
    let mut cum_hazard = 0.0;
    for j in 1..n_steps {
        let t = grid.knots()[j];
        let mut events = 0.0;
        let mut at_risk = 0.0;
        for (rec, risk) in dataset.records().iter().zip(&risks) {
            if rec.time >= t {
                at_risk += risk;
            }
            if rec.event && rec.time == t {
                events += 1.0;
            }
        }
        if events > 0.0 {
            if at_risk <= 0.0 {
                return Err(Error::InvalidData(format!(
                    "empty risk set at event time {t}; grid does not match dataset"
                )));
            }
            cum_hazard += events / at_risk;
        }
        values.push((-cum_hazard).exp());
    }
    StepSurvivalFunction::new(grid.clone(), values)
}

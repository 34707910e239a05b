//! The counterfactual problem: the feasibility gap, the penalized loss, the
//! feature box, the closest feasible training point, and the restriction
//! procedure that keeps search iterates inside box-intersect-ball.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{Dataset, EventRecord, StepSurvivalFunction, TimeGrid};

/// A black-box survival model: anything that predicts a step survival
/// function (and hence a restricted mean) for a feature vector.
pub trait SurvivalModel: Send + Sync {
    fn dim(&self) -> usize;

    fn grid(&self) -> &TimeGrid;

    fn predict_sf(&self, x: &[f64]) -> Result<StepSurvivalFunction>;

    /// Restricted mean time to event for `x` on the training grid.
    fn mean(&self, x: &[f64]) -> Result<f64> {
        Ok(self.predict_sf(x)?.restricted_mean())
    }
}

pub(crate) fn check_dim(model: &dyn SurvivalModel, x: &[f64]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Euclidean distance between two vectors of equal length.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt()
}

/// One counterfactual request: original point `x`, direction `theta`
/// (+1 asks for a mean at least `r` larger, -1 at least `r` smaller),
/// and penalty strength `c`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub x: Vec<f64>,
    pub theta: i8,
    pub r: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

/// The recommended penalty strength; large enough that any infeasible point
/// costs far more than any in-sample distance.
pub const DEFAULT_PENALTY: f64 = 1e6;

impl CounterfactualQuery {
    pub fn new(x: Vec<f64>, theta: i8, r: f64, c: f64) -> Result<Self> {
        if theta != 1 && theta != -1 {
            return Err(Error::InvalidData(format!(
                "theta must be +1 or -1, got {theta}"
            )));
        }
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::InvalidData(format!(
                "required shift r must be finite and positive, got {r}"
            )));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::InvalidData(format!(
                "penalty strength must be finite and positive, got {c}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite query point".into()));
        }
        Ok(Self { x, theta, r, c })
    }

    pub fn theta_sign(&self) -> f64 {
        f64::from(self.theta)
    }

    /// The feasibility gap r - theta * (m(z) - m(x)). Non-positive iff `z`
    /// is a valid counterfactual for this query.
    pub fn feasibility_gap(&self, model: &dyn SurvivalModel, z: &[f64]) -> Result<f64> {
        let mean_x = model.mean(&self.x)?;
        check_dim(model, z)?;
        let mean_z = model.mean(z)?;
        Ok(self.r - self.theta_sign() * (mean_z - mean_x))
    }

    /// The penalized loss max{0, C * gap(z)} + ||z - x||_2.
    pub fn loss(&self, model: &dyn SurvivalModel, z: &[f64]) -> Result<f64> {
        let gap = self.feasibility_gap(model, z)?;
        Ok((self.c * gap).max(0.0) + euclidean_distance(z, &self.x))
    }
}

/// A query bound to a model with the original point's mean cached; the form
/// the optimizers evaluate many thousands of times.
pub struct CounterfactualObjective<'a> {
    query: &'a CounterfactualQuery,
    model: &'a dyn SurvivalModel,
    mean_x: f64,
}

impl<'a> CounterfactualObjective<'a> {
    pub fn new(query: &'a CounterfactualQuery, model: &'a dyn SurvivalModel) -> Result<Self> {
        check_dim(model, &query.x)?;
        let mean_x = model.mean(&query.x)?;
        Ok(Self {
            query,
            model,
            mean_x,
        })
    }

    pub fn query(&self) -> &CounterfactualQuery {
        self.query
    }

    pub fn model(&self) -> &dyn SurvivalModel {
        self.model
    }

    pub fn mean_x(&self) -> f64 {
        self.mean_x
    }

    /// Achieved shift theta * (m(z) - m(x)); a valid counterfactual has
    /// shift >= r.
    pub fn shift(&self, z: &[f64]) -> Result<f64> {
        let mean_z = self.model.mean(z)?;
        Ok(self.query.theta_sign() * (mean_z - self.mean_x))
    }

    pub fn gap(&self, z: &[f64]) -> Result<f64> {
        Ok(self.query.r - self.shift(z)?)
    }

    pub fn loss(&self, z: &[f64]) -> Result<f64> {
        let gap = self.gap(z)?;
        Ok((self.query.c * gap).max(0.0) + euclidean_distance(z, &self.query.x))
    }
}

/// Per-feature bounds: the hyperparallelepiped spanned by the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl FeatureBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !(lo <= hi) {
                return Err(Error::InvalidData(format!(
                    "box bound {lo} > {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Componentwise min/max over a non-empty set of records.
    pub fn from_records(records: &[EventRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidData("cannot take bounds of zero records".into()))?;
        let mut lower = first.features.clone();
        let mut upper = first.features.clone();
        for rec in &records[1..] {
            for (i, &v) in rec.features.iter().enumerate() {
                if v < lower[i] {
                    lower[i] = v;
                }
                if v > upper[i] {
                    upper[i] = v;
                }
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        // datasets are non-empty by construction
        Self::from_records(dataset.records()).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Componentwise clamp into the box.
    pub fn clamp(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| v.min(*hi).max(*lo))
            .collect()
    }
}

/// Per-feature bounds of the training data, the search box for
/// counterfactual candidates.
pub fn feature_bounds(dataset: &Dataset) -> FeatureBox {
    FeatureBox::from_dataset(dataset)
}

/// The region counterfactual candidates are restricted to: the feature box,
/// optionally intersected with a ball around the original point whose radius
/// reaches the closest feasible training point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchRegion {
    pub bounds: FeatureBox,
    pub center: Vec<f64>,
    pub radius: Option<f64>,
}

impl SearchRegion {
    pub fn new(bounds: FeatureBox, center: Vec<f64>) -> Result<Self> {
        if center.len() != bounds.dim() {
            return Err(Error::DimensionMismatch {
                expected: bounds.dim(),
                got: center.len(),
            });
        }
        Ok(Self {
            bounds,
            center,
            radius: None,
        })
    }

    pub fn with_radius(mut self, radius: f64) -> Result<Self> {
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidData(format!(
                "radius must be finite and non-negative, got {radius}"
            )));
        }
        self.radius = Some(radius);
        Ok(self)
    }

    /// The restriction procedure: pull `z` radially back into the ball
    /// (skipped when no radius is set or z = center), then clamp each
    /// feature into the box.
    pub fn restrict(&self, z: &[f64]) -> Vec<f64> {
        let pulled = match self.radius {
            Some(radius) => {
                let dist = euclidean_distance(z, &self.center);
                if dist > radius && dist > 0.0 {
                    let scale = radius / dist;
                    self.center
                        .iter()
                        .zip(z)
                        .map(|(c, v)| c + scale * (v - c))
                        .collect()
                } else {
                    z.to_vec()
                }
            }
            None => z.to_vec(),
        };
        self.bounds.clamp(&pulled)
    }

    /// Whether `z` lies in the region, with `tol` slack on the ball radius.
    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        if !self.bounds.contains(z) {
            return false;
        }
        match self.radius {
            Some(radius) => euclidean_distance(z, &self.center) <= radius + tol,
            None => true,
        }
    }
}

/// The training point anchoring the search ball.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosestTrain {
    /// Training point minimizing the counterfactual loss.
    pub z_ct: Vec<f64>,
    /// Its distance to the original point.
    pub radius: f64,
    /// Whether that point already satisfies the counterfactual condition.
    pub feasible_found: bool,
    /// Its loss value.
    pub loss: f64,
    /// Index of the record in the dataset.
    pub index: usize,
}

/// Scan the training set for the loss-minimizing point; ties break to the
/// lowest record index.
pub fn closest_feasible_train(
    query: &CounterfactualQuery,
    model: &dyn SurvivalModel,
    dataset: &Dataset,
) -> Result<ClosestTrain> {
    let objective = CounterfactualObjective::new(query, model)?;
    let mut best: Option<(usize, f64)> = None;
    for (index, record) in dataset.records().iter().enumerate() {
        let loss = objective.loss(&record.features)?;
        match best {
            Some((_, best_loss)) if loss >= best_loss => {}
            _ => best = Some((index, loss)),
        }
    }
    let (index, loss) = best.expect("dataset is non-empty");
    let z_ct = dataset.records()[index].features.clone();
    let gap = objective.gap(&z_ct)?;
    Ok(ClosestTrain {
        radius: euclidean_distance(&z_ct, &query.x),
        feasible_found: gap <= 0.0,
        loss,
        z_ct,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::TimeGrid;

    /// A model whose mean is a fixed linear function of the features;
    /// enough to exercise the query plumbing without a fitted model.
    struct LinearMeanModel {
        grid: TimeGrid,
        base: f64,
        slope: Vec<f64>,
    }

    impl LinearMeanModel {
        fn new(base: f64, slope: Vec<f64>) -> Self {
            Self {
                grid: TimeGrid::from_knots(vec![0.0, 1.0, 1000.0]).unwrap(),
                base,
                slope,
            }
        }
    }

    impl SurvivalModel for LinearMeanModel {
        fn dim(&self) -> usize {
            self.slope.len()
        }

        fn grid(&self) -> &TimeGrid {
            &self.grid
        }

        fn predict_sf(&self, x: &[f64]) -> Result<StepSurvivalFunction> {
            check_dim(self, x)?;
            let mean = self.mean(x)?;
            // a two-step SF with the requested restricted mean
            let s1 = (mean - 1.0) / 999.0;
            StepSurvivalFunction::new(self.grid.clone(), vec![1.0, s1.clamp(0.0, 1.0)])
        }

        fn mean(&self, x: &[f64]) -> Result<f64> {
            check_dim(self, x)?;
            Ok(self.base + self.slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>())
        }
    }

    fn query(x: Vec<f64>, theta: i8, r: f64) -> CounterfactualQuery {
        CounterfactualQuery::new(x, theta, r, DEFAULT_PENALTY).unwrap()
    }

    #[test]
    fn query_validates_inputs() {
        assert!(CounterfactualQuery::new(vec![0.0], 0, 1.0, 1.0).is_err());
        assert!(CounterfactualQuery::new(vec![0.0], 2, 1.0, 1.0).is_err());
        assert!(CounterfactualQuery::new(vec![0.0], 1, 0.0, 1.0).is_err());
        assert!(CounterfactualQuery::new(vec![0.0], 1, 1.0, -1.0).is_err());
        assert!(CounterfactualQuery::new(vec![f64::NAN], 1, 1.0, 1.0).is_err());
    }

    #[test]
    fn gap_equals_r_when_means_match() {
        let model = LinearMeanModel::new(100.0, vec![0.0, 0.0]);
        let q = query(vec![0.2, 0.3], 1, 7.5);
        let gap = q.feasibility_gap(&model, &[0.9, 0.9]).unwrap();
        assert_eq!(gap, 7.5);
    }

    #[test]
    fn gap_zero_at_boundary_counterfactual() {
        // shift exactly r -> gap 0
        let model = LinearMeanModel::new(100.0, vec![42.80, 0.0]);
        let q = query(vec![0.0, 0.0], 1, 42.80);
        let gap = q.feasibility_gap(&model, &[1.0, 0.0]).unwrap();
        assert!(gap.abs() < 1e-12);
    }

    #[test]
    fn gap_hand_composition_theta_minus_one() {
        // 2-knot baseline mean via the linear stand-in: theta = -1 means a
        // z with larger mean leaves gap = r + (m(z) - m(x)).
        let model = LinearMeanModel::new(10.0, vec![2.0]);
        let q = query(vec![1.0], -1, 0.5); // m(x) = 12
        let gap = q.feasibility_gap(&model, &[2.0]).unwrap(); // m(z) = 14
        assert!((gap - (0.5 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn loss_at_original_point_is_penalty_only() {
        let model = LinearMeanModel::new(50.0, vec![1.0]);
        let q = query(vec![0.5], 1, 3.0);
        let loss = q.loss(&model, &[0.5]).unwrap();
        assert_eq!(loss, DEFAULT_PENALTY * 3.0);
    }

    #[test]
    fn loss_on_feasible_set_is_distance() {
        let model = LinearMeanModel::new(50.0, vec![10.0]);
        let q = query(vec![0.0], 1, 3.0);
        // z = 1.0 shifts the mean by 10 >= 3 -> feasible, loss = distance
        let loss = q.loss(&model, &[1.0]).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn objective_matches_query_forms() {
        let model = LinearMeanModel::new(50.0, vec![10.0, -4.0]);
        let q = query(vec![0.1, 0.9], -1, 2.0);
        let objective = CounterfactualObjective::new(&q, &model).unwrap();
        let z = [0.8, 0.2];
        assert_eq!(
            objective.gap(&z).unwrap(),
            q.feasibility_gap(&model, &z).unwrap()
        );
        assert_eq!(objective.loss(&z).unwrap(), q.loss(&model, &z).unwrap());
    }

    #[test]
    fn bounds_by_inspection() {
        let records: Vec<EventRecord> = [0.2, 0.9, 0.5]
            .iter()
            .map(|&v| EventRecord::new(vec![v], true, 1.0).unwrap())
            .collect();
        let bounds = FeatureBox::from_records(&records).unwrap();
        assert_eq!(bounds.lower(), &[0.2]);
        assert_eq!(bounds.upper(), &[0.9]);
    }

    #[test]
    fn bounds_single_record_degenerate() {
        let records = vec![EventRecord::new(vec![0.4, -1.0], false, 2.0).unwrap()];
        let bounds = FeatureBox::from_records(&records).unwrap();
        assert_eq!(bounds.lower(), bounds.upper());
        assert_eq!(bounds.lower(), &[0.4, -1.0]);
    }

    #[test]
    fn bounds_of_empty_records_fail() {
        assert!(FeatureBox::from_records(&[]).is_err());
    }

    #[test]
    fn bounds_contain_sample_mean() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let records: Vec<EventRecord> = (0..1000)
            .map(|_| {
                EventRecord::new(
                    vec![rng.random::<f64>(), rng.random::<f64>()],
                    true,
                    1.0 + rng.random::<f64>(),
                )
                .unwrap()
            })
            .collect();
        let n = records.len() as f64;
        let mean: Vec<f64> = (0..2)
            .map(|i| records.iter().map(|r| r.features[i]).sum::<f64>() / n)
            .collect();
        let bounds = FeatureBox::from_records(&records).unwrap();
        assert!(bounds.contains(&mean));
    }

    #[test]
    fn restrict_radial_pullback() {
        // x = (0,0), radius 1, z = (2,0), wide box -> (1,0)
        let bounds = FeatureBox::new(vec![-5.0, -5.0], vec![5.0, 5.0]).unwrap();
        let region = SearchRegion::new(bounds, vec![0.0, 0.0])
            .unwrap()
            .with_radius(1.0)
            .unwrap();
        let z = region.restrict(&[2.0, 0.0]);
        assert!((z[0] - 1.0).abs() < 1e-15);
        assert_eq!(z[1], 0.0);
    }

    #[test]
    fn restrict_box_clamp() {
        // radius loose, box tight -> clamp to box max
        let bounds = FeatureBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let region = SearchRegion::new(bounds, vec![0.0, 0.0])
            .unwrap()
            .with_radius(10.0)
            .unwrap();
        let z = region.restrict(&[2.0, 0.0]);
        assert_eq!(z, vec![1.0, 0.0]);
    }

    #[test]
    fn restrict_inside_is_identity() {
        let bounds = FeatureBox::new(vec![-1.0], vec![1.0]).unwrap();
        let region = SearchRegion::new(bounds, vec![0.0])
            .unwrap()
            .with_radius(2.0)
            .unwrap();
        assert_eq!(region.restrict(&[0.5]), vec![0.5]);
    }

    #[test]
    fn restrict_at_center_skips_radial_step() {
        let bounds = FeatureBox::new(vec![-1.0], vec![1.0]).unwrap();
        let region = SearchRegion::new(bounds, vec![0.25])
            .unwrap()
            .with_radius(0.0)
            .unwrap();
        assert_eq!(region.restrict(&[0.25]), vec![0.25]);
    }

    #[test]
    fn restrict_idempotent_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let dim = 3;
            let lower: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..0.0)).collect();
            let upper: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..2.0)).collect();
            let center: Vec<f64> = lower
                .iter()
                .zip(&upper)
                .map(|(lo, hi)| rng.random_range(*lo..*hi))
                .collect();
            let bounds = FeatureBox::new(lower, upper).unwrap();
            let region = SearchRegion::new(bounds, center)
                .unwrap()
                .with_radius(rng.random_range(0.01..3.0))
                .unwrap();
            let z: Vec<f64> = (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect();
            let once = region.restrict(&z);
            let twice = region.restrict(&once);
            for (a, b) in once.iter().zip(&twice) {
                assert!((a - b).abs() < 1e-12, "restrict not idempotent");
            }
            assert!(region.contains(&once, 1e-9));
        }
    }

    #[test]
    fn closest_train_prefers_feasible_point() {
        // only record 1 is feasible; the huge penalty makes it the argmin
        let model = LinearMeanModel::new(10.0, vec![100.0]);
        let q = query(vec![0.0], 1, 50.0);
        let records = vec![
            EventRecord::new(vec![0.1], true, 1.0).unwrap(), // shift 10 < 50
            EventRecord::new(vec![0.9], true, 2.0).unwrap(), // shift 90 >= 50
        ];
        let ds = Dataset::new(records).unwrap();
        let found = closest_feasible_train(&q, &model, &ds).unwrap();
        assert_eq!(found.index, 1);
        assert!(found.feasible_found);
        assert!((found.radius - 0.9).abs() < 1e-15);
        assert!((found.loss - 0.9).abs() < 1e-12);
    }

    #[test]
    fn closest_train_all_infeasible() {
        let model = LinearMeanModel::new(10.0, vec![1.0]);
        let q = query(vec![0.0], 1, 50.0);
        let records = vec![
            EventRecord::new(vec![0.1], true, 1.0).unwrap(),
            EventRecord::new(vec![0.9], true, 2.0).unwrap(),
        ];
        let ds = Dataset::new(records).unwrap();
        let found = closest_feasible_train(&q, &model, &ds).unwrap();
        assert!(!found.feasible_found);
        // argmin of C*gap + distance: gaps are 49.9 and 49.1 -> index 1
        assert_eq!(found.index, 1);
    }

    #[test]
    fn gap_depends_only_on_the_predicted_curve() {
        // a zero-slope coordinate never changes the prediction, so the gap
        // must ignore it entirely
        let model = LinearMeanModel::new(30.0, vec![5.0, 0.0]);
        let q = query(vec![0.1, 0.1], 1, 2.0);
        let a = q.feasibility_gap(&model, &[0.7, -3.0]).unwrap();
        let b = q.feasibility_gap(&model, &[0.7, 42.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn closest_train_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let model = LinearMeanModel::new(40.0, vec![8.0, -3.0]);
        let records: Vec<EventRecord> = (0..60)
            .map(|_| {
                EventRecord::new(
                    vec![rng.random::<f64>(), rng.random::<f64>()],
                    rng.random::<f64>() < 0.9,
                    0.5 + rng.random::<f64>(),
                )
                .unwrap()
            })
            .collect();
        let ds = Dataset::new(records).unwrap();
        let q = query(vec![0.5, 0.5], 1, 1.5);
        let found = closest_feasible_train(&q, &model, &ds).unwrap();

        // independent exhaustive scan
        let mut best_idx = 0;
        let mut best_loss = f64::INFINITY;
        for (i, rec) in ds.records().iter().enumerate() {
            let loss = q.loss(&model, &rec.features).unwrap();
            if loss < best_loss {
                best_loss = loss;
                best_idx = i;
            }
        }
        assert_eq!(found.index, best_idx);
        assert!((found.loss - best_loss).abs() < 1e-12);
    }
}

//! Survival-analysis fundamentals: event records, datasets, the event-time
//! grid, and piecewise-constant survival functions with restricted means.
//!
//! A survival function here is a step function on the grid t_0 < t_1 < ... <
//! t_{q+1}, where t_0 = 0, t_1..t_q are the distinct observed times and
//! t_{q+1} = t_q + t_gamma closes the horizon. The restricted mean of a step
//! function is the exact integral over [t_0, t_{q+1}].

use crate::error::{Error, Result};

/// One observation: feature vector, event indicator, observed time.
///
/// `event == true` means the event of interest was observed at `time`;
/// `false` means the observation was censored at `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub features: Vec<f64>,
    pub event: bool,
    pub time: f64,
}

impl EventRecord {
    pub fn new(features: Vec<f64>, event: bool, time: f64) -> Result<Self> {
        if !(time > 0.0) || !time.is_finite() {
            return Err(Error::InvalidData(format!(
                "observed time must be finite and positive, got {time}"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            event,
            time,
        })
    }
}

/// An ordered collection of records sharing one feature dimension.
#[derive(Debug, Clone)]
pub struct Dataset {
    records: Vec<EventRecord>,
    dim: usize,
}

impl Dataset {
    /// Requires n >= 2 records of equal dimension and at least one event.
    pub fn new(records: Vec<EventRecord>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::InvalidData(format!(
                "dataset needs at least 2 records, got {}",
                records.len()
            )));
        }
        let dim = records[0].features.len();
        for (i, rec) in records.iter().enumerate() {
            if rec.features.len() != dim {
                return Err(Error::InvalidData(format!(
                    "record {i} has dimension {}, expected {dim}",
                    rec.features.len()
                )));
            }
        }
        if !records.iter().any(|r| r.event) {
            return Err(Error::InvalidData(
                "dataset has no events (all records censored)".into(),
            ));
        }
        Ok(Self { records, dim })
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Sorted distinct observed times (events and censorings alike).
    pub fn distinct_times(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self.records.iter().map(|r| r.time).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        times
    }
}

/// The event-time grid t_0 = 0 < t_1 < ... < t_q < t_{q+1} = t_q + tail.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    knots: Vec<f64>,
    gaps: Vec<f64>,
    tail: f64,
}

impl TimeGrid {
    /// Build the grid from the distinct observed times of a dataset,
    /// closed by a tail gap of `t_gamma` after the last observed time.
    pub fn from_dataset(dataset: &Dataset, t_gamma: f64) -> Result<Self> {
        if !(t_gamma > 0.0) || !t_gamma.is_finite() {
            return Err(Error::InvalidData(format!(
                "tail gap must be finite and positive, got {t_gamma}"
            )));
        }
        let distinct = dataset.distinct_times();
        let mut knots = Vec::with_capacity(distinct.len() + 2);
        knots.push(0.0);
        knots.extend_from_slice(&distinct);
        let last = *knots.last().unwrap();
        knots.push(last + t_gamma);
        Self::from_knots(knots)
    }

    /// Build the grid with the data-scale default tail gap: the mean spacing
    /// of adjacent distinct observed times, or t_1 when only one exists.
    pub fn from_dataset_default_tail(dataset: &Dataset) -> Result<Self> {
        Self::from_dataset(dataset, default_tail_gap(&dataset.distinct_times()))
    }

    /// Build directly from knots (t_0 = 0 included, horizon included).
    pub fn from_knots(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidData("grid needs at least 2 knots".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::InvalidData(format!(
                "first knot must be 0, got {}",
                knots[0]
            )));
        }
        let mut gaps = Vec::with_capacity(knots.len() - 1);
        for w in knots.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) || !gap.is_finite() {
                return Err(Error::InvalidData(format!(
                    "knots must be strictly increasing and finite near {} -> {}",
                    w[0], w[1]
                )));
            }
            gaps.push(gap);
        }
        let tail = *gaps.last().unwrap();
        Ok(Self { knots, gaps, tail })
    }

    /// All knots, t_0 through t_{q+1}.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Interval widths mu_j = t_{j+1} - t_j, j = 0..q.
    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    /// The tail gap t_{q+1} - t_q.
    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Number of step intervals, q + 1.
    pub fn n_steps(&self) -> usize {
        self.gaps.len()
    }

    /// t_1, the earliest observed time.
    pub fn first_event_time(&self) -> f64 {
        self.knots[1]
    }

    /// t_{q+1}, the closed end of the grid.
    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Index of the step interval containing `time`, if inside [t_0, t_{q+1}).
    pub fn step_index(&self, time: f64) -> Option<usize> {
        if time < 0.0 || time >= self.horizon() {
            return None;
        }
        match self
            .knots
            .binary_search_by(|k| k.partial_cmp(&time).unwrap())
        {
            Ok(j) => Some(j.min(self.n_steps() - 1)),
            Err(j) => Some(j - 1),
        }
    }

    /// Index of the knot equal to `time`, if any.
    pub fn knot_index(&self, time: f64) -> Option<usize> {
        self.knots
            .binary_search_by(|k| k.partial_cmp(&time).unwrap())
            .ok()
    }
}

/// Mean spacing of adjacent distinct observed times; `t_1` when only one
/// distinct time exists.
pub fn default_tail_gap(distinct_times: &[f64]) -> f64 {
    match distinct_times.len() {
        0 => 1.0,
        1 => distinct_times[0],
        q => (distinct_times[q - 1] - distinct_times[0]) / (q - 1) as f64,
    }
}

/// A survival function that is constant on each grid interval:
/// S(t) = values[j] for t in [t_j, t_{j+1}), with values[0] = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvivalFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl StepSurvivalFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_steps() {
            return Err(Error::InvalidData(format!(
                "expected {} step values, got {}",
                grid.n_steps(),
                values.len()
            )));
        }
        if values[0] != 1.0 {
            return Err(Error::InvalidData(format!(
                "survival must start at 1, got {}",
                values[0]
            )));
        }
        for w in values.windows(2) {
            if !(0.0..=1.0).contains(&w[1]) || w[1] > w[0] {
                return Err(Error::InvalidData(format!(
                    "survival values must be non-increasing within [0, 1], got {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// S(t); 1 before the grid, the last step value at and past the horizon.
    pub fn value_at(&self, time: f64) -> f64 {
        match self.grid.step_index(time) {
            Some(j) => self.values[j],
            None if time < 0.0 => 1.0,
            None => *self.values.last().unwrap(),
        }
    }

    /// The restricted mean time to event: the exact integral of the step
    /// function over [t_0, t_{q+1}], i.e. sum of mu_j * s_j.
    pub fn restricted_mean(&self) -> f64 {
        restricted_mean_parts(self.grid.gaps(), &self.values)
    }
}

/// Sum of gap * value pairs; shared so every route through the code computes
/// the mean with identical floating-point operation order.
pub(crate) fn restricted_mean_parts(gaps: &[f64], values: &[f64]) -> f64 {
    gaps.iter().zip(values).map(|(gap, s)| gap * s).sum()
}

/// base^exponent for base in [0, 1] and exponent > 0, computed in log space.
/// base 0 maps to 0 and base 1 to 1, so saturated survival values stay exact.
pub(crate) fn unit_pow(base: f64, exponent: f64) -> f64 {
    if base <= 0.0 {
        0.0
    } else if base >= 1.0 {
        1.0
    } else {
        (exponent * base.ln()).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toy_dataset(times: &[f64]) -> Dataset {
        let records = times
            .iter()
            .map(|&t| EventRecord::new(vec![0.0], true, t).unwrap())
            .collect();
        Dataset::new(records).unwrap()
    }

    #[test]
    fn record_rejects_nonpositive_time() {
        assert!(EventRecord::new(vec![1.0], true, 0.0).is_err());
        assert!(EventRecord::new(vec![1.0], true, -1.0).is_err());
        assert!(EventRecord::new(vec![1.0], true, f64::NAN).is_err());
    }

    #[test]
    fn record_rejects_nonfinite_feature() {
        assert!(EventRecord::new(vec![f64::INFINITY], false, 1.0).is_err());
    }

    #[test]
    fn dataset_requires_two_records_and_an_event() {
        let one = vec![EventRecord::new(vec![0.0], true, 1.0).unwrap()];
        assert!(Dataset::new(one).is_err());
        let censored = vec![
            EventRecord::new(vec![0.0], false, 1.0).unwrap(),
            EventRecord::new(vec![0.0], false, 2.0).unwrap(),
        ];
        assert!(Dataset::new(censored).is_err());
    }

    #[test]
    fn dataset_rejects_mixed_dimensions() {
        let recs = vec![
            EventRecord::new(vec![0.0], true, 1.0).unwrap(),
            EventRecord::new(vec![0.0, 1.0], true, 2.0).unwrap(),
        ];
        assert!(Dataset::new(recs).is_err());
    }

    #[test]
    fn grid_deduplicates_times() {
        // times {3, 1, 3, 2}, tail 1 -> knots (0, 1, 2, 3, 4), gaps (1, 1, 1, 1)
        let ds = toy_dataset(&[3.0, 1.0, 3.0, 2.0]);
        let grid = TimeGrid::from_dataset(&ds, 1.0).unwrap();
        assert_eq!(grid.knots(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(grid.gaps(), &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(grid.tail(), 1.0);
    }

    #[test]
    fn grid_single_time() {
        // times {5}, tail 2 -> knots (0, 5, 7), gaps (5, 2)
        let recs = vec![
            EventRecord::new(vec![0.0], true, 5.0).unwrap(),
            EventRecord::new(vec![1.0], true, 5.0).unwrap(),
        ];
        let ds = Dataset::new(recs).unwrap();
        let grid = TimeGrid::from_dataset(&ds, 2.0).unwrap();
        assert_eq!(grid.knots(), &[0.0, 5.0, 7.0]);
        assert_eq!(grid.gaps(), &[5.0, 2.0]);
    }

    #[test]
    fn grid_matches_sort_dedup_oracle() {
        // 1000 pseudo-Weibull times; q must equal the distinct-count oracle.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let times: Vec<f64> = (0..1000)
            .map(|_| {
                let xi: f64 = rng.random_range(1e-12_f64..1.0);
                (-xi.ln() / 1e-5).sqrt()
            })
            .collect();
        let ds = toy_dataset(&times);
        let grid = TimeGrid::from_dataset(&ds, 1.0).unwrap();

        // independent sort-and-deduplicate oracle
        let mut oracle = times.clone();
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        oracle.dedup();

        assert_eq!(grid.knots().len(), oracle.len() + 2);
        assert_eq!(&grid.knots()[1..=oracle.len()], oracle.as_slice());
    }

    #[test]
    fn grid_rejects_bad_tail() {
        let ds = toy_dataset(&[1.0, 2.0]);
        assert!(TimeGrid::from_dataset(&ds, 0.0).is_err());
        assert!(TimeGrid::from_dataset(&ds, -1.0).is_err());
    }

    #[test]
    fn default_tail_is_mean_spacing() {
        assert_eq!(default_tail_gap(&[1.0, 2.0, 4.0]), 1.5);
        assert_eq!(default_tail_gap(&[5.0]), 5.0);
    }

    #[test]
    fn restricted_mean_constant_one() {
        let grid = TimeGrid::from_knots(vec![0.0, 10.0]).unwrap();
        let sf = StepSurvivalFunction::new(grid, vec![1.0]).unwrap();
        assert_eq!(sf.restricted_mean(), 10.0);
    }

    #[test]
    fn restricted_mean_hand_riemann_sum() {
        // knots (0, 1, 3, 6), values (1, 0.5, 0.25) -> 1*1 + 2*0.5 + 3*0.25 = 2.75
        let grid = TimeGrid::from_knots(vec![0.0, 1.0, 3.0, 6.0]).unwrap();
        let sf = StepSurvivalFunction::new(grid, vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(sf.restricted_mean(), 2.75);
    }

    #[test]
    fn restricted_mean_lower_limit() {
        // mass only on the first gap -> mean = t_1
        let grid = TimeGrid::from_knots(vec![0.0, 2.0, 5.0, 9.0]).unwrap();
        let sf = StepSurvivalFunction::new(grid, vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!(sf.restricted_mean(), 2.0);
    }

    #[test]
    fn step_function_rejects_increasing_values() {
        let grid = TimeGrid::from_knots(vec![0.0, 1.0, 2.0]).unwrap();
        assert!(StepSurvivalFunction::new(grid.clone(), vec![1.0, 1.1]).is_err());
        assert!(StepSurvivalFunction::new(grid.clone(), vec![0.9, 0.8]).is_err());
        assert!(StepSurvivalFunction::new(grid, vec![1.0]).is_err());
    }

    #[test]
    fn value_at_follows_steps() {
        let grid = TimeGrid::from_knots(vec![0.0, 1.0, 3.0]).unwrap();
        let sf = StepSurvivalFunction::new(grid, vec![1.0, 0.5]).unwrap();
        assert_eq!(sf.value_at(0.0), 1.0);
        assert_eq!(sf.value_at(0.99), 1.0);
        assert_eq!(sf.value_at(1.0), 0.5);
        assert_eq!(sf.value_at(2.9), 0.5);
        assert_eq!(sf.value_at(5.0), 0.5);
    }

    #[test]
    fn unit_pow_handles_saturation() {
        assert_eq!(unit_pow(0.0, 2.5), 0.0);
        assert_eq!(unit_pow(1.0, 1e300), 1.0);
        assert!((unit_pow(0.5, 2.0) - 0.25).abs() < 1e-15);
        assert_eq!(unit_pow(0.5, f64::INFINITY), 0.0);
    }

    proptest! {
        // Random step functions: non-increasing values from cumulative minima.
        #[test]
        fn restricted_mean_in_range_and_matches_quadrature(
            raw_knots in proptest::collection::vec(0.01_f64..100.0, 2..20),
            raw_values in proptest::collection::vec(0.0_f64..1.0, 19),
        ) {
            let mut knots = vec![0.0];
            let mut acc = 0.0;
            for k in &raw_knots {
                acc += k;
                knots.push(acc);
            }
            let n_steps = knots.len() - 1;
            let mut values = Vec::with_capacity(n_steps);
            let mut level = 1.0_f64;
            values.push(1.0);
            for v in raw_values.iter().take(n_steps - 1) {
                level = level.min(*v);
                values.push(level);
            }
            let grid = TimeGrid::from_knots(knots.clone()).unwrap();
            let sf = StepSurvivalFunction::new(grid, values.clone()).unwrap();
            let mean = sf.restricted_mean();

            // range [t_1, t_{q+1}]
            prop_assert!(mean >= knots[1] - 1e-12);
            prop_assert!(mean <= *knots.last().unwrap() + 1e-12);

            // fine-grained Riemann-sum oracle, 64 panels per step
            let mut quad = 0.0;
            for j in 0..n_steps {
                let width = (knots[j + 1] - knots[j]) / 64.0;
                for p in 0..64 {
                    let t = knots[j] + (p as f64 + 0.5) * width;
                    quad += width * sf.value_at(t);
                }
            }
            prop_assert!((mean - quad).abs() <= 1e-12 * quad.abs().max(1.0));
        }

        // Pointwise-larger values give a >= mean.
        #[test]
        fn restricted_mean_monotone(
            raw_values in proptest::collection::vec(0.0_f64..1.0, 5),
            bumps in proptest::collection::vec(0.0_f64..0.5, 5),
        ) {
            let knots = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
            let grid = TimeGrid::from_knots(knots).unwrap();

            let mut lower = vec![1.0];
            let mut level = 1.0_f64;
            for v in &raw_values {
                level = level.min(*v);
                lower.push(level);
            }
            let mut upper = vec![1.0];
            let mut up_level = 1.0_f64;
            for (v, b) in raw_values.iter().zip(&bumps) {
                up_level = up_level.min((v + b).min(1.0));
                upper.push(up_level);
            }
            // make upper pointwise >= lower
            for j in 0..upper.len() {
                if upper[j] < lower[j] {
                    upper[j] = lower[j];
                }
            }
            // restore monotonicity of upper (cumulative min keeps >= lower)
            for j in 1..upper.len() {
                if upper[j] > upper[j - 1] {
                    upper[j] = upper[j - 1];
                }
            }
            for j in 0..upper.len() {
                prop_assert!(upper[j] >= lower[j] - 1e-15);
            }

            let sf_low = StepSurvivalFunction::new(grid.clone(), lower).unwrap();
            let sf_up = StepSurvivalFunction::new(grid, upper).unwrap();
            prop_assert!(sf_up.restricted_mean() >= sf_low.restricted_mean() - 1e-12);
        }
    }
}

//! A minimal random survival forest black box: bootstrap survival trees with
//! log-rank splitting, Nelson-Aalen cumulative-hazard leaves on the shared
//! training grid, ensemble-averaged into step survival functions.
//!
//! Trees are trained in parallel, one ChaCha stream per tree index, over a
//! canonical content-sorted copy of the records, so the forest is a pure
//! function of (dataset contents, hyperparameters, seed).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{check_dim, SurvivalModel};
use crate::error::{Error, Result};
use crate::survival::{Dataset, EventRecord, StepSurvivalFunction, TimeGrid};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RsfOptions {
    pub n_trees: usize,
    /// Features tried per split; ceil(sqrt(d)) when absent.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
    pub seed: u64,
    /// Tail gap for the grid; data-scale default when absent.
    pub t_gamma: Option<f64>,
}

impl Default for RsfOptions {
    fn default() -> Self {
        Self {
            n_trees: 250,
            mtry: None,
            min_leaf: 15,
            seed: 0,
            t_gamma: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
    /// Cumulative-hazard increments (grid knot index, hazard jump) of the
    /// leaf's Nelson-Aalen estimate; the CHF at knot j is the sum of jumps
    /// with index <= j.
    Leaf { increments: Vec<(u32, f64)> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalTree {
    root: Node,
}

impl SurvivalTree {
    fn leaf_for(&self, x: &[f64]) -> &Vec<(u32, f64)> {
        let mut node = &self.root;
        loop {
            match node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold { left } else { right };
                }
                Node::Leaf { increments } => return increments,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomSurvivalForest {
    trees: Vec<SurvivalTree>,
    grid: TimeGrid,
    dim: usize,
}

impl RandomSurvivalForest {
    pub fn from_parts(trees: Vec<SurvivalTree>, grid: TimeGrid, dim: usize) -> Result<Self> {
        if trees.is_empty() {
            return Err(Error::InvalidData("forest needs at least one tree".into()));
        }
        Ok(Self { trees, grid, dim })
    }

    pub fn trees(&self) -> &[SurvivalTree] {
        &self.trees
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl SurvivalModel for RandomSurvivalForest {
    fn dim(&self) -> usize {
        self.dim
    }

    fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// exp(- mean cumulative hazard across trees), clamped into a valid
    /// step survival function.
    fn predict_sf(&self, x: &[f64]) -> Result<StepSurvivalFunction> {
        check_dim(self, x)?;
        let n_steps = self.grid.n_steps();
        let mut jumps = vec![0.0; n_steps];
        for tree in &self.trees {
            for (idx, inc) in tree.leaf_for(x) {
                jumps[*idx as usize] += inc;
            }
        }
        let scale = 1.0 / self.trees.len() as f64;
        let mut values = Vec::with_capacity(n_steps);
        let mut cum = 0.0;
        let mut floor = 1.0_f64;
        for jump in jumps {
            cum += jump;
            let v = (-cum * scale).exp().clamp(0.0, 1.0);
            floor = floor.min(v);
            values.push(floor);
        }
        StepSurvivalFunction::new(self.grid.clone(), values)
    }
}

/// Canonical content ordering: by time, then event flag, then features.
/// Bootstrap draws index into this order, which makes the forest invariant
/// to permutations of the input records.
fn canonical_order(dataset: &Dataset) -> Vec<&EventRecord> {
    let mut refs: Vec<&EventRecord> = dataset.records().iter().collect();
    refs.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(a.event.cmp(&b.event))
            .then_with(|| {
                for (p, q) in a.features.iter().zip(&b.features) {
                    match p.partial_cmp(q).unwrap() {
                        std::cmp::Ordering::Equal => continue,
                        other => return other,
                    }
                }
                std::cmp::Ordering::Equal
            })
    });
    refs
}

/// Per-node survival statistics on the node's distinct times.
struct NodeTimes {
    /// Sorted distinct member times.
    times: Vec<f64>,
    /// Event count per time.
    events_at: Vec<f64>,
    /// Members with time >= each time (suffix totals).
    at_risk: Vec<f64>,
    /// Each member's index into `times`.
    member_rank: Vec<usize>,
}

impl NodeTimes {
    fn build(records: &[&EventRecord], members: &[usize]) -> Self {
        let mut times: Vec<f64> = members.iter().map(|&m| records[m].time).collect();
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        times.dedup();
        let rank_of = |t: f64| times.binary_search_by(|v| v.partial_cmp(&t).unwrap()).unwrap();

        let mut total_at = vec![0.0; times.len()];
        let mut events_at = vec![0.0; times.len()];
        let mut member_rank = Vec::with_capacity(members.len());
        for &m in members {
            let rank = rank_of(records[m].time);
            member_rank.push(rank);
            total_at[rank] += 1.0;
            if records[m].event {
                events_at[rank] += 1.0;
            }
        }
        let mut at_risk = vec![0.0; times.len()];
        let mut suffix = 0.0;
        for rank in (0..times.len()).rev() {
            suffix += total_at[rank];
            at_risk[rank] = suffix;
        }
        Self {
            times,
            events_at,
            at_risk,
            member_rank,
        }
    }

    fn n_events(&self) -> f64 {
        self.events_at.iter().sum()
    }

    /// Chi-square form of the log-rank statistic for the group marked by
    /// `left_at`/`left_events_at`; None when the variance vanishes.
    fn log_rank(&self, left_at: &[f64], left_events_at: &[f64]) -> Option<f64> {
        let mut observed_minus_expected = 0.0;
        let mut variance = 0.0;
        let mut left_risk = 0.0;
        for rank in (0..self.times.len()).rev() {
            left_risk += left_at[rank];
            let d = self.events_at[rank];
            let y = self.at_risk[rank];
            if d > 0.0 && y > 1.0 {
                let share = left_risk / y;
                observed_minus_expected += left_events_at[rank] - d * share;
                variance += d * share * (1.0 - share) * (y - d) / (y - 1.0);
            }
        }
        if variance > 1e-12 {
            Some(observed_minus_expected * observed_minus_expected / variance)
        } else {
            None
        }
    }

    /// Nelson-Aalen hazard jumps translated to grid knot indices.
    fn hazard_increments(&self, grid: &TimeGrid) -> Vec<(u32, f64)> {
        let mut increments = Vec::new();
        for rank in 0..self.times.len() {
            if self.events_at[rank] > 0.0 {
                let idx = grid
                    .knot_index(self.times[rank])
                    .expect("member time missing from the training grid");
                increments.push((idx as u32, self.events_at[rank] / self.at_risk[rank]));
            }
        }
        increments
    }
}

struct TreeBuilder<'a> {
    records: &'a [&'a EventRecord],
    grid: &'a TimeGrid,
    mtry: usize,
    min_leaf: usize,
}

impl<'a> TreeBuilder<'a> {
    fn build(&self, members: Vec<usize>, rng: &mut ChaCha8Rng) -> Node {
        let stats = NodeTimes::build(self.records, &members);
        if members.len() < 2 * self.min_leaf || stats.n_events() == 0.0 {
            return Node::Leaf {
                increments: stats.hazard_increments(self.grid),
            };
        }

        let dim = self.records[0].features.len();
        let candidates = sample_features(dim, self.mtry, rng);

        let mut best: Option<(f64, usize, f64)> = None; // (stat, feature, threshold)
        let mut left_at = vec![0.0; stats.times.len()];
        let mut left_events_at = vec![0.0; stats.times.len()];

        for &feature in &candidates {
            let mut by_value: Vec<usize> = (0..members.len()).collect();
            by_value.sort_by(|&a, &b| {
                self.records[members[a]].features[feature]
                    .partial_cmp(&self.records[members[b]].features[feature])
                    .unwrap()
            });
            left_at.iter_mut().for_each(|v| *v = 0.0);
            left_events_at.iter_mut().for_each(|v| *v = 0.0);

            for (count, window) in by_value.windows(2).enumerate() {
                let moved = window[0];
                let rank = stats.member_rank[moved];
                left_at[rank] += 1.0;
                if self.records[members[moved]].event {
                    left_events_at[rank] += 1.0;
                }
                let n_left = count + 1;
                let here = self.records[members[moved]].features[feature];
                let next = self.records[members[window[1]]].features[feature];
                if next <= here {
                    continue; // not a boundary between distinct values
                }
                if n_left < self.min_leaf || members.len() - n_left < self.min_leaf {
                    continue;
                }
                if let Some(stat) = stats.log_rank(&left_at, &left_events_at) {
                    let threshold = 0.5 * (here + next);
                    if best.map_or(true, |(s, _, _)| stat > s) {
                        best = Some((stat, feature, threshold));
                    }
                }
            }
        }

        let Some((stat, feature, threshold)) = best else {
            return Node::Leaf {
                increments: stats.hazard_increments(self.grid),
            };
        };
        if stat <= 0.0 {
            return Node::Leaf {
                increments: stats.hazard_increments(self.grid),
            };
        }

        let (left_members, right_members): (Vec<usize>, Vec<usize>) = members
            .into_iter()
            .partition(|&m| self.records[m].features[feature] <= threshold);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.build(left_members, rng)),
            right: Box::new(self.build(right_members, rng)),
        }
    }
}

/// `mtry` distinct feature indices by partial Fisher-Yates.
fn sample_features(dim: usize, mtry: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..dim).collect();
    let take = mtry.min(dim);
    for i in 0..take {
        let j = rng.random_range(i..dim);
        pool.swap(i, j);
    }
    pool.truncate(take);
    pool
}

/// Fit a forest: each tree sees a bootstrap sample of the canonical record
/// order and splits on the best log-rank statistic over `mtry` random
/// features. Deterministic given (dataset contents, options, seed).
pub fn fit_rsf(dataset: &Dataset, options: &RsfOptions) -> Result<RandomSurvivalForest> {
    if options.n_trees == 0 {
        return Err(Error::InvalidData("n_trees must be at least 1".into()));
    }
    if options.min_leaf == 0 {
        return Err(Error::InvalidData("min_leaf must be at least 1".into()));
    }
    let dim = dataset.dim();
    let mtry = options.mtry.unwrap_or_else(|| (dim as f64).sqrt().ceil() as usize);
    if mtry == 0 || mtry > dim {
        return Err(Error::InvalidData(format!(
            "mtry must lie in 1..={dim}, got {mtry}"
        )));
    }
    if dataset.n_events() == 0 {
        return Err(Error::InvalidData("no events to fit on".into()));
    }

    let grid = match options.t_gamma {
        Some(t_gamma) => TimeGrid::from_dataset(dataset, t_gamma)?,
        None => TimeGrid::from_dataset_default_tail(dataset)?,
    };
    let records = canonical_order(dataset);
    let builder = TreeBuilder {
        records: &records,
        grid: &grid,
        mtry,
        min_leaf: options.min_leaf,
    };

    let n = records.len();
    let trees: Vec<SurvivalTree> = (0..options.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
            rng.set_stream(tree_idx as u64);
            let members: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            SurvivalTree {
                root: builder.build(members, &mut rng),
            }
        })
        .collect();

    RandomSurvivalForest::from_parts(trees, grid, dim)
}

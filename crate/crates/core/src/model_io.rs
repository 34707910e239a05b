//! Model files: JSON serialization for Cox models and forests, optional
//! min-max feature scaling recorded in the metadata, and a scaling adapter
//! so loaded models accept features in original units.
//!
//! Doubles round-trip bit-exactly: serde_json emits shortest-representation
//! decimals that parse back to the same bits.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::counterfactual::SurvivalModel;
use crate::cox::CoxModel;
use crate::error::{Error, Result};
use crate::rsf::{RandomSurvivalForest, SurvivalTree};
use crate::survival::{Dataset, EventRecord, StepSurvivalFunction, TimeGrid};

/// Per-feature min-max ranges of the training data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MinMaxScaling {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl MinMaxScaling {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        let bounds = crate::counterfactual::feature_bounds(dataset);
        Self {
            lower: bounds.lower().to_vec(),
            upper: bounds.upper().to_vec(),
        }
    }

    /// Map one point into [0, 1] per feature; constant features map to 0.
    pub fn scale_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, hi))| {
                let span = hi - lo;
                if span > 0.0 {
                    (v - lo) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// A copy of the dataset with scaled features (times untouched).
    pub fn scale_dataset(&self, dataset: &Dataset) -> Result<Dataset> {
        Dataset::new(
            dataset
                .records()
                .iter()
                .map(|rec| {
                    EventRecord::new(self.scale_point(&rec.features), rec.event, rec.time)
                })
                .collect::<Result<_>>()?,
        )
    }
}

/// Adapter that feeds original-unit features through a scaling before
/// delegating to the wrapped model.
pub struct ScaledModel<M> {
    inner: M,
    scaling: MinMaxScaling,
}

impl<M: SurvivalModel> ScaledModel<M> {
    pub fn new(inner: M, scaling: MinMaxScaling) -> Self {
        Self { inner, scaling }
    }
}

impl<M: SurvivalModel> SurvivalModel for ScaledModel<M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn grid(&self) -> &TimeGrid {
        self.inner.grid()
    }

    fn predict_sf(&self, x: &[f64]) -> Result<StepSurvivalFunction> {
        self.inner.predict_sf(&self.scaling.scale_point(x))
    }

    fn mean(&self, x: &[f64]) -> Result<f64> {
        self.inner.mean(&self.scaling.scale_point(x))
    }
}

/// Model-file metadata; `kind` discriminates the document layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub version: String,
    pub scaling: Option<MinMaxScaling>,
    #[serde(default, flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl ModelMeta {
    pub fn new(kind: &str) -> Self {
        Self {
            kind: kind.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            scaling: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_scaling(mut self, scaling: Option<MinMaxScaling>) -> Self {
        self.scaling = scaling;
        self
    }

    pub fn insert(mut self, key: &str, value: serde_json::Value) -> Self {
        self.extra.insert(key.to_string(), value);
        self
    }
}

#[derive(Serialize, Deserialize)]
struct CoxFileRepr {
    b: Vec<f64>,
    grid_knots: Vec<f64>,
    baseline_values: Vec<f64>,
    meta: ModelMeta,
}

#[derive(Serialize, Deserialize)]
struct RsfFileRepr {
    trees: Vec<SurvivalTree>,
    grid_knots: Vec<f64>,
    dim: usize,
    meta: ModelMeta,
}

/// A deserialized model of either kind.
#[derive(Clone)]
pub enum LoadedModel {
    Cox(CoxModel),
    Rsf(RandomSurvivalForest),
}

impl LoadedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            LoadedModel::Cox(_) => "cox",
            LoadedModel::Rsf(_) => "rsf",
        }
    }

    pub fn as_cox(&self) -> Option<&CoxModel> {
        match self {
            LoadedModel::Cox(model) => Some(model),
            LoadedModel::Rsf(_) => None,
        }
    }
}

/// A model plus its metadata, as stored on disk.
pub struct ModelFile {
    pub model: LoadedModel,
    pub meta: ModelMeta,
}

impl ModelFile {
    pub fn cox(model: CoxModel, meta: ModelMeta) -> Self {
        Self {
            model: LoadedModel::Cox(model),
            meta,
        }
    }

    pub fn rsf(model: RandomSurvivalForest, meta: ModelMeta) -> Self {
        Self {
            model: LoadedModel::Rsf(model),
            meta,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let json = match &self.model {
            LoadedModel::Cox(model) => serde_json::to_string_pretty(&CoxFileRepr {
                b: model.coeffs().to_vec(),
                grid_knots: model.baseline().grid().knots().to_vec(),
                baseline_values: model.baseline().values().to_vec(),
                meta: self.meta.clone(),
            })?,
            LoadedModel::Rsf(forest) => serde_json::to_string_pretty(&RsfFileRepr {
                trees: forest.trees().to_vec(),
                grid_knots: forest.grid().knots().to_vec(),
                dim: forest.dim(),
                meta: self.meta.clone(),
            })?,
        };
        Ok(json)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(json)?;
        let kind = value
            .get("meta")
            .and_then(|m| m.get("kind"))
            .and_then(|k| k.as_str())
            .ok_or_else(|| Error::InvalidData("model file lacks meta.kind".into()))?;
        match kind {
            "cox" => {
                let repr: CoxFileRepr = serde_json::from_value(value)?;
                let grid = TimeGrid::from_knots(repr.grid_knots)?;
                let baseline = StepSurvivalFunction::new(grid, repr.baseline_values)?;
                Ok(Self {
                    model: LoadedModel::Cox(CoxModel::new(repr.b, baseline)?),
                    meta: repr.meta,
                })
            }
            "rsf" => {
                let repr: RsfFileRepr = serde_json::from_value(value)?;
                let grid = TimeGrid::from_knots(repr.grid_knots)?;
                Ok(Self {
                    model: LoadedModel::Rsf(RandomSurvivalForest::from_parts(
                        repr.trees, grid, repr.dim,
                    )?),
                    meta: repr.meta,
                })
            }
            other => Err(Error::InvalidData(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The exact route in original feature units. Requires a Cox model;
    /// when a scaling is recorded, the linear constraint found in scaled
    /// coordinates is mapped back through the affine transform before the
    /// projection, so the result and its distance stay in original units.
    pub fn solve_exact(
        &self,
        query: &crate::counterfactual::CounterfactualQuery,
        bounds: &crate::counterfactual::FeatureBox,
    ) -> Result<crate::exact::ExactSolution> {
        let LoadedModel::Cox(model) = &self.model else {
            return Err(Error::InvalidData(
                "the exact method requires a cox model".into(),
            ));
        };
        let Some(scaling) = &self.meta.scaling else {
            return crate::exact::solve_exact(query, model, bounds);
        };

        let wrapped = ScaledModel::new(model.clone(), scaling.clone());
        let objective =
            crate::counterfactual::CounterfactualObjective::new(query, &wrapped)?;
        let mean_x = objective.mean_x();
        let equation =
            crate::exact::ShiftEquation::from_model(model, mean_x, query.theta, query.r)?;
        let root = equation.solve(crate::exact::default_root_tolerance(
            model.baseline().grid(),
        ))?;
        let th = f64::from(query.theta);
        let threshold_scaled = 0.5 * ((1.0 + th) * root - (1.0 - th) * root);

        // theta (z_s . b) <= c with z_s,i = (z_i - lo_i)/span_i becomes
        // theta (z . b') <= c + theta * sum b_i lo_i / span_i
        let mut coeffs = Vec::with_capacity(model.coeffs().len());
        let mut offset = 0.0;
        for ((b, lo), hi) in model
            .coeffs()
            .iter()
            .zip(&scaling.lower)
            .zip(&scaling.upper)
        {
            let span = hi - lo;
            if span > 0.0 {
                coeffs.push(b / span);
                offset += b * lo / span;
            } else {
                coeffs.push(0.0);
            }
        }
        let halfspace = crate::exact::HalfspaceBound::new(
            coeffs,
            query.theta,
            threshold_scaled + th * offset,
        )?;
        let z = crate::exact::project_halfspace_box(&query.x, &halfspace, bounds)?;
        let achieved_shift = objective.shift(&z)?;
        let distance = crate::counterfactual::euclidean_distance(&z, &query.x);
        Ok(crate::exact::ExactSolution {
            z,
            achieved_shift,
            distance,
            predictor_root: root,
        })
    }

    /// The model as a black box in original feature units, with the recorded
    /// scaling applied on the way in when present.
    pub fn black_box(&self) -> Box<dyn SurvivalModel> {
        match (&self.model, &self.meta.scaling) {
            (LoadedModel::Cox(model), Some(scaling)) => {
                Box::new(ScaledModel::new(model.clone(), scaling.clone()))
            }
            (LoadedModel::Cox(model), None) => Box::new(model.clone()),
            (LoadedModel::Rsf(forest), Some(scaling)) => {
                Box::new(ScaledModel::new(forest.clone(), scaling.clone()))
            }
            (LoadedModel::Rsf(forest), None) => Box::new(forest.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::{fit_cox, CoxFitOptions};
    use crate::datagen::{generate_synthetic, GeneratorConfig};
    use crate::rsf::{fit_rsf, RsfOptions};

    fn dataset() -> Dataset {
        generate_synthetic(&GeneratorConfig::new(60, 2, vec![0.4, 0.7], 12)).unwrap()
    }

    #[test]
    fn cox_model_round_trips_bit_exactly() {
        let ds = dataset();
        let (model, _) = fit_cox(&ds, &CoxFitOptions::default()).unwrap();
        let file = ModelFile::cox(model.clone(), ModelMeta::new("cox"));
        let json = file.to_json().unwrap();
        let loaded = ModelFile::from_json(&json).unwrap();
        let LoadedModel::Cox(reloaded) = loaded.model else {
            panic!("expected a cox model");
        };
        assert_eq!(reloaded.coeffs(), model.coeffs());
        assert_eq!(reloaded.baseline().values(), model.baseline().values());
        assert_eq!(
            reloaded.baseline().grid().knots(),
            model.baseline().grid().knots()
        );
    }

    #[test]
    fn rsf_round_trips_and_predicts_identically() {
        let ds = dataset();
        let forest = fit_rsf(
            &ds,
            &RsfOptions {
                n_trees: 5,
                min_leaf: 8,
                seed: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let file = ModelFile::rsf(forest.clone(), ModelMeta::new("rsf"));
        let json = file.to_json().unwrap();
        let loaded = ModelFile::from_json(&json).unwrap();
        let LoadedModel::Rsf(reloaded) = loaded.model else {
            panic!("expected a forest");
        };
        for x in [[0.2, 0.9], [0.8, 0.1]] {
            assert_eq!(
                forest.predict_sf(&x).unwrap().values(),
                reloaded.predict_sf(&x).unwrap().values()
            );
        }
    }

    #[test]
    fn unknown_kind_is_rejected() {
        let err = ModelFile::from_json(r#"{"meta": {"kind": "svm", "version": "0"}}"#);
        assert!(err.is_err());
        let err = ModelFile::from_json(r#"{"b": [1.0]}"#);
        assert!(err.is_err());
    }

    #[test]
    fn scaling_maps_training_box_to_unit_cube() {
        let ds = dataset();
        let scaling = MinMaxScaling::from_dataset(&ds);
        let scaled = scaling.scale_dataset(&ds).unwrap();
        for rec in scaled.records() {
            for v in &rec.features {
                assert!((0.0..=1.0).contains(v));
            }
        }
        assert_eq!(scaling.scale_point(&scaling.lower.clone()), vec![0.0, 0.0]);
        assert_eq!(scaling.scale_point(&scaling.upper.clone()), vec![1.0, 1.0]);
    }

    #[test]
    fn exact_route_agrees_between_scaled_and_unscaled_fits() {
        // the partial likelihood is invariant under affine feature maps, so
        // fitting on scaled features and mapping the constraint back must
        // land on the same counterfactual
        let ds = dataset();
        let bounds = crate::counterfactual::feature_bounds(&ds);
        let (plain, _) = fit_cox(&ds, &CoxFitOptions::default()).unwrap();
        let scaling = MinMaxScaling::from_dataset(&ds);
        let scaled_ds = scaling.scale_dataset(&ds).unwrap();
        let (scaled, _) = fit_cox(&scaled_ds, &CoxFitOptions::default()).unwrap();

        let plain_file = ModelFile::cox(plain, ModelMeta::new("cox"));
        let scaled_file = ModelFile::cox(
            scaled,
            ModelMeta::new("cox").with_scaling(Some(scaling)),
        );

        let x = vec![0.5, 0.5];
        let mean_x = plain_file.black_box().mean(&x).unwrap();
        let horizon = ds
            .records()
            .iter()
            .map(|r| r.time)
            .fold(f64::NEG_INFINITY, f64::max);
        let r = 0.05 * (horizon - mean_x).abs().max(1.0);
        let query = crate::counterfactual::CounterfactualQuery::new(x, 1, r, 1e6).unwrap();

        let a = plain_file.solve_exact(&query, &bounds).unwrap();
        let b = scaled_file.solve_exact(&query, &bounds).unwrap();
        assert!(
            crate::counterfactual::euclidean_distance(&a.z, &b.z) < 1e-4,
            "scaled {:?} vs unscaled {:?}",
            b.z,
            a.z
        );
        assert!((b.achieved_shift - query.r).abs() <= 1e-5 * query.r.max(1.0));
    }

    #[test]
    fn exact_route_rejects_forest_models() {
        let ds = dataset();
        let bounds = crate::counterfactual::feature_bounds(&ds);
        let forest = fit_rsf(
            &ds,
            &RsfOptions {
                n_trees: 2,
                min_leaf: 10,
                ..Default::default()
            },
        )
        .unwrap();
        let file = ModelFile::rsf(forest, ModelMeta::new("rsf"));
        let query =
            crate::counterfactual::CounterfactualQuery::new(vec![0.5, 0.5], 1, 1.0, 1e6)
                .unwrap();
        assert!(file.solve_exact(&query, &bounds).is_err());
    }

    #[test]
    fn scaled_model_accepts_original_units() {
        let ds = dataset();
        let scaling = MinMaxScaling::from_dataset(&ds);
        let scaled_ds = scaling.scale_dataset(&ds).unwrap();
        let (model, _) = fit_cox(&scaled_ds, &CoxFitOptions::default()).unwrap();
        let wrapped = ScaledModel::new(model.clone(), scaling.clone());
        let x_orig = ds.records()[0].features.clone();
        let x_scaled = scaling.scale_point(&x_orig);
        assert_eq!(
            wrapped.mean(&x_orig).unwrap(),
            model.mean(&x_scaled).unwrap()
        );

        // and the same through a save/load cycle
        let file = ModelFile::cox(
            model,
            ModelMeta::new("cox").with_scaling(Some(scaling)),
        );
        let loaded = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        let black_box = loaded.black_box();
        assert_eq!(
            black_box.mean(&x_orig).unwrap(),
            wrapped.mean(&x_orig).unwrap()
        );
    }
}

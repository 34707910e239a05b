//! Counterfactual explanations for black-box survival models.
//!
//! Given a trained survival model, an input point x, a direction theta, and a
//! required shift r in restricted mean time to event, this crate finds the
//! nearest feature vector z whose predicted mean moves by at least r:
//! exactly (a convex projection) when the model is a Cox model, and by
//! region-restricted particle swarm optimization for any other model, with a
//! brute-force uniform-sampling oracle for verification.

pub mod counterfactual;
pub mod cox;
pub mod datagen;
pub mod error;
pub mod exact;
pub mod model_io;
pub mod pso;
pub mod rsf;
pub mod survival;
pub mod verify;

pub use counterfactual::{
    closest_feasible_train, euclidean_distance, feature_bounds, ClosestTrain,
    CounterfactualObjective, CounterfactualQuery, FeatureBox, SearchRegion, SurvivalModel,
    DEFAULT_PENALTY,
};
pub use cox::{breslow_baseline, fit_cox, CoxFitOptions, CoxFitReport, CoxModel};
pub use datagen::{generate_synthetic, load_csv, write_csv, CsvSchema, GeneratorConfig};
pub use error::{Error, Result};
pub use exact::{
    max_mean_shift, mean_at_predictor, project_halfspace_box, solve_exact, ExactSolution,
    HalfspaceBound, ShiftEquation,
};
pub use model_io::{LoadedModel, MinMaxScaling, ModelFile, ModelMeta, ScaledModel};
pub use pso::{
    constriction_coefficients, pso_minimize, solve_counterfactual_pso, CounterfactualSolution,
    PsoOutcome, SwarmConfig,
};
pub use rsf::{fit_rsf, RandomSurvivalForest, RsfOptions};
pub use survival::{Dataset, EventRecord, StepSurvivalFunction, TimeGrid};
pub use verify::{build_report, sample_nearest_feasible, SampleSearch, VerificationReport};

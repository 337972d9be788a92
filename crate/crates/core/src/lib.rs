//! Mahalanobis metric and ideal-point recovery from paired comparisons,
//! for users who each see only a few comparisons and items that cluster on
//! low-dimensional subspaces.
//!
//! The crate is `no_std` with `alloc`. All randomness flows from explicit
//! `u64` seeds through ChaCha8 streams.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod linalg;
pub mod model;
pub mod quantized;
pub mod subspace;
pub mod sym;
pub mod synth;
pub mod unquantized;

pub use error::{Error, Result};
pub use model::{
    design_apply, design_gram, estimate_design_strength, feature, pseudo_ideal, psi,
    ComparisonGraph, Design, FeatureElement, Label, Measurement, PairSampler, QuantizedMeasurement,
    UniformPairs, UnquantizedMeasurement, UserModel,
};
pub use quantized::{
    fit_constrained_erm, fit_subspace, loss_value_grad, psd_project, recover_from_fits,
    recover_metric, stitch_ls, stitch_robust, ErmData, FitResult, LossSpec, Recovery, SolverConfig,
    StitchMode, StitchResult, SubspaceProblem,
};
pub use subspace::{
    build_pi, check_clusterable, check_generic_pairwise, check_quadratic_span, phantom_point,
    project_metric, PiMap, Subspace, SubspaceMetric,
};
pub use sym::{sym_to_vec, vec_to_sym, SymMatrix};
pub use synth::{gen_scenario, Scenario, ScenarioConfig};
pub use unquantized::{
    impossibility_witness, shared_pair_designs, solve_multi_user, solve_single_user,
    solve_subspace_unquantized, stitch_exact, LinearSystemSolution, SubspaceSolution,
};

//! Green functions, hyperbolic contraction estimates and Monte Carlo moment
//! experiments for random Schrödinger operators on trees of finite cone type.
//!
//! The crate is organised bottom up:
//!
//! * [`substitution`] builds trees from substitution matrices.
//! * [`greens`] solves the label-invariant Green function recursion, detects
//!   spectral bands and builds the label transition matrix.
//! * [`hyperbolic`] holds the semi-metric `γ` and scalar inequality constants.
//! * [`contraction`] evaluates contraction quantities on a cherry sphere.
//! * [`disorder`] samples admissible random potentials and hoppings.
//! * [`montecarlo`] estimates moments of the perturbed Green function.
//! * [`suites`] bundles randomized inequality checks into reports.
//! * [`model_file`] reads and writes the JSON model format.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contraction;
pub mod disorder;
pub mod error;
pub mod greens;
pub mod hyperbolic;
pub mod model_file;
pub mod montecarlo;
pub mod substitution;
pub mod suites;

mod numeric;

pub use num_complex::Complex64;

pub use contraction::{ContractionReport, InnerFactor, SphereState};
pub use disorder::{DisorderMode, DisorderRealization, DisorderSpec, Law};
pub use error::{Error, Result};
pub use greens::{GreenVector, PMatrix, SolverOptions, SpectralBands};
pub use montecarlo::{Boundary, MomentVector, TrialConfig};
pub use substitution::{
    CherrySphere, Half, LabelPermutation, LabeledTree, SubstitutionModel, ValidationReport,
};

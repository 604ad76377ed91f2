//! Low-regularity time discretisations of the second moment
//! `E|u_k(tau)|^2` for dispersive equations with Gaussian random initial
//! data.
//!
//! The pipeline mirrors the paired-decorated-forest construction:
//!
//! * [`trees`] — decorated trees encoding oscillatory iterated integrals,
//!   with Kirchhoff validation, degree and order projection, symmetry
//!   factors and elementary differentials;
//! * [`forest`] — Duhamel tree sets, Wick pairings, and the paired-forest
//!   class census with multiplicities;
//! * [`oscillatory`] — the exact character (closed-form oscillatory
//!   integrals) and its full-Taylor approximation, the truncation operator,
//!   the local-error functional and order verification;
//! * [`scheme`] — symbolic assembly of the moment schemes, physical-space
//!   rendering and stabilisation filters;
//! * [`spectral`] — FFT pseudospectral execution of the concrete steppers;
//! * [`mc`] — Gaussian sampling, the fine-step reference integrator,
//!   Monte-Carlo moment estimates, and the exact truncated-series oracle.

pub mod filters;
pub mod forest;
pub mod mc;
pub mod oscillatory;
pub mod scheme;
pub mod spectral;
pub mod sympoly;
pub mod trees;

pub use forest::{
    complex_case_filter, duhamel_trees, paired_forest_classes, wick_pairings, NoiseMode,
    PairedForest, PairingClass,
};
pub use oscillatory::{
    eval_pi, eval_pi_forest, eval_pi_nr, local_error, order_check, taylor_k, truncate,
    FrequencyAssignment, OrderCheck, OscillatorySum,
};
pub use scheme::{assemble_scheme, stabilize, to_physical, PhysicalScheme, SchemeExpression, SchemeId};
pub use spectral::{convolve, moment_product, step, GridSpec, SpectralField, Stepper};
pub use trees::{
    degree, kirchhoff_valid, project_order, symmetry_factor, upsilon, ApproxTree, DecoratedTree,
    DispersionSpec, EdgeDecoration, LinearFrequency,
};

//! Robust reduced-rank mixed-effects functional principal component
//! analysis for pairs of sparsely observed curves.
//!
//! The crate fits mean and principal-component functions of two related
//! curve families jointly, with scores and errors following a scale mixture
//! of normals (normal, Student t or slash) so that outlying curves are
//! downweighted. Functions are represented in an orthonormal cubic spline
//! basis with roughness penalties; estimation is by penalized EM.

pub mod error;
pub mod evaluation;
mod linalg;
pub mod model;
pub mod par;
pub mod quad;
pub mod selection;
pub mod simulation;
pub mod smnfamily;
pub mod special;
pub mod splinebasis;

pub use error::{Result, RrmeError};
pub use model::{
    fit, Channel, FitOptions, FitResult, InitMode, Lambdas, PairedDataset, ParameterSet, PosteriorSummary,
    SubjectData,
};
pub use smnfamily::{FamilyKind, MixingFamily};
pub use splinebasis::{make_basis, OrthonormalBasis};

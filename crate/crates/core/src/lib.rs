//! Spectra of a point scatterer (Šeba billiard) on flat tori.
//!
//! The toolkit enumerates the Laplace spectrum of diagonal 2D/3D tori as
//! dual-lattice norms, solves the secular equation for the perturbed
//! (interlaced) spectrum, verifies the exact trace identities by contour
//! quadrature on `Im ρ = -σ`, and computes the spacing / heat-trace
//! statistics that exhibit the 2D clumping and the 3D mean-gap-ratio 1/2.
//!
//! Modules follow the pipeline order:
//!
//! * [`lattice`] — norms of a positive diagonal quadratic form with
//!   multiplicities (the unperturbed spectrum).
//! * [`secular`] — fast evaluation of the spectral function and root
//!   solving, one root per gap plus the negative ground state.
//! * [`trace`] — both sides of the 2D and 3D trace formulas: Bessel-K₀
//!   lattice sums, admissible-σ selection, contour quadrature.
//! * [`stats`] — spacing histograms, KS distances, gap ratios, heat-trace
//!   sums, and the 3D greedy approximation.
//! * [`io`] — the CSV/JSON file schemas and atomic writes.

pub mod bessel;
pub mod error;
pub mod io;
pub mod lattice;
pub mod quad;
pub mod secular;
pub mod stats;
pub mod sum;
pub mod trace;

pub use error::{Result, SebaError};

/// Toolkit version reported by the CLI.
pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Version tag of the norms CSV schema.
pub const NORMS_SCHEMA: &str = "seba-norms v1";
/// Version tag of the perturbed-spectrum CSV schema.
pub const PERTURBED_SCHEMA: &str = "seba-perturbed v1";

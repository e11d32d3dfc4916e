//! Numerical laboratory for the fractal uncertainty principle in several
//! dimensions.
//!
//! The crate is organised bottom-up:
//!
//! * [`sets`] generates and persists lattice fractal sets ([`sets::GridSet`]).
//! * [`porosity`] certifies ball, line and box porosity on search lattices.
//! * [`spectral`] measures `||1_X F^{-1} 1_Y||` on `Z_N^d` and fits exponents.
//! * [`weights`] builds dyadic damping weights and the shell modification
//!   that makes each shell's weighted spherical projection constant.
//! * [`extension`] evaluates the separately harmonic extension to `C^d`,
//!   Hilbert transforms along lines, complex Hessians and psh certificates.
//! * [`harness`] runs TOML-configured pipelines and writes manifests.

pub mod error;
pub mod extension;
pub mod fit;
pub mod harness;
pub mod jet;
pub mod porosity;
pub mod quad;
pub mod sample;
pub mod sets;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};

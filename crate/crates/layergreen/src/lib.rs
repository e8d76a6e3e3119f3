//! Green's functions for horizontally layered soils: thin-layer full-order solves over
//! a slowness-depth-frequency grid and a greedy Tucker reduced-order model of the same
//! tensor, with the inverse wavenumber transform applied to either form.

pub mod error;
pub mod fom;
pub mod gta;
pub mod io;
pub mod kron;
pub mod linalg;
pub mod soil;
pub mod tensor;
pub mod thin_layer;
pub mod transform;

pub use error::{Error, Result};
pub use fom::{solve_fom, DenseGreensTensor, FomSetup, Load, SamplingGrid};
pub use gta::{gta_build, GtaConfig, GtaResult, TestRule};
pub use soil::{Bottom, Layer, SoilProfile};
pub use tensor::{build_operator, CpOperator, DimLabel, Factor, TuckerTensor};
pub use thin_layer::{LayerMesh, WaveProblem};

//! Rotation- and reflection-equivariant convolutions built from partial
//! differential operators discretized by finite-difference stencils.

pub mod data_io;
pub mod equiv;
pub mod error;
pub mod group2d;
pub mod kernels;
pub mod pdo;
pub mod stencils;
pub mod tensor_ops;

pub use data_io::LabeledDataset;
pub use error::{Error, Result};
pub use group2d::{Group2D, GroupElement, GroupSpec};
pub use kernels::{synthesize_kernel, GroupConvBank, LiftingBank, SynthesisMap, SynthesizedKernel};
pub use pdo::{canonical_poly, transform_poly, BetaVector, PdoPolynomial, SmoothField};
pub use stencils::{all_stencils, correlate, stencil_for, Padding, Stencil};
pub use tensor_ops::{FeatureMap, Model, ModelConfig};

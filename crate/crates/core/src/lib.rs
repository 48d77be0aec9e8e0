//! Hyperspectral unmixing with a latent Dirichlet variational autoencoder.
//!
//! The encoder maps a pixel spectrum to Dirichlet concentrations, a
//! reparameterised Dirichlet draw gives abundances on the simplex, and the
//! decoder maps abundances back to a diagonal Gaussian over the bands.
//! Abundance estimation uses the Dirichlet mean; endmember extraction
//! decodes one-hot abundance vectors.
//!
//! Everything is implemented on a small reverse-mode tape ([`autodiff`]) over
//! row-major `f64` matrices ([`tensor`]).

pub mod autodiff;
pub mod data;
pub mod distributions;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod special;
pub mod tensor;
pub mod training;

pub use data::{EndmemberSet, HsiCube, Spectrum};
pub use distributions::{AbundanceVector, DiagGaussian, DirichletParams, KlVariant};
pub use error::{Error, Result};
pub use exec::ExecMode;
pub use model::{Architecture, LdvaeModel, LossBreakdown};
pub use tensor::Tensor2;
pub use training::{evaluate, train, EvaluationReport, TrainConfig, TrainReport};

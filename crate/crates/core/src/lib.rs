//! Probabilistic circuits with exact inference, flow computation, and
//! EM/gradient parameter learning.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`.

pub mod circuit;
pub mod data;
pub mod error;
pub mod flows;
pub mod format;
pub mod inference;
pub mod normalize;
pub mod optim;
pub mod oracle;
pub mod params;
pub mod scalar;
pub mod structure;

pub use circuit::{Circuit, EdgeId, InputDist, Node, NodeId, Rule, Scope, ValidationReport, VarKind, Violation};
pub use data::{Dataset, Value};
pub use error::{Error, Result};
pub use flows::{Flows, Reduction, TopDownProbs};
pub use inference::Evidence;
pub use params::Params;
pub use scalar::Scalar;

pub type ParamVector = Params<f64>;
pub type FlowTable = Flows<f64>;
pub type TdVector = TopDownProbs<f64>;
pub type MomentumFlows = optim::MomentumFlows<f64>;

pub type ParamVectorF32 = Params<f32>;
pub type FlowTableF32 = Flows<f32>;
pub type TdVectorF32 = TopDownProbs<f32>;

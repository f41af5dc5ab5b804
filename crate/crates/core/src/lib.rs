pub mod autodiff;
pub mod cli;
pub mod batch;
pub mod data;
pub mod error;
pub mod models;
pub mod optim;
pub mod param;
pub mod plot;
pub mod probes;
pub mod rng;
pub mod spectral;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Graph, GraphBuilder, NodeId, Op, QuadMatrix};
pub use batch::Batch;
pub use error::{Error, Result};
pub use models::{Model, ModelSpec};
pub use param::ParamVector;
pub use spectral::{EigenEstimate, LanczosConfig};
pub use tensor::Tensor;

mod bytes;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gcn;
pub mod graph;
pub mod metrics;
pub mod pipeline;
pub mod recurrent;
pub mod tensor;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{GraphSource, RunConfig};
pub use data::{Segment, SplitMode, SplitPlan, Task};
pub use error::{Error, Result};
pub use gcn::{GcnConfig, GcnModel};
pub use metrics::EvalReport;
pub use recurrent::{Stage1Config, Stage1Model};
pub use tensor::{SeedStream, Tensor};

pub mod env;
pub mod exec;
pub mod metrics;
pub mod orchestrator;
pub mod pipeline;
pub mod policy;
pub mod store;
pub mod trajectory;
mod util;

//! Cost model, DSVRG simulator and aggregation-level sweeps for deciding how
//! much raw data to gather at collection points before distributed training.

pub mod cost;
pub mod data;
pub mod dsvrg;
pub mod sweep;

pub mod adversary;
pub mod config;
pub mod fixtures;
pub mod key;
pub mod maintenance;
pub mod metrics;
pub mod phase_buffer;
pub mod phase_delete;
pub mod phase_merge;
pub mod phase_update;
pub mod simcore;
pub mod skiplist;
pub mod spartan;

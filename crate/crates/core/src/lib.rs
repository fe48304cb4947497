pub mod patchkit;
pub mod probe;
pub mod regress;
pub mod report;
pub mod stats;
pub mod synthworld;
pub mod tinylm;

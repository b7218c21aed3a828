pub mod dataset;
pub mod detector;
pub mod evalbench;
pub mod features;
pub mod he;
pub mod protocol;

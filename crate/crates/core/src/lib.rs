//! Synthesis and simulation of distributed controllers that drive a group of
//! heterogeneous positive linear agents to a prescribed consensus pattern
//! over a switching communication topology, with audits for positivity,
//! convergence and finite L2-gain disturbance attenuation.

pub mod metrics;
pub mod model;
pub mod numerics;
pub mod topology;
pub mod regulator;
pub mod scenario;
pub mod serde_mat;
pub mod sim;
pub mod synthesis;

pub mod adaptation;
pub mod harness;
pub mod imaging;
pub mod metrics;
pub mod priors;
pub mod rng;
pub mod schedule;
pub mod solvers;
pub mod toy;
pub mod verify;

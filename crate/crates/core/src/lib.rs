pub mod bandit;
pub mod bpi;
pub mod error;
pub mod harness;
pub mod identification;
pub mod instances;
pub mod mdp;
pub mod rng;
pub mod task_set;
pub mod trace;

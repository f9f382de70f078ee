//! Scheduling policies for a simulated green datacenter, learned from heuristic
//! demonstrations (behavior cloning, advantage-filtered offline actor-critic) and from live
//! interaction (online actor-critic, optionally warm-started offline).

pub mod sim;
pub mod heuristics;
pub mod nn;
pub mod container;
pub mod dataset;
pub mod par;
pub mod policy;
pub mod agents;
pub mod eval;

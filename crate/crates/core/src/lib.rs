//! Concealed, verifiable SUM aggregation over sensor network routing trees.
//!
//! Sensors hide readings by adding a keyed seed that changes every round;
//! intermediate nodes add the hidden values without learning them, and the
//! base station removes the seed total in constant time. Each reading is
//! hidden twice under independent seed chains so the base station can test
//! the two recovered sums for equality, and on a mismatch it probes the tree
//! to find the nodes responsible.

pub mod adversary;
pub mod basestation;
pub mod crypto;
pub mod node;
pub mod scenario;
pub mod selftest;
pub mod simulator;
pub mod topology;

pub use adversary::{AttackPlan, Behavior};
pub use basestation::{BaseStation, Integrity, NodeStatus, QueryResult};
pub use crypto::{DiffusedPair, Domain, DomainValue, Key};
pub use node::{AggFunction, SensorNode};
pub use scenario::{Scenario, ScenarioError};
pub use simulator::{Metrics, RunOutput, Simulation};
pub use topology::{NodeId, Tree};

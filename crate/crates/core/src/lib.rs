//! Exact, tabular laboratory for shifts-aware model-based offline RL.
//!
//! The crate provides finite-MDP dynamic programming with trajectory
//! enumeration oracles ([`mdp`]), the 1D grid world and its biased dynamics
//! models ([`env`]), count-based model ensembles and branched rollouts
//! ([`model`]), logit-table density-ratio classifiers ([`classifier`]), the
//! shifts-aware reward in its theoretical and practical forms ([`sar`]),
//! policy-gradient and actor-critic trainers ([`train`]), numerical checks of
//! the underlying identities and bounds ([`verify`]), and the experiment
//! harness behind the `sambo` binary ([`harness`]).

pub mod classifier;
pub mod env;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod model;
pub mod rng;
pub mod sar;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use mdp::{Kernel, SoftmaxPolicy, TabularMdp, Trajectory};

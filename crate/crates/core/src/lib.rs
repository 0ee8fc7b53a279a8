//! Model-based motion imitation for quadrupeds.
//!
//! The crate tracks reference motions with a centroidal stance controller
//! (force QP + online joint adaptation), an IK swing controller with velocity
//! feedback and a contact-driven gait state machine, all running inside a
//! self-contained centroidal simulator. Kinematically infeasible references are
//! improved offline by fitting rhythmic DMPs and optimizing their swing-height
//! parameters with CMA-ES against an imitation reward.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controller;
pub mod dmp;
pub mod error;
pub mod exec;
pub mod geom;
pub mod motion;
pub mod optimize;
pub mod qp;
pub mod robot;
pub mod sim;

pub use error::{Error, Result};

//! Numerical analysis of local stabilizability for control systems
//! `x' = f(x, u)` with `f(0, 0) = 0`.
//!
//! The crate covers the full pipeline: parsing vector fields ([`expr`],
//! [`model`]), linear tests at the origin ([`lintest`]), openness and
//! injectivity probes ([`brockett`]), tabulated local sections ([`section`]),
//! feedback and composition-symbol synthesis ([`synth`]) and closed-loop
//! verification ([`ode`], [`verify`]).
//!
//! Everything here is `no_std` with `alloc`; file formats and the command
//! line live in the companion `nlstab` crate.

#![no_std]

extern crate alloc;

pub mod brockett;
pub mod error;
pub mod expr;
pub mod grid;
pub mod linalg;
pub mod lintest;
pub mod model;
pub mod ode;
pub mod section;
pub mod solve;
pub mod synth;
pub mod verify;

pub use error::EvalError;
pub use expr::{Expr, ParseError, Var};
pub use model::{corpus, corpus_system, linearize, AutonomousField, Field, Linearization, VectorFieldSpec};

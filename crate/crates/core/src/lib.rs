//! Lyapunov stability and region-of-attraction certificates for
//! continuous-time systems in feedback with neural-network controllers.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // negated comparisons reject NaN

pub mod abstraction;
pub mod certifier;
pub mod definition;
pub mod nn;
pub mod poly;
pub mod sdp;
pub mod simulator;
pub mod sos;

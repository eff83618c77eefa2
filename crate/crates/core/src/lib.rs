//! RD2: recurrent distributed deterministic policy gradients with
//! prioritized sequence replay, trained on a robotless force/torque-only
//! assembly simulator.

pub mod agent;
pub mod env;
pub mod geom;
pub mod nn;
pub mod pbt;
pub mod replay;

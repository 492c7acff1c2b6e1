pub mod belief;
pub mod error;
pub mod eval;
pub mod explain;
pub mod kb;
pub mod nn;
pub mod ranking;
pub mod rl;
pub mod session;

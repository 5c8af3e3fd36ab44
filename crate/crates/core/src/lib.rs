//! Synthesis and checking of Streett supermartingale certificates for
//! piecewise-affine stochastic systems.

pub mod automata;
pub mod backends;
pub mod checker;
pub mod expr;
pub mod farkas;
pub mod model;
pub mod pipeline;
pub mod region;
pub mod simplex;
pub mod templates;
pub mod vcgen;

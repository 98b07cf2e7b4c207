//! Physics-informed neural network solver for the strongly degenerate
//! parabolic equation
//!
//! ```text
//! u_t - div( (|grad u| - 1)_+ grad u / |grad u| ) = f
//! ```
//!
//! A small tanh network `u_hat(x, t)` is trained so that the residual of the
//! equation vanishes on interior collocation points while the network matches
//! the prescribed data on the lateral boundary and the initial slice. The
//! crate bundles the derivative machinery, a suite of problems with known
//! exact solutions, the trainer and the error metrics used to judge a run.
//!
//! ```
//! use leibenson_pinn::problem::{make_problem, ProblemId, ProblemParams};
//!
//! let p1 = make_problem(ProblemId::P1, &ProblemParams::default()).unwrap();
//! assert_eq!(p1.exact(&[0.0, 0.0], 0.0), Some(0.0));
//! assert_eq!(p1.forcing(&[0.3, 0.4], 0.5), 1.0);
//! ```

pub mod autodiff;
pub mod collocation;
pub mod error;
pub mod error_metrics;
pub mod field;
pub mod mlp;
pub mod operator;
pub mod problem;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/flux.md")]
    pub struct Flux;
    #[doc = include_str!("../../../book/src/problems.md")]
    pub struct Problems;
    #[doc = include_str!("../../../book/src/derivatives.md")]
    pub struct Derivatives;
    #[doc = include_str!("../../../book/src/collocation.md")]
    pub struct Collocation;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/errors.md")]
    pub struct Errors;
}

//! Chance-constrained DC optimal power flow with Gaussian-mixture wind
//! forecast errors.
//!
//! Two ways of getting from forecast-error data to a tractable dispatch
//! problem are implemented side by side:
//!
//! * **fit-then-transform**: fit one mixture to the per-bus errors `ξ`, then
//!   push it through the linear maps that define the aggregate error `Ω` and
//!   the per-line pairs `η_l`;
//! * **transform-then-fit**: map the data first and fit separate
//!   zero-mean mixtures to `Ω` and to every `η_l`.
//!
//! Either route ends in a second-order cone program ([`reformulate`]) that is
//! solved by an interior-point backend ([`solve`]) and audited out of sample
//! ([`risk`]).

pub mod error;
pub mod estimation;
pub mod grid;
pub mod normal;
pub mod phi_approx;
pub mod pipeline;
pub mod reformulate;
pub mod risk;
pub mod scenarios;
pub mod solve;

pub use error::{Error, Result};

/// Compiles and runs every Rust snippet of the guide in `book/`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/estimation.md")]
    mod estimation {}
    #[doc = include_str!("../../../book/src/pwl.md")]
    mod pwl {}
    #[doc = include_str!("../../../book/src/reformulation.md")]
    mod reformulation {}
    #[doc = include_str!("../../../book/src/solving.md")]
    mod solving {}
    #[doc = include_str!("../../../book/src/risk.md")]
    mod risk {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

//! Harmonic functions and Dirichlet-to-Neumann maps on regular m-branching trees.
//!
//! A vertex of the tree is a finite base-m digit sequence; the boundary of the
//! tree is identified with `[0,1]` by reading a branch's digits as an m-ary
//! expansion. Every vertex owns the m-adic interval of boundary points passing
//! through it. Given a boundary datum `g : [0,1] -> R` and a weight
//! `beta ∈ [0, 1/2)` for the ancestor term of the mean-value identity, the
//! bounded solution of the Dirichlet problem has a closed form built from
//! interval averages of `g`; this crate evaluates it exactly in rational
//! arithmetic (or in `f64` for black-box data), together with:
//!
//! * the successor-difference gradient and the scaled-gradient boundary
//!   operator with its closed-form limits,
//! * the scaled branch-increment boundary operator, its finite-depth kernels,
//!   and the singular limit kernel with annulus-exact quadrature,
//! * indicator-datum solutions built from the two-term linear recursion,
//!   comparison-principle checkers and the classical counterexample at
//!   `beta = 0`,
//! * an unbounded-growth witness for `beta >= 1/2`,
//! * an independent Monte Carlo oracle: the biased walk whose exit value
//!   estimates the solution.
//!
//! Exact results use [`Q`] (arbitrary-precision rationals). Operations that
//! accept a scalar type parameter work with any [`Value`] backend; `f64` is
//! provided for black-box data and fast sweeps.

pub mod datum;
pub mod dirichlet;
pub mod dtn;
pub mod quad;
pub mod tree;
pub mod value;
pub mod walk;

pub use datum::{BoundaryDatum, DatumError, Polynomial, Smoothness};
pub use dirichlet::{
    counterexample_beta0, growth_witness, solve_characteristic, BetaParam, GrowthWitness,
    IndicatorConstruction, Solution, SolveError,
};
pub use quad::{QuadConfig, QuadError, QuadResult};
pub use tree::{containment_level, Branch, MadicInterval, TreeConfig, TreeError, Vertex};
pub use value::{Q, Value};
pub use walk::{WalkConfig, WalkError, WalkEstimate};

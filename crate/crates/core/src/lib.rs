//! Finite-scale spectral-gap induction for matrix groups over `Z/qZ`.
//!
//! The crate is organised bottom-up:
//!
//! * [`arith`]: exact rational and residue-ring matrices.
//! * [`groups`]: breadth-first enumeration of finite matrix groups, subsets,
//!   congruence layers and fold products.
//! * [`spectral`]: the averaging operator of a symmetric multiset and its
//!   second-largest absolute eigenvalue.
//! * [`padic`]: truncated p-adic exponential/logarithm charts, grade maps and
//!   the conjugated word map.
//! * [`lie`]: span lattices over `Z/p^N`, Lie lattices of groups and adjoint
//!   saturation.
//! * [`coverage`]: bounded-generation certificates.
//! * [`pipeline`]: study configuration, orchestration and persistence.
//!
//! Hot loops go through [`Exec`], which dispatches to rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod arith;
pub mod bitset;
pub mod coverage;
pub mod exec;
pub mod groups;
pub mod lie;
pub mod modlin;
pub mod padic;
pub mod pipeline;
pub mod spectral;
pub mod words;

pub use exec::Exec;

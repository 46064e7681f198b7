//! Knowledge-grounded reinforcement learning core.
//!
//! Everything in this crate is deterministic, allocation-only algorithmic code:
//! a small reverse-mode autodiff substrate ([`approx`]), two environments
//! ([`grid`], [`point`]), external knowledge mappings ([`knowledge`]), the
//! attention mixture actor ([`actor`]) and the PPO / SAC trainers ([`algo`]).
//! File formats, the CLI and experiment orchestration live in the `kgrl` crate.
//!
//! The crate is `no_std` (with `alloc`) when built without the default `std`
//! feature. The `std` feature only enables runtime CPU feature detection in the
//! matrix kernels and `std::error::Error` impls.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![warn(missing_debug_implementations)]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod actor;
pub mod algo;
pub mod approx;
mod error;
pub mod grid;
pub mod knowledge;
pub mod math;
pub mod point;
pub mod rng;

pub use error::{Error, Result};

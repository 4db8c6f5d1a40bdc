//! N-soliton solutions of the Tzitzeica equation `u_xt = e^u - e^{-2u}` on a
//! finite-gap or vacuum background, built from a Hirota-type determinant,
//! together with the numerical checks that validate them.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod background;
pub mod dressing;
pub mod error;
pub mod grid;
pub mod spectral_curve;
pub mod theta;
pub mod verify;

pub use error::{Error, Result};

//! Markov-modulated interest rates and matrix methods for multi-state life
//! insurance.
//!
//! Bond prices of a rate model driven by a finite-state jump process are
//! (scaled) phase-type survival functions; [`bond::calibrate`] fits such a
//! model to a curve with the EM algorithm in [`emfit`]. Combined with a
//! biometric model in [`life::ProductModel`], reserves, moments of present
//! values and premiums are blocks of product integrals ([`matrix`]). The
//! present-value distribution is approximated in [`gramcharlier`] and
//! simulated in [`mcsim`].
//!
//! ```
//! use phrates::bond::{bond_price, ShortRateModel};
//! use phrates::matrix::{Matrix, Vector};
//!
//! let flat = ShortRateModel::homogeneous(
//!     Matrix::zeros(1, 1),
//!     Vector::from_element(1, 0.02),
//!     Vector::from_element(1, 1.0),
//!     0.0,
//! )
//! .unwrap();
//! let p = bond_price(&flat, 0.0, 5.0, None).unwrap();
//! assert!((p - (-0.1f64).exp()).abs() < 1e-14);
//! ```

pub mod bond;
pub mod emfit;
pub mod error;
pub mod gramcharlier;
pub mod io;
pub mod life;
pub mod mcsim;
pub mod matrix;
pub mod phasetype;

pub use error::{Error, Result};

// The guide's listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/product-integrals.md")]
    mod product_integrals {}
    #[doc = include_str!("../../../book/src/phase-type.md")]
    mod phase_type {}
    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}
    #[doc = include_str!("../../../book/src/reserves.md")]
    mod reserves {}
    #[doc = include_str!("../../../book/src/moments.md")]
    mod moments {}
    #[doc = include_str!("../../../book/src/gram-charlier.md")]
    mod gram_charlier {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/command-line.md")]
    mod command_line {}
}

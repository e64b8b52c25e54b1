pub mod entrance;
pub mod error;
pub mod grid;
pub mod harness;
pub mod kernels;
pub mod oupath;
pub mod quadrature;
pub mod sclaw;
pub mod semigroup;

pub use entrance::{EntranceNormParams, EntrancePath, SignedMeasureAtoms};
pub use error::{Error, Result};
pub use grid::{Axis, Grid, GridFunction, Weight};
pub use sclaw::{IDLaw, LawElement, SCSemigroupSpec};
pub use semigroup::{Growth, SemigroupKind, SemigroupSpec};

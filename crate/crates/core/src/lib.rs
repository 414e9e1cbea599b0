//! Level-set topology optimization with CNC milling constraints.

pub mod error;
pub mod fem;
pub mod grid;
pub mod heat;
pub mod io;
pub mod levelset;
pub mod mesh;
pub mod milling;
pub mod optimizer;
pub mod problem;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use error::{Error, Result};
pub use grid::{GridSpec, Vec3};
pub use levelset::{LevelSet, SurfaceSample, SymmetryPlane};

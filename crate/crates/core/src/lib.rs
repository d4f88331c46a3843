//! Interior-penalty Galerkin methods on structured quadrilateral meshes:
//! continuous, discontinuous and continuous-discontinuous variants with
//! local super-penalization, a mixed RT0-P0 Darcy solver, and the coupled
//! transport loop for incompressible miscible displacement.

pub mod adapt;
pub mod darcy;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod nncf;
pub mod spaces;
pub mod transport;

pub use error::{Error, Result};

//! Numerical laboratory for magnetic systems `(g, σ)` on model Riemannian
//! manifolds.
//!
//! The crate integrates magnetic geodesics together with frames transported
//! by the twisted connection, solves the magnetic Jacobi and matrix Riccati
//! equations, evaluates the magnetic curvature operators, builds Green
//! bundles, estimates Liouville averages on compact models and computes the
//! Mañé critical value of Kähler magnetic systems on the complex hyperbolic
//! ball.
//!
//! ```
//! use magflow::geometry::GeometryModel;
//! use magflow::magcurv;
//!
//! // Hyperbolic disk with unit field at the critical speed is magnetically flat.
//! let model = GeometryModel::disk(-1.0).with_constant_b(1.0);
//! let pg = model.at(&[0.2, -0.1]).unwrap();
//! let (v, w) = pg.orthonormal_pair(&[1.0, 0.0]);
//! let sec = magcurv::sec_omega_s(&pg, &v, &w, 1.0).unwrap();
//! assert!(sec.abs() < 1e-10);
//! ```

pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod integrals;
pub mod jacobi;
pub mod linalg;
pub mod magcurv;
pub mod mane;
pub mod ode;
pub mod report;
pub mod riccati;

pub use error::{MagflowError, Result};

use num_dual::DualNum;

/// Scalar type accepted by the generic metric and field evaluators.
///
/// Implemented by `f64` and by the dual numbers used for exact derivatives.
pub trait Real: DualNum<Primitive = f64> + Copy {}

impl<T: DualNum<Primitive = f64> + Copy> Real for T {}

/// Version string embedded in experiment records.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

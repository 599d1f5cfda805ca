//! Strong global approximation of scalar jump-diffusion SDEs
//! `dX = a(t,X)dt + b(t,X)dW + c(t,X−)dN` driven by a Wiener process and a
//! nonhomogeneous Poisson process, under the jump commutativity condition
//! `L₋₁b = L₁c`.
//!
//! * [`model`]: coefficients, the operators `L₁`/`L₋₁`, intensities, Merton's model.
//! * [`pathkit`]: exact noise simulation, iterated integrals, bridge moments.
//! * [`scheme`]: the Milstein scheme and its conditional / piecewise-linear globalizations.
//! * [`meshdesign`]: density-generated meshes and the optimal density `∝ √E𝒴(t)`.
//! * [`errorlab`]: Monte-Carlo L² errors, asymptotic constants and convergence studies.

pub mod error;
pub mod errorlab;
pub mod exec;
pub mod meshdesign;
pub mod model;
pub mod pathkit;
pub mod quad;
pub mod scheme;
pub mod stats;

pub use error::{Error, Result};
pub use exec::{Exec, Mode};
pub use model::{AffineCoef, Coefficient, IntensityModel, MertonParams, SdeModel};
pub use pathkit::{GridPath, JumpTimes, RngStream};
pub use scheme::{ApproxTrajectory, Mesh, MethodKind, MilsteinScheme};

//! Central tolerance constants.  Scenario assertions and tests refer to
//! these instead of scattering magic numbers.

/// Identities that are exact on trigonometric-polynomial data up to float
/// roundoff (frame orthonormality, metric compatibility of the transverse
/// connection).
pub const EXACT_TIGHT: f64 = 1e-12;

/// Identities exact up to accumulated roundoff in grid/Koszul pipelines
/// (torsion identity, adjoint lemma, signature identities, isotypic blocks).
pub const EXACT: f64 = 1e-10;

/// ODE-limited properties at the default integrator step (conservation of
/// the Hamiltonian, first integrals, unitarity of parallel transport).
pub const ODE: f64 = 1e-8;

/// Pointwise agreement of independently computed subprincipal data.
pub const SUBPRINCIPAL: f64 = 1e-6;

/// Relative error allowed for leading-symbol extraction at lambda = 32.
pub const EXTRACT_REL: f64 = 0.1;

/// Slack added to fitted log-log slopes in decay-rate assertions.
pub const SLOPE_SLACK: f64 = 0.3;

/// Minimal fitted Egorov decay exponent, scalar scenarios.
pub const EGOROV_RHO_SCALAR: f64 = 0.7;

/// Minimal fitted Egorov decay exponent, Dirac scenario.
pub const EGOROV_RHO_DIRAC: f64 = 0.6;

/// Default step size for fixed-step RK4 integration.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Default lower bound on |eta| along flows.
pub const DEFAULT_ETA_MIN: f64 = 1e-6;

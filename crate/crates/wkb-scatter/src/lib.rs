//! Hybrid WKB solver for the 1D stationary Schrödinger scattering problem
//!
//!   eps^2 psi''(x) + a(x) psi(x) = 0,   a(x) = E - V(x),   x in (0, 1),
//!
//! with open (transparent) boundary conditions and a plane wave injected at
//! x = 1. The device interval splits at potential jumps into oscillatory
//! (a > 0) and evanescent (a < 0) zones. Each zone is solved with a method
//! that stays accurate on coarse grids as eps -> 0:
//!
//! * evanescent zones: a finite element method whose hat functions are built
//!   from first-order exponential WKB solutions ([`evanescent`]);
//! * oscillatory zones: a second-order marching scheme for the analytically
//!   phase-transformed first-order system ([`marching`]);
//! * the zones are glued by a non-overlapping domain decomposition with a
//!   final scaling step that enforces the injection condition
//!   ([`decomposition`]).
//!
//! [`oracle`] supplies independent references (transfer matrices for
//! piecewise-constant potentials, fine-grid self-references) and error
//! metrics; [`harness`] drives experiment sweeps from a text config and
//! writes CSV tables.

pub mod coefficient;
pub mod decomposition;
pub mod evanescent;
pub mod harness;
mod jet;
pub mod marching;
pub mod oracle;
mod tridiag;

pub use coefficient::{
    BetaJet, CoefficientField, FieldError, HypothesisReport, LayoutKind, PotentialSegment,
    Regime, SegmentKind, Side, Zone, ZoneLayout,
};

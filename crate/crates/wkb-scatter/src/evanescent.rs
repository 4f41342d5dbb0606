//! Multiscale finite elements for the evanescent-zone boundary value problem
//!
//!   eps^2 chi'' + a(x) chi = 0 on (x_l, x_r),   a < 0,
//!   chi'(x_l) = rho chi(x_l),   eps chi'(x_r) = neumann_scale,
//!
//! discretized with hat functions assembled from first-order exponential WKB
//! solutions: on each cell the two local shape functions are sinh ratios of
//! the decay action times a quartic-root amplitude. They satisfy the cell
//! equation -eps^2 xi'' - a xi + eps^2 r xi = 0 exactly, which reduces the
//! stiffness integrals to boundary derivative terms plus a small smooth
//! correction eps^2 int r xi_m xi_n handled by fixed Gauss-Legendre
//! quadrature.
//!
//! All sinh/cosh ratios are evaluated in shifted exponential form so that
//! cell actions gamma of order thousands stay finite.

use crate::coefficient::{CoefficientField, FieldError, Side};
use crate::tridiag::{condition_2norm, Tridiag};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("mesh invalid: {0}")]
    MeshInvalid(String),
    #[error("zone is not evanescent at x = {0} (a = {1})")]
    NotEvanescent(f64, f64),
    #[error("cell [{0}, {1}] crosses a potential segment boundary")]
    CellCrossesSegment(f64, f64),
    #[error("non-finite matrix entry at row {0}")]
    NonFiniteEntry(usize),
    #[error("system numerically singular (condition estimate {condition:e})")]
    Singular { condition: f64 },
    #[error("x = {0} outside the meshed zone [{1}, {2}]")]
    OutOfZone(f64, f64, f64),
}

/// Strictly increasing nodes spanning one evanescent zone.
#[derive(Clone, Debug)]
pub struct EvanescentMesh {
    nodes: Vec<f64>,
}

impl EvanescentMesh {
    pub fn uniform(x_left: f64, x_right: f64, cells: usize) -> Result<Self, FemError> {
        if cells == 0 || !(x_left < x_right) {
            return Err(FemError::MeshInvalid(format!(
                "need at least one cell on a proper interval, got {cells} on [{x_left}, {x_right}]"
            )));
        }
        let w = (x_right - x_left) / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|j| x_left + j as f64 * w).collect();
        *nodes.last_mut().unwrap() = x_right;
        Ok(EvanescentMesh { nodes })
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self, FemError> {
        if nodes.len() < 2 {
            return Err(FemError::MeshInvalid("need at least 2 nodes".into()));
        }
        if !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(FemError::MeshInvalid(
                "nodes not strictly increasing".into(),
            ));
        }
        Ok(EvanescentMesh { nodes })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn h_max(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// sinh(s)/sinh(g) for 0 <= s <= g, overflow-safe for arbitrarily large g.
fn sinh_ratio(s: f64, g: f64) -> f64 {
    (s - g).exp() * (-2.0 * s).exp_m1() / (-2.0 * g).exp_m1()
}

/// cosh(s)/sinh(g) for 0 <= s <= g, overflow-safe.
fn cosh_over_sinh(s: f64, g: f64) -> f64 {
    -(s - g).exp() * (2.0 + (-2.0 * s).exp_m1()) / (-2.0 * g).exp_m1()
}

/// Precomputed per-cell data of the sinh-hat basis plus evaluators.
#[derive(Clone, Debug)]
pub struct WkbHatBasis {
    field: CoefficientField,
    eps: f64,
    nodes: Vec<f64>,
    /// Decay action (1/eps) int sqrt(|a|) over each cell.
    gamma: Vec<f64>,
    /// |a| and d|a|/dx one-sided at the cell endpoints (into the cell).
    u_left: Vec<f64>,
    u_right: Vec<f64>,
    du_left: Vec<f64>,
    du_right: Vec<f64>,
}

pub fn build_basis(
    field: &CoefficientField,
    mesh: &EvanescentMesh,
    eps: f64,
) -> Result<WkbHatBasis, FemError> {
    let nodes = mesh.nodes().to_vec();
    let cells = nodes.len() - 1;
    let mut gamma = Vec::with_capacity(cells);
    let mut u_left = Vec::with_capacity(cells);
    let mut u_right = Vec::with_capacity(cells);
    let mut du_left = Vec::with_capacity(cells);
    let mut du_right = Vec::with_capacity(cells);
    for n in 0..cells {
        let (xl, xr) = (nodes[n], nodes[n + 1]);
        if !field
            .segments()
            .iter()
            .any(|s| s.x_left <= xl && xr <= s.x_right)
        {
            return Err(FemError::CellCrossesSegment(xl, xr));
        }
        let al = field.eval_a_side(xl, Side::Right)?;
        let ar = field.eval_a_side(xr, Side::Left)?;
        if al >= 0.0 {
            return Err(FemError::NotEvanescent(xl, al));
        }
        if ar >= 0.0 {
            return Err(FemError::NotEvanescent(xr, ar));
        }
        gamma.push(field.sqrt_abs_a_integral(xl, xr)? / eps);
        u_left.push(-al);
        u_right.push(-ar);
        // u = |a| = -(E - V), so u' = -a'.
        du_left.push(-field.eval_da_side(xl, Side::Right)?);
        du_right.push(-field.eval_da_side(xr, Side::Left)?);
    }
    Ok(WkbHatBasis {
        field: field.clone(),
        eps,
        nodes,
        gamma,
        u_left,
        u_right,
        du_left,
        du_right,
    })
}

impl WkbHatBasis {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    fn abs_a(&self, cell: usize, x: f64) -> f64 {
        if x == self.nodes[cell + 1] {
            self.u_right[cell]
        } else if x == self.nodes[cell] {
            self.u_left[cell]
        } else {
            -self.field.eval_a(x).unwrap()
        }
    }

    fn action_from(&self, cell: usize, x: f64) -> f64 {
        self.field
            .sqrt_abs_a_integral(self.nodes[cell], x)
            .unwrap()
            / self.eps
    }

    /// Local shapes on cell `cell`: (w, v) with w(x_n) = 1, w(x_{n+1}) = 0,
    /// v(x_n) = 0, v(x_{n+1}) = 1.
    pub fn shapes(&self, cell: usize, x: f64) -> (f64, f64) {
        let g = self.gamma[cell];
        let s = self.action_from(cell, x).clamp(0.0, g);
        let u = self.abs_a(cell, x);
        let w = sinh_ratio(g - s, g) * (self.u_left[cell] / u).powf(0.25);
        let v = sinh_ratio(s, g) * (self.u_right[cell] / u).powf(0.25);
        (w, v)
    }

    pub fn shape_derivs(&self, cell: usize, x: f64) -> (f64, f64) {
        let g = self.gamma[cell];
        let s = self.action_from(cell, x).clamp(0.0, g);
        let u = self.abs_a(cell, x);
        let du = if x == self.nodes[cell + 1] {
            self.du_right[cell]
        } else if x == self.nodes[cell] {
            self.du_left[cell]
        } else {
            -self.field.eval_da_side(x, Side::Right).unwrap()
        };
        let su = u.sqrt();
        let ql = (self.u_left[cell] / u).powf(0.25);
        let qr = (self.u_right[cell] / u).powf(0.25);
        let dw = -ql
            * (cosh_over_sinh(g - s, g) * su / self.eps + sinh_ratio(g - s, g) * du / (4.0 * u));
        let dv = qr * (cosh_over_sinh(s, g) * su / self.eps - sinh_ratio(s, g) * du / (4.0 * u));
        (dw, dv)
    }

    /// Global hat zeta_n (cardinal at node n).
    pub fn hat(&self, n: usize, x: f64) -> f64 {
        if n > 0 && x >= self.nodes[n - 1] && x <= self.nodes[n] {
            self.shapes(n - 1, x).1
        } else if n < self.cells() && x >= self.nodes[n] && x <= self.nodes[n + 1] {
            self.shapes(n, x).0
        } else {
            0.0
        }
    }
}

/// Robin datum rho with chi'(left end) = rho chi(left end). Real and equal to
/// sqrt(|a(0)|)/eps for the two-zone decomposition; complex in the three-zone
/// middle zone where it carries the marched logarithmic derivative.
#[derive(Clone, Copy, Debug)]
pub struct RobinCoefficient {
    pub rho: Complex64,
}

impl RobinCoefficient {
    pub fn two_zone(field: &CoefficientField, eps: f64) -> Result<Self, FemError> {
        let a0 = field.eval_a_side(0.0, Side::Right)?;
        if a0 >= 0.0 {
            return Err(FemError::NotEvanescent(0.0, a0));
        }
        Ok(RobinCoefficient {
            rho: Complex64::new((-a0).sqrt() / eps, 0.0),
        })
    }

    pub fn new(rho: Complex64) -> Self {
        RobinCoefficient { rho }
    }
}

/// Assembled tridiagonal Galerkin system. Complex symmetric (equal to its
/// transpose); real whenever rho is real.
#[derive(Clone, Debug)]
pub struct FemSystem {
    pub(crate) matrix: Tridiag,
    pub(crate) rhs: Vec<Complex64>,
    pub eps: f64,
    pub rho: Complex64,
}

impl FemSystem {
    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn diagonal(&self) -> &[Complex64] {
        &self.matrix.d
    }

    pub fn off_diagonal(&self) -> &[Complex64] {
        &self.matrix.du
    }

    pub fn sub_diagonal(&self) -> &[Complex64] {
        &self.matrix.dl
    }

    pub fn rhs(&self) -> &[Complex64] {
        &self.rhs
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre nodes and weights on (-1, 1) by Newton iteration.
pub(crate) fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        xs[i] = x;
        ws[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (xs, ws)
}

/// Builds the Galerkin system for
///   b(chi, theta) = eps^2 int chi' theta' - int a chi theta
///                 + eps^2 rho chi(left) theta(left),
///   L(theta) = eps * neumann_scale * theta(right end),
/// using the per-cell identity
///   int (eps^2 w' v' - a w v) = eps^2 [w' v] - eps^2 int r w v.
pub fn assemble(
    field: &CoefficientField,
    basis: &WkbHatBasis,
    eps: f64,
    rho: RobinCoefficient,
    neumann_scale: f64,
    quad_points: usize,
) -> Result<FemSystem, FemError> {
    let n_nodes = basis.nodes.len();
    let cells = basis.cells();
    let mut diag = vec![Complex64::default(); n_nodes];
    let mut off = vec![Complex64::default(); n_nodes - 1];
    let (gl_x, gl_w) = gauss_legendre(quad_points);
    let eps2 = eps * eps;
    for cell in 0..cells {
        let (xl, xr) = (basis.nodes[cell], basis.nodes[cell + 1]);
        let g = basis.gamma[cell];
        let coth = cosh_over_sinh(g, g);
        let inv_sinh = cosh_over_sinh(0.0, g);
        let (ul, ur) = (basis.u_left[cell], basis.u_right[cell]);
        let (dul, dur) = (basis.du_left[cell], basis.du_right[cell]);
        // Boundary derivative terms of the cell identity.
        let mut loc00 = eps * ul.sqrt() * coth + eps2 * dul / (4.0 * ul);
        let mut loc11 = eps * ur.sqrt() * coth - eps2 * dur / (4.0 * ur);
        let mut loc01 = -eps * (ul * ur).powf(0.25) * inv_sinh;
        // Smooth correction -eps^2 int r basis_m basis_n.
        let half = 0.5 * (xr - xl);
        let mid = 0.5 * (xl + xr);
        for (t, w) in gl_x.iter().zip(&gl_w) {
            let y = mid + half * t;
            let r = field.eval_r(y, Side::Right)?;
            let (bw, bv) = basis.shapes(cell, y);
            let scale = eps2 * w * half * r;
            loc00 -= scale * bw * bw;
            loc11 -= scale * bv * bv;
            loc01 -= scale * bw * bv;
        }
        diag[cell] += Complex64::new(loc00, 0.0);
        diag[cell + 1] += Complex64::new(loc11, 0.0);
        off[cell] += Complex64::new(loc01, 0.0);
    }
    diag[0] += Complex64::new(eps2, 0.0) * rho.rho;
    let mut rhs = vec![Complex64::default(); n_nodes];
    rhs[n_nodes - 1] = Complex64::new(eps * neumann_scale, 0.0);
    for (i, v) in diag.iter().enumerate() {
        if !v.re.is_finite() || !v.im.is_finite() {
            return Err(FemError::NonFiniteEntry(i));
        }
    }
    if let Some(i) = off
        .iter()
        .position(|v| !v.re.is_finite() || !v.im.is_finite())
    {
        return Err(FemError::NonFiniteEntry(i));
    }
    Ok(FemSystem {
        matrix: Tridiag {
            dl: off.clone(),
            d: diag,
            du: off,
        },
        rhs,
        eps,
        rho: rho.rho,
    })
}

/// Nodal coefficients of the discrete solution plus continuum evaluators.
#[derive(Clone, Debug)]
pub struct FemSolution {
    basis: WkbHatBasis,
    pub nodal: Vec<Complex64>,
    /// Final infinity-norm residual of the linear solve.
    pub residual: f64,
}

pub fn solve_bvp(basis: &WkbHatBasis, system: &FemSystem) -> Result<FemSolution, FemError> {
    let (nodal, residual) =
        system
            .matrix
            .solve_refined(&system.rhs)
            .map_err(|_| FemError::Singular {
                condition: condition_2norm(&system.matrix),
            })?;
    if nodal.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(FemError::Singular {
            condition: condition_2norm(&system.matrix),
        });
    }
    Ok(FemSolution {
        basis: basis.clone(),
        nodal,
        residual,
    })
}

/// 2-norm condition number of the assembled tridiagonal matrix.
pub fn condition_number(system: &FemSystem) -> f64 {
    condition_2norm(&system.matrix)
}

impl FemSolution {
    pub fn nodes(&self) -> &[f64] {
        &self.basis.nodes
    }

    pub fn basis(&self) -> &WkbHatBasis {
        &self.basis
    }

    /// (chi_h, chi_h') at x; the derivative is taken in the cell containing
    /// x, right-sided at interior nodes.
    pub fn eval(&self, x: f64) -> Result<(Complex64, Complex64), FemError> {
        let nodes = &self.basis.nodes;
        let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
        if !(lo..=hi).contains(&x) {
            return Err(FemError::OutOfZone(x, lo, hi));
        }
        let cell = if x >= hi {
            nodes.len() - 2
        } else {
            nodes.partition_point(|&n| n <= x) - 1
        };
        let (w, v) = self.basis.shapes(cell, x);
        let (dw, dv) = self.basis.shape_derivs(cell, x);
        let chi = self.nodal[cell] * w + self.nodal[cell + 1] * v;
        let dchi = self.nodal[cell] * dw + self.nodal[cell + 1] * dv;
        Ok((chi, dchi))
    }
}

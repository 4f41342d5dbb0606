//! Non-overlapping domain decomposition of the scattering problem.
//!
//! Both supported layouts are solved in a single sweep against the injection
//! direction, with auxiliary boundary data that is repaired afterwards by a
//! scaling step:
//!
//! * two-zone (evanescent | oscillatory): Robin BVP for chi on the left zone
//!   with the auxiliary Neumann datum eps chi'(x_d) = 1, then a march from
//!   U = A(x_d+) (chi_h(x_d), 1)^T, then scaling by alpha.
//! * three-zone (oscillatory | evanescent | oscillatory): complex march from
//!   (zeta, eps zeta')(0) = (1, -i sqrt(a(0))), a complex-Robin BVP in the
//!   barrier carrying the marched logarithmic derivative, a second march
//!   from x_d, then scaling by alpha (right zones) and beta (left zone).
//!
//! The derivative datum handed across x_d is always the exact auxiliary
//! value eps chi' = 1 (never the discrete derivative chi_h', which is less
//! accurate at nodes).

use crate::coefficient::{
    CoefficientField, FieldError, LayoutKind, Side, ZoneLayout,
};
use crate::evanescent::{
    assemble, build_basis, solve_bvp, EvanescentMesh, FemError, FemSolution, FemSystem,
    RobinCoefficient,
};
use crate::marching::{
    from_u, march, to_u, MarchDiagnostics, MarchError, OscGrid, OscVector, TransformMatrix,
};
use num_complex::Complex64;
use thiserror::Error;

/// Gauss-Legendre points per cell for the r-correction in assembly.
const QUAD_POINTS: usize = 10;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    March(#[from] MarchError),
    #[error("hypothesis violation: {0:?}")]
    HypothesisViolation(Vec<String>),
    #[error("layout does not match this solver (expected {expected})")]
    LayoutMismatch { expected: &'static str },
    #[error("degenerate interface value |zeta({x})| = {magnitude:e}")]
    DegenerateInterface { x: f64, magnitude: f64 },
    #[error("degenerate scaling denominator")]
    DegenerateScaling,
    #[error("imaginary residue {0:e} exceeds the real-preservation budget")]
    ExcessImagResidue(f64),
    #[error("mesh or grid does not span its zone: {0}")]
    GridMismatch(String),
}

/// Final multipliers applied to the auxiliary zone solutions.
#[derive(Clone, Copy, Debug)]
pub struct ScalingParams {
    pub alpha: Complex64,
    /// Left-zone multiplier; present only for three-zone layouts.
    pub beta: Option<Complex64>,
}

/// Scaled solution on one oscillatory zone: psi and eps psi' at the grid
/// nodes plus the underlying (unscaled) U vectors.
#[derive(Clone, Debug)]
pub struct OscZoneSolution {
    pub grid: OscGrid,
    pub vectors: Vec<OscVector>,
    pub psi: Vec<Complex64>,
    pub eps_dpsi: Vec<Complex64>,
    pub diagnostics: MarchDiagnostics,
}

/// Scaled solution on the evanescent zone (a continuum).
#[derive(Clone, Debug)]
pub struct EvZoneSolution {
    pub fem: FemSolution,
    pub scale: Complex64,
    pub system: FemSystem,
}

impl EvZoneSolution {
    /// (psi, eps psi') at x inside the zone.
    pub fn eval(&self, x: f64, eps: f64) -> Result<(Complex64, Complex64), FemError> {
        let (chi, dchi) = self.fem.eval(x)?;
        Ok((self.scale * chi, self.scale * dchi * eps))
    }
}

#[derive(Clone, Debug)]
pub enum ZoneSolution {
    Oscillatory(OscZoneSolution),
    Evanescent(EvZoneSolution),
}

/// Global scattering solution: continuum on evanescent zones, grid values on
/// oscillatory zones, plus the scaling parameters and BC diagnostics.
#[derive(Clone, Debug)]
pub struct ScatteringSolution {
    pub eps: f64,
    pub layout: ZoneLayout,
    pub zones: Vec<ZoneSolution>,
    pub scaling: ScalingParams,
    /// |eps psi'(1) - i sqrt(a(1)) psi(1) + 2 i sqrt(a(1))|.
    pub right_bc_residual: f64,
}

impl ScatteringSolution {
    /// psi at the right boundary (last oscillatory node).
    pub fn psi_at_one(&self) -> Complex64 {
        match self.zones.last().unwrap() {
            ZoneSolution::Oscillatory(z) => *z.psi.last().unwrap(),
            ZoneSolution::Evanescent(_) => unreachable!("right zone is oscillatory"),
        }
    }

    /// psi at the left boundary.
    pub fn psi_at_zero(&self) -> Complex64 {
        match self.zones.first().unwrap() {
            ZoneSolution::Oscillatory(z) => z.psi[0],
            ZoneSolution::Evanescent(z) => z.eval(0.0, self.eps).unwrap().0,
        }
    }

    /// All oscillatory nodes as (x, psi, eps psi'), ascending in x.
    pub fn oscillatory_nodes(&self) -> Vec<(f64, Complex64, Complex64)> {
        let mut out = Vec::new();
        for zone in &self.zones {
            if let ZoneSolution::Oscillatory(z) = zone {
                for (j, &x) in z.grid.nodes().iter().enumerate() {
                    out.push((x, z.psi[j], z.eps_dpsi[j]));
                }
            }
        }
        out
    }

    /// Continuum evaluation inside an evanescent zone, if x lies in one.
    pub fn eval_evanescent(&self, x: f64) -> Option<(Complex64, Complex64)> {
        for (zone, sol) in self.layout.zones.iter().zip(&self.zones) {
            if let ZoneSolution::Evanescent(z) = sol {
                if (zone.x_left..=zone.x_right).contains(&x) {
                    return z.eval(x, self.eps).ok();
                }
            }
        }
        None
    }

    /// (psi, eps psi') at x: grid lookup in oscillatory zones (within `tol`
    /// of a node), continuum evaluation in evanescent zones.
    pub fn psi_pair(&self, x: f64, tol: f64) -> Option<(Complex64, Complex64)> {
        for sol in &self.zones {
            if let ZoneSolution::Oscillatory(z) = sol {
                let nodes = z.grid.nodes();
                if x < nodes[0] - tol || x > nodes[nodes.len() - 1] + tol {
                    continue;
                }
                let j = nodes.partition_point(|&n| n < x);
                for cand in [j.saturating_sub(1), j, j + 1] {
                    if cand < nodes.len() && (nodes[cand] - x).abs() <= tol {
                        return Some((z.psi[cand], z.eps_dpsi[cand]));
                    }
                }
            }
        }
        self.eval_evanescent(x)
    }

    /// Samples of the quantum current j = Im(conj(psi) eps psi') at all
    /// oscillatory nodes and `ev_samples` uniform points per evanescent zone.
    pub fn current_samples(&self, ev_samples: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        for (zone, sol) in self.layout.zones.iter().zip(&self.zones) {
            match sol {
                ZoneSolution::Oscillatory(z) => {
                    for (j, &x) in z.grid.nodes().iter().enumerate() {
                        out.push((x, current(z.psi[j], z.eps_dpsi[j])));
                    }
                }
                ZoneSolution::Evanescent(z) => {
                    for k in 0..ev_samples {
                        let t = k as f64 / (ev_samples - 1) as f64;
                        let x = zone.x_left + t * (zone.x_right - zone.x_left);
                        if let Ok((p, dp)) = z.eval(x, self.eps) {
                            out.push((x, current(p, dp)));
                        }
                    }
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// (max_x |j(x) - j(1)|, j(1)) over the standard sample set.
    pub fn current_deviation(&self, ev_samples: usize) -> (f64, f64) {
        let samples = self.current_samples(ev_samples);
        let j1 = current(self.psi_at_one(), self.eps_dpsi_at_one());
        let dev = samples
            .iter()
            .map(|&(_, j)| (j - j1).abs())
            .fold(0.0, f64::max);
        (dev, j1)
    }

    pub fn eps_dpsi_at_one(&self) -> Complex64 {
        match self.zones.last().unwrap() {
            ZoneSolution::Oscillatory(z) => *z.eps_dpsi.last().unwrap(),
            ZoneSolution::Evanescent(_) => unreachable!("right zone is oscillatory"),
        }
    }

    pub fn h_max(&self) -> f64 {
        self.zones
            .iter()
            .map(|z| match z {
                ZoneSolution::Oscillatory(o) => o.grid.h_max(),
                ZoneSolution::Evanescent(e) => {
                    e.fem
                        .nodes()
                        .windows(2)
                        .map(|w| w[1] - w[0])
                        .fold(0.0, f64::max)
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Quantum current j = Im(conj(psi) * eps psi').
pub fn current(psi: Complex64, eps_dpsi: Complex64) -> f64 {
    (psi.conj() * eps_dpsi).im
}

/// Reflection amplitude r = psi(1) - 1 and, for three-zone layouts, the
/// transmission amplitude t = psi(0).
pub fn reflection_transmission(sol: &ScatteringSolution) -> (Complex64, Option<Complex64>) {
    let r = sol.psi_at_one() - 1.0;
    let t = match sol.layout.kind() {
        LayoutKind::ThreeZone { .. } => Some(sol.psi_at_zero()),
        _ => None,
    };
    (r, t)
}

/// Scaling factor from the final marched vector:
/// alpha = -2i a(1)^{1/4} / (u2 - [i + (eps/4) a(1)^{-3/2} a'(1)] u1).
pub fn scaling_alpha(
    u_m: &OscVector,
    field: &CoefficientField,
    eps: f64,
) -> Result<Complex64, SolveError> {
    let a1 = field.eval_a_side(1.0, Side::Left)?;
    let da1 = field.eval_da_side(1.0, Side::Left)?;
    let shift = Complex64::new(0.25 * eps * da1 * a1.powf(-1.5), 1.0);
    let denom = u_m.u2 - shift * u_m.u1;
    if denom.norm() < 1e-300 {
        return Err(SolveError::DegenerateScaling);
    }
    Ok(Complex64::new(0.0, -2.0 * a1.powf(0.25)) / denom)
}

/// Continuous form of the same scaling, from the wave-function pair at x = 1:
/// alpha = -2i sqrt(a(1)) / (eps psi'(1) - i sqrt(a(1)) psi(1)).
pub fn scaling_alpha_continuous(
    psi1: Complex64,
    eps_dpsi1: Complex64,
    field: &CoefficientField,
) -> Result<Complex64, SolveError> {
    let sq = field.eval_a_side(1.0, Side::Left)?.sqrt();
    let denom = eps_dpsi1 - Complex64::i() * sq * psi1;
    if denom.norm() < 1e-300 {
        return Err(SolveError::DegenerateScaling);
    }
    Ok(Complex64::new(0.0, -2.0 * sq) / denom)
}

fn check_hypotheses(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
) -> Result<(), SolveError> {
    let report = field.validate(layout, eps);
    if !report.pass {
        return Err(SolveError::HypothesisViolation(report.violations));
    }
    Ok(())
}

fn scaled_osc_zone(
    grid: &OscGrid,
    vectors: Vec<OscVector>,
    diagnostics: MarchDiagnostics,
    scale: Complex64,
    eps: f64,
) -> OscZoneSolution {
    let mut psi = Vec::with_capacity(vectors.len());
    let mut eps_dpsi = Vec::with_capacity(vectors.len());
    for (n, u) in vectors.iter().enumerate() {
        let a = grid.a_at(n);
        let da = grid.da_at(n);
        let t = TransformMatrix {
            a11: a.powf(0.25),
            a21: 0.25 * eps * da / (a * a.powf(0.25)),
            a22: a.powf(-0.25),
        };
        let (p, dp) = t.inverse(*u);
        psi.push(scale * p);
        eps_dpsi.push(scale * dp);
    }
    OscZoneSolution {
        grid: grid.clone(),
        vectors,
        psi,
        eps_dpsi,
        diagnostics,
    }
}

fn right_bc_residual(sol_psi: Complex64, sol_dpsi: Complex64, a1: f64) -> f64 {
    let sq = a1.sqrt();
    (sol_dpsi - Complex64::i() * sq * sol_psi + Complex64::new(0.0, 2.0 * sq)).norm()
}

fn ensure_spans(
    name: &str,
    lo: f64,
    hi: f64,
    zone_lo: f64,
    zone_hi: f64,
) -> Result<(), SolveError> {
    if lo != zone_lo || hi != zone_hi {
        return Err(SolveError::GridMismatch(format!(
            "{name} covers [{lo}, {hi}], zone is [{zone_lo}, {zone_hi}]"
        )));
    }
    Ok(())
}

/// Solves the two-zone layout (evanescent on [0, x_d), oscillatory on
/// [x_d, 1]). `neumann_scale` multiplies the auxiliary datum eps chi'(x_d);
/// the scaled solution is invariant under it.
pub fn solve_two_zone(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
    mesh: &EvanescentMesh,
    grid: &OscGrid,
    neumann_scale: f64,
) -> Result<ScatteringSolution, SolveError> {
    let x_d = match layout.kind() {
        LayoutKind::TwoZone { x_d } => x_d,
        _ => {
            return Err(SolveError::LayoutMismatch {
                expected: "two-zone (evanescent | oscillatory)",
            })
        }
    };
    check_hypotheses(field, layout, eps)?;
    let m = mesh.nodes();
    ensure_spans("mesh", m[0], m[m.len() - 1], 0.0, x_d)?;
    let g = grid.nodes();
    ensure_spans("grid", g[0], g[g.len() - 1], x_d, 1.0)?;

    // Step 1: Robin BVP for the auxiliary chi.
    let rho = RobinCoefficient::two_zone(field, eps)?;
    let basis = build_basis(field, mesh, eps)?;
    let system = assemble(field, &basis, eps, rho, neumann_scale, QUAD_POINTS)?;
    let fem = solve_bvp(&basis, &system)?;
    let chi_xd = fem.nodal[fem.nodal.len() - 1];

    // Step 2: march from the exact auxiliary derivative datum.
    let u_init = to_u(
        field,
        x_d,
        Side::Right,
        chi_xd,
        Complex64::new(neumann_scale, 0.0),
        eps,
    )?;
    let res = march(grid, u_init)?;
    // The two-zone data path is real; assert the residue and project it out.
    if res.diagnostics.max_imag_residue > 1e-10 {
        return Err(SolveError::ExcessImagResidue(
            res.diagnostics.max_imag_residue,
        ));
    }
    let vectors: Vec<OscVector> = res.vectors.iter().map(|u| u.re()).collect();
    let diagnostics = res.diagnostics;

    // Step 3: scaling.
    let alpha = scaling_alpha(vectors.last().unwrap(), field, eps)?;
    let osc = scaled_osc_zone(grid, vectors, diagnostics, alpha, eps);
    let ev = EvZoneSolution {
        fem,
        scale: alpha,
        system,
    };
    let a1 = field.eval_a_side(1.0, Side::Left)?;
    let residual = right_bc_residual(
        *osc.psi.last().unwrap(),
        *osc.eps_dpsi.last().unwrap(),
        a1,
    );
    Ok(ScatteringSolution {
        eps,
        layout: layout.clone(),
        zones: vec![ZoneSolution::Evanescent(ev), ZoneSolution::Oscillatory(osc)],
        scaling: ScalingParams {
            alpha,
            beta: None,
        },
        right_bc_residual: residual,
    })
}

/// Solves the three-zone layout (oscillatory | evanescent | oscillatory).
pub fn solve_three_zone(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
    grid_left: &OscGrid,
    mesh: &EvanescentMesh,
    grid_right: &OscGrid,
    neumann_scale: f64,
) -> Result<ScatteringSolution, SolveError> {
    let (x_c, x_d) = match layout.kind() {
        LayoutKind::ThreeZone { x_c, x_d } => (x_c, x_d),
        _ => {
            return Err(SolveError::LayoutMismatch {
                expected: "three-zone (oscillatory | evanescent | oscillatory)",
            })
        }
    };
    check_hypotheses(field, layout, eps)?;
    let gl = grid_left.nodes();
    ensure_spans("left grid", gl[0], gl[gl.len() - 1], 0.0, x_c)?;
    let m = mesh.nodes();
    ensure_spans("mesh", m[0], m[m.len() - 1], x_c, x_d)?;
    let gr = grid_right.nodes();
    ensure_spans("right grid", gr[0], gr[gr.len() - 1], x_d, 1.0)?;

    // Step 1: outgoing-wave march on the left lead.
    let a0 = field.eval_a_side(0.0, Side::Right)?;
    let u0 = to_u(
        field,
        0.0,
        Side::Right,
        Complex64::new(1.0, 0.0),
        Complex64::new(0.0, -a0.sqrt()),
        eps,
    )?;
    let res_left = march(grid_left, u0)?;
    let (zeta_c, eps_dzeta_c) = from_u(field, x_c, Side::Left, res_left.final_u(), eps)?;
    if zeta_c.norm() < 1e-300 {
        return Err(SolveError::DegenerateInterface {
            x: x_c,
            magnitude: zeta_c.norm(),
        });
    }

    // Step 2: barrier BVP carrying the logarithmic derivative across x_c.
    let rho_c = RobinCoefficient::new(eps_dzeta_c / (eps * zeta_c));
    let basis = build_basis(field, mesh, eps)?;
    let system = assemble(field, &basis, eps, rho_c, neumann_scale, QUAD_POINTS)?;
    let fem = solve_bvp(&basis, &system)?;
    let chi_xc = fem.nodal[0];
    let chi_xd = fem.nodal[fem.nodal.len() - 1];

    // Step 3: march on the right lead from the exact auxiliary derivative.
    let u_init = to_u(
        field,
        x_d,
        Side::Right,
        chi_xd,
        Complex64::new(neumann_scale, 0.0),
        eps,
    )?;
    let res_right = march(grid_right, u_init)?;

    // Step 4: scaling parameters.
    let alpha = scaling_alpha(&res_right.final_u(), field, eps)?;
    let beta = alpha * chi_xc / zeta_c;

    let osc_left = scaled_osc_zone(
        grid_left,
        res_left.vectors.clone(),
        res_left.diagnostics,
        beta,
        eps,
    );
    let osc_right = scaled_osc_zone(
        grid_right,
        res_right.vectors.clone(),
        res_right.diagnostics,
        alpha,
        eps,
    );
    let ev = EvZoneSolution {
        fem,
        scale: alpha,
        system,
    };
    let a1 = field.eval_a_side(1.0, Side::Left)?;
    let residual = right_bc_residual(
        *osc_right.psi.last().unwrap(),
        *osc_right.eps_dpsi.last().unwrap(),
        a1,
    );
    Ok(ScatteringSolution {
        eps,
        layout: layout.clone(),
        zones: vec![
            ZoneSolution::Oscillatory(osc_left),
            ZoneSolution::Evanescent(ev),
            ZoneSolution::Oscillatory(osc_right),
        ],
        scaling: ScalingParams {
            alpha,
            beta: Some(beta),
        },
        right_bc_residual: residual,
    })
}

/// Solves either supported layout on uniform per-zone grids derived from a
/// single mesh parameter h (cells per zone = ceil(zone length / h)).
pub fn solve_uniform(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
    h: f64,
    neumann_scale: f64,
) -> Result<ScatteringSolution, SolveError> {
    if !(h > 0.0) {
        return Err(SolveError::GridMismatch(format!(
            "mesh parameter h = {h} must be positive"
        )));
    }
    let cells = |lo: f64, hi: f64| (((hi - lo) / h).ceil() as usize).max(1);
    match layout.kind() {
        LayoutKind::TwoZone { x_d } => {
            let mesh = EvanescentMesh::uniform(0.0, x_d, cells(0.0, x_d))?;
            let grid = OscGrid::uniform(field, x_d, 1.0, cells(x_d, 1.0), eps)?;
            solve_two_zone(field, layout, eps, &mesh, &grid, neumann_scale)
        }
        LayoutKind::ThreeZone { x_c, x_d } => {
            let g1 = OscGrid::uniform(field, 0.0, x_c, cells(0.0, x_c), eps)?;
            let mesh = EvanescentMesh::uniform(x_c, x_d, cells(x_c, x_d))?;
            let g2 = OscGrid::uniform(field, x_d, 1.0, cells(x_d, 1.0), eps)?;
            solve_three_zone(field, layout, eps, &g1, &mesh, &g2, neumann_scale)
        }
        LayoutKind::Other => Err(SolveError::LayoutMismatch {
            expected: "two-zone or three-zone",
        }),
    }
}

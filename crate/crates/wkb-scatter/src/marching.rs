//! Second-order WKB marching scheme for oscillatory zones.
//!
//! The wave function is carried as the vector U = (a^{1/4} psi,
//! eps (a^{1/4} psi)'/sqrt(a)). After the analytic transformation
//! Z = exp(-i Phi/eps) P U with the exact phase phi(x) = int (sqrt(a) -
//! eps^2 beta), the transformed system Z' = eps N Z is smooth and one
//! explicit step per (coarse) cell suffices: Z_{n+1} = (I + A1_n + A2_n) Z_n
//! with matrices built from the coefficients b0..b3, the phase factors
//! e^{+-2i phi/eps} and the cancellation-safe kernels H1, H2. The scheme is
//! exact whenever beta vanishes (constant a) and second order in h
//! otherwise, uniformly in eps.

use crate::coefficient::{BetaJet, CoefficientField, FieldError, Side};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarchError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("zone is not oscillatory at x = {0} (a = {1})")]
    NotOscillatory(f64, f64),
    #[error("grid invalid: {0}")]
    GridInvalid(String),
    #[error("cell [{0}, {1}] crosses a potential segment boundary")]
    CellCrossesSegment(f64, f64),
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
}

/// Two-component state U at one grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OscVector {
    pub u1: Complex64,
    pub u2: Complex64,
}

impl OscVector {
    pub fn new(u1: Complex64, u2: Complex64) -> Self {
        OscVector { u1, u2 }
    }

    pub fn real(u1: f64, u2: f64) -> Self {
        OscVector {
            u1: Complex64::new(u1, 0.0),
            u2: Complex64::new(u2, 0.0),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.u1.norm_sqr() + self.u2.norm_sqr()).sqrt()
    }

    pub fn imag_magnitude(&self) -> f64 {
        self.u1.im.abs().max(self.u2.im.abs())
    }

    pub fn re(&self) -> OscVector {
        OscVector::real(self.u1.re, self.u2.re)
    }

    fn is_finite(&self) -> bool {
        self.u1.re.is_finite()
            && self.u1.im.is_finite()
            && self.u2.re.is_finite()
            && self.u2.im.is_finite()
    }
}

/// Change of variables U = A(x) (psi, eps psi')^T with
/// A = [[a^{1/4}, 0], [eps a'/(4 a^{5/4}), a^{-1/4}]], one-sided at jumps.
#[derive(Clone, Copy, Debug)]
pub struct TransformMatrix {
    pub a11: f64,
    pub a21: f64,
    pub a22: f64,
}

impl TransformMatrix {
    pub fn at(
        field: &CoefficientField,
        x: f64,
        side: Side,
        eps: f64,
    ) -> Result<Self, MarchError> {
        let a = field.eval_a_side(x, side)?;
        if a <= 0.0 {
            return Err(MarchError::NotOscillatory(x, a));
        }
        let da = field.eval_da_side(x, side)?;
        let root = a.powf(0.25);
        Ok(TransformMatrix {
            a11: root,
            a21: 0.25 * eps * da / (a * root),
            a22: 1.0 / root,
        })
    }

    pub fn forward(&self, psi: Complex64, eps_dpsi: Complex64) -> OscVector {
        OscVector {
            u1: psi * self.a11,
            u2: psi * self.a21 + eps_dpsi * self.a22,
        }
    }

    pub fn inverse(&self, u: OscVector) -> (Complex64, Complex64) {
        let psi = u.u1 / self.a11;
        let eps_dpsi = (u.u2 - psi * self.a21) / self.a22;
        (psi, eps_dpsi)
    }
}

/// U at (x, side) from the wave-function pair (psi, eps psi').
pub fn to_u(
    field: &CoefficientField,
    x: f64,
    side: Side,
    psi: Complex64,
    eps_dpsi: Complex64,
    eps: f64,
) -> Result<OscVector, MarchError> {
    Ok(TransformMatrix::at(field, x, side, eps)?.forward(psi, eps_dpsi))
}

/// (psi, eps psi') at (x, side) from a U vector.
pub fn from_u(
    field: &CoefficientField,
    x: f64,
    side: Side,
    u: OscVector,
    eps: f64,
) -> Result<(Complex64, Complex64), MarchError> {
    Ok(TransformMatrix::at(field, x, side, eps)?.inverse(u))
}

/// Cancellation-safe kernels H1(eta) = e^{i eta} - 1 and
/// H2(eta) = e^{i eta} - 1 - i eta for real eta of any magnitude.
pub fn stable_h(eta: f64) -> (Complex64, Complex64) {
    // cos(eta) - 1 = -2 sin^2(eta/2) has no cancellation.
    let re = -2.0 * (0.5 * eta).sin().powi(2);
    let im1 = eta.sin();
    let im2 = if eta.abs() < 1e-3 {
        // sin(eta) - eta by its odd series through eta^7.
        let e2 = eta * eta;
        eta * e2 * (-1.0 / 6.0 + e2 * (1.0 / 120.0 - e2 / 5040.0))
    } else {
        eta.sin() - eta
    };
    (Complex64::new(re, im1), Complex64::new(re, im2))
}

/// Small dense 2x2 complex matrix.
#[derive(Clone, Copy, Debug)]
pub struct Mat2(pub [[Complex64; 2]; 2]);

impl Mat2 {
    pub fn zero() -> Self {
        Mat2([[Complex64::default(); 2]; 2])
    }

    pub fn identity() -> Self {
        let mut m = Self::zero();
        m.0[0][0] = Complex64::new(1.0, 0.0);
        m.0[1][1] = Complex64::new(1.0, 0.0);
        m
    }

    pub fn add(&self, other: &Mat2) -> Mat2 {
        let mut m = Self::zero();
        for i in 0..2 {
            for j in 0..2 {
                m.0[i][j] = self.0[i][j] + other.0[i][j];
            }
        }
        m
    }

    pub fn mul_vec(&self, v: (Complex64, Complex64)) -> (Complex64, Complex64) {
        (
            self.0[0][0] * v.0 + self.0[0][1] * v.1,
            self.0[1][0] * v.0 + self.0[1][1] * v.1,
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Oscillatory grid with exact phases and scheme coefficients at the nodes.
#[derive(Clone, Debug)]
pub struct OscGrid {
    eps: f64,
    nodes: Vec<f64>,
    /// phi(x_n) relative to the zone's left endpoint.
    phase: Vec<f64>,
    /// S_n = phi(x_{n+1}) - phi(x_n), computed per cell in closed form.
    incr: Vec<f64>,
    jets: Vec<BetaJet>,
    a: Vec<f64>,
    da: Vec<f64>,
}

impl OscGrid {
    pub fn uniform(
        field: &CoefficientField,
        x_left: f64,
        x_right: f64,
        cells: usize,
        eps: f64,
    ) -> Result<Self, MarchError> {
        if cells == 0 || !(x_left < x_right) {
            return Err(MarchError::GridInvalid(format!(
                "need at least one cell on a proper interval, got {cells} on [{x_left}, {x_right}]"
            )));
        }
        let w = (x_right - x_left) / cells as f64;
        let mut nodes: Vec<f64> = (0..=cells).map(|j| x_left + j as f64 * w).collect();
        *nodes.last_mut().unwrap() = x_right;
        Self::from_nodes(field, nodes, eps)
    }

    pub fn from_nodes(
        field: &CoefficientField,
        nodes: Vec<f64>,
        eps: f64,
    ) -> Result<Self, MarchError> {
        if nodes.len() < 2 || !nodes.windows(2).all(|w| w[0] < w[1]) {
            return Err(MarchError::GridInvalid(
                "nodes must be strictly increasing with at least one cell".into(),
            ));
        }
        for w in nodes.windows(2) {
            if !field
                .segments()
                .iter()
                .any(|s| s.x_left <= w[0] && w[1] <= s.x_right)
            {
                return Err(MarchError::CellCrossesSegment(w[0], w[1]));
            }
        }
        let last = nodes.len() - 1;
        let mut phase = Vec::with_capacity(nodes.len());
        let mut incr = Vec::with_capacity(last);
        let mut jets = Vec::with_capacity(nodes.len());
        let mut a = Vec::with_capacity(nodes.len());
        let mut da = Vec::with_capacity(nodes.len());
        phase.push(0.0);
        for (j, &x) in nodes.iter().enumerate() {
            let side = if j == last { Side::Left } else { Side::Right };
            let av = field.eval_a_side(x, side)?;
            if av <= 0.0 {
                return Err(MarchError::NotOscillatory(x, av));
            }
            a.push(av);
            da.push(field.eval_da_side(x, side)?);
            jets.push(field.beta_jet(eps, x, side).map_err(|e| match e {
                FieldError::WrongRegime(x, ..) => MarchError::NotOscillatory(x, av),
                other => MarchError::Field(other),
            })?);
            if j < last {
                let s = field.phase_integral(eps, x, nodes[j + 1])?;
                incr.push(s);
                phase.push(phase[j] + s);
            }
        }
        Ok(OscGrid {
            eps,
            nodes,
            phase,
            incr,
            jets,
            a,
            da,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn h_max(&self) -> f64 {
        self.nodes
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn phase_at(&self, n: usize) -> f64 {
        self.phase[n]
    }

    pub fn a_at(&self, n: usize) -> f64 {
        self.a[n]
    }

    pub fn da_at(&self, n: usize) -> f64 {
        self.da[n]
    }

    pub fn jet_at(&self, n: usize) -> &BetaJet {
        &self.jets[n]
    }
}

/// One-step matrices (A1_n, A2_n) for the cell [x_n, x_{n+1}].
pub fn step_matrices(grid: &OscGrid, n: usize) -> (Mat2, Mat2) {
    let eps = grid.eps;
    let i = Complex64::i();
    let h_n = grid.nodes[n + 1] - grid.nodes[n];
    let s_n = grid.incr[n];
    let e_n = Complex64::from_polar(1.0, 2.0 * grid.phase[n] / eps);
    let e_n1 = Complex64::from_polar(1.0, 2.0 * grid.phase[n + 1] / eps);
    let (h1_m, h2_m) = stable_h(-2.0 * s_n / eps);
    let (h1_p, h2_p) = stable_h(2.0 * s_n / eps);
    let jn = &grid.jets[n];
    let jn1 = &grid.jets[n + 1];
    let (b0_n, b0_n1) = (jn.b[0], jn1.b[0]);
    let (b1_n, b1_n1) = (jn.b[1], jn1.b[1]);
    let b2_n1 = jn1.b[2];
    let b3_n1 = jn1.b[3];
    let eps2 = eps * eps;
    let eps3 = eps2 * eps;
    let eps4 = eps2 * eps2;
    let eps5 = eps4 * eps;

    let mut a1 = Mat2::zero();
    a1.0[0][1] = -i * eps2 * (b0_n * e_n.conj() - b0_n1 * e_n1.conj())
        + eps3 * (b1_n1 * e_n1.conj() - b1_n * e_n.conj())
        + i * eps4 * b2_n1 * (-e_n.conj() * h1_m)
        - eps5 * b3_n1 * (e_n.conj() * h2_m);
    a1.0[1][0] = -i * eps2 * (b0_n1 * e_n1 - b0_n * e_n)
        + eps3 * (b1_n1 * e_n1 - b1_n * e_n)
        + i * eps4 * b2_n1 * (e_n * h1_p)
        - eps5 * b3_n1 * (e_n * h2_p);

    let avg = 0.5 * (jn1.beta * b0_n1 + jn.beta * b0_n);
    let mut a2 = Mat2::zero();
    a2.0[0][0] = -i * eps3 * h_n * avg - eps4 * b0_n * b0_n1 * h1_m
        + i * eps5 * b1_n1 * (b0_n - b0_n1) * h2_m;
    a2.0[1][1] = i * eps3 * h_n * avg - eps4 * b0_n * b0_n1 * h1_p
        - i * eps5 * b1_n1 * (b0_n - b0_n1) * h2_p;
    (a1, a2)
}

/// Per-march diagnostics for the stability and realness checks.
#[derive(Clone, Debug, Default)]
pub struct MarchDiagnostics {
    /// max over steps of | ||Z_{n+1}|| / ||Z_n|| - 1 |.
    pub max_step_ratio_dev: f64,
    /// max over steps of that deviation divided by eps * h_n.
    pub ratio_dev_over_eps_h: f64,
    /// max over steps of ||A1_n|| / (eps h_n).
    pub a1_norm_over_eps_h: f64,
    /// max over steps of ||A2_n|| / (eps^3 h_n).
    pub a2_norm_over_eps3_h: f64,
    /// max over nodes of the imaginary residue relative to ||U_n||.
    pub max_imag_residue: f64,
}

#[derive(Clone, Debug)]
pub struct MarchResult {
    pub vectors: Vec<OscVector>,
    pub diagnostics: MarchDiagnostics,
}

impl MarchResult {
    pub fn final_u(&self) -> OscVector {
        *self.vectors.last().unwrap()
    }
}

/// Runs the one-step scheme from `u_init` at the grid's left endpoint and
/// back-transforms at every node.
pub fn march(grid: &OscGrid, u_init: OscVector) -> Result<MarchResult, MarchError> {
    let eps = grid.eps;
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let i = Complex64::i();
    // Z = P U with P = (1/sqrt2) [[i, 1], [1, i]].
    let mut z = (
        (i * u_init.u1 + u_init.u2) * inv_sqrt2,
        (u_init.u1 + i * u_init.u2) * inv_sqrt2,
    );
    let mut vectors = Vec::with_capacity(grid.nodes.len());
    vectors.push(u_init);
    let mut diag = MarchDiagnostics::default();
    let mut z_norm = (z.0.norm_sqr() + z.1.norm_sqr()).sqrt();
    for n in 0..grid.cells() {
        let (a1, a2) = step_matrices(grid, n);
        let b = Mat2::identity().add(&a1).add(&a2);
        z = b.mul_vec(z);
        let h_n = grid.nodes[n + 1] - grid.nodes[n];
        let new_norm = (z.0.norm_sqr() + z.1.norm_sqr()).sqrt();
        let dev = (new_norm / z_norm - 1.0).abs();
        diag.max_step_ratio_dev = diag.max_step_ratio_dev.max(dev);
        diag.ratio_dev_over_eps_h = diag.ratio_dev_over_eps_h.max(dev / (eps * h_n));
        diag.a1_norm_over_eps_h = diag
            .a1_norm_over_eps_h
            .max(a1.frobenius_norm() / (eps * h_n));
        diag.a2_norm_over_eps3_h = diag
            .a2_norm_over_eps3_h
            .max(a2.frobenius_norm() / (eps * eps * eps * h_n));
        z_norm = new_norm;
        // U_n = P^{-1} e^{i Phi(x_n)/eps} Z_n.
        let rot = Complex64::from_polar(1.0, grid.phase[n + 1] / eps);
        let w = (z.0 * rot, z.1 * rot.conj());
        let u = OscVector {
            u1: (-i * w.0 + w.1) * inv_sqrt2,
            u2: (w.0 - i * w.1) * inv_sqrt2,
        };
        if !u.is_finite() {
            return Err(MarchError::NonFinite { step: n + 1 });
        }
        let norm = u.norm();
        if norm > 0.0 {
            diag.max_imag_residue = diag.max_imag_residue.max(u.imag_magnitude() / norm);
        }
        vectors.push(u);
    }
    Ok(MarchResult {
        vectors,
        diagnostics: diag,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::{CoefficientField, PotentialSegment};
    use crate::harness::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn constant_a_field(a: f64) -> CoefficientField {
        CoefficientField::new(a + 1.0, vec![PotentialSegment::constant(0.0, 1.0, 1.0)])
            .unwrap()
    }

    #[test]
    fn stable_h_values() {
        let (h1, h2) = stable_h(0.0);
        assert_eq!(h1, c(0.0, 0.0));
        assert_eq!(h2, c(0.0, 0.0));

        let (h1, _) = stable_h(std::f64::consts::PI);
        assert!((h1.re + 2.0).abs() < 1e-15);
        assert!(h1.im.abs() < 1e-15);

        // eta = 1e-9: H2 ~ -eta^2/2 - i eta^3/6.
        let (_, h2) = stable_h(1e-9);
        assert!((h2.re + 5e-19).abs() <= 1e-20 + 1e-13 * 5e-19);
        assert!((h2.im + 1.0 / 6.0 * 1e-27).abs() <= 1e-20);

        // Conjugate symmetry and boundedness for large arguments.
        for eta in [1e-7, 0.5, 3.0, 2.0e4, 123456.789] {
            let (h1p, h2p) = stable_h(eta);
            let (h1m, h2m) = stable_h(-eta);
            assert_eq!(h1m, h1p.conj());
            assert_eq!(h2m, h2p.conj());
            assert!(h1p.norm() <= 2.0 + 1e-12);
            // |e^{i eta} - 1| matches the half-angle identity.
            assert!((h1p.norm() - 2.0 * (0.5 * eta).sin().abs()).abs() < 1e-13);
        }

        // Relative accuracy against direct evaluation where it is stable.
        for eta in [0.1, 1.0, 2.5] {
            let (h1, h2) = stable_h(eta);
            let direct = (c(0.0, eta)).exp() - 1.0;
            assert!((h1 - direct).norm() <= 1e-13 * direct.norm());
            let direct2 = direct - c(0.0, eta);
            assert!((h2 - direct2).norm() <= 1e-13 * direct2.norm().max(1e-16));
        }
    }

    #[test]
    fn transform_round_trip() {
        // a = 1: U = (psi, eps psi').
        let field = constant_a_field(1.0);
        let u = to_u(&field, 0.3, Side::Right, c(0.7, -0.2), c(0.1, 0.4), 0.05).unwrap();
        assert_eq!(u.u1, c(0.7, -0.2));
        assert_eq!(u.u2, c(0.1, 0.4));

        // a = 4, a' = 0: U = (sqrt2 psi, eps psi'/sqrt2).
        let field4 = constant_a_field(4.0);
        let u = to_u(&field4, 0.3, Side::Right, c(1.0, 0.0), c(0.0, 1.0), 0.05).unwrap();
        assert!((u.u1 - c(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert!((u.u2 - c(0.0, 1.0 / 2f64.sqrt())).norm() < 1e-15);

        // from_u(to_u(v)) = v on a field with a' != 0.
        let lin = presets::example1_field();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let x = rng.gen_range(0.54..1.0);
            let psi = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let dpsi = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let u = to_u(&lin, x, Side::Right, psi, dpsi, 0.01).unwrap();
            let (p2, d2) = from_u(&lin, x, Side::Right, u, 0.01).unwrap();
            assert!((p2 - psi).norm() <= 1e-14);
            assert!((d2 - dpsi).norm() <= 1e-14);
        }
        // Evanescent point is rejected.
        assert!(matches!(
            to_u(&lin, 0.51, Side::Right, c(1.0, 0.0), c(0.0, 0.0), 0.01),
            Err(MarchError::NotOscillatory(..))
        ));
    }

    #[test]
    fn step_matrices_vanish_for_constant_a() {
        let field = constant_a_field(2.0);
        let grid = OscGrid::uniform(&field, 0.0, 1.0, 8, 0.01).unwrap();
        for n in 0..8 {
            let (a1, a2) = step_matrices(&grid, n);
            assert_eq!(a1.frobenius_norm(), 0.0);
            assert_eq!(a2.frobenius_norm(), 0.0);
        }
    }

    #[test]
    fn step_matrix_symmetry() {
        // conj(B_11) = B_22 and conj(B_12) = B_21 at every step of a
        // quadratic-coefficient grid.
        let field = presets::fig1_field();
        let grid = OscGrid::uniform(&field, 0.0, 1.0, 16, 0.01).unwrap();
        for n in 0..16 {
            let (a1, a2) = step_matrices(&grid, n);
            let b = Mat2::identity().add(&a1).add(&a2);
            assert!((b.0[0][0].conj() - b.0[1][1]).norm() <= 1e-14);
            assert!((b.0[0][1].conj() - b.0[1][0]).norm() <= 1e-14);
        }
    }

    #[test]
    fn constant_a_march_is_exact_rotation() {
        // With beta = 0 the scheme reduces to U_n = R(phi_n/eps) U_init.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for &k2 in &[1.0, 2.25] {
            let field = constant_a_field(k2);
            for &eps in &[1e-1, 1e-2, 1e-4] {
                for &cells in &[3usize, 37] {
                    let grid = OscGrid::uniform(&field, 0.0, 1.0, cells, eps).unwrap();
                    let u0 =
                        OscVector::real(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let res = march(&grid, u0).unwrap();
                    for (n, u) in res.vectors.iter().enumerate() {
                        let th = grid.phase_at(n) / eps;
                        let (cn, sn) = (th.cos(), th.sin());
                        let e1 = cn * u0.u1.re + sn * u0.u2.re;
                        let e2 = -sn * u0.u1.re + cn * u0.u2.re;
                        let err =
                            ((u.u1 - e1).norm_sqr() + (u.u2 - e2).norm_sqr()).sqrt();
                        assert!(
                            err <= 1e-12,
                            "k2 {k2} eps {eps} cells {cells} node {n}: err {err:e}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn real_data_stays_real_and_norms_are_controlled() {
        let field = presets::example1_field();
        let eps = 1e-2;
        let grid = OscGrid::uniform(&field, 0.53125, 1.0, 256, eps).unwrap();
        let u0 = OscVector::real(0.8, -0.3);
        let res = march(&grid, u0).unwrap();
        assert!(
            res.diagnostics.max_imag_residue <= 1e-13,
            "imag residue {:e}",
            res.diagnostics.max_imag_residue
        );
        // ||U_n|| within the continuous two-sided envelope, with slack for
        // the scheme's own O(eps^3 h^2) error.
        let total_abs_beta = field.beta_integral(0.53125, 1.0).unwrap().abs();
        let lo = u0.norm() * (-eps * total_abs_beta).exp() - 1e-6;
        let hi = u0.norm() * (eps * total_abs_beta).exp() + 1e-6;
        for u in &res.vectors {
            let n = u.norm();
            assert!(n >= lo && n <= hi, "norm {n} outside [{lo}, {hi}]");
        }
        // Measured matrix-norm scalings stay bounded across refinement.
        let fine = OscGrid::uniform(&field, 0.53125, 1.0, 1024, eps).unwrap();
        let res_fine = march(&fine, u0).unwrap();
        let r = res.diagnostics.a1_norm_over_eps_h / res_fine.diagnostics.a1_norm_over_eps_h;
        assert!(r > 0.25 && r < 4.0, "A1 scaling drifts: {r}");
        let r2 =
            res.diagnostics.a2_norm_over_eps3_h / res_fine.diagnostics.a2_norm_over_eps3_h;
        assert!(r2 > 0.25 && r2 < 4.0, "A2 scaling drifts: {r2}");
        assert!(res.diagnostics.ratio_dev_over_eps_h.is_finite());
    }

    /// RK4 integration of U' = [(1/eps) A0 + eps A1] U as an independent
    /// reference for the order test.
    fn rk4_reference(
        field: &CoefficientField,
        x0: f64,
        x1: f64,
        eps: f64,
        u0: (Complex64, Complex64),
        steps: usize,
    ) -> (Complex64, Complex64) {
        let rhs = |x: f64, u: (Complex64, Complex64)| {
            let x = x.clamp(x0, x1);
            let a = field.eval_a(x).unwrap();
            let beta = field.eval_beta(x, Side::Right).unwrap();
            let sq = a.sqrt();
            (u.1 * (sq / eps), -u.0 * (sq / eps) + u.0 * (2.0 * eps * beta))
        };
        let h = (x1 - x0) / steps as f64;
        let mut u = u0;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = rhs(x, u);
            let k2 = rhs(x + 0.5 * h, (u.0 + 0.5 * h * k1.0, u.1 + 0.5 * h * k1.1));
            let k3 = rhs(x + 0.5 * h, (u.0 + 0.5 * h * k2.0, u.1 + 0.5 * h * k2.1));
            let k4 = rhs(x + h, (u.0 + h * k3.0, u.1 + h * k3.1));
            u = (
                u.0 + h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
                u.1 + h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
            );
            x += h;
        }
        u
    }

    #[test]
    fn scheme_is_second_order_in_h() {
        // a = (x + 1/2)^2 with exact phases: error vs an independent RK4
        // reference fits C h^2 with slope 2 +- 0.15.
        let field = presets::fig1_field();
        let eps = 0.1;
        let u0 = OscVector::real(1.0, 0.0);
        let reference = rk4_reference(&field, 0.0, 1.0, eps, (u0.u1, u0.u2), 200_000);
        let mut data = Vec::new();
        for p in 4..=7 {
            let cells = 1usize << p;
            let grid = OscGrid::uniform(&field, 0.0, 1.0, cells, eps).unwrap();
            let res = march(&grid, u0).unwrap();
            let end = res.final_u();
            let err =
                ((end.u1 - reference.0).norm_sqr() + (end.u2 - reference.1).norm_sqr()).sqrt();
            data.push(((1.0 / cells as f64).ln(), err.ln()));
        }
        let n = data.len() as f64;
        let sx: f64 = data.iter().map(|d| d.0).sum();
        let sy: f64 = data.iter().map(|d| d.1).sum();
        let sxx: f64 = data.iter().map(|d| d.0 * d.0).sum();
        let sxy: f64 = data.iter().map(|d| d.0 * d.1).sum();
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!(
            (slope - 2.0).abs() <= 0.15,
            "order fit {slope} (errors {data:?})"
        );
    }
}

//! Independent ground truth and error metrics: exact transfer-matrix
//! solutions for piecewise-constant potentials, fine-grid self-references,
//! pointwise error reports and log-log slope fits.

use crate::coefficient::{CoefficientField, FieldError, SegmentKind, ZoneLayout};
use crate::decomposition::{solve_uniform, ScatteringSolution, SolveError};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("transfer matrices require a piecewise-constant potential")]
    NotPiecewiseConstant,
    #[error("piece [{0}, {1}] has a = 0 (turning value unsupported)")]
    TurningValue(f64, f64),
    #[error("reference resolution {0} must be a power of two in [2^14, 2^22]")]
    BadRefResolution(usize),
    #[error("no reference value within tolerance of x = {0}")]
    GridMismatch(f64),
    #[error("slope undefined: {0}")]
    DegenerateSlope(String),
}

/// Anything that can report (psi, eps psi') at a requested point.
pub trait WaveReference {
    fn psi_pair_at(&self, x: f64) -> Option<(Complex64, Complex64)>;
}

impl WaveReference for ScatteringSolution {
    fn psi_pair_at(&self, x: f64) -> Option<(Complex64, Complex64)> {
        self.psi_pair(x, 1e-9 * (1.0 + x.abs()))
    }
}

/// 2x2 real propagator with an explicit log-scale ledger so that long
/// evanescent pieces never overflow.
#[derive(Clone, Copy, Debug)]
struct ScaledMat {
    m: [[f64; 2]; 2],
    log: f64,
}

impl ScaledMat {
    fn identity() -> Self {
        ScaledMat {
            m: [[1.0, 0.0], [0.0, 1.0]],
            log: 0.0,
        }
    }

    fn mul(&self, rhs: &ScaledMat) -> ScaledMat {
        let mut m = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] = self.m[i][0] * rhs.m[0][j] + self.m[i][1] * rhs.m[1][j];
            }
        }
        let scale = m
            .iter()
            .flatten()
            .map(|v| v.abs())
            .fold(0.0_f64, f64::max);
        let mut log = self.log + rhs.log;
        if scale > 0.0 {
            for row in m.iter_mut() {
                for v in row.iter_mut() {
                    *v /= scale;
                }
            }
            log += scale.ln();
        }
        ScaledMat { m, log }
    }

    fn apply(&self, v: (Complex64, Complex64)) -> (Complex64, Complex64) {
        (
            v.0 * self.m[0][0] + v.1 * self.m[0][1],
            v.0 * self.m[1][0] + v.1 * self.m[1][1],
        )
    }

    /// ln |det| including the ledger (0 for a Wronskian-preserving map).
    fn log_det(&self) -> f64 {
        (self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0])
            .abs()
            .ln()
            + 2.0 * self.log
    }
}

/// Propagator of (psi, eps psi') across a constant-a piece of width d.
fn piece_matrix(a: f64, d: f64, eps: f64) -> ScaledMat {
    if a > 0.0 {
        let k = a.sqrt();
        let th = k * d / eps;
        ScaledMat {
            m: [
                [th.cos(), th.sin() / k],
                [-k * th.sin(), th.cos()],
            ],
            log: 0.0,
        }
    } else {
        let kap = (-a).sqrt();
        let th = kap * d / eps;
        // cosh/sinh in shifted form: M = e^{th} * Mtilde.
        let e = (-2.0 * th).exp();
        ScaledMat {
            m: [
                [0.5 * (1.0 + e), 0.5 * (1.0 - e) / kap],
                [0.5 * kap * (1.0 - e), 0.5 * (1.0 + e)],
            ],
            log: th,
        }
    }
}

/// Piecewise-constant coefficient model for the transfer-matrix oracle.
#[derive(Clone, Debug)]
pub struct TransferMatrixModel {
    pieces: Vec<(f64, f64, f64)>,
}

impl TransferMatrixModel {
    pub fn from_field(field: &CoefficientField) -> Result<Self, OracleError> {
        let mut pieces = Vec::new();
        for seg in field.segments() {
            if seg.kind != SegmentKind::Constant {
                return Err(OracleError::NotPiecewiseConstant);
            }
            let a = field.energy() - seg.coeffs()[0];
            if a == 0.0 {
                return Err(OracleError::TurningValue(seg.x_left, seg.x_right));
            }
            pieces.push((seg.x_left, seg.x_right, a));
        }
        Ok(TransferMatrixModel { pieces })
    }

    pub fn pieces(&self) -> &[(f64, f64, f64)] {
        &self.pieces
    }
}

/// Closed-form solution of the scattering problem for a piecewise-constant
/// model, evaluable at arbitrary x in [0, 1].
#[derive(Clone, Debug)]
pub struct TransferMatrixSolution {
    model: TransferMatrixModel,
    eps: f64,
    /// Propagator from 0 to the start of each piece.
    prefix: Vec<ScaledMat>,
    /// (psi, eps psi') at x = 0 before scaling.
    w0: (Complex64, Complex64),
    /// Scale applied to the propagated start vector, split into a complex
    /// factor and a log offset relative to the total ledger.
    scale: Complex64,
    total_log: f64,
}

pub fn transfer_matrix_solve(
    model: &TransferMatrixModel,
    eps: f64,
) -> Result<TransferMatrixSolution, OracleError> {
    let a0 = model.pieces[0].2;
    let a1 = model.pieces.last().unwrap().2;
    if a1 <= 0.0 {
        return Err(OracleError::TurningValue(1.0, 1.0));
    }
    // Left BC: outgoing wave (a0 > 0) or decaying Robin state (a0 < 0).
    let w0 = if a0 > 0.0 {
        (
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, -a0.sqrt()),
        )
    } else {
        (
            Complex64::new(1.0, 0.0),
            Complex64::new((-a0).sqrt(), 0.0),
        )
    };
    let mut prefix = vec![ScaledMat::identity()];
    for &(xl, xr, a) in &model.pieces {
        let last = *prefix.last().unwrap();
        prefix.push(piece_matrix(a, xr - xl, eps).mul(&last));
    }
    let total = *prefix.last().unwrap();
    let w1 = total.apply(w0);
    let sq1 = a1.sqrt();
    let denom = w1.1 - Complex64::i() * sq1 * w1.0;
    if denom.norm() == 0.0 {
        return Err(OracleError::TurningValue(1.0, a1));
    }
    // psi = scale * e^{log(x) - total_log} * (M(x) w0).
    let scale = Complex64::new(0.0, -2.0 * sq1) / denom;
    Ok(TransferMatrixSolution {
        model: model.clone(),
        eps,
        prefix,
        w0,
        scale,
        total_log: total.log,
    })
}

impl TransferMatrixSolution {
    /// Exact (psi, eps psi') at x in [0, 1].
    pub fn eval(&self, x: f64) -> Result<(Complex64, Complex64), OracleError> {
        let pieces = &self.model.pieces;
        if !(0.0..=1.0).contains(&x) {
            return Err(OracleError::GridMismatch(x));
        }
        let j = pieces
            .iter()
            .position(|&(xl, xr, _)| x < xr || xr == pieces.last().unwrap().1 && x <= xr && x >= xl)
            .unwrap_or(pieces.len() - 1);
        let (xl, _, a) = pieces[j];
        let m = piece_matrix(a, x - xl, self.eps).mul(&self.prefix[j]);
        let w = m.apply(self.w0);
        let factor = self.scale * (m.log - self.total_log).exp();
        Ok((w.0 * factor, w.1 * factor))
    }

    pub fn reflection(&self) -> Complex64 {
        self.eval(1.0).unwrap().0 - 1.0
    }

    /// Outgoing-wave amplitude at x = 0 when the left lead is oscillatory.
    pub fn transmission(&self) -> Option<Complex64> {
        if self.model.pieces[0].2 > 0.0 {
            Some(self.eval(0.0).unwrap().0)
        } else {
            None
        }
    }

    /// max over pieces of |ln det M_piece| (0 for exact Wronskian maps).
    pub fn max_log_det_defect(&self) -> f64 {
        self.model
            .pieces
            .iter()
            .map(|&(xl, xr, a)| piece_matrix(a, xr - xl, self.eps).log_det().abs())
            .fold(0.0, f64::max)
    }
}

impl WaveReference for TransferMatrixSolution {
    fn psi_pair_at(&self, x: f64) -> Option<(Complex64, Complex64)> {
        self.eval(x).ok()
    }
}

/// Self-reference: the same hybrid scheme on a uniform fine grid with mesh
/// parameter 1/n_ref.
pub fn fine_grid_reference(
    field: &CoefficientField,
    layout: &ZoneLayout,
    eps: f64,
    n_ref: usize,
) -> Result<ScatteringSolution, OracleError> {
    if !n_ref.is_power_of_two() || n_ref < (1 << 14) || n_ref > (1 << 22) {
        return Err(OracleError::BadRefResolution(n_ref));
    }
    Ok(solve_uniform(field, layout, eps, 1.0 / n_ref as f64, 1.0)?)
}

/// Pointwise error metrics between a solve and a reference.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub eps: f64,
    pub h: f64,
    pub err_psi_inf: f64,
    pub err_eps_dpsi_inf: f64,
    pub err_psi_l2: f64,
    /// ||psi_h - psi_{2h}||_inf against the next-coarser solve, when the
    /// sweep driver fills it in.
    pub incremental_err: Option<f64>,
}

/// Number of uniform evanescent sample points used by [`compare`].
pub const EV_SAMPLES: usize = 1000;

/// Errors on the coarse solve's oscillatory node set plus a fixed uniform
/// evanescent sample per zone.
pub fn compare(
    sol: &ScatteringSolution,
    reference: &dyn WaveReference,
    ev_samples: usize,
) -> Result<ErrorReport, OracleError> {
    let mut err_psi = 0.0_f64;
    let mut err_dpsi = 0.0_f64;
    let mut sum_sq = 0.0_f64;
    let mut count = 0usize;
    let mut take = |x: f64, p: Complex64, dp: Complex64| -> Result<(), OracleError> {
        let (rp, rdp) = reference
            .psi_pair_at(x)
            .ok_or(OracleError::GridMismatch(x))?;
        let dpsi = (p - rp).norm();
        err_psi = err_psi.max(dpsi);
        err_dpsi = err_dpsi.max((dp - rdp).norm());
        sum_sq += dpsi * dpsi;
        count += 1;
        Ok(())
    };
    for (x, p, dp) in sol.oscillatory_nodes() {
        take(x, p, dp)?;
    }
    for (zone, _) in sol
        .layout
        .zones
        .iter()
        .zip(sol.zones.iter())
        .filter(|(z, _)| z.regime == crate::coefficient::Regime::Evanescent)
    {
        for k in 0..ev_samples {
            let t = k as f64 / (ev_samples - 1) as f64;
            let x = zone.x_left + t * (zone.x_right - zone.x_left);
            if let Some((p, dp)) = sol.eval_evanescent(x) {
                take(x, p, dp)?;
            }
        }
    }
    Ok(ErrorReport {
        eps: sol.eps,
        h: sol.h_max(),
        err_psi_inf: err_psi,
        err_eps_dpsi_inf: err_dpsi,
        err_psi_l2: (sum_sq / count.max(1) as f64).sqrt(),
        incremental_err: None,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SlopeFit {
    pub slope: f64,
    /// RMS residual of the least-squares fit in log space.
    pub residual: f64,
}

/// Least-squares slope of log(err) against log(h).
pub fn slope_fit(data: &[(f64, f64)]) -> Result<SlopeFit, OracleError> {
    if data.len() < 3 {
        return Err(OracleError::DegenerateSlope(format!(
            "need at least 3 points, got {}",
            data.len()
        )));
    }
    if data.iter().any(|&(h, e)| !(h > 0.0) || !(e > 0.0)) {
        return Err(OracleError::DegenerateSlope(
            "nonpositive mesh size or error".into(),
        ));
    }
    let mut hs: Vec<f64> = data.iter().map(|d| d.0).collect();
    hs.sort_by(f64::total_cmp);
    hs.dedup();
    if hs.len() != data.len() {
        return Err(OracleError::DegenerateSlope("duplicate h values".into()));
    }
    let pts: Vec<(f64, f64)> = data.iter().map(|&(h, e)| (h.ln(), e.ln())).collect();
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let intercept = (sy - slope * sx) / n;
    let residual = (pts
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(SlopeFit { slope, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficient::PotentialSegment;
    use crate::decomposition::current;
    use crate::harness::presets;

    #[test]
    fn uniform_piece_is_a_pure_transmitted_wave() {
        let field = CoefficientField::new(
            2.0,
            vec![PotentialSegment::constant(0.0, 1.0, 0.5)],
        )
        .unwrap();
        let model = TransferMatrixModel::from_field(&field).unwrap();
        let eps = 0.05;
        let sol = transfer_matrix_solve(&model, eps).unwrap();
        assert!(sol.reflection().norm() <= 1e-12);
        let k = 1.5_f64.sqrt();
        for x in [0.0, 0.31, 0.9, 1.0] {
            let (p, dp) = sol.eval(x).unwrap();
            let expect = Complex64::from_polar(1.0, -k * (x - 1.0) / eps);
            assert!((p - expect).norm() <= 1e-12, "psi({x})");
            assert!((dp - Complex64::new(0.0, -k) * expect).norm() <= 1e-12);
        }
    }

    #[test]
    fn wronskian_defect_is_tiny_at_resolvable_depth() {
        // The determinant of the shifted evanescent block is e^{-2 theta}; in
        // f64 the subtraction resolves it only for moderate theta, so the
        // defect is checked there (the deep-barrier identities below are
        // covered by the current/flux tests instead).
        for field in [
            presets::two_zone_constant_field(),
            presets::three_zone_constant_field(),
        ] {
            let model = TransferMatrixModel::from_field(&field).unwrap();
            let sol = transfer_matrix_solve(&model, 0.2).unwrap();
            assert!(
                sol.max_log_det_defect() <= 1e-12,
                "defect {:e}",
                sol.max_log_det_defect()
            );
        }
    }

    #[test]
    fn lead_identities() {
        let eps = 1e-2;
        for field in [
            presets::two_zone_constant_field(),
            presets::three_zone_constant_field(),
        ] {
            let model = TransferMatrixModel::from_field(&field).unwrap();
            let sol = transfer_matrix_solve(&model, eps).unwrap();
            let r = sol.reflection();
            match sol.transmission() {
                None => {
                    assert!((r.norm() - 1.0).abs() <= 1e-12, "|r| = {}", r.norm());
                }
                Some(t) => {
                    let (a0, a1) = field.lead_values();
                    let flux = r.norm_sqr() + (a0.sqrt() / a1.sqrt()) * t.norm_sqr();
                    assert!((flux - 1.0).abs() <= 1e-12, "flux = {flux}");
                }
            }
            // Current constancy across pieces.
            let (p1, dp1) = sol.eval(1.0).unwrap();
            let j1 = current(p1, dp1);
            for k in 0..=50 {
                let x = k as f64 / 50.0;
                let (p, dp) = sol.eval(x).unwrap();
                let j = current(p, dp);
                assert!(
                    (j - j1).abs() <= 1e-12 * (1.0 + j1.abs()),
                    "j({x}) = {j} vs {j1}"
                );
            }
        }
    }

    #[test]
    fn rejects_non_constant_fields() {
        let field = presets::example1_field();
        assert!(matches!(
            TransferMatrixModel::from_field(&field),
            Err(OracleError::NotPiecewiseConstant)
        ));
    }

    #[test]
    fn hybrid_agrees_with_transfer_matrix_on_constant_fields() {
        let eps = 1e-2;
        for field in [
            presets::two_zone_constant_field(),
            presets::three_zone_constant_field(),
        ] {
            let layout = ZoneLayout::from_field(&field);
            let sol = solve_uniform(&field, &layout, eps, 1.0 / 1024.0, 1.0).unwrap();
            let model = TransferMatrixModel::from_field(&field).unwrap();
            let exact = transfer_matrix_solve(&model, eps).unwrap();
            let report = compare(&sol, &exact, 500).unwrap();
            assert!(
                report.err_psi_inf <= 1e-8,
                "psi gap {:e}",
                report.err_psi_inf
            );
            assert!(
                report.err_eps_dpsi_inf <= 1e-8,
                "eps psi' gap {:e}",
                report.err_eps_dpsi_inf
            );
        }
    }

    #[test]
    fn fine_reference_matches_oracle_and_validates_inputs() {
        let field = presets::two_zone_constant_field();
        let layout = ZoneLayout::from_field(&field);
        let eps = 1e-2;
        assert!(matches!(
            fine_grid_reference(&field, &layout, eps, 1000),
            Err(OracleError::BadRefResolution(1000))
        ));
        assert!(matches!(
            fine_grid_reference(&field, &layout, eps, 1 << 23),
            Err(OracleError::BadRefResolution(_))
        ));
        let reference = fine_grid_reference(&field, &layout, eps, 1 << 14).unwrap();
        let model = TransferMatrixModel::from_field(&field).unwrap();
        let exact = transfer_matrix_solve(&model, eps).unwrap();
        let report = compare(&reference, &exact, 200).unwrap();
        assert!(report.err_psi_inf <= 1e-8);
    }

    #[test]
    fn compare_detects_scaling_and_reports_zero_on_self() {
        let field = presets::two_zone_constant_field();
        let layout = ZoneLayout::from_field(&field);
        let eps = 1e-2;
        let sol = solve_uniform(&field, &layout, eps, 1.0 / 256.0, 1.0).unwrap();
        let report = compare(&sol, &sol, 200).unwrap();
        assert_eq!(report.err_psi_inf, 0.0);
        assert_eq!(report.err_eps_dpsi_inf, 0.0);
        assert_eq!(report.err_psi_l2, 0.0);

        // A phase-rotated reference must show errors: the injection BC fixes
        // the global phase, so there is no gauge freedom.
        struct Rotated<'a>(&'a ScatteringSolution, Complex64);
        impl WaveReference for Rotated<'_> {
            fn psi_pair_at(&self, x: f64) -> Option<(Complex64, Complex64)> {
                self.0.psi_pair_at(x).map(|(p, dp)| (p * self.1, dp * self.1))
            }
        }
        let rot = Rotated(&sol, Complex64::from_polar(1.0, 0.3));
        let report = compare(&sol, &rot, 200).unwrap();
        assert!(report.err_psi_inf > 0.1);
    }

    #[test]
    fn slope_fit_synthetic_and_degenerate() {
        let lin: Vec<(f64, f64)> = (1..=6).map(|k| {
            let h = 2f64.powi(-k);
            (h, 3.0 * h)
        })
        .collect();
        let fit = slope_fit(&lin).unwrap();
        assert!((fit.slope - 1.0).abs() <= 1e-12);
        assert!(fit.residual <= 1e-12);

        let quad: Vec<(f64, f64)> = (1..=6).map(|k| {
            let h = 2f64.powi(-k);
            (h, 0.7 * h * h)
        })
        .collect();
        let fit = slope_fit(&quad).unwrap();
        assert!((fit.slope - 2.0).abs() <= 1e-12);

        assert!(slope_fit(&[(0.5, 1.0), (0.25, 0.5)]).is_err());
        assert!(slope_fit(&[(0.5, 0.0), (0.25, 0.0), (0.125, 0.0)]).is_err());
        assert!(slope_fit(&[(0.5, 1.0), (0.5, 0.9), (0.25, 0.5)]).is_err());
    }
}

//! Piecewise-polynomial coefficient fields a(x) = E - V(x) and the exact
//! derived quantities both solvers consume: the WKB correction beta, the
//! residual factor r, closed-form phase/action integrals, and the jet of
//! scheme coefficients b0..b3.
//!
//! V is restricted to polynomials of degree <= 2 per segment. That is exactly
//! the class for which every phase integral has a closed-form antiderivative,
//! so no quadrature error enters the solvers.

use crate::jet::Jet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("x = {0} outside the device interval [0, 1]")]
    OutOfDomain(f64),
    #[error("invalid field: {0}")]
    Invalid(String),
    #[error("a(x) vanishes near x = {0}: turning point unsupported")]
    TurningPoint(f64),
    #[error("integration interval [{0}, {1}] crosses a zone interface")]
    CrossesInterface(f64, f64),
    #[error("x = {0} lies in a {1:?} region, expected {2:?}")]
    WrongRegime(f64, Regime, Regime),
    #[error("phase derivative nonpositive at x = {0}: eps too large for this field")]
    Inadmissible(f64),
}

/// Evaluation side at a jump interface. Plain evaluators default to `Right`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegmentKind {
    Constant,
    Linear,
    Quadratic,
}

/// One piece of the potential: V(x) = c0 + c1 x + c2 x^2 on [x_left, x_right).
#[derive(Clone, Copy, Debug)]
pub struct PotentialSegment {
    pub x_left: f64,
    pub x_right: f64,
    pub kind: SegmentKind,
    coeffs: [f64; 3],
}

impl PotentialSegment {
    pub fn constant(x_left: f64, x_right: f64, c0: f64) -> Self {
        Self::new(x_left, x_right, SegmentKind::Constant, [c0, 0.0, 0.0])
    }

    pub fn linear(x_left: f64, x_right: f64, c0: f64, c1: f64) -> Self {
        Self::new(x_left, x_right, SegmentKind::Linear, [c0, c1, 0.0])
    }

    pub fn quadratic(x_left: f64, x_right: f64, c0: f64, c1: f64, c2: f64) -> Self {
        Self::new(x_left, x_right, SegmentKind::Quadratic, [c0, c1, c2])
    }

    fn new(x_left: f64, x_right: f64, kind: SegmentKind, coeffs: [f64; 3]) -> Self {
        assert!(
            x_left < x_right,
            "segment interval [{x_left}, {x_right}) is empty"
        );
        PotentialSegment {
            x_left,
            x_right,
            kind,
            coeffs,
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        match self.kind {
            SegmentKind::Constant => &self.coeffs[..1],
            SegmentKind::Linear => &self.coeffs[..2],
            SegmentKind::Quadratic => &self.coeffs[..3],
        }
    }

    fn v(&self, x: f64) -> f64 {
        self.coeffs[0] + x * (self.coeffs[1] + x * self.coeffs[2])
    }

    fn dv(&self, x: f64) -> f64 {
        self.coeffs[1] + 2.0 * self.coeffs[2] * x
    }

    fn ddv(&self) -> f64 {
        2.0 * self.coeffs[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Oscillatory,
    Evanescent,
}

#[derive(Clone, Copy, Debug)]
pub struct Zone {
    pub x_left: f64,
    pub x_right: f64,
    pub regime: Regime,
}

/// Ordered zones with the jump abscissae separating them.
#[derive(Clone, Debug)]
pub struct ZoneLayout {
    pub zones: Vec<Zone>,
    pub interfaces: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayoutKind {
    /// Evanescent zone on the left, oscillatory zone reaching x = 1.
    TwoZone { x_d: f64 },
    /// Oscillatory leads with an evanescent barrier in between.
    ThreeZone { x_c: f64, x_d: f64 },
    Other,
}

impl ZoneLayout {
    /// Derives the zone structure from the sign of a on each segment.
    /// Adjacent same-sign segments merge into one zone.
    pub fn from_field(field: &CoefficientField) -> ZoneLayout {
        let mut zones: Vec<Zone> = Vec::new();
        let mut interfaces = Vec::new();
        for seg in &field.segments {
            let mid = 0.5 * (seg.x_left + seg.x_right);
            let regime = if field.energy - seg.v(mid) > 0.0 {
                Regime::Oscillatory
            } else {
                Regime::Evanescent
            };
            match zones.last_mut() {
                Some(z) if z.regime == regime => z.x_right = seg.x_right,
                _ => {
                    if let Some(z) = zones.last() {
                        interfaces.push(z.x_right);
                    }
                    zones.push(Zone {
                        x_left: seg.x_left,
                        x_right: seg.x_right,
                        regime,
                    });
                }
            }
        }
        ZoneLayout { zones, interfaces }
    }

    pub fn kind(&self) -> LayoutKind {
        use Regime::*;
        match self.zones.as_slice() {
            [a, b] if a.regime == Evanescent && b.regime == Oscillatory => {
                LayoutKind::TwoZone { x_d: a.x_right }
            }
            [a, b, c]
                if a.regime == Oscillatory
                    && b.regime == Evanescent
                    && c.regime == Oscillatory =>
            {
                LayoutKind::ThreeZone {
                    x_c: a.x_right,
                    x_d: b.x_right,
                }
            }
            _ => LayoutKind::Other,
        }
    }

    pub fn zone_containing(&self, x: f64) -> Option<&Zone> {
        self.zones
            .iter()
            .find(|z| (z.x_left..=z.x_right).contains(&x))
    }
}

/// Evaluation of the scheme coefficients at one point: the WKB correction
/// itself and the recursion values b0..b3 feeding the one-step matrices.
#[derive(Clone, Copy, Debug)]
pub struct BetaJet {
    pub beta: f64,
    pub b: [f64; 4],
}

/// Outcome of checking the solvability hypotheses for a (field, layout, eps)
/// triple. `pass` is true exactly when `violations` is empty.
#[derive(Clone, Debug)]
pub struct HypothesisReport {
    pub tau_ev: Option<f64>,
    pub m_ev: Option<f64>,
    pub tau_os: Option<f64>,
    pub m_os: Option<f64>,
    pub eps1: f64,
    pub pass: bool,
    pub violations: Vec<String>,
}

/// Energy plus the piecewise potential; all evaluators are pure and the
/// struct is immutable after construction, so shared references are safe
/// across threads.
#[derive(Clone, Debug)]
pub struct CoefficientField {
    energy: f64,
    segments: Vec<PotentialSegment>,
}

impl CoefficientField {
    pub fn new(energy: f64, segments: Vec<PotentialSegment>) -> Result<Self, FieldError> {
        if !(energy > 0.0) {
            return Err(FieldError::Invalid(format!(
                "energy must be positive, got {energy}"
            )));
        }
        if segments.is_empty() {
            return Err(FieldError::Invalid("no segments".into()));
        }
        if segments[0].x_left != 0.0 {
            return Err(FieldError::Invalid(format!(
                "first segment starts at {}, expected 0",
                segments[0].x_left
            )));
        }
        for w in segments.windows(2) {
            if w[0].x_right != w[1].x_left {
                return Err(FieldError::Invalid(format!(
                    "gap or overlap between segments at x = {} vs {}",
                    w[0].x_right, w[1].x_left
                )));
            }
        }
        if segments.last().unwrap().x_right != 1.0 {
            return Err(FieldError::Invalid(format!(
                "last segment ends at {}, expected 1",
                segments.last().unwrap().x_right
            )));
        }
        let field = CoefficientField { energy, segments };
        let a1 = field.eval_a_side(1.0, Side::Left)?;
        if !(a1 > 0.0) {
            return Err(FieldError::Invalid(format!(
                "a(1) = {a1} must be positive (injection lead)"
            )));
        }
        Ok(field)
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn segments(&self) -> &[PotentialSegment] {
        &self.segments
    }

    /// Constant coefficient values in the left and right leads.
    pub fn lead_values(&self) -> (f64, f64) {
        let a0 = self.energy - self.segments[0].v(0.0);
        let last = self.segments.last().unwrap();
        (a0, self.energy - last.v(1.0))
    }

    fn segment_index(&self, x: f64, side: Side) -> Result<usize, FieldError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(FieldError::OutOfDomain(x));
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if x < seg.x_right || (i + 1 == self.segments.len() && x <= seg.x_right) {
                // At an interior left boundary the Left side belongs to the
                // previous segment.
                if x == seg.x_left && side == Side::Left && i > 0 {
                    return Ok(i - 1);
                }
                return Ok(i);
            }
        }
        Err(FieldError::OutOfDomain(x))
    }

    pub fn eval_v_side(&self, x: f64, side: Side) -> Result<f64, FieldError> {
        Ok(self.segments[self.segment_index(x, side)?].v(x))
    }

    pub fn eval_a(&self, x: f64) -> Result<f64, FieldError> {
        self.eval_a_side(x, Side::Right)
    }

    pub fn eval_a_side(&self, x: f64, side: Side) -> Result<f64, FieldError> {
        Ok(self.energy - self.segments[self.segment_index(x, side)?].v(x))
    }

    pub fn eval_da_side(&self, x: f64, side: Side) -> Result<f64, FieldError> {
        Ok(-self.segments[self.segment_index(x, side)?].dv(x))
    }

    pub fn eval_dda_side(&self, x: f64, side: Side) -> Result<f64, FieldError> {
        Ok(-self.segments[self.segment_index(x, side)?].ddv())
    }

    /// Jet of a at x (exact: a is a polynomial on the segment).
    fn a_jet(&self, x: f64, side: Side) -> Result<Jet, FieldError> {
        let seg = &self.segments[self.segment_index(x, side)?];
        let c = seg.coeffs;
        Ok(Jet::quadratic(
            self.energy - c[0],
            -c[1],
            -c[2],
            x,
        ))
    }

    /// WKB correction beta = -(1/(2|a|^{1/4})) (|a|^{-1/4})'' in closed form.
    pub fn eval_beta(&self, x: f64, side: Side) -> Result<f64, FieldError> {
        let aj = self.a_jet(x, side)?;
        let a = aj.value();
        if a == 0.0 {
            return Err(FieldError::TurningPoint(x));
        }
        let u = aj.scale(a.signum());
        Ok(beta_of_abs_jet(&u).value())
    }

    /// Residual factor r = (5/16) V'^2/(V-E)^2 + (1/4) V''/(E-V) of the
    /// evanescent basis equation.
    pub fn eval_r(&self, x: f64, side: Side) -> Result<f64, FieldError> {
        let idx = self.segment_index(x, side)?;
        let seg = &self.segments[idx];
        let a = self.energy - seg.v(x);
        if a >= 0.0 {
            return Err(FieldError::WrongRegime(
                x,
                Regime::Oscillatory,
                Regime::Evanescent,
            ));
        }
        let dv = seg.dv(x);
        let ddv = seg.ddv();
        let d = seg.v(x) - self.energy;
        Ok(5.0 / 16.0 * dv * dv / (d * d) + 0.25 * ddv / a)
    }

    /// Scheme coefficients at an oscillatory point: beta plus the recursion
    /// b0 = beta/(2(sqrt a - eps^2 beta)), b_{k+1} = b_k' / (2 phi').
    pub fn beta_jet(&self, eps: f64, x: f64, side: Side) -> Result<BetaJet, FieldError> {
        let aj = self.a_jet(x, side)?;
        if aj.value() <= 0.0 {
            return Err(FieldError::WrongRegime(
                x,
                Regime::Evanescent,
                Regime::Oscillatory,
            ));
        }
        let beta = beta_of_abs_jet(&aj);
        let dphi = aj.sqrt() - beta.scale(eps * eps);
        if dphi.value() <= 0.0 {
            return Err(FieldError::Inadmissible(x));
        }
        let two_dphi = dphi.scale(2.0);
        let b0 = beta.div(&two_dphi);
        let b1 = b0.shift().div(&two_dphi);
        let b2 = b1.shift().div(&two_dphi);
        let b3 = b2.shift().div(&two_dphi);
        Ok(BetaJet {
            beta: beta.value(),
            b: [b0.value(), b1.value(), b2.value(), b3.value()],
        })
    }

    /// Splits [x0, x1] (ordered) at segment boundaries. Each piece is
    /// (segment index, left, right).
    fn pieces(&self, x0: f64, x1: f64) -> Result<Vec<(usize, f64, f64)>, FieldError> {
        if !(0.0..=1.0).contains(&x0) {
            return Err(FieldError::OutOfDomain(x0));
        }
        if !(0.0..=1.0).contains(&x1) {
            return Err(FieldError::OutOfDomain(x1));
        }
        let mut out = Vec::new();
        let mut left = x0;
        while left < x1 {
            let idx = self.segment_index(left, Side::Right)?;
            let seg = &self.segments[idx];
            let right = seg.x_right.min(x1);
            out.push((idx, left, right));
            left = right;
        }
        Ok(out)
    }

    /// Exact sign of a on [p0, p1] inside one segment; errors on an interior
    /// zero (turning point).
    fn piece_sign(&self, idx: usize, p0: f64, p1: f64) -> Result<f64, FieldError> {
        let seg = &self.segments[idx];
        let mid = 0.5 * (p0 + p1);
        let a_mid = self.energy - seg.v(mid);
        let a0 = self.energy - seg.v(p0);
        let a1 = self.energy - seg.v(p1);
        let sign = if a_mid != 0.0 {
            a_mid.signum()
        } else {
            return Err(FieldError::TurningPoint(mid));
        };
        for (x, a) in [(p0, a0), (p1, a1)] {
            if a * sign < 0.0 {
                return Err(FieldError::TurningPoint(x));
            }
        }
        // Interior vertex of the quadratic may still dip through zero.
        let c2 = -seg.coeffs[2];
        if c2 != 0.0 {
            let xv = -(-seg.coeffs[1]) / (2.0 * c2);
            if p0 < xv && xv < p1 {
                let av = self.energy - seg.v(xv);
                if av * sign < 0.0 || av == 0.0 {
                    return Err(FieldError::TurningPoint(xv));
                }
            }
        }
        Ok(sign)
    }

    /// integral of sqrt(|a|) over [x0, x1]; requires one sign of a throughout.
    pub fn sqrt_abs_a_integral(&self, x0: f64, x1: f64) -> Result<f64, FieldError> {
        if x0 > x1 {
            return Ok(-self.sqrt_abs_a_integral(x1, x0)?);
        }
        let pieces = self.pieces(x0, x1)?;
        let mut sign = None;
        let mut total = 0.0;
        for (idx, p0, p1) in pieces {
            let s = self.piece_sign(idx, p0, p1)?;
            if *sign.get_or_insert(s) != s {
                return Err(FieldError::CrossesInterface(x0, x1));
            }
            total += sqrt_poly_integral(self.abs_a_coeffs(idx, s), p0, p1);
        }
        Ok(total)
    }

    /// integral of beta over [x0, x1]; requires one sign of a throughout.
    pub fn beta_integral(&self, x0: f64, x1: f64) -> Result<f64, FieldError> {
        if x0 > x1 {
            return Ok(-self.beta_integral(x1, x0)?);
        }
        let pieces = self.pieces(x0, x1)?;
        let mut sign = None;
        let mut total = 0.0;
        for (idx, p0, p1) in pieces {
            let s = self.piece_sign(idx, p0, p1)?;
            if *sign.get_or_insert(s) != s {
                return Err(FieldError::CrossesInterface(x0, x1));
            }
            total += beta_poly_integral(self.abs_a_coeffs(idx, s), p0, p1);
        }
        Ok(total)
    }

    /// Phase increment over [x0, x1], exact for the supported segment kinds.
    ///
    /// In an oscillatory region this is the marching phase
    /// integral of (sqrt(a) - eps^2 beta); in an evanescent region it is the
    /// decay action (1/eps) integral of sqrt(|a|) entering the sinh basis.
    pub fn phase_integral(&self, eps: f64, x0: f64, x1: f64) -> Result<f64, FieldError> {
        if x0 > x1 {
            return Ok(-self.phase_integral(eps, x1, x0)?);
        }
        if x0 == x1 {
            return Ok(0.0);
        }
        let mid = 0.5 * (x0 + x1);
        let a_mid = self.eval_a(mid)?;
        if a_mid == 0.0 {
            return Err(FieldError::TurningPoint(mid));
        }
        if a_mid > 0.0 {
            Ok(self.sqrt_abs_a_integral(x0, x1)? - eps * eps * self.beta_integral(x0, x1)?)
        } else {
            Ok(self.sqrt_abs_a_integral(x0, x1)? / eps)
        }
    }

    /// Coefficients of |a| = sign * (E - V) on segment `idx` in monomial form.
    fn abs_a_coeffs(&self, idx: usize, sign: f64) -> [f64; 3] {
        let c = self.segments[idx].coeffs;
        [
            sign * (self.energy - c[0]),
            sign * -c[1],
            sign * -c[2],
        ]
    }

    /// Checks the solvability hypotheses: sign-definite zones matching their
    /// declared regime, no turning points, eps below the admissibility
    /// threshold eps1 = min(1, min a^{1/4} beta_+^{-1/2}).
    pub fn validate(&self, layout: &ZoneLayout, eps: f64) -> HypothesisReport {
        let mut violations: Vec<String> = Vec::new();
        let mut tau_ev: Option<f64> = None;
        let mut m_ev: Option<f64> = None;
        let mut tau_os: Option<f64> = None;
        let mut m_os: Option<f64> = None;

        if layout.zones.is_empty()
            || layout.zones.first().map(|z| z.x_left) != Some(0.0)
            || layout.zones.last().map(|z| z.x_right) != Some(1.0)
        {
            violations.push("layout does not cover [0, 1]".into());
        }
        for w in layout.zones.windows(2) {
            if w[0].x_right != w[1].x_left {
                violations.push(format!(
                    "zones not contiguous at x = {} vs {}",
                    w[0].x_right, w[1].x_left
                ));
            }
            if w[0].regime == w[1].regime {
                violations.push(format!(
                    "adjacent zones share regime {:?} at x = {}",
                    w[0].regime, w[0].x_right
                ));
            }
        }

        for zone in &layout.zones {
            let segs: Vec<usize> = (0..self.segments.len())
                .filter(|&i| {
                    self.segments[i].x_left >= zone.x_left - 1e-15
                        && self.segments[i].x_right <= zone.x_right + 1e-15
                })
                .collect();
            if segs.len() != 1 {
                violations.push(format!(
                    "zone [{}, {}] spans {} potential segments; zones must \
                     coincide with single smooth segments",
                    zone.x_left,
                    zone.x_right,
                    segs.len()
                ));
            }
            let (amin, amax) = self.extremize_a(zone.x_left, zone.x_right);
            match zone.regime {
                Regime::Oscillatory => {
                    if amin <= 0.0 {
                        violations.push(format!(
                            "oscillatory zone [{}, {}] has min a = {amin} <= 0 \
                             (turning point or wrong regime)",
                            zone.x_left, zone.x_right
                        ));
                    } else {
                        tau_os = Some(tau_os.map_or(amin, |t: f64| t.min(amin)));
                        m_os = Some(m_os.map_or(amax, |m: f64| m.max(amax)));
                    }
                }
                Regime::Evanescent => {
                    if amax >= 0.0 {
                        violations.push(format!(
                            "evanescent zone [{}, {}] has max a = {amax} >= 0 \
                             (turning point or wrong regime)",
                            zone.x_left, zone.x_right
                        ));
                    } else {
                        tau_ev = Some(tau_ev.map_or(-amax, |t: f64| t.min(-amax)));
                        m_ev = Some(m_ev.map_or(-amin, |m: f64| m.max(-amin)));
                    }
                }
            }
        }

        let eps1 = self.eps1(layout);
        if !(eps > 0.0) {
            violations.push(format!("eps = {eps} must be positive"));
        } else if eps >= eps1 {
            violations.push(format!(
                "eps = {eps} is not admissible: eps1 = {eps1}"
            ));
        }

        let pass = violations.is_empty();
        HypothesisReport {
            tau_ev,
            m_ev,
            tau_os,
            m_os,
            eps1,
            pass,
            violations,
        }
    }

    /// Exact range of a over [xl, xr] (segment polynomials extremize in
    /// closed form: endpoints plus interior vertices).
    fn extremize_a(&self, xl: f64, xr: f64) -> (f64, f64) {
        let mut amin = f64::INFINITY;
        let mut amax = f64::NEG_INFINITY;
        let mut consider = |a: f64| {
            amin = amin.min(a);
            amax = amax.max(a);
        };
        for (i, seg) in self.segments.iter().enumerate() {
            let lo = seg.x_left.max(xl);
            let hi = seg.x_right.min(xr);
            if lo >= hi {
                continue;
            }
            consider(self.energy - seg.v(lo));
            consider(self.energy - seg.v(hi));
            let _ = i;
            if seg.coeffs[2] != 0.0 {
                let xv = -seg.coeffs[1] / (2.0 * seg.coeffs[2]);
                if lo < xv && xv < hi {
                    consider(self.energy - seg.v(xv));
                }
            }
        }
        (amin, amax)
    }

    /// Admissibility threshold eps1 over the oscillatory zones, by dense
    /// sampling (1000 points per segment) with local golden-section
    /// refinement; infinite where beta <= 0.
    fn eps1(&self, layout: &ZoneLayout) -> f64 {
        let mut best = f64::INFINITY;
        let g = |x: f64, side: Side| -> f64 {
            let a = match self.eval_a_side(x, side) {
                Ok(a) if a > 0.0 => a,
                _ => return f64::INFINITY,
            };
            match self.eval_beta(x, side) {
                Ok(b) if b > 0.0 => a.powf(0.25) / b.sqrt(),
                _ => f64::INFINITY,
            }
        };
        for zone in &layout.zones {
            if zone.regime != Regime::Oscillatory {
                continue;
            }
            let n = 1000;
            let w = (zone.x_right - zone.x_left) / n as f64;
            let mut best_x = zone.x_left;
            let mut best_g = f64::INFINITY;
            for k in 0..=n {
                let x = if k == n {
                    zone.x_right
                } else {
                    zone.x_left + k as f64 * w
                };
                let side = if k == n { Side::Left } else { Side::Right };
                let v = g(x, side);
                if v < best_g {
                    best_g = v;
                    best_x = x;
                }
            }
            if best_g.is_finite() {
                // Golden-section refinement in the bracketing neighborhood.
                let mut lo = (best_x - w).max(zone.x_left);
                let mut hi = (best_x + w).min(zone.x_right);
                let phi = 0.5 * (3.0 - 5.0_f64.sqrt());
                for _ in 0..80 {
                    let m1 = lo + phi * (hi - lo);
                    let m2 = hi - phi * (hi - lo);
                    if g(m1, Side::Right) < g(m2, Side::Right) {
                        hi = m2;
                    } else {
                        lo = m1;
                    }
                }
                let x = 0.5 * (lo + hi);
                best = best.min(best_g.min(g(x, Side::Right)));
            }
        }
        best.min(1.0)
    }
}

/// beta as a jet, given the jet of u = |a| > 0:
/// beta = (1/8) u''/u^{3/2} - (5/32) u'^2/u^{5/2}.
pub(crate) fn beta_of_abs_jet(u: &Jet) -> Jet {
    let du = u.shift();
    let ddu = du.shift();
    let sq = u.sqrt();
    let u32 = (*u) * sq;
    let u52 = (*u) * u32;
    ddu.div(&u32).scale(1.0 / 8.0) - (du * du).div(&u52).scale(5.0 / 32.0)
}

/// integral of sqrt(u) over [x0, x1] for u = U0 + U1 x + U2 x^2 > 0 there.
fn sqrt_poly_integral(u: [f64; 3], x0: f64, x1: f64) -> f64 {
    let [u0, u1, u2] = u;
    if u2 == 0.0 {
        if u1 == 0.0 {
            return u0.sqrt() * (x1 - x0);
        }
        let f = |x: f64| {
            let v = u0 + u1 * x;
            2.0 / (3.0 * u1) * v * v.sqrt()
        };
        return f(x1) - f(x0);
    }
    let a = u2;
    let shift = u1 / (2.0 * u2);
    let k = u0 - u1 * u1 / (4.0 * u2);
    let t0 = x0 + shift;
    let t1 = x1 + shift;
    if a > 0.0 {
        if k == 0.0 {
            let f = |t: f64| 0.5 * a.sqrt() * t * t.abs();
            return f(t1) - f(t0);
        }
        let sa = a.sqrt();
        let f = |t: f64| {
            let uu = (a * t * t + k).max(0.0);
            let su = uu.sqrt();
            // For t < 0 the direct log argument cancels; rewrite via
            // (sqrt(u) - sa|t|)(sqrt(u) + sa|t|) = k.
            let l = if t >= 0.0 {
                (sa * t + su).ln()
            } else {
                k.abs().ln() - (su - sa * t).ln()
            };
            0.5 * t * su + k / (2.0 * sa) * l
        };
        f(t1) - f(t0)
    } else {
        let sa = (-a).sqrt();
        let f = |t: f64| {
            let uu = (a * t * t + k).max(0.0);
            let arg = (t * sa / k.sqrt()).clamp(-1.0, 1.0);
            0.5 * t * uu.sqrt() + k / (2.0 * sa) * arg.asin()
        };
        f(t1) - f(t0)
    }
}

/// integral of beta over [x0, x1] for u = |a| = U0 + U1 x + U2 x^2 > 0 there.
fn beta_poly_integral(u: [f64; 3], x0: f64, x1: f64) -> f64 {
    let [u0, u1, u2] = u;
    if u2 == 0.0 {
        if u1 == 0.0 {
            return 0.0;
        }
        let f = |x: f64| {
            let v = u0 + u1 * x;
            5.0 / 48.0 * u1 / (v * v.sqrt())
        };
        return f(x1) - f(x0);
    }
    let a = u2;
    let shift = u1 / (2.0 * u2);
    let k = u0 - u1 * u1 / (4.0 * u2);
    let t0 = x0 + shift;
    let t1 = x1 + shift;
    if a > 0.0 && k == 0.0 {
        let f = |t: f64| 3.0 / (16.0 * a.sqrt()) * t.signum() / (t * t);
        return f(t1) - f(t0);
    }
    if a < 0.0 {
        // k >= u > 0 on the piece, so the raw antiderivative is well
        // conditioned.
        let f = |t: f64| {
            let uu = a * t * t + k;
            let su = uu.sqrt();
            0.25 * a * t / (uu * su) + a * a / (24.0 * k) * t * t * t / (uu * su)
        };
        return f(t1) - f(t0);
    }
    // a > 0, k != 0: constant-subtracted antiderivative, stable as k -> 0.
    // Valid on a fixed sign of t; split at the vertex when it lies inside.
    let sa = a.sqrt();
    let f = |t: f64, sgn: f64| {
        let uu = a * t * t + k;
        let su = uu.sqrt();
        let p = sa * t.abs();
        let raw = 0.25 * a * t / (uu * su);
        let corr = sa * sgn / 24.0 * (p * p + p * su + uu) / ((p + su) * uu * su);
        raw - corr
    };
    if t0 >= 0.0 {
        f(t1, 1.0) - f(t0, 1.0)
    } else if t1 <= 0.0 {
        f(t1, -1.0) - f(t0, -1.0)
    } else {
        (f(0.0, -1.0) - f(t0, -1.0)) + (f(t1, 1.0) - f(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// E = 1.5, piecewise quadratic a(x) = +-c1 (x + c2)^2 with the barrier
    /// on (0.5, 0.53125).
    fn quadratic_field() -> CoefficientField {
        let e = 1.5_f64;
        let v1 = 0.2;
        let c2 = -(e + (e * e - v1 * e).sqrt()) / v1;
        let c1 = e / (c2 * c2);
        let xc = 0.5;
        let xd = 0.53125;
        let seg = |xl: f64, xr: f64, sign: f64| {
            // V = E - sign*c1 (x + c2)^2
            PotentialSegment::quadratic(
                xl,
                xr,
                e - sign * c1 * c2 * c2,
                -sign * 2.0 * c1 * c2,
                -sign * c1,
            )
        };
        CoefficientField::new(
            e,
            vec![seg(0.0, xc, 1.0), seg(xc, xd, -1.0), seg(xd, 1.0, 1.0)],
        )
        .unwrap()
    }

    /// E = 1.5, piecewise linear three-zone barrier field.
    fn linear_field() -> CoefficientField {
        let xc = 0.5;
        let xd = 0.53125;
        CoefficientField::new(
            1.5,
            vec![
                PotentialSegment::linear(0.0, xc, 0.0, 0.2),
                PotentialSegment::linear(xc, xd, 4.5, -3.2),
                PotentialSegment::linear(xd, 1.0, 0.15 - (1.6 / 15.0) * xd, 1.6 / 15.0),
            ],
        )
        .unwrap()
    }

    /// a(x) = (x + 1/2)^2 on [0, 1] via E = 1, V = 0.75 - x - x^2.
    fn shifted_square_field() -> CoefficientField {
        CoefficientField::new(
            1.0,
            vec![PotentialSegment::quadratic(0.0, 1.0, 0.75, -1.0, -1.0)],
        )
        .unwrap()
    }

    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                left + right + delta / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
            }
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 48)
    }

    #[test]
    fn eval_a_examples() {
        // Quadratic field at the right lead: a(1) = E - V(1) = 1.5 - 0.2.
        let f = quadratic_field();
        assert!((f.eval_a(1.0).unwrap() - 1.3).abs() < 1e-12);
        // V = 0, E = 1.
        let free = CoefficientField::new(1.0, vec![PotentialSegment::constant(0.0, 1.0, 0.0)])
            .unwrap();
        assert_eq!(free.eval_a(0.37).unwrap(), 1.0);
        // a = (x + 1/2)^2 at x = 0.5.
        let sq = shifted_square_field();
        assert!((sq.eval_a(0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!(matches!(
            sq.eval_a(1.5),
            Err(FieldError::OutOfDomain(_))
        ));
    }

    #[test]
    fn eval_beta_closed_forms() {
        let free = CoefficientField::new(2.0, vec![PotentialSegment::constant(0.0, 1.0, 0.5)])
            .unwrap();
        assert_eq!(free.eval_beta(0.3, Side::Right).unwrap(), 0.0);
        // a = (x+1/2)^2 at 0.5: -3/8.
        let sq = shifted_square_field();
        assert!((sq.eval_beta(0.5, Side::Right).unwrap() + 0.375).abs() < 1e-13);
        // a = 1 + x at 0: -5/32.
        let lin = CoefficientField::new(2.0, vec![PotentialSegment::linear(0.0, 1.0, 1.0, -1.0)])
            .unwrap();
        assert!((lin.eval_beta(0.0, Side::Right).unwrap() + 5.0 / 32.0).abs() < 1e-13);
    }

    #[test]
    fn beta_matches_finite_differences_of_quartic_root() {
        // beta = -(1/(2|a|^{1/4})) (|a|^{-1/4})'' at 1000 random interior
        // points of both example fields.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for field in [linear_field(), quadratic_field()] {
            for _ in 0..500 {
                let x = loop {
                    let x: f64 = rng.gen_range(0.001..0.999);
                    // stay a couple of FD steps away from the interfaces
                    if (x - 0.5).abs() > 5e-4 && (x - 0.53125).abs() > 5e-4 {
                        break x;
                    }
                };
                let h = 1e-4;
                let g = |y: f64| field.eval_a(y).unwrap().abs().powf(-0.25);
                let ddg = (g(x - h) - 2.0 * g(x) + g(x + h)) / (h * h);
                let beta_fd = -ddg / (2.0 * field.eval_a(x).unwrap().abs().powf(0.25));
                let beta = field.eval_beta(x, Side::Right).unwrap();
                assert!(
                    (beta - beta_fd).abs() <= 1e-6 * (1.0 + beta_fd.abs()),
                    "x = {x}: beta {beta} vs fd {beta_fd}"
                );
            }
        }
    }

    #[test]
    fn eval_r_cases() {
        // Constant barrier: r = 0.
        let cst = CoefficientField::new(
            1.0,
            vec![
                PotentialSegment::constant(0.0, 0.5, 2.0),
                PotentialSegment::constant(0.5, 1.0, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(cst.eval_r(0.25, Side::Right).unwrap(), 0.0);
        assert!(matches!(
            cst.eval_r(0.75, Side::Right),
            Err(FieldError::WrongRegime(..))
        ));
        // Linear barrier: r = (5/16) s^2 / d^2.
        let lin = linear_field();
        let x = 0.51;
        let s = -3.2_f64;
        let d = lin.eval_v_side(x, Side::Right).unwrap() - lin.energy();
        let expect = 5.0 / 16.0 * s * s / (d * d);
        assert!((lin.eval_r(x, Side::Right).unwrap() - expect).abs() < 1e-12 * expect.abs());
        // Quadratic barrier at 0.51 against a finite-difference oracle on V.
        let q = quadratic_field();
        let h = 1e-3;
        let v = |y: f64| q.eval_v_side(y, Side::Right).unwrap();
        let dv = (v(x + h) - v(x - h)) / (2.0 * h);
        let ddv = (v(x + h) - 2.0 * v(x) + v(x - h)) / (h * h);
        let e = q.energy();
        let r_fd = 5.0 / 16.0 * dv * dv / ((v(x) - e) * (v(x) - e)) + 0.25 * ddv / (e - v(x));
        let r = q.eval_r(x, Side::Right).unwrap();
        assert!((r - r_fd).abs() <= 1e-8 * (1.0 + r_fd.abs()), "{r} vs {r_fd}");
    }

    #[test]
    fn r_is_minus_two_sqrt_abs_a_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for field in [linear_field(), quadratic_field()] {
            for _ in 0..200 {
                let x: f64 = rng.gen_range(0.501..0.531);
                let r = field.eval_r(x, Side::Right).unwrap();
                let beta = field.eval_beta(x, Side::Right).unwrap();
                let a = field.eval_a(x).unwrap();
                let identity = -2.0 * a.abs().sqrt() * beta;
                assert!((r - identity).abs() <= 1e-12 * (1.0 + r.abs()));
            }
        }
    }

    #[test]
    fn phase_closed_forms() {
        let free = CoefficientField::new(1.0, vec![PotentialSegment::constant(0.0, 1.0, 0.0)])
            .unwrap();
        assert!((free.phase_integral(0.3, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        // a = (x+1/2)^2: integral sqrt(a) = 1, integral beta = -2/3.
        let sq = shifted_square_field();
        for eps in [0.1, 0.01] {
            let phi = sq.phase_integral(eps, 0.0, 1.0).unwrap();
            let expect = 1.0 + 2.0 / 3.0 * eps * eps;
            assert!((phi - expect).abs() < 1e-14, "eps {eps}: {phi} vs {expect}");
        }
        // Evanescent action: |a| = 1, cell [0, 0.25], eps = 0.5 -> 0.5.
        let ev = CoefficientField::new(
            1.0,
            vec![
                PotentialSegment::constant(0.0, 0.5, 2.0),
                PotentialSegment::constant(0.5, 1.0, 0.0),
            ],
        )
        .unwrap();
        assert!((ev.phase_integral(0.5, 0.0, 0.25).unwrap() - 0.5).abs() < 1e-15);
        // Interval straddling the sign change is rejected.
        assert!(matches!(
            ev.sqrt_abs_a_integral(0.25, 0.75),
            Err(FieldError::CrossesInterface(..))
        ));
    }

    #[test]
    fn phase_is_additive_on_random_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let fields = [linear_field(), quadratic_field(), shifted_square_field()];
        for field in &fields {
            for _ in 0..300 {
                let (lo, hi) = match rng.gen_range(0..3) {
                    0 => (0.0, 0.5),
                    1 => (0.5, 0.53125),
                    _ => (0.53125, 1.0),
                };
                let (lo, hi) = if field.eval_a(0.6).unwrap() > 2.0 {
                    (0.0, 1.0) // single-zone field
                } else {
                    (lo, hi)
                };
                let mut xs: Vec<f64> = (0..3).map(|_| rng.gen_range(lo..hi)).collect();
                xs.sort_by(f64::total_cmp);
                let eps = 0.05;
                let whole = field.phase_integral(eps, xs[0], xs[2]).unwrap();
                let split = field.phase_integral(eps, xs[0], xs[1]).unwrap()
                    + field.phase_integral(eps, xs[1], xs[2]).unwrap();
                assert!(
                    (whole - split).abs() <= 1e-14 * (1.0 + whole.abs()),
                    "{whole} vs {split}"
                );
            }
        }
    }

    #[test]
    fn phase_matches_adaptive_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let eps = 0.05;
        for field in [linear_field(), quadratic_field()] {
            for &(lo, hi) in &[(0.0, 0.5), (0.5, 0.53125), (0.53125, 1.0)] {
                for _ in 0..20 {
                    let mut a = rng.gen_range(lo..hi);
                    let mut b = rng.gen_range(lo..hi);
                    if a > b {
                        std::mem::swap(&mut a, &mut b);
                    }
                    let exact = field.phase_integral(eps, a, b).unwrap();
                    let osc = field.eval_a(0.5 * (a + b)).unwrap() > 0.0;
                    let f = |y: f64| {
                        let av = field.eval_a(y).unwrap();
                        if osc {
                            av.sqrt() - eps * eps * field.eval_beta(y, Side::Right).unwrap()
                        } else {
                            av.abs().sqrt() / eps
                        }
                    };
                    let quad = adaptive_simpson(&f, a, b, 1e-13);
                    assert!(
                        (exact - quad).abs() <= 1e-10 * (1.0 + exact.abs()),
                        "[{a}, {b}]: exact {exact} vs quadrature {quad}"
                    );
                }
            }
        }
    }

    #[test]
    fn beta_jet_closed_forms_and_fd() {
        let free = CoefficientField::new(1.0, vec![PotentialSegment::constant(0.0, 1.0, 0.0)])
            .unwrap();
        let bj = free.beta_jet(0.1, 0.5, Side::Right).unwrap();
        assert_eq!(bj.beta, 0.0);
        assert_eq!(bj.b, [0.0; 4]);

        // a = (x+1/2)^2 at 0.5, eps = 0: b0 = beta/(2 sqrt a) = -3/16.
        let sq = shifted_square_field();
        let bj0 = sq.beta_jet(0.0, 0.5, Side::Right).unwrap();
        assert!((bj0.b[0] + 3.0 / 16.0).abs() < 1e-13);

        // eps = 0.01: successive coefficients against finite differences of
        // the previous level.
        let eps = 0.01;
        let x = 0.5;
        let h = 1e-4;
        let level = |y: f64, k: usize| sq.beta_jet(eps, y, Side::Right).unwrap().b[k];
        let dphi = |y: f64| {
            sq.eval_a(y).unwrap().sqrt() - eps * eps * sq.eval_beta(y, Side::Right).unwrap()
        };
        for k in 0..3 {
            let d_fd = (level(x + h, k) - level(x - h, k)) / (2.0 * h);
            let next_fd = d_fd / (2.0 * dphi(x));
            let next = level(x, k + 1);
            assert!(
                (next - next_fd).abs() <= 1e-6 * (1.0 + next_fd.abs()),
                "level {k}: {next} vs fd {next_fd}"
            );
        }
        // b0 also against its closed-form composition.
        let beta = sq.eval_beta(x, Side::Right).unwrap();
        let b0_direct = beta / (2.0 * (sq.eval_a(x).unwrap().sqrt() - eps * eps * beta));
        assert!((level(x, 0) - b0_direct).abs() < 1e-14);
    }

    #[test]
    fn validate_reports() {
        // Free oscillatory field: passes with eps1 = 1 (beta_+ = 0).
        let free = CoefficientField::new(1.0, vec![PotentialSegment::constant(0.0, 1.0, 0.0)])
            .unwrap();
        let layout = ZoneLayout::from_field(&free);
        let rep = free.validate(&layout, 0.5);
        assert!(rep.pass, "{:?}", rep.violations);
        assert_eq!(rep.eps1, 1.0);

        // Turning point inside a segment fails.
        let turning = CoefficientField::new(
            1.0,
            vec![
                PotentialSegment::linear(0.0, 0.5, 0.0, 4.0), // a = 1 - 4x crosses 0
                PotentialSegment::constant(0.5, 1.0, 0.0),
            ],
        )
        .unwrap();
        let layout = ZoneLayout::from_field(&turning);
        let rep = turning.validate(&layout, 0.01);
        assert!(!rep.pass);
        assert!(rep.violations.iter().any(|v| v.contains("turning")));

        // Example-2 style quadratic field passes at eps = 1e-2; the derived
        // constants match the closed-form expressions.
        let e = 1.5_f64;
        let v1 = 0.2;
        let c2 = -(e + (e * e - v1 * e).sqrt()) / v1;
        let c1 = e / (c2 * c2);
        assert!((c2 + 14.4821).abs() < 1e-3, "c2 = {c2}");
        assert!((c1 - 7.1520e-3).abs() < 1e-6, "c1 = {c1}");
        let q = quadratic_field();
        let layout = ZoneLayout::from_field(&q);
        assert_eq!(
            layout.kind(),
            LayoutKind::ThreeZone {
                x_c: 0.5,
                x_d: 0.53125
            }
        );
        let rep = q.validate(&layout, 1e-2);
        assert!(rep.pass, "{:?}", rep.violations);
        assert!(rep.tau_ev.unwrap() > 0.0 && rep.tau_os.unwrap() > 0.0);
        assert!(rep.m_ev.unwrap() >= rep.tau_ev.unwrap());

        // Passing validation implies the declared sign on sampled points.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for zone in &layout.zones {
            for _ in 0..1000 {
                let x = rng.gen_range(zone.x_left..zone.x_right);
                let a = q.eval_a(x).unwrap();
                match zone.regime {
                    Regime::Oscillatory => assert!(a > 0.0),
                    Regime::Evanescent => assert!(a < 0.0),
                }
            }
        }
    }

    #[test]
    fn layout_kinds() {
        let two = CoefficientField::new(
            1.0,
            vec![
                PotentialSegment::constant(0.0, 0.5, 1.5),
                PotentialSegment::constant(0.5, 1.0, 0.5),
            ],
        )
        .unwrap();
        assert_eq!(
            ZoneLayout::from_field(&two).kind(),
            LayoutKind::TwoZone { x_d: 0.5 }
        );
        let lin = linear_field();
        let layout = ZoneLayout::from_field(&lin);
        assert_eq!(layout.interfaces, vec![0.5, 0.53125]);
    }
}

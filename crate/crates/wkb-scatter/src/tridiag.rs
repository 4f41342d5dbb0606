//! Complex tridiagonal direct solver (LU with partial pivoting, one step of
//! iterative refinement) and a 2-norm condition estimator.

use num_complex::Complex64;

/// Tridiagonal matrix in band storage: dl (sub), d (main), du (super).
#[derive(Clone, Debug)]
pub(crate) struct Tridiag {
    pub dl: Vec<Complex64>,
    pub d: Vec<Complex64>,
    pub du: Vec<Complex64>,
}

impl Tridiag {
    pub fn n(&self) -> usize {
        self.d.len()
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n();
        let mut y = vec![Complex64::default(); n];
        for i in 0..n {
            let mut acc = self.d[i] * x[i];
            if i > 0 {
                acc += self.dl[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.du[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    /// Conjugate transpose (sub and super diagonals swap).
    pub fn adjoint(&self) -> Tridiag {
        Tridiag {
            dl: self.du.iter().map(|z| z.conj()).collect(),
            d: self.d.iter().map(|z| z.conj()).collect(),
            du: self.dl.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn factor(&self) -> Result<TridiagLu, f64> {
        let n = self.n();
        let mut d = self.d.clone();
        let mut dl = self.dl.clone();
        let mut du = self.du.clone();
        let mut du2 = vec![Complex64::default(); n.saturating_sub(2)];
        let mut piv = vec![false; n.saturating_sub(1)];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() != 0.0 {
                    let fact = dl[i] / d[i];
                    dl[i] = fact;
                    d[i + 1] -= fact * du[i];
                } else {
                    dl[i] = Complex64::default();
                }
            } else {
                let fact = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = fact;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - fact * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -fact * du[i + 1];
                }
                piv[i] = true;
            }
        }
        let lu = TridiagLu {
            d,
            dl,
            du,
            du2,
            piv,
        };
        if lu.d.iter().any(|p| p.norm() == 0.0 || !p.norm().is_finite()) {
            return Err(f64::INFINITY);
        }
        Ok(lu)
    }

    /// Solve with one step of iterative refinement; returns the solution and
    /// the final residual norm ||Ax - b||_inf.
    pub fn solve_refined(&self, b: &[Complex64]) -> Result<(Vec<Complex64>, f64), f64> {
        let lu = self.factor()?;
        let mut x = lu.solve(b);
        let mut res = self.residual(b, &x);
        for _ in 0..2 {
            let r: Vec<Complex64> = self
                .matvec(&x)
                .iter()
                .zip(b)
                .map(|(ax, bi)| bi - ax)
                .collect();
            let corr = lu.solve(&r);
            let x_new: Vec<Complex64> = x.iter().zip(&corr).map(|(xi, ci)| xi + ci).collect();
            let res_new = self.residual(b, &x_new);
            if res_new >= res {
                break;
            }
            x = x_new;
            res = res_new;
        }
        Ok((x, res))
    }

    fn residual(&self, b: &[Complex64], x: &[Complex64]) -> f64 {
        self.matvec(x)
            .iter()
            .zip(b)
            .map(|(ax, bi)| (ax - bi).norm())
            .fold(0.0, f64::max)
    }
}

pub(crate) struct TridiagLu {
    d: Vec<Complex64>,
    dl: Vec<Complex64>,
    du: Vec<Complex64>,
    du2: Vec<Complex64>,
    piv: Vec<bool>,
}

impl TridiagLu {
    pub fn solve(&self, rhs: &[Complex64]) -> Vec<Complex64> {
        let n = self.d.len();
        let mut b = rhs.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.piv[i] {
                let tmp = b[i];
                b[i] = b[i + 1];
                b[i + 1] = tmp - self.dl[i] * b[i];
            } else {
                let bi = b[i];
                b[i + 1] -= self.dl[i] * bi;
            }
        }
        let mut x = vec![Complex64::default(); n];
        x[n - 1] = b[n - 1] / self.d[n - 1];
        if n >= 2 {
            x[n - 2] = (b[n - 2] - self.du[n - 2] * x[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (b[i] - self.du[i] * x[i + 1] - self.du2[i] * x[i + 2]) / self.d[i];
        }
        x
    }
}

/// 2-norm condition number. Dense SVD up to 2000 unknowns, power plus inverse
/// iteration on A^H A above that. Singular matrices report +inf.
pub(crate) fn condition_2norm(t: &Tridiag) -> f64 {
    let n = t.n();
    if n == 0 {
        return 1.0;
    }
    if n <= 2000 {
        let mut m = nalgebra::DMatrix::<Complex64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = t.d[i];
            if i > 0 {
                m[(i, i - 1)] = t.dl[i - 1];
            }
            if i + 1 < n {
                m[(i, i + 1)] = t.du[i];
            }
        }
        let sv = m.singular_values();
        let smax = sv.iter().cloned().fold(0.0, f64::max);
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 0.0 || !smin.is_finite() {
            return f64::INFINITY;
        }
        return smax / smin;
    }
    iterative_condition(t)
}

fn iterative_condition(t: &Tridiag) -> f64 {
    let n = t.n();
    let adj = t.adjoint();
    let normalize = |v: &mut Vec<Complex64>| -> f64 {
        let s = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if s > 0.0 {
            for z in v.iter_mut() {
                *z /= s;
            }
        }
        s
    };
    // sigma_max^2: power iteration on A^H A.
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + (i as f64 * 0.37).sin(), (i as f64 * 0.71).cos()))
        .collect();
    normalize(&mut v);
    let mut smax2 = 0.0;
    for _ in 0..400 {
        let mut w = adj.matvec(&t.matvec(&v));
        let lam = normalize(&mut w);
        let done = (lam - smax2).abs() <= 1e-12 * lam.max(1.0);
        smax2 = lam;
        v = w;
        if done {
            break;
        }
    }
    // sigma_min^2: inverse iteration, applying (A^H A)^{-1} = A^{-1} A^{-H}.
    let (lu, lu_adj) = match (t.factor(), adj.factor()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return f64::INFINITY,
    };
    let mut w: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new((i as f64 * 0.53).cos(), 1.0 + (i as f64 * 0.29).sin()))
        .collect();
    normalize(&mut w);
    let mut inv_smin2 = 0.0;
    for _ in 0..400 {
        let mut z = lu.solve(&lu_adj.solve(&w));
        let lam = normalize(&mut z);
        let done = (lam - inv_smin2).abs() <= 1e-12 * lam.max(1.0);
        inv_smin2 = lam;
        w = z;
        if done {
            break;
        }
    }
    if inv_smin2 <= 0.0 {
        return f64::INFINITY;
    }
    (smax2 * inv_smin2).sqrt()
}

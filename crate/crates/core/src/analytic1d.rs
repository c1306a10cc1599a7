//! Stationary 1D model `−μC'' + uC' = f` on `[x1, x2]` with `C(x1) = C_up`,
//! `C'(x2) = 0` and a box source of intensity `M` on `[x_m − h, x_m + h]`.

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ode1dProblem {
    pub mu: f64,
    pub u: f64,
    pub x1: f64,
    pub x2: f64,
    pub c_up: f64,
    pub m: f64,
    pub x_m: f64,
    pub h: f64,
}

impl Ode1dProblem {
    /// Unit interval, zero inflow.
    pub fn new(mu: f64, u: f64, m: f64, x_m: f64, h: f64) -> Self {
        Ode1dProblem { mu, u, x1: 0.0, x2: 1.0, c_up: 0.0, m, x_m, h }
    }

    pub fn peclet(&self) -> f64 {
        self.u / (2.0 * self.mu)
    }

    pub fn source(&self, x: f64) -> f64 {
        if (x - self.x_m).abs() <= self.h {
            self.m
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.mu > 0.0
            && self.u > 0.0
            && self.x2 > self.x1
            && self.h > 0.0
            && self.m >= 0.0
            && self.x_m - self.h > self.x1
            && self.x_m + self.h < self.x2
            && self.peclet().is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid 1D problem {self:?}")))
        }
    }
}

/// `C(x) = a_p + b_p e^{k(x − r_p)} + s_p x` on piece `p`, with `k = u/μ`,
/// `r_p` the right end of the piece and `s_p = M/u` on the source piece.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiecewiseSolution {
    pub problem: Ode1dProblem,
    a: [f64; 3],
    b: [f64; 3],
}

impl PiecewiseSolution {
    fn k(&self) -> f64 {
        self.problem.u / self.problem.mu
    }

    fn breaks(&self) -> [f64; 3] {
        let p = &self.problem;
        [p.x_m - p.h, p.x_m + p.h, p.x2]
    }

    fn piece(&self, x: f64) -> usize {
        let r = self.breaks();
        if x <= r[0] {
            0
        } else if x <= r[1] {
            1
        } else {
            2
        }
    }

    fn slope(&self, p: usize) -> f64 {
        if p == 1 {
            self.problem.m / self.problem.u
        } else {
            0.0
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let p = self.piece(x);
        self.a[p] + self.b[p] * (self.k() * (x - self.breaks()[p])).exp() + self.slope(p) * x
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let p = self.piece(x);
        self.b[p] * self.k() * (self.k() * (x - self.breaks()[p])).exp() + self.slope(p)
    }

    /// Coefficients `c1..c6` in the unshifted form
    /// `c_{2p+1} + c_{2p+2} e^{kx}`; exponential ones may overflow for large `k`.
    pub fn coefficients(&self) -> [f64; 6] {
        let r = self.breaks();
        let k = self.k();
        let mut c = [0.0; 6];
        for p in 0..3 {
            c[2 * p] = self.a[p];
            c[2 * p + 1] = if self.b[p] == 0.0 { 0.0 } else { self.b[p] * (-k * r[p]).exp() };
        }
        c
    }

    pub fn outflow(&self) -> f64 {
        self.eval(self.problem.x2)
    }
}

/// Solves the six boundary and interface conditions directly.
pub fn solve_closed_form(p: &Ode1dProblem) -> Result<PiecewiseSolution> {
    p.validate()?;
    let k = p.u / p.mu;
    let s = p.m / p.u;
    let (l, r) = (p.x_m - p.h, p.x_m + p.h);
    let e = |x: f64, right: f64| (k * (x - right)).exp();
    // unknowns: a0 b0 a1 b1 a2 b2
    let mut a = Matrix6::zeros();
    let mut rhs = Vector6::zeros();
    a[(0, 0)] = 1.0;
    a[(0, 1)] = e(p.x1, l);
    rhs[0] = p.c_up;
    // C continuous at l
    a[(1, 0)] = 1.0;
    a[(1, 1)] = 1.0;
    a[(1, 2)] = -1.0;
    a[(1, 3)] = -e(l, r);
    rhs[1] = s * l;
    // C' continuous at l
    a[(2, 1)] = k;
    a[(2, 3)] = -k * e(l, r);
    rhs[2] = s;
    // C continuous at r
    a[(3, 2)] = 1.0;
    a[(3, 3)] = 1.0;
    a[(3, 4)] = -1.0;
    a[(3, 5)] = -e(r, p.x2);
    rhs[3] = -s * r;
    // C' continuous at r
    a[(4, 3)] = k;
    a[(4, 5)] = -k * e(r, p.x2);
    rhs[4] = -s;
    // C'(x2) = 0
    a[(5, 5)] = k;
    let x = a.lu().solve(&rhs).ok_or(Error::Singular(0))?;
    Ok(PiecewiseSolution { problem: *p, a: [x[0], x[2], x[4]], b: [x[1], x[3], x[5]] })
}

/// Outflow value from the printed closed form (zero inflow), shifted by `C_up`.
pub fn outflow_formula(p: &Ode1dProblem) -> f64 {
    let (u, mu, m, xm, h) = (p.u, p.mu, p.m, p.x_m - p.x1, p.h);
    let k = u / mu;
    // expanded form of (1/u²) e^{−k(xm+h)} (2uhM e^{k(xm+h)} + μM(1 − e^{2kh}))
    let c5 = (2.0 * u * h * m + mu * m * ((-k * (xm + h)).exp() - (-k * (xm - h)).exp())) / (u * u);
    p.c_up + c5
}

/// Second-order finite differences on a grid through `x_m ± h`, refined once
/// and Richardson-extrapolated. Returns `C(x2)`.
pub fn fd_outflow(p: &Ode1dProblem, cells_per_piece: usize) -> Result<f64> {
    p.validate()?;
    let coarse = fd_solve(p, cells_per_piece);
    let fine = fd_solve(p, 2 * cells_per_piece);
    Ok((4.0 * fine - coarse) / 3.0)
}

fn fd_solve(p: &Ode1dProblem, n: usize) -> f64 {
    let knots = [p.x1, p.x_m - p.h, p.x_m + p.h, p.x2];
    let mut x = vec![p.x1];
    for w in knots.windows(2) {
        for i in 1..=n {
            x.push(w[0] + (w[1] - w[0]) * i as f64 / n as f64);
        }
    }
    let m = x.len();
    // unknowns C_1..C_{m-1}; C_0 = c_up; ghost node mirrors C_{m-2} for C'(x2) = 0
    let mut lower = vec![0.0; m - 1];
    let mut diag = vec![0.0; m - 1];
    let mut upper = vec![0.0; m - 1];
    let mut rhs = vec![0.0; m - 1];
    for i in 1..m {
        let r = i - 1;
        let (hl, hr) = if i == m - 1 { (x[i] - x[i - 1], x[i] - x[i - 1]) } else { (x[i] - x[i - 1], x[i + 1] - x[i]) };
        let d2l = 2.0 / (hl * (hl + hr));
        let d2r = 2.0 / (hr * (hl + hr));
        let d1l = -hr / (hl * (hl + hr));
        let d1r = hl / (hr * (hl + hr));
        let cl = -p.mu * d2l + p.u * d1l;
        let cr = -p.mu * d2r + p.u * d1r;
        diag[r] = -(cl + cr);
        // the source jumps sit on nodes; use the cell average there
        rhs[r] = if i == m - 1 {
            0.0
        } else {
            (hl * p.source(x[i] - 0.5 * hl) + hr * p.source(x[i] + 0.5 * hr)) / (hl + hr)
        };
        if i == 1 {
            rhs[r] -= cl * p.c_up;
        } else {
            lower[r] = cl;
        }
        if i == m - 1 {
            lower[r] += cr;
        } else {
            upper[r] = cr;
        }
    }
    thomas(&lower, &mut diag, &upper, &mut rhs);
    rhs[m - 2]
}

fn thomas(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    for i in 1..n {
        let w = lower[i] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for i in (0..n - 1).rev() {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flatness {
    pub peclet: f64,
    pub min: f64,
    pub max: f64,
    /// `(max − min) / max`
    pub spread: f64,
}

/// Outflow values over `x_m` in `[lo, hi]` (`n` points), other data fixed.
pub fn flatness_study(base: &Ode1dProblem, lo: f64, hi: f64, n: usize) -> Result<Flatness> {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for i in 0..n.max(2) {
        let x_m = lo + (hi - lo) * i as f64 / (n.max(2) - 1) as f64;
        let c = solve_closed_form(&Ode1dProblem { x_m, ..*base })?.outflow();
        min = min.min(c);
        max = max.max(c);
    }
    Ok(Flatness { peclet: base.peclet(), min, max, spread: (max - min) / max })
}

/// Flatness at `Pe, 2 Pe, 4 Pe, ...` obtained by scaling the velocity.
pub fn peclet_sweep(base: &Ode1dProblem, doublings: usize, lo: f64, hi: f64, n: usize) -> Result<Vec<Flatness>> {
    (0..=doublings)
        .map(|j| flatness_study(&Ode1dProblem { u: base.u * 2f64.powi(j as i32), ..*base }, lo, hi, n))
        .collect()
}

/// Coefficient of determination of a least-squares line through `(x, y)`.
pub fn linear_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    let slope = sxy / sxx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - my - slope * (a - mx)).powi(2)).sum();
    1.0 - ss_res / syy
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reference() -> Ode1dProblem {
        Ode1dProblem::new(0.5, 10.0, 1.0, 0.5, 0.1)
    }

    #[test]
    fn interface_conditions_hold() {
        let p = Ode1dProblem { c_up: 0.3, ..reference() };
        let s = solve_closed_form(&p).unwrap();
        assert!((s.eval(0.0) - 0.3).abs() < 1e-12);
        assert!(s.derivative(1.0).abs() < 1e-12);
        for x in [0.4, 0.6] {
            let (l, r) = (x - 1e-9, x + 1e-9);
            assert!((s.eval(l) - s.eval(r)).abs() < 1e-7);
            assert!((s.derivative(l) - s.derivative(r)).abs() < 1e-6);
        }
        assert_eq!(s.coefficients()[5], 0.0);
        let flat = (0..=100).map(|i| (s.eval(0.6 + 0.4 * i as f64 / 100.0) - s.outflow()).abs()).fold(0.0, f64::max);
        assert!(flat <= 1e-12);
    }

    #[test]
    fn outflow_matches_printed_coefficient() {
        let p = reference();
        assert_eq!(p.peclet(), 10.0);
        let s = solve_closed_form(&p).unwrap();
        assert!((s.outflow() - outflow_formula(&p)).abs() <= 1e-12 * outflow_formula(&p));
        assert!((s.coefficients()[4] - outflow_formula(&p)).abs() < 1e-12);
    }

    #[test]
    fn zero_source_gives_constant_inflow() {
        let p = Ode1dProblem { m: 0.0, c_up: 0.7, ..reference() };
        let s = solve_closed_form(&p).unwrap();
        let c = s.coefficients();
        assert!(c[1].abs() < 1e-14 && c[3].abs() < 1e-14 && c[5] == 0.0);
        assert!((s.eval(0.37) - 0.7).abs() < 1e-14);
    }

    #[test]
    fn finite_differences_agree() {
        let p = reference();
        let fd = fd_outflow(&p, 4000).unwrap();
        let exact = outflow_formula(&p);
        assert!((fd - exact).abs() <= 1e-6 * exact, "{fd} vs {exact}");
    }

    #[test]
    fn touching_support_is_rejected() {
        assert!(solve_closed_form(&Ode1dProblem::new(0.5, 10.0, 1.0, 0.1, 0.1)).is_err());
    }

    #[test]
    fn more_mass_raises_the_outflow() {
        let p = reference();
        let a = solve_closed_form(&p).unwrap().outflow();
        let b = solve_closed_form(&Ode1dProblem { h: 0.2, ..p }).unwrap().outflow();
        assert!(b > a);
        let ms: Vec<f64> = (1..=6).map(|i| i as f64).collect();
        let cs: Vec<f64> =
            ms.iter().map(|&m| solve_closed_form(&Ode1dProblem { m, ..p }).unwrap().outflow()).collect();
        assert!(cs.windows(2).all(|w| w[1] > w[0]));
        assert!((linear_r2(&ms, &cs) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn larger_peclet_flattens() {
        let sweep = peclet_sweep(&reference(), 3, 0.2, 0.8, 61).unwrap();
        assert!(sweep.windows(2).all(|w| w[1].spread <= w[0].spread));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn closed_form_matches_fd(mu in 0.1f64..1.0, pe in 0.5f64..10.0, m in 0.1f64..10.0,
                                  h in 0.01f64..0.2, t in 0.0f64..1.0, c_up in 0.0f64..1.0) {
            let lo = h + 0.05;
            let x_m = lo + t * (1.0 - 2.0 * lo);
            let p = Ode1dProblem { c_up, ..Ode1dProblem::new(mu, 2.0 * mu * pe, m, x_m, h) };
            let exact = solve_closed_form(&p).unwrap().outflow();
            let fd = fd_outflow(&p, 4000).unwrap();
            prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs());
            prop_assert!((exact - outflow_formula(&p)).abs() <= 1e-10 * exact.abs());
        }
    }
}

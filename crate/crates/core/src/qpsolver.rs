//! Dense convex QP solver with exact dual recovery.
//!
//! Solves
//! ```text
//!     minimize    1/2 x' Q x + q' x
//!     subject to  A_eq x = b_eq
//!                 lb <= A_in x <= ub
//! ```
//! via an operator-splitting (ADMM) iteration on the stacked constraint
//! system, followed by an active-set polishing step that re-solves the KKT
//! equations of the guessed active set directly. Polishing is what makes the
//! dual multipliers accurate enough to differentiate through the optimum.
//!
//! Sign convention for the Lagrangian:
//! ```text
//!     L = 1/2 x'Qx + q'x + nu'(A_eq x - b_eq)
//!         + mu_hi'(A_in x - ub) + mu_lo'(lb - A_in x)
//! ```
//! so stationarity reads `Qx + q + A_eq' nu + A_in'(mu_hi - mu_lo) = 0` and
//! both `mu_lo` and `mu_hi` are nonnegative.

use crate::linalg::{dot, norm_inf, Lu, Mat};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 50_000;

const SIGMA: f64 = 1e-6;
const ALPHA_RELAX: f64 = 1.6;
const RHO_BASE: f64 = 0.1;
const RUIZ_ITERS: usize = 10;
const CHECK_INTERVAL: usize = 25;
const POLISH_REG: f64 = 1e-9;
const EPS_CERT: f64 = 1e-5;
const EPS_CERT_SLOW: f64 = 2e-3;
const SLOW_WINDOW: usize = 500;
const ADAPT_RHO: bool = true;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("problem is primal infeasible")]
    Infeasible,
    #[error("problem is unbounded below")]
    Unbounded,
    #[error("iteration budget exhausted (kkt residual {residual:.3e})")]
    MaxIter { residual: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

/// Problem data in canonical form. `a_eq`/`a_in` may have zero rows.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub quadratic: Mat,
    pub linear: Vec<f64>,
    pub a_eq: Mat,
    pub b_eq: Vec<f64>,
    pub a_in: Mat,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
}

impl QpProblem {
    pub fn n(&self) -> usize {
        self.linear.len()
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.n();
        if self.quadratic.rows != n || self.quadratic.cols != n {
            return Err(QpError::InvalidProblem("Q dimension mismatch".into()));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let a = self.quadratic.at(i, j);
                let b = self.quadratic.at(j, i);
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(QpError::InvalidProblem("Q is not symmetric".into()));
                }
            }
        }
        if self.a_eq.rows != self.b_eq.len() || (self.a_eq.rows > 0 && self.a_eq.cols != n) {
            return Err(QpError::InvalidProblem("equality system dimension mismatch".into()));
        }
        if self.a_in.rows != self.lb.len()
            || self.a_in.rows != self.ub.len()
            || (self.a_in.rows > 0 && self.a_in.cols != n)
        {
            return Err(QpError::InvalidProblem("inequality system dimension mismatch".into()));
        }
        for (l, u) in self.lb.iter().zip(&self.ub) {
            if l > u {
                return Err(QpError::InvalidProblem(format!("lb {l} exceeds ub {u}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x_star: Vec<f64>,
    pub obj: f64,
    pub nu: Vec<f64>,
    pub mu_lo: Vec<f64>,
    pub mu_hi: Vec<f64>,
    pub status: QpStatus,
    pub kkt_residual: f64,
    /// True when some inequality is active with a vanishing multiplier, i.e.
    /// the duals may not be unique at this optimum.
    pub degenerate: bool,
    pub iterations: usize,
    pub polished: bool,
}

/// Stacked view: rows 0..m_eq are equalities (l = u = b_eq), the rest are
/// the two-sided inequalities.
struct Stacked {
    n: usize,
    m: usize,
    m_eq: usize,
    a: Mat,
    l: Vec<f64>,
    u: Vec<f64>,
}

fn stack(p: &QpProblem) -> Stacked {
    let n = p.n();
    let m_eq = p.a_eq.rows;
    let m_in = p.a_in.rows;
    let m = m_eq + m_in;
    let mut a = Mat::zeros(m, n);
    let mut l = Vec::with_capacity(m);
    let mut u = Vec::with_capacity(m);
    for i in 0..m_eq {
        a.data[i * n..(i + 1) * n].copy_from_slice(p.a_eq.row(i));
        l.push(p.b_eq[i]);
        u.push(p.b_eq[i]);
    }
    for i in 0..m_in {
        a.data[(m_eq + i) * n..(m_eq + i + 1) * n].copy_from_slice(p.a_in.row(i));
        l.push(p.lb[i]);
        u.push(p.ub[i]);
    }
    Stacked { n, m, m_eq, a, l, u }
}

/// Modified Ruiz equilibration of the KKT data plus cost normalization.
struct Scaling {
    d: Vec<f64>,
    e: Vec<f64>,
    c: f64,
}

fn ruiz_scale(q: &mut Mat, lin: &mut [f64], st: &mut Stacked) -> Scaling {
    let n = st.n;
    let m = st.m;
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;
    for _ in 0..RUIZ_ITERS {
        // column norms of [[Q, A'], [A, 0]]
        let mut dx = vec![0.0_f64; n];
        let mut de = vec![0.0_f64; m];
        for j in 0..n {
            let mut v = 0.0_f64;
            for i in 0..n {
                v = v.max(q.at(i, j).abs());
            }
            for i in 0..m {
                v = v.max(st.a.at(i, j).abs());
            }
            dx[j] = v;
        }
        for i in 0..m {
            de[i] = norm_inf(st.a.row(i));
        }
        let delta = |v: f64| {
            if v < 1e-12 {
                1.0
            } else {
                1.0 / v.sqrt().clamp(1e-6, 1e6)
            }
        };
        let dx: Vec<f64> = dx.into_iter().map(delta).collect();
        let de: Vec<f64> = de.into_iter().map(delta).collect();
        for i in 0..n {
            for j in 0..n {
                *q.at_mut(i, j) *= dx[i] * dx[j];
            }
            lin[i] *= dx[i];
        }
        for i in 0..m {
            for j in 0..n {
                *st.a.at_mut(i, j) *= de[i] * dx[j];
            }
            st.l[i] *= de[i];
            st.u[i] *= de[i];
        }
        for (di, s) in d.iter_mut().zip(&dx) {
            *di *= s;
        }
        for (ei, s) in e.iter_mut().zip(&de) {
            *ei *= s;
        }
        // cost scaling
        let mut col_mean = 0.0;
        for j in 0..n {
            let mut v = 0.0_f64;
            for i in 0..n {
                v = v.max(q.at(i, j).abs());
            }
            col_mean += v;
        }
        col_mean /= n.max(1) as f64;
        let denom = col_mean.max(norm_inf(lin)).clamp(1e-12, 1e12);
        let gamma = 1.0 / denom;
        if (gamma - 1.0).abs() > 1e-12 {
            for v in q.data.iter_mut() {
                *v *= gamma;
            }
            for v in lin.iter_mut() {
                *v *= gamma;
            }
            c *= gamma;
        }
    }
    Scaling { d, e, c }
}

fn build_kkt(q: &Mat, a: &Mat, sigma: f64, rho: &[f64]) -> Mat {
    let n = q.rows;
    let m = a.rows;
    let dim = n + m;
    let mut k = Mat::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            *k.at_mut(i, j) = q.at(i, j);
        }
        *k.at_mut(i, i) += sigma;
    }
    for i in 0..m {
        for j in 0..n {
            let v = a.at(i, j);
            *k.at_mut(n + i, j) = v;
            *k.at_mut(j, n + i) = v;
        }
        *k.at_mut(n + i, n + i) = -1.0 / rho[i];
    }
    k
}

struct KktEval {
    stationarity: f64,
    primal: f64,
    comp_slack: f64,
}

impl KktEval {
    fn residual(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.comp_slack)
    }
}

/// Unscaled KKT residuals for stacked duals `y` (y = mu_hi - mu_lo on
/// inequality rows, nu on equality rows).
fn eval_kkt(p: &QpProblem, st_orig: &Stacked, x: &[f64], y: &[f64]) -> KktEval {
    let mut grad = p.quadratic.mul_vec(x);
    for (g, qi) in grad.iter_mut().zip(&p.linear) {
        *g += qi;
    }
    let aty = st_orig.a.mul_vec_t(y);
    for (g, v) in grad.iter_mut().zip(&aty) {
        *g += v;
    }
    let stationarity = norm_inf(&grad);

    let ax = st_orig.a.mul_vec(x);
    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    for i in 0..st_orig.m {
        let l = st_orig.l[i];
        let u = st_orig.u[i];
        let v = ax[i];
        if l.is_finite() {
            primal = primal.max(l - v);
        }
        if u.is_finite() {
            primal = primal.max(v - u);
        }
        if i >= st_orig.m_eq {
            let mu_hi = y[i].max(0.0);
            let mu_lo = (-y[i]).max(0.0);
            if u.is_finite() {
                comp = comp.max((mu_hi * (v - u)).abs());
            }
            if l.is_finite() {
                comp = comp.max((mu_lo * (l - v)).abs());
            }
        }
    }
    KktEval {
        stationarity,
        primal,
        comp_slack: comp,
    }
}

fn extract_solution(
    p: &QpProblem,
    st: &Stacked,
    x: Vec<f64>,
    y: Vec<f64>,
    kkt: &KktEval,
    iterations: usize,
    polished: bool,
) -> QpSolution {
    let m_eq = st.m_eq;
    let m_in = st.m - m_eq;
    let nu = y[..m_eq].to_vec();
    let mut mu_lo = vec![0.0; m_in];
    let mut mu_hi = vec![0.0; m_in];
    for i in 0..m_in {
        let v = y[m_eq + i];
        if v >= 0.0 {
            mu_hi[i] = v;
        } else {
            mu_lo[i] = -v;
        }
    }
    // degeneracy: an active inequality whose multiplier vanishes
    let ax = st.a.mul_vec(&x);
    let mut degenerate = false;
    for i in 0..m_in {
        let row = m_eq + i;
        let slack_tol = |b: f64| 1e-6 * (1.0 + b.abs());
        let l = st.l[row];
        let u = st.u[row];
        let active_lo = l.is_finite() && (ax[row] - l).abs() <= slack_tol(l);
        let active_hi = u.is_finite() && (u - ax[row]).abs() <= slack_tol(u);
        if (active_lo && mu_lo[i] < 1e-5) || (active_hi && mu_hi[i] < 1e-5) {
            degenerate = true;
        }
    }
    let obj = 0.5 * dot(&x, &p.quadratic.mul_vec(&x)) + dot(&p.linear, &x);
    QpSolution {
        x_star: x,
        obj,
        nu,
        mu_lo,
        mu_hi,
        status: QpStatus::Optimal,
        kkt_residual: kkt.residual(),
        degenerate,
        iterations,
        polished,
    }
}

/// Farkas-style primal infeasibility test on a dual displacement
/// `delta = y_now - y_ref`: the displacement must be (numerically) in the
/// null space of `A'` and have strictly negative support on the bounds.
fn primal_cert(st: &Stacked, y_now: &[f64], y_ref: &[f64], eps: f64) -> bool {
    let delta: Vec<f64> = y_now.iter().zip(y_ref).map(|(a, b)| a - b).collect();
    let d_norm = norm_inf(&delta);
    if d_norm <= 1e-12 {
        return false;
    }
    if norm_inf(&st.a.mul_vec_t(&delta)) > eps * d_norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..st.m {
        let d = delta[i];
        if d > 0.0 {
            if st.u[i].is_finite() {
                support += st.u[i] * d;
            } else if d > eps * d_norm {
                return false;
            }
        } else if d < 0.0 {
            if st.l[i].is_finite() {
                support += st.l[i] * d;
            } else if d < -eps * d_norm {
                return false;
            }
        }
    }
    support < -eps * d_norm
}

/// Unboundedness test on a primal displacement `delta = x_now - x_ref`:
/// a descent ray with `Q delta ~ 0` that stays inside the constraint cone.
fn dual_cert(
    q: &Mat,
    lin: &[f64],
    st: &Stacked,
    x_now: &[f64],
    x_ref: &[f64],
    eps: f64,
) -> bool {
    let delta: Vec<f64> = x_now.iter().zip(x_ref).map(|(a, b)| a - b).collect();
    let d_norm = norm_inf(&delta);
    if d_norm <= 1e-12 {
        return false;
    }
    if norm_inf(&q.mul_vec(&delta)) > eps * d_norm {
        return false;
    }
    if dot(lin, &delta) >= -eps * d_norm {
        return false;
    }
    let ad = st.a.mul_vec(&delta);
    for i in 0..st.m {
        if st.u[i].is_finite() && ad[i] > eps * d_norm {
            return false;
        }
        if st.l[i].is_finite() && ad[i] < -eps * d_norm {
            return false;
        }
    }
    true
}

/// Solve the equality KKT system for one active-set guess. `sides[i]` is
/// `0` for inactive, `-1` lower-active, `+1` upper-active, `2` equality.
/// Returns `(x, y_stacked)` from a lightly regularized solve with iterative
/// refinement.
fn active_set_solve(
    p: &QpProblem,
    st_orig: &Stacked,
    sides: &[i8],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = st_orig.n;
    let rows: Vec<(usize, f64)> = sides
        .iter()
        .enumerate()
        .filter_map(|(i, &s)| match s {
            2 => Some((i, st_orig.l[i])),
            1 => Some((i, st_orig.u[i])),
            -1 => Some((i, st_orig.l[i])),
            _ => None,
        })
        .collect();
    let k = rows.len();
    let dim = n + k;
    let mut kkt = Mat::zeros(dim, dim);
    for i in 0..n {
        for j in 0..n {
            *kkt.at_mut(i, j) = p.quadratic.at(i, j);
        }
        *kkt.at_mut(i, i) += POLISH_REG;
    }
    for (r, &(row, _)) in rows.iter().enumerate() {
        for j in 0..n {
            let v = st_orig.a.at(row, j);
            *kkt.at_mut(n + r, j) = v;
            *kkt.at_mut(j, n + r) = v;
        }
        *kkt.at_mut(n + r, n + r) = -POLISH_REG;
    }
    let lu = Lu::factor(&kkt).ok()?;
    let mut rhs = vec![0.0; dim];
    for i in 0..n {
        rhs[i] = -p.linear[i];
    }
    for (r, &(_, b)) in rows.iter().enumerate() {
        rhs[n + r] = b;
    }
    let mut sol = lu.solve(&rhs);
    // refinement against the unregularized system; keep only improving steps
    let residual = |s: &[f64]| -> Vec<f64> {
        let mut resid = rhs.clone();
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += p.quadratic.at(i, j) * s[j];
            }
            for (r, &(row, _)) in rows.iter().enumerate() {
                acc += st_orig.a.at(row, i) * s[n + r];
            }
            resid[i] -= acc;
        }
        for (r, &(row, _)) in rows.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                acc += st_orig.a.at(row, j) * s[j];
            }
            resid[n + r] -= acc;
        }
        resid
    };
    let mut best = norm_inf(&residual(&sol));
    for _ in 0..3 {
        if best < 1e-14 {
            break;
        }
        let delta = lu.solve(&residual(&sol));
        let trial: Vec<f64> = sol.iter().zip(&delta).map(|(s, d)| s + d).collect();
        let trial_res = norm_inf(&residual(&trial));
        if trial_res < best {
            sol = trial;
            best = trial_res;
        } else {
            break;
        }
    }
    let x = sol[..n].to_vec();
    let mut y_new = vec![0.0; st_orig.m];
    for (r, &(row, _)) in rows.iter().enumerate() {
        y_new[row] = sol[n + r];
    }
    Some((x, y_new))
}

/// Nonnegative least squares `min |A x - b|` with the first `n_free`
/// variables unconstrained (Lawson-Hanson with a pre-seeded passive set).
/// Columns of `a` are stored contiguously: `a[j]` is column j.
fn nnls_free(a: &[Vec<f64>], b: &[f64], n_free: usize) -> Vec<f64> {
    let n = a.len();
    let mut passive: Vec<bool> = (0..n).map(|j| j < n_free).collect();
    let mut x = vec![0.0; n];

    let solve_passive = |passive: &[bool], x_out: &mut Vec<f64>| -> bool {
        let idx: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        if idx.is_empty() {
            x_out.iter_mut().for_each(|v| *v = 0.0);
            return true;
        }
        let k = idx.len();
        let mut gram = Mat::zeros(k, k);
        let mut rhs = vec![0.0; k];
        for (r, &jr) in idx.iter().enumerate() {
            for (c, &jc) in idx.iter().enumerate() {
                *gram.at_mut(r, c) = dot(&a[jr], &a[jc]);
            }
            *gram.at_mut(r, r) += 1e-12;
            rhs[r] = dot(&a[jr], b);
        }
        let Ok(lu) = Lu::factor(&gram) else {
            return false;
        };
        let sol = lu.solve(&rhs);
        x_out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &j) in idx.iter().enumerate() {
            x_out[j] = sol[r];
        }
        true
    };

    if !solve_passive(&passive, &mut x) {
        return x;
    }
    for _outer in 0..(4 * n + 8) {
        // gradient of 1/2|Ax - b|^2 restricted to the constrained zero set
        let mut resid = b.to_vec();
        for (j, col) in a.iter().enumerate() {
            if x[j] != 0.0 {
                for (r, v) in resid.iter_mut().zip(col) {
                    *r -= v * x[j];
                }
            }
        }
        let mut best_j = None;
        let mut best_w = 1e-10 * (1.0 + norm_inf(b));
        for j in n_free..n {
            if !passive[j] {
                let w = dot(&a[j], &resid);
                if w > best_w {
                    best_w = w;
                    best_j = Some(j);
                }
            }
        }
        let Some(j_in) = best_j else {
            break;
        };
        passive[j_in] = true;
        let mut trial = vec![0.0; n];
        if !solve_passive(&passive, &mut trial) {
            passive[j_in] = false;
            break;
        }
        // inner loop: back off along the segment x -> trial while any
        // constrained passive variable would go nonpositive
        for _inner in 0..(4 * n + 8) {
            let mut alpha = 1.0_f64;
            let mut blocker = None;
            for j in n_free..n {
                if passive[j] && trial[j] <= 0.0 {
                    let denom = x[j] - trial[j];
                    if denom > 1e-300 {
                        let step = x[j] / denom;
                        if step < alpha {
                            alpha = step;
                            blocker = Some(j);
                        }
                    } else {
                        alpha = 0.0;
                        blocker = Some(j);
                    }
                }
            }
            match blocker {
                None => break,
                Some(jb) => {
                    for j in 0..n {
                        x[j] += alpha * (trial[j] - x[j]);
                    }
                    x[jb] = 0.0;
                    passive[jb] = false;
                    if !solve_passive(&passive, &mut trial) {
                        break;
                    }
                }
            }
        }
        x = trial;
        for j in n_free..n {
            if x[j] < 0.0 {
                x[j] = 0.0;
            }
        }
    }
    x
}

/// Recover sign-correct multipliers for a fixed primal point and active
/// set by constrained least squares on the stationarity equation.
fn dual_repair(
    p: &QpProblem,
    st_orig: &Stacked,
    sides: &[i8],
    x: &[f64],
) -> Option<Vec<f64>> {

    // b = -(Qx + q)
    let mut b = p.quadratic.mul_vec(x);
    for (bv, qv) in b.iter_mut().zip(&p.linear) {
        *bv = -(*bv + qv);
    }
    // free equality columns first, then sign-constrained ones
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut col_rows: Vec<(usize, f64)> = Vec::new(); // (row, sign of y)
    for (i, &s) in sides.iter().enumerate() {
        if s == 2 {
            cols.push(st_orig.a.row(i).to_vec());
            col_rows.push((i, 1.0));
        }
    }
    let n_free = cols.len();
    for (i, &s) in sides.iter().enumerate() {
        match s {
            1 => {
                cols.push(st_orig.a.row(i).to_vec());
                col_rows.push((i, 1.0));
            }
            -1 => {
                cols.push(st_orig.a.row(i).iter().map(|v| -v).collect());
                col_rows.push((i, -1.0));
            }
            _ => {}
        }
    }
    let lam = nnls_free(&cols, &b, n_free);
    // verify stationarity actually closes
    let mut resid = b;
    for (j, col) in cols.iter().enumerate() {
        for (r, v) in resid.iter_mut().zip(col) {
            *r -= v * lam[j];
        }
    }
    let scale = 1.0 + norm_inf(&p.linear);
    if norm_inf(&resid) > 1e-7 * scale {
        return None;
    }
    let mut y = vec![0.0; st_orig.m];
    for (j, &(row, sign)) in col_rows.iter().enumerate() {
        y[row] = sign * lam[j];
    }
    Some(y)
}

/// Active-set polish. The set is seeded from the ADMM iterate (projected
/// slacks sitting exactly on a bound, plus dual signs) and repaired
/// add-only: rows violated at the candidate point become active. The
/// multipliers are then recovered by sign-constrained least squares, which
/// handles degenerate vertices where the joint KKT solve splits the
/// non-unique duals with arbitrary signs.
fn polish(
    p: &QpProblem,
    st_orig: &Stacked,
    st_scaled: &Stacked,
    z_scaled: &[f64],
    y: &[f64],
) -> Option<(Vec<f64>, Vec<f64>)> {
    let m = st_orig.m;
    let m_eq = st_orig.m_eq;
    let mut sides: Vec<i8> = vec![0; m];
    for i in 0..m_eq {
        sides[i] = 2;
    }
    for i in m_eq..m {
        let at_lo = st_scaled.l[i].is_finite() && z_scaled[i] == st_scaled.l[i];
        let at_hi = st_scaled.u[i].is_finite() && z_scaled[i] == st_scaled.u[i];
        sides[i] = if at_lo && at_hi {
            2
        } else if at_hi {
            1
        } else if at_lo {
            -1
        } else if y[i] > 0.0 && st_orig.u[i].is_finite() {
            1
        } else if y[i] < 0.0 && st_orig.l[i].is_finite() {
            -1
        } else {
            0
        };
    }

    let bound_scale = st_orig
        .l
        .iter()
        .chain(st_orig.u.iter())
        .filter(|v| v.is_finite())
        .fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let mut x = None;
    let mut dropped = vec![false; m];
    for _round in 0..(3 * m + 8) {
        let (cand, _) = active_set_solve(p, st_orig, &sides)?;
        let ax = st_orig.a.mul_vec(&cand);

        // the seed can pin rows that cannot all hold at once (the ADMM
        // iterate momentarily clamps slacks that are not active at the
        // optimum); the joint solve then leaves residuals on the active
        // rows. Drop the worst offender and retry. Each row may be dropped
        // once per attempt, so residual ties cannot cycle on one row.
        let mut inconsistent = false;
        let mut worst_active = 0.0_f64;
        let mut drop = None;
        for i in m_eq..m {
            if sides[i] == 0 {
                continue;
            }
            let target = if sides[i] == 1 { st_orig.u[i] } else { st_orig.l[i] };
            let resid = (ax[i] - target).abs();
            let tol = 1e-7 * (1.0 + target.abs());
            if resid > tol {
                inconsistent = true;
                if !dropped[i] && resid > worst_active {
                    worst_active = resid;
                    drop = Some(i);
                }
            }
        }
        if let Some(i) = drop {
            sides[i] = 0;
            dropped[i] = true;
            continue;
        }
        if inconsistent {
            // every conflicting row already used its drop; give up and let
            // the iteration refine the seed instead
            return None;
        }

        // an underdetermined linear-cost solve runs away along the
        // regularizer; treat the blow-up as missing active rows and add
        // the most-violated one
        let blown_up = norm_inf(&cand) > 1e8 * bound_scale;
        let mut worst_violation = 0.0_f64;
        let mut add = None;
        for i in m_eq..m {
            if sides[i] != 0 {
                continue;
            }
            let feas_tol = 1e-7 * (1.0 + ax[i].abs().min(bound_scale));
            if st_orig.u[i].is_finite() && ax[i] - st_orig.u[i] > feas_tol.max(worst_violation) {
                worst_violation = ax[i] - st_orig.u[i];
                add = Some((i, 1));
            }
            if st_orig.l[i].is_finite() && st_orig.l[i] - ax[i] > feas_tol.max(worst_violation) {
                worst_violation = st_orig.l[i] - ax[i];
                add = Some((i, -1));
            }
        }
        if let Some((i, side)) = add {
            sides[i] = side;
            continue;
        }
        if blown_up {
            return None;
        }
        x = Some(cand);
        break;
    }
    let x = x?;
    let y_repaired = dual_repair(p, st_orig, &sides, &x)?;
    Some((x, y_repaired))
}
/// One ADMM phase with a fixed preconditioning recipe.
struct PhaseRecipe {
    ruiz: bool,
    rho_eq_factor: f64,
}

enum PhaseOutcome {
    Solved(QpSolution),
    Infeasible,
    Unbounded,
    Budget { best_residual: f64 },
}

fn run_phase(
    p: &QpProblem,
    st_orig: &Stacked,
    recipe: &PhaseRecipe,
    tol: f64,
    budget: usize,
    iters_done: &mut usize,
) -> Result<PhaseOutcome, QpError> {
    let n = p.n();
    let m = st_orig.m;

    let mut q_s = p.quadratic.clone();
    let mut lin_s = p.linear.clone();
    let mut st_s = stack(p);
    let scal = if recipe.ruiz {
        ruiz_scale(&mut q_s, &mut lin_s, &mut st_s)
    } else {
        Scaling {
            d: vec![1.0; n],
            e: vec![1.0; m],
            c: 1.0,
        }
    };

    let mut rho: Vec<f64> = (0..m)
        .map(|i| {
            if i < st_s.m_eq {
                RHO_BASE * recipe.rho_eq_factor
            } else {
                RHO_BASE
            }
        })
        .collect();
    let mut lu = Lu::factor(&build_kkt(&q_s, &st_s.a, SIGMA, &rho))
        .map_err(|_| QpError::InvalidProblem("KKT matrix is singular".into()))?;

    let mut x = vec![0.0; n];
    let mut z: Vec<f64> = st_s
        .l
        .iter()
        .zip(&st_s.u)
        .map(|(&l, &u)| {
            if l.is_finite() && u.is_finite() {
                0.5 * (l + u)
            } else if l.is_finite() {
                l
            } else if u.is_finite() {
                u
            } else {
                0.0
            }
        })
        .collect();
    let mut y = vec![0.0; m];

    let unscale_x =
        |xs: &[f64]| -> Vec<f64> { xs.iter().zip(&scal.d).map(|(v, d)| v * d).collect() };
    let unscale_y =
        |ys: &[f64]| -> Vec<f64> { ys.iter().zip(&scal.e).map(|(v, e)| v * e / scal.c).collect() };

    let mut best_residual = f64::INFINITY;
    let mut rhs = vec![0.0; n + m];
    let mut pinf_streak = 0usize;
    let mut dinf_streak = 0usize;
    let mut y_slow = y.clone();
    let mut x_slow = x.clone();
    let mut iter = 0usize;
    while iter < budget {
        iter += 1;
        *iters_done += 1;
        let x_prev = x.clone();
        let y_prev = y.clone();

        for i in 0..n {
            rhs[i] = SIGMA * x[i] - lin_s[i];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rho[i];
        }
        let sol = lu.solve(&rhs);
        let x_tilde = &sol[..n];
        let nu_vec = &sol[n..];
        let z_tilde: Vec<f64> = (0..m)
            .map(|i| z[i] + (nu_vec[i] - y[i]) / rho[i])
            .collect();
        for i in 0..n {
            x[i] = ALPHA_RELAX * x_tilde[i] + (1.0 - ALPHA_RELAX) * x[i];
        }
        let mut z_new = vec![0.0; m];
        for i in 0..m {
            let v = ALPHA_RELAX * z_tilde[i] + (1.0 - ALPHA_RELAX) * z[i] + y[i] / rho[i];
            z_new[i] = v.clamp(st_s.l[i], st_s.u[i]);
            y[i] += rho[i] * (ALPHA_RELAX * z_tilde[i] + (1.0 - ALPHA_RELAX) * z[i] - z_new[i]);
        }
        z = z_new;

        if iter % CHECK_INTERVAL != 0 && iter != budget {
            continue;
        }

        // infeasibility certificates on the scaled iterates. Single-step
        // deltas catch clean divergence rays quickly; windowed deltas (the
        // drift across SLOW_WINDOW iterations) average out oscillating
        // components and catch marginal infeasibility. Fast certificates
        // must hold on two consecutive checks before we trust them.
        let pinf_now = primal_cert(&st_s, &y, &y_prev, EPS_CERT);
        pinf_streak = if pinf_now { pinf_streak + 1 } else { 0 };
        let dinf_now = dual_cert(&q_s, &lin_s, &st_s, &x, &x_prev, EPS_CERT);
        dinf_streak = if dinf_now { dinf_streak + 1 } else { 0 };
        if pinf_streak >= 2 {
            return Ok(PhaseOutcome::Infeasible);
        }
        if dinf_streak >= 2 {
            return Ok(PhaseOutcome::Unbounded);
        }
        if iter % SLOW_WINDOW == 0 {
            if primal_cert(&st_s, &y, &y_slow, EPS_CERT_SLOW) {
                return Ok(PhaseOutcome::Infeasible);
            }
            if dual_cert(&q_s, &lin_s, &st_s, &x, &x_slow, EPS_CERT_SLOW) {
                return Ok(PhaseOutcome::Unbounded);
            }
            y_slow = y.clone();
            x_slow = x.clone();
        }

        // polish attempt: cheap at these sizes, so try on every check
        let y_u = unscale_y(&y);
        if let Some((px, py)) = polish(p, st_orig, &st_s, &z, &y_u) {
            let pk = eval_kkt(p, st_orig, &px, &py);
            if pk.residual() <= tol {
                return Ok(PhaseOutcome::Solved(extract_solution(
                    p, st_orig, px, py, &pk, *iters_done, true,
                )));
            }
        }

        // plain ADMM termination on the unscaled residuals
        let x_u = unscale_x(&x);
        let kkt = eval_kkt(p, st_orig, &x_u, &y_u);
        best_residual = best_residual.min(kkt.residual());
        if kkt.residual() <= tol {
            return Ok(PhaseOutcome::Solved(extract_solution(
                p,
                st_orig,
                x_u,
                y_u,
                &kkt,
                *iters_done,
                false,
            )));
        }

        // residual-balancing step-size update on the scaled problem
        if ADAPT_RHO && iter % (8 * CHECK_INTERVAL) == 0 {
            let ax = st_s.a.mul_vec(&x);
            let rp: f64 = (0..m).map(|i| (ax[i] - z[i]).abs()).fold(0.0, f64::max);
            let mut grad = q_s.mul_vec(&x);
            for (g, qi) in grad.iter_mut().zip(&lin_s) {
                *g += qi;
            }
            let aty = st_s.a.mul_vec_t(&y);
            for (g, v) in grad.iter_mut().zip(&aty) {
                *g += v;
            }
            let rd = norm_inf(&grad);
            let prim_scale = norm_inf(&ax).max(norm_inf(&z)).max(1e-6);
            let dual_scale = rd.max(norm_inf(&lin_s)).max(1e-6);
            let ratio = ((rp / prim_scale) / ((rd / dual_scale).max(1e-12)))
                .sqrt()
                .clamp(0.2, 5.0);
            if ratio > 2.0 || ratio < 0.5 {
                for r in rho.iter_mut() {
                    *r = (*r * ratio).clamp(1e-6, 1e6);
                }
                lu = Lu::factor(&build_kkt(&q_s, &st_s.a, SIGMA, &rho))
                    .map_err(|_| QpError::InvalidProblem("KKT matrix became singular".into()))?;
            }
        }
    }

    // final polish attempt at the phase budget
    let y_u = unscale_y(&y);
    if let Some((px, py)) = polish(p, st_orig, &st_s, &z, &y_u) {
        let pk = eval_kkt(p, st_orig, &px, &py);
        if pk.residual() <= tol {
            return Ok(PhaseOutcome::Solved(extract_solution(
                p, st_orig, px, py, &pk, *iters_done, true,
            )));
        }
    }
    Ok(PhaseOutcome::Budget { best_residual })
}

/// Solve the QP. `tol` bounds the unscaled KKT residual of an `Optimal`
/// solution; `max_iter` bounds the total ADMM iteration count across the
/// preconditioning phases. Problems that resist one preconditioning are
/// restarted under the next recipe; the equilibrated run clears most
/// instances within a few hundred iterations, while some degenerate
/// network LPs only settle on the raw data.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    p.validate()?;
    let st_orig = stack(p);

    let recipes = [
        PhaseRecipe {
            ruiz: true,
            rho_eq_factor: 10.0,
        },
        PhaseRecipe {
            ruiz: false,
            rho_eq_factor: 1e3,
        },
        PhaseRecipe {
            ruiz: true,
            rho_eq_factor: 1.0,
        },
    ];
    let shares = [0.2, 0.5, 0.3];
    let mut iters_done = 0usize;
    let mut best_residual = f64::INFINITY;
    for (recipe, share) in recipes.iter().zip(shares) {
        let budget = (((max_iter as f64) * share) as usize)
            .max(500)
            .min(max_iter.saturating_sub(iters_done));
        if budget == 0 {
            break;
        }
        match run_phase(p, &st_orig, recipe, tol, budget, &mut iters_done)? {
            PhaseOutcome::Solved(sol) => return Ok(sol),
            PhaseOutcome::Infeasible => return Err(QpError::Infeasible),
            PhaseOutcome::Unbounded => return Err(QpError::Unbounded),
            PhaseOutcome::Budget { best_residual: r } => {
                best_residual = best_residual.min(r);
            }
        }
    }
    Err(QpError::MaxIter {
        residual: best_residual,
    })
}

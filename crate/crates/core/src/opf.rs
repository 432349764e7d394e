//! DC optimal power flow and reserve-allocation dispatch.
//!
//! Both problems are hour-decoupled convex QPs handed to [`crate::qpsolver`].
//! The plain dispatch returns the full set of dual multipliers; the nodal
//! balance duals are reported as locational marginal prices with the sign
//! convention that `lmp[i][t]` is the marginal cost of serving one extra MW
//! at node `i` in hour `t`.

use crate::grid::GridModel;
use crate::linalg::Mat;
use crate::qpsolver::{solve_qp, QpError, QpProblem, DEFAULT_MAX_ITER, DEFAULT_TOL};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("dispatch infeasible in hour {hour}: load not servable within limits")]
    InfeasibleDispatch { hour: usize },
    #[error("reserve allocation infeasible in hour {hour}: error field not deliverable")]
    InfeasibleReserve { hour: usize },
    #[error("solver failure in hour {hour}: {source}")]
    SolverFailure { hour: usize, source: QpError },
    #[error("profile mismatch: {0}")]
    Profile(String),
}

/// Net load in MW indexed by hour then node: `d[t][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetLoadProfile {
    pub d: Vec<Vec<f64>>,
}

impl NetLoadProfile {
    pub fn new(d: Vec<Vec<f64>>) -> Result<Self, OpfError> {
        if d.is_empty() {
            return Err(OpfError::Profile("empty horizon".into()));
        }
        let n = d[0].len();
        for (t, row) in d.iter().enumerate() {
            if row.len() != n {
                return Err(OpfError::Profile(format!(
                    "hour {t} has {} nodes, expected {n}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(OpfError::Profile(format!("non-finite load in hour {t}")));
            }
        }
        Ok(NetLoadProfile { d })
    }

    pub fn horizon(&self) -> usize {
        self.d.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.d[0].len()
    }
}

/// Full primal/dual solution of the dispatch problem. All per-hour vectors
/// are indexed `[t]` outermost.
#[derive(Debug, Clone)]
pub struct OpfSolution {
    /// Generator outputs in MW, `p_star[t][g]`.
    pub p_star: Vec<Vec<f64>>,
    /// Voltage angles in rad, `theta[t][i]`.
    pub theta: Vec<Vec<f64>>,
    /// Total cost in $ over the horizon, including fixed terms.
    pub cost: f64,
    /// Locational marginal prices in $/MWh, `lmp[t][i]`.
    pub lmp: Vec<Vec<f64>>,
    /// Generator bound duals `(rho_lo, rho_hi)[t][g]`.
    pub rho_lo: Vec<Vec<f64>>,
    pub rho_hi: Vec<Vec<f64>>,
    /// Line flow duals `(beta_lo, beta_hi)[t][l]`.
    pub beta_lo: Vec<Vec<f64>>,
    pub beta_hi: Vec<Vec<f64>>,
    /// Reference-angle dual per hour.
    pub ref_dual: Vec<f64>,
    /// Hours whose duals may be non-unique.
    pub degenerate: Vec<bool>,
}

impl OpfSolution {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

/// Reserve-allocation solution. Cost excludes the tie-break regularizer,
/// which is reported separately.
#[derive(Debug, Clone)]
pub struct ReserveSolution {
    pub p_da: Vec<Vec<f64>>,
    pub r_up: Vec<Vec<f64>>,
    pub r_dn: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub theta_bar: Vec<Vec<f64>>,
    /// Dispatch cost in $ (fixed + linear + quadratic terms of p_da).
    pub cost: f64,
    /// Value of the reserve tie-break term actually incurred.
    pub tie_break_cost: f64,
}

/// Shift/scale constants that map dispatch cost into the loss range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstants {
    pub delta_shift: f64,
    pub delta_scale: f64,
}

impl ScaleConstants {
    pub fn new(delta_shift: f64, delta_scale: f64) -> Self {
        assert!(delta_scale > 0.0, "delta_scale must be positive");
        ScaleConstants {
            delta_shift,
            delta_scale,
        }
    }
}

/// Scaled operating cost `C* = (C - delta_shift) / delta_scale`.
pub fn scaled_cost(cost: f64, sc: ScaleConstants) -> f64 {
    (cost - sc.delta_shift) / sc.delta_scale
}

/// Reserve tie-break price in $/MWh; keeps the reserve split unique without
/// perturbing the dispatch cost materially.
pub const RESERVE_REG: f64 = 1e-4;

fn check_profile(grid: &GridModel, load: &NetLoadProfile) -> Result<(), OpfError> {
    if load.n_nodes() != grid.n_nodes() {
        return Err(OpfError::Profile(format!(
            "profile has {} nodes, grid has {}",
            load.n_nodes(),
            grid.n_nodes()
        )));
    }
    Ok(())
}

/// Build the single-hour dispatch QP. Variable order: `[P_0..P_ng, theta_0..theta_ni]`.
fn build_dispatch_qp(grid: &GridModel, d: &[f64]) -> QpProblem {
    let ng = grid.n_gens();
    let ni = grid.n_nodes();
    let nl = grid.n_lines();
    let n = ng + ni;

    let mut quadratic = Mat::zeros(n, n);
    let mut linear = vec![0.0; n];
    for (g, gen) in grid.generators.iter().enumerate() {
        *quadratic.at_mut(g, g) = 2.0 * gen.c2;
        linear[g] = gen.c1;
    }

    // equality rows: nodal balance per node, then the reference angle
    let mut a_eq = Mat::zeros(ni + 1, n);
    let mut b_eq = vec![0.0; ni + 1];
    for i in 0..ni {
        for g in grid.gens_at(i) {
            *a_eq.at_mut(i, g) = 1.0;
        }
        b_eq[i] = d[i];
    }
    for l in 0..nl {
        let (a, b) = grid.line_endpoints(l);
        let beff = grid.b_eff(l);
        // flow a->b = beff * (theta_a - theta_b) leaves node a, enters node b
        *a_eq.at_mut(a, ng + a) -= beff;
        *a_eq.at_mut(a, ng + b) += beff;
        *a_eq.at_mut(b, ng + b) -= beff;
        *a_eq.at_mut(b, ng + a) += beff;
    }
    *a_eq.at_mut(ni, ng + grid.ref_node) = 1.0;

    // inequality rows: generator boxes then line flows
    let mut a_in = Mat::zeros(ng + nl, n);
    let mut lb = vec![0.0; ng + nl];
    let mut ub = vec![0.0; ng + nl];
    for (g, gen) in grid.generators.iter().enumerate() {
        *a_in.at_mut(g, g) = 1.0;
        lb[g] = 0.0;
        ub[g] = gen.p_max;
    }
    for l in 0..nl {
        let (a, b) = grid.line_endpoints(l);
        let beff = grid.b_eff(l);
        *a_in.at_mut(ng + l, ng + a) = beff;
        *a_in.at_mut(ng + l, ng + b) = -beff;
        lb[ng + l] = -grid.lines[l].s_mw;
        ub[ng + l] = grid.lines[l].s_mw;
    }

    QpProblem {
        quadratic,
        linear,
        a_eq,
        b_eq,
        a_in,
        lb,
        ub,
    }
}

/// Solve the dispatch problem for every hour of `load`.
pub fn solve_dcopf(grid: &GridModel, load: &NetLoadProfile) -> Result<OpfSolution, OpfError> {
    check_profile(grid, load)?;
    let ng = grid.n_gens();
    let ni = grid.n_nodes();
    let nl = grid.n_lines();
    let horizon = load.horizon();

    let fixed_cost: f64 = grid.generators.iter().map(|g| g.c0).sum();
    let mut out = OpfSolution {
        p_star: Vec::with_capacity(horizon),
        theta: Vec::with_capacity(horizon),
        cost: 0.0,
        lmp: Vec::with_capacity(horizon),
        rho_lo: Vec::with_capacity(horizon),
        rho_hi: Vec::with_capacity(horizon),
        beta_lo: Vec::with_capacity(horizon),
        beta_hi: Vec::with_capacity(horizon),
        ref_dual: Vec::with_capacity(horizon),
        degenerate: Vec::with_capacity(horizon),
    };

    for (t, d) in load.d.iter().enumerate() {
        let qp = build_dispatch_qp(grid, d);
        let sol = match solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(s) => s,
            Err(QpError::Infeasible) => return Err(OpfError::InfeasibleDispatch { hour: t }),
            Err(e) => return Err(OpfError::SolverFailure { hour: t, source: e }),
        };
        out.p_star.push(sol.x_star[..ng].to_vec());
        out.theta.push(sol.x_star[ng..].to_vec());
        // marginal cost of load: negate the balance-row duals
        out.lmp.push(sol.nu[..ni].iter().map(|v| -v).collect());
        out.ref_dual.push(-sol.nu[ni]);
        out.rho_lo.push(sol.mu_lo[..ng].to_vec());
        out.rho_hi.push(sol.mu_hi[..ng].to_vec());
        out.beta_lo.push(sol.mu_lo[ng..ng + nl].to_vec());
        out.beta_hi.push(sol.mu_hi[ng..ng + nl].to_vec());
        out.degenerate.push(sol.degenerate);
        out.cost += sol.obj + fixed_cost;
    }
    Ok(out)
}

/// Build the single-hour reserve QP. Variable order:
/// `[P_da (ng), r_up (ng), r_dn (ng), theta (ni), theta_bar (ni)]`.
fn build_reserve_qp(grid: &GridModel, da: &[f64], eps: &[f64]) -> QpProblem {
    let ng = grid.n_gens();
    let ni = grid.n_nodes();
    let nl = grid.n_lines();
    let n = 3 * ng + 2 * ni;
    let off_rup = ng;
    let off_rdn = 2 * ng;
    let off_th = 3 * ng;
    let off_thb = 3 * ng + ni;

    let mut quadratic = Mat::zeros(n, n);
    let mut linear = vec![0.0; n];
    for (g, gen) in grid.generators.iter().enumerate() {
        *quadratic.at_mut(g, g) = 2.0 * gen.c2;
        linear[g] = gen.c1;
        linear[off_rup + g] = RESERVE_REG;
        linear[off_rdn + g] = RESERVE_REG;
    }

    // equalities: DA balance (ni), reserve balance (ni), two reference angles
    let m_eq = 2 * ni + 2;
    let mut a_eq = Mat::zeros(m_eq, n);
    let mut b_eq = vec![0.0; m_eq];
    for i in 0..ni {
        for g in grid.gens_at(i) {
            *a_eq.at_mut(i, g) = 1.0;
            *a_eq.at_mut(ni + i, off_rup + g) = 1.0;
            *a_eq.at_mut(ni + i, off_rdn + g) = -1.0;
        }
        b_eq[i] = da[i];
        b_eq[ni + i] = eps[i];
    }
    for l in 0..nl {
        let (a, b) = grid.line_endpoints(l);
        let beff = grid.b_eff(l);
        *a_eq.at_mut(a, off_th + a) -= beff;
        *a_eq.at_mut(a, off_th + b) += beff;
        *a_eq.at_mut(b, off_th + b) -= beff;
        *a_eq.at_mut(b, off_th + a) += beff;
        *a_eq.at_mut(ni + a, off_thb + a) -= beff;
        *a_eq.at_mut(ni + a, off_thb + b) += beff;
        *a_eq.at_mut(ni + b, off_thb + b) -= beff;
        *a_eq.at_mut(ni + b, off_thb + a) += beff;
    }
    *a_eq.at_mut(2 * ni, off_th + grid.ref_node) = 1.0;
    *a_eq.at_mut(2 * ni + 1, off_thb + grid.ref_node) = 1.0;

    // inequalities: nonnegativity boxes (P_da, r_up, r_dn), combined
    // capacity P_da + r_up - r_dn <= p_max, scheduled line flows, and
    // combined line flows. The scheduled flow limit keeps the DA dispatch
    // deliverable on its own, i.e. reserves cannot net out an overloaded
    // schedule that would never be operable when the error does not occur.
    let m_in = 3 * ng + ng + 2 * nl;
    let mut a_in = Mat::zeros(m_in, n);
    let mut lb = vec![0.0; m_in];
    let mut ub = vec![0.0; m_in];
    for g in 0..ng {
        *a_in.at_mut(g, g) = 1.0;
        ub[g] = f64::INFINITY;
        *a_in.at_mut(ng + g, off_rup + g) = 1.0;
        ub[ng + g] = f64::INFINITY;
        *a_in.at_mut(2 * ng + g, off_rdn + g) = 1.0;
        ub[2 * ng + g] = f64::INFINITY;
        let row = 3 * ng + g;
        *a_in.at_mut(row, g) = 1.0;
        *a_in.at_mut(row, off_rup + g) = 1.0;
        *a_in.at_mut(row, off_rdn + g) = -1.0;
        lb[row] = f64::NEG_INFINITY;
        ub[row] = grid.generators[g].p_max;
    }
    for l in 0..nl {
        let (a, b) = grid.line_endpoints(l);
        let beff = grid.b_eff(l);
        let row = 4 * ng + l;
        *a_in.at_mut(row, off_th + a) = beff;
        *a_in.at_mut(row, off_th + b) = -beff;
        lb[row] = -grid.lines[l].s_mw;
        ub[row] = grid.lines[l].s_mw;
        let row = 4 * ng + nl + l;
        *a_in.at_mut(row, off_th + a) = beff;
        *a_in.at_mut(row, off_th + b) = -beff;
        *a_in.at_mut(row, off_thb + a) = beff;
        *a_in.at_mut(row, off_thb + b) = -beff;
        lb[row] = -grid.lines[l].s_mw;
        ub[row] = grid.lines[l].s_mw;
    }

    QpProblem {
        quadratic,
        linear,
        a_eq,
        b_eq,
        a_in,
        lb,
        ub,
    }
}

/// Solve the reserve-allocation problem: schedule `p_da` against the DA
/// forecast and procure reserves that deliver the error field `eps`.
pub fn solve_reserve_opf(
    grid: &GridModel,
    da_load: &NetLoadProfile,
    eps: &NetLoadProfile,
) -> Result<ReserveSolution, OpfError> {
    check_profile(grid, da_load)?;
    check_profile(grid, eps)?;
    if da_load.horizon() != eps.horizon() {
        return Err(OpfError::Profile(format!(
            "da horizon {} != eps horizon {}",
            da_load.horizon(),
            eps.horizon()
        )));
    }
    let ng = grid.n_gens();
    let ni = grid.n_nodes();
    let horizon = da_load.horizon();
    let fixed_cost: f64 = grid.generators.iter().map(|g| g.c0).sum();

    let mut out = ReserveSolution {
        p_da: Vec::with_capacity(horizon),
        r_up: Vec::with_capacity(horizon),
        r_dn: Vec::with_capacity(horizon),
        theta: Vec::with_capacity(horizon),
        theta_bar: Vec::with_capacity(horizon),
        cost: 0.0,
        tie_break_cost: 0.0,
    };
    for t in 0..horizon {
        let qp = build_reserve_qp(grid, &da_load.d[t], &eps.d[t]);
        let sol = match solve_qp(&qp, DEFAULT_TOL, DEFAULT_MAX_ITER) {
            Ok(s) => s,
            Err(QpError::Infeasible) => return Err(OpfError::InfeasibleReserve { hour: t }),
            Err(e) => return Err(OpfError::SolverFailure { hour: t, source: e }),
        };
        let p_da = sol.x_star[..ng].to_vec();
        let r_up = sol.x_star[ng..2 * ng].to_vec();
        let r_dn = sol.x_star[2 * ng..3 * ng].to_vec();
        let reg: f64 = r_up
            .iter()
            .chain(&r_dn)
            .map(|v| RESERVE_REG * v)
            .sum();
        let dispatch_cost: f64 = grid
            .generators
            .iter()
            .zip(&p_da)
            .map(|(g, &p)| g.c0 + g.c1 * p + g.c2 * p * p)
            .sum();
        let _ = fixed_cost;
        out.cost += dispatch_cost;
        out.tie_break_cost += reg;
        out.theta.push(sol.x_star[3 * ng..3 * ng + ni].to_vec());
        out.theta_bar.push(sol.x_star[3 * ng + ni..].to_vec());
        out.p_da.push(p_da);
        out.r_up.push(r_up);
        out.r_dn.push(r_dn);
    }
    Ok(out)
}

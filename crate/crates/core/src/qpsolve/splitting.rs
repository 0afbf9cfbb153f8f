use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::active::{self, Bound};
use super::{finish, QpError, QpProblem, QpSettings, QpSolution, QpStatus};

const SIGMA: f64 = 1e-6;
const ALPHA: f64 = 1.6;
const RHO_INIT: f64 = 0.1;
const RHO_EQ_FACTOR: f64 = 1e3;
const RHO_FREE: f64 = 1e-6;
const CHECK_EVERY: usize = 10;
const ADAPT_EVERY: usize = 50;
const CERT_TOL: f64 = 1e-6;
const POLISH_STEPS: usize = 25;

struct Rows {
    c: DMatrix<f64>,
    l: DVector<f64>,
    u: DVector<f64>,
    n_eq: usize,
}

fn stack(p: &QpProblem) -> Rows {
    let (n, m) = (p.num_vars(), p.num_eq());
    let mut c = DMatrix::zeros(m + n, n);
    c.rows_mut(0, m).copy_from(&p.a_eq);
    for j in 0..n {
        c[(m + j, j)] = 1.0;
    }
    let mut l = DVector::zeros(m + n);
    let mut u = DVector::zeros(m + n);
    l.rows_mut(0, m).copy_from(&p.b_eq);
    u.rows_mut(0, m).copy_from(&p.b_eq);
    l.rows_mut(m, n).copy_from(&p.lo);
    u.rows_mut(m, n).copy_from(&p.hi);
    Rows { c, l, u, n_eq: m }
}

fn row_rho(rows: &Rows, rho_bar: f64) -> DVector<f64> {
    DVector::from_fn(rows.l.len(), |i, _| {
        if i < rows.n_eq || rows.l[i] == rows.u[i] {
            rho_bar * RHO_EQ_FACTOR
        } else if rows.l[i].is_infinite() && rows.u[i].is_infinite() {
            RHO_FREE
        } else {
            rho_bar
        }
    })
}

fn factor(p: &QpProblem, rows: &Rows, rho: &DVector<f64>) -> Result<Cholesky<f64, Dyn>, QpError> {
    let n = p.num_vars();
    let mut m = &p.h + DMatrix::identity(n, n) * SIGMA;
    let scaled = DMatrix::from_fn(rows.c.nrows(), n, |i, j| rows.c[(i, j)] * rho[i]);
    m += rows.c.transpose() * scaled;
    m.cholesky().ok_or_else(|| QpError::InvalidProblem("reduced KKT matrix is not positive definite".into()))
}

fn project(v: &DVector<f64>, rows: &Rows) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].clamp(rows.l[i], rows.u[i]))
}

fn guess_working_set(p: &QpProblem, rows: &Rows, z: &DVector<f64>, yd: &DVector<f64>) -> Vec<Bound> {
    let m = rows.n_eq;
    (0..p.num_vars())
        .map(|j| {
            let i = m + j;
            if p.lo[j] == p.hi[j] || z[i] - rows.l[i] < -yd[i] {
                Bound::Lower
            } else if rows.u[i] - z[i] < yd[i] {
                Bound::Upper
            } else {
                Bound::Free
            }
        })
        .collect()
}

// Primal infeasibility certificate: C'd ~ 0 and u'd+ + l'd- < 0.
fn primal_certificate(rows: &Rows, d: &DVector<f64>) -> Option<f64> {
    let scale = d.amax();
    if scale <= 1e-12 {
        return None;
    }
    let ctd = (rows.c.transpose() * d).amax() / scale;
    if ctd > CERT_TOL {
        return None;
    }
    let mut support = 0.0;
    for i in 0..d.len() {
        let di = d[i] / scale;
        if di > CERT_TOL {
            if rows.u[i].is_infinite() {
                return None;
            }
            support += rows.u[i] * di;
        } else if di < -CERT_TOL {
            if rows.l[i].is_infinite() {
                return None;
            }
            support += rows.l[i] * di;
        }
    }
    (support < -CERT_TOL).then_some(ctd)
}

// Dual infeasibility: a feasible descent ray along which the cost is flat.
fn unbounded_ray(p: &QpProblem, rows: &Rows, dx: &DVector<f64>) -> bool {
    let scale = dx.amax();
    if scale <= 1e-12 {
        return false;
    }
    let d = dx / scale;
    if (&p.h * &d).amax() > CERT_TOL || p.f.dot(&d) > -CERT_TOL {
        return false;
    }
    let cd = &rows.c * &d;
    (0..cd.len()).all(|i| {
        let lo_ok = rows.l[i].is_infinite() || cd[i] >= -CERT_TOL;
        let hi_ok = rows.u[i].is_infinite() || cd[i] <= CERT_TOL;
        lo_ok && hi_ok
    })
}

pub(crate) fn solve(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let n = p.num_vars();
    let rows = stack(p);
    let m = rows.n_eq;
    let mut rho_bar = RHO_INIT;
    let mut rho = row_rho(&rows, rho_bar);
    let mut chol = factor(p, &rows, &rho)?;

    let mut x = DVector::zeros(n);
    let mut z = project(&DVector::zeros(m + n), &rows);
    let mut yd = DVector::zeros(m + n);
    let mut last_ws: Option<Vec<Bound>> = None;

    for k in 1..=settings.max_iter {
        let rhs = &x * SIGMA - &p.f + rows.c.transpose() * (rho.component_mul(&z) - &yd);
        let xt = chol.solve(&rhs);
        let zt = &rows.c * &xt;
        let x_new = &xt * ALPHA + &x * (1.0 - ALPHA);
        let z_relax = &zt * ALPHA + &z * (1.0 - ALPHA);
        let z_new = project(&(&z_relax + yd.component_div(&rho)), &rows);
        let yd_new = &yd + rho.component_mul(&(&z_relax - &z_new));
        let dy = &yd_new - &yd;
        let dx = &x_new - &x;
        x = x_new;
        z = z_new;
        yd = yd_new;

        if k % CHECK_EVERY != 0 && k != settings.max_iter {
            continue;
        }
        if let Some(certificate) = primal_certificate(&rows, &dy) {
            return Err(QpError::Infeasible { certificate });
        }
        if unbounded_ray(p, &rows, &dx) {
            return Err(QpError::InvalidProblem("objective is unbounded below".into()));
        }
        let ws = guess_working_set(p, &rows, &z, &yd);
        if last_ws.as_ref() != Some(&ws) {
            if let Some(mut sol) = active::solve_from(p, &ws, settings.tol, POLISH_STEPS) {
                sol.iterations += k;
                return Ok(sol);
            }
            last_ws = Some(ws);
        }
        let cx = &rows.c * &x;
        let r_prim = (&cx - &z).amax();
        let hx = &p.h * &x;
        let cty = rows.c.transpose() * &yd;
        let r_dual = (&hx + &p.f + &cty).amax();
        if r_prim <= settings.tol && r_dual <= settings.tol {
            let sol = unpack(p, &x, &yd, m, QpStatus::Optimal, k);
            if sol.residuals.max() <= settings.tol {
                return Ok(sol);
            }
        }
        if k % ADAPT_EVERY == 0 {
            let prim_scale = cx.amax().max(z.amax()).max(1e-30);
            let dual_scale = hx.amax().max(cty.amax()).max(p.f.amax()).max(1e-30);
            let ratio = ((r_prim / prim_scale) / (r_dual / dual_scale).max(1e-30)).sqrt();
            if ratio.is_finite() && !(0.2..=5.0).contains(&ratio) {
                rho_bar = (rho_bar * ratio).clamp(1e-6, 1e6);
                let new_rho = row_rho(&rows, rho_bar);
                // keep the scaled dual z + y/rho continuous
                chol = factor(p, &rows, &new_rho)?;
                rho = new_rho;
            }
        }
    }
    Err(QpError::MaxIterations(Box::new(unpack(p, &x, &yd, m, QpStatus::MaxIterations, settings.max_iter))))
}

fn unpack(p: &QpProblem, x: &DVector<f64>, yd: &DVector<f64>, m: usize, status: QpStatus, k: usize) -> QpSolution {
    let n = p.num_vars();
    finish(p, x.clone(), yd.rows(0, m).into_owned(), yd.rows(m, n).into_owned(), status, k)
}

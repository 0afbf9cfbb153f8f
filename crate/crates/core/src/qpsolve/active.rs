use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use super::{finish, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum Bound {
    Free,
    Lower,
    Upper,
}

/// Fixed variables start at their bound, everything else free.
pub(crate) fn initial_working_set(p: &QpProblem) -> Vec<Bound> {
    (0..p.num_vars()).map(|j| if p.lo[j] == p.hi[j] { Bound::Lower } else { Bound::Free }).collect()
}

/// Primal-dual active-set iteration from `ws`. Returns a solution only if
/// its KKT residuals are all below `tol`.
pub(crate) fn solve_from(p: &QpProblem, ws: &[Bound], tol: f64, max_steps: usize) -> Option<QpSolution> {
    let n = p.num_vars();
    let mut ws = ws.to_vec();
    let mut seen = HashSet::new();
    let eps = 0.1 * tol;
    for step in 0..max_steps {
        if !seen.insert(ws.clone()) {
            return None;
        }
        let (y, nu) = solve_working_set(p, &ws)?;
        let grad = &p.h * &y + &p.f + p.a_eq.transpose() * &nu;
        let mut mu = DVector::zeros(n);
        let mut next = ws.clone();
        for j in 0..n {
            match ws[j] {
                Bound::Free => {
                    if y[j] < p.lo[j] - eps {
                        next[j] = Bound::Lower;
                    } else if y[j] > p.hi[j] + eps {
                        next[j] = Bound::Upper;
                    }
                }
                Bound::Lower => {
                    mu[j] = -grad[j];
                    if p.lo[j] != p.hi[j] && mu[j] > eps {
                        next[j] = Bound::Free;
                    }
                }
                Bound::Upper => {
                    mu[j] = -grad[j];
                    if mu[j] < -eps {
                        next[j] = Bound::Free;
                    }
                }
            }
        }
        if next == ws {
            let sol = finish(p, y, nu, mu, QpStatus::Optimal, step + 1);
            return (sol.residuals.max() <= tol).then_some(sol);
        }
        ws = next;
    }
    None
}

/// Equality-constrained solve with working-set variables pinned to their
/// bound. The quasi-definite regularized system is factored once and
/// iterative refinement recovers the unregularized solution.
fn solve_working_set(p: &QpProblem, ws: &[Bound]) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = p.num_vars();
    let m = p.num_eq();
    let mut y = DVector::zeros(n);
    let free: Vec<usize> = (0..n).filter(|&j| ws[j] == Bound::Free).collect();
    for j in 0..n {
        match ws[j] {
            Bound::Lower => y[j] = p.lo[j],
            Bound::Upper => y[j] = p.hi[j],
            Bound::Free => {}
        }
    }
    let nf = free.len();
    let dim = nf + m;
    if dim == 0 {
        return Some((y, DVector::zeros(0)));
    }
    let hy = &p.h * &y;
    let ay = &p.a_eq * &y;
    let mut k0 = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for (a, &ja) in free.iter().enumerate() {
        for (b, &jb) in free.iter().enumerate() {
            k0[(a, b)] = p.h[(ja, jb)];
        }
        for r in 0..m {
            k0[(a, nf + r)] = p.a_eq[(r, ja)];
            k0[(nf + r, a)] = p.a_eq[(r, ja)];
        }
        rhs[a] = -p.f[ja] - hy[ja];
    }
    for r in 0..m {
        rhs[nf + r] = p.b_eq[r] - ay[r];
    }
    let scale = k0.amax().max(1.0);
    let delta = 1e-9 * scale;
    let mut kd = k0.clone();
    for a in 0..nf {
        kd[(a, a)] += delta;
    }
    for r in 0..m {
        kd[(nf + r, nf + r)] -= delta;
    }
    let lu = kd.lu();
    let mut x = lu.solve(&rhs)?;
    for _ in 0..10 {
        let res = &rhs - &k0 * &x;
        if res.amax() <= 1e-15 * scale * (1.0 + x.amax()) {
            break;
        }
        x += lu.solve(&res)?;
    }
    if !x.iter().all(|v| v.is_finite()) {
        return None;
    }
    for (a, &j) in free.iter().enumerate() {
        y[j] = x[a];
    }
    Some((y, x.rows(nf, m).into_owned()))
}

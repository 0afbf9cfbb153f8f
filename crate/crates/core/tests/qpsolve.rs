use gridmpc::qpsolve::{solve_qp, QpProblem, QpSettings, QpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_problem(rng: &mut ChaCha8Rng, n: usize, m: usize, rank: usize, ridge: f64) -> (QpProblem, DVector<f64>) {
    let mf = DMatrix::from_fn(rank, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut p = QpProblem::new(n);
    p.h = mf.transpose() * &mf + DMatrix::identity(n, n) * ridge;
    p.f = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    p.a_eq = DMatrix::from_fn(m, n, |_, _| rng.gen_range(-1.0..1.0));
    p.lo = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..-0.5));
    p.hi = DVector::from_fn(n, |_, _| rng.gen_range(0.5..1.5));
    let y0 = DVector::from_fn(n, |j, _| rng.gen_range(p.lo[j] * 0.5..p.hi[j] * 0.5));
    p.b_eq = &p.a_eq * &y0;
    (p, y0)
}

// Augmented Lagrangian outer loop over the equalities with an accelerated
// projected-gradient inner solve on the box.
fn projected_gradient_oracle(p: &QpProblem) -> DVector<f64> {
    let n = p.num_vars();
    let c = 50.0;
    let q = &p.h + p.a_eq.transpose() * &p.a_eq * c;
    let lipschitz = q.symmetric_eigenvalues().max();
    let step = 1.0 / lipschitz;
    let project = |v: &DVector<f64>| DVector::from_fn(n, |j, _| v[j].clamp(p.lo[j], p.hi[j]));
    let mut y = project(&DVector::zeros(n));
    let mut nu = DVector::zeros(p.num_eq());
    for _ in 0..200 {
        let lin = &p.f + p.a_eq.transpose() * (&nu - &p.b_eq * c);
        let mut w = y.clone();
        let mut t = 1.0f64;
        for _ in 0..4000 {
            let grad = &q * &w + &lin;
            let next = project(&(&w - grad * step));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            w = &next + (&next - &y) * ((t - 1.0) / t_next);
            y = next;
            t = t_next;
        }
        nu += (&p.a_eq * &y - &p.b_eq) * c;
    }
    y
}

#[test]
fn random_qp_matches_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..3 {
        let (p, _) = random_problem(&mut rng, 20, 5, 15, 0.0);
        let sol = solve_qp(&p, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let oracle = projected_gradient_oracle(&p);
        assert!((&p.a_eq * &oracle - &p.b_eq).amax() < 1e-9);
        let (a, b) = (sol.objective, p.objective(&oracle));
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "solver {a} oracle {b}");
    }
}

#[test]
fn reported_residuals_match_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (p, _) = random_problem(&mut rng, 12, 3, 8, 0.0);
    let s = solve_qp(&p, &QpSettings::default()).unwrap();
    let (y, nu, mu) = (&s.y, &s.eq_multipliers, &s.bound_multipliers);
    let mut stat: f64 = 0.0;
    for j in 0..12 {
        let mut g = p.f[j] + mu[j];
        for k in 0..12 {
            g += p.h[(j, k)] * y[k];
        }
        for r in 0..3 {
            g += p.a_eq[(r, j)] * nu[r];
        }
        stat = stat.max(g.abs());
    }
    let mut eq: f64 = 0.0;
    for r in 0..3 {
        let ay: f64 = (0..12).map(|j| p.a_eq[(r, j)] * y[j]).sum();
        eq = eq.max((ay - p.b_eq[r]).abs());
    }
    let mut comp: f64 = 0.0;
    for j in 0..12 {
        let slack = if mu[j] > 0.0 { p.hi[j] - y[j] } else { y[j] - p.lo[j] };
        comp = comp.max((mu[j] * slack).abs());
        assert!(y[j] >= p.lo[j] && y[j] <= p.hi[j]);
    }
    assert!((s.residuals.stationarity - stat).abs() <= 1e-12);
    assert!((s.residuals.primal_eq - eq).abs() <= 1e-12);
    assert!((s.residuals.complementarity - comp).abs() <= 1e-12);
    assert!(s.residuals.max() <= 1e-9);
}

#[test]
fn identical_input_identical_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, _) = random_problem(&mut rng, 15, 4, 10, 0.0);
    let a = solve_qp(&p, &QpSettings::default()).unwrap();
    let b = solve_qp(&p, &QpSettings::default()).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn no_feasible_point_does_better(seed in any::<u64>(), n in 2usize..8, m in 0usize..3, w in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, y0) = random_problem(&mut rng, n, m.min(n - 1), n.saturating_sub(1).max(1), 0.0);
        let s = solve_qp(&p, &QpSettings::default()).unwrap();
        prop_assert_eq!(s.status, QpStatus::Optimal);
        prop_assert!(s.residuals.max() <= 1e-9);
        // y0 and points on the segment towards y* are feasible
        let mid = &y0 * w + &s.y * (1.0 - w);
        prop_assert!(s.objective <= p.objective(&y0) + 1e-9);
        prop_assert!(s.objective <= p.objective(&mid) + 1e-9);
    }

    #[test]
    fn argmin_ignores_cost_scale(seed in any::<u64>(), n in 2usize..8, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // ridge 0.1 bounds the argmin error by 10x the KKT residual
        let (p, _) = random_problem(&mut rng, n, 1, n, 0.1);
        let a = solve_qp(&p, &QpSettings::default()).unwrap();
        let b = solve_qp(&p.scaled_cost(c), &QpSettings::default()).unwrap();
        prop_assert!((&a.y - &b.y).amax() <= 1e-8, "{} vs {}", a.y, b.y);
    }
}

use nalgebra::{DMatrix, DVector};
use paraprec::bench::{assemble_adr, nearest_weights, shepard_weights, synthetic_multiparam, SyntheticSpec};
use paraprec::eim::{build_surrogate, eim, online_eval, tabulate_products, uniform_grid, DEFAULT_REL_TOL};
use paraprec::greedy::{greedy_frob, GreedyOptions};
use paraprec::operators::{AffineOperator, CoeffFn, NormMatrix};
use paraprec::precond::{
    assemble_normal_eq, solve_coefficients, solve_nonneg, solve_unconstrained, spectral_constants, ConstraintMode, InverseBasis,
};
use paraprec::reduction::{confidence_interval, ReducedModel};
use paraprec::sketch::{coherence_err, welch_bound, SketchKind, SketchMatrix};
use paraprec::sparse::CsrMatrix;
use proptest::prelude::*;
use std::sync::Arc;

fn dense(n: usize, vals: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| vals[(i * n + j) % vals.len()])
}

/// SPD part plus skew part; the symmetric part stays positive definite.
fn pd_sym_part(n: usize, vals: &[f64], shift: f64) -> DMatrix<f64> {
    let g = dense(n, vals);
    let skew = (&g - g.transpose()) * 0.5;
    &g * g.transpose() / n as f64 + DMatrix::identity(n, n) * shift + skew
}

fn affine(n: usize, v0: &[f64], v1: &[f64]) -> AffineOperator {
    AffineOperator::new(
        vec![CsrMatrix::from_dense(&pd_sym_part(n, v0, 0.3)), CsrMatrix::from_dense(&pd_sym_part(n, v1, 0.0))],
        vec![CoeffFn::constant(1.0), CoeffFn::Monomial { coord: 0, power: 1, scale: 1.0 }],
        1,
    )
    .unwrap()
}

fn vals(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn small_points() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(0usize..20, 1..=3).prop_map(|s| s.into_iter().map(|k| k as f64 / 19.0).collect())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn factorization_residual_bounded_by_condition(n in 4usize..40, v in vals(97), seed in 0u64..1000) {
        let a = pd_sym_part(n, &v, 0.1);
        let op = AffineOperator::constant(CsrMatrix::from_dense(&a)).unwrap();
        let f = op.factorize_at(&[0.0]).unwrap();
        let sv = a.singular_values();
        let kappa = sv.max() / sv.min();
        let mut rng = paraprec::rng::rng_from_seed(seed);
        for _ in 0..20 {
            let y: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let ny = y.iter().map(|x| x * x).sum::<f64>().sqrt();
            let y: Vec<f64> = y.iter().map(|x| x / ny).collect();
            let x = f.apply_inverse(&y, false).unwrap();
            let r = &a * DVector::from_column_slice(&x) - DVector::from_column_slice(&y);
            prop_assert!(r.norm() <= 1e-8 * kappa, "{} vs κ {}", r.norm(), kappa);
        }
    }

    #[test]
    fn operator_linear_in_coefficients(n in 2usize..12, v0 in vals(31), v1 in vals(29), c in -3.0f64..3.0, xi in 0.0f64..1.0) {
        let op = affine(n, &v0, &v1);
        let coeffs = op.coefficients(&[xi]).unwrap();
        let scaled: Vec<f64> = coeffs.iter().map(|k| k * c).collect();
        let a = op.combine(&coeffs).unwrap().to_dense();
        let b = op.combine(&scaled).unwrap().to_dense();
        prop_assert!((b - a * c).amax() <= 1e-12 * (1.0 + c.abs()));
    }

    #[test]
    fn xnorm_pythagoras(n in 2usize..15, g in vals(53), v in vals(15), w in vals(15)) {
        let r = pd_sym_part(n, &g, 0.5);
        let r = (&r + r.transpose()) * 0.5;
        let norm = NormMatrix::new(CsrMatrix::from_dense(&r)).unwrap();
        let v = &v[..n];
        let w0 = &w[..n];
        let vv = norm.inner(v, v).unwrap();
        prop_assume!(vv > 1e-6);
        let c = norm.inner(v, w0).unwrap() / vv;
        let w: Vec<f64> = w0.iter().zip(v).map(|(a, b)| a - c * b).collect();
        let s: Vec<f64> = v.iter().zip(&w).map(|(a, b)| a + b).collect();
        let lhs = norm.xnorm(v).unwrap().powi(2) + norm.xnorm(&w).unwrap().powi(2);
        let rhs = norm.xnorm(&s).unwrap().powi(2);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs));
    }

    #[test]
    fn sketch_determinism(kind in prop::sample::select(vec![SketchKind::RescaledRademacher, SketchKind::Psrht, SketchKind::RescaledPartialHadamard]),
                          n in 2usize..70, k in 1usize..16, seed in any::<u64>()) {
        prop_assume!(k <= n);
        let a = SketchMatrix::new(kind, n, k, seed).unwrap();
        let b = SketchMatrix::new(kind, n, k, seed).unwrap();
        prop_assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn partial_hadamard_coherence_above_welch(n in 2usize..80, k in 1usize..80) {
        prop_assume!(k <= n);
        let v = SketchMatrix::new(SketchKind::RescaledPartialHadamard, n, k, 0).unwrap();
        let unit_rows = (0..n).all(|i| (v.matrix().row(i).norm_squared() - 1.0).abs() < 1e-12);
        if unit_rows {
            prop_assert!(coherence_err(&v).unwrap() >= welch_bound(n, k) - 1e-12);
        }
    }

    #[test]
    fn objective_ordering_over_constraint_sets(n in 6usize..25, v0 in vals(41), v1 in vals(37), pts in small_points(), xi in 0.0f64..1.0, f in 1.1f64..4.0) {
        let op = affine(n, &v0, &v1);
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| vec![p]).collect();
        let basis = InverseBasis::from_operator(&op, &pts).unwrap();
        let v = SketchMatrix::new(SketchKind::RescaledRademacher, n, 8, 3).unwrap();
        let ne = assemble_normal_eq(&op.eval(&[xi]).unwrap(), &basis, &v).unwrap();
        let sc = spectral_constants(&basis, 1e-10).unwrap();
        let u = solve_unconstrained(&ne).objective;
        let nn = solve_nonneg(&ne).objective;
        let k = solve_coefficients(&ne, ConstraintMode::Kappa(sc.kappa_threshold() * f), Some(&sc)).unwrap().objective;
        let slack = 1e-8 * ne.vnorm2;
        prop_assert!(u <= k + slack, "{} {}", u, k);
        prop_assert!(k <= nn + slack, "{} {}", k, nn);
    }

    #[test]
    fn nonneg_coercivity_bound(n in 6usize..25, v0 in vals(41), v1 in vals(37), pts in small_points(), xi in 0.0f64..1.0) {
        let op = affine(n, &v0, &v1);
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| vec![p]).collect();
        let basis = InverseBasis::from_operator(&op, &pts).unwrap();
        let v = SketchMatrix::new(SketchKind::Psrht, n, 8, 5).unwrap();
        let ne = assemble_normal_eq(&op.eval(&[xi]).unwrap(), &basis, &v).unwrap();
        let sol = solve_nonneg(&ne);
        prop_assert!(sol.lambda.iter().all(|l| *l >= 0.0));
        prop_assume!(sol.lambda.iter().any(|l| *l > 0.0));
        let sc = spectral_constants(&basis, 1e-10).unwrap();
        let p = pts.iter().zip(&sol.lambda).fold(DMatrix::zeros(n, n), |acc, (x, l)| {
            acc + op.eval(x).unwrap().to_dense().try_inverse().unwrap() * *l
        });
        let lo = ((&p + p.transpose()) * 0.5).symmetric_eigenvalues().min();
        let bound: f64 = sol.lambda.iter().zip(&sc.gamma_minus).map(|(l, g)| l * g).sum();
        prop_assert!(lo >= bound - 1e-8, "{} < {}", lo, bound);
    }

    #[test]
    fn eim_interpolates_at_magic_points(rows in 1usize..6, g in vals(120)) {
        let grid = uniform_grid(0.0, 1.0, 20);
        let table = DMatrix::from_fn(rows, 20, |i, t| {
            let x = grid[t][0];
            g[i * 20 + t] + (i as f64 + 1.0) * x.powi(i as i32)
        });
        let m = eim(&table, &grid, DEFAULT_REL_TOL).unwrap();
        let scale = table.amax();
        for (k, &t) in m.magic_grid_indices.iter().enumerate() {
            let psi = m.coefficients_from(&grid[t], |i| table[(i, t)]);
            prop_assert!((psi[k] - 1.0).abs() < 1e-12);
            for f in 0..rows {
                let approx: f64 = psi.iter().zip(&m.magic_grid_indices).map(|(p, &tt)| p * table[(f, tt)]).sum();
                prop_assert!((approx - table[(f, t)]).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn eim_residuals_non_increasing_on_benchmark_family(speed in 20.0f64..100.0, ng in 20usize..300) {
        let grid = uniform_grid(0.0, 1.0, ng);
        let c = DMatrix::from_fn(3, ng, |k, t| {
            let x = 2.0 * std::f64::consts::PI * grid[t][0];
            [1.0, speed * x.cos(), speed * x.sin()][k]
        });
        for table in [c.clone(), tabulate_products(&c)] {
            let m = eim(&table, &grid, DEFAULT_REL_TOL).unwrap();
            prop_assert!(m.residuals.windows(2).all(|w| w[1] <= w[0]), "{:?}", m.residuals);
        }
    }

    #[test]
    fn surrogate_matches_direct_assembly(n in 6usize..20, v0 in vals(41), v1 in vals(37), pts in small_points(), t in 0usize..30) {
        let op = affine(n, &v0, &v1);
        let grid = uniform_grid(0.0, 1.0, 30);
        let pts: Vec<Vec<f64>> = pts.into_iter().map(|p| vec![p]).collect();
        let basis = InverseBasis::from_operator(&op, &pts).unwrap();
        let v = SketchMatrix::new(SketchKind::RescaledRademacher, n, 6, 9).unwrap();
        let sur = build_surrogate(&op, &basis, &v, &grid).unwrap();
        let online = online_eval(&sur, &op, &grid[t]).unwrap();
        let direct = assemble_normal_eq(&op.eval(&grid[t]).unwrap(), &basis, &v).unwrap();
        let sm = direct.m.amax().max(1e-300);
        prop_assert!((&online.m - &direct.m).amax() <= 1e-8 * sm);
        let ss = direct.s.iter().map(|x| x.abs()).fold(1e-300, f64::max);
        prop_assert!(online.s.iter().zip(&direct.s).all(|(a, b)| (a - b).abs() <= 1e-8 * ss));
    }

    #[test]
    fn reduced_basis_is_orthonormal(n in 5usize..30, g in vals(61), cols in prop::collection::vec(vals(30), 1..5)) {
        let r = pd_sym_part(n, &g, 0.5);
        let r = (&r + r.transpose()) * 0.5;
        let norm = Arc::new(NormMatrix::new(CsrMatrix::from_dense(&r)).unwrap());
        let op = affine(n, &g, &g);
        let rhs = paraprec::operators::AffineVector::constant(vec![1.0; n]);
        let cols: Vec<Vec<f64>> = cols.into_iter().map(|c| c[..n].to_vec()).collect();
        let model = ReducedModel::from_columns(&op, &rhs, norm, &cols).unwrap();
        let u = model.basis_matrix();
        let gram = u.transpose() * &r * &u;
        prop_assert!((gram - DMatrix::identity(model.rank(), model.rank())).amax() <= 1e-10);
    }

    #[test]
    fn interpolation_weights_partition_unity(pts in prop::collection::vec(vals(2), 1..8), xi in vals(2), s in 0.5f64..4.0) {
        for w in [shepard_weights(&xi, &pts, s).unwrap(), nearest_weights(&xi, &pts)] {
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn confidence_interval_holds_fraction(v in prop::collection::vec(0.01f64..100.0, 1..60), p in 0.5f64..1.0) {
        let (lo, hi) = confidence_interval(&v, p);
        let inside = v.iter().filter(|x| **x >= lo && **x <= hi).count();
        prop_assert!(inside as f64 >= (p * v.len() as f64).ceil() - 1e-9);
    }

    #[test]
    fn adr_operator_is_one_periodic(xi in 0.0f64..1.0) {
        let p = assemble_adr(5, 50.0).unwrap();
        let a = p.op.eval(&[xi]).unwrap().to_dense();
        let b = p.op.eval(&[xi + 1.0]).unwrap().to_dense();
        prop_assert!((a - b).amax() <= 1e-9);
    }
}

#[test]
fn greedy_invariants_on_synthetic_problem() {
    let spec = SyntheticSpec { d: 2, n: 36, num_terms: 3, grid_size: 40, seed: 4 };
    let p = synthetic_multiparam(&spec).unwrap();
    let n = p.dim();
    for mode in [ConstraintMode::Unconstrained, ConstraintMode::Nonneg] {
        let v = SketchMatrix::new(SketchKind::Psrht, n, 32, 1).unwrap();
        let pc = greedy_frob(&p.op, &p.grid, v, 6, mode, &GreedyOptions::default()).unwrap();
        let pts = pc.points();
        for i in 0..pts.len() {
            for j in 0..i {
                assert_ne!(pts[i], pts[j]);
            }
            let r = pc.sketched_residual(&pts[i]).unwrap();
            assert!(r <= 1e-6 * (n as f64).sqrt(), "{mode}: residual {r} at selected point");
        }
        assert!(pc.history.windows(2).all(|w| w[1].sup_score <= w[0].sup_score * (1.0 + 1e-9)));
        if mode == ConstraintMode::Nonneg {
            for xi in p.grid.iter().step_by(4) {
                let lam = pc.coefficients(xi).unwrap().lambda;
                let pm = pts.iter().zip(&lam).fold(DMatrix::zeros(n, n), |acc, (x, l)| {
                    acc + p.op.eval(x).unwrap().to_dense().try_inverse().unwrap() * *l
                });
                let lo = ((&pm + pm.transpose()) * 0.5).symmetric_eigenvalues().min();
                assert!(lo > 0.0, "symmetric part not positive definite at {xi:?}");
            }
        }
    }
}

#[test]
fn adr_unpreconditioned_conditioning_near_1e4() {
    let p = assemble_adr(40, 50.0).unwrap();
    let mut sup = 0.0f64;
    for xi in p.grid.iter().step_by(25) {
        let a = p.op.eval(xi).unwrap();
        let (k, _) = paraprec::precond::condition_number(&a, None, 1e-4, 500).unwrap();
        sup = sup.max(k);
    }
    assert!((5e3..=2e4).contains(&sup), "sup κ(A) = {sup}");
}

mod oracle;

use boldkit::design::{ColumnKind, DesignMatrix};
use boldkit::glm::{fit_glm, t_contrast, Sidedness};
use boldkit::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn random_problem(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let p = rng.random_range(1..=6);
    let n = rng.random_range(p + 3..=60);
    let v = rng.random_range(1..=50);
    let mut x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for row in x.iter_mut() {
        row[p - 1] = 1.0;
    }
    let ys = (0..v)
        .map(|_| {
            let b: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s: f64 = rng.random_range(0.1..3.0);
            (0..n)
                .map(|r| (0..p).map(|j| x[r][j] * b[j]).sum::<f64>() + s * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    (x, ys)
}

fn design(x: &[Vec<f64>]) -> DesignMatrix {
    let n = x.len();
    let p = x[0].len();
    let m = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let mut labels = vec![ColumnKind::Task; p];
    labels[p - 1] = ColumnKind::Intercept;
    DesignMatrix::new(m, labels, 1.0).unwrap()
}

#[test]
fn matches_normal_equation_oracle_on_random_problems() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (x, ys) = random_problem(&mut rng);
        let (n, p) = (x.len(), x[0].len());
        let ymat = DMatrix::from_fn(n, ys.len(), |i, v| ys[v][i]);
        let fit = fit_glm(&ymat, &design(&x)).unwrap();
        assert_eq!(fit.dof, n - p);
        let c: Vec<f64> = (0..p).map(|j| if j == 0 { 1.0 } else { 0.5 * j as f64 }).collect();
        let maps = t_contrast(&fit, &c, Sidedness::OneSided).unwrap();
        for (v, y) in ys.iter().enumerate() {
            let o = oracle::ols(&x, y);
            for j in 0..p {
                let b = fit.beta[(j, v)];
                assert!(rel(b, o.beta[j]) < 1e-8 || (b - o.beta[j]).abs() < 1e-12, "case {case} beta");
            }
            let t = oracle::t_statistic(&o, &c);
            assert!(rel(maps.t[v], t) < 1e-8, "case {case} voxel {v}: t {} vs {t}", maps.t[v]);
            let pv = oracle::t_upper_tail(t, o.dof as f64);
            assert!(rel(maps.p[v], pv) < 1e-8, "case {case} voxel {v}: p {} vs {pv} (t = {t})", maps.p[v]);
        }
    }
}

#[test]
fn two_sided_p_doubles_the_smaller_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (x, ys) = random_problem(&mut rng);
    let ymat = DMatrix::from_fn(x.len(), ys.len(), |i, v| ys[v][i]);
    let fit = fit_glm(&ymat, &design(&x)).unwrap();
    let mut c = vec![0.0; x[0].len()];
    c[0] = 1.0;
    let one = t_contrast(&fit, &c, Sidedness::OneSided).unwrap();
    let two = t_contrast(&fit, &c, Sidedness::TwoSided).unwrap();
    for v in 0..ys.len() {
        let tail = one.p[v].min(1.0 - one.p[v]);
        assert!((two.p[v] - (2.0 * tail).min(1.0)).abs() < 1e-12);
    }
}

#[test]
fn rank_deficient_design_and_inestimable_contrast() {
    // duplicate column: minimum-norm split, dof from rank
    let n = 30;
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 | 1 => (i as f64 * 0.3).sin(),
        _ => 1.0,
    });
    let labels = vec![ColumnKind::Task, ColumnKind::Task, ColumnKind::Intercept];
    let d = DesignMatrix::new(x, labels, 1.0).unwrap();
    assert_eq!(d.rank(), 2);
    let y = DMatrix::from_fn(n, 1, |i, _| 4.0 * (i as f64 * 0.3).sin() + 2.0 + 0.01 * ((i * 7) % 5) as f64);
    let fit = fit_glm(&y, &d).unwrap();
    assert_eq!(fit.dof, n - 2);
    assert!((fit.beta[(0, 0)] - fit.beta[(1, 0)]).abs() < 1e-9);
    assert!(t_contrast(&fit, &[1.0, 1.0, 0.0], Sidedness::OneSided).is_ok());
    assert!(matches!(
        t_contrast(&fit, &[1.0, -1.0, 0.0], Sidedness::OneSided),
        Err(Error::InestimableContrast)
    ));
}

#[test]
fn no_residual_degrees_of_freedom() {
    let x = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 } else { 0.1 });
    let d = DesignMatrix::new(x, vec![ColumnKind::Task, ColumnKind::Task, ColumnKind::Intercept], 1.0).unwrap();
    let y = DMatrix::from_element(3, 2, 1.0);
    assert!(matches!(fit_glm(&y, &d), Err(Error::DegreesOfFreedom { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn t_scales_with_signal_and_is_shift_invariant(seed in 0u64..10_000, k in 0.5f64..4.0, shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, ys) = random_problem(&mut rng);
        let n = x.len();
        let d = design(&x);
        let y = DMatrix::from_fn(n, 1, |i, _| ys[0][i]);
        let scaled = y.map(|v| k * v);
        let shifted = y.map(|v| v + shift);
        let mut c = vec![0.0; x[0].len()];
        c[0] = 1.0;
        prop_assume!(x[0].len() > 1);
        let t0 = t_contrast(&fit_glm(&y, &d).unwrap(), &c, Sidedness::OneSided).unwrap().t[0];
        let t1 = t_contrast(&fit_glm(&scaled, &d).unwrap(), &c, Sidedness::OneSided).unwrap().t[0];
        let t2 = t_contrast(&fit_glm(&shifted, &d).unwrap(), &c, Sidedness::OneSided).unwrap().t[0];
        prop_assert!((t0 - t1).abs() <= 1e-7 * t0.abs().max(1.0));
        prop_assert!((t0 - t2).abs() <= 1e-6 * t0.abs().max(1.0));
    }
}

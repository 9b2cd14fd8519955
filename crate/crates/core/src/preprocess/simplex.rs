//! Derivative-free Nelder–Mead minimization.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    /// Initial step along each coordinate.
    pub step: f64,
    /// Stop when `f_worst - f_best <= rel_tol · (|f_best| + abs_floor)`.
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub max_iter: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            step: 1.0,
            rel_tol: 1e-8,
            abs_floor: 1e-30,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

/// Minimize `f` from `x0`; returns the best vertex found.
///
/// A vertex is only replaced by a strictly better one, so a start point that
/// is already a global minimum is returned unchanged.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], opts: &SimplexOptions) -> Result<SimplexResult>
where
    F: FnMut(&[f64]) -> f64,
{
    const ALPHA: f64 = 1.0;
    const GAMMA: f64 = 2.0;
    const RHO: f64 = 0.5;
    const SIGMA: f64 = 0.5;

    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("cost is not finite at {x:?}")))
        }
    };

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.step;
        pts.push(p);
    }
    let mut vals = Vec::with_capacity(n + 1);
    for p in &pts {
        vals.push(eval(p, &mut evals)?);
    }

    let mut iter = 0;
    while iter < opts.max_iter {
        // stable ordering keeps the original start vertex first among ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        if vals[n] - vals[0] <= opts.rel_tol * (vals[0].abs() + opts.abs_floor) {
            break;
        }
        iter += 1;

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let xr = along(-ALPHA);
        let fr = eval(&xr, &mut evals)?;
        if fr < vals[0] {
            let xe = along(-GAMMA);
            let fe = eval(&xe, &mut evals)?;
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[n] {
            let xc = along(-RHO);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        } else {
            let xc = along(RHO);
            let fc = eval(&xc, &mut evals)?;
            (xc, fc)
        };
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        // shrink towards the best vertex
        let best = pts[0].clone();
        for i in 1..=n {
            let p: Vec<f64> = best
                .iter()
                .zip(&pts[i])
                .map(|(b, x)| b + SIGMA * (x - b))
                .collect();
            vals[i] = eval(&p, &mut evals)?;
            pts[i] = p;
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
        .unwrap_or(0);
    Ok(SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        iterations: iter,
        evaluations: evals,
    })
}

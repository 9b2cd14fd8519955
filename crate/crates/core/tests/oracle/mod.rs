//! Independent reference implementations used to check the library.
//!
//! Everything here is written from the defining formulas with plain loops and
//! shares no code with the crate under test.

#![allow(dead_code, clippy::needless_range_loop, clippy::too_many_arguments)]

use statrs::function::gamma::ln_gamma;

/// Inverse by Gauss–Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        let d = m[col][col];
        for v in m[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    Some(m.into_iter().map(|r| r[n..].to_vec()).collect())
}

pub struct OlsOracle {
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub dof: usize,
    pub xtx_inv: Vec<Vec<f64>>,
}

/// Least squares through the normal equations; `x` is row-major `N × P` and
/// must have full column rank.
pub fn ols(x: &[Vec<f64>], y: &[f64]) -> OlsOracle {
    let n = x.len();
    let p = x[0].len();
    let mut xtx = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for r in 0..n {
        for i in 0..p {
            xty[i] += x[r][i] * y[r];
            for j in 0..p {
                xtx[i][j] += x[r][i] * x[r][j];
            }
        }
    }
    let inv = gauss_jordan_inverse(&xtx).expect("full-rank design");
    let beta: Vec<f64> = (0..p).map(|i| (0..p).map(|j| inv[i][j] * xty[j]).sum()).collect();
    let rss: f64 = (0..n)
        .map(|r| {
            let fit: f64 = (0..p).map(|j| x[r][j] * beta[j]).sum();
            (y[r] - fit).powi(2)
        })
        .sum();
    OlsOracle {
        beta,
        sigma2: rss / (n - p) as f64,
        dof: n - p,
        xtx_inv: inv,
    }
}

pub fn t_statistic(o: &OlsOracle, c: &[f64]) -> f64 {
    let p = c.len();
    let effect: f64 = (0..p).map(|i| c[i] * o.beta[i]).sum();
    let mut q = 0.0;
    for i in 0..p {
        for j in 0..p {
            q += c[i] * o.xtx_inv[i][j] * c[j];
        }
    }
    effect / (o.sigma2 * q).sqrt()
}

pub fn t_density(x: f64, nu: f64) -> f64 {
    (ln_gamma((nu + 1.0) / 2.0)
        - ln_gamma(nu / 2.0)
        - 0.5 * (nu * std::f64::consts::PI).ln()
        - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln())
    .exp()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return left + right + diff / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`, recursing at
/// most `depth` levels.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(f, a, b, fa, fm, fb, whole, tol, depth)
}

/// `P(T > t)` for Student's t with `nu` degrees of freedom, by quadrature of
/// the density.
pub fn t_upper_tail(t: f64, nu: f64) -> f64 {
    if t < 0.0 {
        return 1.0 - t_upper_tail(-t, nu);
    }
    if t < 1.0 {
        return 0.5 - integrate(&|x| t_density(x, nu), 0.0, t, 1e-14, 30);
    }
    // x = t / s maps [t, inf) onto (0, 1]
    let g = |s: f64| {
        if s <= 0.0 {
            0.0
        } else {
            t_density(t / s, nu) * t / (s * s)
        }
    };
    // scale the tolerance to the size of the answer
    let rough = integrate(&g, 0.0, 1.0, 0.0, 5);
    integrate(&g, 0.0, 1.0, rough * 1e-12, 30)
}

/// Benjamini–Hochberg rejections found by trying every k: the largest k with
/// at least k p-values at or below `k·q/m` fixes the cutoff.
pub fn bh_bruteforce(p: &[f64], q: f64) -> Vec<bool> {
    let m = p.len();
    let mut best = 0;
    for k in 1..=m {
        let cut = k as f64 * q / m as f64;
        if p.iter().filter(|&&v| v <= cut).count() >= k {
            best = k;
        }
    }
    if best == 0 {
        return vec![false; m];
    }
    let cut = best as f64 * q / m as f64;
    p.iter().map(|&v| v <= cut).collect()
}

/// Component label per voxel (usize::MAX outside the mask) by depth-first
/// flood fill on coordinates. `max_nonzero` is 1, 2 or 3 for 6-, 18- and
/// 26-connectivity.
pub fn flood_fill_labels(mask: &[bool], dims: [usize; 3], max_nonzero: usize) -> Vec<usize> {
    let [nx, ny, nz] = dims;
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    let mut label = vec![usize::MAX; mask.len()];
    let mut next = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let s = idx(x, y, z);
                if !mask[s] || label[s] != usize::MAX {
                    continue;
                }
                let mut stack = vec![(x, y, z)];
                label[s] = next;
                while let Some((cx, cy, cz)) = stack.pop() {
                    for dz in -1i64..=1 {
                        for dy in -1i64..=1 {
                            for dx in -1i64..=1 {
                                let nzc = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                                if nzc == 0 || nzc > max_nonzero {
                                    continue;
                                }
                                let (ax, ay, az) = (cx as i64 + dx, cy as i64 + dy, cz as i64 + dz);
                                if ax < 0 || ay < 0 || az < 0 || ax >= nx as i64 || ay >= ny as i64 || az >= nz as i64 {
                                    continue;
                                }
                                let j = idx(ax as usize, ay as usize, az as usize);
                                if mask[j] && label[j] == usize::MAX {
                                    label[j] = next;
                                    stack.push((ax as usize, ay as usize, az as usize));
                                }
                            }
                        }
                    }
                }
                next += 1;
            }
        }
    }
    label
}

/// Components as sorted member lists, ordered by smallest member.
pub fn partition_from_labels(labels: &[usize]) -> Vec<Vec<usize>> {
    let n = labels.iter().filter(|&&l| l != usize::MAX).map(|&l| l + 1).max().unwrap_or(0);
    let mut parts = vec![Vec::new(); n];
    for (i, &l) in labels.iter().enumerate() {
        if l != usize::MAX {
            parts[l].push(i);
        }
    }
    parts.sort_by_key(|p| p[0]);
    parts
}

/// Sample `i` of the microtime grid is inside some block.
pub fn boxcar_by_intervals(blocks: &[(f64, f64)], dt: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            if blocks.iter().any(|&(on, dur)| t >= on && t < on + dur) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// `out[n] = Σ_k box[n·os − k]·kernel[k]`.
pub fn direct_convolution(boxcar: &[f64], kernel: &[f64], oversample: usize) -> Vec<f64> {
    let n_out = boxcar.len() / oversample;
    (0..n_out)
        .map(|n| {
            let i = n * oversample;
            let mut s = 0.0;
            for (k, &h) in kernel.iter().enumerate() {
                if k <= i {
                    s += boxcar[i - k] * h;
                }
            }
            s
        })
        .collect()
}

/// Double-gamma HRF value at time `t` (unnormalized).
pub fn hrf_formula(t: f64, p: [f64; 5]) -> f64 {
    let [d1, d2, s1, s2, ratio] = p;
    let gpdf = |x: f64, k: f64, theta: f64| {
        if x <= 0.0 {
            0.0
        } else {
            ((k - 1.0) * x.ln() - x / theta - ln_gamma(k) - k * theta.ln()).exp()
        }
    };
    gpdf(t, d1 / s1, s1) - gpdf(t, d2 / s2, s2) / ratio
}

/// Mean over ROI voxels of the population SD in the clipped cube of half
/// width `r`, by explicit coordinate loops.
pub fn lsd_oracle(map: &[f64], dims: [usize; 3], roi: &[usize], r: i64) -> f64 {
    let [nx, ny, nz] = dims;
    let mut acc = 0.0;
    for &v in roi {
        let (x, y, z) = ((v % nx) as i64, ((v / nx) % ny) as i64, (v / (nx * ny)) as i64);
        let mut vals = Vec::new();
        for zz in z - r..=z + r {
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    if xx >= 0 && yy >= 0 && zz >= 0 && xx < nx as i64 && yy < ny as i64 && zz < nz as i64 {
                        vals.push(map[(xx + nx as i64 * (yy + ny as i64 * zz)) as usize]);
                    }
                }
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        acc += (vals.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    }
    acc / roi.len() as f64
}

/// Mean absolute difference over every unordered ROI pair at city-block
/// distance 1.
pub fn tv_oracle(map: &[f64], dims: [usize; 3], roi: &[usize]) -> f64 {
    let [nx, ny, _] = dims;
    let c = |v: usize| [(v % nx) as i64, ((v / nx) % ny) as i64, (v / (nx * ny)) as i64];
    let mut sum = 0.0;
    let mut n = 0;
    for (i, &a) in roi.iter().enumerate() {
        for &b in &roi[i + 1..] {
            let (ca, cb) = (c(a), c(b));
            let d: i64 = (0..3).map(|k| (ca[k] - cb[k]).abs()).sum();
            if d == 1 {
                sum += (map[a] - map[b]).abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Rotation about one axis (0 = x, 1 = y, 2 = z), row-major.
pub fn axis_rotation(axis: usize, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    match axis {
        0 => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        1 => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        _ => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

pub fn matmul3(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

/// Smooth, asymmetric test object: anisotropic Gaussian blobs several
/// voxels wide, as a function of position in mm relative to the grid centre.
pub fn blob_field(p: [f64; 3]) -> f64 {
    const BLOBS: [([f64; 3], [f64; 3], f64); 8] = [
        ([0.0, 2.0, 2.0], [12.0, 10.0, 11.0], 100.0),
        ([22.0, -8.0, -6.0], [7.0, 8.0, 8.0], 60.0),
        ([-20.0, -14.0, 12.0], [8.0, 7.0, 9.0], 45.0),
        ([6.0, 24.0, -14.0], [7.0, 8.0, 8.0], 50.0),
        ([-10.0, 18.0, 20.0], [6.0, 7.0, 8.0], 40.0),
        ([14.0, -22.0, 16.0], [7.0, 6.0, 8.0], 55.0),
        ([-24.0, 6.0, -16.0], [6.0, 8.0, 8.0], 35.0),
        ([18.0, 16.0, 4.0], [6.0, 6.0, 9.0], 30.0),
    ];
    BLOBS
        .iter()
        .map(|(c, s, a)| {
            let e: f64 = (0..3).map(|k| ((p[k] - c[k]) / s[k]).powi(2)).sum();
            a * (-0.5 * e).exp()
        })
        .sum()
}

/// Frame of `blob_field` seen through a rigid motion `(d mm, angles rad)`:
/// anatomy at reference position x appears at `R(x - c) + c + d`, so the
/// moved frame at p shows the reference at `R^T(p - c - d) + c`.
pub fn moved_blob_frame(dims: [usize; 3], vox: [f64; 3], d: [f64; 3], ang: [f64; 3]) -> Vec<f64> {
    let r = matmul3(axis_rotation(2, ang[2]), matmul3(axis_rotation(1, ang[1]), axis_rotation(0, ang[0])));
    let c: [f64; 3] = std::array::from_fn(|k| (dims[k] as f64 - 1.0) / 2.0 * vox[k]);
    let [nx, ny, nz] = dims;
    let mut out = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let p = [x as f64 * vox[0], y as f64 * vox[1], z as f64 * vox[2]];
                let q: [f64; 3] = std::array::from_fn(|k| p[k] - c[k] - d[k]);
                let rel: [f64; 3] = std::array::from_fn(|k| (0..3).map(|j| r[j][k] * q[j]).sum::<f64>());
                out.push(blob_field(rel));
            }
        }
    }
    out
}

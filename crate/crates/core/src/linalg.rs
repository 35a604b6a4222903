//! Dense symmetric eigensolvers.
//!
//! [`jacobi_eigen`] is the cyclic Jacobi method. [`tridiagonal_ql_eigen`]
//! reduces to tridiagonal form with Householder reflections and then runs
//! implicit QL; it is several times faster on the few-hundred-node graphs of
//! long clips. [`eig_symmetric`] dispatches between the two by size.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Accepted asymmetry, relative to `max(1, max |a_ij|)`.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Jacobi stops once the off-diagonal Frobenius norm falls below this,
/// relative to `max(1, ||a||_F)`.
pub const JACOBI_OFF_TOL: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 100;
/// Largest order solved by Jacobi in [`eig_symmetric`].
pub const JACOBI_MAX_ORDER: usize = 64;
const QL_MAX_ITER: usize = 60;

/// Eigenvalues in ascending order; column `k` of `vectors` belongs to
/// `values[k]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

pub fn eig_symmetric(a: &Array2<f64>) -> Result<SymmetricEigen> {
    if a.nrows() <= JACOBI_MAX_ORDER {
        jacobi_eigen(a)
    } else {
        tridiagonal_ql_eigen(a)
    }
}

/// Checks squareness and symmetry and returns the symmetrized matrix in
/// row-major order.
fn symmetrized(a: &Array2<f64>) -> Result<Vec<f64>> {
    let (n, m) = a.dim();
    if n != m || n == 0 {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: m,
        });
    }
    if let Some(idx) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    let scale = a.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = a[[i, i]];
        for j in i + 1..n {
            let diff = (a[[i, j]] - a[[j, i]]).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::NotSymmetric { i, j, diff });
            }
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            out[i * n + j] = v;
            out[j * n + i] = v;
        }
    }
    Ok(out)
}

/// Sorts ascending; `columns[k]` holds the eigenvector of `values[k]`.
fn sorted(values: Vec<f64>, columns: Vec<Vec<f64>>) -> SymmetricEigen {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let vectors = Array2::from_shape_fn((n, n), |(r, k)| columns[order[k]][r]);
    SymmetricEigen {
        values: order.iter().map(|&k| values[k]).collect(),
        vectors,
    }
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += a[i * n + j] * a[i * n + j];
        }
    }
    (2.0 * s).sqrt()
}

pub fn jacobi_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let mut m = symmetrized(a)?;
    let n = a.nrows();
    let frob = m.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = JACOBI_OFF_TOL * frob.max(1.0);
    // vt[k * n + r] is component r of eigenvector k.
    let mut vt = vec![0.0; n * n];
    for k in 0..n {
        vt[k * n + k] = 1.0;
    }

    let mut sweeps = 0;
    loop {
        let off = off_norm(&m, n);
        if off <= tol {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let g = m[r * n + p];
                    let h = m[r * n + q];
                    let new_p = g - s * (h + g * tau);
                    let new_q = h + s * (g - h * tau);
                    m[r * n + p] = new_p;
                    m[p * n + r] = new_p;
                    m[r * n + q] = new_q;
                    m[q * n + r] = new_q;
                }
                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..p * n + n];
                let vq = &mut tail[..n];
                for r in 0..n {
                    let g = vp[r];
                    let h = vq[r];
                    vp[r] = g - s * (h + g * tau);
                    vq[r] = h + s * (g - h * tau);
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    let columns = vt.chunks(n).map(<[f64]>::to_vec).collect();
    Ok(sorted(values, columns))
}

/// Householder reduction to tridiagonal form followed by implicit QL with
/// Wilkinson-style shifts.
pub fn tridiagonal_ql_eigen(a: &Array2<f64>) -> Result<SymmetricEigen> {
    let mut v = symmetrized(a)?;
    let n = a.nrows();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut v, &mut d, &mut e, n);
    // After tred2, v holds the accumulated orthogonal transform row-major.
    // QL rotates columns; transposing makes them contiguous.
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    tql2(&mut vt, &mut d, &mut e, n)?;
    let columns = vt.chunks(n).map(<[f64]>::to_vec).collect();
    Ok(sorted(d, columns))
}

fn tred2(v: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) {
    let at = |i: usize, j: usize| i * n + j;
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for k in 0..i {
            scale += d[k].abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for k in 0..i {
                d[k] /= scale;
                h += d[k] * d[k];
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in e.iter_mut().take(i) {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }

    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;
}

fn tql2(vt: &mut [f64], d: &mut [f64], e: &mut [f64], n: usize) -> Result<()> {
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    let mut f = 0.0;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iter = 0;
            loop {
                iter += 1;
                if iter > QL_MAX_ITER {
                    return Err(Error::NoConvergence {
                        sweeps: iter,
                        off_norm: e[l].abs(),
                    });
                }
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (head, tail) = vt.split_at_mut((i + 1) * n);
                    let vi = &mut head[i * n..];
                    let vi1 = &mut tail[..n];
                    for k in 0..n {
                        let h = vi1[k];
                        vi1[k] = s * vi[k] + c * h;
                        vi[k] = c * vi[k] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    Ok(())
}

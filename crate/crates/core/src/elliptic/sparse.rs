//! Compressed sparse rows, ILU(0) and preconditioned Krylov solvers.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl Csr {
    /// Builds a matrix from per-row `(column, value)` lists; duplicate columns
    /// are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last = usize::MAX;
            for (c, v) in row {
                if c == last {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                    last = c;
                }
            }
            indptr.push(indices.len());
        }
        Self {
            n,
            indptr,
            indices,
            data,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                s += self.data[k] * x[self.indices[k]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        (self.indptr[i]..self.indptr[i + 1])
            .find(|&k| self.indices[k] == i)
            .map_or(0.0, |k| self.data[k])
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.indptr[i]..lu.indptr[i + 1] {
                if lu.indices[k] == i {
                    diag[i] = k;
                }
            }
            if diag[i] == usize::MAX {
                return Err(Error::InvalidArgument(format!("row {i} has no diagonal")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.indptr[i], lu.indptr[i + 1]);
            for k in start..end {
                pos[lu.indices[k]] = k;
            }
            for k in start..end {
                let j = lu.indices[k];
                if j >= i {
                    break;
                }
                let pivot = lu.data[diag[j]];
                let lij = lu.data[k] / pivot;
                lu.data[k] = lij;
                for kk in diag[j] + 1..lu.indptr[j + 1] {
                    let c = lu.indices[kk];
                    if pos[c] != usize::MAX && pos[c] >= start && pos[c] < end {
                        lu.data[pos[c]] -= lij * lu.data[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.indices[k]] = usize::MAX;
            }
            if lu.data[diag[i]].abs() < 1e-300 {
                return Err(Error::InvalidArgument(format!("zero pivot in row {i}")));
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solves `LU z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = z[i];
            for k in lu.indptr[i]..self.diag[i] {
                s -= lu.data[k] * z[lu.indices[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.indptr[i + 1] {
                s -= lu.data[k] * z[lu.indices[k]];
            }
            z[i] = s / lu.data[self.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KrylovStats {
    pub iterations: usize,
    pub residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Relative residual `‖b − Ax‖ / ‖b‖`.
pub fn relative_residual(a: &Csr, x: &[f64], b: &[f64]) -> f64 {
    let mut r = vec![0.0; a.n];
    a.matvec(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let nb = norm(b);
    if nb == 0.0 {
        norm(&r)
    } else {
        norm(&r) / nb
    }
}

/// Right-preconditioned BiCGStab. `x` holds the initial guess.
pub fn bicgstab(
    a: &Csr,
    m: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> KrylovStats {
    let n = a.n;
    let nb = norm(b).max(1e-300);
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0_f64, 1.0_f64, 1.0_f64);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut ph = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut sh = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut res = norm(&r) / nb;
    for it in 0..max_iter {
        if res <= tol {
            return KrylovStats {
                iterations: it,
                residual: res,
            };
        }
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 || omega.abs() < 1e-300 {
            return KrylovStats {
                iterations: it,
                residual: res,
            };
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        ph.copy_from_slice(&p);
        m.apply(&mut ph);
        a.matvec(&ph, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            return KrylovStats {
                iterations: it,
                residual: res,
            };
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) / nb <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return KrylovStats {
                iterations: it + 1,
                residual: relative_residual(a, x, b),
            };
        }
        sh.copy_from_slice(&s);
        m.apply(&mut sh);
        a.matvec(&sh, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        res = norm(&r) / nb;
        if !res.is_finite() {
            break;
        }
    }
    KrylovStats {
        iterations: max_iter,
        residual: relative_residual(a, x, b),
    }
}

/// Right-preconditioned restarted GMRES(`restart`).
pub fn gmres(
    a: &Csr,
    m: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    restart: usize,
    max_iter: usize,
) -> KrylovStats {
    let n = a.n;
    let nb = norm(b).max(1e-300);
    let mut total = 0;
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    loop {
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm(&r);
        if beta / nb <= tol || total >= max_iter {
            return KrylovStats {
                iterations: total,
                residual: beta / nb,
            };
        }
        let mut basis: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut hess = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..restart {
            z.copy_from_slice(&basis[k]);
            m.apply(&mut z);
            a.matvec(&z, &mut w);
            for (j, vj) in basis.iter().enumerate() {
                let hj = dot(&w, vj);
                hess[j][k] = hj;
                for i in 0..n {
                    w[i] -= hj * vj[i];
                }
            }
            let hn = norm(&w);
            hess[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * hess[j][k] + sn[j] * hess[j + 1][k];
                hess[j + 1][k] = -sn[j] * hess[j][k] + cs[j] * hess[j + 1][k];
                hess[j][k] = t;
            }
            let den = hess[k][k].hypot(hess[k + 1][k]);
            cs[k] = hess[k][k] / den;
            sn[k] = hess[k + 1][k] / den;
            hess[k][k] = den;
            hess[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() / nb <= tol || hn < 1e-300 || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hess[i][j] * y[j];
            }
            y[i] = s / hess[i][i];
        }
        let mut upd = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                upd[i] += yj * basis[j][i];
            }
        }
        m.apply(&mut upd);
        for i in 0..n {
            x[i] += upd[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convection_diffusion_1d(n: usize, c: f64) -> Csr {
        let h = 1.0 / (n + 1) as f64;
        let rows = (0..n)
            .map(|i| {
                let mut row = vec![(i, 2.0 / (h * h))];
                if i > 0 {
                    row.push((i - 1, -1.0 / (h * h) - c / (2.0 * h)));
                }
                if i + 1 < n {
                    row.push((i + 1, -1.0 / (h * h) + c / (2.0 * h)));
                }
                row
            })
            .collect();
        Csr::from_rows(rows)
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let a = convection_diffusion_1d(50, 3.0);
        let m = Ilu0::new(&a).unwrap();
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let mut x = b.clone();
        m.apply(&mut x);
        assert!(relative_residual(&a, &x, &b) < 1e-12);
    }

    #[test]
    fn krylov_solvers_agree() {
        let a = convection_diffusion_1d(200, 40.0);
        // Weaken the preconditioner by dropping the off-diagonals.
        let diag = Csr::from_rows((0..200).map(|i| vec![(i, a.diagonal(i))]).collect());
        let m = Ilu0::new(&diag).unwrap();
        let b = vec![1.0; 200];
        let mut x1 = vec![0.0; 200];
        let s1 = bicgstab(&a, &m, &b, &mut x1, 1e-11, 2000);
        let mut x2 = vec![0.0; 200];
        let s2 = gmres(&a, &m, &b, &mut x2, 1e-11, 30, 5000);
        assert!(s1.residual < 1e-10 && s2.residual < 1e-10, "{s1:?} {s2:?}");
        let diff = x1.iter().zip(&x2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8);
    }

    #[test]
    fn duplicates_are_summed() {
        let a = Csr::from_rows(vec![vec![(0, 1.0), (0, 2.0), (1, 1.0)], vec![(1, 4.0)]]);
        assert_eq!(a.data, vec![3.0, 1.0, 4.0]);
    }
}

//! Row-major helpers for the small dense matrices carried per particle.

/// `out = a * b` for `a: r x k`, `b: k x c`.
pub fn matmul(a: &[f64], b: &[f64], r: usize, k: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[i * k + l] * b[l * c + j];
            }
            out[i * c + j] = s;
        }
    }
}

/// `out = a^T * b` for `a: k x r`, `b: k x c`.
pub fn matmul_tn(a: &[f64], b: &[f64], k: usize, r: usize, c: usize, out: &mut [f64]) {
    for i in 0..r {
        for j in 0..c {
            let mut s = 0.0;
            for l in 0..k {
                s += a[l * r + i] * b[l * c + j];
            }
            out[i * c + j] = s;
        }
    }
}

/// `y = a * x` for `a: r x c`.
pub fn matvec(a: &[f64], x: &[f64], r: usize, c: usize, y: &mut [f64]) {
    for i in 0..r {
        let mut s = 0.0;
        for j in 0..c {
            s += a[i * c + j] * x[j];
        }
        y[i] = s;
    }
}

/// `y = a^T * x` for `a: r x c`.
pub fn matvec_t(a: &[f64], x: &[f64], r: usize, c: usize, y: &mut [f64]) {
    for j in 0..c {
        let mut s = 0.0;
        for i in 0..r {
            s += a[i * c + j] * x[i];
        }
        y[j] = s;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

pub fn transpose(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut t = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            t[j * r + i] = a[i * c + j];
        }
    }
    t
}

/// Frobenius norm of `a - a^T` for a square matrix.
pub fn asymmetry(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            let d = a[i * n + j] - a[j * n + i];
            s += d * d;
        }
    }
    s.sqrt()
}

pub fn symmetrize(a: &mut [f64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[i * n + j] + a[j * n + i]);
            a[i * n + j] = m;
            a[j * n + i] = m;
        }
    }
}

/// Determinant of a small square matrix.
pub fn det(a: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        _ => nalgebra::DMatrix::from_row_slice(n, n, a).determinant(),
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Least-squares slope and intercept of `y` on `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

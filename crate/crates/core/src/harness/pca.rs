use crate::error::{Error, Result};

const MAX_ITERS: usize = 20_000;

/// Top-two principal axes of a point set and the projected coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm components; the largest-magnitude entry of each is positive.
    pub components: [Vec<f64>; 2],
    /// Eigenvalues of the sample covariance (divisor `N - 1`).
    pub variances: [f64; 2],
    pub coords: Vec<[f64; 2]>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration, started
/// from a fixed vector orthogonal to `exclude`.
fn power_iteration(m: &[Vec<f64>], exclude: Option<&[f64]>) -> (f64, Vec<f64>) {
    let d = m.len();
    let orth = |v: &mut Vec<f64>| {
        if let Some(e) = exclude {
            let p = dot(v, e);
            v.iter_mut().zip(e).for_each(|(x, y)| *x -= p * y);
        }
    };
    let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * i as f64).collect();
    orth(&mut v);
    if normalize(&mut v) == 0.0 {
        v = vec![0.0; d];
        v[0] = 1.0;
        orth(&mut v);
        normalize(&mut v);
    }
    for _ in 0..MAX_ITERS {
        let mut w = mat_vec(m, &v);
        orth(&mut w);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            return (0.0, v);
        }
        let delta: f64 = w.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if delta < 1e-14 {
            break;
        }
    }
    // Rayleigh quotient is more accurate than the last norm.
    let rq = dot(&v, &mat_vec(m, &v));
    (rq.max(0.0), v)
}

fn fix_sign(v: &mut [f64]) {
    let (mut best, mut idx) = (0.0, 0);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best {
            best = x.abs();
            idx = i;
        }
    }
    if v[idx] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Mean-centres the points and projects them onto the top two eigenvectors
/// of their covariance, found by power iteration with deflation.
pub fn pca_export(points: &[Vec<f64>]) -> Result<Pca> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!("PCA needs at least 3 vectors, got {}", points.len())));
    }
    let d = points[0].len();
    if d < 2 || points.iter().any(|p| p.len() != d) {
        return Err(Error::InvalidArgument("PCA vectors must share a dimension of at least 2".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        mean.iter_mut().zip(p).for_each(|(m, x)| *m += x / n);
    }
    let centred: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for c in &centred {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += c[i] * c[j] / (n - 1.0);
            }
        }
    }
    let (l1, mut v1) = power_iteration(&cov, None);
    fix_sign(&mut v1);
    let mut deflated = cov.clone();
    for i in 0..d {
        for j in 0..d {
            deflated[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    let (_, mut v2) = power_iteration(&deflated, Some(&v1));
    fix_sign(&mut v2);
    let l2 = dot(&v2, &mat_vec(&cov, &v2)).max(0.0);
    let coords = centred.iter().map(|c| [dot(c, &v1), dot(c, &v2)]).collect();
    Ok(Pca {
        mean,
        components: [v1, v2],
        variances: [l1, l2],
        coords,
    })
}

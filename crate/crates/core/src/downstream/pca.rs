use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix, Rng};

const TOLERANCE: f64 = 1e-6;
const MAX_ITERS: usize = 1000;

/// Top principal components of a data matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// Column means removed before projection.
    pub mean: Vec<f64>,
    /// `k × d`, orthonormal rows.
    pub components: Matrix<f64>,
    /// Covariance eigenvalue of each component.
    pub variances: Vec<f64>,
    /// `n × k` projections of the centred rows.
    pub projections: Matrix<f64>,
}

/// Mean-centres `x` and finds its top `k` covariance eigenvectors by power
/// iteration with deflation. Each component is unit-norm with its
/// largest-magnitude entry positive.
pub fn pca_project(x: &Matrix<f64>, k: usize) -> Result<Pca> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::Invalid(format!("pca needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::Invalid(format!("pca k={k} outside 1..={}", n.min(d))));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("pca input".into()));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();

    let mut cov = Matrix::<f64>::zeros(d, d);
    for r in &centred {
        cov.add_outer(r, r, 1.0 / (n - 1) as f64);
    }
    let trace: f64 = (0..d).map(|i| cov.get(i, i)).sum();
    if trace.is_nan() || trace <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let negligible = trace * 1e-12;

    let mut rng = Rng::new(0x9ca);
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for _ in 0..k {
        let mut v: Vec<f64> = rng.normal_vec(d, 1.0);
        orthonormalize(&mut v, &components);
        let mut lambda = 0.0;
        for _ in 0..MAX_ITERS {
            let mut w = cov.matvec(&v);
            for (c, &l) in components.iter().zip(&variances) {
                let proj = l * dot(c, &v);
                w.iter_mut().zip(c).for_each(|(wi, ci)| *wi -= proj * ci);
            }
            lambda = dot(&w, &v);
            if norm(&w) <= negligible {
                // Remaining spectrum is numerically zero; any orthonormal
                // completion is a valid component.
                lambda = 0.0;
                break;
            }
            orthonormalize(&mut w, &components);
            if dot(&w, &v) < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            let change = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            if change < TOLERANCE {
                break;
            }
        }
        fix_sign(&mut v);
        components.push(v);
        variances.push(lambda.max(0.0));
    }

    let mut projections = Matrix::zeros(n, k);
    for (i, r) in centred.iter().enumerate() {
        for (j, c) in components.iter().enumerate() {
            projections.set(i, j, dot(r, c));
        }
    }
    Ok(Pca {
        mean,
        components: Matrix::from_rows(&components)?,
        variances,
        projections,
    })
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Gram-Schmidt against `basis`, then unit-normalize. Falls back to the
/// first coordinate axis that survives projection.
fn orthonormalize(v: &mut Vec<f64>, basis: &[Vec<f64>]) {
    let project_out = |v: &mut Vec<f64>| {
        for _ in 0..2 {
            for b in basis {
                let p = dot(v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
    };
    project_out(v);
    let mut nv = norm(v);
    let mut axis = 0;
    while nv < 1e-10 && axis < v.len() {
        v.iter_mut().enumerate().for_each(|(i, x)| *x = if i == axis { 1.0 } else { 0.0 });
        project_out(v);
        nv = norm(v);
        axis += 1;
    }
    v.iter_mut().for_each(|x| *x /= nv);
}

fn fix_sign(v: &mut [f64]) {
    let largest = v
        .iter()
        .copied()
        .fold(0.0f64, |best, x| if x.abs() > best.abs() { x } else { best });
    if largest < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn collinear_points_have_one_component() {
        let dir = [0.6, 0.8];
        let rows: Vec<Vec<f64>> = [-2.0, -1.0, 0.5, 1.0, 3.0]
            .iter()
            .map(|t| vec![1.0 + t * dir[0], -2.0 + t * dir[1]])
            .collect();
        let p = pca_project(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        let c = p.components.row(0);
        assert!((dot(c, &dir).abs() - 1.0).abs() < 1e-9);
        assert!(p.variances[1].abs() < 1e-9);
        assert!(p.projections.iter_rows().all(|r| r[1].abs() < 1e-6));
        assert!(dot(p.components.row(0), p.components.row(1)).abs() < 1e-9);
    }

    #[test]
    fn axis_aligned_variances_give_the_axes_in_order() {
        // x variance 4, y variance 1 (sample covariance).
        let rows = vec![vec![2.0, 0.0], vec![-2.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let p = pca_project(&Matrix::from_rows(&rows).unwrap(), 2).unwrap();
        assert!((p.components.row(0)[0] - 1.0).abs() < 1e-6);
        assert!((p.components.row(1)[1] - 1.0).abs() < 1e-6);
        assert!(p.variances[0] > p.variances[1]);
        assert!((p.variances[0] / p.variances[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn argument_errors() {
        let one = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(pca_project(&one, 1).is_err());
        let flat = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert!(matches!(pca_project(&flat, 1), Err(Error::ZeroVariance)));
        let ok = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 2.0]]).unwrap();
        assert!(pca_project(&ok, 0).is_err());
        assert!(pca_project(&ok, 3).is_err());
    }

    proptest! {
        #[test]
        fn components_are_orthonormal_and_ordered(seed in any::<u64>(), n in 3usize..12, d in 2usize..6) {
            let mut rng = crate::numerics::Rng::new(seed);
            let x: Matrix<f64> = rng.normal_matrix(n, d, 1.0);
            let k = d.min(n).min(3);
            let p = pca_project(&x, k).unwrap();
            for i in 0..k {
                for j in 0..k {
                    let g = dot(p.components.row(i), p.components.row(j));
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((g - want).abs() < 1e-4, "gram[{i}][{j}]={g}");
                }
                let c = p.components.row(i);
                let big = c.iter().copied().fold(0.0f64, |b, x| if x.abs() > b.abs() { x } else { b });
                prop_assert!(big > 0.0);
            }
            let var = |j: usize| p.projections.iter_rows().map(|r| r[j] * r[j]).sum::<f64>();
            for j in 1..k {
                prop_assert!(var(j) <= var(j - 1) * (1.0 + 1e-6) + 1e-9);
            }
        }
    }
}

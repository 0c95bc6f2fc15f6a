//! Principal component projection for inspecting embedding spaces.

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("need at least 2 vectors, got {0}")]
    TooFewVectors(usize),
    #[error("requested {requested} components from {dim}-dimensional data")]
    TooManyComponents { requested: usize, dim: usize },
    #[error("vector {index} has dimension {actual}, expected {expected}")]
    Dimension { index: usize, expected: usize, actual: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    /// One row of `components` coordinates per input vector.
    pub coordinates: Vec<Vec<f64>>,
    /// Fraction of the total variance explained by each component.
    pub explained: Vec<f64>,
    /// Unit principal axes, one per component.
    pub axes: Vec<Vec<f64>>,
}

/// Projects centred `vectors` onto the top `components` eigenvectors of
/// their covariance. Each axis is signed so that its largest-magnitude
/// loading is positive. Constant input yields zero variance and zero
/// coordinates.
pub fn pca_project(vectors: &[Vec<f64>], components: usize) -> Result<Projection, PcaError> {
    let n = vectors.len();
    if n < 2 {
        return Err(PcaError::TooFewVectors(n));
    }
    let d = vectors[0].len();
    if components > d {
        return Err(PcaError::TooManyComponents {
            requested: components,
            dim: d,
        });
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != d {
            return Err(PcaError::Dimension {
                index: i,
                expected: d,
                actual: v.len(),
            });
        }
    }

    let data = DMatrix::from_fn(n, d, |i, j| vectors[i][j]);
    let mean = data.row_mean();
    let centred = DMatrix::from_fn(n, d, |i, j| data[(i, j)] - mean[j]);
    let covariance = (centred.transpose() * &centred) / (n - 1) as f64;
    let eigen = SymmetricEigen::new(covariance);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eigen.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut axes = Vec::with_capacity(components);
    let mut explained = Vec::with_capacity(components);
    for &c in order.iter().take(components) {
        let mut axis: Vec<f64> = eigen.eigenvectors.column(c).iter().copied().collect();
        let pivot = axis
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            axis.iter_mut().for_each(|x| *x = -*x);
        }
        let value = eigen.eigenvalues[c].max(0.0);
        explained.push(if total > 0.0 { value / total } else { 0.0 });
        axes.push(axis);
    }

    let coordinates = (0..n)
        .map(|i| {
            axes.iter()
                .map(|axis| {
                    if total > 0.0 {
                        (0..d).map(|j| centred[(i, j)] * axis[j]).sum()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(Projection {
        coordinates,
        explained,
        axes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_have_one_component() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect();
        let p = pca_project(&pts, 2).unwrap();
        assert!((p.explained[0] - 1.0).abs() < 1e-12);
        assert!(p.explained[1].abs() < 1e-12);
    }

    #[test]
    fn explained_is_sorted_and_bounded() {
        let mut rng = crate::seeded_rng(7);
        use rand::Rng;
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..4).map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64).collect())
            .collect();
        let p = pca_project(&pts, 4).unwrap();
        assert!(p.explained.windows(2).all(|w| w[0] >= w[1]));
        assert!(p.explained.iter().sum::<f64>() <= 1.0 + 1e-12);
    }

    #[test]
    fn constant_input_is_all_zero() {
        let pts = vec![vec![1.0, 2.0]; 5];
        let p = pca_project(&pts, 2).unwrap();
        assert_eq!(p.explained, vec![0.0, 0.0]);
        assert!(p.coordinates.iter().flatten().all(|x| *x == 0.0));
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(pca_project(&[vec![1.0]], 1), Err(PcaError::TooFewVectors(1))));
        assert!(matches!(
            pca_project(&[vec![1.0], vec![2.0]], 2),
            Err(PcaError::TooManyComponents { .. })
        ));
        assert!(matches!(
            pca_project(&[vec![1.0], vec![2.0, 3.0]], 1),
            Err(PcaError::Dimension { index: 1, .. })
        ));
    }
}

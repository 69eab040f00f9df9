//! Two-dimensional PCA projection for plotting skill or question maps.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

/// Projects points onto the top two principal axes of their covariance.
/// Each axis is signed so its largest-magnitude component is positive;
/// a missing or zero-variance axis projects to 0.
pub fn pca_2d<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<[f64; 2]>> {
    let Some(first) = points.first() else {
        return Ok(Vec::new());
    };
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::InvalidArgument("points have no dimensions".into()));
    }
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: p.as_ref().len(),
        });
    }
    let n = points.len();
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p.as_ref()) {
            *m += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, d, |r, c| points[r].as_ref()[c] - mean[c]);
    let cov = x.transpose() * &x / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let top = eig.eigenvalues[order[0]].max(0.0);
    let axes: Vec<Option<Vec<f64>>> = (0..2)
        .map(|i| {
            let &col = order.get(i)?;
            let value = eig.eigenvalues[col];
            if top == 0.0 || value <= RANK_TOL * top {
                return None;
            }
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let lead = v.iter().enumerate().fold(
                0,
                |best, (j, x)| if x.abs() > v[best].abs() { j } else { best },
            );
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            Some(v)
        })
        .collect();
    Ok((0..n)
        .map(|r| {
            let mut out = [0.0; 2];
            for (o, axis) in out.iter_mut().zip(&axes) {
                if let Some(a) = axis {
                    *o = x.row(r).iter().zip(a).map(|(p, q)| p * q).sum();
                }
            }
            out
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_input_has_zero_second_axis() {
        let pts = [[1.0], [2.0], [4.0]];
        let y = pca_2d(&pts).unwrap();
        assert!(y.iter().all(|p| p[1] == 0.0));
        let xs: Vec<f64> = y.iter().map(|p| p[0]).collect();
        assert!((xs[0] - (1.0 - 7.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn collinear_points_in_plane() {
        let pts = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 2.0, 0.0]];
        let y = pca_2d(&pts).unwrap();
        assert!(y.iter().all(|p| p[1] == 0.0));
        assert!((y[2][0] - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn axes_recover_spread() {
        let pts = [[3.0, 0.0], [-3.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let y = pca_2d(&pts).unwrap();
        assert!((y[0][0] - 3.0).abs() < 1e-9);
        assert!((y[2][1].abs() - 1.0).abs() < 1e-9);
    }
}

//! Closed-form multi-output ridge regression onto the class embeddings.

use nalgebra::DMatrix;
use ndarray::Array2;

use crate::compat::CompatModel;
use crate::dataset::FeatureSet;
use crate::embedding::ClassEmbedding;
use crate::error::{Error, Result};

/// Solve `min_W sum_n ||W' theta(x_n) - phi(y_n)||^2 + lambda ||W||_F^2`.
///
/// Normal equations `(X'X + lambda I) W = X'Y` via Cholesky; when there
/// are fewer samples than feature dimensions the dual form
/// `W = X'(XX' + lambda I)^{-1} Y` factorizes the smaller Gram matrix
/// instead.
pub fn train_ridge(
    data: &FeatureSet,
    phi: &ClassEmbedding,
    lambda: f64,
) -> Result<CompatModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be > 0, got {lambda}")));
    }
    if phi.num_classes() != data.num_classes() {
        return Err(Error::DimMismatch {
            context: "class count",
            expected: data.num_classes(),
            found: phi.num_classes(),
        });
    }
    let n = data.num_samples();
    let d = data.feature_dim();
    let e = phi.dim();

    let x = DMatrix::from_fn(n, d, |i, j| data.features()[(i, j)] as f64);
    let y = DMatrix::from_fn(n, e, |i, j| phi.phi()[(j, data.label(i))]);

    let w = if d <= n {
        let mut gram = x.transpose() * &x;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = x.transpose() * &y;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Other("ridge system is not positive definite".into()))?;
        chol.solve(&rhs)
    } else {
        let mut gram = &x * x.transpose();
        for i in 0..n {
            gram[(i, i)] += lambda;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Other("ridge system is not positive definite".into()))?;
        x.transpose() * chol.solve(&y)
    };

    CompatModel::new(Array2::from_shape_fn((d, e), |(i, j)| w[(i, j)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::ovr_embedding;
    use ndarray::Array2;

    #[test]
    fn tiny_lambda_interpolates_identity() {
        // Theta = I, Phi = I: the minimizer tends to the identity as
        // lambda -> 0+.
        let d = 6;
        let features = Array2::from_shape_fn((d, d), |(i, j)| (i == j) as u8 as f32);
        let labels = (0..d as u32).collect();
        let data = FeatureSet::new(features, labels, d, None).unwrap();
        let phi = ovr_embedding(d).unwrap();
        let model = train_ridge(&data, &phi, 1e-10).unwrap();
        for i in 0..d {
            for j in 0..d {
                let expect = (i == j) as u8 as f64;
                assert!((model.weights()[(i, j)] - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normal_equations_residual_is_tiny() {
        let mut rng = crate::util::seeded_rng(8);
        use rand::Rng;
        let (n, d, c) = (40, 12, 5);
        let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0f32..1.0));
        let labels = (0..n).map(|i| (i % c) as u32).collect();
        let data = FeatureSet::new(features, labels, c, None).unwrap();
        let phi = crate::embedding::gaussian_embedding(c, 4, 3).unwrap();
        let lambda = 0.1;
        let model = train_ridge(&data, &phi, lambda).unwrap();

        // || (X'X + lambda I) W - X'Y ||_F / || X'Y ||_F <= 1e-8
        let x = DMatrix::from_fn(n, d, |i, j| data.features()[(i, j)] as f64);
        let y = DMatrix::from_fn(n, 4, |i, j| phi.phi()[(j, data.label(i))]);
        let w = DMatrix::from_fn(d, 4, |i, j| model.weights()[(i, j)]);
        let mut gram = x.transpose() * &x;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let rhs = x.transpose() * &y;
        let residual = (&gram * &w - &rhs).norm() / rhs.norm();
        assert!(residual <= 1e-8, "residual {residual}");
    }

    #[test]
    fn primal_and_dual_forms_agree() {
        let mut rng = crate::util::seeded_rng(15);
        use rand::Rng;
        // n < d exercises the dual branch; compare against the primal
        // solution computed on the same data by padding is not possible,
        // so check the dual identity directly instead.
        let (n, d, c) = (10, 25, 3);
        let features = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0f32..1.0));
        let labels = (0..n).map(|i| (i % c) as u32).collect();
        let data = FeatureSet::new(features, labels, c, None).unwrap();
        let phi = ovr_embedding(c).unwrap();
        let lambda = 0.5;
        let model = train_ridge(&data, &phi, lambda).unwrap();

        let x = DMatrix::from_fn(n, d, |i, j| data.features()[(i, j)] as f64);
        let y = DMatrix::from_fn(n, c, |i, j| phi.phi()[(j, data.label(i))]);
        let w = DMatrix::from_fn(d, c, |i, j| model.weights()[(i, j)]);
        let mut gram = x.transpose() * &x;
        for i in 0..d {
            gram[(i, i)] += lambda;
        }
        let residual = (&gram * &w - x.transpose() * &y).norm();
        assert!(residual < 1e-9, "residual {residual}");
    }

    #[test]
    fn rejects_non_positive_lambda() {
        let data = FeatureSet::new(Array2::ones((2, 2)), vec![0, 1], 2, None).unwrap();
        let phi = ovr_embedding(2).unwrap();
        assert!(train_ridge(&data, &phi, 0.0).is_err());
        assert!(train_ridge(&data, &phi, -1.0).is_err());
    }
}

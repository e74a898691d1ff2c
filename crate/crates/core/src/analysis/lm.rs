//! Weighted nonlinear least squares on top of the `levenberg-marquardt`
//! crate, with central-difference Jacobians and the parameter covariance
//! (JᵀWJ)⁻¹ evaluated at the solution.

use levenberg_marquardt::{LeastSquaresProblem, LevenbergMarquardt};
use nalgebra::{storage::Owned, DMatrix, DVector, Dyn};

pub(crate) type Model<'a> = dyn Fn(f64, &[f64]) -> f64 + 'a;

struct Curve<'a> {
    x: &'a [f64],
    y: &'a [f64],
    weights: Vec<f64>,
    model: &'a Model<'a>,
    params: DVector<f64>,
}

impl Curve<'_> {
    fn residuals_at(&self, p: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .zip(self.y)
                .zip(&self.weights)
                .map(|((&x, &y), &w)| w * ((self.model)(x, p) - y)),
        )
    }

    fn jacobian_at(&self, p: &[f64]) -> DMatrix<f64> {
        let m = self.x.len();
        let n = p.len();
        let mut jac = DMatrix::zeros(m, n);
        let mut work = p.to_vec();
        for j in 0..n {
            let h = 1e-6 * p[j].abs().max(1e-3);
            work[j] = p[j] + h;
            let plus = self.residuals_at(&work);
            work[j] = p[j] - h;
            let minus = self.residuals_at(&work);
            work[j] = p[j];
            jac.set_column(j, &((plus - minus) / (2.0 * h)));
        }
        jac
    }
}

impl LeastSquaresProblem<f64, Dyn, Dyn> for Curve<'_> {
    type ResidualStorage = Owned<f64, Dyn>;
    type JacobianStorage = Owned<f64, Dyn, Dyn>;
    type ParameterStorage = Owned<f64, Dyn>;

    fn set_params(&mut self, x: &DVector<f64>) {
        self.params.copy_from(x);
    }

    fn params(&self) -> DVector<f64> {
        self.params.clone()
    }

    fn residuals(&self) -> Option<DVector<f64>> {
        let r = self.residuals_at(self.params.as_slice());
        r.iter().all(|v| v.is_finite()).then_some(r)
    }

    fn jacobian(&self) -> Option<DMatrix<f64>> {
        let j = self.jacobian_at(self.params.as_slice());
        j.iter().all(|v| v.is_finite()).then_some(j)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LsqFit {
    pub params: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub converged: bool,
    pub termination: String,
}

impl LsqFit {
    #[cfg(test)]
    pub fn error(&self, i: usize) -> f64 {
        self.covariance[(i, i)].max(0.0).sqrt()
    }
}

fn weights(sigma: &[f64]) -> Vec<f64> {
    sigma.iter().map(|&s| if s.is_finite() { 1.0 / s } else { 0.0 }).collect()
}

/// Covariance (JᵀWJ)⁻¹ at `params`, using a pseudo-inverse when the problem
/// is rank deficient.
pub(crate) fn covariance_at(model: &Model<'_>, x: &[f64], y: &[f64], sigma: &[f64], params: &[f64]) -> DMatrix<f64> {
    let curve = Curve { x, y, weights: weights(sigma), model, params: DVector::from_column_slice(params) };
    let jac = curve.jacobian_at(params);
    let jtj = jac.transpose() * &jac;
    let n = jtj.nrows();
    let pinv = |m: &DMatrix<f64>| {
        m.clone()
            .pseudo_inverse(1e-12 * m.norm().max(f64::MIN_POSITIVE))
            .unwrap_or_else(|_| DMatrix::from_element(n, n, f64::NAN))
    };
    jtj.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()) && (0..n).all(|i| inv[(i, i)] >= 0.0))
        .unwrap_or_else(|| pinv(&jtj))
}

pub(crate) fn chi2_at(model: &Model<'_>, x: &[f64], y: &[f64], sigma: &[f64], params: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(weights(sigma))
        .map(|((&x, &y), w)| (w * (model(x, params) - y)).powi(2))
        .sum()
}

pub(crate) fn least_squares(model: &Model<'_>, x: &[f64], y: &[f64], sigma: &[f64], p0: &[f64]) -> LsqFit {
    let curve = Curve {
        x,
        y,
        weights: weights(sigma),
        model,
        params: DVector::from_column_slice(p0),
    };
    let (solved, report) = LevenbergMarquardt::new().with_patience(400).minimize(curve);
    let params = solved.params.as_slice().to_vec();
    let covariance = covariance_at(model, x, y, sigma, &params);
    LsqFit {
        chi2: chi2_at(model, x, y, sigma, &params),
        dof: x.len().saturating_sub(params.len()),
        converged: report.termination.was_successful() && params.iter().all(|p| p.is_finite()),
        termination: format!("{:?}", report.termination),
        params,
        covariance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|x| 3.0 * x - 1.0).collect();
        let sigma = vec![0.5; 20];
        let model = |x: f64, p: &[f64]| p[0] * x + p[1];
        let fit = least_squares(&model, &x, &y, &sigma, &[1.0, 0.0]);
        assert!(fit.converged, "{}", fit.termination);
        assert!((fit.params[0] - 3.0).abs() < 1e-8);
        assert!((fit.params[1] + 1.0).abs() < 1e-7);
        // analytic slope error for equally weighted points: σ/√(Σ(x−x̄)²)
        let sxx: f64 = x.iter().map(|x| (x - 9.5f64).powi(2)).sum();
        assert!((fit.error(0) - 0.5 / sxx.sqrt()).abs() < 1e-6);
    }
}

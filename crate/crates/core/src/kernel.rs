//! Correlation functions with the derivatives needed by the gradient-based
//! criteria.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::bessel::bessel_k;
use crate::design::DesignMatrix;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `exp(-sum_k theta_k (x_k - y_k)^2) + g * delta(x, y)`
    GaussianSeparable,
    /// Isotropic Matérn with smoothness `nu` and scale `phi`, plus nugget.
    Matern,
}

/// A correlation function and its hyperparameters.
///
/// `theta` holds one positive weight per axis for the separable Gaussian
/// family; `nu` and `phi` parameterize the Matérn family. The nugget `g`
/// is added only when the two points are bitwise identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    #[serde(default)]
    pub theta: Vec<f64>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    #[serde(default)]
    pub nugget: f64,
}

fn default_nu() -> f64 {
    2.5
}

fn default_phi() -> f64 {
    1.0
}

impl KernelSpec {
    pub fn gaussian(theta: Vec<f64>, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::GaussianSeparable,
            theta,
            nu: default_nu(),
            phi: default_phi(),
            nugget,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn matern(nu: f64, phi: f64, nugget: f64) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Matern,
            theta: Vec::new(),
            nu,
            phi,
            nugget,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "nugget must be >= 0, got {}",
                self.nugget
            )));
        }
        match self.family {
            KernelFamily::GaussianSeparable => {
                if self.theta.is_empty() {
                    return Err(Error::InvalidArgument("theta is empty".into()));
                }
                if let Some(t) = self.theta.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
                    return Err(Error::InvalidArgument(format!(
                        "theta entries must be positive, got {t}"
                    )));
                }
            }
            KernelFamily::Matern => {
                if !(self.nu > 0.0 && self.phi > 0.0 && self.nu.is_finite() && self.phi.is_finite())
                {
                    return Err(Error::InvalidArgument(format!(
                        "Matérn needs nu > 0 and phi > 0, got nu = {}, phi = {}",
                        self.nu, self.phi
                    )));
                }
            }
        }
        Ok(())
    }

    /// Input dimension fixed by the hyperparameters, if any.
    pub fn dim(&self) -> Option<usize> {
        match self.family {
            KernelFamily::GaussianSeparable => Some(self.theta.len()),
            KernelFamily::Matern => None,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        match self.dim() {
            Some(m) => check_dim(m, x.len()),
            None => Ok(()),
        }
    }

    pub fn is_differentiable(&self) -> bool {
        match self.family {
            KernelFamily::GaussianSeparable => true,
            KernelFamily::Matern => self.nu > 1.0,
        }
    }

    /// `k(x, y)` including the nugget term.
    pub fn correlation(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        check_dim(x.len(), y.len())?;
        Ok(self.eval(x, y))
    }

    /// `k(x, y)` without the nugget, i.e. the continuous part.
    pub fn smooth_correlation(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        check_dim(x.len(), y.len())?;
        Ok(self.eval_smooth(x, y))
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let smooth = self.eval_smooth(x, y);
        if x == y {
            smooth + self.nugget
        } else {
            smooth
        }
    }

    #[inline]
    pub(crate) fn eval_smooth(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::GaussianSeparable => {
                let s: f64 = self
                    .theta
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(t, (a, b))| t * (a - b) * (a - b))
                    .sum();
                (-s).exp()
            }
            KernelFamily::Matern => {
                let r = euclidean(x, y);
                matern_radial(self.nu, self.phi, r)
            }
        }
    }

    /// Value of `k(x, x)`, which does not depend on `x`.
    pub fn variance_at_point(&self) -> f64 {
        1.0 + self.nugget
    }

    /// Writes `d k(x, y) / d x_i` for every axis into `out`.
    pub(crate) fn eval_gradient(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        match self.family {
            KernelFamily::GaussianSeparable => {
                let k = self.eval_smooth(x, y);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = -2.0 * self.theta[i] * (x[i] - y[i]) * k;
                }
            }
            KernelFamily::Matern => {
                let r = euclidean(x, y);
                if r == 0.0 {
                    out.fill(0.0);
                    return;
                }
                let scale = 2.0 * self.nu.sqrt() * self.phi;
                let z = scale * r;
                // d/dz [z^nu K_nu(z)] = -z^nu K_{nu-1}(z), and dz/dx_i = scale^2 (x_i - y_i) / z
                let nu = self.nu;
                let log_c = -ln_gamma(nu) - (nu - 1.0) * std::f64::consts::LN_2;
                let kval = bessel_k(nu - 1.0, z);
                let factor = if kval > 0.0 {
                    -(log_c + (nu - 1.0) * z.ln() + kval.ln()).exp() * scale * scale
                } else {
                    0.0
                };
                for (i, o) in out.iter_mut().enumerate() {
                    *o = factor * (x[i] - y[i]);
                }
            }
        }
    }

    pub fn gradient(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.require_differentiable()?;
        self.check_point(x)?;
        check_dim(x.len(), y.len())?;
        let mut out = vec![0.0; x.len()];
        self.eval_gradient(x, y, &mut out);
        Ok(out)
    }

    pub(crate) fn require_differentiable(&self) -> Result<()> {
        if self.is_differentiable() {
            Ok(())
        } else {
            Err(Error::Unsupported(format!(
                "Matérn kernel with nu = {} is not differentiable",
                self.nu
            )))
        }
    }

    pub(crate) fn require_gaussian(&self) -> Result<()> {
        match self.family {
            KernelFamily::GaussianSeparable => Ok(()),
            KernelFamily::Matern => Err(Error::Unsupported(
                "gradient-variance terms are only available for the separable Gaussian kernel"
                    .into(),
            )),
        }
    }
}

fn euclidean(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// `z^nu K_nu(z) / (Gamma(nu) 2^(nu-1))` with `z = 2 sqrt(nu) phi r`; equals 1 at `r = 0`.
pub fn matern_radial(nu: f64, phi: f64, r: f64) -> f64 {
    if r == 0.0 {
        return 1.0;
    }
    let z = 2.0 * nu.sqrt() * phi * r;
    let k = bessel_k(nu, z);
    if k <= 0.0 || !k.is_finite() {
        return if k.is_finite() { 0.0 } else { 1.0 };
    }
    let log_c = -ln_gamma(nu) - (nu - 1.0) * std::f64::consts::LN_2;
    (log_c + nu * z.ln() + k.ln()).exp().min(1.0)
}

/// Correlations between `x` and every design row.
pub fn cross_correlations(spec: &KernelSpec, x: &[f64], design: &DesignMatrix) -> Result<Vec<f64>> {
    spec.check_point(x)?;
    check_dim(design.m(), x.len())?;
    Ok(design.rows().map(|row| spec.eval(x, row)).collect())
}

/// The `m × n` matrix whose column `j` is the gradient of `k(x, x_j)` in `x`.
/// The nugget contributes nothing.
pub fn cross_correlation_jacobian(
    spec: &KernelSpec,
    x: &[f64],
    design: &DesignMatrix,
) -> Result<DMatrix<f64>> {
    spec.require_differentiable()?;
    spec.check_point(x)?;
    check_dim(design.m(), x.len())?;
    let m = x.len();
    let mut jac = DMatrix::zeros(m, design.n());
    let mut buf = vec![0.0; m];
    for (j, row) in design.rows().enumerate() {
        spec.eval_gradient(x, row, &mut buf);
        jac.column_mut(j).copy_from_slice(&buf);
    }
    Ok(jac)
}

/// Diagonal of the mixed second derivative `d^2 k / dx_i dy_i` at `y = x`,
/// which for the separable Gaussian is `2 theta_i` everywhere.
pub fn second_derivative_diagonal(spec: &KernelSpec) -> Result<Vec<f64>> {
    spec.require_gaussian()?;
    Ok(spec.theta.iter().map(|t| 2.0 * t).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_values() {
        let k = KernelSpec::gaussian(vec![1.0, 1.0], 0.01).unwrap();
        assert_eq!(k.correlation(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 1.01);
        let k0 = KernelSpec::gaussian(vec![1.0, 1.0], 0.0).unwrap();
        let v = k0.correlation(&[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367_879_4).abs() < 1e-7);
    }

    #[test]
    fn matern_half_matches_exponential() {
        let k = KernelSpec::matern(0.5, 0.5, 0.0).unwrap();
        let v = k.correlation(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let want = (-2.0 * 0.5f64.sqrt() * 0.5).exp();
        assert!(((v - want) / want).abs() < 1e-10);
    }

    #[test]
    fn matern_closed_forms() {
        for &(nu, phi) in &[(1.5, 0.7), (2.5, 2.0)] {
            let k = KernelSpec::matern(nu, phi, 0.0).unwrap();
            for &r in &[1e-3, 0.1, 0.5, 1.0, 3.0] {
                let z: f64 = 2.0 * f64::sqrt(nu) * phi * r;
                let want = if nu == 1.5 {
                    (1.0 + z) * (-z).exp()
                } else {
                    (1.0 + z + z * z / 3.0) * (-z).exp()
                };
                let got = k.correlation(&[0.0], &[r]).unwrap();
                assert!(((got - want) / want).abs() < 1e-10, "nu={nu} r={r}");
            }
        }
        let k = KernelSpec::matern(2.5, 1.0, 0.2).unwrap();
        assert_eq!(k.correlation(&[0.4], &[0.4]).unwrap(), 1.2);
    }

    #[test]
    fn cross_correlations_single_point() {
        let spec = KernelSpec::gaussian(vec![2.0], 0.0).unwrap();
        let d = DesignMatrix::from_rows(&[[0.0]]).unwrap();
        let r = cross_correlations(&spec, &[0.5], &d).unwrap();
        assert!((r[0] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn cross_correlations_at_design_row_is_k_column() {
        let spec = KernelSpec::gaussian(vec![3.0, 1.0], 0.1).unwrap();
        let d = DesignMatrix::from_rows(&[[0.1, 0.2], [0.5, 0.9], [0.8, 0.3]]).unwrap();
        let r = cross_correlations(&spec, d.row(1), &d).unwrap();
        assert_eq!(r[1], 1.1);
        for (j, v) in r.iter().enumerate() {
            assert_eq!(*v, spec.correlation(d.row(j), d.row(1)).unwrap());
        }
    }

    #[test]
    fn far_point_correlations_vanish() {
        let spec = KernelSpec::gaussian(vec![500.0, 500.0], 0.0).unwrap();
        let d = DesignMatrix::from_rows(&[[0.0, 0.0], [0.1, 0.05]]).unwrap();
        let r = cross_correlations(&spec, &[1.0, 1.0], &d).unwrap();
        assert!(r.iter().all(|v| *v < 1e-10));
    }

    #[test]
    fn jacobian_hand_value_and_zero_column() {
        let spec = KernelSpec::gaussian(vec![1.0], 0.0).unwrap();
        let d = DesignMatrix::from_rows(&[[0.0], [0.5]]).unwrap();
        let jac = cross_correlation_jacobian(&spec, &[0.5], &d).unwrap();
        assert!((jac[(0, 0)] + (-0.25f64).exp()).abs() < 1e-15);
        assert!((jac[(0, 0)] + 0.7788).abs() < 1e-4);
        assert_eq!(jac[(0, 1)], 0.0);
    }

    #[test]
    fn second_derivative_rule() {
        let spec = KernelSpec::gaussian(vec![0.5, 3.0, 7.0], 0.0).unwrap();
        assert_eq!(
            second_derivative_diagonal(&spec).unwrap(),
            vec![1.0, 6.0, 14.0]
        );
        let m = KernelSpec::matern(2.5, 1.0, 0.0).unwrap();
        assert!(matches!(
            second_derivative_diagonal(&m),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn rough_matern_has_no_gradient() {
        let m = KernelSpec::matern(0.5, 1.0, 0.0).unwrap();
        let d = DesignMatrix::from_rows(&[[0.2]]).unwrap();
        assert!(matches!(
            cross_correlation_jacobian(&m, &[0.4], &d),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn validation_and_dimensions() {
        assert!(KernelSpec::gaussian(vec![1.0, 0.0], 0.0).is_err());
        assert!(KernelSpec::gaussian(vec![1.0], -0.1).is_err());
        assert!(KernelSpec::matern(0.0, 1.0, 0.0).is_err());
        let k = KernelSpec::gaussian(vec![1.0, 1.0], 0.0).unwrap();
        assert!(matches!(
            k.correlation(&[0.1], &[0.2]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn json_field_names() {
        let k = KernelSpec::gaussian(vec![1.5, 2.0], 1e-6).unwrap();
        let v: serde_json::Value = serde_json::to_value(&k).unwrap();
        for key in ["family", "theta", "nu", "phi", "nugget"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["family"], "gaussian_separable");
        let back: KernelSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, k);
    }
}

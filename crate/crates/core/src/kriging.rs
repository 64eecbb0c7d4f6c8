//! Zero-mean Kriging with the separable Gaussian (or Matérn) correlation,
//! hyperparameters by profile maximum likelihood.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::design::{seeded_rng, DesignMatrix};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{cross_correlation_jacobian, KernelFamily, KernelSpec};

/// Largest nugget reached by the Cholesky fallback.
pub const NUGGET_ESCALATION_CAP: f64 = 1e-2;

/// Tiny negative variances above `-VARIANCE_ROUNDOFF * scale` are clamped to 0.
pub const VARIANCE_ROUNDOFF: f64 = 1e-10;

/// Relative roundoff allowance for the gradient-variance diagonal, scaled by
/// the prior term `2 theta_i`.
pub const GRADIENT_VARIANCE_ROUNDOFF: f64 = 1e-8;

const TAU2_FLOOR: f64 = 1e-300;

/// Search box and restart policy for the likelihood maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub starts: usize,
    pub theta_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
    /// Bounds on the Matérn scale `phi`.
    pub phi_bounds: (f64, f64),
    /// Matérn smoothness; held fixed during fitting.
    pub matern_nu: f64,
    /// Optimum of a previous fit used as the first start.
    #[serde(default)]
    pub warm_start: Option<KernelSpec>,
    /// Subtract the sample mean from the responses before fitting.
    #[serde(default)]
    pub center: bool,
    /// Smallest log-space step of the coordinate search.
    pub min_step: f64,
    pub max_evals_per_start: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            starts: 5,
            theta_bounds: (1e-3, 1e3),
            nugget_bounds: (1e-8, 1.0),
            phi_bounds: (1e-2, 1e2),
            matern_nu: 2.5,
            warm_start: None,
            center: false,
            min_step: 1e-3,
            max_evals_per_start: 400,
        }
    }
}

/// Fitted Kriging surrogate.
#[derive(Clone, Debug)]
pub struct KrigingModel {
    design: DesignMatrix,
    observations: Vec<f64>,
    kernel: KernelSpec,
    mean: f64,
    tau_squared: f64,
    chol_l: DMatrix<f64>,
    kinv_y: DVector<f64>,
    log_likelihood: f64,
    nugget_escalations: u32,
}

/// Hyperparameters and fit diagnostics, as written to campaign logs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub kernel: KernelSpec,
    pub tau_squared: f64,
    pub log_likelihood: f64,
    pub mean: f64,
    pub n: usize,
    pub nugget_escalations: u32,
}

struct Factorization {
    l: DMatrix<f64>,
    kinv_y: DVector<f64>,
    tau_squared: f64,
    log_likelihood: f64,
}

fn correlation_matrix(kernel: &KernelSpec, design: &DesignMatrix) -> DMatrix<f64> {
    let n = design.n();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = kernel.eval(design.row(i), design.row(i));
        for j in 0..i {
            let v = kernel.eval(design.row(i), design.row(j));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factorize(kernel: &KernelSpec, design: &DesignMatrix, y: &[f64]) -> Option<Factorization> {
    let n = design.n();
    let chol = correlation_matrix(kernel, design).cholesky()?;
    let l = chol.unpack();
    let mut z = y.to_vec();
    forward_solve(&l, &mut z);
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let mut kinv_y = DVector::from_vec(z);
    backward_solve_transpose(&l, kinv_y.as_mut_slice());
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let nf = n as f64;
    let tau_squared = (quad / nf).max(TAU2_FLOOR);
    let log_likelihood =
        -0.5 * (nf * (2.0 * std::f64::consts::PI * tau_squared).ln() + log_det + nf);
    log_likelihood.is_finite().then_some(Factorization {
        l,
        kinv_y,
        tau_squared,
        log_likelihood,
    })
}

/// Solves `L z = b` in place for lower-triangular `L`.
pub(crate) fn forward_solve(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[(i, k)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

/// Solves `L^T z = b` in place for lower-triangular `L`.
fn backward_solve_transpose(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[(k, i)] * b[k];
        }
        b[i] = s / l[(i, i)];
    }
}

impl KrigingModel {
    /// Builds the model for fixed kernel hyperparameters, with `tau^2` at its
    /// profile MLE `Y^T K^-1 Y / n`. If `K` is not numerically positive
    /// definite the nugget is raised tenfold at a time up to
    /// [`NUGGET_ESCALATION_CAP`].
    pub fn new(design: DesignMatrix, observations: Vec<f64>, kernel: KernelSpec) -> Result<Self> {
        Self::build(design, observations, kernel, false)
    }

    /// Like [`KrigingModel::new`], optionally centring responses on their mean.
    pub fn build(
        design: DesignMatrix,
        observations: Vec<f64>,
        mut kernel: KernelSpec,
        center: bool,
    ) -> Result<Self> {
        check_dim(design.n(), observations.len())?;
        kernel.validate()?;
        if let Some(m) = kernel.dim() {
            check_dim(m, design.m())?;
        }
        if let Some(bad) = observations.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite observation {bad}"
            )));
        }
        let mean = if center {
            observations.iter().sum::<f64>() / observations.len() as f64
        } else {
            0.0
        };
        let y: Vec<f64> = observations.iter().map(|v| v - mean).collect();
        let mut escalations = 0;
        loop {
            if let Some(f) = factorize(&kernel, &design, &y) {
                return Ok(KrigingModel {
                    design,
                    observations,
                    kernel,
                    mean,
                    tau_squared: f.tau_squared,
                    chol_l: f.l,
                    kinv_y: f.kinv_y,
                    log_likelihood: f.log_likelihood,
                    nugget_escalations: escalations,
                });
            }
            let next = (kernel.nugget * 10.0).max(1e-8);
            if next > NUGGET_ESCALATION_CAP * (1.0 + 1e-12) {
                return Err(Error::Numerical(format!(
                    "correlation matrix not positive definite even with nugget {}",
                    kernel.nugget
                )));
            }
            log::debug!(
                "Cholesky failed at nugget {}, retrying with {next}",
                kernel.nugget
            );
            kernel.nugget = next;
            escalations += 1;
        }
    }

    /// Replaces the process variance, e.g. to evaluate closed forms at a
    /// known `tau^2`.
    pub fn with_tau_squared(mut self, tau_squared: f64) -> Result<Self> {
        if !(tau_squared > 0.0 && tau_squared.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau^2 must be positive, got {tau_squared}"
            )));
        }
        self.tau_squared = tau_squared;
        Ok(self)
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn tau_squared(&self) -> f64 {
        self.tau_squared
    }

    pub fn log_likelihood(&self) -> f64 {
        self.log_likelihood
    }

    pub fn nugget_escalations(&self) -> u32 {
        self.nugget_escalations
    }

    /// Lower Cholesky factor of `K(X)`.
    pub fn chol_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn kinv_y(&self) -> &DVector<f64> {
        &self.kinv_y
    }

    pub fn summary(&self) -> ModelSummary {
        ModelSummary {
            kernel: self.kernel.clone(),
            tau_squared: self.tau_squared,
            log_likelihood: self.log_likelihood,
            mean: self.mean,
            n: self.design.n(),
            nugget_escalations: self.nugget_escalations,
        }
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        check_dim(self.design.m(), x.len())
    }

    pub(crate) fn cross(&self, x: &[f64]) -> Vec<f64> {
        self.design
            .rows()
            .map(|row| self.kernel.eval(x, row))
            .collect()
    }

    /// `r(x)^T K^-1 Y`, plus the mean when responses were centred.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let r = self.cross(x);
        self.mean
            + r.iter()
                .zip(self.kinv_y.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    /// `k(x,x) - r^T K^-1 r`, the variance without the `tau^2` factor.
    pub fn unscaled_variance(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let mut v = self.cross(x);
        forward_solve(&self.chol_l, &mut v);
        let quad: f64 = v.iter().map(|a| a * a).sum();
        let raw = self.kernel.variance_at_point() - quad;
        if raw >= 0.0 {
            Ok(raw)
        } else if raw > -VARIANCE_ROUNDOFF {
            Ok(0.0)
        } else {
            Err(Error::Numerical(format!(
                "prediction variance {raw} is negative at {x:?}"
            )))
        }
    }

    /// `tau^2 (k(x,x) - r^T K^-1 r)`.
    pub fn predict_variance(&self, x: &[f64]) -> Result<f64> {
        Ok(self.tau_squared * self.unscaled_variance(x)?)
    }

    /// Gradient of the predictor, `J(x) K^-1 Y` with `J` the cross-correlation
    /// Jacobian.
    pub fn predict_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let jac = cross_correlation_jacobian(&self.kernel, x, &self.design)?;
        Ok((jac * &self.kinv_y).iter().copied().collect())
    }

    /// Diagonal of the posterior gradient covariance without `tau^2`:
    /// `g_i(x) = 2 theta_i - (J K^-1 J^T)_ii`.
    pub fn gradient_variance_diagonal(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.kernel.require_gaussian()?;
        self.check_point(x)?;
        let jac = cross_correlation_jacobian(&self.kernel, x, &self.design)?;
        self.gradient_variance_from_jacobian(&jac, x)
    }

    fn gradient_variance_from_jacobian(&self, jac: &DMatrix<f64>, x: &[f64]) -> Result<Vec<f64>> {
        let m = jac.nrows();
        let mut out = Vec::with_capacity(m);
        let mut buf = vec![0.0; jac.ncols()];
        for i in 0..m {
            for (b, v) in buf.iter_mut().zip(jac.row(i).iter()) {
                *b = *v;
            }
            forward_solve(&self.chol_l, &mut buf);
            let quad: f64 = buf.iter().map(|a| a * a).sum();
            let prior = 2.0 * self.kernel.theta[i];
            let g = prior - quad;
            if g >= 0.0 {
                out.push(g);
            } else if g > -GRADIENT_VARIANCE_ROUNDOFF * prior {
                out.push(0.0);
            } else {
                return Err(Error::Numerical(format!(
                    "gradient variance {g} on axis {i} is negative at {x:?}"
                )));
            }
        }
        Ok(out)
    }

    /// Posterior expectation of the squared gradient norm,
    /// `|grad y_hat|^2 + tau^2 sum_i g_i(x)`.
    pub fn gradient_norm_expectation(&self, x: &[f64]) -> Result<f64> {
        let parts = self.gradient_parts(x)?;
        Ok(parts.expectation(self.tau_squared))
    }

    /// Predictor gradient and gradient-variance diagonal from one Jacobian.
    pub fn gradient_parts(&self, x: &[f64]) -> Result<GradientParts> {
        self.kernel.require_gaussian()?;
        self.check_point(x)?;
        let jac = cross_correlation_jacobian(&self.kernel, x, &self.design)?;
        let gradient = (&jac * &self.kinv_y).iter().copied().collect();
        let variance_diagonal = self.gradient_variance_from_jacobian(&jac, x)?;
        Ok(GradientParts {
            gradient,
            variance_diagonal,
        })
    }
}

/// Predictor gradient and the `g_i(x)` terms at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientParts {
    pub gradient: Vec<f64>,
    pub variance_diagonal: Vec<f64>,
}

impl GradientParts {
    pub fn expectation(&self, tau_squared: f64) -> f64 {
        let g2: f64 = self.gradient.iter().map(|g| g * g).sum();
        g2 + tau_squared * self.variance_diagonal.iter().sum::<f64>()
    }
}

/// Fits hyperparameters by maximizing the profile log-likelihood with the
/// default options.
pub fn fit(
    design: DesignMatrix,
    observations: Vec<f64>,
    family: KernelFamily,
    seed: u64,
) -> Result<KrigingModel> {
    fit_with(design, observations, family, seed, &FitOptions::default())
}

/// Multi-start, bounded coordinate search over log-hyperparameters.
///
/// The first start is `opts.warm_start` when given, otherwise the centre of
/// the box; the remaining starts are drawn from the seeded generator.
pub fn fit_with(
    design: DesignMatrix,
    observations: Vec<f64>,
    family: KernelFamily,
    seed: u64,
    opts: &FitOptions,
) -> Result<KrigingModel> {
    if design.n() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fitting needs at least 2 points, got {}",
            design.n()
        )));
    }
    check_dim(design.n(), observations.len())?;
    if let Some(bad) = observations.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite observation {bad}"
        )));
    }
    let m = design.m();
    let space = ParamSpace::new(family, m, opts);
    let mean = if opts.center {
        observations.iter().sum::<f64>() / observations.len() as f64
    } else {
        0.0
    };
    let y: Vec<f64> = observations.iter().map(|v| v - mean).collect();
    let objective = |p: &[f64]| -> f64 {
        factorize(&space.kernel(p), &design, &y)
            .map(|f| f.log_likelihood)
            .unwrap_or(f64::NEG_INFINITY)
    };

    let mut rng = seeded_rng(seed);
    let mut starts = Vec::with_capacity(opts.starts.max(1));
    match &opts.warm_start {
        Some(spec) if spec.family == family => starts.push(space.encode(spec)),
        _ => starts.push(space.centre()),
    }
    while starts.len() < opts.starts.max(1) {
        starts.push(space.random(&mut rng));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let (value, params) = coordinate_search(&objective, start, &space, opts);
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, params));
        }
    }
    let (value, params) = best.expect("at least one start");
    if !value.is_finite() {
        log::warn!("no start produced a finite likelihood; falling back to nugget escalation");
    }
    KrigingModel::build(design, observations, space.kernel(&params), opts.center)
}

/// Log-space parameterization: one coordinate per lengthscale (or the
/// Matérn scale), plus the nugget.
struct ParamSpace {
    family: KernelFamily,
    lower: Vec<f64>,
    upper: Vec<f64>,
    bounds: Vec<(f64, f64)>,
    nu: f64,
}

impl ParamSpace {
    fn new(family: KernelFamily, m: usize, opts: &FitOptions) -> Self {
        let (scale_lo, scale_hi, count) = match family {
            KernelFamily::GaussianSeparable => (opts.theta_bounds.0, opts.theta_bounds.1, m),
            KernelFamily::Matern => (opts.phi_bounds.0, opts.phi_bounds.1, 1),
        };
        let mut lower = vec![scale_lo.ln(); count];
        let mut upper = vec![scale_hi.ln(); count];
        lower.push(opts.nugget_bounds.0.ln());
        upper.push(opts.nugget_bounds.1.ln());
        let mut bounds = vec![(scale_lo, scale_hi); count];
        bounds.push(opts.nugget_bounds);
        ParamSpace {
            family,
            lower,
            upper,
            bounds,
            nu: opts.matern_nu,
        }
    }

    fn dim(&self) -> usize {
        self.lower.len()
    }

    fn kernel(&self, p: &[f64]) -> KernelSpec {
        let d = self.dim();
        // exp(ln(bound)) can land one ulp outside the bound.
        let unlog = |i: usize| p[i].exp().clamp(self.bounds[i].0, self.bounds[i].1);
        let nugget = unlog(d - 1);
        match self.family {
            KernelFamily::GaussianSeparable => KernelSpec {
                family: KernelFamily::GaussianSeparable,
                theta: (0..d - 1).map(unlog).collect(),
                nu: 2.5,
                phi: 1.0,
                nugget,
            },
            KernelFamily::Matern => KernelSpec {
                family: KernelFamily::Matern,
                theta: Vec::new(),
                nu: self.nu,
                phi: unlog(0),
                nugget,
            },
        }
    }

    fn encode(&self, spec: &KernelSpec) -> Vec<f64> {
        let mut p: Vec<f64> = match self.family {
            KernelFamily::GaussianSeparable => spec.theta.iter().map(|t| t.ln()).collect(),
            KernelFamily::Matern => vec![spec.phi.ln()],
        };
        p.push(spec.nugget.max(1e-300).ln());
        if p.len() != self.dim() {
            return self.centre();
        }
        self.clamp(p)
    }

    fn clamp(&self, mut p: Vec<f64>) -> Vec<f64> {
        for (i, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
        p
    }

    fn centre(&self) -> Vec<f64> {
        let d = self.dim();
        let mut p: Vec<f64> = (0..d - 1)
            .map(|i| 0.5 * (self.lower[i] + self.upper[i]))
            .collect();
        // Start the nugget small: deterministic responses rarely want more.
        p.push((self.lower[d - 1] + 2.0 * std::f64::consts::LN_10).min(self.upper[d - 1]));
        p
    }

    fn random<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let mut p: Vec<f64> = (0..d - 1)
            .map(|i| rng.random_range(self.lower[i]..=self.upper[i]))
            .collect();
        let lo = self.lower[d - 1];
        let hi = (lo + 6.0 * std::f64::consts::LN_10).min(self.upper[d - 1]);
        p.push(rng.random_range(lo..=hi));
        p
    }
}

fn coordinate_search<F: Fn(&[f64]) -> f64>(
    objective: &F,
    start: Vec<f64>,
    space: &ParamSpace,
    opts: &FitOptions,
) -> (f64, Vec<f64>) {
    let mut p = start;
    let mut value = objective(&p);
    let mut evals = 1;
    let mut step = 1.0;
    while step >= opts.min_step && evals < opts.max_evals_per_start {
        let mut improved = false;
        for i in 0..space.dim() {
            for dir in [1.0, -1.0] {
                let mut trial = p.clone();
                trial[i] = (p[i] + dir * step).clamp(space.lower[i], space.upper[i]);
                if trial[i] == p[i] {
                    continue;
                }
                let v = objective(&trial);
                evals += 1;
                if v > value + 1e-12 {
                    // Keep going while the direction pays off.
                    let mut stride = 2.0 * step;
                    p = trial;
                    value = v;
                    loop {
                        let mut further = p.clone();
                        further[i] = (p[i] + dir * stride).clamp(space.lower[i], space.upper[i]);
                        if further[i] == p[i] || evals >= opts.max_evals_per_start {
                            break;
                        }
                        let fv = objective(&further);
                        evals += 1;
                        if fv > value + 1e-12 {
                            p = further;
                            value = fv;
                            stride *= 2.0;
                        } else {
                            break;
                        }
                    }
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (value, p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss(theta: &[f64], g: f64) -> KernelSpec {
        KernelSpec::gaussian(theta.to_vec(), g).unwrap()
    }

    #[test]
    fn zero_observations_predict_zero() {
        let d = DesignMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let model = fit(d, vec![0.0, 0.0], KernelFamily::GaussianSeparable, 1).unwrap();
        assert!(model.kinv_y().iter().all(|v| *v == 0.0));
        assert_eq!(model.predict(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn two_point_interpolation() {
        let d = DesignMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let model = fit(d, vec![0.0, 1.0], KernelFamily::GaussianSeparable, 1).unwrap();
        assert!(model.predict(&[0.0]).unwrap().abs() < 1e-6);
        assert!((model.predict(&[1.0]).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn single_point_closed_forms() {
        let d = DesignMatrix::from_rows(&[[0.0]]).unwrap();
        let theta = 1.7;
        let y0 = 2.5;
        let model = KrigingModel::new(d, vec![y0], gauss(&[theta], 0.0))
            .unwrap()
            .with_tau_squared(1.0)
            .unwrap();
        for &x in &[0.2, 0.7, 1.0] {
            let want = y0 * (-theta * x * x).exp();
            assert!((model.predict(&[x]).unwrap() - want).abs() < 1e-14);
        }
        let d = DesignMatrix::from_rows(&[[0.0]]).unwrap();
        let model = KrigingModel::new(d, vec![1.0], gauss(&[1.0], 0.0))
            .unwrap()
            .with_tau_squared(3.0)
            .unwrap();
        let want = 3.0 * (1.0 - (-2.0f64).exp());
        assert!((model.predict_variance(&[1.0]).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn far_field_limits() {
        let d = DesignMatrix::from_rows(&[[0.0, 0.0], [0.1, 0.0]]).unwrap();
        let model = KrigingModel::new(d, vec![1.0, -2.0], gauss(&[300.0, 300.0], 0.05)).unwrap();
        let x = [1.0, 1.0];
        let tau2 = model.tau_squared();
        assert!((model.predict_variance(&x).unwrap() - tau2 * 1.05).abs() < 1e-8 * tau2);
        assert!(model.predict(&x).unwrap().abs() < 1e-8 * 3.0);
        let g = model.gradient_variance_diagonal(&x).unwrap();
        assert!((g[0] - 600.0).abs() < 1e-8 && (g[1] - 600.0).abs() < 1e-8);
    }

    #[test]
    fn gradient_at_single_design_point() {
        let d = DesignMatrix::from_rows(&[[0.4, 0.6]]).unwrap();
        let model = KrigingModel::new(d, vec![0.0], gauss(&[1.0, 3.0], 0.0))
            .unwrap()
            .with_tau_squared(2.0)
            .unwrap();
        let x = [0.4, 0.6];
        assert_eq!(model.predict_gradient(&x).unwrap(), vec![0.0, 0.0]);
        assert_eq!(
            model.gradient_variance_diagonal(&x).unwrap(),
            vec![2.0, 6.0]
        );
        let e = model.gradient_norm_expectation(&x).unwrap();
        assert!((e - 2.0 * 8.0).abs() < 1e-14);
    }

    #[test]
    fn dense_design_shrinks_gradient_variance() {
        let rows: Vec<[f64; 1]> = (0..11).map(|i| [i as f64 / 10.0]).collect();
        let d = DesignMatrix::from_rows(&rows).unwrap();
        let y: Vec<f64> = rows.iter().map(|r| r[0].sin()).collect();
        let model = KrigingModel::new(d, y, gauss(&[10.0], 1e-8)).unwrap();
        let g = model.gradient_variance_diagonal(&[0.55]).unwrap();
        assert!(g[0] < 20.0 * 0.5, "g = {}", g[0]);
    }

    #[test]
    fn variance_clamp_and_zero_at_data() {
        let d = DesignMatrix::from_rows(&[[0.1, 0.2], [0.5, 0.5], [0.9, 0.1]]).unwrap();
        let model =
            KrigingModel::new(d.clone(), vec![1.0, 2.0, 0.5], gauss(&[2.0, 2.0], 1e-6)).unwrap();
        for row in d.rows() {
            let v = model.predict_variance(row).unwrap();
            assert!(v >= 0.0 && v < 1e-8 * model.tau_squared());
        }
    }

    #[test]
    fn nugget_escalation_rescues_near_duplicates() {
        // Two nearly coincident points with a very smooth kernel and zero nugget.
        let d = DesignMatrix::from_rows(&[[0.5], [0.5 + 1e-9], [0.2]]).unwrap();
        let model = KrigingModel::new(d, vec![1.0, 1.0, 0.0], gauss(&[1e-3], 0.0)).unwrap();
        assert!(model.nugget_escalations() > 0);
        assert!(model.kernel().nugget > 0.0);
    }

    #[test]
    fn fit_errors() {
        let d = DesignMatrix::from_rows(&[[0.5]]).unwrap();
        assert!(matches!(
            fit(d, vec![1.0], KernelFamily::GaussianSeparable, 0),
            Err(Error::InvalidArgument(_))
        ));
        let d = DesignMatrix::from_rows(&[[0.5], [0.6]]).unwrap();
        assert!(fit(d, vec![1.0], KernelFamily::GaussianSeparable, 0).is_err());
    }

    #[test]
    fn fit_respects_bounds_and_is_deterministic() {
        let d = crate::design::latin_hypercube(12, 2, 4).unwrap();
        let y: Vec<f64> = d.rows().map(|r| (3.0 * r[0]).sin() + r[1] * r[1]).collect();
        let a = fit(d.clone(), y.clone(), KernelFamily::GaussianSeparable, 9).unwrap();
        let b = fit(d, y, KernelFamily::GaussianSeparable, 9).unwrap();
        assert_eq!(a.summary(), b.summary());
        let k = a.kernel();
        assert!(k.theta.iter().all(|t| (1e-3..=1e3).contains(t)));
        assert!((1e-8..=1.0).contains(&k.nugget), "nugget {}", k.nugget);
    }

    #[test]
    fn matern_fit_interpolates() {
        let d = crate::design::latin_hypercube(8, 2, 2).unwrap();
        let y: Vec<f64> = d.rows().map(|r| r[0] - r[1]).collect();
        let model = fit(d.clone(), y.clone(), KernelFamily::Matern, 3).unwrap();
        for (row, yi) in d.rows().zip(&y) {
            assert!((model.predict(row).unwrap() - yi).abs() < 1e-6);
        }
        assert!(matches!(
            model.gradient_variance_diagonal(d.row(0)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn centring_toggle() {
        let d = DesignMatrix::from_rows(&[[0.1], [0.5], [0.9]]).unwrap();
        let model =
            KrigingModel::build(d, vec![10.0, 11.0, 12.0], gauss(&[500.0], 1e-8), true).unwrap();
        // Far from the data the predictor returns to the sample mean.
        assert!((model.predict(&[0.3]).unwrap() - 11.0).abs() < 1e-3);
        assert_eq!(model.summary().mean, 11.0);
    }
}

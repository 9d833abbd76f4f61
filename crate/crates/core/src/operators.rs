//! Random diffusion coefficient, its spectral Galerkin matrix and fractional
//! powers.
//!
//! The coefficient is
//!
//! ```text
//! E(x, t, ω) = δ + amp · g(x) · tanh(ζ(θ_t ω)),
//! ζ(ω) = ∫_{-a_drv}^0 e^{κ s} ω(s)[mode 1] ds,
//! ```
//!
//! so it depends on `(t, ω)` only through the shifted path `θ_t ω`. Because it
//! is affine in the scalar `tanh ζ`, the Galerkin matrix splits as
//! `A_h = A_base + tanh(ζ) · A_mod` with both parts assembled once.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::grid::steps_of;
use crate::mds::WienerPath;
use crate::quadrature::composite_unit;

/// Spatial modulation profile `g(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `g ≡ 1`.
    Constant,
    /// `g(x) = 1 + sin(πx)`.
    SineBump,
}

impl Profile {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Profile::Constant => 1.0,
            Profile::SineBump => 1.0 + (PI * x).sin(),
        }
    }

    pub fn sup_abs(self) -> f64 {
        match self {
            Profile::Constant => 1.0,
            Profile::SineBump => 2.0,
        }
    }
}

/// Parameters of the random diffusion coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionField {
    pub delta: f64,
    pub amp: f64,
    pub kappa: f64,
    pub a_drv: f64,
    pub profile: Profile,
}

impl Default for DiffusionField {
    fn default() -> Self {
        Self {
            delta: 0.5,
            amp: 0.2,
            kappa: 1.0,
            a_drv: 8.0,
            profile: Profile::SineBump,
        }
    }
}

impl DiffusionField {
    /// Deterministic coefficient `E ≡ delta`.
    pub fn autonomous(delta: f64) -> Self {
        Self {
            delta,
            amp: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return config(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.amp >= 0.0) || !self.amp.is_finite() {
            return config(format!("amp must be non-negative, got {}", self.amp));
        }
        if self.amp * self.profile.sup_abs() >= self.delta {
            return config(format!(
                "ellipticity violated: amp * sup|g| = {} must be below delta = {}",
                self.amp * self.profile.sup_abs(),
                self.delta
            ));
        }
        if !(self.kappa > 0.0) || !(self.a_drv > 0.0) {
            return config("driver decay kappa and horizon a_drv must be positive");
        }
        Ok(())
    }

    /// Effective ellipticity floor `delta - amp · sup|g|`.
    pub fn ellipticity_floor(&self) -> f64 {
        self.delta - self.amp * self.profile.sup_abs()
    }

    /// Upper bound `K = delta + amp · sup|g|`.
    pub fn upper_bound(&self) -> f64 {
        self.delta + self.amp * self.profile.sup_abs()
    }

    /// Guaranteed decay rate of the discrete evolution family, `δ_eff · π²`.
    pub fn decay_rate(&self) -> f64 {
        self.ellipticity_floor() * PI * PI
    }

    /// `E(x)` for a given driver value.
    pub fn coefficient_at(&self, x: f64, zeta: f64) -> f64 {
        self.delta + self.amp * self.profile.eval(x) * zeta.tanh()
    }
}

/// Trapezoid weights of the driver functional on a path grid.
#[derive(Debug, Clone)]
pub struct DriverKernel {
    weights: Vec<f64>,
    span: i64,
}

impl DriverKernel {
    pub fn new(field: &DiffusionField, dt: f64) -> Result<Self> {
        let span = steps_of(field.a_drv, dt).map_err(|_| {
            Error::Config(format!(
                "driver horizon a_drv = {} must be a multiple of dt = {dt}",
                field.a_drv
            ))
        })?;
        if span < 1 {
            return config("driver horizon must span at least one step");
        }
        let weights = (0..=span)
            .map(|j| {
                let s = (j - span) as f64 * dt;
                let end = if j == 0 || j == span { 0.5 } else { 1.0 };
                end * dt * (field.kappa * s).exp()
            })
            .collect();
        Ok(Self { weights, span })
    }

    /// Number of grid steps covered by the driver window.
    pub fn span(&self) -> i64 {
        self.span
    }

    /// `ζ(θ_t ω)` for `t = k · dt`; the caller guarantees the window is sampled.
    pub(crate) fn eval_steps(&self, path: &WienerPath, k: i64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * path.mode_increment_steps(k, k + j as i64 - self.span, 1))
            .sum()
    }

    pub fn eval(&self, path: &WienerPath, t: f64) -> Result<f64> {
        let k = steps_of(t, path.dt())?;
        let (lo, hi) = path.steps_range();
        if k - self.span < lo || k > hi {
            return Err(Error::ShiftRange {
                lo: (k - self.span) as f64 * path.dt(),
                hi: t,
                path_lo: path.t_lo(),
                path_hi: path.t_hi(),
            });
        }
        Ok(self.eval_steps(path, k))
    }
}

/// `ζ(θ_t ω) = ∫_{-a_drv}^0 e^{κ s} (ω(t + s) - ω(t))[mode 1] ds`.
pub fn evaluate_driver(path: &WienerPath, t: f64, field: &DiffusionField) -> Result<f64> {
    DriverKernel::new(field, path.dt())?.eval(path, t)
}

/// `E(x, t, ω)`.
pub fn evaluate_coefficient(
    field: &DiffusionField,
    x: f64,
    t: f64,
    path: &WienerPath,
) -> Result<f64> {
    field.validate()?;
    if !(0.0..=1.0).contains(&x) {
        return config(format!("position {x} outside [0, 1]"));
    }
    Ok(field.coefficient_at(x, evaluate_driver(path, t, field)?))
}

/// `-∫₀¹ w(x) φ_m'(x) φ_n'(x) dx` for the sine basis, by 8-point
/// Gauss–Legendre on `4M` elements.
pub fn stiffness_matrix(dim: usize, weight: impl Fn(f64) -> f64) -> Result<DMatrix<f64>> {
    if dim == 0 {
        return config("Galerkin dimension must be positive");
    }
    let (nodes, qw) = composite_unit(4 * dim, 8);
    let mut out = DMatrix::zeros(dim, dim);
    let mut deriv = vec![0.0; dim];
    for (x, w) in nodes.iter().zip(&qw) {
        let e = weight(*x);
        if !e.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite coefficient at x = {x}"
            )));
        }
        for (n, d) in deriv.iter_mut().enumerate() {
            let k = (n + 1) as f64 * PI;
            *d = std::f64::consts::SQRT_2 * k * (k * x).cos();
        }
        let c = -w * e;
        for m in 0..dim {
            let cm = c * deriv[m];
            for n in m..dim {
                out[(m, n)] += cm * deriv[n];
            }
        }
    }
    for m in 0..dim {
        for n in 0..m {
            out[(m, n)] = out[(n, m)];
        }
    }
    Ok(out)
}

/// `A_h(ζ) = base + tanh(ζ) · modulation`.
#[derive(Debug, Clone)]
pub struct AffineOperator {
    base: DMatrix<f64>,
    modulation: DMatrix<f64>,
}

impl AffineOperator {
    pub fn for_field(field: &DiffusionField, dim: usize) -> Result<Self> {
        field.validate()?;
        let base = stiffness_matrix(dim, |_| field.delta)?;
        let profile = field.profile;
        let modulation = stiffness_matrix(dim, |x| field.amp * profile.eval(x))?;
        Ok(Self { base, modulation })
    }

    /// Operator with arbitrary parts; used for manufactured problems.
    pub fn from_parts(base: DMatrix<f64>, modulation: DMatrix<f64>) -> Result<Self> {
        if base.shape() != modulation.shape() || base.nrows() != base.ncols() {
            return config("operator parts must be square and of equal size");
        }
        Ok(Self { base, modulation })
    }

    pub fn dim(&self) -> usize {
        self.base.nrows()
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn modulation(&self) -> &DMatrix<f64> {
        &self.modulation
    }

    /// Matrix for a given modulation multiplier `c` (for the random field,
    /// `c = tanh ζ`).
    pub fn matrix(&self, c: f64) -> DMatrix<f64> {
        &self.base + &self.modulation * c
    }

    /// `A(c) v` without forming the matrix.
    pub fn apply(&self, c: f64, v: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.base * v;
        out.gemv(c, &self.modulation, v, 1.0);
        out
    }
}

/// Symmetric Galerkin matrix with its eigendecomposition.
#[derive(Debug, Clone)]
pub struct GalerkinOperator {
    matrix: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    time_tag: f64,
}

/// Invariant check results of a [`GalerkinOperator`].
#[derive(Debug, Clone, Copy)]
pub struct OperatorDiagnostics {
    pub asymmetry: f64,
    pub max_entry: f64,
    pub largest_eigenvalue: f64,
    pub eig_residual: f64,
}

impl GalerkinOperator {
    pub fn new(matrix: DMatrix<f64>, time_tag: f64) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite operator entry".into()));
        }
        let eig = SymmetricEigen::new(matrix.clone());
        Ok(Self {
            matrix,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            time_tag,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn time_tag(&self) -> f64 {
        self.time_tag
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn diagnostics(&self) -> OperatorDiagnostics {
        let asymmetry = (&self.matrix - self.matrix.transpose()).amax();
        let max_entry = self.matrix.amax();
        let largest_eigenvalue = self.eigenvalues.max();
        let resid = &self.matrix * &self.eigenvectors
            - &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues);
        OperatorDiagnostics {
            asymmetry,
            max_entry,
            largest_eigenvalue,
            eig_residual: resid.amax(),
        }
    }
}

/// `A_h(t, ω)` by direct quadrature of `E(·, t, ω)`.
pub fn assemble_operator(
    field: &DiffusionField,
    t: f64,
    path: &WienerPath,
    dim: usize,
) -> Result<GalerkinOperator> {
    field.validate()?;
    let zeta = evaluate_driver(path, t, field)?;
    let matrix = stiffness_matrix(dim, |x| field.coefficient_at(x, zeta))?;
    GalerkinOperator::new(matrix, t)
}

/// Reference used to define `X_α` norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceNorm {
    /// Constant-coefficient Dirichlet Laplacian, eigenvalues `(nπ)²`.
    #[default]
    FixedLaplacian,
    /// Eigendecomposition of the supplied operator.
    Instantaneous,
}

/// Operator whose fractional powers define a norm.
#[derive(Debug, Clone, Copy)]
pub enum FractionalReference<'a> {
    FixedLaplacian,
    Instantaneous(&'a GalerkinOperator),
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(-0.5..=1.0).contains(&alpha) {
        return config(format!("fractional exponent {alpha} outside [-1/2, 1]"));
    }
    Ok(())
}

/// `(nπ)^{2α}`, `n = 1..dim`.
pub fn laplacian_powers(alpha: f64, dim: usize) -> Vec<f64> {
    (1..=dim)
        .map(|n| ((n as f64 * PI).powi(2)).powf(alpha))
        .collect()
}

/// `(-A)^α v`.
pub fn fractional_apply(
    reference: FractionalReference<'_>,
    alpha: f64,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    match reference {
        FractionalReference::FixedLaplacian => {
            let w = laplacian_powers(alpha, v.len());
            Ok(DVector::from_iterator(
                v.len(),
                v.iter().zip(&w).map(|(x, w)| x * w),
            ))
        }
        FractionalReference::Instantaneous(op) => {
            if op.dim() != v.len() {
                return config("vector length does not match operator dimension");
            }
            if let Some(l) = op.eigenvalues.iter().find(|l| **l >= 0.0) {
                return Err(Error::Definiteness(*l));
            }
            let q = &op.eigenvectors;
            let mut y = q.tr_mul(v);
            for (yi, l) in y.iter_mut().zip(op.eigenvalues.iter()) {
                *yi *= (-l).powf(alpha);
            }
            Ok(q * y)
        }
    }
}

/// Norm specification of a fractional power space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalNormSpec {
    pub alpha: f64,
    pub reference: ReferenceNorm,
}

impl FractionalNormSpec {
    pub fn fixed(alpha: f64) -> Self {
        Self {
            alpha,
            reference: ReferenceNorm::FixedLaplacian,
        }
    }
}

/// `‖(-A)^α v‖`. The instantaneous reference needs an operator.
pub fn fractional_norm(
    v: &DVector<f64>,
    spec: FractionalNormSpec,
    op: Option<&GalerkinOperator>,
) -> Result<f64> {
    let reference = match (spec.reference, op) {
        (ReferenceNorm::FixedLaplacian, _) => FractionalReference::FixedLaplacian,
        (ReferenceNorm::Instantaneous, Some(op)) => FractionalReference::Instantaneous(op),
        (ReferenceNorm::Instantaneous, None) => {
            return config("instantaneous norm requires an assembled operator")
        }
    };
    Ok(fractional_apply(reference, spec.alpha, v)?.norm())
}

/// Precomputed fixed-Laplacian `X_α` norm for repeated use.
#[derive(Debug, Clone)]
pub struct FixedNorm {
    weights: Vec<f64>,
}

impl FixedNorm {
    pub fn new(alpha: f64, dim: usize) -> Self {
        Self {
            weights: laplacian_powers(alpha, dim),
        }
    }

    pub fn norm(&self, v: &DVector<f64>) -> f64 {
        v.iter()
            .zip(&self.weights)
            .map(|(x, w)| (x * w) * (x * w))
            .sum::<f64>()
            .sqrt()
    }

    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .zip(&self.weights)
            .map(|((x, y), w)| ((x - y) * w).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

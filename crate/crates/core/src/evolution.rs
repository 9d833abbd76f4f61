//! Discrete parabolic evolution family.
//!
//! `U_h(t, s, ω)` is the ordered product of per-step propagators
//! `S_k = exp(dt · A_h(t_k + dt/2, ω))`. Each step keeps the eigendecomposition
//! of its frozen midpoint operator, so `S_k`, `φ₁(dt A)` and the other matrix
//! functions used by the integrators are exact functions of one symmetric
//! matrix and share its eigenvectors.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{config, Error, Result};
use crate::grid::{steps_of, TimeGrid};
use crate::mds::{wiener_shift, ShiftIndex, WienerPath};
use crate::operators::{AffineOperator, DiffusionField, DriverKernel, GalerkinOperator};

/// `(e^z - 1) / z`, continuous at 0.
pub fn phi1(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 + 0.5 * z
    } else {
        z.exp_m1() / z
    }
}

/// One frozen-coefficient step.
#[derive(Debug, Clone)]
pub struct Step {
    pub(crate) q: DMatrix<f64>,
    pub(crate) lambda: DVector<f64>,
    /// `e^{dt λ_i}`.
    pub(crate) decay: DVector<f64>,
    /// `φ₁(dt λ_i) = (e^{dt λ_i} - 1) / (dt λ_i)`.
    pub(crate) phi1: DVector<f64>,
    /// `sqrt(φ₁(2 dt λ_i))`, the standard deviation gain of an exact
    /// Ornstein–Uhlenbeck step.
    pub(crate) mm_gain: DVector<f64>,
}

impl Step {
    fn new(op: &AffineOperator, c_mid: f64, dt: f64) -> Result<Self> {
        let a = op.matrix(c_mid);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite frozen operator".into()));
        }
        let eig = SymmetricEigen::new(a);
        let decay = eig.eigenvalues.map(|l| (dt * l).exp());
        let phi = eig.eigenvalues.map(|l| phi1(dt * l));
        let mm_gain = eig.eigenvalues.map(|l| phi1(2.0 * dt * l).sqrt());
        Ok(Self {
            q: eig.eigenvectors,
            lambda: eig.eigenvalues,
            decay,
            phi1: phi,
            mm_gain,
        })
    }

    /// `S_k v`.
    pub fn propagate(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut y = self.q.tr_mul(v);
        y.component_mul_assign(&self.decay);
        &self.q * y
    }

    /// `f(dt λ_i)` evaluated on the step's eigenvalues.
    pub fn spectral_fn(&self, dt: f64, f: impl Fn(f64) -> f64) -> DVector<f64> {
        self.lambda.map(|l| f(dt * l))
    }

    /// Spectral norm of `S_k`.
    pub fn norm(&self) -> f64 {
        self.decay.max()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        &self.q * DMatrix::from_diagonal(&self.decay) * self.q.transpose()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.lambda
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.q
    }
}

/// The discrete evolution family on a uniform grid.
#[derive(Debug, Clone)]
pub struct PropagatorChain {
    grid: TimeGrid,
    op: Arc<AffineOperator>,
    steps: Vec<Step>,
    /// Modulation multipliers at every grid point (`steps + 1` values).
    c_grid: Vec<f64>,
    decay_rate: f64,
}

impl PropagatorChain {
    /// Builds a chain from explicit modulation multipliers at the grid points
    /// and at the step midpoints. `decay_rate` is the guaranteed contraction
    /// rate used by envelope fits.
    pub fn from_schedule(
        op: Arc<AffineOperator>,
        grid: TimeGrid,
        c_grid: Vec<f64>,
        c_mid: Vec<f64>,
        decay_rate: f64,
    ) -> Result<Self> {
        if c_grid.len() != grid.len() || c_mid.len() != grid.steps() {
            return config("schedule length does not match grid");
        }
        let dt = grid.dt();
        let steps = c_mid
            .par_iter()
            .map(|m| Step::new(&op, *m, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            op,
            steps,
            c_grid,
            decay_rate,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn step(&self, k: usize) -> &Step {
        &self.steps[k]
    }

    pub fn operator(&self) -> &AffineOperator {
        &self.op
    }

    pub fn decay_rate(&self) -> f64 {
        self.decay_rate
    }

    /// Modulation multiplier at grid index `k`.
    pub fn c_at(&self, k: usize) -> f64 {
        self.c_grid[k]
    }

    /// `A_h(t_k)` applied to `v`.
    pub fn apply_grid_operator(&self, k: usize, v: &DVector<f64>) -> DVector<f64> {
        self.op.apply(self.c_grid[k], v)
    }

    /// `A_h(t_k)` with its eigendecomposition.
    pub fn grid_operator(&self, k: usize) -> Result<GalerkinOperator> {
        GalerkinOperator::new(self.op.matrix(self.c_grid[k]), self.grid.time(k))
    }

    pub fn index_of(&self, t: f64) -> Result<usize> {
        self.grid.index_of(t)
    }

    fn range(&self, t: f64, s: f64) -> Result<(usize, usize)> {
        if t < s {
            return Err(Error::Ordering { t, s });
        }
        Ok((self.index_of(s)?, self.index_of(t)?))
    }

    /// `U_h(t, s) v = S_{k(t)-1} ⋯ S_{k(s)} v`.
    pub fn apply(&self, t: f64, s: f64, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (ks, kt) = self.range(t, s)?;
        let mut out = v.clone();
        for step in &self.steps[ks..kt] {
            out = step.propagate(&out);
        }
        Ok(out)
    }

    /// Dense `U_h(t, s)`.
    pub fn matrix(&self, t: f64, s: f64) -> Result<DMatrix<f64>> {
        let (ks, kt) = self.range(t, s)?;
        let mut out = DMatrix::identity(self.dim(), self.dim());
        for step in &self.steps[ks..kt] {
            let y = step.q.tr_mul(&out);
            let y = DMatrix::from_diagonal(&step.decay) * y;
            out = &step.q * y;
        }
        Ok(out)
    }

    /// `∏ ‖S_k‖₂` over the steps between `s` and `t`, an upper bound for
    /// `‖U_h(t, s)‖₂`.
    pub fn norm_bound(&self, t: f64, s: f64) -> Result<f64> {
        let (ks, kt) = self.range(t, s)?;
        Ok(self.steps[ks..kt].iter().map(Step::norm).product())
    }
}

/// Builds chains for one diffusion field and Galerkin dimension.
#[derive(Debug, Clone)]
pub struct ChainBuilder {
    field: DiffusionField,
    op: Arc<AffineOperator>,
}

impl ChainBuilder {
    pub fn new(field: DiffusionField, dim: usize) -> Result<Self> {
        let op = AffineOperator::for_field(&field, dim)?;
        Ok(Self {
            field,
            op: Arc::new(op),
        })
    }

    pub fn field(&self) -> &DiffusionField {
        &self.field
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn operator(&self) -> &Arc<AffineOperator> {
        &self.op
    }

    /// Chain on `[t_start, t_end]` at the path resolution. The midpoint
    /// driver is the mean of the two neighbouring grid drivers.
    pub fn build(&self, path: &WienerPath, t_start: f64, t_end: f64) -> Result<PropagatorChain> {
        let dt = path.dt();
        let grid = TimeGrid::spanning(t_start, t_end, dt)?;
        let kernel = DriverKernel::new(&self.field, dt)?;
        path.require(t_start - kernel.span() as f64 * dt, t_end)?;
        let zeta: Vec<f64> = (grid.first()..=grid.last())
            .map(|k| kernel.eval_steps(path, k))
            .collect();
        let c_grid: Vec<f64> = zeta.iter().map(|z| z.tanh()).collect();
        let c_mid: Vec<f64> = zeta
            .windows(2)
            .map(|w| (0.5 * (w[0] + w[1])).tanh())
            .collect();
        PropagatorChain::from_schedule(
            self.op.clone(),
            grid,
            c_grid,
            c_mid,
            self.field.decay_rate(),
        )
    }
}

/// Residual of the cocycle identity `U(t+s, s, ω) = U(t, 0, θ_s ω)`.
#[derive(Debug, Clone, Copy)]
pub struct CocycleResidual {
    pub t: f64,
    pub s: f64,
    pub residual: f64,
    pub norm: f64,
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

pub fn cocycle_residual(
    builder: &ChainBuilder,
    path: &WienerPath,
    t: f64,
    s: f64,
) -> Result<CocycleResidual> {
    if t < 0.0 || s < 0.0 {
        return config("cocycle times must be non-negative");
    }
    let direct = builder.build(path, s, t + s)?.matrix(t + s, s)?;
    let shifted = wiener_shift(path, ShiftIndex(steps_of(s, path.dt())?))?;
    let via_shift = builder.build(&shifted, 0.0, t)?.matrix(t, 0.0)?;
    Ok(CocycleResidual {
        t,
        s,
        residual: spectral_norm(&(&direct - &via_shift)),
        norm: spectral_norm(&direct),
    })
}

/// Envelope `‖U(t, s)‖₂ <= C_hat e^{-λ_hat (t - s)}`.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub c_hat: f64,
    pub lambda_hat: f64,
    /// `(t - s, ‖U(t, s)‖₂, envelope)` per sample.
    pub samples: Vec<(f64, f64, f64)>,
}

impl DecayFit {
    /// CSV rows `t_minus_s, norm, envelope`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t_minus_s,norm,envelope")?;
        for (tau, n, e) in &self.samples {
            writeln!(
                w,
                "{},{},{}",
                crate::fmt17(*tau),
                crate::fmt17(*n),
                crate::fmt17(*e)
            )?;
        }
        Ok(())
    }
}

/// Minimal `C_hat` for `λ_hat` pinned to the chain's guaranteed decay rate.
pub fn decay_fit(chain: &PropagatorChain, pairs: &[(f64, f64)]) -> Result<DecayFit> {
    if pairs.is_empty() {
        return config("decay fit needs at least one (t, s) pair");
    }
    let lambda_hat = chain.decay_rate();
    let mut c_hat: f64 = 1.0;
    let mut raw = Vec::with_capacity(pairs.len());
    for &(t, s) in pairs {
        let norm = spectral_norm(&chain.matrix(t, s)?);
        c_hat = c_hat.max(norm * (lambda_hat * (t - s)).exp());
        raw.push((t - s, norm));
    }
    let samples = raw
        .into_iter()
        .map(|(tau, n)| (tau, n, c_hat * (-lambda_hat * tau).exp()))
        .collect();
    Ok(DecayFit {
        c_hat,
        lambda_hat,
        samples,
    })
}

/// Empirical smoothing constant
/// `max (t-s)^α e^{λ_hat (t-s)} ‖(-A_h(t))^α U_h(t, s)‖₂`.
pub fn smoothing_estimate(
    chain: &PropagatorChain,
    alpha: f64,
    pairs: &[(f64, f64)],
    lambda_hat: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return config(format!(
            "smoothing exponent must lie in (0, 1), got {alpha}"
        ));
    }
    let mut best: f64 = 0.0;
    for &(t, s) in pairs {
        if t <= s {
            return Err(Error::Ordering { t, s });
        }
        let op = chain.grid_operator(chain.index_of(t)?)?;
        if let Some(l) = op.eigenvalues().iter().find(|l| **l >= 0.0) {
            return Err(Error::Definiteness(*l));
        }
        let q = op.eigenvectors();
        let pow = op.eigenvalues().map(|l| (-l).powf(alpha));
        let frac = q * DMatrix::from_diagonal(&pow) * q.transpose();
        let norm = spectral_norm(&(frac * chain.matrix(t, s)?));
        best = best.max((t - s).powf(alpha) * (lambda_hat * (t - s)).exp() * norm);
    }
    Ok(best)
}

/// `-diag((nπ)²)`, the Dirichlet Laplacian in the sine basis.
pub fn dirichlet_laplacian(dim: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        dim,
        (1..=dim).map(|n| -(n as f64 * PI).powi(2)),
    ))
}

//! Pathwise mild solutions of the linear and semilinear equations.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::evolution::{ChainBuilder, PropagatorChain};
use crate::grid::TimeGrid;
use crate::mds::WienerPath;
use crate::operators::{
    fractional_norm, DiffusionField, FixedNorm, FractionalNormSpec, ReferenceNorm,
};

/// Scalar reaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearityKind {
    /// `F(u) = u - u³`.
    #[default]
    CubicFisher,
    /// `F(u) = -u³`.
    PureCubic,
    Zero,
    /// `F(u) = u³`. Not dissipative; used to exercise blow-up detection.
    #[serde(skip)]
    Explosive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearitySpec {
    pub kind: NonlinearityKind,
    pub rho: f64,
    /// Dissipativity constants: `F(u) u <= -c0 |u|^{1+ρ} + c1`.
    pub c0: f64,
    pub c1: f64,
    /// Growth constant:
    /// `|F(u) - F(v)| <= cf |u - v| (|u|^{ρ-1} + |v|^{ρ-1} + 1)`.
    pub cf: f64,
}

impl NonlinearitySpec {
    pub fn new(kind: NonlinearityKind) -> Self {
        let (rho, c0, c1, cf) = match kind {
            NonlinearityKind::CubicFisher => (3.0, 0.5, 0.5, 1.5),
            NonlinearityKind::PureCubic => (3.0, 1.0, 0.0, 1.5),
            NonlinearityKind::Zero => (1.0, 0.0, 0.0, 0.0),
            NonlinearityKind::Explosive => (3.0, 0.0, 0.0, 1.5),
        };
        Self {
            kind,
            rho,
            c0,
            c1,
            cf,
        }
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self.kind {
            NonlinearityKind::CubicFisher => u - u * u * u,
            NonlinearityKind::PureCubic => -u * u * u,
            NonlinearityKind::Zero => 0.0,
            NonlinearityKind::Explosive => u * u * u,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.kind == NonlinearityKind::Zero
    }

    /// Polynomial degree used for de-aliasing.
    pub fn degree(&self) -> usize {
        match self.kind {
            NonlinearityKind::Zero => 1,
            _ => 3,
        }
    }
}

impl Default for NonlinearitySpec {
    fn default() -> Self {
        Self::new(NonlinearityKind::CubicFisher)
    }
}

/// Uniform collocation grid for pointwise nonlinearities in the sine basis.
///
/// With `N` intervals the discrete sine transform on the interior nodes
/// `x_j = j / N` integrates trigonometric products of total frequency below
/// `2N` exactly.
#[derive(Debug, Clone)]
pub struct SpectralGrid {
    dim: usize,
    intervals: usize,
    /// `√2 sin(nπ x_j)`, one row per interior node.
    basis: DMatrix<f64>,
}

impl SpectralGrid {
    /// De-aliased grid with `4 ρ M` intervals.
    pub fn for_degree(dim: usize, degree: usize) -> Self {
        Self::with_intervals(dim, (4 * degree * dim).max(2))
    }

    pub fn with_intervals(dim: usize, intervals: usize) -> Self {
        let nodes = intervals - 1;
        let basis = DMatrix::from_fn(nodes, dim, |j, n| {
            let x = (j + 1) as f64 / intervals as f64;
            2f64.sqrt() * ((n + 1) as f64 * PI * x).sin()
        });
        Self {
            dim,
            intervals,
            basis,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn nodes(&self) -> Vec<f64> {
        (1..self.intervals)
            .map(|j| j as f64 / self.intervals as f64)
            .collect()
    }

    /// Values of the represented function at the interior nodes.
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> DVector<f64> {
        &self.basis * coeffs
    }

    /// Sine coefficients of nodal values.
    pub fn analyze(&self, values: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(values) / self.intervals as f64
    }

    /// `∫₀¹ |v|^p dx` by the node rule.
    pub fn lp_integral(&self, coeffs: &DVector<f64>, p: f64) -> f64 {
        self.synthesize(coeffs)
            .iter()
            .map(|v| v.abs().powf(p))
            .sum::<f64>()
            / self.intervals as f64
    }
}

/// `P_M F(v)`.
pub fn nemytskii(
    nonlinearity: &NonlinearitySpec,
    v: &DVector<f64>,
    grid: &SpectralGrid,
) -> Result<DVector<f64>> {
    if v.len() != grid.dim() {
        return config("coefficient vector does not match spectral grid dimension");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(
            "non-finite input to Nemytskii operator".into(),
        ));
    }
    if nonlinearity.is_zero() {
        return Ok(DVector::zeros(v.len()));
    }
    let values = grid.synthesize(v).map(|u| nonlinearity.eval(u));
    let out = grid.analyze(&values);
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("Nemytskii operator overflowed".into()));
    }
    Ok(out)
}

/// Quadrature of the local corrector `∫ U(t_{k+1}, s) A(s) (W_{t_{k+1}} - W_s) ds`
/// over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectorRule {
    /// Trapezoid at path resolution; the `s = t_{k+1}` endpoint vanishes,
    /// the left endpoint uses `A(t_k)`.
    Trapezoid,
    /// Exact for a linearly interpolated path and the frozen step operator:
    /// `(S_k - φ₁(dt A_k)) ΔW`.
    PiecewiseLinear,
    /// `(S_k - sqrt(φ₁(2 dt A_k))) ΔW`: the increment term `S ΔW - C` then has
    /// the exact one-step covariance of the frozen-operator stochastic
    /// convolution.
    #[default]
    MomentMatched,
}

/// Noise increment `W_{t_{i+1}} - W_{t_i}` for absolute grid step `i`, in the
/// first `dim` modes.
pub(crate) fn noise_increment(path: &WienerPath, i: i64, dim: usize) -> DVector<f64> {
    let modes = path.modes().min(dim);
    DVector::from_fn(dim, |n, _| {
        if n < modes {
            path.mode_increment_steps(i, i + 1, n + 1)
        } else {
            0.0
        }
    })
}

fn path_span(path: &WienerPath, chain: &PropagatorChain, k0: usize, k1: usize) -> Result<()> {
    let g = chain.grid();
    if path.dt() != g.dt() {
        return config("path and chain use different time steps");
    }
    path.require(g.time(k0), g.time(k1))
}

/// Local corrector `C_k` of step `k`.
pub fn local_corrector(
    chain: &PropagatorChain,
    k: usize,
    dw: &DVector<f64>,
    rule: CorrectorRule,
) -> DVector<f64> {
    let step = chain.step(k);
    let dt = chain.dt();
    match rule {
        CorrectorRule::Trapezoid => step.propagate(&chain.apply_grid_operator(k, dw)) * (0.5 * dt),
        CorrectorRule::PiecewiseLinear | CorrectorRule::MomentMatched => {
            let gain = if rule == CorrectorRule::PiecewiseLinear {
                &step.phi1
            } else {
                &step.mm_gain
            };
            let mut w = step.q.tr_mul(dw);
            for i in 0..w.len() {
                w[i] *= step.decay[i] - gain[i];
            }
            &step.q * w
        }
    }
}

/// One exponential step
/// `u ↦ S u + dt φ₁(dt A) drift + σ (S ΔW - C_k)`.
pub(crate) fn advance(
    chain: &PropagatorChain,
    k: usize,
    u: &DVector<f64>,
    drift: Option<&DVector<f64>>,
    dw: &DVector<f64>,
    sigma: f64,
    rule: CorrectorRule,
) -> DVector<f64> {
    let step = chain.step(k);
    let dt = chain.dt();
    let mut y = step.q.tr_mul(u);
    y.component_mul_assign(&step.decay);
    if let Some(d) = drift {
        let m = step.q.tr_mul(d);
        for i in 0..y.len() {
            y[i] += dt * step.phi1[i] * m[i];
        }
    }
    if sigma != 0.0 {
        let w = step.q.tr_mul(dw);
        let gain = match rule {
            CorrectorRule::Trapezoid => &step.decay,
            CorrectorRule::PiecewiseLinear => &step.phi1,
            CorrectorRule::MomentMatched => &step.mm_gain,
        };
        for i in 0..y.len() {
            y[i] += sigma * (gain[i] * w[i]);
        }
    }
    let mut out = &step.q * y;
    if sigma != 0.0 && rule == CorrectorRule::Trapezoid {
        out -= local_corrector(chain, k, dw, rule) * sigma;
    }
    out
}

/// `∫_{t_a}^{t_b} U_h(t_b, s) A_h(s) (W_{t_b} - W_s) ds`, assembled step by
/// step: on `[t_j, t_{j+1}]` the constant part `W_{t_b} - W_{t_{j+1}}`
/// integrates exactly to `(S_j - I)(W_{t_b} - W_{t_{j+1}})` and the rest is
/// the local corrector.
pub fn corrector_integral(
    chain: &PropagatorChain,
    path: &WienerPath,
    t_a: f64,
    t_b: f64,
    rule: CorrectorRule,
) -> Result<DVector<f64>> {
    if t_b < t_a {
        return Err(Error::Ordering { t: t_b, s: t_a });
    }
    let ka = chain.index_of(t_a)?;
    let kb = chain.index_of(t_b)?;
    path_span(path, chain, ka, kb)?;
    let dim = chain.dim();
    let first = chain.grid().first();
    let dws: Vec<DVector<f64>> = (ka..kb)
        .map(|k| noise_increment(path, first + k as i64, dim))
        .collect();
    // Remaining increment W_{t_b} - W_{t_{j+1}}.
    let mut tail = DVector::zeros(dim);
    let mut tails = vec![DVector::zeros(dim); dws.len()];
    for j in (0..dws.len()).rev() {
        tails[j] = tail.clone();
        tail += &dws[j];
    }
    let mut acc = DVector::zeros(dim);
    for (j, k) in (ka..kb).enumerate() {
        let step = chain.step(k);
        acc = step.propagate(&acc);
        acc += local_corrector(chain, k, &dws[j], rule);
        acc += step.propagate(&tails[j]) - &tails[j];
    }
    Ok(acc)
}

/// Local pathwise update
/// `h_{k+1} = U(t_{k+1}, t_k) h_k + σ U(t_{k+1}, t_k) ΔW - σ C_k`.
pub fn linear_pathwise_step(
    chain: &PropagatorChain,
    path: &WienerPath,
    t_k: f64,
    t_next: f64,
    h: &DVector<f64>,
    sigma: f64,
    rule: CorrectorRule,
) -> Result<DVector<f64>> {
    let k = chain.index_of(t_k)?;
    if chain.index_of(t_next)? != k + 1 {
        return config("linear step needs consecutive grid times");
    }
    path_span(path, chain, k, k + 1)?;
    let dw = noise_increment(path, chain.grid().first() + k as i64, chain.dim());
    Ok(advance(chain, k, h, None, &dw, sigma, rule))
}

/// Runs the linear recursion over chain steps `k0..k1` starting from `h0`,
/// returning all `k1 - k0 + 1` states.
pub fn linear_run(
    chain: &PropagatorChain,
    path: &WienerPath,
    k0: usize,
    k1: usize,
    h0: DVector<f64>,
    sigma: f64,
    rule: CorrectorRule,
) -> Result<Vec<DVector<f64>>> {
    path_span(path, chain, k0, k1)?;
    let first = chain.grid().first();
    let mut states = Vec::with_capacity(k1 - k0 + 1);
    states.push(h0);
    for k in k0..k1 {
        let dw = noise_increment(path, first + k as i64, chain.dim());
        let next = advance(chain, k, states.last().unwrap(), None, &dw, sigma, rule);
        states.push(next);
    }
    Ok(states)
}

#[derive(Debug, Clone)]
pub struct SemilinearProblem {
    pub field: DiffusionField,
    pub nonlinearity: NonlinearitySpec,
    pub forcing: DVector<f64>,
    pub sigma: f64,
    pub u0: DVector<f64>,
    pub blowup_threshold: f64,
    pub norm: FractionalNormSpec,
    pub corrector: CorrectorRule,
}

impl SemilinearProblem {
    /// Zero forcing, `σ = 0.1`, blow-up cap `10⁶` in `X_{0.2}`.
    pub fn new(field: DiffusionField, nonlinearity: NonlinearitySpec, u0: DVector<f64>) -> Self {
        let dim = u0.len();
        Self {
            field,
            nonlinearity,
            forcing: DVector::zeros(dim),
            sigma: 0.1,
            u0,
            blowup_threshold: 1e6,
            norm: FractionalNormSpec::fixed(0.2),
            corrector: CorrectorRule::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if self.forcing.len() != self.u0.len() {
            return config("forcing and initial state have different dimensions");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return config(format!(
                "noise intensity sigma = {} must be >= 0",
                self.sigma
            ));
        }
        if !(self.blowup_threshold > 0.0) {
            return config("blow-up threshold must be positive");
        }
        if !(0.0..1.0).contains(&self.norm.alpha) {
            return config(format!("alpha = {} must lie in [0, 1)", self.norm.alpha));
        }
        for (name, v) in [("u0", &self.u0), ("forcing", &self.forcing)] {
            let n = FixedNorm::new(self.norm.alpha, v.len()).norm(v);
            if !n.is_finite() {
                return config(format!("{name} has infinite X_alpha norm"));
            }
        }
        Ok(())
    }

    fn has_drift(&self) -> bool {
        !self.nonlinearity.is_zero() || self.forcing.iter().any(|f| *f != 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Status {
    Completed,
    BlowUp(f64),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    pub status: Status,
}

impl Trajectory {
    pub fn last(&self) -> &DVector<f64> {
        self.states
            .last()
            .expect("trajectory holds the initial state")
    }

    pub fn completed(&self) -> bool {
        self.status == Status::Completed
    }

    pub fn time(&self, k: usize) -> f64 {
        self.grid.time(k)
    }

    /// Every `factor`-th state, on the coarser grid.
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.grid.steps().is_multiple_of(factor) {
            return config("restriction factor must divide the step count");
        }
        let first = self.grid.first();
        if first % factor as i64 != 0 {
            return config("grid origin is not aligned with the restriction factor");
        }
        let grid = TimeGrid::new(
            first / factor as i64,
            self.grid.steps() / factor + 1,
            self.grid.dt() * factor as f64,
        )?;
        let states = self.states.iter().step_by(factor).cloned().collect();
        Ok(Self {
            grid,
            states,
            status: self.status,
        })
    }

    /// `t, l2, x_alpha, mode_1..mode_8`.
    pub fn write_csv<W: Write>(&self, mut w: W, alpha: f64) -> std::io::Result<()> {
        let shown = self.states.first().map_or(0, |s| s.len().min(8));
        write!(w, "t,l2,x_alpha")?;
        for n in 1..=shown {
            write!(w, ",mode_{n}")?;
        }
        writeln!(w)?;
        for (k, s) in self.states.iter().enumerate() {
            let xa = FixedNorm::new(alpha, s.len()).norm(s);
            write!(
                w,
                "{},{},{}",
                crate::fmt17(self.grid.time(k)),
                crate::fmt17(s.norm()),
                crate::fmt17(xa)
            )?;
            for v in s.iter().take(shown) {
                write!(w, ",{}", crate::fmt17(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn norm_of(
    problem: &SemilinearProblem,
    chain: &PropagatorChain,
    k: usize,
    v: &DVector<f64>,
    fixed: &FixedNorm,
) -> Result<f64> {
    match problem.norm.reference {
        ReferenceNorm::FixedLaplacian => Ok(fixed.norm(v)),
        ReferenceNorm::Instantaneous => {
            fractional_norm(v, problem.norm, Some(&chain.grid_operator(k)?))
        }
    }
}

/// Marches the semilinear problem over chain steps `k0..k1` from `u0`.
///
/// The reaction and forcing enter through the exponential Euler weight
/// `dt φ₁(dt A_k)`; the noise enters exactly as in [`linear_pathwise_step`].
pub fn integrate_window(
    problem: &SemilinearProblem,
    chain: &PropagatorChain,
    path: &WienerPath,
    k0: usize,
    k1: usize,
    u0: &DVector<f64>,
) -> Result<Trajectory> {
    problem.validate()?;
    if u0.len() != chain.dim() || problem.dim() != chain.dim() {
        return config("problem dimension does not match chain dimension");
    }
    if k1 < k0 || k1 > chain.len() {
        return config("integration window outside the chain");
    }
    path_span(path, chain, k0, k1)?;
    let g = chain.grid();
    let first = g.first();
    let spectral = SpectralGrid::for_degree(chain.dim(), problem.nonlinearity.degree());
    let fixed = FixedNorm::new(problem.norm.alpha, chain.dim());
    let drift_on = problem.has_drift();

    let mut states = Vec::with_capacity(k1 - k0 + 1);
    states.push(u0.clone());
    let mut status = Status::Completed;
    for k in k0..k1 {
        let u = states.last().unwrap();
        let drift = if drift_on {
            Some(nemytskii(&problem.nonlinearity, u, &spectral)? + &problem.forcing)
        } else {
            None
        };
        let dw = noise_increment(path, first + k as i64, chain.dim());
        let next = advance(
            chain,
            k,
            u,
            drift.as_ref(),
            &dw,
            problem.sigma,
            problem.corrector,
        );
        let n = norm_of(problem, chain, k + 1, &next, &fixed)?;
        if n.is_nan() {
            return Err(Error::Numerical(format!(
                "non-finite state at t = {}",
                g.time(k + 1)
            )));
        }
        if n > problem.blowup_threshold {
            status = Status::BlowUp(g.time(k + 1));
            break;
        }
        states.push(next);
    }
    Ok(Trajectory {
        grid: TimeGrid::new(first + k0 as i64, states.len(), g.dt())?,
        states,
        status,
    })
}

/// Integrates over the whole chain grid from `problem.u0`.
pub fn integrate_semilinear(
    problem: &SemilinearProblem,
    chain: &PropagatorChain,
    path: &WienerPath,
) -> Result<Trajectory> {
    integrate_window(problem, chain, path, 0, chain.len(), &problem.u0)
}

/// Strong-error reference: integrates on `[0, t_end]` against the fine path
/// and restricts the result to the grid coarser by `refine`.
pub fn autonomous_reference(
    problem: &SemilinearProblem,
    builder: &ChainBuilder,
    fine_path: &WienerPath,
    t_end: f64,
    refine: usize,
) -> Result<Trajectory> {
    if refine == 0 || !refine.is_power_of_two() {
        return config(format!("refinement factor {refine} must be a power of two"));
    }
    let chain = builder.build(fine_path, 0.0, t_end)?;
    integrate_semilinear(problem, &chain, fine_path)?.restrict(refine)
}

/// Root-mean-square endpoint error of a problem at `dt_fine · factor` against
/// the fine solution, one sample per path.
pub fn strong_endpoint_errors(
    problem: &SemilinearProblem,
    builder: &ChainBuilder,
    fine_path: &WienerPath,
    t_end: f64,
    factors: &[usize],
) -> Result<Vec<f64>> {
    let fine_chain = builder.build(fine_path, 0.0, t_end)?;
    let reference = integrate_semilinear(problem, &fine_chain, fine_path)?;
    if !reference.completed() {
        return Err(Error::Numerical("reference solution blew up".into()));
    }
    factors
        .iter()
        .map(|&f| {
            let coarse = fine_path.restrict(f)?;
            let chain = builder.build(&coarse, 0.0, t_end)?;
            let traj = integrate_semilinear(problem, &chain, &coarse)?;
            if !traj.completed() {
                return Err(Error::Numerical("coarse solution blew up".into()));
            }
            Ok((traj.last() - reference.last()).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::dirichlet_laplacian;
    use crate::mds::{sample_two_sided_path, NoiseSpectrum};
    use crate::operators::AffineOperator;
    use std::sync::Arc;

    fn scalar_chain(lambda: f64, t_end: f64, dt: f64) -> PropagatorChain {
        let op =
            AffineOperator::from_parts(DMatrix::from_element(1, 1, -lambda), DMatrix::zeros(1, 1))
                .unwrap();
        let grid = TimeGrid::spanning(0.0, t_end, dt).unwrap();
        let k = grid.steps();
        PropagatorChain::from_schedule(Arc::new(op), grid, vec![0.0; k + 1], vec![0.0; k], lambda)
            .unwrap()
    }

    fn ramp_path(t_end: f64, dt: f64) -> WienerPath {
        let grid = TimeGrid::spanning(0.0, t_end, dt).unwrap();
        let vals = grid.times().collect();
        WienerPath::from_values(NoiseSpectrum::new(1, 1.0).unwrap(), grid, vals).unwrap()
    }

    #[test]
    fn cubic_projection_ratio() {
        // sin³ = (3 sin(πx) - sin(3πx)) / 4.
        let g = SpectralGrid::for_degree(8, 3);
        let mut v = DVector::zeros(8);
        v[0] = 1.0 / 2f64.sqrt();
        let out = nemytskii(&NonlinearitySpec::new(NonlinearityKind::PureCubic), &v, &g).unwrap();
        let s = 1.0 / 2f64.sqrt();
        assert!((out[0] + 0.75 * s).abs() < 1e-14);
        assert!((out[2] - 0.25 * s).abs() < 1e-14);
        assert!((out[0] / out[2] + 3.0).abs() < 1e-12);
        for n in [1, 3, 4, 5, 6, 7] {
            assert!(out[n].abs() < 1e-14);
        }
    }

    #[test]
    fn nemytskii_trivial_cases() {
        let g = SpectralGrid::for_degree(4, 3);
        let v = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.05]);
        let zero = nemytskii(&NonlinearitySpec::new(NonlinearityKind::Zero), &v, &g).unwrap();
        assert_eq!(zero, DVector::zeros(4));
        let f0 = nemytskii(&NonlinearitySpec::default(), &DVector::zeros(4), &g).unwrap();
        assert_eq!(f0, DVector::zeros(4));
        let mut bad = v.clone();
        bad[1] = f64::NAN;
        assert!(matches!(
            nemytskii(&NonlinearitySpec::default(), &bad, &g),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn quartic_integral_is_exact() {
        // ∫ (√2 sin πx)^4 = 3/2.
        let g = SpectralGrid::for_degree(3, 3);
        let mut v = DVector::zeros(3);
        v[0] = 1.0;
        assert!((g.lp_integral(&v, 4.0) - 1.5).abs() < 1e-14);
    }

    #[test]
    fn corrector_trivial_cases() {
        let chain = scalar_chain(3.0, 1.0, 1.0 / 16.0);
        let grid = TimeGrid::spanning(0.0, 1.0, 1.0 / 16.0).unwrap();
        let zero = WienerPath::from_values(
            NoiseSpectrum::new(1, 1.0).unwrap(),
            grid,
            vec![0.0; grid.len()],
        )
        .unwrap();
        for rule in [
            CorrectorRule::Trapezoid,
            CorrectorRule::PiecewiseLinear,
            CorrectorRule::MomentMatched,
        ] {
            assert_eq!(
                corrector_integral(&chain, &zero, 0.0, 1.0, rule).unwrap()[0],
                0.0
            );
            let ramp = ramp_path(1.0, 1.0 / 16.0);
            assert_eq!(
                corrector_integral(&chain, &ramp, 0.5, 0.5, rule).unwrap()[0],
                0.0
            );
            assert!(matches!(
                corrector_integral(&chain, &ramp, 0.0, 0.51, rule),
                Err(Error::Alignment(_))
            ));
        }
    }

    #[test]
    fn ramp_corrector_converges_at_second_order() {
        // ∫₀^T e^{-λτ}(-λ)τ dτ = -(1 - e^{-λT}(1 + λT)) / λ.
        let lambda = PI * PI;
        let t = 1.0;
        let exact = -(1.0 - (-lambda * t).exp() * (1.0 + lambda * t)) / lambda;
        for rule in [
            CorrectorRule::Trapezoid,
            CorrectorRule::PiecewiseLinear,
            CorrectorRule::MomentMatched,
        ] {
            let errs: Vec<f64> = [32.0, 64.0, 128.0]
                .iter()
                .map(|n| {
                    let dt = 1.0 / n;
                    let c = corrector_integral(
                        &scalar_chain(lambda, t, dt),
                        &ramp_path(t, dt),
                        0.0,
                        t,
                        rule,
                    )
                    .unwrap();
                    (c[0] - exact).abs()
                })
                .collect();
            if rule == CorrectorRule::PiecewiseLinear {
                assert!(errs[2] < 1e-13, "{errs:?}");
            } else {
                assert!(
                    errs[0] / errs[1] > 3.5 && errs[1] / errs[2] > 3.5,
                    "{rule:?} {errs:?}"
                );
            }
        }
    }

    fn default_setup() -> (ChainBuilder, WienerPath, PropagatorChain) {
        let s = NoiseSpectrum::new(8, 1.0).unwrap();
        let path = sample_two_sided_path(&s, -8.0, 1.0, 1.0 / 64.0, 11).unwrap();
        let builder = ChainBuilder::new(DiffusionField::default(), 8).unwrap();
        let chain = builder.build(&path, 0.0, 1.0).unwrap();
        (builder, path, chain)
    }

    #[test]
    fn global_corrector_matches_local_recursion() {
        let (_, path, chain) = default_setup();
        for rule in [
            CorrectorRule::Trapezoid,
            CorrectorRule::PiecewiseLinear,
            CorrectorRule::MomentMatched,
        ] {
            let states =
                linear_run(&chain, &path, 0, chain.len(), DVector::zeros(8), 1.0, rule).unwrap();
            let w = DVector::from_vec(path.values(1.0).unwrap());
            let global = chain.apply(1.0, 0.0, &w).unwrap()
                - corrector_integral(&chain, &path, 0.0, 1.0, rule).unwrap();
            let diff = (&global - states.last().unwrap()).norm();
            assert!(diff <= 1e-12 * (1.0 + global.norm()), "{rule:?}: {diff}");
        }
    }

    #[test]
    fn linear_step_reductions() {
        let (_, path, chain) = default_setup();
        let h = DVector::from_fn(8, |i, _| 1.0 / (1.0 + i as f64));
        let dt = chain.dt();
        let prop = chain.apply(dt, 0.0, &h).unwrap();
        let step = linear_pathwise_step(&chain, &path, 0.0, dt, &h, 0.0, CorrectorRule::default())
            .unwrap();
        assert_eq!(step, prop);
        assert!(linear_pathwise_step(
            &chain,
            &path,
            0.0,
            2.0 * dt,
            &h,
            1.0,
            CorrectorRule::default()
        )
        .is_err());
    }

    #[test]
    fn flat_increment_and_zero_state_stay_zero() {
        let chain = scalar_chain(2.0, 1.0, 0.125);
        let grid = TimeGrid::spanning(0.0, 1.0, 0.125).unwrap();
        let flat = WienerPath::from_values(
            NoiseSpectrum::new(1, 1.0).unwrap(),
            grid,
            vec![0.0; grid.len()],
        )
        .unwrap();
        let out = linear_pathwise_step(
            &chain,
            &flat,
            0.25,
            0.375,
            &DVector::zeros(1),
            1.0,
            CorrectorRule::Trapezoid,
        )
        .unwrap();
        assert_eq!(out[0], 0.0);
    }

    #[test]
    fn semilinear_reductions() {
        let (_, path, chain) = default_setup();
        let u0 = DVector::from_fn(8, |i, _| 0.5 / (1.0 + i as f64));
        let mut p = SemilinearProblem::new(
            DiffusionField::default(),
            NonlinearitySpec::new(NonlinearityKind::Zero),
            u0.clone(),
        );
        p.sigma = 0.0;
        let traj = integrate_semilinear(&p, &chain, &path).unwrap();
        for (k, s) in traj.states.iter().enumerate() {
            assert_eq!(*s, chain.apply(chain.grid().time(k), 0.0, &u0).unwrap());
        }

        p.sigma = 1.0;
        p.u0 = DVector::zeros(8);
        let traj = integrate_semilinear(&p, &chain, &path).unwrap();
        let h = linear_run(
            &chain,
            &path,
            0,
            chain.len(),
            DVector::zeros(8),
            1.0,
            p.corrector,
        )
        .unwrap();
        assert_eq!(traj.states, h);
    }

    #[test]
    fn explosive_reaction_blows_up() {
        let (_, path, chain) = default_setup();
        let mut u0 = DVector::zeros(8);
        u0[0] = 20.0;
        let mut p = SemilinearProblem::new(
            DiffusionField::default(),
            NonlinearitySpec::new(NonlinearityKind::Explosive),
            u0,
        );
        p.sigma = 0.0;
        let traj = integrate_semilinear(&p, &chain, &path).unwrap();
        match traj.status {
            Status::BlowUp(t) => {
                assert!(t > 0.0 && t <= 1.0);
                assert_eq!(traj.grid.end() + chain.dt(), t);
            }
            Status::Completed => panic!("no blow-up"),
        }

        let mut higher = p.clone();
        higher.blowup_threshold = 1e12;
        let longer = integrate_semilinear(&higher, &chain, &path).unwrap();
        assert!(longer.states.len() >= traj.states.len());
        assert_eq!(&longer.states[..traj.states.len()], &traj.states[..]);
    }

    #[test]
    fn restriction_of_trajectories() {
        let (_, path, chain) = default_setup();
        let p = SemilinearProblem::new(
            DiffusionField::default(),
            NonlinearitySpec::default(),
            DVector::zeros(8),
        );
        let traj = integrate_semilinear(&p, &chain, &path).unwrap();
        let r = traj.restrict(4).unwrap();
        assert_eq!(r.states.len(), 17);
        assert_eq!(r.states[16], traj.states[64]);
        assert_eq!(r.grid.dt(), chain.dt() * 4.0);
        assert_eq!(traj.restrict(1).unwrap().states, traj.states);
    }

    #[test]
    fn reference_refine_one_is_identity() {
        let (builder, path, chain) = default_setup();
        let p = SemilinearProblem::new(
            DiffusionField::default(),
            NonlinearitySpec::default(),
            DVector::zeros(8),
        );
        let a = integrate_semilinear(&p, &chain, &path).unwrap();
        let b = autonomous_reference(&p, &builder, &path, 1.0, 1).unwrap();
        assert_eq!(a.states, b.states);
        assert!(autonomous_reference(&p, &builder, &path, 1.0, 3).is_err());
    }

    #[test]
    fn laplacian_helper_matches_unit_field() {
        let l = dirichlet_laplacian(3);
        assert!((l[(2, 2)] + 9.0 * PI * PI).abs() < 1e-12);
    }
}

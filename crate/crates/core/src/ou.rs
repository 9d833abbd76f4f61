//! The stationary Ornstein–Uhlenbeck-type process `Z(θ_t ω)`.
//!
//! `Z(ω)` is realised as the state at time 0 of the linear pathwise
//! recursion with `σ = 1`, started from 0 at `-a`. Written out, this is the
//! truncated integral `∫_{-a}^0 U(0, r) A(r) ω_r dr` minus the boundary term
//! `U(0, -a) ω_{-a}`, i.e. the stochastic convolution over `[-a, 0]`.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::evolution::{ChainBuilder, PropagatorChain};
use crate::grid::{steps_of, TimeGrid};
use crate::mds::{wiener_shift, ShiftIndex, WienerPath};
use crate::operators::FixedNorm;
use crate::pathwise::{advance, corrector_integral, linear_run, noise_increment, CorrectorRule};

#[derive(Debug, Clone)]
pub struct StationaryState {
    pub z0: DVector<f64>,
    pub truncation_horizon: f64,
    /// `C_hat · max_{[-a, -a/2]} ‖ω‖ · e^{-λ_hat a}`.
    pub truncation_bound: f64,
    pub c_hat: f64,
    pub lambda_hat: f64,
}

#[derive(Debug, Clone)]
pub struct OuTrajectory {
    pub grid: TimeGrid,
    pub states: Vec<DVector<f64>>,
    /// `(‖Z‖_{L²}, ‖Z‖_{X_β})` per state.
    pub norms: Vec<(f64, f64)>,
}

impl OuTrajectory {
    fn new(grid: TimeGrid, states: Vec<DVector<f64>>, beta: f64) -> Self {
        let dim = states.first().map_or(0, |s| s.len());
        let xb = FixedNorm::new(beta, dim);
        let norms = states.iter().map(|s| (s.norm(), xb.norm(s))).collect();
        Self {
            grid,
            states,
            norms,
        }
    }
}

fn check_horizon(a: f64) -> Result<()> {
    if !(a > 0.0 && a.is_finite()) {
        return config(format!("truncation horizon a = {a} must be positive"));
    }
    Ok(())
}

/// Tail bound for a stationary state built on the window `[-a, 0]` of
/// `chain` (whose grid must start at `-a`).
fn truncation_bound(chain: &PropagatorChain, path: &WienerPath, a: f64) -> Result<(f64, f64, f64)> {
    let lambda_hat = chain.decay_rate();
    let end = chain.grid().end();
    let c_hat = chain.norm_bound(end, end - a)? * (lambda_hat * a).exp();
    let dt = path.dt();
    let k_lo = steps_of(end - a, dt)?;
    let k_hi = steps_of(end - a / 2.0, dt)?;
    let mut tail: f64 = 0.0;
    for k in k_lo..=k_hi {
        // Norm of θ_end ω at time k dt - end.
        let mut s = 0.0;
        for n in 1..=path.modes() {
            let v = path.mode_increment_steps(steps_of(end, dt)?, k, n);
            s += v * v;
        }
        tail = tail.max(s.sqrt());
    }
    Ok((
        c_hat.max(1.0),
        lambda_hat,
        c_hat.max(1.0) * tail * (-lambda_hat * a).exp(),
    ))
}

/// `Z(ω)` from the window `[-a, 0]`.
pub fn construct_initial(
    builder: &ChainBuilder,
    path: &WienerPath,
    a: f64,
    rule: CorrectorRule,
) -> Result<StationaryState> {
    check_horizon(a)?;
    let chain = builder.build(path, -a, 0.0)?;
    let z = linear_run(
        &chain,
        path,
        0,
        chain.len(),
        DVector::zeros(chain.dim()),
        1.0,
        rule,
    )?;
    let (c_hat, lambda_hat, bound) = truncation_bound(&chain, path, a)?;
    Ok(StationaryState {
        z0: z.last().unwrap().clone(),
        truncation_horizon: a,
        truncation_bound: bound,
        c_hat,
        lambda_hat,
    })
}

/// `Z(θ_t ω)` for `t` on `[0, t_end]` by the local recursion from `z0`.
pub fn propagate(
    state: &StationaryState,
    builder: &ChainBuilder,
    path: &WienerPath,
    t_end: f64,
    beta: f64,
    rule: CorrectorRule,
) -> Result<OuTrajectory> {
    let chain = builder.build(path, 0.0, t_end)?;
    propagate_on(state, &chain, path, beta, rule)
}

/// Same as [`propagate`] on a prebuilt chain starting at 0.
pub fn propagate_on(
    state: &StationaryState,
    chain: &PropagatorChain,
    path: &WienerPath,
    beta: f64,
    rule: CorrectorRule,
) -> Result<OuTrajectory> {
    if chain.grid().first() != 0 {
        return config("OU propagation starts at t = 0");
    }
    let states = linear_run(chain, path, 0, chain.len(), state.z0.clone(), 1.0, rule)?;
    Ok(OuTrajectory::new(chain.grid(), states, beta))
}

/// `Z(θ_t ω)` on `[t_lo, t_hi]` from a single chain on `[t_lo - a, t_hi]`:
/// the recursion starts from 0 at `t_lo - a`. The state at `t_lo` equals the
/// [`construct_initial`] state of `θ_{t_lo} ω` bitwise.
pub fn z_window(
    builder: &ChainBuilder,
    path: &WienerPath,
    t_lo: f64,
    t_hi: f64,
    a: f64,
    beta: f64,
    rule: CorrectorRule,
) -> Result<OuTrajectory> {
    check_horizon(a)?;
    let chain = builder.build(path, t_lo - a, t_hi)?;
    let k0 = chain.index_of(t_lo)?;
    let states = linear_run(
        &chain,
        path,
        0,
        chain.len(),
        DVector::zeros(chain.dim()),
        1.0,
        rule,
    )?;
    let grid = chain.grid().window(t_lo, t_hi)?;
    Ok(OuTrajectory::new(grid, states[k0..].to_vec(), beta))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StationarityRecord {
    pub t: f64,
    pub s: f64,
    pub residual: f64,
    pub truncation_bound: f64,
    pub z_norm: f64,
}

/// `‖Z(t + s, ω) - Z(t, θ_s ω)‖_{L²}`, both sides built from their own
/// stationary states.
pub fn stationarity_residual(
    builder: &ChainBuilder,
    path: &WienerPath,
    t: f64,
    s: f64,
    a: f64,
    rule: CorrectorRule,
) -> Result<StationarityRecord> {
    if t < 0.0 || s < 0.0 {
        return config("stationarity times must be non-negative");
    }
    let left_state = construct_initial(builder, path, a, rule)?;
    let left = propagate(&left_state, builder, path, t + s, 0.0, rule)?;
    let shifted = wiener_shift(path, ShiftIndex(steps_of(s, path.dt())?))?;
    let right_state = construct_initial(builder, &shifted, a, rule)?;
    let right = propagate(&right_state, builder, &shifted, t, 0.0, rule)?;
    let zl = left.states.last().unwrap();
    let zr = right.states.last().unwrap();
    Ok(StationarityRecord {
        t,
        s,
        residual: (zl - zr).norm(),
        truncation_bound: left_state.truncation_bound + right_state.truncation_bound,
        z_norm: zl.norm(),
    })
}

/// All `(t, s)` residuals from one chain on `[-a, max(t + s)]`.
///
/// The chain on `θ_s ω` over `[-a, t]` coincides factor by factor with the
/// window `[s - a, s + t]` of the chain on `ω`, and the shifted path has the
/// same increments, so each right-hand side is a window run of the shared
/// chain.
pub fn stationarity_batch(
    builder: &ChainBuilder,
    path: &WienerPath,
    pairs: &[(f64, f64)],
    a: f64,
    rule: CorrectorRule,
) -> Result<Vec<StationarityRecord>> {
    check_horizon(a)?;
    if pairs.iter().any(|(t, s)| *t < 0.0 || *s < 0.0) {
        return config("stationarity times must be non-negative");
    }
    let horizon = pairs.iter().map(|(t, s)| t + s).fold(0.0, f64::max);
    let chain = builder.build(path, -a, horizon)?;
    let dim = chain.dim();
    let left = linear_run(&chain, path, 0, chain.len(), DVector::zeros(dim), 1.0, rule)?;
    let (_, lambda_hat, _) = truncation_bound(&chain, path, a)?;
    pairs
        .iter()
        .map(|&(t, s)| {
            let k_start = chain.index_of(s - a)?;
            let k_end = chain.index_of(t + s)?;
            let right = linear_run(&chain, path, k_start, k_end, DVector::zeros(dim), 1.0, rule)?;
            let zl = &left[k_end];
            let zr = right.last().unwrap();
            let bound = |lo: f64| -> Result<f64> {
                let c_hat = chain.norm_bound(lo + a, lo)? * (lambda_hat * a).exp();
                let mut tail: f64 = 0.0;
                let dt = path.dt();
                let (k0, k1) = (steps_of(lo, dt)?, steps_of(lo + a / 2.0, dt)?);
                let anchor = steps_of(lo + a, dt)?;
                for k in k0..=k1 {
                    let n2: f64 = (1..=path.modes())
                        .map(|n| path.mode_increment_steps(anchor, k, n).powi(2))
                        .sum();
                    tail = tail.max(n2.sqrt());
                }
                Ok(c_hat.max(1.0) * tail * (-lambda_hat * a).exp())
            };
            Ok(StationarityRecord {
                t,
                s,
                residual: (zl - zr).norm(),
                truncation_bound: bound(-a)? + bound(s - a)?,
                z_norm: zl.norm(),
            })
        })
        .collect()
}

/// Maximum relative gap between the recursive `Z(θ_t ω)` and the global
/// formula `U(t, 0) Z(ω) + U(t, 0) ω_t - ∫₀^t U(t, r) A(r)(ω_t - ω_r) dr` at
/// the given checkpoints.
pub fn global_local_gap(
    state: &StationaryState,
    builder: &ChainBuilder,
    path: &WienerPath,
    checkpoints: &[f64],
    rule: CorrectorRule,
) -> Result<f64> {
    let t_end = checkpoints.iter().copied().fold(0.0, f64::max);
    let chain = builder.build(path, 0.0, t_end)?;
    let local = propagate_on(state, &chain, path, 0.0, rule)?;
    let mut worst: f64 = 0.0;
    for &t in checkpoints {
        let k = chain.index_of(t)?;
        let mut w = DVector::zeros(chain.dim());
        for (n, v) in path.values(t)?.iter().take(chain.dim()).enumerate() {
            w[n] = *v;
        }
        let global = chain.apply(t, 0.0, &(&state.z0 + w))?
            - corrector_integral(&chain, path, 0.0, t, rule)?;
        let gap = (&global - &local.states[k]).norm() / global.norm().max(f64::MIN_POSITIVE);
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// One row of the temperedness table.
#[derive(Debug, Clone, Serialize)]
pub struct TemperednessRow {
    pub t: f64,
    pub y: f64,
    /// `e^{-γ t} Y(t)` per requested `γ`.
    pub discounted: Vec<f64>,
    /// `ln⁺ Y(t) / t`.
    pub log_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TemperednessTable {
    pub beta: f64,
    pub gammas: Vec<f64>,
    pub horizon: f64,
    pub rows: Vec<TemperednessRow>,
    /// Least-squares slope of `ln⁺ Y` against `t` over `t >= horizon / 2`.
    pub slope: f64,
}

impl TemperednessTable {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t,y")?;
        for g in &self.gammas {
            write!(w, ",discounted_gamma_{g}")?;
        }
        writeln!(w, ",log_rate")?;
        for r in &self.rows {
            write!(w, "{},{}", crate::fmt17(r.t), crate::fmt17(r.y))?;
            for d in &r.discounted {
                write!(w, ",{}", crate::fmt17(*d))?;
            }
            writeln!(w, ",{}", crate::fmt17(r.log_rate))?;
        }
        Ok(())
    }

    pub fn row_at(&self, t: f64) -> Option<&TemperednessRow> {
        self.rows.iter().find(|r| (r.t - t).abs() < 1e-9)
    }
}

/// Default ladder: log-spaced points from `dt` to `horizon` plus a uniform
/// grid on `[horizon/2, horizon]`, rounded to the time step.
pub fn default_ladder(horizon: f64, dt: f64) -> Vec<f64> {
    let mut pts: Vec<i64> = Vec::new();
    let n_log = 24;
    let lo = dt.max(horizon * 1e-3).ln();
    let hi = horizon.ln();
    for i in 0..=n_log {
        let t = (lo + (hi - lo) * i as f64 / n_log as f64).exp();
        pts.push(((t / dt).round() as i64).max(1));
    }
    for i in 0..=50 {
        let t = horizon * (0.5 + 0.5 * i as f64 / 50.0);
        pts.push((t / dt).round() as i64);
    }
    pts.sort_unstable();
    pts.dedup();
    pts.into_iter().map(|k| k as f64 * dt).collect()
}

pub fn log_plus(y: f64) -> f64 {
    if y > 1.0 {
        y.ln()
    } else {
        0.0
    }
}

/// Temperedness table for `Y(t) = ‖Z(θ_{-t} ω)‖_{X_β}` on `ladder ⊂ (0, T]`.
///
/// The recursion runs once from 0 at `-T - a` up to 0, streaming the chain in
/// blocks of `block` steps.
#[allow(clippy::too_many_arguments)]
pub fn temperedness_diagnostic(
    builder: &ChainBuilder,
    path: &WienerPath,
    beta: f64,
    gammas: &[f64],
    horizon: f64,
    a: f64,
    ladder: &[f64],
    rule: CorrectorRule,
) -> Result<TemperednessTable> {
    if !(0.0..0.5).contains(&beta) {
        return config(format!("beta = {beta} must lie in [0, 1/2)"));
    }
    check_horizon(a)?;
    if !(horizon > 0.0) {
        return config("temperedness horizon must be positive");
    }
    let dt = path.dt();
    let mut wanted: Vec<i64> = ladder
        .iter()
        .map(|t| steps_of(-t, dt))
        .collect::<Result<_>>()?;
    if wanted
        .iter()
        .any(|k| *k > 0 || (*k as f64) * dt < -horizon - 1e-9)
    {
        return config("ladder points must lie in [0, horizon]");
    }
    wanted.sort_unstable();
    wanted.dedup();

    let field = builder.field();
    path.require(-horizon - a - field.a_drv, 0.0)?;
    let dim = builder.dim();
    let norm = FixedNorm::new(beta, dim);
    let k_start = steps_of(-horizon - a, dt)?;
    let block = 512i64;
    let mut z = DVector::zeros(dim);
    let mut ys = Vec::with_capacity(wanted.len());
    let mut next = 0usize;
    let mut k = k_start;
    while k < 0 && next < wanted.len() {
        let k_end = (k + block).min(0);
        let chain = builder.build(path, k as f64 * dt, k_end as f64 * dt)?;
        for j in 0..chain.len() {
            let dw = noise_increment(path, k + j as i64, dim);
            z = advance(&chain, j, &z, None, &dw, 1.0, rule);
            let kk = k + j as i64 + 1;
            while next < wanted.len() && wanted[next] == kk {
                ys.push((-(kk as f64) * dt, norm.norm(&z)));
                next += 1;
            }
        }
        k = k_end;
    }
    if ys.iter().any(|(_, y)| !y.is_finite()) {
        return Err(Error::Numerical("non-finite OU state".into()));
    }
    ys.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rows: Vec<TemperednessRow> = ys
        .iter()
        .map(|&(t, y)| TemperednessRow {
            t,
            y,
            discounted: gammas.iter().map(|g| (-g * t).exp() * y).collect(),
            log_rate: log_plus(y) / t,
        })
        .collect();
    let (xs, ls): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.t >= horizon / 2.0 - 1e-9)
        .map(|r| (r.t, log_plus(r.y)))
        .unzip();
    let slope = crate::stats::ls_slope(&xs, &ls).unwrap_or(0.0);
    Ok(TemperednessTable {
        beta,
        gammas: gammas.to_vec(),
        horizon,
        rows,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mds::{sample_two_sided_path, NoiseSpectrum};
    use crate::operators::DiffusionField;

    fn setup(dim: usize, lo: f64, hi: f64, seed: u64) -> (ChainBuilder, WienerPath) {
        let s = NoiseSpectrum::new(dim, 1.0).unwrap();
        let path = sample_two_sided_path(&s, lo, hi, 1.0 / 32.0, seed).unwrap();
        (
            ChainBuilder::new(DiffusionField::default(), dim).unwrap(),
            path,
        )
    }

    fn zero_path(dim: usize, lo: f64, hi: f64) -> WienerPath {
        let grid = TimeGrid::spanning(lo, hi, 1.0 / 32.0).unwrap();
        WienerPath::from_values(
            NoiseSpectrum::new(dim, 1.0).unwrap(),
            grid,
            vec![0.0; grid.len() * dim],
        )
        .unwrap()
    }

    #[test]
    fn zero_path_gives_zero_process() {
        let b = ChainBuilder::new(DiffusionField::default(), 6).unwrap();
        let p = zero_path(6, -20.0, 2.0);
        let st = construct_initial(&b, &p, 4.0, CorrectorRule::default()).unwrap();
        assert_eq!(st.z0, DVector::zeros(6));
        assert_eq!(st.truncation_bound, 0.0);
        let traj = propagate(&st, &b, &p, 2.0, 0.2, CorrectorRule::default()).unwrap();
        assert!(traj.states.iter().all(|z| z.iter().all(|v| *v == 0.0)));
        let table = temperedness_diagnostic(
            &b,
            &p,
            0.2,
            &[0.1],
            8.0,
            4.0,
            &default_ladder(8.0, p.dt()),
            CorrectorRule::default(),
        )
        .unwrap();
        assert!(table.rows.iter().all(|r| r.y == 0.0));
        assert_eq!(table.slope, 0.0);
    }

    #[test]
    fn propagation_starts_at_z0() {
        let (b, p) = setup(6, -12.0, 2.0, 3);
        let st = construct_initial(&b, &p, 4.0, CorrectorRule::default()).unwrap();
        let traj = propagate(&st, &b, &p, 2.0, 0.2, CorrectorRule::default()).unwrap();
        assert_eq!(traj.states[0], st.z0);
        assert_eq!(traj.norms.len(), traj.states.len());
    }

    #[test]
    fn stationarity_zero_shift_is_exact() {
        let (b, p) = setup(6, -12.0, 3.0, 5);
        let r = stationarity_residual(&b, &p, 1.0, 0.0, 4.0, CorrectorRule::default()).unwrap();
        assert_eq!(r.residual, 0.0);
    }

    #[test]
    fn batch_matches_individual_residuals() {
        let (b, p) = setup(6, -14.0, 4.0, 8);
        let pairs = [(1.0, 1.0), (2.0, 1.0), (1.0, 2.0)];
        let batch = stationarity_batch(&b, &p, &pairs, 4.0, CorrectorRule::default()).unwrap();
        for (rec, &(t, s)) in batch.iter().zip(&pairs) {
            let single =
                stationarity_residual(&b, &p, t, s, 4.0, CorrectorRule::default()).unwrap();
            assert_eq!(rec.residual, single.residual);
            assert!(rec.residual <= 1e-8 * (1.0 + rec.z_norm) + rec.truncation_bound);
        }
    }

    #[test]
    fn window_matches_construction() {
        let (b, p) = setup(6, -14.0, 3.0, 9);
        let st = construct_initial(
            &b,
            &wiener_shift(&p, ShiftIndex(32)).unwrap(),
            4.0,
            CorrectorRule::default(),
        )
        .unwrap();
        let w = z_window(&b, &p, 1.0, 2.0, 4.0, 0.2, CorrectorRule::default()).unwrap();
        assert_eq!(w.states[0], st.z0);
    }

    #[test]
    fn global_and_local_forms_agree() {
        let (b, p) = setup(8, -17.0, 4.0, 13);
        let st = construct_initial(&b, &p, 8.0, CorrectorRule::default()).unwrap();
        let checkpoints: Vec<f64> = (1..=8).map(|i| i as f64 * 0.5).collect();
        let gap = global_local_gap(&st, &b, &p, &checkpoints, CorrectorRule::default()).unwrap();
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn scaling_the_path_scales_z() {
        let (b, p) = setup(6, -12.0, 1.0, 21);
        let b0 = ChainBuilder::new(DiffusionField::autonomous(0.5), 6).unwrap();
        let z1 = construct_initial(&b0, &p, 4.0, CorrectorRule::default())
            .unwrap()
            .z0;
        let z3 = construct_initial(&b0, &p.scaled(3.0), 4.0, CorrectorRule::default())
            .unwrap()
            .z0;
        assert!((z3 - &z1 * 3.0).norm() <= 1e-13 * (1.0 + z1.norm()));
        let _ = b;
    }

    #[test]
    fn ladder_is_sorted_and_covers_upper_half() {
        let l = default_ladder(100.0, 1.0 / 64.0);
        assert!(l.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*l.last().unwrap(), 100.0);
        assert!(l.iter().filter(|t| **t >= 50.0).count() >= 50);
    }
}

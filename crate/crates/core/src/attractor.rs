//! The transformed equation `v = u - σZ`, energy and absorbing-set
//! functionals, and pullback attractor estimates.

use std::io::Write;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{config, Error, Result};
use crate::evolution::{ChainBuilder, PropagatorChain};
use crate::grid::TimeGrid;
use crate::mds::WienerPath;
use crate::operators::{DiffusionField, FixedNorm};
use crate::ou::{construct_initial, z_window};
use crate::pathwise::{
    integrate_window, linear_run, nemytskii, CorrectorRule, NonlinearitySpec, SemilinearProblem,
    SpectralGrid, Status, Trajectory,
};

#[derive(Debug, Clone)]
pub struct VState {
    pub v: DVector<f64>,
    pub t: f64,
}

/// Reaction, forcing and noise intensity of the `v`-equation.
#[derive(Debug, Clone)]
pub struct VDrift<'a> {
    pub nonlinearity: &'a NonlinearitySpec,
    pub grid: &'a SpectralGrid,
    pub forcing: &'a DVector<f64>,
    pub sigma: f64,
}

impl VDrift<'_> {
    fn active(&self) -> bool {
        !self.nonlinearity.is_zero() || self.forcing.iter().any(|f| *f != 0.0)
    }
}

/// `v_{k+1} = S_k (v_k + dt (F(v_k + σ Z_k) + f))`.
pub fn v_step(
    chain: &PropagatorChain,
    k: usize,
    v: &DVector<f64>,
    z: &DVector<f64>,
    drift: &VDrift<'_>,
) -> Result<VState> {
    let dt = chain.dt();
    let next = if drift.active() {
        let arg = if drift.sigma != 0.0 {
            v + z * drift.sigma
        } else {
            v.clone()
        };
        let rhs = nemytskii(drift.nonlinearity, &arg, drift.grid)? + drift.forcing;
        chain.step(k).propagate(&(v + rhs * dt))
    } else {
        chain.step(k).propagate(v)
    };
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite v at t = {}",
            chain.grid().time(k + 1)
        )));
    }
    Ok(VState {
        v: next,
        t: chain.grid().time(k + 1),
    })
}

/// Marches `v` over chain steps `k0..k1`; `z[j]` is `Z` at step `k0 + j`.
pub fn integrate_v(
    problem: &SemilinearProblem,
    chain: &PropagatorChain,
    k0: usize,
    k1: usize,
    v0: &DVector<f64>,
    z: &[DVector<f64>],
) -> Result<Trajectory> {
    problem.validate()?;
    if z.len() < k1 - k0 + 1 {
        return config("Z trajectory shorter than the integration window");
    }
    let spectral = SpectralGrid::for_degree(chain.dim(), problem.nonlinearity.degree());
    let drift = VDrift {
        nonlinearity: &problem.nonlinearity,
        grid: &spectral,
        forcing: &problem.forcing,
        sigma: problem.sigma,
    };
    let norm = FixedNorm::new(problem.norm.alpha, chain.dim());
    let mut states = vec![v0.clone()];
    let mut status = Status::Completed;
    for k in k0..k1 {
        let next = v_step(chain, k, states.last().unwrap(), &z[k - k0], &drift)?.v;
        if norm.norm(&next) > problem.blowup_threshold {
            status = Status::BlowUp(chain.grid().time(k + 1));
            break;
        }
        states.push(next);
    }
    let g = chain.grid();
    Ok(Trajectory {
        grid: TimeGrid::new(g.first() + k0 as i64, states.len(), g.dt())?,
        states,
        status,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransformReport {
    /// `sup_k ‖u_k - (v_k + σ Z_k)‖_{L²}`.
    pub discrepancy: f64,
    /// `sup_k ‖u_k‖_{L²}`.
    pub scale: f64,
    pub relative: f64,
}

/// Compares the direct integrator for `u` with `v + σZ` on `[0, t_end]`,
/// where `Z` is built on the window `[-a, 0]` and `v₀ = u₀ - σ Z(ω)`.
pub fn transform_consistency(
    problem: &SemilinearProblem,
    builder: &ChainBuilder,
    path: &WienerPath,
    t_end: f64,
    a: f64,
) -> Result<TransformReport> {
    let chain = builder.build(path, -a, t_end)?;
    let k0 = chain.index_of(0.0)?;
    let k1 = chain.len();
    let z = linear_run(
        &chain,
        path,
        0,
        k1,
        DVector::zeros(chain.dim()),
        1.0,
        problem.corrector,
    )?;
    let z = &z[k0..];
    let u = integrate_window(problem, &chain, path, k0, k1, &problem.u0)?;
    let v0 = &problem.u0 - &z[0] * problem.sigma;
    let v = integrate_v(problem, &chain, k0, k1, &v0, z)?;
    if !u.completed() || !v.completed() {
        return Err(Error::Numerical(
            "blow-up during transform comparison".into(),
        ));
    }
    let mut discrepancy: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for ((uk, vk), zk) in u.states.iter().zip(&v.states).zip(z) {
        discrepancy = discrepancy.max((uk - (vk + zk * problem.sigma)).norm());
        scale = scale.max(uk.norm());
    }
    Ok(TransformReport {
        discrepancy,
        scale,
        relative: discrepancy / scale.max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyRow {
    pub t: f64,
    pub v2: f64,
    pub dv2_dt: f64,
    pub lp_integral: f64,
    pub z_alpha_rho1: f64,
    pub z_alpha_2rho: f64,
    pub bound: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTable {
    pub decay_rate: f64,
    pub c_mon: f64,
    pub rows: Vec<EnergyRow>,
    /// `min_k bound_k / ‖v_k‖²` over rows `k >= 1` with `v ≠ 0` (the first
    /// row holds with equality).
    pub min_ratio: f64,
    /// `min_k (bound_k - ‖v_k‖²)`.
    pub min_slack: f64,
}

impl EnergyTable {
    pub fn flagged(&self) -> usize {
        self.rows.iter().filter(|r| r.flagged).count()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "t,v2,dv2_dt,lp_integral,z_alpha_rho1,z_alpha_2rho,bound,flagged"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                crate::fmt17(r.t),
                crate::fmt17(r.v2),
                crate::fmt17(r.dv2_dt),
                crate::fmt17(r.lp_integral),
                crate::fmt17(r.z_alpha_rho1),
                crate::fmt17(r.z_alpha_2rho),
                crate::fmt17(r.bound),
                r.flagged as u8
            )?;
        }
        Ok(())
    }
}

/// Lyapunov monitor
/// `‖v_k‖² <= e^{-δλ₁ t_k}‖v₀‖² + C_mon Σ_{j<k} dt e^{-δλ₁(t_k - t_j)}(‖Z_j‖_{X_α}^{ρ+1} + 1)`
/// with `δλ₁` the guaranteed decay rate of the field. Times are measured
/// from the first state.
pub fn energy_monitor(
    v: &Trajectory,
    z: &[DVector<f64>],
    field: &DiffusionField,
    nonlinearity: &NonlinearitySpec,
    alpha: f64,
    c_mon: f64,
) -> Result<EnergyTable> {
    let n = v.states.len();
    if z.len() < n {
        return config("Z trajectory shorter than the v trajectory");
    }
    let dim = v.states[0].len();
    let rate = field.decay_rate();
    let dt = v.grid.dt();
    let xa = FixedNorm::new(alpha, dim);
    let spectral = SpectralGrid::for_degree(dim, 3);
    let rho = nonlinearity.rho.max(1.0);
    let v2: Vec<f64> = v.states.iter().map(|s| s.norm_squared()).collect();
    let mut rows = Vec::with_capacity(n);
    let mut conv = 0.0;
    let mut min_ratio = f64::INFINITY;
    let mut min_slack = f64::INFINITY;
    let damp = (-rate * dt).exp();
    for k in 0..n {
        if k > 0 {
            let zn = xa.norm(&z[k - 1]);
            conv = damp * (conv + dt * (zn.powf(rho + 1.0) + 1.0));
        }
        let t = k as f64 * dt;
        let bound = (-rate * t).exp() * v2[0] + c_mon * conv;
        let dv2_dt = if n < 2 {
            0.0
        } else if k + 1 < n {
            (v2[k + 1] - v2[k]) / dt
        } else {
            (v2[k] - v2[k - 1]) / dt
        };
        let zn = xa.norm(&z[k]);
        // Allow a relative rounding tolerance at the equality case.
        let flagged = v2[k] > bound * (1.0 + 1e-12);
        if k > 0 && v2[k] > 0.0 {
            min_ratio = min_ratio.min(bound / v2[k]);
        }
        min_slack = min_slack.min(bound - v2[k]);
        rows.push(EnergyRow {
            t: v.grid.time(k),
            v2: v2[k],
            dv2_dt,
            lp_integral: spectral.lp_integral(&v.states[k], rho + 1.0),
            z_alpha_rho1: zn.powf(rho + 1.0),
            z_alpha_2rho: zn.powf(2.0 * rho),
            bound,
            flagged,
        });
    }
    Ok(EnergyTable {
        decay_rate: rate,
        c_mon,
        rows,
        min_ratio,
        min_slack,
    })
}

/// Monitor constant from a deterministic run: twice the larger of the
/// smallest constant making the monitor hold and `2 C₁ |D|`.
pub fn calibrate_monitor(
    v: &Trajectory,
    field: &DiffusionField,
    nonlinearity: &NonlinearitySpec,
    alpha: f64,
) -> Result<f64> {
    let zeros = vec![DVector::zeros(v.states[0].len()); v.states.len()];
    let unit = energy_monitor(v, &zeros, field, nonlinearity, alpha, 1.0)?;
    let v0 = unit.rows[0].v2;
    let rate = unit.decay_rate;
    let mut need: f64 = 0.0;
    for (k, r) in unit.rows.iter().enumerate().skip(1) {
        let conv = r.bound - (-rate * k as f64 * v.grid.dt()).exp() * v0;
        if conv > 0.0 {
            let excess = r.v2 - (-rate * k as f64 * v.grid.dt()).exp() * v0;
            need = need.max(excess / conv);
        }
    }
    Ok(2.0 * need.max(2.0 * nonlinearity.c1))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AbsorbingParams {
    pub alpha: f64,
    pub eta: f64,
    pub rho: f64,
    pub sigma: f64,
    /// `‖f‖_{X_α}`.
    pub forcing_norm: f64,
    /// Truncation horizon used to build `Z`.
    pub z_horizon: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct AbsorbingDiagnostics {
    /// `∫_{-a}^0 e^{δλ₁τ}‖Z(θ_τ ω)‖_{X_α}^{ρ+1} dτ`.
    pub r2_integral: f64,
    /// Same with exponent `2ρ`.
    pub rrho_integral: f64,
    pub z_l2: f64,
    pub z_eta: f64,
    /// `‖Z(ω)‖_{L^{ρ+1}}^{ρ+1}`.
    pub z_lrho: f64,
    /// `r_η` with every unnamed constant set to 1.
    pub r_eta_scale: f64,
}

pub fn absorbing_diagnostics(
    builder: &ChainBuilder,
    path: &WienerPath,
    a: f64,
    params: &AbsorbingParams,
    rule: CorrectorRule,
) -> Result<AbsorbingDiagnostics> {
    if !(params.eta > params.alpha && params.eta + params.alpha < 1.0) {
        return config(format!(
            "eta = {} must satisfy eta > alpha = {} and eta + alpha < 1",
            params.eta, params.alpha
        ));
    }
    let traj = z_window(builder, path, -a, 0.0, params.z_horizon, params.alpha, rule)?;
    let rate = builder.field().decay_rate();
    let dt = traj.grid.dt();
    let n = traj.states.len();
    let mut r2 = 0.0;
    let mut rr = 0.0;
    for k in 0..n {
        let tau = traj.grid.time(k);
        let w = if k == 0 || k == n - 1 { 0.5 * dt } else { dt };
        let za = traj.norms[k].1;
        r2 += w * (rate * tau).exp() * za.powf(params.rho + 1.0);
        rr += w * (rate * tau).exp() * za.powf(2.0 * params.rho);
    }
    if n < 2 {
        r2 = 0.0;
        rr = 0.0;
    }
    let z0 = traj.states.last().unwrap();
    let z_eta = FixedNorm::new(params.eta, z0.len()).norm(z0);
    let z_lrho = SpectralGrid::for_degree(z0.len(), 3).lp_integral(z0, params.rho + 1.0);
    let r_eta_scale = 1.0
        + r2.sqrt()
        + params.sigma * z_eta
        + params.forcing_norm
        + (1.0 + (1.0 + rr + z_lrho) / (1.0 - params.eta - params.alpha));
    Ok(AbsorbingDiagnostics {
        r2_integral: r2,
        rrho_integral: rr,
        z_l2: z0.norm(),
        z_eta,
        z_lrho,
        r_eta_scale,
    })
}

/// Initial conditions: 0, `±R (-Δ)^{-α} e_n` for `n <= 8`, and `random`
/// uniform draws from the `X_α` ball of radius `R`.
pub fn default_ensemble(
    dim: usize,
    radius: f64,
    alpha: f64,
    random: usize,
    seed: u64,
) -> Vec<DVector<f64>> {
    let inv = crate::operators::laplacian_powers(-alpha, dim);
    let mut out = vec![DVector::zeros(dim)];
    for n in 0..dim.min(8) {
        for sign in [1.0, -1.0] {
            let mut e = DVector::zeros(dim);
            e[n] = sign * radius * inv[n];
            out.push(e);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0f64, 1.0).expect("valid range");
    for _ in 0..random {
        let mut y = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
        let r = radius * unit.sample(&mut rng).powf(1.0 / dim as f64);
        y *= r / y.norm();
        for (yi, w) in y.iter_mut().zip(&inv) {
            *yi *= w;
        }
        out.push(y);
    }
    out
}

pub fn diameter(cloud: &[DVector<f64>], norm: &FixedNorm) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..cloud.len() {
        for j in i + 1..cloud.len() {
            d = d.max(norm.distance(&cloud[i], &cloud[j]));
        }
    }
    d
}

pub fn hausdorff(a: &[DVector<f64>], b: &[DVector<f64>], norm: &FixedNorm) -> f64 {
    let directed = |x: &[DVector<f64>], y: &[DVector<f64>]| {
        x.iter()
            .map(|p| {
                y.iter()
                    .map(|q| norm.distance(p, q))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    };
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() {
            0.0
        } else {
            f64::INFINITY
        };
    }
    directed(a, b).max(directed(b, a))
}

#[derive(Debug, Clone, Serialize)]
pub struct PullbackEstimate {
    pub horizons: Vec<f64>,
    /// `endpoints[j][i]`: member `i` started at `-T_j`, evaluated at 0.
    /// Blown-up members hold their last finite state and are listed in
    /// `blowups`.
    #[serde(skip)]
    pub endpoints: Vec<Vec<DVector<f64>>>,
    pub diameters: Vec<f64>,
    pub eta_max: Vec<f64>,
    pub hausdorff_steps: Vec<f64>,
    pub blowups: Vec<Vec<usize>>,
}

impl PullbackEstimate {
    pub fn flagged(&self) -> bool {
        self.blowups.iter().any(|b| !b.is_empty())
    }

    /// Surviving endpoints at horizon `j`.
    pub fn survivors(&self, j: usize) -> Vec<DVector<f64>> {
        self.endpoints[j]
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.blowups[j].contains(i))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn diameters_non_increasing(&self, slack: f64) -> bool {
        self.diameters
            .windows(2)
            .all(|w| w[1] <= w[0] * (1.0 + slack))
    }

    /// `horizon, member, mode_1..mode_M`.
    pub fn write_endpoints_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self
            .endpoints
            .first()
            .and_then(|c| c.first())
            .map_or(0, |v| v.len());
        write!(w, "horizon,member")?;
        for n in 1..=dim {
            write!(w, ",mode_{n}")?;
        }
        writeln!(w)?;
        for (t, cloud) in self.horizons.iter().zip(&self.endpoints) {
            for (i, v) in cloud.iter().enumerate() {
                write!(w, "{},{i}", crate::fmt17(*t))?;
                for x in v.iter() {
                    write!(w, ",{}", crate::fmt17(*x))?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Endpoints at 0 of members started at `t_start` on a shared chain.
fn evolve_cloud(
    problem: &SemilinearProblem,
    chain: &PropagatorChain,
    path: &WienerPath,
    t_start: f64,
    t_end: f64,
    ensemble: &[DVector<f64>],
) -> Result<(Vec<DVector<f64>>, Vec<usize>)> {
    let k0 = chain.index_of(t_start)?;
    let k1 = chain.index_of(t_end)?;
    let runs: Vec<Trajectory> = ensemble
        .par_iter()
        .map(|u0| integrate_window(problem, chain, path, k0, k1, u0))
        .collect::<Result<_>>()?;
    let blown = runs
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.completed())
        .map(|(i, _)| i)
        .collect();
    Ok((runs.iter().map(|r| r.last().clone()).collect(), blown))
}

/// Pullback clouds `φ(T_j, θ_{-T_j} ω, u_i)`.
///
/// One chain on `[-T_max, 0]` serves every horizon: the chain of
/// `θ_{-T} ω` on `[0, T]` is the window `[-T, 0]` of it.
pub fn pullback_estimate(
    problem: &SemilinearProblem,
    builder: &ChainBuilder,
    path: &WienerPath,
    horizons: &[f64],
    ensemble: &[DVector<f64>],
    eta: f64,
) -> Result<PullbackEstimate> {
    if horizons.is_empty() || horizons.windows(2).any(|w| w[1] <= w[0]) || horizons[0] <= 0.0 {
        return config("horizons must be positive and strictly increasing");
    }
    if ensemble.is_empty() {
        return config("empty initial ensemble");
    }
    let t_max = *horizons.last().unwrap();
    let chain = builder.build(path, -t_max, 0.0)?;
    let na = FixedNorm::new(problem.norm.alpha, chain.dim());
    let ne = FixedNorm::new(eta, chain.dim());
    let mut out = PullbackEstimate {
        horizons: horizons.to_vec(),
        endpoints: Vec::new(),
        diameters: Vec::new(),
        eta_max: Vec::new(),
        hausdorff_steps: Vec::new(),
        blowups: Vec::new(),
    };
    for &t in horizons {
        let (cloud, blown) = evolve_cloud(problem, &chain, path, -t, 0.0, ensemble)?;
        out.endpoints.push(cloud);
        out.blowups.push(blown);
        let j = out.endpoints.len() - 1;
        let alive = out.survivors(j);
        out.diameters.push(diameter(&alive, &na));
        out.eta_max
            .push(alive.iter().map(|v| ne.norm(v)).fold(0.0, f64::max));
        if j > 0 {
            let prev = out.survivors(j - 1);
            out.hausdorff_steps.push(hausdorff(&prev, &alive, &na));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct InvarianceProbe {
    /// `d_H(φ(s, ω, C_T(ω)), C_T(θ_s ω))`.
    pub distance: f64,
    /// `d_H` between the two largest horizons on `ω`.
    pub final_increment: f64,
}

/// Evolves the largest-horizon cloud forward by `s` and compares it with the
/// largest-horizon cloud of `θ_s ω`.
pub fn invariance_probe(
    problem: &SemilinearProblem,
    builder: &ChainBuilder,
    path: &WienerPath,
    horizons: &[f64],
    s: f64,
    ensemble: &[DVector<f64>],
) -> Result<InvarianceProbe> {
    if horizons.len() < 2 || !(s > 0.0) {
        return config("invariance probe needs two horizons and s > 0");
    }
    let t = horizons[horizons.len() - 1];
    let t_prev = horizons[horizons.len() - 2];
    let chain = builder.build(path, -t, s)?;
    let na = FixedNorm::new(problem.norm.alpha, chain.dim());
    let (cloud, _) = evolve_cloud(problem, &chain, path, -t, 0.0, ensemble)?;
    let (prev, _) = evolve_cloud(problem, &chain, path, -t_prev, 0.0, ensemble)?;
    let k0 = chain.index_of(0.0)?;
    let k1 = chain.index_of(s)?;
    let forward: Vec<DVector<f64>> = cloud
        .par_iter()
        .map(|u| {
            Ok(integrate_window(problem, &chain, path, k0, k1, u)?
                .last()
                .clone())
        })
        .collect::<Result<_>>()?;
    let (shifted, _) = evolve_cloud(problem, &chain, path, s - t, s, ensemble)?;
    Ok(InvarianceProbe {
        distance: hausdorff(&forward, &shifted, &na),
        final_increment: hausdorff(&prev, &cloud, &na),
    })
}

/// `max_i ‖endpoint_i - σ Z(ω)‖_{L²}` per horizon, with `Z(ω)` built by
/// [`construct_initial`] on `[-a, 0]`.
pub fn linear_limit_errors(
    estimate: &PullbackEstimate,
    builder: &ChainBuilder,
    path: &WienerPath,
    sigma: f64,
    a: f64,
    rule: CorrectorRule,
) -> Result<Vec<f64>> {
    let z = construct_initial(builder, path, a, rule)?.z0 * sigma;
    Ok(estimate
        .endpoints
        .iter()
        .map(|c| c.iter().map(|v| (v - &z).norm()).fold(0.0, f64::max))
        .collect())
}

//! Invariant suite run by `randattract verify`.
//!
//! Each check reduces to a scalar compared against a tolerance, so the report
//! carries a signed margin (`>= 0` passes). Sizes are fixed and small; the
//! report holds no timings and is bitwise reproducible.

use randattract::attractor::{
    default_ensemble, diameter, hausdorff, integrate_v, linear_limit_errors, pullback_estimate,
    transform_consistency,
};
use randattract::evolution::{cocycle_residual, decay_fit, smoothing_estimate};
use randattract::mds::path_seed;
use randattract::operators::{evaluate_driver, FixedNorm};
use randattract::ou::{construct_initial, global_local_gap, stationarity_batch};
use randattract::pathwise::{integrate_semilinear, linear_run, nemytskii, SpectralGrid};
use randattract::{
    sample_two_sided_path, wiener_shift, ChainBuilder, DVector, NonlinearityKind, NonlinearitySpec,
    Result, SemilinearProblem, ShiftIndex, Status,
};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub module: &'static str,
    pub name: &'static str,
    pub value: f64,
    pub bound: Bound,
    pub tolerance: f64,
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub version: String,
    pub config_hash: String,
    pub dim: usize,
    pub dt: f64,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.failed == 0
    }
}

struct Suite {
    checks: Vec<Check>,
}

impl Suite {
    fn push(
        &mut self,
        module: &'static str,
        name: &'static str,
        value: f64,
        bound: Bound,
        tolerance: f64,
    ) {
        let margin = match bound {
            Bound::AtMost => tolerance - value,
            Bound::AtLeast => value - tolerance,
        };
        // NaN never passes.
        let passed = margin >= 0.0;
        self.checks.push(Check {
            module,
            name,
            value,
            bound,
            tolerance,
            margin,
            passed,
        });
    }

    fn at_most(&mut self, module: &'static str, name: &'static str, value: f64, tol: f64) {
        self.push(module, name, value, Bound::AtMost, tol);
    }

    fn at_least(&mut self, module: &'static str, name: &'static str, value: f64, tol: f64) {
        self.push(module, name, value, Bound::AtLeast, tol);
    }

    fn holds(&mut self, module: &'static str, name: &'static str, ok: bool) {
        self.at_least(module, name, if ok { 1.0 } else { 0.0 }, 1.0);
    }
}

fn max_abs_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

pub const DIM: usize = 16;
pub const DT: f64 = 1.0 / 64.0;

pub fn run(config: &RunConfig) -> Result<VerifyReport> {
    let mut s = Suite { checks: Vec::new() };
    let field = config.diffusion_field();
    let rule = config.problem.corrector;
    let alpha = config.field.alpha;
    let spectrum = randattract::NoiseSpectrum::new(DIM, config.noise.r)?;
    let seed = config.noise.seed;
    let a = 4.0;
    let path = sample_two_sided_path(&spectrum, -12.0 - field.a_drv, 6.0, DT, seed)?;
    let builder = ChainBuilder::new(field, DIM)?;

    // mds
    let again = sample_two_sided_path(&spectrum, -12.0 - field.a_drv, 6.0, DT, seed)?;
    let same =
        path.values(-3.0)? == again.values(-3.0)? && path.values(5.0)? == again.values(5.0)?;
    s.holds("mds", "seeded_path_reproducible", same);
    let s1 = ShiftIndex::from_time(1.0, DT)?;
    let s2 = ShiftIndex::from_time(0.5, DT)?;
    let s12 = ShiftIndex::from_time(1.5, DT)?;
    let nested = wiener_shift(&wiener_shift(&path, s2)?, s1)?;
    let direct = wiener_shift(&path, s12)?;
    let mut gap: f64 = 0.0;
    for t in [-2.0, -0.25, 0.0, 1.0, 3.0] {
        for (x, y) in nested.values(t)?.iter().zip(direct.values(t)?) {
            gap = gap.max((x - y).abs());
        }
    }
    s.at_most("mds", "shift_group_property", gap, 0.0);
    let back = wiener_shift(&wiener_shift(&path, s1)?, ShiftIndex(-s1.0))?;
    let mut gap: f64 = 0.0;
    for t in [-2.0, 0.5, 2.0] {
        for (x, y) in back.values(t)?.iter().zip(path.values(t)?) {
            gap = gap.max((x - y).abs() / (1.0 + y.abs()));
        }
    }
    s.at_most("mds", "shift_round_trip", gap, 4.0 * f64::EPSILON);

    // operators
    let d0 = evaluate_driver(&path, 1.0, &field)?;
    let d1 = evaluate_driver(&wiener_shift(&path, s1)?, 0.0, &field)?;
    s.at_most(
        "operators",
        "driver_shift_consistency",
        (d0 - d1).abs(),
        4.0 * f64::EPSILON * (1.0 + d0.abs()),
    );

    // evolution
    let chain = builder.build(&path, 0.0, 2.0)?;
    let v = DVector::from_fn(DIM, |i, _| 1.0 / (1.0 + i as f64));
    s.holds(
        "evolution",
        "identity_exact",
        chain.apply(1.0, 1.0, &v)? == v,
    );
    let mid = chain.apply(1.0, 0.5, &v)?;
    let composed = chain.apply(2.0, 1.0, &mid)?;
    s.at_most(
        "evolution",
        "composition_bitwise",
        max_abs_diff(&composed, &chain.apply(2.0, 0.5, &v)?),
        0.0,
    );
    let mut worst: f64 = 0.0;
    for (t, s0) in [(0.5, 0.0), (1.0, 0.5), (0.25, 1.5), (1.0, 1.0)] {
        let r = cocycle_residual(&builder, &path, t, s0)?;
        worst = worst.max(r.residual / r.norm);
    }
    s.at_most("evolution", "cocycle_residual_relative", worst, 1e-10);
    let pairs: Vec<(f64, f64)> = (0..12)
        .map(|i| {
            let s0 = (i % 3) as f64 * 0.25;
            (s0 + (1 + i / 3) as f64 * 0.25, s0)
        })
        .collect();
    let fit = decay_fit(&chain, &pairs)?;
    s.at_most("evolution", "decay_constant", fit.c_hat, 1.0 + 1e-9);
    let smooth = smoothing_estimate(&chain, 0.5, &pairs, field.decay_rate())?;
    s.at_most("evolution", "smoothing_constant_alpha_half", smooth, 1.0);

    // pathwise
    let mut e1 = DVector::zeros(DIM);
    e1[0] = 1.0;
    let cubic = NonlinearitySpec::new(NonlinearityKind::PureCubic);
    let proj = nemytskii(&cubic, &e1, &SpectralGrid::for_degree(DIM, 3))?;
    let mut oracle = DVector::zeros(DIM);
    oracle[0] = -1.5;
    oracle[2] = 0.5;
    s.at_most(
        "pathwise",
        "cubic_projection",
        max_abs_diff(&proj, &oracle),
        1e-12,
    );

    let mut base = config.problem();
    base = resized(&base, DIM);
    let mut det = base.clone();
    det.sigma = 0.0;
    let quiet = path.scaled(0.0);
    let u_det = integrate_semilinear(&det, &chain, &path)?;
    let u_quiet = integrate_semilinear(&det, &chain, &quiet)?;
    let diff = u_det
        .states
        .iter()
        .zip(&u_quiet.states)
        .map(|(x, y)| max_abs_diff(x, y))
        .fold(0.0, f64::max);
    s.at_most("pathwise", "sigma_zero_reduction", diff, 0.0);

    let mut lin = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::Zero),
        DVector::zeros(DIM),
    );
    lin.sigma = 1.0;
    lin.corrector = rule;
    let one = integrate_semilinear(&lin, &chain, &path)?;
    lin.sigma = 2.5;
    let scaled = integrate_semilinear(&lin, &chain, &path)?;
    let rel = one
        .states
        .iter()
        .zip(&scaled.states)
        .map(|(x, y)| max_abs_diff(&(x * 2.5), y) / (1.0 + y.amax()))
        .fold(0.0, f64::max);
    s.at_most("pathwise", "noise_linearity", rel, 1e-13);

    let mut blow = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::Explosive),
        e1.clone() * 4.0,
    );
    blow.sigma = 0.0;
    blow.blowup_threshold = 1e3;
    let low = integrate_semilinear(&blow, &chain, &path)?;
    blow.blowup_threshold = 1e6;
    let high = integrate_semilinear(&blow, &chain, &path)?;
    let prefix = low.states.len() <= high.states.len()
        && low.states.iter().zip(&high.states).all(|(x, y)| x == y);
    s.holds(
        "pathwise",
        "blowup_detected",
        matches!(low.status, Status::BlowUp(_)),
    );
    s.holds("pathwise", "blowup_prefix", prefix);

    // ou
    let state = construct_initial(&builder, &path, a, rule)?;
    // Linear in the noise for a fixed generator chain.
    let zchain = builder.build(&path, -a, 0.0)?;
    let z1 = linear_run(
        &zchain,
        &path,
        0,
        zchain.len(),
        DVector::zeros(DIM),
        1.0,
        rule,
    )?;
    let z3 = linear_run(
        &zchain,
        &path.scaled(3.0),
        0,
        zchain.len(),
        DVector::zeros(DIM),
        1.0,
        rule,
    )?;
    let (z1, z3) = (z1.last().unwrap(), z3.last().unwrap());
    s.at_most(
        "ou",
        "noise_scaling_linearity",
        max_abs_diff(&(z1 * 3.0), z3) / (1.0 + z3.amax()),
        1e-13,
    );
    s.at_most(
        "ou",
        "initial_state_matches_recursion",
        max_abs_diff(z1, &state.z0),
        0.0,
    );
    let recs = stationarity_batch(
        &builder,
        &path,
        &[(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (0.5, 4.0)],
        a,
        rule,
    )?;
    let worst = recs
        .iter()
        .map(|r| r.residual / (1.0 + r.z_norm))
        .fold(0.0, f64::max);
    s.at_most("ou", "stationarity_residual", worst, 1e-8);
    let gap = global_local_gap(&state, &builder, &path, &[0.5, 1.0, 2.0], rule)?;
    s.at_most("ou", "global_local_gap", gap, 1e-6);
    let bound = state.truncation_bound;
    s.at_least(
        "ou",
        "truncation_bound_finite",
        if bound.is_finite() { 1.0 } else { 0.0 },
        1.0,
    );

    // attractor
    let mut lin_u = lin.clone();
    lin_u.sigma = 1.0;
    lin_u.u0 = DVector::from_fn(DIM, |i, _| if i < 2 { 0.5 / (1.0 + i as f64) } else { 0.0 });
    let tr = transform_consistency(&lin_u, &builder, &path, 1.0, a)?;
    s.at_most("attractor", "linear_transform_relative", tr.relative, 1e-10);

    let mut u0 = DVector::zeros(DIM);
    u0[0] = 1.5;
    u0[2] = -0.8;
    let mut pc = SemilinearProblem::new(field, cubic, u0.clone());
    pc.sigma = 0.0;
    let zeros = vec![DVector::zeros(DIM); chain.len() + 1];
    let vtraj = integrate_v(&pc, &chain, 0, chain.len(), &u0, &zeros)?;
    let rate = field.decay_rate();
    let n0 = u0.norm();
    let excess = vtraj
        .states
        .iter()
        .enumerate()
        .skip(1)
        .map(|(k, x)| x.norm() / ((-rate * k as f64 * DT * (1.0 - 1e-2)).exp() * n0))
        .fold(0.0, f64::max);
    s.at_most("attractor", "pure_cubic_decay_ratio", excess, 1.0);

    let ensemble = default_ensemble(DIM, 2.0, alpha, 4, path_seed(seed, 1));
    let horizons = [1.0, 2.0, 4.0, 8.0];
    let mut lp = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::Zero),
        DVector::zeros(DIM),
    );
    lp.sigma = 0.1;
    lp.corrector = rule;
    lp.norm = config.norm_spec();
    let est = pullback_estimate(&lp, &builder, &path, &horizons, &ensemble, config.field.eta)?;
    let errs = linear_limit_errors(&est, &builder, &path, lp.sigma, a, rule)?;
    s.at_most("attractor", "linear_pullback_limit_error", errs[3], 1e-3);
    s.at_most(
        "attractor",
        "linear_pullback_contraction",
        errs[3] / errs[2],
        0.1,
    );
    let na = FixedNorm::new(alpha, DIM);
    let c0 = &est.endpoints[0];
    let c1 = &est.endpoints[1];
    s.at_most(
        "attractor",
        "hausdorff_symmetry",
        (hausdorff(c0, c1, &na) - hausdorff(c1, c0, &na)).abs(),
        0.0,
    );
    s.at_most("attractor", "hausdorff_self", hausdorff(c0, c0, &na), 0.0);
    s.at_most(
        "attractor",
        "hausdorff_below_diameter_sum",
        hausdorff(c0, c1, &na)
            - diameter(c0, &na)
            - diameter(c1, &na)
            - na.distance(&c0[0], &c1[0]),
        1e-12,
    );

    let z_ok = linear_run(&chain, &path, 0, 4, DVector::zeros(DIM), 0.0, rule)?
        .iter()
        .all(|x| x.iter().all(|v| *v == 0.0));
    s.holds("pathwise", "zero_sigma_linear_run", z_ok);

    let failed = s.checks.iter().filter(|c| !c.passed).count();
    Ok(VerifyReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        dim: DIM,
        dt: DT,
        passed: s.checks.len() - failed,
        failed,
        checks: s.checks,
    })
}

/// The configured problem on `dim` modes.
fn resized(p: &SemilinearProblem, dim: usize) -> SemilinearProblem {
    let mut q = p.clone();
    let cut = |v: &DVector<f64>| DVector::from_fn(dim, |i, _| v.get(i).copied().unwrap_or(0.0));
    q.u0 = cut(&p.u0);
    q.forcing = cut(&p.forcing);
    q
}

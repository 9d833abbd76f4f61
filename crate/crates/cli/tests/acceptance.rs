//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use rayon::prelude::*;

use randattract::attractor::{
    calibrate_monitor, default_ensemble, energy_monitor, integrate_v, linear_limit_errors,
    pullback_estimate, transform_consistency,
};
use randattract::evolution::{cocycle_residual, decay_fit, smoothing_estimate};
use randattract::mds::path_seed;
use randattract::ou::{default_ladder, stationarity_batch, temperedness_diagnostic};
use randattract::pathwise::{linear_run, strong_endpoint_errors};
use randattract::stats::{log2_order, mean, median, variance, variance_standard_error};
use randattract::{
    sample_two_sided_path, ChainBuilder, CorrectorRule, DVector, DiffusionField, NoiseSpectrum,
    NonlinearityKind, NonlinearitySpec, SemilinearProblem,
};

type Outcome = Result<(bool, String), String>;
type Criterion = (usize, &'static str, fn() -> Outcome);

fn smooth_u0(dim: usize) -> DVector<f64> {
    let mut u = DVector::zeros(dim);
    u[0] = 0.5;
    u[1] = -0.2;
    u
}

/// 1. Evolution-family identities with defaults.
fn c1() -> Outcome {
    let dt = 1.0 / 256.0;
    let spectrum = NoiseSpectrum::new(64, 1.0).map_err(|e| e.to_string())?;
    let path = sample_two_sided_path(&spectrum, -9.0, 2.0, dt, 101).map_err(|e| e.to_string())?;
    let builder = ChainBuilder::new(DiffusionField::default(), 64).map_err(|e| e.to_string())?;
    let chain = builder.build(&path, 0.0, 1.0).map_err(|e| e.to_string())?;
    let v = DVector::from_fn(64, |i, _| 1.0 / (1.0 + i as f64));
    let identity = chain.apply(0.5, 0.5, &v).map_err(|e| e.to_string())? == v;
    let mid = chain.apply(0.5, 0.25, &v).map_err(|e| e.to_string())?;
    let composed = chain.apply(1.0, 0.5, &mid).map_err(|e| e.to_string())?;
    let composition = composed == chain.apply(1.0, 0.25, &v).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let t = (1 + i % 5) as f64 * 0.125;
        let s = (i / 5) as f64 * 0.25;
        let r = cocycle_residual(&builder, &path, t, s).map_err(|e| e.to_string())?;
        worst = worst.max(r.residual / r.norm);
    }
    Ok((
        identity && composition && worst <= 1e-10,
        format!(
            "identity={identity} composition={composition} max cocycle/‖U‖={worst:.3e} (tol 1e-10)"
        ),
    ))
}

/// 2. Exponential stability and smoothing.
fn c2() -> Outcome {
    let fine_dt = 1.0 / 512.0;
    let spectrum = NoiseSpectrum::new(64, 1.0).map_err(|e| e.to_string())?;
    let fine =
        sample_two_sided_path(&spectrum, -9.0, 1.0, fine_dt, 202).map_err(|e| e.to_string())?;
    let coarse = fine.restrict(2).map_err(|e| e.to_string())?;
    let field = DiffusionField::default();
    let builder = ChainBuilder::new(field, 64).map_err(|e| e.to_string())?;
    let pairs: Vec<(f64, f64)> = (0..50)
        .map(|i| {
            let s = (i % 5) as f64 * 0.0625;
            let tau = (1 + i / 5) as f64 * 0.0625;
            (s + tau, s)
        })
        .collect();
    let chain = builder
        .build(&coarse, 0.0, 1.0)
        .map_err(|e| e.to_string())?;
    let fit = decay_fit(&chain, &pairs).map_err(|e| e.to_string())?;
    let lambda = field.decay_rate();
    let rate_ok = (fit.lambda_hat - field.ellipticity_floor() * PI * PI).abs() < 1e-12;
    let c_coarse = smoothing_estimate(&chain, 0.5, &pairs, lambda).map_err(|e| e.to_string())?;
    let fchain = builder.build(&fine, 0.0, 1.0).map_err(|e| e.to_string())?;
    let c_fine = smoothing_estimate(&fchain, 0.5, &pairs, lambda).map_err(|e| e.to_string())?;
    let ratio = (c_coarse / c_fine).max(c_fine / c_coarse);
    Ok((
        rate_ok && fit.c_hat <= 1.0 + 1e-9 && c_coarse.is_finite() && ratio <= 2.0,
        format!(
            "C_hat={:.12} at lambda_hat={:.4}; smoothing C(dt)={c_coarse:.4} C(dt/2)={c_fine:.4} ratio={ratio:.3}",
            fit.c_hat, fit.lambda_hat
        ),
    ))
}

/// 3. Weak consistency of the linear solution against the OU variance.
fn c3() -> Outcome {
    let (dt, dim, paths, sigma, delta) = (1.0 / 256.0, 16, 4096, 1.0, 0.5);
    let field = DiffusionField::autonomous(delta);
    let spectrum = NoiseSpectrum::new(dim, 1.0).map_err(|e| e.to_string())?;
    let builder = ChainBuilder::new(field, dim).map_err(|e| e.to_string())?;
    let probe = sample_two_sided_path(&spectrum, -8.0, 1.0, dt, 0).map_err(|e| e.to_string())?;
    // The autonomous chain does not depend on the path.
    let chain = builder.build(&probe, 0.0, 1.0).map_err(|e| e.to_string())?;
    let finals: Vec<DVector<f64>> = (0..paths as u64)
        .into_par_iter()
        .map(|i| {
            let p = sample_two_sided_path(&spectrum, 0.0, 1.0, dt, path_seed(303, i))?;
            let h = linear_run(
                &chain,
                &p,
                0,
                chain.len(),
                DVector::zeros(dim),
                sigma,
                CorrectorRule::default(),
            )?;
            Ok(h.last().unwrap().clone())
        })
        .collect::<randattract::Result<_>>()
        .map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    for n in 1..=8 {
        let xs: Vec<f64> = finals.iter().map(|h| h[n - 1]).collect();
        let lam = delta * (n as f64 * PI).powi(2);
        let exact = spectrum.weight(n) * sigma * sigma * (1.0 - (-2.0 * lam).exp()) / (2.0 * lam);
        let z = (variance(&xs) - exact).abs() / variance_standard_error(&xs);
        worst = worst.max(z);
        ok &= z <= 3.0;
    }
    Ok((
        ok,
        format!("max |var - oracle| / SE over modes 1-8 = {worst:.2} (tol 3)"),
    ))
}

/// 4. Strong self-convergence, linear and CubicFisher.
fn c4() -> Outcome {
    let (dim, paths, t_end) = (32, 64u64, 1.0);
    let fine_dt = 1.0 / 1024.0;
    let factors = [64usize, 32, 16, 8];
    let dts: Vec<f64> = factors.iter().map(|f| fine_dt * *f as f64).collect();
    let spectrum = NoiseSpectrum::new(dim, 1.0).map_err(|e| e.to_string())?;
    let field = DiffusionField::default();
    let builder = ChainBuilder::new(field, dim).map_err(|e| e.to_string())?;
    let mut linear = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::Zero),
        DVector::zeros(dim),
    );
    linear.sigma = 1.0;
    let fisher = SemilinearProblem::new(field, NonlinearitySpec::default(), smooth_u0(dim));
    let mut orders = Vec::new();
    for problem in [&linear, &fisher] {
        let errs: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|i| {
                let p = sample_two_sided_path(
                    &spectrum,
                    -field.a_drv,
                    t_end,
                    fine_dt,
                    path_seed(404, i),
                )?;
                strong_endpoint_errors(problem, &builder, &p, t_end, &factors)
            })
            .collect::<randattract::Result<_>>()
            .map_err(|e| e.to_string())?;
        let rms: Vec<f64> = (0..factors.len())
            .map(|j| mean(&errs.iter().map(|e| e[j] * e[j]).collect::<Vec<_>>()).sqrt())
            .collect();
        orders.push((log2_order(&dts, &rms).unwrap_or(f64::NAN), rms));
    }
    let ok = orders.iter().all(|(o, _)| *o >= 0.4);
    Ok((
        ok,
        format!(
            "order linear={:.3} cubic_fisher={:.3} (tol 0.4); rms linear={:.2e}..{:.2e}",
            orders[0].0, orders[1].0, orders[0].1[0], orders[0].1[3]
        ),
    ))
}

/// 5. OU stationarity.
fn c5() -> Outcome {
    let dt = 1.0 / 256.0;
    let spectrum = NoiseSpectrum::new(64, 1.0).map_err(|e| e.to_string())?;
    let path = sample_two_sided_path(&spectrum, -17.0, 8.0, dt, 505).map_err(|e| e.to_string())?;
    let builder = ChainBuilder::new(DiffusionField::default(), 64).map_err(|e| e.to_string())?;
    let mut pairs = Vec::new();
    for t in [1.0, 2.0, 4.0] {
        for s in [1.0, 2.0, 4.0] {
            pairs.push((t, s));
        }
    }
    let recs = stationarity_batch(&builder, &path, &pairs, 8.0, CorrectorRule::default())
        .map_err(|e| e.to_string())?;
    let worst = recs
        .iter()
        .map(|r| r.residual / (1.0 + r.z_norm))
        .fold(0.0, f64::max);
    Ok((
        worst <= 1e-8,
        format!("max residual/(1+‖Z‖) = {worst:.3e} over 9 pairs (tol 1e-8)"),
    ))
}

/// 6. Temperedness of the OU process.
fn c6() -> Outcome {
    let (dim, dt, horizon, a, paths) = (32, 1.0 / 128.0, 100.0, 8.0, 32u64);
    let spectrum = NoiseSpectrum::new(dim, 1.0).map_err(|e| e.to_string())?;
    let field = DiffusionField::default();
    let builder = ChainBuilder::new(field, dim).map_err(|e| e.to_string())?;
    let mut ladder = default_ladder(horizon, dt);
    ladder.push(20.0);
    let tables = (0..paths)
        .into_par_iter()
        .map(|i| {
            let p = sample_two_sided_path(
                &spectrum,
                -horizon - a - field.a_drv,
                0.0,
                dt,
                path_seed(606, i),
            )?;
            temperedness_diagnostic(
                &builder,
                &p,
                0.2,
                &[0.1],
                horizon,
                a,
                &ladder,
                CorrectorRule::default(),
            )
        })
        .collect::<randattract::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let at = |t: f64| -> Vec<f64> {
        tables
            .iter()
            .map(|tb| tb.row_at(t).map_or(f64::NAN, |r| r.discounted[0]))
            .collect()
    };
    let (d20, d100) = (median(&at(20.0)), median(&at(100.0)));
    let slope = median(&tables.iter().map(|t| t.slope).collect::<Vec<_>>());
    Ok((
        d100 < d20 && (-0.05..=0.05).contains(&slope),
        format!("median e^(-0.1t)Y: t=20 {d20:.3e}, t=100 {d100:.3e}; median ln+ slope {slope:.4}"),
    ))
}

/// 7. Transform consistency `u = v + σZ`.
fn c7() -> Outcome {
    let dim = 64;
    let spectrum = NoiseSpectrum::new(dim, 1.0).map_err(|e| e.to_string())?;
    let field = DiffusionField::default();
    let builder = ChainBuilder::new(field, dim).map_err(|e| e.to_string())?;
    let fine = sample_two_sided_path(&spectrum, -17.0, 1.0, 1.0 / 256.0, 707)
        .map_err(|e| e.to_string())?;
    let mut linear = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::Zero),
        smooth_u0(dim),
    );
    linear.sigma = 1.0;
    let lin =
        transform_consistency(&linear, &builder, &fine, 1.0, 8.0).map_err(|e| e.to_string())?;
    let fisher = SemilinearProblem::new(field, NonlinearitySpec::default(), smooth_u0(dim));
    let mut disc = Vec::new();
    for factor in [4usize, 2, 1] {
        let p = fine.restrict(factor).map_err(|e| e.to_string())?;
        disc.push(
            transform_consistency(&fisher, &builder, &p, 1.0, 8.0)
                .map_err(|e| e.to_string())?
                .discrepancy,
        );
    }
    let ratios = [disc[0] / disc[1], disc[1] / disc[2]];
    Ok((
        lin.relative <= 1e-3 && ratios.iter().all(|r| *r >= 1.7),
        format!(
            "linear relative={:.3e} (tol 1e-3); cubic_fisher discrepancy {:.3e},{:.3e},{:.3e} ratios {:.3},{:.3} (tol 1.7)",
            lin.relative, disc[0], disc[1], disc[2], ratios[0], ratios[1]
        ),
    ))
}

/// 8. Energy and absorbing structure.
fn c8() -> Outcome {
    let (dim, dt, t_end, a) = (32, 1.0 / 256.0, 4.0, 8.0);
    let spectrum = NoiseSpectrum::new(dim, 1.0).map_err(|e| e.to_string())?;
    let field = DiffusionField::default();
    let builder = ChainBuilder::new(field, dim).map_err(|e| e.to_string())?;
    let rate = field.decay_rate();
    let mut u0 = DVector::zeros(dim);
    u0[0] = 1.5;
    u0[2] = -0.8;
    u0[5] = 0.4;
    let run_det =
        |kind: NonlinearityKind, seed: u64| -> randattract::Result<randattract::Trajectory> {
            let p = sample_two_sided_path(&spectrum, -field.a_drv, t_end, dt, seed)?;
            let chain = builder.build(&p, 0.0, t_end)?;
            let mut prob = SemilinearProblem::new(field, NonlinearitySpec::new(kind), u0.clone());
            prob.sigma = 0.0;
            let zeros = vec![DVector::zeros(dim); chain.len() + 1];
            integrate_v(&prob, &chain, 0, chain.len(), &u0, &zeros)
        };

    let cubic = run_det(NonlinearityKind::PureCubic, 808).map_err(|e| e.to_string())?;
    let n0 = cubic.states[0].norm();
    let mut decay_ok = true;
    for (k, s) in cubic.states.iter().enumerate() {
        let t = k as f64 * dt;
        decay_ok &= s.norm() <= (-rate * t * (1.0 - 1e-2)).exp() * n0;
        if k > 0 {
            decay_ok &= s.norm() <= cubic.states[k - 1].norm();
        }
    }

    let fisher_spec = NonlinearitySpec::default();
    let fisher = run_det(NonlinearityKind::CubicFisher, 809).map_err(|e| e.to_string())?;
    let limit = 2.0 * fisher_spec.c1 / rate * 1.1;
    let tail = fisher.states[fisher.states.len() / 2..]
        .iter()
        .map(|s| s.norm_squared())
        .fold(0.0, f64::max);
    let c_mon = calibrate_monitor(&fisher, &field, &fisher_spec, 0.2).map_err(|e| e.to_string())?;

    let margins: Vec<f64> = (0..8u64)
        .into_par_iter()
        .map(|i| {
            let p =
                sample_two_sided_path(&spectrum, -a - field.a_drv, t_end, dt, path_seed(810, i))?;
            let chain = builder.build(&p, -a, t_end)?;
            let k0 = chain.index_of(0.0)?;
            let z = linear_run(
                &chain,
                &p,
                0,
                chain.len(),
                DVector::zeros(dim),
                1.0,
                CorrectorRule::default(),
            )?;
            let z = &z[k0..];
            let prob = SemilinearProblem::new(field, fisher_spec, u0.clone());
            let v0 = &u0 - &z[0] * prob.sigma;
            let v = integrate_v(&prob, &chain, k0, chain.len(), &v0, z)?;
            let table = energy_monitor(&v, z, &field, &fisher_spec, 0.2, c_mon)?;
            Ok(table.min_ratio)
        })
        .collect::<randattract::Result<_>>()
        .map_err(|e| e.to_string())?;
    let margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        decay_ok && tail <= limit && margin >= 1.0,
        format!(
            "pure cubic decay bound={decay_ok}; fisher limsup ‖v‖²={tail:.3e} <= {limit:.4}; C_mon={c_mon:.3}, min stochastic margin={margin:.3}"
        ),
    ))
}

/// 9. Pullback attractor.
fn c9() -> Outcome {
    let (dim, dt, a) = (64, 1.0 / 256.0, 8.0);
    let spectrum = NoiseSpectrum::new(dim, 1.0).map_err(|e| e.to_string())?;
    let field = DiffusionField::default();
    let builder = ChainBuilder::new(field, dim).map_err(|e| e.to_string())?;
    let path = sample_two_sided_path(&spectrum, -16.0 - field.a_drv, 0.0, dt, 909)
        .map_err(|e| e.to_string())?;
    let ensemble = default_ensemble(dim, 2.0, 0.2, 16, 910);
    let horizons = [1.0, 2.0, 4.0, 8.0];

    let mut linear = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::Zero),
        DVector::zeros(dim),
    );
    linear.sigma = 0.1;
    let lin = pullback_estimate(&linear, &builder, &path, &horizons, &ensemble, 0.35)
        .map_err(|e| e.to_string())?;
    let errs = linear_limit_errors(&lin, &builder, &path, linear.sigma, a, linear.corrector)
        .map_err(|e| e.to_string())?;
    let lin_ok = errs[3] / errs[2] <= 0.1 && errs[3] <= 1e-3;

    let mut cubic = SemilinearProblem::new(
        field,
        NonlinearitySpec::new(NonlinearityKind::PureCubic),
        DVector::zeros(dim),
    );
    cubic.sigma = 0.0;
    let cub = pullback_estimate(&cubic, &builder, &path, &horizons, &ensemble, 0.35)
        .map_err(|e| e.to_string())?;
    let cub_ok = cub.diameters[3] <= 1e-3 * cub.diameters[0];

    let fisher = SemilinearProblem::new(field, NonlinearitySpec::default(), DVector::zeros(dim));
    let fis = pullback_estimate(&fisher, &builder, &path, &horizons, &ensemble, 0.35)
        .map_err(|e| e.to_string())?;
    let fis_ok = fis.diameters_non_increasing(0.05) && !fis.flagged();
    Ok((
        lin_ok && cub_ok && fis_ok,
        format!(
            "linear err T=4 {:.2e}, T=8 {:.2e}; pure cubic diam ratio {:.2e}; fisher diameters {:?} blowups={}",
            errs[2],
            errs[3],
            cub.diameters[3] / cub.diameters[0],
            fis.diameters.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>(),
            fis.flagged()
        ),
    ))
}

/// 10. Determinism of `verify` reports.
fn c10() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_randattract");
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = std::process::Command::new(bin)
            .arg("verify")
            .arg("--out")
            .arg(&out)
            .env_remove("RANDATTRACT_OUT")
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Ok((false, format!("verify exited with {status}")));
        }
        reports.push(std::fs::read(out.join("verify_report.json")).map_err(|e| e.to_string())?);
    }
    let same = reports[0] == reports[1];
    Ok((
        same,
        format!(
            "two verify reports bitwise identical={same} ({} bytes)",
            reports[0].len()
        ),
    ))
}

fn main() -> ExitCode {
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .and_then(|s| s.parse().ok());
    let criteria: [Criterion; 10] = [
        (1, "evolution-family identities", c1),
        (2, "exponential stability", c2),
        (3, "linear weak consistency", c3),
        (4, "strong self-convergence", c4),
        (5, "OU stationarity", c5),
        (6, "temperedness", c6),
        (7, "transform consistency", c7),
        (8, "energy/absorbing structure", c8),
        (9, "pullback attractor", c9),
        (10, "determinism", c10),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "[{}] criterion {id:>2} {name}: {detail} ({:.1}s)",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

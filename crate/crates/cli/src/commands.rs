//! Subcommand drivers. Each returns after writing its outputs through
//! [`OutputDir`]; errors are classified by [`CliError`].

use rayon::prelude::*;
use serde::Serialize;

use randattract::attractor::{
    absorbing_diagnostics, default_ensemble, invariance_probe, pullback_estimate,
    AbsorbingDiagnostics, AbsorbingParams, InvarianceProbe, PullbackEstimate,
};
use randattract::mds::path_seed;
use randattract::operators::FixedNorm;
use randattract::ou::{
    default_ladder, stationarity_batch, temperedness_diagnostic, StationarityRecord,
};
use randattract::pathwise::{integrate_semilinear, strong_endpoint_errors};
use randattract::stats::{log2_order, mean, median, variance};
use randattract::{fmt17, sample_two_sided_path, ChainBuilder, Status, Trajectory, WienerPath};

use crate::config::RunConfig;
use crate::output::OutputDir;
use crate::{verify, CliError};

type Run = Result<(), CliError>;

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn seeds(config: &RunConfig) -> Vec<u64> {
    (0..config.noise.n_paths as u64)
        .map(|i| path_seed(config.noise.seed, i))
        .collect()
}

fn sample(
    config: &RunConfig,
    t_lo: f64,
    t_hi: f64,
    dt: f64,
    seed: u64,
) -> randattract::Result<WienerPath> {
    sample_two_sided_path(&config.spectrum()?, t_lo, t_hi, dt, seed)
}

#[derive(Serialize)]
struct PathStatus {
    index: usize,
    seed: u64,
    completed: bool,
    blowup_time: Option<f64>,
    final_l2: f64,
}

#[derive(Serialize)]
struct SimulateSummary {
    config_hash: String,
    t_end: f64,
    dt: f64,
    paths: Vec<PathStatus>,
    blowups: usize,
}

pub fn simulate(config: &RunConfig, out: &mut OutputDir) -> Run {
    let problem = config.problem();
    let builder = ChainBuilder::new(problem.field, config.field.m)?;
    let (dt, t_end) = (config.noise.dt, config.experiment.t_end);
    let seeds = seeds(config);
    let runs: Vec<Trajectory> = out.time("integrate", |_| {
        seeds
            .par_iter()
            .map(|&seed| {
                let path = sample(config, -problem.field.a_drv, t_end, dt, seed)?;
                let chain = builder.build(&path, 0.0, t_end)?;
                integrate_semilinear(&problem, &chain, &path)
            })
            .collect::<randattract::Result<_>>()
    })?;
    let alpha = config.field.alpha;
    for (i, run) in runs.iter().enumerate() {
        out.write_csv(&format!("trajectories/path_{i:04}.csv"), |w| {
            run.write_csv(w, alpha)
        })
        .map_err(io)?;
    }

    let done: Vec<&Trajectory> = runs.iter().filter(|r| r.completed()).collect();
    let norm = FixedNorm::new(alpha, config.field.m);
    let shown = config.field.m.min(8);
    if let Some(first) = done.first() {
        out.write_csv("ensemble_summary.csv", |w| {
            use std::io::Write;
            write!(w, "t,mean_l2,mean_x_alpha")?;
            for n in 1..=shown {
                write!(w, ",var_mode_{n}")?;
            }
            writeln!(w)?;
            for k in 0..first.states.len() {
                let l2: Vec<f64> = done.iter().map(|r| r.states[k].norm()).collect();
                let xa: Vec<f64> = done.iter().map(|r| norm.norm(&r.states[k])).collect();
                write!(
                    w,
                    "{},{},{}",
                    fmt17(first.time(k)),
                    fmt17(mean(&l2)),
                    fmt17(mean(&xa))
                )?;
                for n in 0..shown {
                    let m: Vec<f64> = done.iter().map(|r| r.states[k][n]).collect();
                    let v = if m.len() > 1 { variance(&m) } else { 0.0 };
                    write!(w, ",{}", fmt17(v))?;
                }
                writeln!(w)?;
            }
            Ok(())
        })
        .map_err(io)?;
    }
    let paths: Vec<PathStatus> = runs
        .iter()
        .zip(&seeds)
        .enumerate()
        .map(|(index, (r, &seed))| PathStatus {
            index,
            seed,
            completed: r.completed(),
            blowup_time: match r.status {
                Status::BlowUp(t) => Some(t),
                Status::Completed => None,
            },
            final_l2: r.last().norm(),
        })
        .collect();
    let summary = SimulateSummary {
        config_hash: config.hash(),
        t_end,
        dt,
        blowups: paths.iter().filter(|p| !p.completed).count(),
        paths,
    };
    out.write_json("simulate_summary.json", &summary)
        .map_err(io)
}

#[derive(Serialize)]
struct OuPath {
    index: usize,
    seed: u64,
    stationarity: Vec<StationarityRecord>,
    temperedness_slope: f64,
}

#[derive(Serialize)]
struct OuSummary {
    config_hash: String,
    note: &'static str,
    truncation_horizon: f64,
    beta: f64,
    temperedness_horizon: f64,
    max_stationarity_residual: f64,
    median_temperedness_slope: f64,
    paths: Vec<OuPath>,
}

pub fn ou_diagnose(config: &RunConfig, out: &mut OutputDir) -> Run {
    let field = config.diffusion_field();
    let builder = ChainBuilder::new(field, config.field.m)?;
    let e = &config.experiment;
    let (dt, a, horizon, beta) = (
        config.noise.dt,
        e.a,
        e.temperedness_horizon,
        config.field.beta,
    );
    let rule = config.problem.corrector;
    let mut pairs = Vec::new();
    for &t in &e.stationarity_times {
        for &s in &e.stationarity_times {
            pairs.push((t, s));
        }
    }
    let t_hi = pairs.iter().map(|(t, s)| t + s).fold(0.0, f64::max);
    let ladder = default_ladder(horizon, dt);
    let seeds = seeds(config);
    let results = out.time("ou", |_| {
        seeds
            .par_iter()
            .map(|&seed| {
                let path = sample(config, -horizon - a - field.a_drv, t_hi, dt, seed)?;
                let recs = stationarity_batch(&builder, &path, &pairs, a, rule)?;
                let table = temperedness_diagnostic(
                    &builder, &path, beta, &e.gammas, horizon, a, &ladder, rule,
                )?;
                Ok((recs, table))
            })
            .collect::<randattract::Result<Vec<_>>>()
    })?;
    let mut paths = Vec::new();
    for (index, ((recs, table), &seed)) in results.into_iter().zip(&seeds).enumerate() {
        out.write_csv(&format!("ou/temperedness_path_{index:04}.csv"), |w| {
            table.write_csv(w)
        })
        .map_err(io)?;
        out.write_csv(&format!("ou/stationarity_path_{index:04}.csv"), |w| {
            use std::io::Write;
            writeln!(w, "t,s,residual,truncation_bound,z_norm")?;
            for r in &recs {
                writeln!(
                    w,
                    "{},{},{},{},{}",
                    fmt17(r.t),
                    fmt17(r.s),
                    fmt17(r.residual),
                    fmt17(r.truncation_bound),
                    fmt17(r.z_norm)
                )?;
            }
            Ok(())
        })
        .map_err(io)?;
        paths.push(OuPath {
            index,
            seed,
            stationarity: recs,
            temperedness_slope: table.slope,
        });
    }
    let summary = OuSummary {
        config_hash: config.hash(),
        note: "temperedness is assessed on the finite horizon [0, temperedness_horizon] only",
        truncation_horizon: a,
        beta,
        temperedness_horizon: horizon,
        max_stationarity_residual: paths
            .iter()
            .flat_map(|p| p.stationarity.iter().map(|r| r.residual))
            .fold(0.0, f64::max),
        median_temperedness_slope: median(
            &paths
                .iter()
                .map(|p| p.temperedness_slope)
                .collect::<Vec<_>>(),
        ),
        paths,
    };
    out.write_json("ou_summary.json", &summary).map_err(io)
}

#[derive(Serialize)]
struct PullbackPath {
    index: usize,
    seed: u64,
    estimate: PullbackEstimate,
    diameters_non_increasing: bool,
    absorbing: AbsorbingDiagnostics,
    /// `sup ‖endpoint‖_{X_η}` at the largest horizon exceeds the `r_η` scale.
    support_flag: bool,
    invariance: Option<InvarianceProbe>,
}

#[derive(Serialize)]
struct PullbackSummary {
    config_hash: String,
    note: &'static str,
    ensemble_size: usize,
    ball_radius: f64,
    alpha: f64,
    eta: f64,
    paths: Vec<PullbackPath>,
}

pub fn attractor_pullback(config: &RunConfig, out: &mut OutputDir) -> Run {
    let problem = config.problem();
    let builder = ChainBuilder::new(problem.field, config.field.m)?;
    let e = &config.experiment;
    let (dt, a, eta) = (config.noise.dt, e.a, config.field.eta);
    let m = config.field.m;
    let random = e.ensemble_size.saturating_sub(1 + 2 * m.min(8));
    let ensemble = default_ensemble(
        m,
        e.ball_radius,
        config.field.alpha,
        random,
        config.noise.seed,
    );
    let t_max = *e.horizons.last().expect("validated");
    let s = e.horizons[0];
    let params = AbsorbingParams {
        alpha: config.field.alpha,
        eta,
        rho: problem.nonlinearity.rho,
        sigma: problem.sigma,
        forcing_norm: FixedNorm::new(config.field.alpha, m).norm(&problem.forcing),
        z_horizon: a,
    };
    let seeds = seeds(config);
    let results = out.time("pullback", |_| {
        seeds
            .iter()
            .map(|&seed| {
                let lo = -(t_max.max(a) + a + problem.field.a_drv);
                let path = sample(config, lo, s, dt, seed)?;
                let est =
                    pullback_estimate(&problem, &builder, &path, &e.horizons, &ensemble, eta)?;
                let absorbing =
                    absorbing_diagnostics(&builder, &path, a, &params, problem.corrector)?;
                let invariance = if e.horizons.len() >= 2 {
                    Some(invariance_probe(
                        &problem,
                        &builder,
                        &path,
                        &e.horizons,
                        s,
                        &ensemble,
                    )?)
                } else {
                    None
                };
                Ok((est, absorbing, invariance))
            })
            .collect::<randattract::Result<Vec<_>>>()
    })?;
    let mut paths = Vec::new();
    for (index, ((est, absorbing, invariance), &seed)) in
        results.into_iter().zip(&seeds).enumerate()
    {
        out.write_csv(&format!("pullback/endpoints_path_{index:04}.csv"), |w| {
            est.write_endpoints_csv(w)
        })
        .map_err(io)?;
        let support_flag = est.eta_max.last().copied().unwrap_or(0.0) > absorbing.r_eta_scale;
        paths.push(PullbackPath {
            index,
            seed,
            diameters_non_increasing: est.diameters_non_increasing(0.05),
            estimate: est,
            absorbing,
            support_flag,
            invariance,
        });
    }
    let summary = PullbackSummary {
        config_hash: config.hash(),
        note: "initial data form a fixed ball of radius ball_radius in X_alpha, a surrogate for the tempered universe; r_eta_scale sets unnamed constants to 1",
        ensemble_size: ensemble.len(),
        ball_radius: e.ball_radius,
        alpha: config.field.alpha,
        eta,
        paths,
    };
    out.write_json("pullback_summary.json", &summary)
        .map_err(io)
}

#[derive(Serialize)]
struct ConvergenceSummary {
    config_hash: String,
    nonlinearity: randattract::NonlinearityKind,
    t_end: f64,
    reference_dt: f64,
    dts: Vec<f64>,
    rms_errors: Vec<f64>,
    paths: usize,
    order: Option<f64>,
}

pub fn convergence(config: &RunConfig, out: &mut OutputDir) -> Run {
    let problem = config.problem();
    let builder = ChainBuilder::new(problem.field, config.field.m)?;
    let e = &config.experiment;
    let finest = 1usize << (e.levels - 1);
    let fine_dt = e.coarse_dt / (finest * e.reference_refinement) as f64;
    let factors: Vec<usize> = (0..e.levels)
        .map(|j| (finest >> j) * e.reference_refinement)
        .collect();
    let dts: Vec<f64> = factors.iter().map(|f| fine_dt * *f as f64).collect();
    let t_end = e.convergence_t_end;
    let seeds = seeds(config);
    let errs: Vec<Vec<f64>> = out.time("convergence", |_| {
        seeds
            .par_iter()
            .map(|&seed| {
                let path = sample(config, -problem.field.a_drv, t_end, fine_dt, seed)?;
                strong_endpoint_errors(&problem, &builder, &path, t_end, &factors)
            })
            .collect::<randattract::Result<_>>()
    })?;
    let rms: Vec<f64> = (0..factors.len())
        .map(|j| mean(&errs.iter().map(|e| e[j] * e[j]).collect::<Vec<_>>()).sqrt())
        .collect();
    if rms.iter().any(|r| !r.is_finite()) {
        return Err(CliError::Numerical("non-finite strong error".into()));
    }
    out.write_csv("convergence.csv", |w| {
        use std::io::Write;
        writeln!(w, "dt,rms_error")?;
        for (d, r) in dts.iter().zip(&rms) {
            writeln!(w, "{},{}", fmt17(*d), fmt17(*r))?;
        }
        Ok(())
    })
    .map_err(io)?;
    let summary = ConvergenceSummary {
        config_hash: config.hash(),
        nonlinearity: config.problem.nonlinearity,
        t_end,
        reference_dt: fine_dt,
        order: log2_order(&dts, &rms),
        dts,
        rms_errors: rms,
        paths: seeds.len(),
    };
    out.write_json("convergence_summary.json", &summary)
        .map_err(io)
}

pub const VERIFY_REPORT: &str = "verify_report.json";

pub fn verify(config: &RunConfig, out: &mut OutputDir) -> Run {
    let report = out.time("verify", |_| verify::run(config))?;
    out.write_json(VERIFY_REPORT, &report).map_err(io)?;
    for c in report.checks.iter().filter(|c| !c.passed) {
        out.log(&format!(
            "invariant failed: {}::{} value={} tol={}",
            c.module, c.name, c.value, c.tolerance
        ));
    }
    if report.all_passed() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "{} of {} invariants failed",
            report.failed,
            report.checks.len()
        )))
    }
}

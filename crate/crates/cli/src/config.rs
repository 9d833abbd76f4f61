//! Run configuration: a TOML file with `[noise]`, `[field]`, `[problem]` and
//! `[experiment]` sections. Every key is optional.

use std::path::Path;

use randattract::operators::DriverKernel;
use randattract::{
    CorrectorRule, DVector, DiffusionField, FractionalNormSpec, NoiseSpectrum, NonlinearityKind,
    NonlinearitySpec, Profile, ReferenceNorm, SemilinearProblem,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Number of noise modes `M_w`.
    pub m_w: usize,
    /// Decay exponent `r` of `q_n = n^{-2r}`.
    pub r: f64,
    pub sigma: f64,
    pub dt: f64,
    pub seed: u64,
    pub n_paths: usize,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            m_w: 64,
            r: 1.0,
            sigma: 0.1,
            dt: 1.0 / 256.0,
            seed: 2024,
            n_paths: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub delta: f64,
    pub amp: f64,
    pub kappa: f64,
    pub a_drv: f64,
    pub profile: Profile,
    /// Galerkin dimension `M`.
    pub m: usize,
    pub alpha: f64,
    pub eta: f64,
    pub beta: f64,
    pub reference_norm: ReferenceNorm,
}

impl Default for FieldConfig {
    fn default() -> Self {
        let f = DiffusionField::default();
        Self {
            delta: f.delta,
            amp: f.amp,
            kappa: f.kappa,
            a_drv: f.a_drv,
            profile: f.profile,
            m: 64,
            alpha: 0.2,
            eta: 0.35,
            beta: 0.2,
            reference_norm: ReferenceNorm::FixedLaplacian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub nonlinearity: NonlinearityKind,
    /// Leading sine coefficients of `f`; the rest are zero.
    pub forcing: Vec<f64>,
    /// Leading sine coefficients of `u₀`.
    pub u0: Vec<f64>,
    pub blowup_threshold: f64,
    pub corrector: CorrectorRule,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            nonlinearity: NonlinearityKind::CubicFisher,
            forcing: Vec::new(),
            u0: vec![0.5, -0.2],
            blowup_threshold: 1e6,
            corrector: CorrectorRule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Final time of `simulate`.
    pub t_end: f64,
    /// Truncation horizon of the stationary OU state.
    pub a: f64,
    pub stationarity_times: Vec<f64>,
    pub temperedness_horizon: f64,
    pub gammas: Vec<f64>,
    pub horizons: Vec<f64>,
    pub ensemble_size: usize,
    pub ball_radius: f64,
    /// Step of the coarsest level of `convergence`.
    pub coarse_dt: f64,
    pub levels: usize,
    /// Reference step is the finest level step divided by this factor.
    pub reference_refinement: usize,
    pub convergence_t_end: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            a: 8.0,
            stationarity_times: vec![1.0, 2.0, 4.0],
            temperedness_horizon: 100.0,
            gammas: vec![0.1],
            horizons: vec![1.0, 2.0, 4.0, 8.0],
            ensemble_size: 33,
            ball_radius: 2.0,
            coarse_dt: 1.0 / 16.0,
            levels: 4,
            reference_refinement: 8,
            convergence_t_end: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub noise: NoiseConfig,
    pub field: FieldConfig,
    pub problem: ProblemConfig,
    pub experiment: ExperimentConfig,
}

fn is_dyadic(x: f64) -> bool {
    x > 0.0 && x.is_finite() && {
        let l = x.log2();
        (l - l.round()).abs() < 1e-12
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| format!("invalid config: {e}"))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the canonical serialisation, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn diffusion_field(&self) -> DiffusionField {
        DiffusionField {
            delta: self.field.delta,
            amp: self.field.amp,
            kappa: self.field.kappa,
            a_drv: self.field.a_drv,
            profile: self.field.profile,
        }
    }

    pub fn spectrum(&self) -> randattract::Result<NoiseSpectrum> {
        NoiseSpectrum::new(self.noise.m_w, self.noise.r)
    }

    pub fn norm_spec(&self) -> FractionalNormSpec {
        FractionalNormSpec {
            alpha: self.field.alpha,
            reference: self.field.reference_norm,
        }
    }

    fn padded(&self, lead: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.field.m, |i, _| lead.get(i).copied().unwrap_or(0.0))
    }

    pub fn problem(&self) -> SemilinearProblem {
        let mut p = SemilinearProblem::new(
            self.diffusion_field(),
            NonlinearitySpec::new(self.problem.nonlinearity),
            self.padded(&self.problem.u0),
        );
        p.forcing = self.padded(&self.problem.forcing);
        p.sigma = self.noise.sigma;
        p.blowup_threshold = self.problem.blowup_threshold;
        p.norm = self.norm_spec();
        p.corrector = self.problem.corrector;
        p
    }

    /// Re-validates every parameter constraint; the message names the
    /// violated constraint.
    pub fn validate(&self) -> Result<(), String> {
        let n = &self.noise;
        let f = &self.field;
        let p = &self.problem;
        let e = &self.experiment;
        self.spectrum().map_err(|e| e.to_string())?;
        if !is_dyadic(n.dt) {
            return Err(format!("noise.dt = {} must be a power of two", n.dt));
        }
        if !(n.sigma >= 0.0 && n.sigma.is_finite()) {
            return Err(format!("noise.sigma = {} must be >= 0", n.sigma));
        }
        if n.n_paths == 0 {
            return Err("noise.n_paths must be positive".into());
        }
        let field = self.diffusion_field();
        field.validate().map_err(|e| e.to_string())?;
        DriverKernel::new(&field, n.dt).map_err(|e| e.to_string())?;
        if f.m == 0 {
            return Err("field.m (Galerkin dimension) must be positive".into());
        }
        if !(0.0..0.5).contains(&f.alpha) {
            return Err(format!("field.alpha = {} must lie in [0, 1/2)", f.alpha));
        }
        let cubic = matches!(
            p.nonlinearity,
            NonlinearityKind::CubicFisher | NonlinearityKind::PureCubic
        );
        if cubic && !(0.125..0.25).contains(&f.alpha) {
            return Err(format!(
                "field.alpha = {} must satisfy 1/8 <= alpha < 1/4 for a cubic nonlinearity",
                f.alpha
            ));
        }
        if !(f.eta > f.alpha && f.eta + f.alpha < 1.0) {
            return Err(format!(
                "field.eta = {} must satisfy eta > alpha and eta + alpha < 1",
                f.eta
            ));
        }
        if !(0.0..0.5).contains(&f.beta) {
            return Err(format!("field.beta = {} must lie in [0, 1/2)", f.beta));
        }
        for (name, v) in [("problem.u0", &p.u0), ("problem.forcing", &p.forcing)] {
            if v.len() > f.m {
                return Err(format!(
                    "{name} has more than field.m = {} coefficients",
                    f.m
                ));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(format!("{name} must be finite"));
            }
        }
        if !(p.blowup_threshold > 0.0) {
            return Err("problem.blowup_threshold must be positive".into());
        }
        let aligned = |x: f64| (x / n.dt - (x / n.dt).round()).abs() < 1e-9;
        for (name, t) in [
            ("experiment.t_end", e.t_end),
            ("experiment.a", e.a),
            ("experiment.temperedness_horizon", e.temperedness_horizon),
        ] {
            if !(t > 0.0) || !aligned(t) {
                return Err(format!(
                    "{name} = {t} must be a positive multiple of noise.dt"
                ));
            }
        }
        if e.stationarity_times
            .iter()
            .any(|t| !(*t >= 0.0) || !aligned(*t))
        {
            return Err(
                "experiment.stationarity_times must be non-negative multiples of noise.dt".into(),
            );
        }
        if e.gammas.iter().any(|g| !(*g > 0.0)) {
            return Err("experiment.gammas must be positive".into());
        }
        if e.horizons.is_empty()
            || e.horizons.windows(2).any(|w| w[1] <= w[0])
            || e.horizons.iter().any(|t| !(*t > 0.0) || !aligned(*t))
        {
            return Err(
                "experiment.horizons must be increasing positive multiples of noise.dt".into(),
            );
        }
        if e.ensemble_size == 0 {
            return Err("experiment.ensemble_size must be positive".into());
        }
        if !(e.ball_radius > 0.0) {
            return Err("experiment.ball_radius must be positive".into());
        }
        if !is_dyadic(e.coarse_dt) || e.levels < 2 {
            return Err("experiment.coarse_dt must be a power of two and levels >= 2".into());
        }
        if !e.reference_refinement.is_power_of_two() || e.reference_refinement < 2 {
            return Err("experiment.reference_refinement must be a power of two >= 2".into());
        }
        if !(e.convergence_t_end > 0.0) || !(e.convergence_t_end / e.coarse_dt).fract().eq(&0.0) {
            return Err(
                "experiment.convergence_t_end must be a multiple of experiment.coarse_dt".into(),
            );
        }
        Ok(())
    }
}

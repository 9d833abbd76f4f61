//! Two-sided Q-Wiener paths and the Wiener shift.
//!
//! The noise lives in the Dirichlet sine basis `φ_n(x) = √2 sin(nπx)` on
//! `(0, 1)` with diagonal covariance weights `q_n = n^(-2r)`. A path stores
//! the mode coefficients `w_n(t_k)` on a uniform grid that contains `t = 0`.
//!
//! Shifting never copies or rewrites samples: a path is a view onto shared
//! raw samples plus an anchor row, and `θ_s ω (t) = ω(t + s) - ω(s)` is
//! evaluated as `raw[anchor + s + t] - raw[anchor + s]`. Consequently
//! `θ_{s1+s2} = θ_{s1} ∘ θ_{s2}` holds bitwise and increments are identical
//! on every shifted view.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, Error, Result};
use crate::grid::{steps_of, TimeGrid};

/// Diagonal trace-class covariance `q_n = n^(-2r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpectrum {
    decay_exponent: f64,
    weights: Vec<f64>,
    sqrt_weights: Vec<f64>,
}

impl NoiseSpectrum {
    pub fn new(mode_count: usize, decay_exponent: f64) -> Result<Self> {
        if mode_count == 0 {
            return config("noise mode count M_w must be positive");
        }
        if !(decay_exponent > 0.5) || !decay_exponent.is_finite() {
            return config(format!(
                "noise decay exponent r must exceed 1/2 for a trace-class covariance, got {decay_exponent}"
            ));
        }
        let weights: Vec<f64> = (1..=mode_count)
            .map(|n| (n as f64).powf(-2.0 * decay_exponent))
            .collect();
        let sqrt_weights = weights.iter().map(|q| q.sqrt()).collect();
        Ok(Self {
            decay_exponent,
            weights,
            sqrt_weights,
        })
    }

    /// Explicit weights, used for single-mode and synthetic experiments.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
            return config("noise weights must be finite and non-negative");
        }
        let sqrt_weights = weights.iter().map(|q| q.sqrt()).collect();
        Ok(Self {
            decay_exponent: f64::NAN,
            weights,
            sqrt_weights,
        })
    }

    pub fn mode_count(&self) -> usize {
        self.weights.len()
    }

    pub fn decay_exponent(&self) -> f64 {
        self.decay_exponent
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, n: usize) -> f64 {
        self.weights[n - 1]
    }

    /// Partial sum of the weights (trace of the truncated covariance).
    pub fn trace(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Upper bound `1 + 1/(2r - 1)` for the full series `ζ(2r)`.
    pub fn trace_bound(&self) -> f64 {
        1.0 + 1.0 / (2.0 * self.decay_exponent - 1.0)
    }
}

/// Signed number of grid steps representing the shift time `offset * dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftIndex(pub i64);

impl ShiftIndex {
    pub fn from_time(s: f64, dt: f64) -> Result<Self> {
        steps_of(s, dt).map(ShiftIndex)
    }
}

/// A sampled two-sided Q-Wiener trajectory, or a Wiener-shifted view of one.
#[derive(Debug, Clone)]
pub struct WienerPath {
    spectrum: Arc<NoiseSpectrum>,
    dt: f64,
    modes: usize,
    rows: usize,
    raw: Arc<Vec<f64>>,
    anchor: usize,
    base_seed: u64,
}

/// Per-path seed for ensemble member `index`.
pub fn path_seed(base_seed: u64, index: u64) -> u64 {
    base_seed.wrapping_add(index)
}

/// Samples a two-sided path on `[t_lo, t_hi]` with step `dt`.
///
/// The forward part (`t >= 0`) and the backward part (`t <= 0`) cumulate
/// increments drawn from two disjoint ChaCha streams of the same seed.
pub fn sample_two_sided_path(
    spectrum: &NoiseSpectrum,
    t_lo: f64,
    t_hi: f64,
    dt: f64,
    seed: u64,
) -> Result<WienerPath> {
    if t_lo > 0.0 || t_hi < 0.0 {
        return config(format!("path window [{t_lo}, {t_hi}] must contain 0"));
    }
    let grid = TimeGrid::spanning(t_lo, t_hi, dt)?;
    let modes = spectrum.mode_count();
    let anchor = (-grid.first()) as usize;
    let rows = grid.len();
    let mut raw = vec![0.0; rows * modes];
    let scale: Vec<f64> = spectrum
        .sqrt_weights
        .iter()
        .map(|s| s * dt.sqrt())
        .collect();

    let mut forward = ChaCha8Rng::seed_from_u64(seed);
    forward.set_stream(0);
    for row in anchor..rows - 1 {
        for n in 0..modes {
            let xi: f64 = StandardNormal.sample(&mut forward);
            raw[(row + 1) * modes + n] = raw[row * modes + n] + scale[n] * xi;
        }
    }
    let mut backward = ChaCha8Rng::seed_from_u64(seed);
    backward.set_stream(1);
    for row in (1..=anchor).rev() {
        for n in 0..modes {
            let xi: f64 = StandardNormal.sample(&mut backward);
            raw[(row - 1) * modes + n] = raw[row * modes + n] + scale[n] * xi;
        }
    }

    Ok(WienerPath {
        spectrum: Arc::new(spectrum.clone()),
        dt,
        modes,
        rows,
        raw: Arc::new(raw),
        anchor,
        base_seed: seed,
    })
}

/// `θ_s ω`, i.e. `t ↦ ω(t + s) - ω(s)`.
pub fn wiener_shift(path: &WienerPath, s: ShiftIndex) -> Result<WienerPath> {
    let anchor = path.anchor as i64 + s.0;
    if anchor < 0 || anchor >= path.rows as i64 {
        let t = s.0 as f64 * path.dt;
        return Err(Error::ShiftRange {
            lo: t,
            hi: t,
            path_lo: path.t_lo(),
            path_hi: path.t_hi(),
        });
    }
    let mut out = path.clone();
    out.anchor = anchor as usize;
    Ok(out)
}

impl WienerPath {
    /// Builds a path from explicit values, one row of `modes` coefficients per
    /// grid point of `grid`. The row at `t = 0` must vanish.
    pub fn from_values(spectrum: NoiseSpectrum, grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let modes = spectrum.mode_count();
        if values.len() != grid.len() * modes {
            return config("path values do not match grid length times mode count");
        }
        let anchor = grid
            .index_of(0.0)
            .map_err(|_| Error::Config("path grid must contain t = 0".into()))?;
        if values[anchor * modes..(anchor + 1) * modes]
            .iter()
            .any(|v| *v != 0.0)
        {
            return config("path must vanish at t = 0");
        }
        Ok(Self {
            spectrum: Arc::new(spectrum),
            dt: grid.dt(),
            modes,
            rows: grid.len(),
            raw: Arc::new(values),
            anchor,
            base_seed: 0,
        })
    }

    pub fn spectrum(&self) -> &NoiseSpectrum {
        &self.spectrum
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn base_seed(&self) -> u64 {
        self.base_seed
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(-(self.anchor as i64), self.rows, self.dt).expect("valid path grid")
    }

    pub fn t_lo(&self) -> f64 {
        -(self.anchor as f64) * self.dt
    }

    pub fn t_hi(&self) -> f64 {
        (self.rows - 1 - self.anchor) as f64 * self.dt
    }

    fn row_of(&self, t: f64) -> Result<usize> {
        let k = steps_of(t, self.dt)?;
        let row = self.anchor as i64 + k;
        if row < 0 || row >= self.rows as i64 {
            return Err(Error::ShiftRange {
                lo: t,
                hi: t,
                path_lo: self.t_lo(),
                path_hi: self.t_hi(),
            });
        }
        Ok(row as usize)
    }

    /// Checks that `[lo, hi]` is inside the sampled window.
    pub fn require(&self, lo: f64, hi: f64) -> Result<()> {
        let tol = 1e-9 * self.dt;
        if lo < self.t_lo() - tol || hi > self.t_hi() + tol {
            return Err(Error::ShiftRange {
                lo,
                hi,
                path_lo: self.t_lo(),
                path_hi: self.t_hi(),
            });
        }
        Ok(())
    }

    fn row(&self, row: usize) -> &[f64] {
        &self.raw[row * self.modes..(row + 1) * self.modes]
    }

    /// Mode `n` (1-based) of `ω(t)`.
    pub fn value(&self, t: f64, n: usize) -> Result<f64> {
        let row = self.row_of(t)?;
        Ok(self.raw[row * self.modes + n - 1] - self.raw[self.anchor * self.modes + n - 1])
    }

    /// All mode coefficients of `ω(t)`.
    pub fn values(&self, t: f64) -> Result<Vec<f64>> {
        let row = self.row_of(t)?;
        Ok(self
            .row(row)
            .iter()
            .zip(self.row(self.anchor))
            .map(|(v, a)| v - a)
            .collect())
    }

    /// `ω(t_b) - ω(t_a)` for every mode, written into `out`.
    pub fn increment_into(&self, t_a: f64, t_b: f64, out: &mut [f64]) -> Result<()> {
        let a = self.row_of(t_a)?;
        let b = self.row_of(t_b)?;
        for ((o, vb), va) in out.iter_mut().zip(self.row(b)).zip(self.row(a)) {
            *o = vb - va;
        }
        Ok(())
    }

    pub fn increment(&self, t_a: f64, t_b: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.modes];
        self.increment_into(t_a, t_b, &mut out)?;
        Ok(out)
    }

    /// Mode-`n` increment between two grid offsets relative to `t = 0`,
    /// without bounds conversions; used by tight loops.
    pub(crate) fn mode_increment_steps(&self, from: i64, to: i64, n: usize) -> f64 {
        let a = (self.anchor as i64 + from) as usize;
        let b = (self.anchor as i64 + to) as usize;
        self.raw[b * self.modes + n - 1] - self.raw[a * self.modes + n - 1]
    }

    pub(crate) fn steps_range(&self) -> (i64, i64) {
        (-(self.anchor as i64), (self.rows - 1 - self.anchor) as i64)
    }

    /// Euclidean norm of the coefficients of `ω(t)` (the L² norm of the
    /// represented function, the basis being orthonormal).
    pub fn norm_at(&self, t: f64) -> Result<f64> {
        Ok(self.values(t)?.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Keeps every `factor`-th grid point, aligned at `t = 0`.
    pub fn restrict(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return config("restriction factor must be positive");
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let first_row = self.anchor % factor;
        let mut raw = Vec::new();
        let mut rows = 0;
        for row in (first_row..self.rows).step_by(factor) {
            raw.extend_from_slice(self.row(row));
            rows += 1;
        }
        // Re-anchor so that the restricted values equal the original ones.
        let anchor = self.anchor / factor;
        let a = raw[anchor * self.modes..(anchor + 1) * self.modes].to_vec();
        if a.iter().any(|v| *v != 0.0) {
            for r in 0..rows {
                for n in 0..self.modes {
                    raw[r * self.modes + n] -= a[n];
                }
            }
        }
        Ok(Self {
            spectrum: self.spectrum.clone(),
            dt: self.dt * factor as f64,
            modes: self.modes,
            rows,
            raw: Arc::new(raw),
            anchor,
            base_seed: self.base_seed,
        })
    }

    /// Multiplies every sample by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let raw = self.raw.iter().map(|v| v * c).collect();
        Self {
            raw: Arc::new(raw),
            ..self.clone()
        }
    }

    /// Writes the path as CSV: a comment header with the spectrum parameters
    /// and seed, then `t, mode_1, ..., mode_Mw`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# spectrum: M_w={} r={} dt={} seed={}",
            self.modes, self.spectrum.decay_exponent, self.dt, self.base_seed
        )?;
        write!(w, "t")?;
        for n in 1..=self.modes {
            write!(w, ",mode_{n}")?;
        }
        writeln!(w)?;
        let grid = self.grid();
        for (k, t) in grid.times().enumerate() {
            write!(w, "{}", crate::fmt17(t))?;
            for (v, a) in self.row(k).iter().zip(self.row(self.anchor)) {
                write!(w, ",{}", crate::fmt17(v - a))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Grid Hölder seminorm `max ‖ω(t_j) - ω(t_i)‖ / (t_j - t_i)^γ` over pairs in
/// the window `[s, r]`.
pub fn holder_seminorm(path: &WienerPath, gamma: f64, s: f64, r: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 0.5) {
        return config(format!("Hölder exponent must lie in (0, 1/2), got {gamma}"));
    }
    if !(r > s) {
        return config(format!("empty Hölder window [{s}, {r}]"));
    }
    path.require(s, r)?;
    let dt = path.dt;
    let a = steps_of(s, dt)?;
    let b = steps_of(r, dt)?;
    let mut best: f64 = 0.0;
    for i in a..b {
        for j in i + 1..=b {
            let mut sq = 0.0;
            for n in 1..=path.modes {
                let d = path.mode_increment_steps(i, j, n);
                sq += d * d;
            }
            let q = sq.sqrt() / (((j - i) as f64) * dt).powf(gamma);
            best = best.max(q);
        }
    }
    Ok(best)
}

/// Smallest grid time `T0 > 0` such that `‖ω(t)‖ <= eps |t|` for every grid
/// time with `|t| >= T0` inside the sampled window. Returns the largest
/// sampled `|t|` when the bound never settles.
pub fn growth_diagnostic(path: &WienerPath, eps: f64) -> f64 {
    let (lo, hi) = path.steps_range();
    let edge = lo.unsigned_abs().max(hi.unsigned_abs());
    let mut worst: u64 = 0;
    for k in lo..=hi {
        if k == 0 {
            continue;
        }
        let mut sq = 0.0;
        for n in 1..=path.modes {
            let v = path.mode_increment_steps(0, k, n);
            sq += v * v;
        }
        let t = k.unsigned_abs() as f64 * path.dt;
        if sq.sqrt() > eps * t {
            worst = worst.max(k.unsigned_abs());
        }
    }
    let first_ok = (worst + 1).min(edge.max(1));
    first_ok as f64 * path.dt
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum() -> NoiseSpectrum {
        NoiseSpectrum::new(4, 1.0).unwrap()
    }

    #[test]
    fn weights_follow_power_law() {
        let s = NoiseSpectrum::new(16, 1.0).unwrap();
        assert_eq!(s.weight(16), 0.00390625);
        assert!(s.weights().windows(2).all(|w| w[1] < w[0]));
        assert!(s.trace() <= s.trace_bound());
        assert!(NoiseSpectrum::new(4, 0.5).is_err());
        assert!(NoiseSpectrum::new(0, 1.0).is_err());
    }

    #[test]
    fn anchored_at_zero() {
        let p = sample_two_sided_path(&spectrum(), -2.0, 3.0, 0.125, 7).unwrap();
        assert!(p.values(0.0).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(p.t_lo(), -2.0);
        assert_eq!(p.t_hi(), 3.0);
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(matches!(
            sample_two_sided_path(&spectrum(), -1.0, 1.05, 0.1, 1),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            sample_two_sided_path(&spectrum(), -1.0, 1.0, 0.0, 1),
            Err(Error::Config(_))
        ));
        assert!(sample_two_sided_path(&spectrum(), 0.5, 1.0, 0.5, 1).is_err());
    }

    #[test]
    fn shift_identity_and_anchoring() {
        let p = sample_two_sided_path(&spectrum(), -2.0, 2.0, 0.25, 3).unwrap();
        let same = wiener_shift(&p, ShiftIndex(0)).unwrap();
        for t in p.grid().times() {
            assert_eq!(p.values(t).unwrap(), same.values(t).unwrap());
        }
        let q = wiener_shift(&p, ShiftIndex(3)).unwrap();
        assert!(q.values(0.0).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(q.t_lo(), -2.75);
        for n in 1..=4 {
            let expect = p.value(0.5 + 0.75, n).unwrap() - p.value(0.75, n).unwrap();
            assert_eq!(q.value(0.5, n).unwrap(), expect);
        }
    }

    #[test]
    fn shift_out_of_range() {
        let p = sample_two_sided_path(&spectrum(), -1.0, 1.0, 0.25, 3).unwrap();
        assert!(matches!(
            wiener_shift(&p, ShiftIndex(5)),
            Err(Error::ShiftRange { .. })
        ));
        assert!(wiener_shift(&p, ShiftIndex(-4)).is_ok());
    }

    #[test]
    fn two_point_holder_quotient() {
        let s = NoiseSpectrum::from_weights(vec![1.0]).unwrap();
        let grid = TimeGrid::spanning(0.0, 0.5, 0.5).unwrap();
        let p = WienerPath::from_values(s, grid, vec![0.0, 0.3]).unwrap();
        let h = holder_seminorm(&p, 0.4, 0.0, 0.5).unwrap();
        assert!((h - 0.3 / 0.5f64.powf(0.4)).abs() < 1e-15);
        assert!(holder_seminorm(&p, 0.4, 0.5, 0.5).is_err());
        assert!(holder_seminorm(&p, 0.6, 0.0, 0.5).is_err());
    }

    #[test]
    fn zero_path_diagnostics() {
        let s = NoiseSpectrum::from_weights(vec![1.0, 0.5]).unwrap();
        let grid = TimeGrid::spanning(-1.0, 1.0, 0.25).unwrap();
        let p = WienerPath::from_values(s, grid, vec![0.0; 18]).unwrap();
        assert_eq!(holder_seminorm(&p, 0.3, -1.0, 1.0).unwrap(), 0.0);
        assert_eq!(growth_diagnostic(&p, 0.1), 0.25);
    }

    #[test]
    fn restriction_keeps_values() {
        let p = sample_two_sided_path(&spectrum(), -1.0, 1.0, 0.125, 11).unwrap();
        let c = p.restrict(4).unwrap();
        assert_eq!(c.dt(), 0.5);
        for t in c.grid().times() {
            assert_eq!(c.values(t).unwrap(), p.values(t).unwrap());
        }
    }
}

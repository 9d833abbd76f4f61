use crate::error::{Error, Result};

/// Relative tolerance used to decide whether a time lies on a grid.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform time grid anchored at the origin: the points are `(first + k) * dt`
/// for `k = 0..len`.
///
/// Storing integer offsets keeps shifted grids exactly aligned; two grids with
/// the same `dt` share every point they have in common.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    first: i64,
    len: usize,
    dt: f64,
}

/// Converts a time into an integer multiple of `dt`.
pub fn steps_of(t: f64, dt: f64) -> Result<i64> {
    let r = t / dt;
    let k = r.round();
    if !r.is_finite() || (r - k).abs() > ALIGN_TOL * k.abs().max(1.0) {
        return Err(Error::Alignment(t));
    }
    Ok(k as i64)
}

impl TimeGrid {
    pub fn new(first: i64, len: usize, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return crate::error::config(format!("time step must be positive, got {dt}"));
        }
        if len == 0 {
            return crate::error::config("grid must contain at least one point");
        }
        Ok(Self { first, len, dt })
    }

    /// Grid covering `[t_lo, t_hi]`; both ends must be integral multiples of `dt`.
    pub fn spanning(t_lo: f64, t_hi: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return crate::error::config(format!("time step must be positive, got {dt}"));
        }
        if t_hi < t_lo {
            return crate::error::config(format!("empty time window [{t_lo}, {t_hi}]"));
        }
        let lo = steps_of(t_lo, dt)
            .map_err(|_| Error::Config(format!("t_lo = {t_lo} is not a multiple of dt = {dt}")))?;
        let hi = steps_of(t_hi, dt)
            .map_err(|_| Error::Config(format!("t_hi = {t_hi} is not a multiple of dt = {dt}")))?;
        Self::new(lo, (hi - lo) as usize + 1, dt)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of steps, `len - 1`.
    pub fn steps(&self) -> usize {
        self.len - 1
    }

    /// Integer offset of the first point from the origin.
    pub fn first(&self) -> i64 {
        self.first
    }

    pub fn last(&self) -> i64 {
        self.first + self.len as i64 - 1
    }

    pub fn time(&self, k: usize) -> f64 {
        (self.first + k as i64) as f64 * self.dt
    }

    pub fn start(&self) -> f64 {
        self.time(0)
    }

    pub fn end(&self) -> f64 {
        self.time(self.len - 1)
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.time(k))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.index_of(t).is_ok()
    }

    /// Index of `t` in the grid.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = steps_of(t, self.dt)?;
        if k < self.first || k > self.last() {
            return Err(Error::Alignment(t));
        }
        Ok((k - self.first) as usize)
    }

    /// The sub-grid between two points of this grid.
    pub fn window(&self, t_lo: f64, t_hi: f64) -> Result<Self> {
        let a = self.index_of(t_lo)?;
        let b = self.index_of(t_hi)?;
        if b < a {
            return Err(Error::Ordering { t: t_hi, s: t_lo });
        }
        Self::new(self.first + a as i64, b - a + 1, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spanning_checks_integrality() {
        let g = TimeGrid::spanning(-1.0, 2.0, 0.25).unwrap();
        assert_eq!(g.len(), 13);
        assert_eq!(g.index_of(0.0).unwrap(), 4);
        assert_eq!(g.time(4), 0.0);
        assert!(TimeGrid::spanning(-1.0, 2.1, 0.25).is_err());
        assert!(TimeGrid::spanning(0.0, 1.0, 0.0).is_err());
        assert!(TimeGrid::spanning(0.0, 1.0, -0.5).is_err());
    }

    #[test]
    fn off_grid_times_rejected() {
        let g = TimeGrid::spanning(0.0, 1.0, 0.125).unwrap();
        assert!(matches!(g.index_of(0.1), Err(Error::Alignment(_))));
        assert!(matches!(g.index_of(1.125), Err(Error::Alignment(_))));
        let w = g.window(0.25, 0.75).unwrap();
        assert_eq!(w.len(), 5);
        assert_eq!(w.start(), 0.25);
    }
}

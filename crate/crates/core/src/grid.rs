//! Time grid shared by the propagation, the kernels and the mode functions.

use crate::error::{check_finite, Error, Result};

/// Uniform grid `t_i = t_start + i·Δt`, `i = 0..len`, with `Δt = τ/M`.
///
/// Sample `i` stands for the segment `[t_i − Δt/2, t_i + Δt/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationWindow {
    t_start: f64,
    dt: f64,
    len: usize,
    per_round_trip: usize,
}

impl SimulationWindow {
    /// Grid covering `[t_start, t_end)` in steps of `tau / per_round_trip`.
    /// `t_end` is rounded to the nearest grid point.
    pub fn new(t_start: f64, t_end: f64, tau: f64, per_round_trip: usize) -> Result<Self> {
        check_finite("window start", t_start)?;
        check_finite("window end", t_end)?;
        if tau.is_nan() || tau <= 0.0 || per_round_trip == 0 {
            return Err(Error::Grid(format!("round trip {tau} s with {per_round_trip} samples")));
        }
        let dt = tau / per_round_trip as f64;
        let len = ((t_end - t_start) / dt).round();
        if len < 1.0 {
            return Err(Error::WindowTooShort(format!(
                "[{t_start:e}, {t_end:e}] holds no samples"
            )));
        }
        Ok(Self {
            t_start,
            dt,
            len: len as usize,
            per_round_trip,
        })
    }

    /// Grid with `len` samples whose index `origin` sits at `t = 0`.
    pub fn with_origin(origin: usize, len: usize, tau: f64, per_round_trip: usize) -> Result<Self> {
        let dt = tau / per_round_trip as f64;
        Self::new(
            -(origin as f64) * dt,
            (len as f64 - origin as f64) * dt,
            tau,
            per_round_trip,
        )
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_start + self.len as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tau(&self) -> f64 {
        self.dt * self.per_round_trip as f64
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn per_round_trip(&self) -> usize {
        self.per_round_trip
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t_start + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|i| self.time(i))
    }

    /// Index of the sample nearest to `t`, if inside the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = ((t - self.t_start) / self.dt).round();
        (x >= 0.0 && (x as usize) < self.len).then_some(x as usize)
    }

    /// Index of `t`, which must fall on a grid point to within 1e-6 of a step.
    pub fn exact_index(&self, t: f64) -> Result<usize> {
        let x = (t - self.t_start) / self.dt;
        if (x - x.round()).abs() > 1e-6 {
            return Err(Error::Grid(format!("t = {t:e} s is not on the grid")));
        }
        self.index_of(t)
            .ok_or_else(|| Error::Grid(format!("t = {t:e} s is outside the window")))
    }

    /// Same grid with the sampling refined by an integer factor.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        Self::new(self.t_start, self.t_end(), self.tau(), self.per_round_trip * factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let w = SimulationWindow::new(-1.0, 3.0, 1.0, 4).unwrap();
        assert_eq!(w.len(), 16);
        assert_eq!(w.dt(), 0.25);
        assert_eq!(w.time(4), 0.0);
        assert_eq!(w.index_of(0.0), Some(4));
        assert_eq!(w.exact_index(0.5).unwrap(), 6);
        assert!(w.exact_index(0.6).is_err());
        assert!(SimulationWindow::new(0.0, 0.01, 1.0, 4).is_err());
        let o = SimulationWindow::with_origin(3, 10, 2.0, 8).unwrap();
        assert_eq!(o.index_of(0.0), Some(3));
        assert_eq!(o.len(), 10);
    }
}

//! Split-conformal residual bounds for the nominal ensemble model.

use std::sync::Arc;

use crate::dynamics::{AffineEval, ControlBox, UncertainModel, UncertaintyBoundsEval};
use crate::error::{Error, Result};

use super::{Dataset, Ensemble};

/// State-independent additive radii `D1i = [-q_i, q_i]`, `D2 = 0`, covering
/// the whole residual vector with probability at least `coverage`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformalBound {
    pub radii: Vec<f64>,
    pub coverage: f64,
    pub n_cal: usize,
}

/// The `⌈(n+1)·coverage⌉`-th smallest of `residuals`, or `+∞` when that
/// rank exceeds `n`.
pub fn split_conformal_quantile(residuals: &[f64], coverage: f64) -> Result<f64> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::param("coverage", format!("{coverage} is outside (0, 1)")));
    }
    let n = residuals.len();
    // Guard against `(n+1)·coverage` landing a hair above an integer.
    let rank = (((n + 1) as f64) * coverage - 1e-9).ceil().max(1.0) as usize;
    if rank > n {
        return Ok(f64::INFINITY);
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[rank - 1])
}

pub const MIN_CALIBRATION_ROWS: usize = 20;

pub fn conformal_bounds(ensemble: &Ensemble, calibration: &Dataset, coverage: f64) -> Result<ConformalBound> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::param("coverage", format!("{coverage} is outside (0, 1)")));
    }
    let n = calibration.len();
    if n < MIN_CALIBRATION_ROWS {
        return Err(Error::param(
            "calibration",
            format!("{n} rows; at least {MIN_CALIBRATION_ROWS} are required"),
        ));
    }
    // One score per row, max_i |r_i| / s_i with s_i the training-target scale,
    // so the radii cover every dimension jointly rather than one at a time.
    let scale = &ensemble.output_normalizer.scale;
    let pred = ensemble.predict(calibration.x.view(), calibration.u.view());
    let scores: Vec<f64> = (0..n)
        .map(|r| {
            (0..calibration.state_dim())
                .map(|i| (calibration.xdot[[r, i]] - pred[[r, i]]).abs() / scale[i])
                .fold(0.0, f64::max)
        })
        .collect();
    let q = split_conformal_quantile(&scores, coverage)?;
    let radii = scale.iter().map(|s| q * s).collect();
    Ok(ConformalBound {
        radii,
        coverage,
        n_cal: n,
    })
}

/// Fraction of rows whose residual lies within the radius in every dimension.
pub fn empirical_coverage(ensemble: &Ensemble, bound: &ConformalBound, data: &Dataset) -> f64 {
    if data.is_empty() {
        return f64::NAN;
    }
    let pred = ensemble.predict(data.x.view(), data.u.view());
    let hits = (0..data.len())
        .filter(|&r| (0..data.state_dim()).all(|i| (data.xdot[[r, i]] - pred[[r, i]]).abs() <= bound.radii[i]))
        .count();
    hits as f64 / data.len() as f64
}

/// Ensemble mean dynamics with constant conformal radii on the drift.
#[derive(Debug, Clone)]
pub struct ConformalModel {
    pub ensemble: Arc<Ensemble>,
    pub controls: ControlBox,
    pub bound: ConformalBound,
}

impl ConformalModel {
    pub fn new(ensemble: Arc<Ensemble>, controls: ControlBox, bound: ConformalBound) -> Result<Self> {
        if bound.radii.len() != ensemble.state_dim {
            return Err(Error::Dimension("conformal radii do not match the state".into()));
        }
        if bound.radii.iter().any(|q| !q.is_finite()) {
            return Err(Error::param("conformal", "calibration set too small for the requested coverage"));
        }
        Ok(Self {
            ensemble,
            controls,
            bound,
        })
    }
}

impl UncertainModel for ConformalModel {
    fn state_dim(&self) -> usize {
        self.ensemble.state_dim
    }
    fn control_dim(&self) -> usize {
        self.ensemble.control_dim
    }
    fn control_box(&self) -> &ControlBox {
        &self.controls
    }
    fn nominal(&self, x: &[f64]) -> AffineEval {
        self.ensemble.nominal(x)
    }
    fn bounds(&self, _x: &[f64]) -> UncertaintyBoundsEval {
        let nx = self.ensemble.state_dim;
        let nu = self.ensemble.control_dim;
        UncertaintyBoundsEval::symmetric(&self.bound.radii, &vec![0.0; nx * nu], nu)
    }
}

//! Backward-time integration of the avoid variational inequality
//!
//! ```text
//! min{ D_t V + H(x, ∇V), l(x) - V } = 0,   V(x, T) = l(x)
//! ```
//!
//! in the elapsed backward time `τ = T - t`: `V_τ = H`, followed by the clamp
//! `V ← min(V, l)` and a floor at the smallest `l` on the grid. Space is discretized with first-order one-sided
//! differences and a local Lax-Friedrichs numerical Hamiltonian; time with
//! explicit Euler under a CFL limit.

use rayon::prelude::*;

use crate::dynamics::{AffineEval, ControlBox, UncertainModel, UncertaintyBoundsEval};
use crate::error::{Error, Result};
use crate::grid::{self, Grid, ScalarField};
use crate::hamiltonian::{dissipation_bounds, hamiltonian};

/// Per-node access to the uncertain model during a solve.
pub trait NodeModel: Sync {
    fn grid(&self) -> &Grid;
    fn controls(&self) -> &ControlBox;
    /// Grid-wide maximum of the dissipation coefficient, per dimension.
    fn alpha_max(&self) -> &[f64];
    fn with_node<R>(&self, node: usize, x: &[f64], f: impl FnOnce(&AffineEval, &UncertaintyBoundsEval, &[f64]) -> R) -> R;
}

/// Precomputed nominal dynamics, bounds and dissipation coefficients at every
/// node.
#[derive(Debug, Clone)]
pub struct ModelTable {
    grid: Grid,
    controls: ControlBox,
    nominal: Vec<AffineEval>,
    bounds: Vec<UncertaintyBoundsEval>,
    alpha: Vec<Vec<f64>>,
    alpha_max: Vec<f64>,
}

impl ModelTable {
    pub fn tabulate(model: &impl UncertainModel, grid: &Grid) -> Result<Self> {
        check_dims(model, grid)?;
        let (nominal, bounds): (Vec<_>, Vec<_>) = (0..grid.len())
            .into_par_iter()
            .map(|k| model.evaluate(&grid.coord(k)))
            .unzip();
        Self::from_parts(grid.clone(), model.control_box().clone(), nominal, bounds)
    }

    pub fn from_parts(
        grid: Grid,
        controls: ControlBox,
        nominal: Vec<AffineEval>,
        bounds: Vec<UncertaintyBoundsEval>,
    ) -> Result<Self> {
        if nominal.len() != grid.len() || bounds.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "table has {} / {} entries for {} nodes",
                nominal.len(),
                bounds.len(),
                grid.len()
            )));
        }
        for (k, b) in bounds.iter().enumerate() {
            b.check_origin(&grid.coord(k))?;
            if nominal[k].f1.iter().chain(&nominal[k].f2).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: k,
                    coords: grid.coord(k),
                });
            }
        }
        let alpha: Vec<Vec<f64>> = nominal
            .iter()
            .zip(&bounds)
            .map(|(n, b)| dissipation_bounds(n, b, &controls))
            .collect();
        let alpha_max = column_max(&alpha, grid.ndim());
        Ok(Self {
            grid,
            controls,
            nominal,
            bounds,
            alpha,
            alpha_max,
        })
    }

    /// Same nominal dynamics with every node's bounds transformed.
    pub fn map_bounds(&self, f: impl Fn(&UncertaintyBoundsEval, &ControlBox) -> UncertaintyBoundsEval + Sync) -> Result<Self> {
        let bounds = self.bounds.par_iter().map(|b| f(b, &self.controls)).collect();
        Self::from_parts(self.grid.clone(), self.controls.clone(), self.nominal.clone(), bounds)
    }

    pub fn len(&self) -> usize {
        self.nominal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nominal.is_empty()
    }

    pub fn nominal(&self, node: usize) -> &AffineEval {
        &self.nominal[node]
    }

    pub fn bounds(&self, node: usize) -> &UncertaintyBoundsEval {
        &self.bounds[node]
    }

    pub fn alpha(&self, node: usize) -> &[f64] {
        &self.alpha[node]
    }
}

impl NodeModel for ModelTable {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn controls(&self) -> &ControlBox {
        &self.controls
    }
    fn alpha_max(&self) -> &[f64] {
        &self.alpha_max
    }
    fn with_node<R>(&self, node: usize, _x: &[f64], f: impl FnOnce(&AffineEval, &UncertaintyBoundsEval, &[f64]) -> R) -> R {
        f(&self.nominal[node], &self.bounds[node], &self.alpha[node])
    }
}

/// Evaluates the model at every node on every step. Only the CFL bound is
/// precomputed.
pub struct LiveModel<'a, M> {
    model: &'a M,
    grid: Grid,
    alpha_max: Vec<f64>,
}

impl<'a, M: UncertainModel> LiveModel<'a, M> {
    pub fn new(model: &'a M, grid: &Grid) -> Result<Self> {
        check_dims(model, grid)?;
        let alpha: Vec<Vec<f64>> = (0..grid.len())
            .into_par_iter()
            .map(|k| {
                let x = grid.coord(k);
                let (n, b) = model.evaluate(&x);
                b.check_origin(&x)?;
                Ok(dissipation_bounds(&n, &b, model.control_box()))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            model,
            grid: grid.clone(),
            alpha_max: column_max(&alpha, grid.ndim()),
        })
    }
}

impl<M: UncertainModel> NodeModel for LiveModel<'_, M> {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn controls(&self) -> &ControlBox {
        self.model.control_box()
    }
    fn alpha_max(&self) -> &[f64] {
        &self.alpha_max
    }
    fn with_node<R>(&self, _node: usize, x: &[f64], f: impl FnOnce(&AffineEval, &UncertaintyBoundsEval, &[f64]) -> R) -> R {
        let (n, b) = self.model.evaluate(x);
        let a = dissipation_bounds(&n, &b, self.model.control_box());
        f(&n, &b, &a)
    }
}

fn check_dims(model: &impl UncertainModel, grid: &Grid) -> Result<()> {
    if model.state_dim() != grid.ndim() {
        return Err(Error::Dimension(format!(
            "model state dimension {} does not match grid dimension {}",
            model.state_dim(),
            grid.ndim()
        )));
    }
    Ok(())
}

fn column_max(rows: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; n];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o = o.max(*v);
        }
    }
    out
}

/// Largest stable step `cfl / Σ_i (α_i,max / Δx_i)`; infinite for a static
/// model.
pub fn max_stable_dt(model: &impl NodeModel, cfl: f64) -> f64 {
    let rate: f64 = model
        .alpha_max()
        .iter()
        .zip(model.grid().spacing())
        .map(|(a, h)| a / h)
        .sum();
    if rate > 0.0 {
        cfl / rate
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub field: ScalarField,
    /// Backward time elapsed since the terminal condition.
    pub tau: f64,
}

impl ValueField {
    pub fn terminal(l: &ScalarField) -> Self {
        Self {
            field: l.clone(),
            tau: 0.0,
        }
    }
}

/// One explicit step of length `dt`. Fails if `dt` exceeds the CFL-number-one
/// limit of the model on this grid.
pub fn hji_step(v: &ValueField, model: &impl NodeModel, l: &ScalarField, dt: f64) -> Result<ValueField> {
    let grid = v.field.grid();
    if grid != model.grid() || grid != l.grid() {
        return Err(Error::Dimension("value, model and failure field must share a grid".into()));
    }
    let limit = max_stable_dt(model, 1.0);
    if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, limit });
    }
    let values = v.field.values();
    let lv = l.values();
    // Along a trajectory that stays on the domain V never drops below the
    // smallest margin there. Anything lower comes from extrapolating the
    // edge differences and is cut off.
    let floor = l.min();
    let n = grid.ndim();
    let controls = model.controls();
    const CHUNK: usize = 1024;
    let mut next = vec![0.0; grid.len()];
    next.par_chunks_mut(CHUNK).enumerate().try_for_each(|(c, out)| {
        let mut x = vec![0.0; n];
        let mut left = vec![0.0; n];
        let mut right = vec![0.0; n];
        let mut p = vec![0.0; n];
        for (off, slot) in out.iter_mut().enumerate() {
            let k = c * CHUNK + off;
            grid.coord_into(k, &mut x);
            grid::one_sided_at(grid, values, k, &mut left, &mut right);
            for d in 0..n {
                p[d] = 0.5 * (left[d] + right[d]);
            }
            let rate = model.with_node(k, &x, |nom, b, alpha| {
                let h = hamiltonian(&p, nom, b, controls);
                let diss: f64 = (0..n).map(|d| alpha[d] * 0.5 * (right[d] - left[d])).sum();
                h + diss
            });
            let raw = values[k] + dt * rate;
            if !raw.is_finite() {
                return Err(Error::NonFinite {
                    node: k,
                    coords: x.clone(),
                });
            }
            *slot = raw.min(lv[k]).max(floor);
        }
        Ok(())
    })?;
    Ok(ValueField {
        field: ScalarField::new(grid.clone(), next)?,
        tau: v.tau + dt,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    /// Seconds; `f64::INFINITY` iterates to convergence.
    pub horizon: f64,
    pub cfl: f64,
    /// Threshold on `max |ΔV| / Δt` for infinite horizons.
    pub convergence_tol: f64,
    pub max_steps: usize,
    pub snapshot_times: Vec<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            cfl: 0.5,
            convergence_tol: 1e-3,
            max_steps: 100_000,
            snapshot_times: Vec::new(),
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::param("cfl", format!("{} must lie in (0, 1]", self.cfl)));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::param("horizon", format!("{} must be non-negative", self.horizon)));
        }
        if self.horizon.is_infinite() && !(self.convergence_tol > 0.0) {
            return Err(Error::param(
                "convergence_tol",
                "must be positive for an infinite horizon",
            ));
        }
        if self.snapshot_times.iter().any(|t| !(*t >= 0.0)) {
            return Err(Error::param("snapshot_times", "times must be non-negative"));
        }
        Ok(())
    }

    /// Snapshots every `interval` seconds up to a finite horizon, both ends
    /// included.
    pub fn with_uniform_snapshots(mut self, interval: f64) -> Self {
        if self.horizon.is_finite() && interval > 0.0 {
            let n = (self.horizon / interval).round() as usize;
            self.snapshot_times = (0..=n).map(|i| (i as f64 * interval).min(self.horizon)).collect();
        }
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub tau: f64,
    pub dt: f64,
    /// `max |ΔV| / Δt` over the step.
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub value: ValueField,
    /// Ordered by `tau`.
    pub snapshots: Vec<ValueField>,
    pub log: Vec<StepRecord>,
    /// Finite horizon: the horizon was reached. Infinite horizon: the
    /// residual dropped below the tolerance.
    pub converged: bool,
}

pub fn solve(l: &ScalarField, model: &impl NodeModel, config: &SolveConfig) -> Result<SolveResult> {
    config.validate()?;
    let mut snaps: Vec<f64> = config
        .snapshot_times
        .iter()
        .copied()
        .filter(|t| *t <= config.horizon)
        .collect();
    snaps.sort_by(f64::total_cmp);
    snaps.dedup();

    let range = (l.max() - l.min()).max(l.max().abs()).max(1e-12);
    let limit = 10.0 * range;
    let dt_max = max_stable_dt(model, config.cfl);
    let mut v = ValueField::terminal(l);
    let mut snapshots = Vec::new();
    let mut next_snap = 0;
    while next_snap < snaps.len() && snaps[next_snap] <= 0.0 {
        snapshots.push(v.clone());
        next_snap += 1;
    }
    let mut log = Vec::new();
    let eps = 1e-12 * config.horizon.min(1e6).max(1.0);
    let mut converged = config.horizon == 0.0;

    while !converged && log.len() < config.max_steps {
        let target = snaps.get(next_snap).copied().unwrap_or(config.horizon).min(config.horizon);
        let mut dt = dt_max.min(target - v.tau);
        if !dt.is_finite() {
            // Static model with an infinite horizon: nothing ever changes.
            dt = 1.0;
        }
        let next = hji_step(&v, model, l, dt)?;
        let residual = next
            .field
            .values()
            .iter()
            .zip(v.field.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / dt;
        let max_abs = next.field.values().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if max_abs > limit {
            return Err(Error::Divergence {
                tau: next.tau,
                max_abs,
                limit,
            });
        }
        log.push(StepRecord {
            tau: next.tau,
            dt,
            residual,
        });
        v = next;
        if (v.tau - target).abs() <= eps {
            v.tau = target;
        }
        while next_snap < snaps.len() && snaps[next_snap] <= v.tau + eps {
            snapshots.push(v.clone());
            next_snap += 1;
        }
        converged = if config.horizon.is_infinite() {
            residual < config.convergence_tol
        } else {
            v.tau >= config.horizon
        };
    }
    Ok(SolveResult {
        value: v,
        snapshots,
        log,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSet {
    pub mask: Vec<bool>,
    pub volume_fraction: f64,
}

impl SafeSet {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Nodes with `V > level`.
pub fn safe_set(v: &ScalarField, level: f64) -> SafeSet {
    let mask: Vec<bool> = v.values().iter().map(|x| *x > level).collect();
    let count = mask.iter().filter(|m| **m).count();
    SafeSet {
        volume_fraction: count as f64 / mask.len() as f64,
        mask,
    }
}

//! Safety controllers extracted from a solved value function, and the
//! least-restrictive filter around a nominal policy.

use crate::dynamics::UncertainModel;
use crate::error::{Error, Result};
use crate::grid::{central_gradients, interpolate_many, Grid, ScalarField};
use crate::hamiltonian::optimal_control;
use crate::solver::{SolveResult, ValueField};

/// A value slice with its node-wise central-difference gradient.
#[derive(Debug, Clone)]
struct Slice {
    tau: f64,
    value: ScalarField,
    gradient: Vec<ScalarField>,
}

impl Slice {
    fn new(v: &ValueField) -> Self {
        Self {
            tau: v.tau,
            gradient: central_gradients(&v.field),
            value: v.field.clone(),
        }
    }
}

/// `u*(x) = argmax_u min_d ⟨∇V(x), f̂(x, u, d)⟩` with the model evaluated live
/// at `x` and `∇V` interpolated from node gradients.
#[derive(Debug, Clone)]
pub struct SafetyController<M> {
    model: M,
    /// Ascending in `tau`.
    slices: Vec<Slice>,
    /// `None` for a stationary (converged) controller.
    horizon: Option<f64>,
}

impl<M: UncertainModel> SafetyController<M> {
    /// Stationary controller from a single field, typically a converged one.
    pub fn stationary(value: &ValueField, model: M) -> Result<Self> {
        check_model(&model, value.field.grid())?;
        Ok(Self {
            model,
            slices: vec![Slice::new(value)],
            horizon: None,
        })
    }

    /// Time-varying controller for a finite-horizon solve: at clock `t` it
    /// uses the stored slice whose `tau` is nearest the remaining time
    /// `horizon - t`. Snapshots plus the final field are the candidates.
    pub fn time_varying(result: &SolveResult, horizon: f64, model: M) -> Result<Self> {
        check_model(&model, result.value.field.grid())?;
        let mut slices: Vec<Slice> = result.snapshots.iter().map(Slice::new).collect();
        if slices.last().map_or(true, |s| s.tau < result.value.tau) {
            slices.push(Slice::new(&result.value));
        }
        Ok(Self {
            model,
            slices,
            horizon: Some(horizon),
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn grid(&self) -> &Grid {
        self.slices[0].value.grid()
    }

    fn slice_at(&self, t: f64) -> &Slice {
        let Some(horizon) = self.horizon else {
            return self.slices.last().unwrap();
        };
        let remaining = (horizon - t).max(0.0);
        self.slices
            .iter()
            .min_by(|a, b| (a.tau - remaining).abs().total_cmp(&(b.tau - remaining).abs()))
            .unwrap()
    }

    fn locate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let grid = self.grid();
        if x.len() != grid.ndim() {
            return Err(Error::Dimension(format!("state has {} entries, grid {}", x.len(), grid.ndim())));
        }
        let mut y = x.to_vec();
        grid.wrap(&mut y);
        if let Some(dim) = (0..grid.ndim()).find(|&d| !grid.periodic()[d] && !(y[d] >= grid.lo()[d] && y[d] <= grid.hi()[d])) {
            return Err(Error::OutOfBounds { point: x.to_vec(), dim });
        }
        Ok(y)
    }

    /// Interpolated value at clock `t`.
    pub fn value(&self, t: f64, x: &[f64]) -> Result<f64> {
        let y = self.locate(x)?;
        self.slice_at(t).value.interpolate(&y)
    }

    pub fn gradient(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.locate(x)?;
        interpolate_many(&self.slice_at(t).gradient, &y)
    }

    pub fn safety_control(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.gradient(t, x)?;
        let (nom, bounds) = self.model.evaluate(x);
        Ok(optimal_control(&p, &nom.f2, &bounds.d2_lo, &bounds.d2_hi, self.model.control_box()))
    }

    /// One grid cell of value change: `max_i Δx_i` times the median gradient
    /// magnitude along that axis, over the final slice.
    pub fn default_epsilon(&self) -> f64 {
        let slice = self.slices.last().unwrap();
        let grid = slice.value.grid();
        (0..grid.ndim())
            .map(|d| {
                let mut mags: Vec<f64> = slice.gradient[d].values().iter().map(|g| g.abs()).collect();
                mags.sort_by(f64::total_cmp);
                grid.spacing()[d] * mags[mags.len() / 2]
            })
            .fold(0.0, f64::max)
    }
}

fn check_model(model: &impl UncertainModel, grid: &Grid) -> Result<()> {
    if model.state_dim() != grid.ndim() {
        return Err(Error::Dimension("model and value field dimensions differ".into()));
    }
    Ok(())
}

/// Applies `nominal` while the value stays above `epsilon`, and the safety
/// controller otherwise.
pub struct FilterPolicy<'a, M> {
    pub safety: &'a SafetyController<M>,
    pub nominal: Box<dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'a>,
    pub epsilon: f64,
}

impl<'a, M: UncertainModel> FilterPolicy<'a, M> {
    pub fn new(
        safety: &'a SafetyController<M>,
        nominal: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'a,
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::param("epsilon", format!("{epsilon} must be non-negative")));
        }
        Ok(Self {
            safety,
            nominal: Box::new(nominal),
            epsilon,
        })
    }

    /// `(u, intervened)`.
    pub fn filtered_control(&self, t: f64, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let v = self.safety.value(t, x)?;
        if v > self.epsilon {
            Ok(((self.nominal)(t, x), false))
        } else {
            Ok((self.safety.safety_control(t, x)?, true))
        }
    }
}

//! Control-affine dynamics `f(x, u) = f1(x) + f2(x) u`, the analytic systems
//! used in the experiments, and the uncertain-model abstraction consumed by
//! the Hamiltonian.

use crate::error::{Error, Result};

/// Axis-aligned admissible control set containing the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ControlBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::param("control_box", "lo and hi must have equal, nonzero length"));
        }
        for (j, (l, h)) in lo.iter().zip(&hi).enumerate() {
            if !(*l <= 0.0 && 0.0 <= *h) {
                return Err(Error::param(
                    "control_box",
                    format!("control {j}: [{l}, {h}] does not contain 0"),
                ));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn symmetric(half: &[f64]) -> Result<Self> {
        Self::new(half.iter().map(|h| -h).collect(), half.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// `max(|lo_j|, |hi_j|)`.
    pub fn max_abs(&self, j: usize) -> f64 {
        self.lo[j].abs().max(self.hi[j].abs())
    }

    pub fn contains(&self, u: &[f64]) -> bool {
        u.len() == self.dim() && u.iter().enumerate().all(|(j, v)| self.lo[j] <= *v && *v <= self.hi[j])
    }
}

/// `f1(x)` and `f2(x)` at one state; `f2` is row-major `nx × nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineEval {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub nu: usize,
}

impl AffineEval {
    pub fn new(f1: Vec<f64>, f2: Vec<f64>, nu: usize) -> Self {
        debug_assert_eq!(f1.len() * nu, f2.len());
        Self { f1, f2, nu }
    }

    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self::new(vec![0.0; nx], vec![0.0; nx * nu], nu)
    }

    pub fn nx(&self) -> usize {
        self.f1.len()
    }

    #[inline]
    pub fn f2(&self, i: usize, j: usize) -> f64 {
        self.f2[i * self.nu + j]
    }

    /// `f1 + f2 u`.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        (0..self.nx())
            .map(|i| self.f1[i] + (0..self.nu).map(|j| self.f2(i, j) * u[j]).sum::<f64>())
            .collect()
    }
}

/// Interval bounds on the additive model errors: `d1 ∈ [d1_lo, d1_hi]`
/// componentwise and `d2 ∈ [d2_lo, d2_hi]` entrywise (row-major `nx × nu`).
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyBoundsEval {
    pub d1_lo: Vec<f64>,
    pub d1_hi: Vec<f64>,
    pub d2_lo: Vec<f64>,
    pub d2_hi: Vec<f64>,
    pub nu: usize,
}

impl UncertaintyBoundsEval {
    pub fn zeros(nx: usize, nu: usize) -> Self {
        Self {
            d1_lo: vec![0.0; nx],
            d1_hi: vec![0.0; nx],
            d2_lo: vec![0.0; nx * nu],
            d2_hi: vec![0.0; nx * nu],
            nu,
        }
    }

    /// Symmetric bounds `[-r, r]`.
    pub fn symmetric(d1_radius: &[f64], d2_radius: &[f64], nu: usize) -> Self {
        Self {
            d1_lo: d1_radius.iter().map(|r| -r).collect(),
            d1_hi: d1_radius.to_vec(),
            d2_lo: d2_radius.iter().map(|r| -r).collect(),
            d2_hi: d2_radius.to_vec(),
            nu,
        }
    }

    pub fn nx(&self) -> usize {
        self.d1_lo.len()
    }

    /// Checks that both hypercubes contain the origin.
    pub fn check_origin(&self, x: &[f64]) -> Result<()> {
        let bad = |lo: &[f64], hi: &[f64]| {
            lo.iter()
                .zip(hi)
                .position(|(l, h)| !(*l <= 0.0 && 0.0 <= *h))
        };
        if let Some(i) = bad(&self.d1_lo, &self.d1_hi) {
            return Err(Error::BoundsExcludeOrigin {
                state: x.to_vec(),
                detail: format!("d1[{i}] = [{}, {}]", self.d1_lo[i], self.d1_hi[i]),
            });
        }
        if let Some(e) = bad(&self.d2_lo, &self.d2_hi) {
            return Err(Error::BoundsExcludeOrigin {
                state: x.to_vec(),
                detail: format!(
                    "d2[{}, {}] = [{}, {}]",
                    e / self.nu,
                    e % self.nu,
                    self.d2_lo[e],
                    self.d2_hi[e]
                ),
            });
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.d1_lo
            .iter()
            .chain(&self.d1_hi)
            .chain(&self.d2_lo)
            .chain(&self.d2_hi)
            .all(|v| *v == 0.0)
    }
}

/// Deterministic control-affine system.
pub trait ControlAffine: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> AffineEval;

    fn xdot(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.eval(x).apply(u)
    }
}

impl<T: ControlAffine + ?Sized> ControlAffine for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn eval(&self, x: &[f64]) -> AffineEval {
        (**self).eval(x)
    }
    fn xdot(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).xdot(x, u)
    }
}

impl<T: ControlAffine + ?Sized> ControlAffine for Box<T> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn eval(&self, x: &[f64]) -> AffineEval {
        (**self).eval(x)
    }
    fn xdot(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (**self).xdot(x, u)
    }
}

/// Nominal dynamics plus hypercube model-error bounds: the uncertain model
/// `f̄1 + d1 + (f̄2 + d2) u`.
pub trait UncertainModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn control_box(&self) -> &ControlBox;
    fn nominal(&self, x: &[f64]) -> AffineEval;
    fn bounds(&self, x: &[f64]) -> UncertaintyBoundsEval;

    fn evaluate(&self, x: &[f64]) -> (AffineEval, UncertaintyBoundsEval) {
        (self.nominal(x), self.bounds(x))
    }
}

impl<T: UncertainModel + ?Sized> UncertainModel for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn control_box(&self) -> &ControlBox {
        (**self).control_box()
    }
    fn nominal(&self, x: &[f64]) -> AffineEval {
        (**self).nominal(x)
    }
    fn bounds(&self, x: &[f64]) -> UncertaintyBoundsEval {
        (**self).bounds(x)
    }
    fn evaluate(&self, x: &[f64]) -> (AffineEval, UncertaintyBoundsEval) {
        (**self).evaluate(x)
    }
}

impl<T: UncertainModel + ?Sized> UncertainModel for Box<T> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn control_box(&self) -> &ControlBox {
        (**self).control_box()
    }
    fn nominal(&self, x: &[f64]) -> AffineEval {
        (**self).nominal(x)
    }
    fn bounds(&self, x: &[f64]) -> UncertaintyBoundsEval {
        (**self).bounds(x)
    }
    fn evaluate(&self, x: &[f64]) -> (AffineEval, UncertaintyBoundsEval) {
        (**self).evaluate(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub friction: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            friction: 0.1,
        }
    }
}

/// Inverted pendulum about the upright, state `[θ, θ̇]`, torque input `u`:
/// `θ̈ = (-b θ̇ + ½ m g l sin θ - u) / (m l² / 3)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pendulum {
    params: PendulumParams,
    inertia: f64,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        if !(params.mass > 0.0) {
            return Err(Error::param("mass", format!("{} must be positive", params.mass)));
        }
        if !(params.length > 0.0) {
            return Err(Error::param("length", format!("{} must be positive", params.length)));
        }
        if !(params.friction >= 0.0) {
            return Err(Error::param("friction", format!("{} must be non-negative", params.friction)));
        }
        let inertia = params.mass * params.length * params.length / 3.0;
        Ok(Self { params, inertia })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    /// `½ I θ̇² + ½ m g l cos θ`; conserved when `b = 0` and `u = 0`.
    pub fn energy(&self, x: &[f64]) -> f64 {
        let p = &self.params;
        0.5 * self.inertia * x[1] * x[1] + 0.5 * p.mass * p.gravity * p.length * x[0].cos()
    }

    fn gravity_torque(&self, theta: f64) -> f64 {
        let p = &self.params;
        0.5 * p.mass * p.gravity * p.length * theta.sin()
    }
}

impl ControlAffine for Pendulum {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> AffineEval {
        let accel = (-self.params.friction * x[1] + self.gravity_torque(x[0])) / self.inertia;
        AffineEval::new(vec![x[1], accel], vec![0.0, -1.0 / self.inertia], 1)
    }

    fn xdot(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let torque = -self.params.friction * x[1] + self.gravity_torque(x[0]) - u[0];
        vec![x[1], torque / self.inertia]
    }
}

/// Dubins car `[V cos θ, V sin θ, u]` with state `[p_x, p_y, θ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dubins3d {
    speed: f64,
}

impl Dubins3d {
    pub fn new(speed: f64) -> Result<Self> {
        if !(speed > 0.0) {
            return Err(Error::param("speed", format!("{speed} must be positive")));
        }
        Ok(Self { speed })
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }
}

impl ControlAffine for Dubins3d {
    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> AffineEval {
        let (s, c) = x[2].sin_cos();
        AffineEval::new(vec![self.speed * c, self.speed * s, 0.0], vec![0.0, 0.0, 1.0], 1)
    }
}

/// Dubins car whose turn-rate authority is scaled by `gain` and which drifts
/// additively by `drift`; the simulated stand-in for a vehicle whose nominal
/// model is inaccurate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedDubins3d {
    speed: f64,
    gain: f64,
    drift: [f64; 3],
}

impl PerturbedDubins3d {
    pub fn new(speed: f64, gain: f64, drift: [f64; 3]) -> Result<Self> {
        if !(speed > 0.0) {
            return Err(Error::param("speed", format!("{speed} must be positive")));
        }
        if !(gain > 0.0) {
            return Err(Error::param("gain", format!("{gain} must be positive")));
        }
        Ok(Self { speed, gain, drift })
    }
}

impl ControlAffine for PerturbedDubins3d {
    fn state_dim(&self) -> usize {
        3
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn eval(&self, x: &[f64]) -> AffineEval {
        let (s, c) = x[2].sin_cos();
        AffineEval::new(
            vec![
                self.speed * c + self.drift[0],
                self.speed * s + self.drift[1],
                self.drift[2],
            ],
            vec![0.0, 0.0, self.gain],
            1,
        )
    }
}

/// Known dynamics viewed as an uncertain model with zero error bounds.
#[derive(Debug, Clone)]
pub struct TruthAsUncertain<D> {
    truth: D,
    controls: ControlBox,
}

impl<D: ControlAffine> TruthAsUncertain<D> {
    pub fn new(truth: D, controls: ControlBox) -> Result<Self> {
        if controls.dim() != truth.control_dim() {
            return Err(Error::Dimension(format!(
                "control box has {} dimensions, system has {}",
                controls.dim(),
                truth.control_dim()
            )));
        }
        Ok(Self { truth, controls })
    }

    pub fn truth(&self) -> &D {
        &self.truth
    }
}

impl<D: ControlAffine> UncertainModel for TruthAsUncertain<D> {
    fn state_dim(&self) -> usize {
        self.truth.state_dim()
    }
    fn control_dim(&self) -> usize {
        self.truth.control_dim()
    }
    fn control_box(&self) -> &ControlBox {
        &self.controls
    }
    fn nominal(&self, x: &[f64]) -> AffineEval {
        self.truth.eval(x)
    }
    fn bounds(&self, _x: &[f64]) -> UncertaintyBoundsEval {
        UncertaintyBoundsEval::zeros(self.truth.state_dim(), self.truth.control_dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn pendulum() -> Pendulum {
        Pendulum::new(PendulumParams::default()).unwrap()
    }

    #[test]
    fn pendulum_examples() {
        let p = pendulum();
        let e = p.eval(&[0.0, 0.0]);
        assert_eq!(e.f1, vec![0.0, 0.0]);
        assert!((e.f2[0]).abs() < 1e-15 && (e.f2[1] + 3.0).abs() < 1e-12);

        let e = p.eval(&[PI / 2.0, 0.0]);
        assert!((e.f1[1] - 14.715).abs() < 1e-9);

        let e = p.eval(&[0.0, 1.0]);
        assert_eq!(e.f1[0], 1.0);
        assert!((e.f1[1] + 0.3).abs() < 1e-12);
    }

    #[test]
    fn pendulum_rejects_bad_params() {
        let bad = PendulumParams {
            mass: 0.0,
            ..Default::default()
        };
        assert!(Pendulum::new(bad).is_err());
        let bad = PendulumParams {
            length: -1.0,
            ..Default::default()
        };
        assert!(Pendulum::new(bad).is_err());
    }

    #[test]
    fn dubins_examples() {
        let d = Dubins3d::new(0.3).unwrap();
        let e = d.eval(&[0.0, 0.0, 0.0]);
        assert_eq!(e.f1, vec![0.3, 0.0, 0.0]);
        assert_eq!(e.f2, vec![0.0, 0.0, 1.0]);
        let e = d.eval(&[1.0, -1.0, PI / 2.0]);
        assert!(e.f1[0].abs() < 1e-15 && (e.f1[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn perturbed_dubins_examples() {
        let d = Dubins3d::new(0.3).unwrap();
        let same = PerturbedDubins3d::new(0.3, 1.0, [0.0; 3]).unwrap();
        for th in [-3.0, -0.5, 0.0, 1.2, 3.1] {
            assert_eq!(d.eval(&[0.2, 0.1, th]), same.eval(&[0.2, 0.1, th]));
        }
        let g = PerturbedDubins3d::new(0.3, 0.6, [0.0; 3]).unwrap();
        assert_eq!(g.eval(&[0.0; 3]).f2, vec![0.0, 0.0, 0.6]);
        let drift = PerturbedDubins3d::new(0.3, 1.0, [0.0, 0.0, 0.2]).unwrap();
        assert_eq!(drift.xdot(&[0.0; 3], &[0.0]), vec![0.3, 0.0, 0.2]);
        assert!(PerturbedDubins3d::new(0.3, 0.0, [0.0; 3]).is_err());
    }

    #[test]
    fn truth_wrapper_has_zero_bounds() {
        let cb = ControlBox::symmetric(&[2.0]).unwrap();
        let m = TruthAsUncertain::new(pendulum(), cb).unwrap();
        let x = [0.3, -1.2];
        assert!(m.bounds(&x).is_zero());
        assert_eq!(m.nominal(&x), pendulum().eval(&x));
    }

    #[test]
    fn control_box_must_contain_origin() {
        assert!(ControlBox::new(vec![0.5], vec![1.0]).is_err());
        assert!(ControlBox::new(vec![-1.0, 0.0], vec![1.0, 0.0]).is_ok());
    }

    #[test]
    fn origin_check_is_a_hard_error() {
        let mut b = UncertaintyBoundsEval::zeros(2, 1);
        b.d2_lo[1] = 0.1;
        assert!(matches!(
            b.check_origin(&[0.0, 0.0]),
            Err(Error::BoundsExcludeOrigin { .. })
        ));
    }

    proptest! {
        #[test]
        fn pendulum_is_control_affine(th in -4.0f64..4.0, om in -7.0f64..7.0, u in -3.0f64..3.0) {
            let p = pendulum();
            let direct = p.xdot(&[th, om], &[u]);
            let affine = p.eval(&[th, om]).apply(&[u]);
            for i in 0..2 {
                prop_assert!((direct[i] - affine[i]).abs() <= 1e-12 * (1.0 + direct[i].abs()));
            }
        }

        #[test]
        fn dubins_speed_is_constant(th in -10.0f64..10.0) {
            let e = Dubins3d::new(0.3).unwrap().eval(&[0.0, 0.0, th]);
            prop_assert!((e.f1[0].hypot(e.f1[1]) - 0.3).abs() < 1e-14);
        }
    }
}

//! Closed-loop rollouts with RK4 and zero-order-hold controls.

use crate::dynamics::ControlAffine;
use crate::error::Result;

/// One classical Runge-Kutta step with the control held constant.
pub fn rk4_step(system: &impl ControlAffine, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
    let axpy = |a: &[f64], k: &[f64], s: f64| -> Vec<f64> { a.iter().zip(k).map(|(a, k)| a + s * k).collect() };
    let k1 = system.xdot(x, u);
    let k2 = system.xdot(&axpy(x, &k1, 0.5 * dt), u);
    let k3 = system.xdot(&axpy(x, &k2, 0.5 * dt), u);
    let k4 = system.xdot(&axpy(x, &k3, dt), u);
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `states.len()` entries, spaced by the rollout step.
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Control applied on `[times[k], times[k + 1])`; one fewer than states.
    pub controls: Vec<Vec<f64>>,
    pub intervened: Vec<bool>,
    /// Per state: inside the failure set.
    pub failed: Vec<bool>,
    pub first_failure: Option<f64>,
    /// Set when the controller refused a state and the rollout stopped early.
    pub truncated: Option<String>,
}

impl Trajectory {
    pub fn exited_failure(&self) -> bool {
        self.first_failure.is_some()
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectories hold at least the initial state")
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub dt: f64,
    pub steps: usize,
    pub stop_at_failure: bool,
}

/// Rolls `system` forward from `x0` under `controller(t, x) -> (u,
/// intervened)`. Failure is checked at every state; the run continues past a
/// failure unless `stop_at_failure` is set. A controller error truncates the
/// trajectory and records the reason.
pub fn rollout<S, C, F>(system: &S, mut controller: C, x0: &[f64], opts: RolloutOptions, failure: F) -> Trajectory
where
    S: ControlAffine,
    C: FnMut(f64, &[f64]) -> Result<(Vec<f64>, bool)>,
    F: Fn(&[f64]) -> bool,
{
    assert!(opts.dt > 0.0, "rollout step must be positive");
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        controls: Vec::with_capacity(opts.steps),
        intervened: Vec::with_capacity(opts.steps),
        failed: vec![failure(x0)],
        first_failure: failure(x0).then_some(0.0),
        truncated: None,
    };
    for k in 0..opts.steps {
        if opts.stop_at_failure && traj.first_failure.is_some() {
            break;
        }
        let t = k as f64 * opts.dt;
        let x = traj.states.last().unwrap().clone();
        let (u, flag) = match controller(t, &x) {
            Ok(out) => out,
            Err(e) => {
                traj.truncated = Some(e.to_string());
                break;
            }
        };
        let next = rk4_step(system, &x, &u, opts.dt);
        let t_next = (k + 1) as f64 * opts.dt;
        let bad = failure(&next);
        if bad && traj.first_failure.is_none() {
            traj.first_failure = Some(t_next);
        }
        traj.controls.push(u);
        traj.intervened.push(flag);
        traj.states.push(next);
        traj.times.push(t_next);
        traj.failed.push(bad);
    }
    traj
}

/// Maximum relative drift of `invariant` along an uncontrolled RK4 run of
/// `duration` seconds.
pub fn integrate_error(
    system: &impl ControlAffine,
    invariant: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    dt: f64,
    duration: f64,
) -> f64 {
    let steps = (duration / dt).round() as usize;
    let u = vec![0.0; system.control_dim()];
    let e0 = invariant(x0);
    let scale = e0.abs().max(f64::MIN_POSITIVE);
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for _ in 0..steps {
        x = rk4_step(system, &x, &u, dt);
        worst = worst.max((invariant(&x) - e0).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{AffineEval, Dubins3d, Pendulum, PendulumParams};

    struct Still;

    impl ControlAffine for Still {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn eval(&self, _x: &[f64]) -> AffineEval {
            AffineEval::zeros(2, 1)
        }
    }

    fn opts(dt: f64, steps: usize) -> RolloutOptions {
        RolloutOptions {
            dt,
            steps,
            stop_at_failure: false,
        }
    }

    #[test]
    fn zero_dynamics_hold_state() {
        let t = rollout(&Still, |_, _| Ok((vec![1.0], false)), &[0.3, -0.2], opts(0.1, 20), |_| false);
        assert!(t.states.iter().all(|s| s == &vec![0.3, -0.2]));
        assert_eq!(t.states.len(), 21);
        assert_eq!(t.controls.len(), 20);
    }

    #[test]
    fn dubins_straight_line() {
        let d = Dubins3d::new(0.3).unwrap();
        let t = rollout(&d, |_, _| Ok((vec![0.0], false)), &[0.0, 0.0, 0.0], opts(0.1, 10), |_| false);
        let x = t.final_state();
        assert!((x[0] - 0.3).abs() < 1e-12);
        assert!(x[1].abs() < 1e-15);
        assert!((t.times[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn failure_is_flagged_not_fatal() {
        let d = Dubins3d::new(1.0).unwrap();
        let t = rollout(&d, |_, _| Ok((vec![0.0], false)), &[0.0, 0.0, 0.0], opts(0.1, 20), |x| x[0] > 1.0);
        let tf = t.first_failure.unwrap();
        assert!((tf - 1.1).abs() < 1e-9);
        assert_eq!(t.states.len(), 21);

        let stop = RolloutOptions {
            stop_at_failure: true,
            ..opts(0.1, 20)
        };
        let t = rollout(&d, |_, _| Ok((vec![0.0], false)), &[0.0, 0.0, 0.0], stop, |x| x[0] > 1.0);
        assert_eq!(t.states.len(), 12);
    }

    #[test]
    fn controller_error_truncates() {
        let d = Dubins3d::new(1.0).unwrap();
        let t = rollout(
            &d,
            |t, _| {
                if t > 0.25 {
                    Err(crate::Error::Infeasible("outside".into()))
                } else {
                    Ok((vec![0.0], false))
                }
            },
            &[0.0, 0.0, 0.0],
            opts(0.1, 20),
            |_| false,
        );
        assert_eq!(t.states.len(), 4);
        assert!(t.truncated.is_some());
    }

    fn undamped() -> Pendulum {
        Pendulum::new(PendulumParams {
            friction: 0.0,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn rk4_conserves_energy() {
        let p = undamped();
        let drift = integrate_error(&p, |x| p.energy(x), &[0.5, 0.0], 1e-3, 10.0);
        assert!(drift < 1e-6, "drift {drift}");
    }

    #[test]
    fn rk4_is_fourth_order() {
        let p = undamped();
        let x0 = [0.5, 0.0];
        let e = |x: &[f64]| p.energy(x);
        let coarse = integrate_error(&p, e, &x0, 0.02, 10.0);
        let fine = integrate_error(&p, e, &x0, 0.01, 10.0);
        let order = (coarse / fine).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn friction_dissipates() {
        let p = Pendulum::new(PendulumParams::default()).unwrap();
        let mut x = vec![2.0, 1.0];
        let mut e = p.energy(&x);
        for _ in 0..2000 {
            x = rk4_step(&p, &x, &[0.0], 1e-3);
            let e2 = p.energy(&x);
            assert!(e2 <= e + 1e-12);
            e = e2;
        }
    }
}

//! The pendulum safe-set study with its baselines, the training-size
//! ablation, closed-loop invariance trials, and the Dubins filtering demo.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::controller::{FilterPolicy, SafetyController};
use crate::dynamics::{
    ControlAffine, ControlBox, Dubins3d, Pendulum, PendulumParams, PerturbedDubins3d, TruthAsUncertain,
    UncertainModel,
};
use crate::ensemble::{
    conformal::empirical_coverage, conformal_bounds, generate_dataset, r_squared, tabulate_model, train_ensemble,
    ConformalBound, ConformalModel, DataGenConfig, Dataset, Ensemble, MemberReport, SpreadModel, Split, TrainConfig,
};
use crate::error::{Error, Result};
use crate::grid::{box_signed_distance, slab_signed_distance, Grid, ScalarField};
use crate::hamiltonian::{partial_game_bounds, PartialGame};
use crate::sim::{rollout, RolloutOptions, Trajectory};
use crate::solver::{safe_set, solve, ModelTable, SafeSet, SolveConfig, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GroundTruth,
    Ours,
    MeanDynamics,
    Conformal,
    PartialGame,
}

impl Method {
    pub const LEARNED: [Method; 4] = [Method::Ours, Method::MeanDynamics, Method::Conformal, Method::PartialGame];

    pub fn name(self) -> &'static str {
        match self {
            Method::GroundTruth => "ground_truth",
            Method::Ours => "ours",
            Method::MeanDynamics => "mean_dynamics",
            Method::Conformal => "conformal",
            Method::PartialGame => "partial_game",
        }
    }
}

/// Node-count comparison of a method's safe set against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeSetReport {
    pub method: Method,
    pub seed: u64,
    pub train_rows: usize,
    pub volume_fraction: f64,
    /// `|method ∩ truth| / |truth|`.
    pub recovered: f64,
    /// Fraction of the method's safe nodes that are outside truth together
    /// with their whole 3^n neighborhood.
    pub violation: f64,
    pub fingerprint: String,
}

/// Nodes of `set` that are outside `truth` along with every neighbor.
pub fn containment_violations(grid: &Grid, set: &SafeSet, truth: &SafeSet) -> usize {
    let n = grid.ndim();
    let offsets: Vec<Vec<isize>> = (0..3usize.pow(n as u32))
        .map(|mut c| {
            (0..n)
                .map(|_| {
                    let o = (c % 3) as isize - 1;
                    c /= 3;
                    o
                })
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; n];
    let mut nb = vec![0usize; n];
    (0..grid.len())
        .filter(|&k| {
            if !set.mask[k] || truth.mask[k] {
                return false;
            }
            grid.multi_index(k, &mut idx);
            !offsets.iter().any(|off| {
                for d in 0..n {
                    let i = idx[d] as isize + off[d];
                    let c = grid.counts()[d] as isize;
                    nb[d] = if grid.periodic()[d] {
                        i.rem_euclid(c) as usize
                    } else if i < 0 || i >= c {
                        return false;
                    } else {
                        i as usize
                    };
                }
                truth.mask[grid.flat_index(&nb)]
            })
        })
        .count()
}

pub fn compare(grid: &Grid, set: &SafeSet, truth: &SafeSet) -> (f64, f64) {
    let truth_count = truth.count();
    let inter = set.mask.iter().zip(&truth.mask).filter(|(a, b)| **a && **b).count();
    let recovered = if truth_count > 0 { inter as f64 / truth_count as f64 } else { 0.0 };
    let own = set.count();
    let violation = if own > 0 {
        containment_violations(grid, set, truth) as f64 / own as f64
    } else {
        0.0
    };
    (recovered, violation)
}

/// Whether `inner ⊆ outer` up to the 3^n-neighborhood tolerance.
pub fn nested(grid: &Grid, inner: &SafeSet, outer: &SafeSet) -> bool {
    containment_violations(grid, inner, outer) == 0
}

/// Row-sampling settings for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSampling {
    /// Steps per random-control trajectory; `1` gives i.i.d. states.
    pub steps: usize,
    pub dt: f64,
    pub init_lo: Vec<f64>,
    pub init_hi: Vec<f64>,
}

/// Collects exactly `rows` samples from random-control rollouts, stopping a
/// trajectory when it leaves `valid`.
pub fn sample_rows(
    truth: &impl ControlAffine,
    controls: &ControlBox,
    sampling: &RowSampling,
    valid: &Grid,
    rows: usize,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let cfg = DataGenConfig {
        n_trajectories: rows.div_ceil(sampling.steps.max(1)),
        steps: sampling.steps.max(1),
        dt: sampling.dt,
        init_lo: sampling.init_lo.clone(),
        init_hi: sampling.init_hi.clone(),
        valid_lo: valid.lo().to_vec(),
        valid_hi: valid.hi().to_vec(),
        periodic: valid.periodic().to_vec(),
    };
    let mut out: Option<Dataset> = None;
    let mut round = 0u64;
    // Truncated trajectories can fall short; top up with fresh batches.
    while out.as_ref().map_or(0, Dataset::len) < rows {
        let batch = generate_dataset(truth, controls, &cfg, seed.wrapping_add(round.wrapping_mul(0x51_7CC1_B727_220A)), split)?;
        if batch.is_empty() && round > 16 {
            return Err(Error::Infeasible("row sampling produces no rows inside the domain".into()));
        }
        out = Some(match out {
            None => batch,
            Some(prev) => concat(&prev, &batch),
        });
        round += 1;
    }
    Ok(out.unwrap().head(rows))
}

fn concat(a: &Dataset, b: &Dataset) -> Dataset {
    use ndarray::concatenate;
    use ndarray::Axis;
    Dataset {
        x: concatenate(Axis(0), &[a.x.view(), b.x.view()]).unwrap(),
        u: concatenate(Axis(0), &[a.u.view(), b.u.view()]).unwrap(),
        xdot: concatenate(Axis(0), &[a.xdot.view(), b.xdot.view()]).unwrap(),
        split: a.split,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendulumSetup {
    pub params: PendulumParams,
    pub torque_bound: f64,
    /// Failure set `|θ| > failure_angle`.
    pub failure_angle: f64,
    pub grid_lo: Vec<f64>,
    pub grid_hi: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub horizon: f64,
    pub cfl: f64,
    /// Snapshot spacing kept for the time-varying controller.
    pub snapshot_interval: f64,
    pub train_sampling: RowSampling,
    pub validation_rows: usize,
    pub calibration_sampling: RowSampling,
    pub calibration_rows: usize,
    pub ensemble: TrainConfig,
    pub alpha: f64,
    pub gamma: f64,
    pub coverage: f64,
}

impl Default for PendulumSetup {
    fn default() -> Self {
        Self {
            params: PendulumParams::default(),
            torque_bound: 2.0,
            failure_angle: 0.6 * PI,
            grid_lo: vec![-PI, -2.0 * PI],
            grid_hi: vec![PI, 2.0 * PI],
            grid_counts: vec![101, 101],
            horizon: 0.7,
            cfl: 0.5,
            snapshot_interval: 0.05,
            train_sampling: RowSampling {
                steps: 10,
                dt: 0.05,
                init_lo: vec![-0.4 * PI, -0.8 * PI],
                init_hi: vec![0.4 * PI, 0.8 * PI],
            },
            validation_rows: 200,
            calibration_sampling: RowSampling {
                steps: 1,
                dt: 0.05,
                init_lo: vec![-PI, -2.0 * PI],
                init_hi: vec![PI, 2.0 * PI],
            },
            calibration_rows: 5000,
            ensemble: TrainConfig::default(),
            alpha: 3.0,
            gamma: 3.0,
            coverage: 0.95,
        }
    }
}

impl PendulumSetup {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.grid_lo, &self.grid_hi, &self.grid_counts, &[false, false])
    }

    pub fn truth(&self) -> Result<Pendulum> {
        Pendulum::new(self.params)
    }

    pub fn controls(&self) -> Result<ControlBox> {
        ControlBox::symmetric(&[self.torque_bound])
    }

    pub fn failure_field(&self, grid: &Grid) -> Result<ScalarField> {
        slab_signed_distance(grid, 0, self.failure_angle)
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            horizon: self.horizon,
            cfl: self.cfl,
            ..Default::default()
        }
        .with_uniform_snapshots(self.snapshot_interval)
    }

    pub fn is_failure(&self, x: &[f64]) -> bool {
        x[0].abs() > self.failure_angle
    }

    /// Short hex digest of the setup, tying reports to their configuration.
    pub fn fingerprint(&self) -> String {
        fnv_hex(format!("{self:?}").as_bytes())
    }
}

/// 64-bit FNV-1a of `bytes`, as 16 hex digits.
pub fn fnv_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Solves the analytic pendulum with zero uncertainty.
pub fn pendulum_ground_truth(setup: &PendulumSetup) -> Result<SolveResult> {
    let grid = setup.grid()?;
    let model = TruthAsUncertain::new(setup.truth()?, setup.controls()?)?;
    let table = ModelTable::tabulate(&model, &grid)?;
    solve(&setup.failure_field(&grid)?, &table, &setup.solve_config())
}

/// Everything learned from one seed: data, ensemble, calibration.
pub struct LearnedPendulum {
    pub seed: u64,
    pub train: Dataset,
    pub ensemble: Arc<Ensemble>,
    pub reports: Vec<MemberReport>,
    pub conformal: ConformalBound,
}

pub fn learn_pendulum(setup: &PendulumSetup, train_rows: usize, seed: u64) -> Result<LearnedPendulum> {
    let truth = setup.truth()?;
    let controls = setup.controls()?;
    let grid = setup.grid()?;
    let base = seed.wrapping_mul(1_000_003);
    let train = sample_rows(&truth, &controls, &setup.train_sampling, &grid, train_rows, base + 1, Split::Train)?;
    let validation = sample_rows(
        &truth,
        &controls,
        &setup.train_sampling,
        &grid,
        setup.validation_rows,
        base + 2,
        Split::Validation,
    )?;
    let calibration = sample_rows(
        &truth,
        &controls,
        &setup.calibration_sampling,
        &grid,
        setup.calibration_rows,
        base + 3,
        Split::Calibration,
    )?;
    let cfg = TrainConfig {
        seed,
        ..setup.ensemble.clone()
    };
    let outcome = train_ensemble(&train, Some(&validation), &cfg).map_err(|e| match e {
        Error::TrainingDiverged { member, epoch, loss, lr } => Error::Infeasible(format!(
            "training diverged for seed {seed}: member {member}, epoch {epoch}, loss {loss}, lr {lr}"
        )),
        other => other,
    })?;
    let conformal = conformal_bounds(&outcome.ensemble, &calibration, setup.coverage)?;
    Ok(LearnedPendulum {
        seed,
        train,
        ensemble: Arc::new(outcome.ensemble),
        reports: outcome.reports,
        conformal,
    })
}

/// Spread-bound table for the learned model at multipliers `(α, γ)`.
pub fn spread_table(setup: &PendulumSetup, learned: &LearnedPendulum, alpha: f64, gamma: f64) -> Result<ModelTable> {
    let model = SpreadModel::new(learned.ensemble.clone(), setup.controls()?, alpha, gamma)?;
    tabulate_model(&model, &setup.grid()?)
}

/// Per-method solve results for one learned model.
pub struct MethodSolves {
    pub solves: Vec<(Method, SolveResult)>,
}

impl MethodSolves {
    pub fn get(&self, m: Method) -> Option<&SolveResult> {
        self.solves.iter().find(|(k, _)| *k == m).map(|(_, r)| r)
    }
}

pub fn solve_methods(setup: &PendulumSetup, learned: &LearnedPendulum) -> Result<MethodSolves> {
    let grid = setup.grid()?;
    let l = setup.failure_field(&grid)?;
    let cfg = setup.solve_config();
    let ours = spread_table(setup, learned, setup.alpha, setup.gamma)?;
    let zero = ours.map_bounds(|b, _| crate::dynamics::UncertaintyBoundsEval::zeros(b.nx(), b.nu))?;
    let partial = ours.map_bounds(partial_game_bounds)?;
    let conformal_model = ConformalModel::new(learned.ensemble.clone(), setup.controls()?, learned.conformal.clone());
    let mut solves = vec![
        (Method::Ours, solve(&l, &ours, &cfg)?),
        (Method::MeanDynamics, solve(&l, &zero, &cfg)?),
        (Method::PartialGame, solve(&l, &partial, &cfg)?),
    ];
    // Infinite radii (calibration too small for the coverage) admit nothing.
    let conformal = match conformal_model {
        Ok(cm) => {
            let radii = cm.bound.radii.clone();
            let table = ours.map_bounds(|b, _| {
                crate::dynamics::UncertaintyBoundsEval::symmetric(&radii, &vec![0.0; b.nx() * b.nu], b.nu)
            })?;
            solve(&l, &table, &cfg)?
        }
        Err(_) => {
            let v = crate::solver::ValueField {
                field: ScalarField::new(grid.clone(), vec![-1.0; grid.len()])?,
                tau: setup.horizon,
            };
            SolveResult {
                value: v.clone(),
                snapshots: vec![v],
                log: Vec::new(),
                converged: true,
            }
        }
    };
    solves.insert(2, (Method::Conformal, conformal));
    Ok(MethodSolves { solves })
}

pub fn reports_for(
    setup: &PendulumSetup,
    truth: &SolveResult,
    solves: &MethodSolves,
    seed: u64,
    train_rows: usize,
) -> Result<Vec<SafeSetReport>> {
    let grid = setup.grid()?;
    let truth_set = safe_set(&truth.value.field, 0.0);
    let fingerprint = setup.fingerprint();
    Ok(solves
        .solves
        .iter()
        .map(|(m, r)| {
            let s = safe_set(&r.value.field, 0.0);
            let (recovered, violation) = compare(&grid, &s, &truth_set);
            SafeSetReport {
                method: *m,
                seed,
                train_rows,
                volume_fraction: s.volume_fraction,
                recovered,
                violation,
                fingerprint: fingerprint.clone(),
            }
        })
        .collect())
}

pub fn ground_truth_report(setup: &PendulumSetup, truth: &SolveResult) -> SafeSetReport {
    let s = safe_set(&truth.value.field, 0.0);
    SafeSetReport {
        method: Method::GroundTruth,
        seed: 0,
        train_rows: 0,
        volume_fraction: s.volume_fraction,
        recovered: if s.count() > 0 { 1.0 } else { 0.0 },
        violation: 0.0,
        fingerprint: setup.fingerprint(),
    }
}

pub struct StudyOutcome {
    pub ground_truth: SolveResult,
    pub per_seed: Vec<(LearnedPendulum, MethodSolves)>,
    /// Ground truth first, then one per method per seed.
    pub reports: Vec<SafeSetReport>,
}

pub fn pendulum_study(setup: &PendulumSetup, train_rows: usize, seeds: &[u64]) -> Result<StudyOutcome> {
    if seeds.is_empty() {
        return Err(Error::param("seeds", "at least one seed is required"));
    }
    let ground_truth = pendulum_ground_truth(setup)?;
    let mut reports = vec![ground_truth_report(setup, &ground_truth)];
    let mut per_seed = Vec::new();
    for &seed in seeds {
        let learned = learn_pendulum(setup, train_rows, seed)?;
        let solves = solve_methods(setup, &learned)?;
        reports.extend(reports_for(setup, &ground_truth, &solves, seed, train_rows)?);
        per_seed.push((learned, solves));
    }
    Ok(StudyOutcome {
        ground_truth,
        per_seed,
        reports,
    })
}

/// Mean percent recovered per method, one row per training size.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub train_rows: usize,
    pub method: Method,
    pub mean_recovered: f64,
    pub per_seed: Vec<f64>,
}

pub fn ablation(setup: &PendulumSetup, sizes: &[usize], seeds: &[u64]) -> Result<(Vec<AblationRow>, Vec<SafeSetReport>)> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::param("ablation", "need at least one size and one seed"));
    }
    let truth = pendulum_ground_truth(setup)?;
    let mut rows = Vec::new();
    let mut all = Vec::new();
    for &m in sizes {
        let mut reports = Vec::new();
        for &seed in seeds {
            let learned = learn_pendulum(setup, m, seed)?;
            let solves = solve_methods(setup, &learned)?;
            reports.extend(reports_for(setup, &truth, &solves, seed, m)?);
        }
        for method in Method::LEARNED {
            let per_seed: Vec<f64> = reports.iter().filter(|r| r.method == method).map(|r| r.recovered).collect();
            rows.push(AblationRow {
                train_rows: m,
                method,
                mean_recovered: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            });
        }
        all.extend(reports);
    }
    Ok((rows, all))
}

/// Held-out fit and conformal coverage of a pendulum ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub r_squared: Vec<f64>,
    pub coverage: f64,
    pub radii: Vec<f64>,
}

pub fn ensemble_quality(setup: &PendulumSetup, learned: &LearnedPendulum, seed: u64) -> Result<QualityReport> {
    let truth = setup.truth()?;
    let controls = setup.controls()?;
    let grid = setup.grid()?;
    let held_out = sample_rows(&truth, &controls, &setup.train_sampling, &grid, 2000, seed ^ 0xA11C_E5ED, Split::Test)?;
    let fresh = sample_rows(
        &truth,
        &controls,
        &setup.calibration_sampling,
        &grid,
        5000,
        seed ^ 0xC0FF_EE00,
        Split::Test,
    )?;
    Ok(QualityReport {
        r_squared: r_squared(&learned.ensemble, &held_out),
        coverage: empirical_coverage(&learned.ensemble, &learned.conformal, &fresh),
        radii: learned.conformal.radii.clone(),
    })
}

/// Outcome of a batch of closed-loop rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub trials: usize,
    pub failures: usize,
    pub initial_states: Vec<Vec<f64>>,
    pub failed: Vec<bool>,
}

impl TrialSummary {
    pub fn failure_rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.failures as f64 / self.trials as f64
        }
    }
}

/// Draws up to `n` states uniformly over the grid box that satisfy `accept`,
/// giving up after `100 n` draws.
pub fn sample_states(grid: &Grid, n: usize, seed: u64, accept: impl Fn(&[f64]) -> bool) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..100 * n {
        if out.len() == n {
            break;
        }
        let x: Vec<f64> = (0..grid.ndim()).map(|d| rng.gen_range(grid.lo()[d]..grid.hi()[d])).collect();
        if accept(&x) {
            out.push(x);
        }
    }
    out
}

/// Nearest point of the grid box; the controller fallback for states that
/// leave the computational domain mid-rollout.
fn project(grid: &Grid, x: &[f64]) -> Vec<f64> {
    (0..grid.ndim())
        .map(|d| {
            if grid.periodic()[d] {
                x[d]
            } else {
                x[d].clamp(grid.lo()[d], grid.hi()[d])
            }
        })
        .collect()
}

/// Rolls the true system under the time-varying safety controller from each
/// state for `duration` seconds and counts entries into the failure set.
pub fn invariance_trials<M: UncertainModel>(
    truth: &(impl ControlAffine + Sync),
    controller: &SafetyController<M>,
    states: &[Vec<f64>],
    duration: f64,
    dt: f64,
    failure: impl Fn(&[f64]) -> bool + Sync,
) -> TrialSummary {
    let grid = controller.grid().clone();
    let opts = RolloutOptions {
        dt,
        steps: (duration / dt).round() as usize,
        stop_at_failure: true,
    };
    let failed: Vec<bool> = states
        .par_iter()
        .map(|x0| {
            let traj = rollout(
                truth,
                |t, x| Ok((controller.safety_control(t, &project(&grid, x))?, true)),
                x0,
                opts,
                &failure,
            );
            traj.exited_failure()
        })
        .collect();
    TrialSummary {
        trials: states.len(),
        failures: failed.iter().filter(|f| **f).count(),
        initial_states: states.to_vec(),
        failed,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DubinsSetup {
    pub speed: f64,
    pub turn_bound: f64,
    pub gain: f64,
    pub drift: [f64; 3],
    /// The admissible area is `|p_x|, |p_y| ≤ half_width`.
    pub half_width: f64,
    pub grid_lo: Vec<f64>,
    pub grid_hi: Vec<f64>,
    pub grid_counts: Vec<usize>,
    pub cfl: f64,
    pub convergence_tol: f64,
    pub max_steps: usize,
    pub sampling: RowSampling,
    pub train_rows: usize,
    pub ensemble: TrainConfig,
    pub alpha: f64,
    pub gamma: f64,
    pub x0: Vec<f64>,
    pub duration: f64,
    pub dt: f64,
    /// `None` uses each controller's one-cell default.
    pub epsilon: Option<f64>,
}

impl Default for DubinsSetup {
    fn default() -> Self {
        Self {
            speed: 0.3,
            turn_bound: 2.0,
            gain: 0.6,
            drift: [0.0, 0.0, 0.1],
            half_width: 1.0,
            grid_lo: vec![-1.4, -1.4, -PI],
            grid_hi: vec![1.4, 1.4, PI],
            grid_counts: vec![41, 41, 32],
            cfl: 0.5,
            convergence_tol: 1e-3,
            max_steps: 20_000,
            sampling: RowSampling {
                steps: 100,
                dt: 0.05,
                init_lo: vec![-1.0, -1.0, -PI],
                init_hi: vec![1.0, 1.0, PI],
            },
            train_rows: 4_000,
            ensemble: TrainConfig::default(),
            alpha: 3.0,
            gamma: 3.0,
            x0: vec![0.0, 0.0, 0.7],
            duration: 30.0,
            dt: 0.01,
            epsilon: None,
        }
    }
}

impl DubinsSetup {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.grid_lo, &self.grid_hi, &self.grid_counts, &[false, false, true])
    }

    pub fn truth(&self) -> Result<PerturbedDubins3d> {
        PerturbedDubins3d::new(self.speed, self.gain, self.drift)
    }

    pub fn controls(&self) -> Result<ControlBox> {
        ControlBox::symmetric(&[self.turn_bound])
    }

    pub fn failure_field(&self, grid: &Grid) -> Result<ScalarField> {
        box_signed_distance(grid, &[0, 1], &[self.half_width, self.half_width])
    }

    /// Signed distance to the boundary of the admissible area, positive
    /// inside.
    pub fn margin(&self, x: &[f64]) -> f64 {
        (self.half_width - x[0].abs()).min(self.half_width - x[1].abs())
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            horizon: f64::INFINITY,
            cfl: self.cfl,
            convergence_tol: self.convergence_tol,
            max_steps: self.max_steps,
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterRun {
    pub trajectory: Trajectory,
    pub exited: bool,
    /// Minimum over the run of the signed distance to the area boundary.
    pub min_margin: f64,
    /// Mean boundary distance over the states where the filter intervened.
    pub mean_intervention_margin: Option<f64>,
    pub safe_fraction: f64,
    pub converged: bool,
    pub epsilon: f64,
}

pub struct DemoOutcome {
    pub analytic: FilterRun,
    pub learned: FilterRun,
    pub analytic_solve: SolveResult,
    pub learned_solve: SolveResult,
    pub ensemble: Arc<Ensemble>,
    pub x0: Vec<f64>,
}

fn filter_run<M: UncertainModel>(
    setup: &DubinsSetup,
    solve_result: SolveResult,
    model: M,
    truth: &PerturbedDubins3d,
) -> Result<(FilterRun, SolveResult)> {
    let ctl = SafetyController::stationary(&solve_result.value, model)?;
    let epsilon = setup.epsilon.unwrap_or_else(|| ctl.default_epsilon());
    let filter = FilterPolicy::new(&ctl, |_, _| vec![0.0], epsilon)?;
    let grid = ctl.grid().clone();
    let opts = RolloutOptions {
        dt: setup.dt,
        steps: (setup.duration / setup.dt).round() as usize,
        stop_at_failure: false,
    };
    let traj = rollout(
        truth,
        |t, x| filter.filtered_control(t, &project(&grid, x)),
        &setup.x0,
        opts,
        |x| setup.margin(x) < 0.0,
    );
    let min_margin = traj.states.iter().map(|x| setup.margin(x)).fold(f64::INFINITY, f64::min);
    let hits: Vec<f64> = traj
        .intervened
        .iter()
        .zip(&traj.states)
        .filter(|(i, _)| **i)
        .map(|(_, x)| setup.margin(x))
        .collect();
    let run = FilterRun {
        exited: traj.exited_failure(),
        min_margin,
        mean_intervention_margin: (!hits.is_empty()).then(|| hits.iter().sum::<f64>() / hits.len() as f64),
        safe_fraction: safe_set(&solve_result.value.field, 0.0).volume_fraction,
        converged: solve_result.converged,
        epsilon,
        trajectory: traj,
    };
    Ok((run, solve_result))
}

pub fn filtering_demo(setup: &DubinsSetup, seed: u64) -> Result<DemoOutcome> {
    let grid = setup.grid()?;
    let controls = setup.controls()?;
    let truth = setup.truth()?;
    let l = setup.failure_field(&grid)?;
    let cfg = setup.solve_config();

    let analytic_model = TruthAsUncertain::new(Dubins3d::new(setup.speed)?, controls.clone())?;
    let analytic_solve = solve(&l, &ModelTable::tabulate(&analytic_model, &grid)?, &cfg)?;

    let train = sample_rows(&truth, &controls, &setup.sampling, &grid, setup.train_rows, seed.wrapping_add(17), Split::Train)?;
    let tc = TrainConfig {
        seed,
        ..setup.ensemble.clone()
    };
    let ensemble = Arc::new(train_ensemble(&train, None, &tc)?.ensemble);
    let learned_model = SpreadModel::new(ensemble.clone(), controls, setup.alpha, setup.gamma)?;
    let learned_solve = solve(&l, &tabulate_model(&learned_model, &grid)?, &cfg)?;

    for s in [&analytic_solve, &learned_solve] {
        let v = s.value.field.interpolate(&setup.x0)?;
        if !(v > 0.0) {
            return Err(Error::Infeasible(format!(
                "x0 {:?} is outside a safe set (V = {v:.4}); reduce the perturbation or move x0",
                setup.x0
            )));
        }
    }
    let (analytic, analytic_solve) = filter_run(setup, analytic_solve, analytic_model, &truth)?;
    let (learned, learned_solve) = filter_run(setup, learned_solve, learned_model, &truth)?;
    Ok(DemoOutcome {
        analytic,
        learned,
        analytic_solve,
        learned_solve,
        ensemble,
        x0: setup.x0.clone(),
    })
}

/// Nested-ness of safe sets over increasing `α = γ`.
pub fn multiplier_sweep(
    setup: &PendulumSetup,
    learned: &LearnedPendulum,
    multipliers: &[f64],
) -> Result<Vec<(f64, SafeSet)>> {
    let grid = setup.grid()?;
    let l = setup.failure_field(&grid)?;
    let cfg = SolveConfig {
        snapshot_times: Vec::new(),
        ..setup.solve_config()
    };
    multipliers
        .iter()
        .map(|&m| {
            let table = spread_table(setup, learned, m, m)?;
            Ok((m, safe_set(&solve(&l, &table, &cfg)?.value.field, 0.0)))
        })
        .collect()
}

/// Safety controllers for a learned pendulum under a given method's model.
pub fn pendulum_controller(
    setup: &PendulumSetup,
    learned: &LearnedPendulum,
    result: &SolveResult,
    method: Method,
) -> Result<SafetyController<Box<dyn UncertainModel>>> {
    let controls = setup.controls()?;
    let model: Box<dyn UncertainModel> = match method {
        Method::GroundTruth => Box::new(TruthAsUncertain::new(setup.truth()?, controls)?),
        Method::Ours => Box::new(SpreadModel::new(learned.ensemble.clone(), controls, setup.alpha, setup.gamma)?),
        Method::MeanDynamics => Box::new(SpreadModel::new(learned.ensemble.clone(), controls, 0.0, 0.0)?),
        Method::PartialGame => Box::new(PartialGame::new(SpreadModel::new(
            learned.ensemble.clone(),
            controls,
            setup.alpha,
            setup.gamma,
        )?)),
        Method::Conformal => Box::new(ConformalModel::new(learned.ensemble.clone(), controls, learned.conformal.clone())?),
    };
    SafetyController::time_varying(result, setup.horizon, model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(v: &[u8]) -> SafeSet {
        let mask: Vec<bool> = v.iter().map(|b| *b == 1).collect();
        let c = mask.iter().filter(|m| **m).count();
        SafeSet {
            volume_fraction: c as f64 / mask.len() as f64,
            mask,
        }
    }

    #[test]
    fn violations_respect_the_one_cell_tolerance() {
        let g = Grid::new(&[0.0, 0.0], &[1.0, 1.0], &[5, 5], &[false, false]).unwrap();
        #[rustfmt::skip]
        let truth = mask(&[
            0, 0, 0, 0, 0,
            0, 1, 1, 0, 0,
            0, 1, 1, 0, 0,
            0, 0, 0, 0, 0,
            0, 0, 0, 0, 0,
        ]);
        #[rustfmt::skip]
        let near = mask(&[
            0, 0, 0, 0, 0,
            1, 1, 1, 1, 0,
            0, 1, 1, 0, 0,
            0, 0, 0, 1, 0,
            0, 0, 0, 0, 0,
        ]);
        assert_eq!(containment_violations(&g, &near, &truth), 0);
        #[rustfmt::skip]
        let far = mask(&[
            0, 0, 0, 0, 1,
            0, 1, 1, 0, 0,
            0, 1, 1, 0, 0,
            0, 0, 0, 0, 0,
            1, 0, 0, 0, 0,
        ]);
        assert_eq!(containment_violations(&g, &far, &truth), 2);
        let (rec, viol) = compare(&g, &far, &truth);
        assert_eq!(rec, 1.0);
        assert!((viol - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn periodic_neighbors_wrap() {
        let g = Grid::new(&[0.0], &[1.0], &[6], &[true]).unwrap();
        let truth = mask(&[1, 0, 0, 0, 0, 0]);
        assert_eq!(containment_violations(&g, &mask(&[0, 0, 0, 0, 0, 1]), &truth), 0);
        assert_eq!(containment_violations(&g, &mask(&[0, 0, 0, 1, 0, 0]), &truth), 1);
    }

    #[test]
    fn exact_row_counts() {
        let setup = PendulumSetup::default();
        let d = sample_rows(
            &setup.truth().unwrap(),
            &setup.controls().unwrap(),
            &setup.train_sampling,
            &setup.grid().unwrap(),
            123,
            4,
            Split::Train,
        )
        .unwrap();
        assert_eq!(d.len(), 123);
        assert!(d.x.rows().into_iter().all(|r| r[0].abs() <= PI && r[1].abs() <= 2.0 * PI));
    }

    #[test]
    fn fingerprint_tracks_the_setup() {
        let a = PendulumSetup::default();
        let b = PendulumSetup {
            alpha: 2.0,
            ..Default::default()
        };
        assert_eq!(a.fingerprint(), PendulumSetup::default().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}

//! Ensembles of control-affine networks `NN(x, u) = NN1(x) + NN2(x) u`.
//!
//! The ensemble mean is the nominal model; the per-output sample standard
//! deviation across members, scaled by `α` (drift) and `γ` (input matrix),
//! gives symmetric hypercube error bounds. Networks operate on normalized
//! states and targets; everything exposed here is in physical units.

pub mod conformal;
pub mod dataset;
pub mod mlp;

use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{AffineEval, ControlBox, UncertainModel, UncertaintyBoundsEval};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::solver::ModelTable;

pub use conformal::{conformal_bounds, split_conformal_quantile, ConformalBound, ConformalModel};
pub use dataset::{generate_dataset, DataGenConfig, Dataset, Split};
pub use mlp::{Activation, Mlp};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub members: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            members: 5,
            hidden_layers: 3,
            hidden_width: 256,
            activation: Activation::Tanh,
            epochs: 2000,
            learning_rate: 1e-3,
            batch_size: 256,
            seed: 0,
        }
    }
}

/// Per-dimension affine map `(v - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit(data: ArrayView2<'_, f64>) -> Self {
        let n = data.nrows().max(1) as f64;
        let shift: Vec<f64> = data.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_else(|| vec![0.0; data.ncols()]);
        let scale = (0..data.ncols())
            .map(|c| {
                let var = data.column(c).iter().map(|v| (v - shift[c]).powi(2)).sum::<f64>() / n;
                let sd = var.sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { shift, scale }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    pub fn normalize(&self, data: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = data.to_owned();
        for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
            col.mapv_inplace(|v| (v - self.shift[c]) / self.scale[c]);
        }
        out
    }
}

/// One control-affine member: `net1: x → R^nx`, `net2: x → R^{nx·nu}`
/// (row-major), both on normalized states and normalized targets.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineNet {
    pub net1: Mlp,
    pub net2: Mlp,
}

impl AffineNet {
    fn new(nx: usize, nu: usize, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Self {
        let hidden = vec![config.hidden_width; config.hidden_layers];
        let sizes = |out: usize| [vec![nx], hidden.clone(), vec![out]].concat();
        Self {
            net1: Mlp::new(&sizes(nx), config.activation, rng),
            net2: Mlp::new(&sizes(nx * nu), config.activation, rng),
        }
    }
}

/// Normalized prediction `n1 + n2 u` given both sub-net outputs.
fn combine(n1: &Array2<f64>, n2: &Array2<f64>, u: ArrayView2<'_, f64>) -> Array2<f64> {
    let nu = u.ncols();
    let mut pred = n1.clone();
    for (i, mut col) in pred.axis_iter_mut(Axis(1)).enumerate() {
        for j in 0..nu {
            col.zip_mut_with(&(&n2.column(i * nu + j) * &u.column(j)), |p, v| *p += v);
        }
    }
    pred
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberReport {
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
}

impl MemberReport {
    pub fn final_train(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_validation(&self) -> f64 {
        self.validation_loss.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<AffineNet>,
    pub input_normalizer: Normalizer,
    pub output_normalizer: Normalizer,
    pub state_dim: usize,
    pub control_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub activation: Activation,
    pub seed: u64,
}

/// Member outputs for a batch of states, in physical units: `f1` is
/// `rows × nx`, `f2` is `rows × nx·nu`.
pub struct MemberOutputs {
    pub f1: Array2<f64>,
    pub f2: Array2<f64>,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Every member evaluated on every row of `xs`.
    pub fn member_outputs(&self, xs: ArrayView2<'_, f64>) -> Vec<MemberOutputs> {
        let xn = self.input_normalizer.normalize(xs);
        let nu = self.control_dim;
        let out = &self.output_normalizer;
        self.members
            .iter()
            .map(|m| {
                let mut f1 = m.net1.forward(xn.view());
                let mut f2 = m.net2.forward(xn.view());
                for (i, mut col) in f1.axis_iter_mut(Axis(1)).enumerate() {
                    col.mapv_inplace(|v| out.shift[i] + out.scale[i] * v);
                }
                for (e, mut col) in f2.axis_iter_mut(Axis(1)).enumerate() {
                    let s = out.scale[e / nu];
                    col.mapv_inplace(|v| s * v);
                }
                MemberOutputs { f1, f2 }
            })
            .collect()
    }

    /// Physical-unit prediction of member `k` at each `(x, u)` row.
    pub fn member_predict(&self, k: usize, xs: ArrayView2<'_, f64>, us: ArrayView2<'_, f64>) -> Array2<f64> {
        let outs = self.member_outputs(xs);
        let MemberOutputs { f1, f2 } = &outs[k];
        combine(f1, f2, us)
    }

    /// Ensemble-mean prediction at each `(x, u)` row.
    pub fn predict(&self, xs: ArrayView2<'_, f64>, us: ArrayView2<'_, f64>) -> Array2<f64> {
        let (f1, f2) = mean_outputs(&self.member_outputs(xs));
        combine(&f1, &f2, us)
    }

    pub fn nominal(&self, x: &[f64]) -> AffineEval {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("single row");
        let (f1, f2) = mean_outputs(&self.member_outputs(xs));
        AffineEval::new(f1.row(0).to_vec(), f2.row(0).to_vec(), self.control_dim)
    }

    /// `D1i = [-α σ1i, α σ1i]`, `D2ij = [-γ σ2ij, γ σ2ij]` using the sample
    /// standard deviation (divisor `N - 1`) across members.
    pub fn spread_bounds(&self, x: &[f64], alpha: f64, gamma: f64) -> UncertaintyBoundsEval {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("single row");
        let (s1, s2) = std_outputs(&self.member_outputs(xs));
        let r1: Vec<f64> = s1.row(0).iter().map(|s| alpha * s).collect();
        let r2: Vec<f64> = s2.row(0).iter().map(|s| gamma * s).collect();
        UncertaintyBoundsEval::symmetric(&r1, &r2, self.control_dim)
    }
}

fn mean_outputs(outs: &[MemberOutputs]) -> (Array2<f64>, Array2<f64>) {
    let n = outs.len() as f64;
    let mut f1 = Array2::zeros(outs[0].f1.raw_dim());
    let mut f2 = Array2::zeros(outs[0].f2.raw_dim());
    for o in outs {
        f1 += &o.f1;
        f2 += &o.f2;
    }
    (f1 / n, f2 / n)
}

fn std_outputs(outs: &[MemberOutputs]) -> (Array2<f64>, Array2<f64>) {
    let (m1, m2) = mean_outputs(outs);
    let n = outs.len() as f64;
    let mut v1 = Array2::<f64>::zeros(m1.raw_dim());
    let mut v2 = Array2::<f64>::zeros(m2.raw_dim());
    for o in outs {
        v1 += &(&o.f1 - &m1).mapv(|d| d * d);
        v2 += &(&o.f2 - &m2).mapv(|d| d * d);
    }
    (v1.mapv(|v| (v / (n - 1.0)).sqrt()), v2.mapv(|v| (v / (n - 1.0)).sqrt()))
}

pub struct TrainOutcome {
    pub ensemble: Ensemble,
    pub reports: Vec<MemberReport>,
}

/// Trains every member on the same data from its own initialization seed,
/// minimizing the mean squared error of the normalized prediction with Adam.
pub fn train_ensemble(train: &Dataset, validation: Option<&Dataset>, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.members < 2 {
        return Err(Error::param("members", format!("{} < 2: the spread needs at least two members", config.members)));
    }
    if train.is_empty() {
        return Err(Error::param("train", "training split is empty"));
    }
    if config.hidden_layers == 0 || config.hidden_width == 0 || config.batch_size == 0 {
        return Err(Error::param("architecture", "layers, width and batch size must be positive"));
    }
    if !(config.learning_rate > 0.0) {
        return Err(Error::param("learning_rate", "must be positive"));
    }
    let nx = train.state_dim();
    let nu = train.control_dim();
    let input_normalizer = Normalizer::fit(train.x.view());
    let output_normalizer = Normalizer::fit(train.xdot.view());
    let xn = input_normalizer.normalize(train.x.view());
    let yn = output_normalizer.normalize(train.xdot.view());
    let val = validation.map(|v| {
        (
            input_normalizer.normalize(v.x.view()),
            v.u.clone(),
            output_normalizer.normalize(v.xdot.view()),
        )
    });

    let results: Vec<Result<(AffineNet, MemberReport)>> = (0..config.members)
        .into_par_iter()
        .map(|k| {
            let member_seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(member_seed);
            let mut net = AffineNet::new(nx, nu, config, &mut rng);
            let report = train_member(k, &mut net, &xn, &train.u, &yn, val.as_ref(), config, &mut rng)?;
            Ok((net, report))
        })
        .collect();
    let mut members = Vec::with_capacity(config.members);
    let mut reports = Vec::with_capacity(config.members);
    for r in results {
        let (net, rep) = r?;
        members.push(net);
        reports.push(rep);
    }
    Ok(TrainOutcome {
        ensemble: Ensemble {
            members,
            input_normalizer,
            output_normalizer,
            state_dim: nx,
            control_dim: nu,
            hidden_layers: config.hidden_layers,
            hidden_width: config.hidden_width,
            activation: config.activation,
            seed: config.seed,
        },
        reports,
    })
}

fn mse(pred: &Array2<f64>, target: ArrayView2<'_, f64>) -> f64 {
    let d = pred - &target;
    d.mapv(|v| v * v).mean().unwrap_or(0.0)
}

#[allow(clippy::too_many_arguments)]
fn train_member(
    k: usize,
    net: &mut AffineNet,
    xn: &Array2<f64>,
    u: &Array2<f64>,
    yn: &Array2<f64>,
    val: Option<&(Array2<f64>, Array2<f64>, Array2<f64>)>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<MemberReport> {
    let rows = xn.nrows();
    let nu = u.ncols();
    let mut opt1 = mlp::Adam::new(&net.net1, config.learning_rate);
    let mut opt2 = mlp::Adam::new(&net.net2, config.learning_rate);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut report = MemberReport {
        train_loss: Vec::with_capacity(config.epochs),
        validation_loss: Vec::new(),
    };
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let bx = xn.select(Axis(0), batch);
            let bu = u.select(Axis(0), batch);
            let by = yn.select(Axis(0), batch);
            let c1 = net.net1.forward_cached(bx.view());
            let c2 = net.net2.forward_cached(bx.view());
            let pred = combine(&c1.output, &c2.output, bu.view());
            let err = &pred - &by;
            let loss = err.mapv(|v| v * v).mean().unwrap_or(0.0);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    member: k,
                    epoch,
                    loss,
                    lr: config.learning_rate,
                });
            }
            total += loss * batch.len() as f64;
            let g_pred = err * (2.0 / (err_len(batch.len(), by.ncols())));
            let mut g2 = Array2::zeros(c2.output.raw_dim());
            for (e, mut col) in g2.axis_iter_mut(Axis(1)).enumerate() {
                col.assign(&(&g_pred.column(e / nu) * &bu.column(e % nu)));
            }
            let grads1 = net.net1.backward(&c1, g_pred);
            let grads2 = net.net2.backward(&c2, g2);
            opt1.update(&mut net.net1, &grads1);
            opt2.update(&mut net.net2, &grads2);
        }
        report.train_loss.push(total / rows as f64);
        if let Some((vx, vu, vy)) = val {
            let pred = combine(&net.net1.forward(vx.view()), &net.net2.forward(vx.view()), vu.view());
            report.validation_loss.push(mse(&pred, vy.view()));
        }
    }
    Ok(report)
}

fn err_len(rows: usize, cols: usize) -> f64 {
    (rows * cols) as f64
}

/// Coefficient of determination per output dimension of the ensemble mean.
pub fn r_squared(ensemble: &Ensemble, data: &Dataset) -> Vec<f64> {
    let pred = ensemble.predict(data.x.view(), data.u.view());
    (0..data.state_dim())
        .map(|i| {
            let y = data.xdot.column(i);
            let mean = y.mean().unwrap_or(0.0);
            let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let ss_res: f64 = y.iter().zip(pred.column(i)).map(|(a, b)| (a - b).powi(2)).sum();
            if ss_tot > 0.0 {
                1.0 - ss_res / ss_tot
            } else if ss_res == 0.0 {
                1.0
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// The ensemble as an uncertain model: mean dynamics with spread bounds.
#[derive(Debug, Clone)]
pub struct SpreadModel {
    pub ensemble: Arc<Ensemble>,
    pub controls: ControlBox,
    pub alpha: f64,
    pub gamma: f64,
}

impl SpreadModel {
    pub fn new(ensemble: Arc<Ensemble>, controls: ControlBox, alpha: f64, gamma: f64) -> Result<Self> {
        if !(alpha >= 0.0 && gamma >= 0.0) {
            return Err(Error::param("alpha/gamma", "spread multipliers must be non-negative"));
        }
        if controls.dim() != ensemble.control_dim {
            return Err(Error::Dimension("control box does not match the ensemble".into()));
        }
        Ok(Self {
            ensemble,
            controls,
            alpha,
            gamma,
        })
    }
}

impl UncertainModel for SpreadModel {
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
    fn bounds(&self, x: &[f64]) -> UncertaintyBoundsEval {
        self.ensemble.spread_bounds(x, self.alpha, self.gamma)
    }
    fn evaluate(&self, x: &[f64]) -> (AffineEval, UncertaintyBoundsEval) {
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("single row");
        let outs = self.ensemble.member_outputs(xs);
        let (nom, bounds) = eval_rows(&outs, 0, self.alpha, self.gamma, self.ensemble.control_dim);
        (nom, bounds)
    }
}

fn eval_rows(outs: &[MemberOutputs], row: usize, alpha: f64, gamma: f64, nu: usize) -> (AffineEval, UncertaintyBoundsEval) {
    let n = outs.len() as f64;
    let nx = outs[0].f1.ncols();
    let mut f1 = vec![0.0; nx];
    let mut f2 = vec![0.0; nx * nu];
    for o in outs {
        for (a, b) in f1.iter_mut().zip(o.f1.row(row)) {
            *a += b;
        }
        for (a, b) in f2.iter_mut().zip(o.f2.row(row)) {
            *a += b;
        }
    }
    f1.iter_mut().for_each(|v| *v /= n);
    f2.iter_mut().for_each(|v| *v /= n);
    let mut s1 = vec![0.0; nx];
    let mut s2 = vec![0.0; nx * nu];
    for o in outs {
        for ((s, b), m) in s1.iter_mut().zip(o.f1.row(row)).zip(&f1) {
            *s += (b - m) * (b - m);
        }
        for ((s, b), m) in s2.iter_mut().zip(o.f2.row(row)).zip(&f2) {
            *s += (b - m) * (b - m);
        }
    }
    let r1: Vec<f64> = s1.iter().map(|v| alpha * (v / (n - 1.0)).sqrt()).collect();
    let r2: Vec<f64> = s2.iter().map(|v| gamma * (v / (n - 1.0)).sqrt()).collect();
    (AffineEval::new(f1, f2, nu), UncertaintyBoundsEval::symmetric(&r1, &r2, nu))
}

/// Evaluates the spread model at every grid node in batches.
pub fn tabulate_model(model: &SpreadModel, grid: &Grid) -> Result<ModelTable> {
    if grid.ndim() != model.ensemble.state_dim {
        return Err(Error::Dimension("grid dimension does not match the ensemble".into()));
    }
    const BATCH: usize = 4096;
    let nx = grid.ndim();
    let nu = model.ensemble.control_dim;
    let chunks: Vec<Vec<(AffineEval, UncertaintyBoundsEval)>> = (0..grid.len())
        .step_by(BATCH)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|start| {
            let end = (start + BATCH).min(grid.len());
            let mut xs = Array2::zeros((end - start, nx));
            for (r, k) in (start..end).enumerate() {
                grid.coord_into(k, xs.row_mut(r).as_slice_mut().expect("contiguous row"));
            }
            let outs = model.ensemble.member_outputs(xs.view());
            (0..end - start)
                .map(|r| eval_rows(&outs, r, model.alpha, model.gamma, nu))
                .collect()
        })
        .collect();
    let (nominal, bounds) = chunks.into_iter().flatten().unzip();
    ModelTable::from_parts(grid.clone(), model.controls.clone(), nominal, bounds)
}

/// Sample standard deviation, divisor `n - 1`.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Convenience: `Array1` of a dataset column.
pub fn column(data: &Array2<f64>, c: usize) -> Array1<f64> {
    data.column(c).to_owned()
}

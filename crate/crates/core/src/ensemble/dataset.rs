//! `(x, u) → ẋ` datasets collected from random-control rollouts.

use std::path::Path;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{ControlAffine, ControlBox};
use crate::error::{Error, Result};
use crate::sim::rk4_step;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Calibration,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Calibration => "calibration",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub u: Array2<f64>,
    pub xdot: Array2<f64>,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: Array2<f64>, u: Array2<f64>, xdot: Array2<f64>, split: Split) -> Result<Self> {
        if x.nrows() != u.nrows() || x.nrows() != xdot.nrows() || x.ncols() != xdot.ncols() {
            return Err(Error::Dimension(format!(
                "dataset shapes x {:?}, u {:?}, xdot {:?} are inconsistent",
                x.dim(),
                u.dim(),
                xdot.dim()
            )));
        }
        if x.iter().chain(u.iter()).chain(xdot.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Format("dataset contains non-finite entries".into()));
        }
        Ok(Self { x, u, xdot, split })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn control_dim(&self) -> usize {
        self.u.ncols()
    }

    /// First `n` rows.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            x: self.x.slice(ndarray::s![..n, ..]).to_owned(),
            u: self.u.slice(ndarray::s![..n, ..]).to_owned(),
            xdot: self.xdot.slice(ndarray::s![..n, ..]).to_owned(),
            split: self.split,
        }
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            u: self.u.select(Axis(0), rows),
            xdot: self.xdot.select(Axis(0), rows),
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// CSV with header `x0..x{n-1}, u0..u{m-1}, xdot0..xdot{n-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let (nx, nu) = (self.state_dim(), self.control_dim());
            let header: Vec<String> = (0..nx)
                .map(|i| format!("x{i}"))
                .chain((0..nu).map(|j| format!("u{j}")))
                .chain((0..nx).map(|i| format!("xdot{i}")))
                .collect();
            w.write_record(&header)?;
            for r in 0..self.len() {
                let row: Vec<String> = self
                    .x
                    .row(r)
                    .iter()
                    .chain(self.u.row(r).iter())
                    .chain(self.xdot.row(r).iter())
                    .map(|v| format!("{v:?}"))
                    .collect();
                w.write_record(&row)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        crate::io::write_atomic(path, &out)
    }

    pub fn read_csv(path: &Path, split: Split) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let nx = header.iter().filter(|h| h.starts_with('x') && !h.starts_with("xdot")).count();
        let nu = header.iter().filter(|h| h.starts_with('u')).count();
        let expected: Vec<String> = (0..nx)
            .map(|i| format!("x{i}"))
            .chain((0..nu).map(|j| format!("u{j}")))
            .chain((0..nx).map(|i| format!("xdot{i}")))
            .collect();
        if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Format(format!(
                "{}: unexpected header {:?}, expected {:?}",
                path.display(),
                header,
                expected
            )));
        }
        let mut flat = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            for field in rec.iter() {
                flat.push(field.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("{}: bad number `{field}`: {e}", path.display()))
                })?);
            }
        }
        let width = 2 * nx + nu;
        let rows = flat.len() / width;
        let all = Array2::from_shape_vec((rows, width), flat).map_err(|e| Error::Format(e.to_string()))?;
        Self::new(
            all.slice(ndarray::s![.., ..nx]).to_owned(),
            all.slice(ndarray::s![.., nx..nx + nu]).to_owned(),
            all.slice(ndarray::s![.., nx + nu..]).to_owned(),
            split,
        )
    }
}

/// Rollout settings for data collection.
#[derive(Debug, Clone, PartialEq)]
pub struct DataGenConfig {
    pub n_trajectories: usize,
    pub steps: usize,
    pub dt: f64,
    pub init_lo: Vec<f64>,
    pub init_hi: Vec<f64>,
    /// Trajectories stop when a non-periodic coordinate leaves this box.
    pub valid_lo: Vec<f64>,
    pub valid_hi: Vec<f64>,
    /// Periodic coordinates wrap into `[valid_lo, valid_hi)` instead.
    pub periodic: Vec<bool>,
}

/// Random-control rollouts of `truth`; each visited `(x, u)` is labelled
/// with the analytic `ẋ`.
pub fn generate_dataset(
    truth: &impl ControlAffine,
    controls: &ControlBox,
    config: &DataGenConfig,
    seed: u64,
    split: Split,
) -> Result<Dataset> {
    let nx = truth.state_dim();
    let nu = truth.control_dim();
    if !(config.dt > 0.0) {
        return Err(Error::param("dt", "must be positive"));
    }
    for v in [&config.init_lo, &config.init_hi, &config.valid_lo, &config.valid_hi] {
        if v.len() != nx {
            return Err(Error::Dimension("data box dimension does not match the state".into()));
        }
    }
    if config.periodic.len() != nx || controls.dim() != nu {
        return Err(Error::Dimension("periodic flags / control box do not match the system".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut xs, mut us, mut ds) = (Vec::new(), Vec::new(), Vec::new());
    let inside = |x: &[f64]| {
        (0..nx).all(|d| config.periodic[d] || (x[d] >= config.valid_lo[d] && x[d] <= config.valid_hi[d]))
    };
    for _ in 0..config.n_trajectories {
        let mut x: Vec<f64> = (0..nx)
            .map(|d| sample(&mut rng, config.init_lo[d], config.init_hi[d]))
            .collect();
        for _ in 0..config.steps {
            if !inside(&x) {
                break;
            }
            let u: Vec<f64> = (0..nu)
                .map(|j| sample(&mut rng, controls.lo()[j], controls.hi()[j]))
                .collect();
            let xdot = truth.xdot(&x, &u);
            xs.extend_from_slice(&x);
            us.extend_from_slice(&u);
            ds.extend_from_slice(&xdot);
            x = rk4_step(truth, &x, &u, config.dt);
            for d in 0..nx {
                if config.periodic[d] {
                    let period = config.valid_hi[d] - config.valid_lo[d];
                    x[d] = config.valid_lo[d] + (x[d] - config.valid_lo[d]).rem_euclid(period);
                }
            }
        }
    }
    let n = xs.len() / nx;
    let shape = |v: Vec<f64>, w: usize| Array2::from_shape_vec((n, w), v).expect("row-major buffers");
    Dataset::new(shape(xs, nx), shape(us, nu), shape(ds, nx), split)
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

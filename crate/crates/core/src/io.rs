//! On-disk formats. Every writer goes through [`write_atomic`] so a crash
//! never leaves a half-written artifact under the final name.
//!
//! Binary containers are little-endian and start with a 5-byte magic, a
//! version byte and an endianness marker (`1` = little).
//!
//! Field (`RRFLD`): `u32 ndim`; per dim `f64 lo, f64 hi, u32 count, u8
//! periodic`; `f64 tau`; then `len` values in row-major order.
//!
//! Ensemble (`RRENS`): `u32 nx, nu, members, hidden_layers, hidden_width`,
//! `u8 activation`, `u64 seed`; four normalizer vectors (input shift, input
//! scale, output shift, output scale) as `f64`; then per member `net1` and
//! `net2` layers, each as its weights (`in × out`, row-major) then its bias.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::ensemble::mlp::{Activation, Layer};
use crate::ensemble::{AffineNet, Ensemble, Mlp, Normalizer};
use crate::error::{Error, Result};
use crate::grid::{Grid, ScalarField};
use crate::sim::Trajectory;
use crate::solver::{StepRecord, ValueField};

const FIELD_MAGIC: &[u8; 5] = b"RRFLD";
const MODEL_MAGIC: &[u8; 5] = b"RRENS";
const VERSION: u8 = 1;
const LITTLE: u8 = 1;

/// Writes to a sibling temporary file, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("{}: truncated at byte {}", self.what, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn header(&mut self, magic: &[u8; 5]) -> Result<()> {
        if self.take(5)? != magic {
            return Err(Error::Format(format!("{}: bad magic", self.what)));
        }
        let version = self.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("{}: unsupported version {version}", self.what)));
        }
        if self.u8()? != LITTLE {
            return Err(Error::Format(format!("{}: unsupported byte order", self.what)));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{}: {} trailing bytes", self.what, self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s<'a>(out: &mut Vec<u8>, vs: impl IntoIterator<Item = &'a f64>) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_field(field: &ScalarField, tau: f64) -> Vec<u8> {
    let g = field.grid();
    let mut out = Vec::with_capacity(32 + 8 * g.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.push(VERSION);
    out.push(LITTLE);
    put_u32(&mut out, g.ndim());
    for d in 0..g.ndim() {
        put_f64s(&mut out, [&g.lo()[d], &g.hi()[d]]);
        put_u32(&mut out, g.counts()[d]);
        out.push(g.periodic()[d] as u8);
    }
    put_f64s(&mut out, [&tau]);
    put_f64s(&mut out, field.values());
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<ValueField> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "field",
    };
    r.header(FIELD_MAGIC)?;
    let ndim = r.u32()? as usize;
    if ndim == 0 || ndim > 16 {
        return Err(Error::Format(format!("field: implausible dimension {ndim}")));
    }
    let (mut lo, mut hi, mut counts, mut periodic) = (vec![], vec![], vec![], vec![]);
    for _ in 0..ndim {
        lo.push(r.f64()?);
        hi.push(r.f64()?);
        counts.push(r.u32()? as usize);
        periodic.push(r.u8()? != 0);
    }
    let grid = Grid::new(&lo, &hi, &counts, &periodic)?;
    let tau = r.f64()?;
    let values = r.f64s(grid.len())?;
    r.finish()?;
    Ok(ValueField {
        field: ScalarField::new(grid, values)?,
        tau,
    })
}

pub fn save_field(path: &Path, field: &ScalarField, tau: f64) -> Result<()> {
    write_atomic(path, &encode_field(field, tau))
}

pub fn load_field(path: &Path) -> Result<ValueField> {
    decode_field(&read_file(path)?)
}

fn put_mlp(out: &mut Vec<u8>, net: &Mlp) {
    for l in &net.layers {
        put_f64s(out, l.weights.iter());
        put_f64s(out, l.bias.iter());
    }
}

pub fn encode_ensemble(e: &Ensemble) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.push(VERSION);
    out.push(LITTLE);
    for v in [e.state_dim, e.control_dim, e.members.len(), e.hidden_layers, e.hidden_width] {
        put_u32(&mut out, v);
    }
    out.push(e.activation.code());
    out.extend_from_slice(&e.seed.to_le_bytes());
    for v in [
        &e.input_normalizer.shift,
        &e.input_normalizer.scale,
        &e.output_normalizer.shift,
        &e.output_normalizer.scale,
    ] {
        put_f64s(&mut out, v.iter());
    }
    for m in &e.members {
        put_mlp(&mut out, &m.net1);
        put_mlp(&mut out, &m.net2);
    }
    out
}

fn read_mlp(r: &mut Reader<'_>, sizes: &[usize], activation: Activation) -> Result<Mlp> {
    let layers = sizes
        .windows(2)
        .map(|w| {
            let weights = Array2::from_shape_vec((w[0], w[1]), r.f64s(w[0] * w[1])?).expect("sized buffer");
            let bias = Array1::from(r.f64s(w[1])?);
            Ok(Layer { weights, bias })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp { layers, activation })
}

pub fn decode_ensemble(bytes: &[u8]) -> Result<Ensemble> {
    let mut r = Reader {
        buf: bytes,
        pos: 0,
        what: "model",
    };
    r.header(MODEL_MAGIC)?;
    let nx = r.u32()? as usize;
    let nu = r.u32()? as usize;
    let members = r.u32()? as usize;
    let hidden_layers = r.u32()? as usize;
    let hidden_width = r.u32()? as usize;
    let code = r.u8()?;
    let activation = Activation::from_code(code).ok_or_else(|| Error::Format(format!("model: unknown activation {code}")))?;
    let seed = r.u64()?;
    if members < 2 || nx == 0 || hidden_layers == 0 || hidden_width == 0 {
        return Err(Error::Format("model: degenerate header".into()));
    }
    let hidden = vec![hidden_width; hidden_layers];
    let sizes1 = [vec![nx], hidden.clone(), vec![nx]].concat();
    let sizes2 = [vec![nx], hidden, vec![nx * nu]].concat();
    let params = |s: &[usize]| s.windows(2).map(|w| w[0] * w[1] + w[1]).sum::<usize>();
    // Size check before allocating anything proportional to the header.
    let expected = 8usize
        .checked_mul(4 * nx + members.saturating_mul(params(&sizes1) + params(&sizes2)))
        .ok_or_else(|| Error::Format("model: header overflows".into()))?;
    if bytes.len() - r.pos != expected {
        return Err(Error::Format(format!(
            "model: {} payload bytes, header implies {expected}",
            bytes.len() - r.pos
        )));
    }
    let in_shift = r.f64s(nx)?;
    let in_scale = r.f64s(nx)?;
    let out_shift = r.f64s(nx)?;
    let out_scale = r.f64s(nx)?;
    if in_scale.iter().chain(&out_scale).any(|s| !(*s > 0.0)) {
        return Err(Error::Format("model: normalizer scales must be positive".into()));
    }
    let members = (0..members)
        .map(|_| {
            Ok(AffineNet {
                net1: read_mlp(&mut r, &sizes1, activation)?,
                net2: read_mlp(&mut r, &sizes2, activation)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Ensemble {
        members,
        input_normalizer: Normalizer {
            shift: in_shift,
            scale: in_scale,
        },
        output_normalizer: Normalizer {
            shift: out_shift,
            scale: out_scale,
        },
        state_dim: nx,
        control_dim: nu,
        hidden_layers,
        hidden_width,
        activation,
        seed,
    })
}

pub fn save_ensemble(path: &Path, e: &Ensemble) -> Result<()> {
    write_atomic(path, &encode_ensemble(e))
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    decode_ensemble(&read_file(path)?)
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(Path::new("<csv>"), e))?;
    }
    Ok(out)
}

/// Columns `t, x0.., u0.., intervened, failed`; the final state has empty
/// control cells.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let nx = traj.states.first().map_or(0, Vec::len);
    let nu = traj.controls.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((0..nx).map(|i| format!("x{i}")))
        .chain((0..nu).map(|j| format!("u{j}")))
        .chain(["intervened".to_string(), "failed".to_string()])
        .collect();
    let rows = (0..traj.len()).map(|k| {
        let mut row = vec![format!("{:?}", traj.times[k])];
        row.extend(traj.states[k].iter().map(|v| format!("{v:?}")));
        match traj.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|v| format!("{v:?}"))),
            None => row.extend((0..nu).map(|_| String::new())),
        }
        row.push(traj.intervened.get(k).map_or(String::new(), |b| (*b as u8).to_string()));
        row.push((traj.failed[k] as u8).to_string());
        row
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn write_step_log(path: &Path, log: &[StepRecord]) -> Result<()> {
    let header = ["tau", "dt", "residual"].map(String::from);
    let rows = log
        .iter()
        .map(|s| vec![format!("{:?}", s.tau), format!("{:?}", s.dt), format!("{:?}", s.residual)]);
    write_atomic(path, &csv_bytes(&header, rows)?)
}

/// Generic CSV of named numeric columns.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_atomic(path, &csv_bytes(&header, rows.iter().cloned())?)
}

//! Binary field files, CSV shot records, training tables and exports.
//!
//! Field file layout, all little-endian: `"FWIF"`, version `u8`, axis count
//! `u8`, node count per axis `u64`, spacing per axis `f64`, then the values as
//! `f64` in row-major order with the last axis fastest.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{FwiError, Result};
use crate::fields::{Grid, ScalarField, TimeAxis};
use crate::forward::{SensorArray, ShotRecord};
use crate::inversion::TrainingHistory;

const FIELD_MAGIC: &[u8; 4] = b"FWIF";
const FIELD_VERSION: u8 = 1;

pub fn encode_field(field: &ScalarField) -> Vec<u8> {
    let grid = field.grid();
    let mut out = Vec::with_capacity(6 + grid.ndim() * 16 + field.values().len() * 8);
    out.extend_from_slice(FIELD_MAGIC);
    out.push(FIELD_VERSION);
    out.push(grid.ndim() as u8);
    for &n in grid.dims() {
        out.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for &h in grid.spacing() {
        out.extend_from_slice(&h.to_le_bytes());
    }
    for &v in field.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FwiError::Format("unexpected end of file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_field(bytes: &[u8], ghost_layers: usize) -> Result<ScalarField> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != FIELD_MAGIC {
        return Err(FwiError::Format("not a field file (bad magic)".into()));
    }
    let version = r.u8()?;
    if version != FIELD_VERSION {
        return Err(FwiError::Format(format!("unsupported field file version {version}")));
    }
    let ndim = r.u8()? as usize;
    let dims = (0..ndim)
        .map(|_| r.u64().map(|n| n as usize))
        .collect::<Result<Vec<_>>>()?;
    let spacing = (0..ndim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = Grid::with_spacing(&dims, &spacing, ghost_layers)?;
    let payload = r.take(grid.len() * 8)?;
    if r.pos != bytes.len() {
        return Err(FwiError::Format("trailing bytes after field payload".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ScalarField::new(grid, values)
}

pub fn write_field(path: &Path, field: &ScalarField) -> Result<()> {
    fs::write(path, encode_field(field))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ScalarField> {
    decode_field(&fs::read(path)?, 1)
}

fn sensor_id(p: &[usize]) -> String {
    let parts: Vec<String> = p.iter().map(|c| c.to_string()).collect();
    format!("s{}", parts.join(":"))
}

/// `{:.16e}` keeps 17 significant digits, enough to round-trip any `f64`.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn format_record(rec: &ShotRecord) -> String {
    let mut out = String::from("t");
    for p in rec.sensors().positions() {
        out.push(',');
        out.push_str(&sensor_id(p));
    }
    out.push('\n');
    let time = rec.time();
    for n in 0..rec.n_samples() {
        out.push_str(&num(n as f64 * time.dt));
        for s in 0..rec.sensors().len() {
            out.push(',');
            out.push_str(&num(rec.trace(s)[n]));
        }
        out.push('\n');
    }
    out
}

pub fn parse_record(text: &str) -> Result<ShotRecord> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| FwiError::Format("empty record file".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("t") {
        return Err(FwiError::Format("record header must start with `t`".into()));
    }
    let positions = cols
        .map(|id| {
            id.strip_prefix('s')
                .ok_or_else(|| FwiError::Format(format!("bad sensor id `{id}`")))?
                .split(':')
                .map(|c| c.parse::<usize>().map_err(|_| FwiError::Format(format!("bad sensor id `{id}`"))))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let sensors = SensorArray::new(positions)?;
    let n_sensors = sensors.len();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let vals = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| FwiError::Format(format!("row {}: {e}", line_no + 1)))?;
        if vals.len() != n_sensors + 1 {
            return Err(FwiError::Format(format!(
                "row {} has {} columns, expected {}",
                line_no + 1,
                vals.len(),
                n_sensors + 1
            )));
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    if times.len() < 2 {
        return Err(FwiError::Format("a record needs at least two time rows".into()));
    }
    let time = TimeAxis::new(times[1], times.len() - 1)?;
    let n_samples = rows.len();
    let mut data = vec![0.0; n_sensors * n_samples];
    for (n, row) in rows.iter().enumerate() {
        for (s, v) in row.iter().enumerate() {
            data[s * n_samples + n] = *v;
        }
    }
    ShotRecord::new(sensors, time, data)
}

pub fn write_record(path: &Path, rec: &ShotRecord) -> Result<()> {
    fs::write(path, format_record(rec))?;
    Ok(())
}

pub fn read_record(path: &Path) -> Result<ShotRecord> {
    parse_record(&fs::read_to_string(path)?)
}

/// Per-epoch metrics without wall time, so that identical runs produce
/// identical files.
pub fn format_history(history: &TrainingHistory) -> String {
    let mut out = String::from("epoch,loss,cost,mse,lr,grad_norm\n");
    for e in &history.epochs {
        let mse = e.mse.map_or_else(|| "nan".to_string(), num);
        writeln!(
            out,
            "{},{},{},{},{},{}",
            e.epoch,
            num(e.loss),
            num(e.cost),
            mse,
            num(e.lr),
            num(e.grad_norm)
        )
        .expect("string write");
    }
    out
}

pub fn write_history(path: &Path, history: &TrainingHistory) -> Result<()> {
    fs::write(path, format_history(history))?;
    Ok(())
}

pub fn write_timing(path: &Path, history: &TrainingHistory) -> Result<()> {
    let mut out = String::from("epoch,wall_seconds\n");
    for e in &history.epochs {
        writeln!(out, "{},{}", e.epoch, e.wall_seconds).expect("string write");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Whitespace-separated matrix: one line per node along axis 1 and one
/// column per node along axis 0; 3D fields are written as axis-2 slices
/// separated by blank lines.
pub fn write_field_text(path: &Path, field: &ScalarField) -> Result<()> {
    let grid = field.grid();
    let dims = grid.dims();
    let nz = if grid.ndim() == 3 { dims[2] } else { 1 };
    let mut out = String::new();
    for z in 0..nz {
        if z > 0 {
            out.push('\n');
        }
        for y in 0..dims[1] {
            let row: Vec<String> = (0..dims[0])
                .map(|x| {
                    let c = if grid.ndim() == 3 { vec![x, y, z] } else { vec![x, y] };
                    num(field.get(&c).expect("in range"))
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Legacy ASCII structured-points file with x varying fastest.
pub fn write_vtk(path: &Path, field: &ScalarField, name: &str) -> Result<()> {
    let grid = field.grid();
    let mut dims = grid.dims().to_vec();
    let mut spacing = grid.spacing().to_vec();
    if grid.ndim() == 2 {
        dims.push(1);
        spacing.push(grid.spacing()[0]);
    }
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    writeln!(out, "{name}").expect("string write");
    out.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    writeln!(out, "DIMENSIONS {} {} {}", dims[0], dims[1], dims[2]).expect("string write");
    out.push_str("ORIGIN 0 0 0\n");
    writeln!(out, "SPACING {} {} {}", spacing[0], spacing[1], spacing[2]).expect("string write");
    writeln!(out, "POINT_DATA {}", grid.len()).expect("string write");
    writeln!(out, "SCALARS {name} double 1").expect("string write");
    out.push_str("LOOKUP_TABLE default\n");
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let c = if grid.ndim() == 3 { vec![x, y, z] } else { vec![x, y] };
                out.push_str(&num(field.get(&c).expect("in range")));
                out.push('\n');
            }
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

//! Binary grid snapshots, scene checkpoints and the CSV reports.
//!
//! Grid snapshot layout, little-endian: magic `DVGR`, `u32` version, `u32`
//! channels, `u32` x3 dims, `f64` x6 bbox (min then max), then the values as
//! `f32` in storage order (channel, x, y, z).
//!
//! Checkpoint layout: magic `DVCK`, `u32` version, `u32` kind (0 coarse,
//! 1 fine), `f64` density shift, `f64` step. Coarse: density and colour grid
//! snapshots. Fine: `u32` position and direction encoding orders, `u32` head
//! (0 MLP, 1 direct), density and feature snapshots, then for an MLP head
//! `u32` layer-width count, the widths as `u32`, `u32` parameter count and
//! the parameters as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxfield_core::grid::{Bbox3, DenseGrid};
use voxfield_core::mlp::Mlp;
use voxfield_core::render::ActivationBias;
use voxfield_core::scene::{CoarseScene, ColorHead, FineScene};

use crate::error::{format_err, io_err, Error, Result};

pub const GRID_MAGIC: &[u8; 4] = b"DVGR";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DVCK";
pub const FORMAT_VERSION: u32 = 1;

/// Largest element count accepted from a file header.
const MAX_ELEMS: u64 = 1 << 32;

struct Reader<R> {
    inner: R,
    path: PathBuf,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0; N];
        self.inner.read_exact(&mut b).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                format_err(&self.path, "file is truncated")
            } else {
                io_err(&self.path)(e)
            }
        })?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        self.bytes().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64> {
        self.bytes().map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut raw = vec![0u8; n * 4];
        self.inner
            .read_exact(&mut raw)
            .map_err(|_| format_err(&self.path, "file is truncated"))?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    }

    fn magic(&mut self, want: &[u8; 4]) -> Result<()> {
        if &self.bytes::<4>()? != want {
            return Err(format_err(
                &self.path,
                format!("bad magic, expected {}", String::from_utf8_lossy(want)),
            ));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(format_err(&self.path, format!("unsupported version {v}")));
        }
        Ok(())
    }

    fn check_count(&self, n: u64) -> Result<usize> {
        if n > MAX_ELEMS {
            return Err(format_err(&self.path, "element count is implausibly large"));
        }
        Ok(n as usize)
    }

    fn grid(&mut self) -> Result<DenseGrid> {
        self.magic(GRID_MAGIC)?;
        let c = self.u32()?;
        let dims = [self.u32()?, self.u32()?, self.u32()?];
        let min = [self.f64()?, self.f64()?, self.f64()?];
        let max = [self.f64()?, self.f64()?, self.f64()?];
        let n = self.check_count(c as u64 * dims.iter().map(|&d| d as u64).product::<u64>())?;
        let values = self.f32s(n)?;
        let bbox = Bbox3::new(min, max).map_err(|e| format_err(&self.path, e.to_string()))?;
        DenseGrid::from_values(c as usize, dims.map(|d| d as usize), bbox, values)
            .map_err(|e| format_err(&self.path, e.to_string()))
    }
}

fn put_grid(w: &mut impl Write, g: &DenseGrid) -> std::io::Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(g.channels() as u32).to_le_bytes())?;
    for d in g.dims() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in g.bbox().min.iter().chain(&g.bbox().max) {
        w.write_all(&v.to_le_bytes())?;
    }
    for &v in g.values() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> Result<Reader<BufReader<File>>> {
    Ok(Reader {
        inner: BufReader::new(File::open(path).map_err(io_err(path))?),
        path: path.to_path_buf(),
    })
}

pub fn save_grid(path: &Path, g: &DenseGrid) -> Result<()> {
    let mut w = create(path)?;
    put_grid(&mut w, g)
        .and_then(|_| w.flush())
        .map_err(io_err(path))
}

pub fn load_grid(path: &Path) -> Result<DenseGrid> {
    open(path)?.grid()
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneCheckpoint {
    Coarse(CoarseScene),
    Fine(FineScene),
}

impl SceneCheckpoint {
    pub fn describe(&self) -> String {
        let grid_line = |name: &str, g: &DenseGrid| {
            let b = g.bbox();
            format!(
                "{name}: {} channel(s), dims {:?}, bbox {:?} .. {:?}\n",
                g.channels(),
                g.dims(),
                b.min,
                b.max
            )
        };
        match self {
            SceneCheckpoint::Coarse(s) => format!(
                "coarse scene\ndensity shift: {}\nstep: {}\n{}{}",
                s.bias.value(),
                s.step,
                grid_line("density", &s.density),
                grid_line("colour", &s.rgb)
            ),
            SceneCheckpoint::Fine(s) => {
                let head = match &s.head {
                    ColorHead::Mlp(m) => {
                        format!("mlp {:?} ({} parameters)", m.dims(), m.params().len())
                    }
                    ColorHead::Direct => "direct".to_string(),
                };
                format!(
                    "fine scene\ndensity shift: {}\nstep: {}\nencoding orders: {} / {}\ncolour head: {head}\n{}{}",
                    s.bias.value(),
                    s.step,
                    s.posenc_x,
                    s.posenc_d,
                    grid_line("density", &s.density),
                    grid_line("features", &s.feat)
                )
            }
        }
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &SceneCheckpoint) -> Result<()> {
    let mut w = create(path)?;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        match ckpt {
            SceneCheckpoint::Coarse(s) => {
                w.write_all(&0u32.to_le_bytes())?;
                w.write_all(&s.bias.value().to_le_bytes())?;
                w.write_all(&s.step.to_le_bytes())?;
                put_grid(w, &s.density)?;
                put_grid(w, &s.rgb)?;
            }
            SceneCheckpoint::Fine(s) => {
                w.write_all(&1u32.to_le_bytes())?;
                w.write_all(&s.bias.value().to_le_bytes())?;
                w.write_all(&s.step.to_le_bytes())?;
                w.write_all(&(s.posenc_x as u32).to_le_bytes())?;
                w.write_all(&(s.posenc_d as u32).to_le_bytes())?;
                let head: u32 = if s.mlp().is_some() { 0 } else { 1 };
                w.write_all(&head.to_le_bytes())?;
                put_grid(w, &s.density)?;
                put_grid(w, &s.feat)?;
                if let Some(m) = s.mlp() {
                    w.write_all(&(m.dims().len() as u32).to_le_bytes())?;
                    for &d in m.dims() {
                        w.write_all(&(d as u32).to_le_bytes())?;
                    }
                    w.write_all(&(m.params().len() as u32).to_le_bytes())?;
                    for &p in m.params() {
                        w.write_all(&(p as f32).to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<SceneCheckpoint> {
    let mut r = open(path)?;
    r.magic(CHECKPOINT_MAGIC)?;
    let kind = r.u32()?;
    let bias = ActivationBias::new(r.f64()?).map_err(|e| format_err(path, e.to_string()))?;
    let step = r.f64()?;
    let bad = |e: voxfield_core::Error| format_err(path, e.to_string());
    match kind {
        0 => {
            let density = r.grid()?;
            let rgb = r.grid()?;
            Ok(SceneCheckpoint::Coarse(
                CoarseScene::new(density, rgb, bias, step).map_err(bad)?,
            ))
        }
        1 => {
            let posenc_x = r.u32()? as usize;
            let posenc_d = r.u32()? as usize;
            let head_kind = r.u32()?;
            let density = r.grid()?;
            let feat = r.grid()?;
            let head = match head_kind {
                0 => {
                    let n = r.u32()? as usize;
                    if n > 64 {
                        return Err(format_err(path, "too many MLP layers"));
                    }
                    let dims = (0..n)
                        .map(|_| r.u32().map(|d| d as usize))
                        .collect::<Result<Vec<_>>>()?;
                    let count = r.u32()? as u64;
                    let count = r.check_count(count)?;
                    if count != Mlp::param_count(&dims) {
                        return Err(format_err(
                            path,
                            "MLP parameter count does not match its widths",
                        ));
                    }
                    let params = r.f32s(count)?;
                    ColorHead::Mlp(Mlp::from_params(&dims, params).map_err(bad)?)
                }
                1 => ColorHead::Direct,
                other => return Err(format_err(path, format!("unknown colour head {other}"))),
            };
            Ok(SceneCheckpoint::Fine(
                FineScene::new(density, feat, head, bias, step, posenc_x, posenc_d).map_err(bad)?,
            ))
        }
        other => Err(format_err(path, format!("unknown checkpoint kind {other}"))),
    }
}

/// One row of the loss trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub photo: f64,
    pub pt_rgb: f64,
    pub bg_entropy: f64,
    pub lr_factor: f64,
    pub seconds: f64,
}

pub fn write_loss_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_ctx(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_ctx(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_loss_csv(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_ctx(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_ctx(path, e)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub view_index: usize,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_ctx(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_ctx(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_ctx(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_ctx(path, e)))
        .collect()
}

fn csv_ctx(path: &Path, e: csv::Error) -> Error {
    format_err(path, e.to_string())
}

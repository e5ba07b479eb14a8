//! Versioned little-endian checkpoint.
//!
//! Layout: 8-byte magic, `u32` version, `u64` iteration, the training config
//! as a length-prefixed JSON string, then the Gaussian arrays, an optional
//! hash grid, and the MLP. Every array is a `u64` element count followed by
//! its elements.

use std::io::{Read, Write};
use std::path::Path;

use crate::appearance::{Appearance, ColorMlp, DirHashGrid, HashGridConfig};
use crate::engine::{Checkpoint, TrainConfig};
use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VGSPLAT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn raw(&mut self, b: &[u8]) -> Result<()> {
        self.0.write_all(b).map_err(|e| Error::Format(format!("checkpoint write: {e}")))
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        self.raw(&v.to_le_bytes())
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        let mut buf = Vec::with_capacity(v.len() * 8);
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        self.raw(&buf)
    }
    fn bytes(&mut self, v: &[u8]) -> Result<()> {
        self.u64(v.len() as u64)?;
        self.raw(v)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn raw(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.0).take(n as u64).read_to_end(&mut buf).map_err(|e| Error::Format(format!("checkpoint read: {e}")))?;
        if buf.len() != n {
            return Err(Error::Format("checkpoint truncated".into()));
        }
        Ok(buf)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.raw(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.raw(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        // refuse lengths no real checkpoint could have before allocating
        if n > (1 << 34) {
            return Err(Error::Format(format!("checkpoint array length {n} is implausible")));
        }
        Ok(n as usize)
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.raw(n.checked_mul(8).ok_or_else(|| Error::Format("checkpoint length overflow".into()))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn f64s_exact(&mut self, what: &'static str, expected: usize) -> Result<Vec<f64>> {
        let v = self.f64s()?;
        if v.len() != expected {
            return Err(Error::DimensionMismatch { what, expected, got: v.len() });
        }
        Ok(v)
    }
    fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.len()?;
        self.raw(n)
    }
}

fn chunk<const N: usize>(v: &[f64]) -> Vec<[f64; N]> {
    v.chunks_exact(N).map(|c| c.try_into().unwrap()).collect()
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.raw(CHECKPOINT_MAGIC)?;
    w.u32(CHECKPOINT_VERSION)?;
    w.u64(ckpt.iteration)?;
    let json = serde_json::to_string(&ckpt.config).expect("config serializes");
    w.bytes(json.as_bytes())?;

    let g = &ckpt.gaussians;
    w.u64(g.feature_dim as u64)?;
    w.u64(g.len() as u64)?;
    w.f64s(g.positions.as_flattened())?;
    w.f64s(g.log_scales.as_flattened())?;
    w.f64s(g.rotations.as_flattened())?;
    w.f64s(&g.opacity_logits)?;
    w.f64s(&g.features)?;

    let app = &ckpt.appearance;
    w.u64(app.feature_dim as u64)?;
    match &app.grid {
        Some(grid) => {
            w.u32(1)?;
            let c = grid.config;
            for v in [c.levels, c.base_resolution, c.max_resolution, c.log2_table_size, c.features_per_level] {
                w.u32(v)?;
            }
            w.f64s(&grid.tables)?;
        }
        None => w.u32(0)?,
    }
    let dims: Vec<f64> = app.mlp.dims().iter().map(|&d| d as f64).collect();
    w.f64s(&dims)?;
    w.f64s(&app.mlp.params)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: R) -> Result<Checkpoint> {
    let mut r = Reader(input);
    let magic = r.raw(8).map_err(|_| Error::Format("not a checkpoint (file too short for header)".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let iteration = r.u64()?;
    let json = r.bytes()?;
    let config: TrainConfig =
        serde_json::from_slice(&json).map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;

    let feature_dim = r.u64()? as usize;
    let n = r.len()?;
    let positions = r.f64s_exact("checkpoint positions", 3 * n)?;
    let log_scales = r.f64s_exact("checkpoint log scales", 3 * n)?;
    let rotations = r.f64s_exact("checkpoint rotations", 4 * n)?;
    let opacity_logits = r.f64s_exact("checkpoint opacities", n)?;
    let features = r.f64s_exact("checkpoint features", feature_dim * n)?;
    let gaussians = GaussianSet {
        positions: chunk(&positions),
        log_scales: chunk(&log_scales),
        rotations: chunk(&rotations),
        opacity_logits,
        features,
        feature_dim,
    };

    let app_feature_dim = r.u64()? as usize;
    if app_feature_dim != feature_dim {
        return Err(Error::DimensionMismatch {
            what: "checkpoint appearance feature dimension",
            expected: feature_dim,
            got: app_feature_dim,
        });
    }
    let grid = match r.u32()? {
        0 => None,
        1 => {
            let c = HashGridConfig {
                levels: r.u32()?,
                base_resolution: r.u32()?,
                max_resolution: r.u32()?,
                log2_table_size: r.u32()?,
                features_per_level: r.u32()?,
            };
            c.validate()?;
            Some(DirHashGrid::from_tables(c, r.f64s()?)?)
        }
        t => return Err(Error::Format(format!("checkpoint grid tag {t} invalid"))),
    };
    let dims: Vec<usize> = r.f64s()?.iter().map(|&d| d as usize).collect();
    let mlp = ColorMlp::from_params(&dims, r.f64s()?)?;
    let appearance = Appearance::from_parts(feature_dim, grid, mlp)?;
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(Checkpoint { iteration, gaussians, appearance, config })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(ckpt, &mut w)?;
    let f = w.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f)).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

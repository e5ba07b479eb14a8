//! Gaussian sets as binary little-endian PLY with one `vertex` element.
//!
//! Properties are `x y z log_scale_0..2 rot_0..3 opacity_logit f_0..f_{F-1}`
//! written as `double`; `float` properties are accepted on read.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::gaussian::GaussianSet;

fn property_names(feature_dim: usize) -> Vec<String> {
    let mut v: Vec<String> = ["x", "y", "z", "log_scale_0", "log_scale_1", "log_scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity_logit"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    v.extend((0..feature_dim).map(|i| format!("f_{i}")));
    v
}

pub fn write_ply<W: Write>(set: &GaussianSet, mut out: W) -> Result<()> {
    let io = |e| Error::Format(format!("ply write: {e}"));
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", set.len()));
    for name in property_names(set.feature_dim) {
        header.push_str(&format!("property double {name}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes()).map_err(io)?;
    let mut row = Vec::with_capacity(8 * (11 + set.feature_dim));
    for k in 0..set.len() {
        row.clear();
        let vals = set.positions[k]
            .iter()
            .chain(&set.log_scales[k])
            .chain(&set.rotations[k])
            .chain(std::iter::once(&set.opacity_logits[k]))
            .chain(set.feature(k));
        for v in vals {
            row.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&row).map_err(io)?;
    }
    Ok(())
}

pub fn read_ply<R: Read>(input: R) -> Result<GaussianSet> {
    let mut r = BufReader::new(input);
    let mut line = String::new();
    let next = |r: &mut BufReader<R>, line: &mut String| -> Result<()> {
        line.clear();
        let n = r.read_line(line).map_err(|e| Error::Format(format!("ply header: {e}")))?;
        if n == 0 {
            return Err(Error::Format("ply header truncated".into()));
        }
        Ok(())
    };
    next(&mut r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Format("not a ply file".into()));
    }
    let mut count = None;
    let mut props: Vec<(String, usize)> = Vec::new();
    loop {
        next(&mut r, &mut line)?;
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", f, ..] => return Err(Error::Format(format!("unsupported ply format `{f}`"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| Error::Format(format!("bad vertex count `{n}`")))?);
            }
            ["element", other, ..] => return Err(Error::Format(format!("unexpected ply element `{other}`"))),
            ["property", ty, name] => {
                let size = match *ty {
                    "double" | "float64" => 8,
                    "float" | "float32" => 4,
                    _ => return Err(Error::Format(format!("unsupported ply property type `{ty}`"))),
                };
                props.push((name.to_string(), size));
            }
            ["end_header"] => break,
            _ => return Err(Error::Format(format!("bad ply header line `{}`", line.trim_end()))),
        }
    }
    let n = count.ok_or_else(|| Error::Format("ply has no vertex element".into()))?;
    let feature_dim = props.iter().filter(|(p, _)| p.starts_with("f_")).count();
    let expected = property_names(feature_dim);
    let mut slot = vec![usize::MAX; expected.len()];
    for (i, (name, _)) in props.iter().enumerate() {
        let j = expected
            .iter()
            .position(|e| e == name)
            .ok_or_else(|| Error::Format(format!("unknown ply property `{name}`")))?;
        slot[j] = i;
    }
    if let Some(j) = slot.iter().position(|&s| s == usize::MAX) {
        return Err(Error::Format(format!("ply property `{}` missing", expected[j])));
    }
    let stride: usize = props.iter().map(|p| p.1).sum();
    let mut buf = vec![0u8; stride];
    let mut vals = vec![0.0; props.len()];
    let mut set = GaussianSet::empty(feature_dim);
    for _ in 0..n {
        r.read_exact(&mut buf).map_err(|_| Error::Format("ply body truncated".into()))?;
        let mut off = 0;
        for (i, (_, size)) in props.iter().enumerate() {
            vals[i] = if *size == 8 {
                f64::from_le_bytes(buf[off..off + 8].try_into().unwrap())
            } else {
                f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64
            };
            off += size;
        }
        let v = |j: usize| vals[slot[j]];
        let feat: Vec<f64> = (0..feature_dim).map(|i| v(11 + i)).collect();
        set.push([v(0), v(1), v(2)], [v(3), v(4), v(5)], [v(6), v(7), v(8), v(9)], v(10), &feat);
    }
    Ok(set)
}

pub fn save_ply(path: &Path, set: &GaussianSet) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_ply(set, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: &Path) -> Result<GaussianSet> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ply(f)
}

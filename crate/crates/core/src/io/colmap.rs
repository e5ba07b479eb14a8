//! COLMAP text model (`cameras.txt`, `images.txt`, `points3D.txt`).

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColmapCamera {
    pub id: u32,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapImage {
    pub id: u32,
    /// World-to-camera rotation as `(w, x, y, z)`.
    pub qvec: [f64; 4],
    pub tvec: [f64; 3],
    pub camera_id: u32,
    pub name: String,
}

impl ColmapImage {
    pub fn rotation(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.qvec;
        UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.tvec)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColmapModel {
    pub cameras: HashMap<u32, ColmapCamera>,
    /// Sorted by image name.
    pub images: Vec<ColmapImage>,
    pub points: Vec<[f64; 3]>,
    /// Point colors in `[0, 1]`.
    pub colors: Vec<[f64; 3]>,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn num<T: std::str::FromStr>(path: &Path, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing {what}")))?;
    tok.parse().map_err(|_| parse_err(path, line, format!("bad {what} `{tok}`")))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with 1-based line numbers. Blank lines are kept so the
/// image parser can consume empty point lists.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.starts_with('#'))
}

pub fn parse_cameras(path: &Path, text: &str) -> Result<HashMap<u32, ColmapCamera>> {
    let mut out = HashMap::new();
    for (ln, l) in lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut t = l.split_whitespace();
        let id: u32 = num(path, ln, t.next(), "camera id")?;
        let model = t.next().ok_or_else(|| parse_err(path, ln, "missing camera model"))?;
        let width: usize = num(path, ln, t.next(), "width")?;
        let height: usize = num(path, ln, t.next(), "height")?;
        let params: Vec<f64> = t.map(|p| num(path, ln, Some(p), "camera parameter")).collect::<Result<_>>()?;
        let (fx, fy, cx, cy) = match (model, params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => (*fx, *fy, *cx, *cy),
            ("SIMPLE_PINHOLE", [f, cx, cy]) => (*f, *f, *cx, *cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", p) => {
                return Err(parse_err(path, ln, format!("{model} with {} parameters", p.len())));
            }
            (other, _) => return Err(Error::UnsupportedCameraModel(other.to_string())),
        };
        if out.insert(id, ColmapCamera { id, width, height, fx, fy, cx, cy }).is_some() {
            return Err(parse_err(path, ln, format!("duplicate camera id {id}")));
        }
    }
    Ok(out)
}

pub fn parse_images(path: &Path, text: &str) -> Result<Vec<ColmapImage>> {
    let mut out = Vec::new();
    let mut it = lines(text);
    while let Some((ln, l)) = it.next() {
        if l.is_empty() {
            continue;
        }
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 10 {
            return Err(parse_err(path, ln, format!("expected 10 fields, found {}", t.len())));
        }
        let f = |i: usize, what: &str| num::<f64>(path, ln, Some(t[i]), what);
        let image = ColmapImage {
            id: num(path, ln, Some(t[0]), "image id")?,
            qvec: [f(1, "qw")?, f(2, "qx")?, f(3, "qy")?, f(4, "qz")?],
            tvec: [f(5, "tx")?, f(6, "ty")?, f(7, "tz")?],
            camera_id: num(path, ln, Some(t[8]), "camera id")?,
            // names may contain spaces
            name: t[9..].join(" "),
        };
        if image.qvec.iter().all(|&v| v == 0.0) {
            return Err(parse_err(path, ln, "zero quaternion"));
        }
        out.push(image);
        // the 2D point line always follows, possibly empty
        it.next();
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

pub fn parse_points(path: &Path, text: &str) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let mut pts = Vec::new();
    let mut cols = Vec::new();
    for (ln, l) in lines(text).filter(|(_, l)| !l.is_empty()) {
        let mut t = l.split_whitespace();
        let _id: u64 = num(path, ln, t.next(), "point id")?;
        let p = [num(path, ln, t.next(), "x")?, num(path, ln, t.next(), "y")?, num(path, ln, t.next(), "z")?];
        let c: [u8; 3] = [num(path, ln, t.next(), "r")?, num(path, ln, t.next(), "g")?, num(path, ln, t.next(), "b")?];
        if p.iter().any(|v: &f64| !v.is_finite()) {
            return Err(parse_err(path, ln, "non-finite point"));
        }
        pts.push(p);
        cols.push(c.map(|v| v as f64 / 255.0));
    }
    Ok((pts, cols))
}

/// Reads the three text files from `dir`.
pub fn load_colmap_model(dir: &Path) -> Result<ColmapModel> {
    let p = |name: &str| -> PathBuf { dir.join(name) };
    let cameras = parse_cameras(&p("cameras.txt"), &read(&p("cameras.txt"))?)?;
    let images = parse_images(&p("images.txt"), &read(&p("images.txt"))?)?;
    let (points, colors) = parse_points(&p("points3D.txt"), &read(&p("points3D.txt"))?)?;
    for im in &images {
        if !cameras.contains_key(&im.camera_id) {
            return Err(Error::InvalidInput(format!("image `{}` references unknown camera {}", im.name, im.camera_id)));
        }
    }
    Ok(ColmapModel { cameras, images, points, colors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_pinhole_shares_focal() {
        let c = parse_cameras(Path::new("c"), "1 SIMPLE_PINHOLE 64 48 50 32 24\n").unwrap();
        let c = c[&1];
        assert_eq!((c.fx, c.fy, c.cx, c.cy), (50.0, 50.0, 32.0, 24.0));
    }

    #[test]
    fn radial_unsupported() {
        let e = parse_cameras(Path::new("c"), "# hdr\n1 RADIAL 64 48 50 32 24 0.1 0.2\n").unwrap_err();
        assert!(matches!(&e, Error::UnsupportedCameraModel(m) if m == "RADIAL"));
        assert!(e.to_string().contains("RADIAL"));
    }

    #[test]
    fn malformed_line_reports_location() {
        let e = parse_cameras(Path::new("cams.txt"), "# c\n1 PINHOLE 64 x 1 1 1 1\n").unwrap_err();
        let s = e.to_string();
        assert!(s.contains("cams.txt") && s.contains(":2"), "{s}");
    }

    #[test]
    fn empty_point_lines_are_consumed() {
        let text = "# header\n2 1 0 0 0 0 0 0 1 b.png\n\n1 1 0 0 0 1 2 3 1 a.png\n10.0 20.0 -1\n";
        let ims = parse_images(Path::new("i"), text).unwrap();
        assert_eq!(ims.len(), 2);
        assert_eq!(ims[0].name, "a.png");
        assert_eq!(ims[0].tvec, [1.0, 2.0, 3.0]);
        assert_eq!(ims[1].name, "b.png");
    }

    #[test]
    fn quaternion_to_rotation() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let im = ColmapImage { id: 1, qvec: [s, 0.0, 0.0, s], tvec: [0.0; 3], camera_id: 1, name: "x".into() };
        let r = im.rotation();
        // 90 degrees about z maps x to y
        assert!((r * Vector3::x() - Vector3::y()).norm() < 1e-12);
    }
}

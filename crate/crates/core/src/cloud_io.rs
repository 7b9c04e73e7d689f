//! Point cloud readers and writers: plain `x y z` text and the ASCII PLY
//! subset with a single vertex element.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so a write followed by a read reproduces every `f64` bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sensor::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    Ply,
}

impl CloudFormat {
    /// Picks the format from the file extension (`.ply` or anything else).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::Ply,
            _ => CloudFormat::Xyz,
        }
    }
}

pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for p in &cloud.points {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out
}

pub fn read_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        points.push(parse_triple(line.split_whitespace(), i + 1)?);
    }
    Ok(PointCloud::new(points))
}

pub fn write_ply(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32 + 128);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    out.push_str(&write_xyz(cloud));
    out
}

const SCALAR_TYPES: [&str; 16] = [
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double", "int8", "uint8", "int16", "uint16", "int32",
    "uint32", "float32", "float64",
];

pub fn read_ply(text: &str) -> Result<PointCloud> {
    let bad = |msg: String| Error::Format(format!("ply: {msg}"));
    let mut lines = text.lines().enumerate();

    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(bad("missing 'ply' magic line".into())),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;

    for (i, raw) in lines.by_ref() {
        let line = raw.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            None | Some("comment") | Some("obj_info") => continue,
            Some("format") => match tok.next() {
                Some("ascii") => saw_format = true,
                Some(f @ ("binary_little_endian" | "binary_big_endian")) => {
                    return Err(bad(format!("binary PLY ({f}) is not supported, convert to ascii")))
                }
                other => return Err(bad(format!("line {}: unknown format {other:?}", i + 1))),
            },
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| bad(format!("line {}: element without name", i + 1)))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(format!("line {}: element without count", i + 1)))?;
                if name == "vertex" {
                    if vertex_count.is_some() {
                        return Err(bad("duplicate vertex element".into()));
                    }
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() {
                        return Err(bad(format!("element {name:?} before vertex element")));
                    }
                    // later elements are ignored; their rows follow the vertices
                    in_vertex = false;
                }
            }
            Some("property") => {
                let ty = tok
                    .next()
                    .ok_or_else(|| bad(format!("line {}: property without type", i + 1)))?;
                if ty == "list" {
                    if in_vertex {
                        return Err(bad("list properties on vertices are not supported".into()));
                    }
                    continue;
                }
                if !SCALAR_TYPES.contains(&ty) {
                    return Err(bad(format!("line {}: unknown property type {ty:?}", i + 1)));
                }
                let name = tok
                    .next()
                    .ok_or_else(|| bad(format!("line {}: property without name", i + 1)))?;
                if in_vertex {
                    props.push(name.to_string());
                }
            }
            Some("end_header") => {
                header_done = true;
                break;
            }
            Some(other) => return Err(bad(format!("line {}: unexpected header keyword {other:?}", i + 1))),
        }
    }

    if !header_done {
        return Err(bad("missing end_header".into()));
    }
    if !saw_format {
        return Err(bad("missing format line".into()));
    }
    let count = vertex_count.ok_or_else(|| bad("no vertex element".into()))?;
    let idx = |n: &str| {
        props
            .iter()
            .position(|p| p == n)
            .ok_or_else(|| bad(format!("vertex property {n:?} missing")))
    };
    let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);

    let mut points = Vec::with_capacity(count);
    for (i, raw) in lines {
        if points.len() == count {
            break;
        }
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != props.len() {
            return Err(bad(format!(
                "line {}: expected {} values, found {}",
                i + 1,
                props.len(),
                fields.len()
            )));
        }
        let get = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("line {}: {e}", i + 1)))
        };
        points.push([get(ix)?, get(iy)?, get(iz)?]);
    }
    if points.len() != count {
        return Err(bad(format!("header declares {count} vertices, found {}", points.len())));
    }
    Ok(PointCloud::new(points))
}

fn parse_triple<'a>(mut it: impl Iterator<Item = &'a str>, line: usize) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for v in out.iter_mut() {
        let tok = it
            .next()
            .ok_or_else(|| Error::Format(format!("xyz line {line}: expected 3 values")))?;
        *v = tok
            .parse()
            .map_err(|e| Error::Format(format!("xyz line {line}: {e}")))?;
    }
    if it.next().is_some() {
        return Err(Error::Format(format!("xyz line {line}: expected 3 values")));
    }
    Ok(out)
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read(path)?;
    let text = String::from_utf8(text)
        .map_err(|_| Error::Format(format!("{}: not UTF-8 text (binary PLY?)", path.display())))?;
    match CloudFormat::from_path(path) {
        CloudFormat::Ply => read_ply(&text),
        CloudFormat::Xyz => read_xyz(&text),
    }
}

pub fn write_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    let text = match CloudFormat::from_path(path) {
        CloudFormat::Ply => write_ply(cloud),
        CloudFormat::Xyz => write_xyz(cloud),
    };
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ply_with_extra_properties_and_elements() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty uchar red\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 255 2 3\n4 0 5 6\n3 0 1 1\n";
        let c = read_ply(text).unwrap();
        assert_eq!(c.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn binary_ply_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nend_header\n";
        let err = read_ply(text).unwrap_err().to_string();
        assert!(err.contains("binary"), "{err}");
    }

    #[test]
    fn malformed_headers_rejected() {
        assert!(read_ply("plx\n").is_err());
        assert!(read_ply(
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1 2\n"
        )
        .is_err());
        assert!(read_ply("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n").is_err());
        assert!(read_ply("ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n").is_err());
    }

    #[test]
    fn xyz_rejects_short_rows() {
        assert!(read_xyz("1 2\n").is_err());
        assert!(read_xyz("1 2 3 4\n").is_err());
        assert_eq!(read_xyz("# c\n\n1 2 3\n").unwrap().len(), 1);
    }

    proptest! {
        #[test]
        fn text_formats_roundtrip_exactly(pts in proptest::collection::vec(
            (-1e3f64..1e3, -1e3f64..1e3, -10f64..10.0), 0..50)) {
            let cloud = PointCloud::new(pts.into_iter().map(|(x, y, z)| [x, y, z]).collect());
            prop_assert_eq!(&read_xyz(&write_xyz(&cloud)).unwrap(), &cloud);
            prop_assert_eq!(&read_ply(&write_ply(&cloud)).unwrap(), &cloud);
        }
    }
}

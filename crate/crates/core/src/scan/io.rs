//! Mesh readers (ASCII OBJ, binary STL) and the `DPT1` depth-image format.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;

use super::{DepthImage, ScanError, TriangleMesh};

pub fn parse_obj(text: &str) -> Result<TriangleMesh, ScanError> {
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let bad = |m: &str| ScanError::Format(format!("OBJ line {}: {m}", ln + 1));
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let c: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
                if c.len() != 3 {
                    return Err(bad("vertex needs three coordinates"));
                }
                verts.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| bad("bad face index"))?;
                        let resolved = if i < 0 { verts.len() as i64 + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs at least three vertices"));
                }
                for k in 1..idx.len() - 1 {
                    tris.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(verts, tris)
}

pub fn write_obj<W: Write>(mut w: W, mesh: &TriangleMesh) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Binary STL; coincident corners are merged so closed solids stay closed.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh, ScanError> {
    if bytes.len() < 84 {
        return Err(ScanError::Format("STL: shorter than header".into()));
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() < 84 + 50 * n {
        return Err(ScanError::Format(format!(
            "STL: header declares {n} triangles but file holds {}",
            (bytes.len() - 84) / 50
        )));
    }
    let mut lookup: HashMap<[u32; 3], usize> = HashMap::new();
    let mut verts = Vec::new();
    let mut tris = Vec::with_capacity(n);
    for i in 0..n {
        let rec = &bytes[84 + 50 * i..84 + 50 * (i + 1)];
        let mut tri = [0usize; 3];
        for (k, slot) in tri.iter_mut().enumerate() {
            let off = 12 + 12 * k;
            let key: [u32; 3] = std::array::from_fn(|a| {
                u32::from_le_bytes(rec[off + 4 * a..off + 4 * a + 4].try_into().unwrap())
            });
            *slot = *lookup.entry(key).or_insert_with(|| {
                verts.push(Vector3::from(key.map(|b| f32::from_bits(b) as f64)));
                verts.len() - 1
            });
        }
        tris.push(tri);
    }
    TriangleMesh::new(verts, tris)
}

pub fn encode_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out.extend_from_slice(&(mesh.triangles().len() as u32).to_le_bytes());
    for t in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.corners(t);
        let n = (b - a).cross(&(c - a)).normalize();
        for v in [n, a, b, c] {
            for k in 0..3 {
                out.extend_from_slice(&(v[k] as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

/// Loads an `.obj` or `.stl` mesh, chosen by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, ScanError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| ScanError::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let mesh = match ext.as_deref() {
        Some("stl") => parse_stl(&bytes)?,
        Some("obj") => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| ScanError::Format("OBJ: not UTF-8 text".into()))?;
            parse_obj(text)?
        }
        _ => {
            return Err(ScanError::Format(format!(
                "{}: expected .obj or .stl",
                path.display()
            )))
        }
    };
    if mesh.is_empty() {
        return Err(ScanError::InvalidMesh(format!(
            "{}: no usable triangles",
            path.display()
        )));
    }
    Ok(mesh)
}

pub fn save_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<(), ScanError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_obj(&mut buf, mesh).map_err(|e| ScanError::io(path, e))?;
    fs::write(path, buf).map_err(|e| ScanError::io(path, e))
}

const DPT_MAGIC: &[u8; 4] = b"DPT1";

/// `DPT1`: magic, width and height (u32 LE), then row-major f32 LE depths, NaN for no hit.
pub fn encode_depth(img: &DepthImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * img.depth.len());
    out.extend_from_slice(DPT_MAGIC);
    out.extend_from_slice(&(img.width as u32).to_le_bytes());
    out.extend_from_slice(&(img.height as u32).to_le_bytes());
    for &d in &img.depth {
        let v = if d.is_finite() { d as f32 } else { f32::NAN };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(bytes: &[u8]) -> Result<DepthImage, ScanError> {
    if bytes.len() < 12 || &bytes[..4] != DPT_MAGIC {
        return Err(ScanError::Format("DPT1: missing magic".into()));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * w * h {
        return Err(ScanError::Format(format!(
            "DPT1: expected {} bytes of depth, found {}",
            4 * w * h,
            body.len()
        )));
    }
    let depth = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DepthImage::new(w, h, depth)
}

pub fn write_depth(path: impl AsRef<Path>, img: &DepthImage) -> Result<(), ScanError> {
    let path = path.as_ref();
    fs::write(path, encode_depth(img)).map_err(|e| ScanError::io(path, e))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthImage, ScanError> {
    let path = path.as_ref();
    decode_depth(&fs::read(path).map_err(|e| ScanError::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::shapes;

    #[test]
    fn obj_roundtrip_and_polygons() {
        let m = shapes::cube(1.0);
        let mut buf = Vec::new();
        write_obj(&mut buf, &m).unwrap();
        let back = parse_obj(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);

        let quad = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1 -1//1\n";
        assert_eq!(parse_obj(quad).unwrap().triangles(), &[[0, 1, 2], [0, 2, 3]]);
        assert!(parse_obj("v 0 0\n").is_err());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn stl_roundtrip_merges_vertices() {
        let m = shapes::cube(0.5);
        let back = parse_stl(&encode_stl(&m)).unwrap();
        assert_eq!(back.vertices().len(), 8);
        assert_eq!(back.triangles().len(), 12);
        assert!(parse_stl(&encode_stl(&m)[..100]).is_err());
    }

    #[test]
    fn depth_roundtrip() {
        let img = DepthImage::new(3, 2, vec![1.5, f64::NAN, 0.25, 2.0, 3.0, f64::NAN]).unwrap();
        let back = decode_depth(&encode_depth(&img)).unwrap();
        assert!(back.bit_eq(&img));
        let bytes = encode_depth(&img);
        assert_eq!(&bytes[..4], b"DPT1");
        assert!(decode_depth(&bytes[..bytes.len() - 2]).is_err());
    }
}

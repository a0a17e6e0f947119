//! `VXG1` occupancy files and ASCII PLY point clouds.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use super::{GridFrame, PointCloud, VoxelError, VoxelGrid};

const VXG_MAGIC: &[u8; 4] = b"VXG1";

/// Serializes a grid: magic, dims (u32 LE), origin (f64 LE), voxel size (f64 LE),
/// then the occupancy bit-packed x-fastest, LSB first, padded to a byte.
pub fn encode_grid(grid: &VoxelGrid) -> Vec<u8> {
    let f = grid.frame();
    let n = f.len();
    let mut out = Vec::with_capacity(4 + 12 + 32 + n.div_ceil(8));
    out.extend_from_slice(VXG_MAGIC);
    for d in f.dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for o in f.origin {
        out.extend_from_slice(&o.to_le_bytes());
    }
    out.extend_from_slice(&f.voxel_size.to_le_bytes());
    let nbytes = n.div_ceil(8);
    for (wi, w) in grid.words().iter().enumerate() {
        let bytes = w.to_le_bytes();
        let start = wi * 8;
        let take = (nbytes - start).min(8);
        out.extend_from_slice(&bytes[..take]);
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<VoxelGrid, VoxelError> {
    let bad = |m: &str| VoxelError::Format(format!("VXG1: {m}"));
    if bytes.len() < 48 || &bytes[..4] != VXG_MAGIC {
        return Err(bad("missing magic or truncated header"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let dims = [u32_at(4), u32_at(8), u32_at(12)];
    let origin = [f64_at(16), f64_at(24), f64_at(32)];
    let voxel_size = f64_at(40);
    let frame = GridFrame::new(dims, origin, voxel_size)?;
    let n = frame.len();
    let body = &bytes[48..];
    if body.len() != n.div_ceil(8) {
        return Err(bad(&format!(
            "expected {} occupancy bytes, found {}",
            n.div_ceil(8),
            body.len()
        )));
    }
    let words = body
        .chunks(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b[..c.len()].copy_from_slice(c);
            u64::from_le_bytes(b)
        })
        .collect();
    VoxelGrid::from_words(frame, words)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &VoxelGrid) -> Result<(), VoxelError> {
    let path = path.as_ref();
    fs::write(path, encode_grid(grid)).map_err(|e| VoxelError::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<VoxelGrid, VoxelError> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| VoxelError::io(path, e))?;
    decode_grid(&buf)
}

pub fn write_ply<W: Write>(mut w: W, cloud: &PointCloud) -> std::io::Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in cloud.points() {
        writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
    }
    Ok(())
}

/// Reads the vertex element of an ASCII PLY; other elements are ignored.
pub fn read_ply<R: BufRead>(r: R) -> Result<PointCloud, VoxelError> {
    let bad = |m: String| VoxelError::Format(format!("PLY: {m}"));
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>, VoxelError> {
        lines
            .next()
            .transpose()
            .map_err(|e| VoxelError::Format(format!("PLY: {e}")))
    };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut n_vertices = None;
    let mut props: Vec<String> = Vec::new();
    let mut elements_before: usize = 0;
    let mut in_vertex = false;
    loop {
        let line = next()?.ok_or_else(|| bad("unexpected end of header".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(bad(format!("unsupported format '{fmt}'")))
            }
            ["element", "vertex", n] => {
                n_vertices = Some(n.parse::<usize>().map_err(|e| bad(e.to_string()))?);
                in_vertex = true;
            }
            ["element", _, n] => {
                if n_vertices.is_none() {
                    elements_before += n.parse::<usize>().map_err(|e| bad(e.to_string()))?;
                }
                in_vertex = false;
            }
            ["property", "list", ..] if in_vertex => {
                return Err(bad("list properties on vertices are not supported".into()))
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = n_vertices.ok_or_else(|| bad("no vertex element".into()))?;
    let col = |name: &str| {
        props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| bad(format!("missing property {name}")))
    };
    let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
    for _ in 0..elements_before {
        next()?;
    }
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let line = next()?.ok_or_else(|| bad(format!("expected {n} vertices, got {i}")))?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() < props.len() {
            return Err(bad(format!("vertex {i}: expected {} values", props.len())));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("vertex {i}: {e}")));
        pts.push(Vector3::new(parse(vals[ix])?, parse(vals[iy])?, parse(vals[iz])?));
    }
    PointCloud::new(pts)
}

pub fn save_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), VoxelError> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| VoxelError::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_ply(&mut w, cloud)
        .and_then(|_| w.flush())
        .map_err(|e| VoxelError::io(path, e))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud, VoxelError> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| VoxelError::io(path, e))?;
    read_ply(BufReader::new(f))
}

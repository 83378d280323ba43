//! Wavefront OBJ, restricted to the subset the toolkit emits: `v x y z`
//! vertices, triangular `f i j k` faces with 1-based plain indices, `#`
//! comments, and blank lines. Anything else is a parse error.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::geom::TriangleMesh;
use crate::{Error, Result};

pub fn read_mesh_obj(path: &Path) -> Result<TriangleMesh> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_ascii_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut v = [0.0f64; 3];
                for c in &mut v {
                    let tok = tokens
                        .next()
                        .ok_or_else(|| Error::parse_at_line(lineno, "vertex needs 3 coordinates"))?;
                    let x: f32 = tok.parse().map_err(|_| {
                        Error::parse_at_line(lineno, format!("bad coordinate {tok:?}"))
                    })?;
                    if !x.is_finite() {
                        return Err(Error::parse_at_line(lineno, "non-finite value"));
                    }
                    *c = x as f64;
                }
                if tokens.next().is_some() {
                    return Err(Error::parse_at_line(lineno, "vertex has extra fields"));
                }
                vertices.push(v);
            }
            Some("f") => {
                let idxs: Vec<&str> = tokens.collect();
                if idxs.len() > 3 {
                    return Err(Error::parse_at_line(
                        lineno,
                        format!("non-triangular face at line {lineno}"),
                    ));
                }
                if idxs.len() < 3 {
                    return Err(Error::parse_at_line(lineno, "face needs 3 indices"));
                }
                let mut f = [0u32; 3];
                for (slot, tok) in f.iter_mut().zip(&idxs) {
                    let i: u64 = tok.parse().map_err(|_| {
                        Error::parse_at_line(lineno, format!("bad face index {tok:?}"))
                    })?;
                    if i == 0 || i > vertices.len() as u64 {
                        return Err(Error::parse_at_line(
                            lineno,
                            format!("face index {i} out of range 1..={}", vertices.len()),
                        ));
                    }
                    *slot = (i - 1) as u32;
                }
                faces.push(f);
            }
            Some(other) => {
                return Err(Error::parse_at_line(
                    lineno,
                    format!("unsupported directive {other:?}"),
                ));
            }
            None => unreachable!("empty lines are skipped"),
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub fn write_mesh_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    mesh.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        // f32 Display prints the shortest round-tripping decimal, so a
        // write/read cycle reproduces coordinates exactly at f32 precision.
        writeln!(w, "v {} {} {}", v[0] as f32, v[1] as f32, v[2] as f32)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

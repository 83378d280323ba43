//! PLY reader/writer for the two layouts the toolkit uses: point clouds
//! (`x y z`, optionally `nx ny nz`, all `float32`) and triangle meshes
//! (the same vertex element plus `list uchar int` faces). Both ASCII and
//! binary little-endian encodings are supported; anything outside this
//! subset is rejected with the offending line named.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::geom::vec3;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLe,
}

#[derive(Debug, Clone)]
pub struct PlyData {
    pub points: Vec<[f64; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
    pub faces: Option<Vec<[u32; 3]>>,
}

pub fn write_ply(
    path: &Path,
    points: &[[f64; 3]],
    normals: Option<&[[f64; 3]]>,
    faces: Option<&[[u32; 3]]>,
    encoding: PlyEncoding,
) -> Result<()> {
    if let Some(ns) = normals {
        if ns.len() != points.len() {
            return Err(Error::invalid(format!(
                "point/normal count mismatch: {} vs {}",
                points.len(),
                ns.len()
            )));
        }
    }
    for (i, p) in points.iter().enumerate() {
        if !vec3::is_finite(*p) || normals.is_some_and(|ns| !vec3::is_finite(ns[i])) {
            return Err(Error::invalid(format!("non-finite value at vertex {i}")));
        }
    }
    if let Some(fs) = faces {
        for (i, f) in fs.iter().enumerate() {
            if f.iter().any(|&idx| idx as usize >= points.len()) {
                return Err(Error::invalid(format!("face {i} references missing vertex")));
            }
        }
    }

    let mut w = BufWriter::new(File::create(path)?);
    let format = match encoding {
        PlyEncoding::Ascii => "ascii",
        PlyEncoding::BinaryLe => "binary_little_endian",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {format} 1.0")?;
    writeln!(w, "element vertex {}", points.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if normals.is_some() {
        writeln!(w, "property float nx")?;
        writeln!(w, "property float ny")?;
        writeln!(w, "property float nz")?;
    }
    if let Some(fs) = faces {
        writeln!(w, "element face {}", fs.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
    }
    writeln!(w, "end_header")?;

    match encoding {
        PlyEncoding::Ascii => {
            for (i, p) in points.iter().enumerate() {
                write!(w, "{} {} {}", p[0] as f32, p[1] as f32, p[2] as f32)?;
                if let Some(ns) = normals {
                    let n = ns[i];
                    write!(w, " {} {} {}", n[0] as f32, n[1] as f32, n[2] as f32)?;
                }
                writeln!(w)?;
            }
            if let Some(fs) = faces {
                for f in fs {
                    writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
                }
            }
        }
        PlyEncoding::BinaryLe => {
            for (i, p) in points.iter().enumerate() {
                for c in p {
                    w.write_all(&(*c as f32).to_le_bytes())?;
                }
                if let Some(ns) = normals {
                    for c in &ns[i] {
                        w.write_all(&(*c as f32).to_le_bytes())?;
                    }
                }
            }
            if let Some(fs) = faces {
                for f in fs {
                    w.write_all(&[3u8])?;
                    for idx in f {
                        w.write_all(&(*idx as i32).to_le_bytes())?;
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

struct Header {
    encoding: PlyEncoding,
    n_vertices: usize,
    has_normals: bool,
    n_faces: Option<usize>,
    /// Number of header lines, for line-numbered errors in ASCII bodies.
    lines: usize,
}

fn type_is_f32(t: &str) -> bool {
    t == "float" || t == "float32"
}

fn parse_header(text: &str) -> Result<Header> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, msg: &str| Error::parse_at_line(line, msg.to_string());

    let (l, first) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
    if first != "ply" {
        return Err(bad(l, "missing ply magic"));
    }

    let mut encoding = None;
    let mut n_vertices = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut n_faces = None;
    let mut face_list_seen = false;
    let mut current_element = "";
    let mut header_lines = 1;

    for (lineno, line) in lines {
        header_lines = lineno;
        if line == "end_header" {
            let encoding = encoding.ok_or_else(|| bad(lineno, "missing format line"))?;
            let n_vertices = n_vertices.ok_or_else(|| bad(lineno, "missing vertex element"))?;
            let has_normals = match vertex_props.len() {
                3 => false,
                6 => true,
                _ => return Err(bad(lineno, "vertex element must have x y z [nx ny nz]")),
            };
            let expect: &[&str] = if has_normals {
                &["x", "y", "z", "nx", "ny", "nz"]
            } else {
                &["x", "y", "z"]
            };
            if vertex_props != expect {
                return Err(bad(lineno, "unsupported vertex property layout"));
            }
            if n_faces.is_some() && !face_list_seen {
                return Err(bad(lineno, "face element lacks vertex_indices list"));
            }
            return Ok(Header {
                encoding,
                n_vertices,
                has_normals,
                n_faces,
                lines: header_lines,
            });
        }
        let mut tok = line.split_ascii_whitespace();
        match tok.next() {
            Some("comment") => {}
            Some("format") => {
                let kind = tok.next().unwrap_or("");
                let version = tok.next().unwrap_or("");
                if version != "1.0" {
                    return Err(bad(lineno, "unsupported PLY version"));
                }
                encoding = Some(match kind {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLe,
                    _ => return Err(bad(lineno, "unsupported PLY format")),
                });
            }
            Some("element") => {
                let name = tok.next().unwrap_or("");
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad(lineno, "bad element count"))?;
                match name {
                    "vertex" => {
                        n_vertices = Some(count);
                        current_element = "vertex";
                    }
                    "face" => {
                        n_faces = Some(count);
                        current_element = "face";
                    }
                    _ => return Err(bad(lineno, "unsupported element")),
                }
            }
            Some("property") => match current_element {
                "vertex" => {
                    let ty = tok.next().unwrap_or("");
                    let name = tok.next().unwrap_or("");
                    if !type_is_f32(ty) {
                        return Err(bad(lineno, "vertex properties must be float32"));
                    }
                    vertex_props.push(name.to_string());
                }
                "face" => {
                    let spec: Vec<&str> = tok.collect();
                    let ok = spec.len() == 4
                        && spec[0] == "list"
                        && (spec[1] == "uchar" || spec[1] == "uint8")
                        && (spec[2] == "int" || spec[2] == "int32")
                        && spec[3] == "vertex_indices";
                    if !ok {
                        return Err(bad(lineno, "unsupported face property"));
                    }
                    face_list_seen = true;
                }
                _ => return Err(bad(lineno, "property outside an element")),
            },
            Some(_) => return Err(bad(lineno, "unsupported header directive")),
            None => {}
        }
    }
    Err(bad(header_lines, "missing end_header"))
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    let bytes = std::fs::read(path)?;
    let marker = b"end_header\n";
    let header_end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .map(|p| p + marker.len())
        .ok_or_else(|| Error::parse_at_offset(0, "missing end_header"))?;
    let header_text = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::parse_at_offset(0, "header is not UTF-8"))?;
    let header = parse_header(header_text)?;
    let body = &bytes[header_end..];

    let mut points = Vec::with_capacity(header.n_vertices);
    let mut normals = header.has_normals.then(Vec::new);
    let mut faces = header.n_faces.map(|_| Vec::new());

    match header.encoding {
        PlyEncoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| Error::parse_at_offset(header_end as u64, "body is not UTF-8"))?;
            let mut lines = text.lines().enumerate().map(|(i, l)| (header.lines + 1 + i, l));
            for _ in 0..header.n_vertices {
                let (lineno, line) = lines
                    .next()
                    .ok_or_else(|| Error::parse_at_line(header.lines, "truncated vertex data"))?;
                let vals: Vec<&str> = line.split_ascii_whitespace().collect();
                let want = if header.has_normals { 6 } else { 3 };
                if vals.len() != want {
                    return Err(Error::parse_at_line(
                        lineno,
                        format!("expected {want} values, found {}", vals.len()),
                    ));
                }
                let mut parsed = [0f64; 6];
                for (slot, tok) in parsed.iter_mut().zip(&vals) {
                    let x: f32 = tok.parse().map_err(|_| {
                        Error::parse_at_line(lineno, format!("bad value {tok:?}"))
                    })?;
                    if !x.is_finite() {
                        return Err(Error::parse_at_line(lineno, "non-finite value"));
                    }
                    *slot = x as f64;
                }
                points.push([parsed[0], parsed[1], parsed[2]]);
                if let Some(ns) = &mut normals {
                    ns.push([parsed[3], parsed[4], parsed[5]]);
                }
            }
            if let Some(fs) = &mut faces {
                for _ in 0..header.n_faces.unwrap() {
                    let (lineno, line) = lines
                        .next()
                        .ok_or_else(|| Error::parse_at_line(header.lines, "truncated face data"))?;
                    let vals: Vec<&str> = line.split_ascii_whitespace().collect();
                    if vals.first() != Some(&"3") {
                        return Err(Error::parse_at_line(
                            lineno,
                            format!("non-triangular face at line {lineno}"),
                        ));
                    }
                    if vals.len() != 4 {
                        return Err(Error::parse_at_line(lineno, "face needs 3 indices"));
                    }
                    let mut f = [0u32; 3];
                    for (slot, tok) in f.iter_mut().zip(&vals[1..]) {
                        let i: i64 = tok.parse().map_err(|_| {
                            Error::parse_at_line(lineno, format!("bad face index {tok:?}"))
                        })?;
                        if i < 0 || i as usize >= header.n_vertices {
                            return Err(Error::parse_at_line(lineno, "face index out of range"));
                        }
                        *slot = i as u32;
                    }
                    fs.push(f);
                }
            }
            if lines.any(|(_, l)| !l.trim().is_empty()) {
                return Err(Error::parse_at_line(header.lines, "trailing data after body"));
            }
        }
        PlyEncoding::BinaryLe => {
            let mut off = 0usize;
            let abs = |off: usize| (header_end + off) as u64;
            let floats_per_vertex = if header.has_normals { 6 } else { 3 };
            for _ in 0..header.n_vertices {
                let need = floats_per_vertex * 4;
                if off + need > body.len() {
                    return Err(Error::parse_at_offset(abs(off), "truncated vertex data"));
                }
                let mut parsed = [0f64; 6];
                for slot in parsed.iter_mut().take(floats_per_vertex) {
                    let x = f32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                    if !x.is_finite() {
                        return Err(Error::parse_at_offset(abs(off), "non-finite value"));
                    }
                    *slot = x as f64;
                    off += 4;
                }
                points.push([parsed[0], parsed[1], parsed[2]]);
                if let Some(ns) = &mut normals {
                    ns.push([parsed[3], parsed[4], parsed[5]]);
                }
            }
            if let Some(fs) = &mut faces {
                for _ in 0..header.n_faces.unwrap() {
                    if off + 13 > body.len() {
                        return Err(Error::parse_at_offset(abs(off), "truncated face data"));
                    }
                    let count = body[off];
                    if count != 3 {
                        return Err(Error::parse_at_offset(
                            abs(off),
                            format!("non-triangular face ({count} vertices)"),
                        ));
                    }
                    off += 1;
                    let mut f = [0u32; 3];
                    for slot in &mut f {
                        let i = i32::from_le_bytes(body[off..off + 4].try_into().unwrap());
                        if i < 0 || i as usize >= header.n_vertices {
                            return Err(Error::parse_at_offset(abs(off), "face index out of range"));
                        }
                        *slot = i as u32;
                        off += 4;
                    }
                    fs.push(f);
                }
            }
            if off != body.len() {
                return Err(Error::parse_at_offset(abs(off), "trailing data after body"));
            }
        }
    }

    Ok(PlyData {
        points,
        normals,
        faces,
    })
}

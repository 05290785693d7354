//! PLY point clouds with `x y z` floats and a confidence-mapped gray color.

use std::io::{BufRead, Read};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

impl PlyFormat {
    fn name(&self) -> &'static str {
        match self {
            PlyFormat::Ascii => "ascii",
            PlyFormat::BinaryLittleEndian => "binary_little_endian",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vertex {
    pub position: [f32; 3],
    pub gray: u8,
}

impl Vertex {
    /// Confidences start at 1 and grow without bound, mapped to
    /// `255 (1 - 1/c)`.
    pub fn from_point(p: [f64; 3], confidence: f64) -> Self {
        let g = if confidence > 1.0 { 255.0 * (1.0 - 1.0 / confidence) } else { 0.0 };
        Vertex {
            position: [p[0] as f32, p[1] as f32, p[2] as f32],
            gray: g.round().clamp(0.0, 255.0) as u8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub comments: Vec<String>,
    pub vertex_count: usize,
    /// `(type, name)` per vertex property, in file order.
    pub properties: Vec<(String, String)>,
}

const PROPERTIES: [(&str, &str); 6] = [("float", "x"), ("float", "y"), ("float", "z"), ("uchar", "red"), ("uchar", "green"), ("uchar", "blue")];

impl PlyHeader {
    pub fn new(format: PlyFormat, vertex_count: usize) -> Self {
        PlyHeader {
            format,
            comments: vec!["sfm point cloud".into()],
            vertex_count,
            properties: PROPERTIES.iter().map(|(t, n)| (t.to_string(), n.to_string())).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("ply\nformat {} 1.0\n", self.format.name());
        for c in &self.comments {
            s += &format!("comment {c}\n");
        }
        s += &format!("element vertex {}\n", self.vertex_count);
        for (t, n) in &self.properties {
            s += &format!("property {t} {n}\n");
        }
        s + "end_header\n"
    }

    /// Reads a header up to and including `end_header`.
    pub fn parse(reader: &mut impl BufRead) -> Result<Self> {
        let bad = |line: usize, msg: &str| CliError::Parse { path: "<ply>".into(), line, msg: msg.into() };
        let mut lines = Vec::new();
        loop {
            let mut l = String::new();
            let n = reader.read_line(&mut l).map_err(|_| bad(lines.len() + 1, "unreadable header"))?;
            if n == 0 {
                return Err(bad(lines.len(), "missing end_header"));
            }
            let l = l.trim_end_matches(['\n', '\r']).to_string();
            let done = l == "end_header";
            lines.push(l);
            if done {
                break;
            }
        }
        if lines[0] != "ply" {
            return Err(bad(1, "missing ply magic"));
        }
        let mut format = None;
        let mut comments = Vec::new();
        let mut vertex_count = None;
        let mut properties = Vec::new();
        for (k, l) in lines.iter().enumerate().skip(1) {
            let f: Vec<&str> = l.split_whitespace().collect();
            match f.as_slice() {
                ["format", "ascii", "1.0"] => format = Some(PlyFormat::Ascii),
                ["format", "binary_little_endian", "1.0"] => format = Some(PlyFormat::BinaryLittleEndian),
                ["comment", ..] => comments.push(l["comment".len()..].trim_start().to_string()),
                ["element", "vertex", n] if vertex_count.is_none() => vertex_count = Some(n.parse().map_err(|_| bad(k + 1, "bad vertex count"))?),
                ["property", t, n] if vertex_count.is_some() => properties.push((t.to_string(), n.to_string())),
                ["end_header"] => {}
                _ => return Err(bad(k + 1, "unsupported header line")),
            }
        }
        Ok(PlyHeader {
            format: format.ok_or_else(|| bad(2, "missing format"))?,
            comments,
            vertex_count: vertex_count.ok_or_else(|| bad(0, "missing vertex element"))?,
            properties,
        })
    }
}

pub fn write_ply(vertices: &[Vertex], format: PlyFormat) -> Vec<u8> {
    let mut out = PlyHeader::new(format, vertices.len()).to_text().into_bytes();
    for v in vertices {
        let [x, y, z] = v.position;
        match format {
            PlyFormat::Ascii => out.extend(format!("{x} {y} {z} {g} {g} {g}\n", g = v.gray).bytes()),
            PlyFormat::BinaryLittleEndian => {
                for c in [x, y, z] {
                    out.extend(c.to_le_bytes());
                }
                out.extend([v.gray; 3]);
            }
        }
    }
    out
}

/// Reads back a cloud written by [`write_ply`].
pub fn read_ply(bytes: &[u8]) -> Result<(PlyHeader, Vec<Vertex>)> {
    let mut reader = bytes;
    let header = PlyHeader::parse(&mut reader)?;
    let expected: Vec<(String, String)> = PROPERTIES.iter().map(|(t, n)| (t.to_string(), n.to_string())).collect();
    let bad = |msg: &str| CliError::Parse { path: "<ply>".into(), line: 0, msg: msg.into() };
    if header.properties != expected {
        return Err(bad("unsupported vertex layout"));
    }
    let mut vertices = Vec::with_capacity(header.vertex_count);
    match header.format {
        PlyFormat::Ascii => {
            let mut text = String::new();
            reader.read_to_string(&mut text).map_err(|_| bad("body is not text"))?;
            let mut lines = text.lines();
            for _ in 0..header.vertex_count {
                let f: Vec<&str> = lines.next().ok_or_else(|| bad("truncated body"))?.split_whitespace().collect();
                if f.len() != 6 {
                    return Err(bad("expected 6 values per vertex"));
                }
                let p: Vec<f32> = f[..3].iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(|_| bad("bad coordinate"))?;
                let gray: u8 = f[3].parse().map_err(|_| bad("bad color"))?;
                vertices.push(Vertex { position: [p[0], p[1], p[2]], gray });
            }
        }
        PlyFormat::BinaryLittleEndian => {
            if reader.len() != 15 * header.vertex_count {
                return Err(bad("body length does not match vertex count"));
            }
            for c in reader.chunks_exact(15) {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
                vertices.push(Vertex { position: [f(0), f(1), f(2)], gray: c[12] });
            }
        }
    }
    Ok((header, vertices))
}

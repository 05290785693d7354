//! Line-oriented text formats. Floats are written in Rust's shortest
//! round-trip form, so every file re-parses to the exact same values.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use sfm_core::eval::Trajectory;
use sfm_core::geometry::Pose;
use sfm_core::graph::SceneGraph;
use sfm_core::optim::TraceEntry;

use crate::error::{CliError, Result};

pub const TRAJECTORY_HEADER: &str = "# id qw qx qy qz tx ty tz";

/// Significant lines with their 1-based line numbers; `#` starts a comment.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(n, l)| (n + 1, l.split('#').next().unwrap_or("").trim())).filter(|(_, l)| !l.is_empty())
}

fn floats<const N: usize>(fields: &[&str]) -> Option<[f64; N]> {
    if fields.len() != N {
        return None;
    }
    let mut out = [0.0; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().ok().filter(|x: &f64| x.is_finite())?;
    }
    Some(out)
}

/// One camera per line, world-to-camera rotation as a unit quaternion;
/// unregistered cameras are written as `<id> unregistered`.
pub fn write_trajectory(t: &Trajectory) -> String {
    let mut s = String::from(TRAJECTORY_HEADER);
    s.push('\n');
    for (id, pose) in t.entries() {
        match pose {
            Some(p) => {
                let q = p.quaternion_wxyz();
                let t = p.translation;
                let _ = writeln!(s, "{id} {} {} {} {} {} {} {}", q[0], q[1], q[2], q[3], t.x, t.y, t.z);
            }
            None => {
                let _ = writeln!(s, "{id} unregistered");
            }
        }
    }
    s
}

pub fn parse_trajectory(text: &str, path: &Path) -> Result<Trajectory> {
    let mut entries = Vec::new();
    for (n, line) in content_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let id: usize = f[0].parse().map_err(|_| CliError::parse(path, n, "bad camera id"))?;
        if f.len() == 2 && f[1] == "unregistered" {
            entries.push((id, None));
            continue;
        }
        let v: [f64; 7] = floats(&f[1..]).ok_or_else(|| CliError::parse(path, n, "expected id and 7 finite numbers"))?;
        if v[..4].iter().all(|&x| x == 0.0) {
            return Err(CliError::parse(path, n, "zero quaternion"));
        }
        entries.push((id, Some(pose_from_fields(&v))));
    }
    Trajectory::new(entries).map_err(|e| CliError::parse(path, 0, e.to_string()))
}

/// Quaternions already of unit norm are kept bit for bit so written files
/// re-parse exactly; anything else is normalized.
fn pose_from_fields(v: &[f64; 7]) -> Pose {
    let q = Quaternion::new(v[0], v[1], v[2], v[3]);
    if (q.norm() - 1.0).abs() < 1e-12 {
        Pose::new(UnitQuaternion::new_unchecked(q), Vector3::new(v[4], v[5], v[6]))
    } else {
        Pose::from_raw([v[0], v[1], v[2], v[3]], [v[4], v[5], v[6]])
    }
}

/// `nodes <n>`, `keyframes <ids...>` and one `<a> <b>` line per edge.
pub fn write_graph(g: &SceneGraph) -> String {
    let mut s = format!("nodes {}\nkeyframes", g.n);
    for k in &g.keyframes {
        let _ = write!(s, " {k}");
    }
    s.push('\n');
    for (a, b) in &g.edges {
        let _ = writeln!(s, "{a} {b}");
    }
    s
}

pub fn parse_graph(text: &str, path: &Path) -> Result<SceneGraph> {
    let mut n = None;
    let mut keyframes = None;
    let mut edges = Vec::new();
    for (line_no, line) in content_lines(text) {
        let bad = |msg: &str| CliError::parse(path, line_no, msg);
        let f: Vec<&str> = line.split_whitespace().collect();
        let ids = |fs: &[&str]| fs.iter().map(|x| x.parse::<usize>()).collect::<Result<Vec<_>, _>>();
        match f[0] {
            "nodes" if n.is_none() && f.len() == 2 => n = Some(f[1].parse::<usize>().map_err(|_| bad("bad node count"))?),
            "keyframes" if keyframes.is_none() => keyframes = Some(ids(&f[1..]).map_err(|_| bad("bad keyframe id"))?),
            _ if f.len() == 2 => {
                let e = ids(&f).map_err(|_| bad("expected `<a> <b>`"))?;
                edges.push((e[0], e[1]));
            }
            _ => return Err(bad("unrecognized line")),
        }
    }
    let n = n.ok_or_else(|| CliError::parse(path, 0, "missing `nodes` line"))?;
    SceneGraph::new(n, keyframes.unwrap_or_default(), edges).map_err(|e| CliError::parse(path, 0, e.to_string()))
}

/// Per-camera intrinsics with the principal point at the image center.
pub fn write_intrinsics(focals: &[f64], sizes: &[(usize, usize)]) -> String {
    let mut s = String::from("# id focal width height cx cy\n");
    for (k, (f, (w, h))) in focals.iter().zip(sizes).enumerate() {
        let _ = writeln!(s, "{k} {f} {w} {h} {} {}", *w as f64 / 2.0, *h as f64 / 2.0);
    }
    s
}

/// Focal lengths by camera id.
pub fn parse_intrinsics(text: &str, path: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in content_lines(text) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let ok = f.len() == 6 && f[0].parse::<usize>().ok() == Some(out.len());
        let focal = f.get(1).and_then(|x| x.parse::<f64>().ok()).filter(|x| ok && x.is_finite());
        out.push(focal.ok_or_else(|| CliError::parse(path, n, "expected `<id> <focal> <w> <h> <cx> <cy>` in id order"))?);
    }
    Ok(out)
}

pub fn write_trace(trace: &[TraceEntry]) -> String {
    let mut s = String::from("# stage iter lr loss skipped\n");
    for e in trace {
        let _ = writeln!(s, "{} {} {} {} {}", e.stage, e.iter, e.lr, e.loss, e.skipped);
    }
    s
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<TraceEntry>> {
    content_lines(text)
        .map(|(n, line)| {
            let f: Vec<&str> = line.split_whitespace().collect();
            let entry = (f.len() == 5)
                .then(|| Some(TraceEntry { stage: f[0].parse().ok()?, iter: f[1].parse().ok()?, lr: f[2].parse().ok()?, loss: f[3].parse().ok()?, skipped: f[4].parse().ok()? }))
                .flatten();
            entry.ok_or_else(|| CliError::parse(path, n, "expected `<stage> <iter> <lr> <loss> <skipped>`"))
        })
        .collect()
}

/// `key value` report lines, as printed by `eval`.
pub fn write_report(entries: &[(String, f64)]) -> String {
    entries.iter().map(|(k, v)| format!("{k} {v}\n")).collect()
}

pub fn parse_report(text: &str, path: &Path) -> Result<Vec<(String, f64)>> {
    content_lines(text)
        .map(|(n, line)| {
            let (k, v) = line.split_once(' ').ok_or_else(|| CliError::parse(path, n, "expected `<key> <value>`"))?;
            let v = v.trim().parse().map_err(|_| CliError::parse(path, n, "bad value"))?;
            Ok((k.to_string(), v))
        })
        .collect()
}

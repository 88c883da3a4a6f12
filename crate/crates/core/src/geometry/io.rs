//! ASCII PLY point clouds and OBJ triangle meshes.

use std::io::{BufRead, Write};

use crate::scalar::Real;

use super::{Frame, GeometryError, Point3, PointCloud, TriMesh};

fn parse_err(line: usize, msg: impl Into<String>) -> GeometryError {
    GeometryError::Parse { line, msg: msg.into() }
}

/// Writes `cloud` as ASCII PLY with float x/y/z vertex properties. The frame
/// tag is recorded in a `comment frame` line.
pub fn write_ply<T: Real, W: Write>(mut out: W, cloud: &PointCloud<T>) -> Result<(), GeometryError> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "comment frame {}", cloud.frame().as_str())?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(out, "property float {axis}")?;
    }
    writeln!(out, "end_header")?;
    for p in cloud.points() {
        // f32 is the declared property type
        let (x, y, z) = (p.x.as_f64() as f32, p.y.as_f64() as f32, p.z.as_f64() as f32);
        writeln!(out, "{x} {y} {z}")?;
    }
    Ok(())
}

struct Element {
    name: String,
    count: usize,
    props: Vec<String>,
}

/// Reads the `vertex` element of an ASCII PLY file. Extra vertex properties
/// and other elements (faces, ...) are skipped. Frame defaults to Sensor
/// unless a `comment frame canonical` line is present.
pub fn read_ply<T: Real, R: BufRead>(input: R) -> Result<PointCloud<T>, GeometryError> {
    let mut lines = input.lines().enumerate();
    let mut next = |expect: &str| -> Result<(usize, String), GeometryError> {
        match lines.next() {
            Some((i, l)) => Ok((i + 1, l?)),
            None => Err(parse_err(0, format!("unexpected end of file, expected {expect}"))),
        }
    };

    let (n, magic) = next("ply magic")?;
    if magic.trim() != "ply" {
        return Err(parse_err(n, "missing 'ply' magic"));
    }
    let mut frame = Frame::Sensor;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (n, line) = next("end_header")?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => return Err(parse_err(n, format!("unsupported PLY format '{other}'"))),
            ["comment", "frame", f] => {
                frame = match *f {
                    "canonical" => Frame::Canonical,
                    "sensor" => Frame::Sensor,
                    other => return Err(parse_err(n, format!("unknown frame '{other}'"))),
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(n, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(n, "property before element"))?;
                el.props.push("<list>".into());
            }
            ["property", _ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(n, "property before element"))?;
                el.props.push(name.to_string());
            }
            ["end_header"] => break,
            _ => return Err(parse_err(n, format!("unrecognized header line '{line}'"))),
        }
    }

    let mut points = None;
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                next("element data")?;
            }
            continue;
        }
        let idx = |axis: &str| el.props.iter().position(|p| p == axis);
        let (Some(ix), Some(iy), Some(iz)) = (idx("x"), idx("y"), idx("z")) else {
            return Err(parse_err(0, "vertex element lacks x/y/z"));
        };
        let mut pts = Vec::with_capacity(el.count);
        for _ in 0..el.count {
            let (n, line) = next("vertex data")?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| parse_err(n, format!("bad number '{t}'"))))
                .collect::<Result<_, _>>()?;
            let get = |i: usize| vals.get(i).copied().ok_or_else(|| parse_err(n, "too few vertex values"));
            pts.push(Point3::new(T::of(get(ix)?), T::of(get(iy)?), T::of(get(iz)?)));
        }
        points = Some(pts);
    }
    let points = points.ok_or_else(|| parse_err(0, "no vertex element"))?;
    PointCloud::new(points, frame)
}

/// Writes `v` and `f` records (1-based indices).
pub fn write_obj<T: Real, W: Write>(mut out: W, mesh: &TriMesh<T>) -> Result<(), GeometryError> {
    for v in mesh.vertices() {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Reads `v` and `f` records; other records are ignored. Face corners may
/// carry `/vt/vn` suffixes and negative (relative) indices. Polygons are
/// fan-triangulated.
pub fn read_obj<T: Real, R: BufRead>(input: R) -> Result<TriMesh<T>, GeometryError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let vals: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| parse_err(n, format!("bad number '{t}'"))))
                    .collect::<Result<_, _>>()?;
                if vals.len() != 3 {
                    return Err(parse_err(n, "vertex needs three coordinates"));
                }
                vertices.push(Point3::new(T::of(vals[0]), T::of(vals[1]), T::of(vals[2])));
            }
            Some("f") => {
                let corners: Vec<usize> = toks
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or("");
                        let raw: i64 = head.parse().map_err(|_| parse_err(n, format!("bad face index '{t}'")))?;
                        let idx = if raw > 0 {
                            raw - 1
                        } else if raw < 0 {
                            vertices.len() as i64 + raw
                        } else {
                            -1
                        };
                        if idx < 0 {
                            return Err(parse_err(n, format!("invalid face index '{t}'")));
                        }
                        Ok(idx as usize)
                    })
                    .collect::<Result<_, _>>()?;
                if corners.len() < 3 {
                    return Err(parse_err(n, "face needs at least three corners"));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, triangles)
}

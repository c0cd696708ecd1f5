use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    byte_to_channel, channel_to_byte, instance_color, ClassLegend, Environment, LabeledPoint,
    NUM_CLASSES,
};
use crate::error::{Error, Result};
use crate::Vec3;

/// Per-point color source for [`export_colored`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ColorSource {
    /// Legend color of a semantic class.
    Class(usize),
    /// Hashed color of an instance id.
    Instance(u64),
    /// Explicit color in `[0, 1]`, e.g. a PCA-reduced embedding.
    Embedding([f64; 3]),
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_environment(&text, path)
}

/// Parses the 8-column environment text format. `origin` is only used in
/// error messages.
pub fn parse_environment(text: &str, origin: &Path) -> Result<Environment> {
    let mut points = Vec::new();
    let mut floor_z = None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut parts = comment.split_whitespace();
            if parts.next() == Some("floor_z") {
                let value = parts
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse(origin, lineno, "bad floor_z header"))?;
                floor_z = Some(value);
            }
            continue;
        }
        points.push(parse_point_line(line, origin, lineno)?);
    }
    if points.is_empty() {
        return Err(Error::Validation(format!("{}: no points", origin.display())));
    }
    Environment::new(points, floor_z)
}

/// Parses one `x y z r g b class_id instance_id` line.
pub(crate) fn parse_point_line(line: &str, origin: &Path, lineno: usize) -> Result<LabeledPoint> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 8 {
        return Err(Error::parse(
            origin,
            lineno,
            format!("expected 8 fields, found {}", fields.len()),
        ));
    }
    let float = |i: usize| {
        fields[i]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::parse(origin, lineno, format!("bad number '{}'", fields[i])))
    };
    let byte = |i: usize| {
        fields[i]
            .parse::<u8>()
            .map_err(|_| Error::parse(origin, lineno, format!("bad color '{}'", fields[i])))
    };
    let position = Vec3::new(float(0)?, float(1)?, float(2)?);
    let color = [
        byte_to_channel(byte(3)?),
        byte_to_channel(byte(4)?),
        byte_to_channel(byte(5)?),
    ];
    let gt_class = fields[6]
        .parse::<usize>()
        .map_err(|_| Error::parse(origin, lineno, format!("bad class id '{}'", fields[6])))?;
    if gt_class >= NUM_CLASSES {
        return Err(Error::Validation(format!(
            "{}:{lineno}: class id {gt_class} out of range [0,{}]",
            origin.display(),
            NUM_CLASSES - 1
        )));
    }
    let gt_instance = fields[7]
        .parse::<u64>()
        .map_err(|_| Error::parse(origin, lineno, format!("bad instance id '{}'", fields[7])))?;
    Ok(LabeledPoint {
        position,
        color,
        gt_class,
        gt_instance,
    })
}

pub(crate) fn format_point_line(out: &mut String, p: &LabeledPoint) {
    let [r, g, b] = p.color.map(channel_to_byte);
    let _ = writeln!(
        out,
        "{} {} {} {} {} {} {} {}",
        p.position.x, p.position.y, p.position.z, r, g, b, p.gt_class, p.gt_instance
    );
}

pub fn write_environment(env: &Environment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# floor_z {}\n", env.floor_z);
    for p in &env.points {
        format_point_line(&mut out, p);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes an ASCII PLY with `x y z red green blue` vertices.
pub fn export_colored(
    points: &[(Vec3, ColorSource)],
    legend: &ClassLegend,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(64 + points.len() * 40);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str(
        "property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for (pos, source) in points {
        let rgb = match *source {
            ColorSource::Class(c) => legend
                .color(c)
                .ok_or_else(|| Error::Argument(format!("class {c} has no legend color")))?,
            ColorSource::Instance(id) => instance_color(id),
            ColorSource::Embedding(c) => {
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Argument(format!(
                        "embedding color {c:?} outside [0,1]"
                    )));
                }
                c.map(channel_to_byte)
            }
        };
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            pos.x, pos.y, pos.z, rgb[0], rgb[1], rgb[2]
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads back an ASCII PLY written by [`export_colored`].
pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<(Vec3, [u8; 3])>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let mut count = None;
    for (idx, line) in lines.by_ref() {
        let line = line.trim();
        if idx == 0 && line != "ply" {
            return Err(Error::parse(path, 1, "missing 'ply' magic"));
        }
        if let Some(n) = line.strip_prefix("element vertex ") {
            count = Some(
                n.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(path, idx + 1, "bad vertex count"))?,
            );
        }
        if line == "end_header" {
            break;
        }
    }
    let count = count.ok_or_else(|| Error::parse(path, 0, "no vertex element"))?;
    let mut out = Vec::with_capacity(count);
    for (idx, line) in lines.take(count) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(path, idx + 1, "expected 6 vertex fields"));
        }
        let num = |i: usize| {
            f[i].parse::<f64>()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad number '{}'", f[i])))
        };
        let byte = |i: usize| {
            f[i].parse::<u8>()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad color '{}'", f[i])))
        };
        out.push((Vec3::new(num(0)?, num(1)?, num(2)?), [byte(3)?, byte(4)?, byte(5)?]));
    }
    if out.len() != count {
        return Err(Error::parse(path, 0, "truncated vertex list"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> &'static Path {
        Path::new("env.txt")
    }

    #[test]
    fn parses_single_line() {
        let env = parse_environment("1.0 2.0 0.5 255 0 0 2 7\n", origin()).unwrap();
        let p = &env.points[0];
        assert_eq!(p.position, Vec3::new(1.0, 2.0, 0.5));
        assert_eq!(p.color, [1.0, 0.0, 0.0]);
        assert_eq!(p.gt_class, 2);
        assert_eq!(p.gt_instance, 7);
        assert_eq!(env.floor_z, 0.5);
    }

    #[test]
    fn empty_file_has_no_points() {
        let err = parse_environment("# only a comment\n\n", origin()).unwrap_err();
        assert!(err.to_string().contains("no points"), "{err}");
    }

    #[test]
    fn class_out_of_range_names_line() {
        let text = "0 0 0 1 1 1 0 0\n0 0 0 1 1 1 13 0\n";
        let err = parse_environment(text, origin()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("env.txt:2"), "{err}");
    }

    #[test]
    fn malformed_line_reports_number() {
        let err = parse_environment("0 0 0 1 1 1 0 0\n0 0 x 1 1 1 0 0\n", origin()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn floor_header() {
        let env = parse_environment("# floor_z -0.25\n0 0 0 0 0 0 1 0\n", origin()).unwrap();
        assert_eq!(env.floor_z, -0.25);
    }

    #[test]
    fn export_modes() {
        let dir = tempfile::tempdir().unwrap();
        let legend = ClassLegend::default();
        let path = dir.path().join("c.ply");
        export_colored(
            &[(Vec3::new(1.0, 2.0, 3.0), ColorSource::Class(2))],
            &legend,
            &path,
        )
        .unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back[0].1, legend.color(2).unwrap());

        let pts = [
            (Vec3::zeros(), ColorSource::Instance(42)),
            (Vec3::new(1.0, 0.0, 0.0), ColorSource::Instance(42)),
        ];
        export_colored(&pts, &legend, &path).unwrap();
        let back = read_ply(&path).unwrap();
        assert_eq!(back[0].1, back[1].1);

        let pts = [
            (Vec3::zeros(), ColorSource::Embedding([0.0; 3])),
            (Vec3::zeros(), ColorSource::Embedding([1.0; 3])),
            (Vec3::zeros(), ColorSource::Embedding([0.5; 3])),
        ];
        export_colored(&pts, &legend, &path).unwrap();
        let reds: Vec<u8> = read_ply(&path).unwrap().iter().map(|p| p.1[0]).collect();
        assert_eq!(reds, vec![0, 255, 128]);

        let bad = [(Vec3::zeros(), ColorSource::Embedding([1.5, 0.0, 0.0]))];
        assert!(export_colored(&bad, &legend, &path).is_err());
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let legend = ClassLegend::default();
        let err = export_colored(&[], &legend, "/nonexistent-dir/x/y.ply").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}

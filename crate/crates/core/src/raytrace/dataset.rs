//! On-disk scan datasets: one text file per scan plus an ordered manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Scan, ScanPose};
use crate::error::{Error, Result};
use crate::pointcloud::{format_point_line, parse_point_line};
use crate::Vec3;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Reads a trajectory file with one `x y z` waypoint per line.
pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::parse(path, idx + 1, "bad number"))?;
        if v.len() != 3 {
            return Err(Error::parse(path, idx + 1, "expected 'x y z'"));
        }
        out.push(Vec3::new(v[0], v[1], v[2]));
    }
    if out.is_empty() {
        return Err(Error::Validation(format!("{}: no waypoints", path.display())));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub file: String,
    pub pose: ScanPose,
}

/// An opened scan dataset. Scans are read on demand.
#[derive(Clone, Debug)]
pub struct ScanDataset {
    pub dir: PathBuf,
    /// Floor height recorded by the generator, if any.
    pub floor_z: Option<f64>,
    pub entries: Vec<ManifestEntry>,
}

impl ScanDataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut floor_z = None;
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(c) = line.strip_prefix('#') {
                let mut parts = c.split_whitespace();
                if parts.next() == Some("floor_z") {
                    floor_z = parts.next().and_then(|v| v.parse().ok());
                    if floor_z.is_none() {
                        return Err(Error::parse(&path, idx + 1, "bad floor_z header"));
                    }
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(Error::parse(&path, idx + 1, "expected 'scan_file x y z'"));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(&path, idx + 1, format!("bad number '{s}'")))
            };
            entries.push(ManifestEntry {
                file: f[0].to_string(),
                pose: ScanPose::new(Vec3::new(num(f[1])?, num(f[2])?, num(f[3])?)),
            });
        }
        if entries.is_empty() {
            return Err(Error::Validation(format!("{}: empty manifest", path.display())));
        }
        Ok(ScanDataset {
            dir,
            floor_z,
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_scan(&self, i: usize) -> Result<Scan> {
        let entry = self
            .entries
            .get(i)
            .ok_or_else(|| Error::Argument(format!("scan {i} out of range")))?;
        let path = self.dir.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut points = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            points.push(parse_point_line(line, &path, idx + 1)?);
        }
        Ok(Scan {
            pose: entry.pose,
            points,
        })
    }

    pub fn load_all(&self) -> Result<Vec<Scan>> {
        (0..self.len()).map(|i| self.load_scan(i)).collect()
    }
}

/// Writes `scan_NNNNN.txt` files and the manifest into `dir`.
pub fn write_scan_dataset(dir: impl AsRef<Path>, scans: &[Scan], floor_z: f64) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = format!("# floor_z {floor_z}\n");
    for (i, scan) in scans.iter().enumerate() {
        let name = format!("scan_{i:05}.txt");
        let mut body = String::with_capacity(scan.points.len() * 48);
        for p in &scan.points {
            format_point_line(&mut body, p);
        }
        let path = dir.join(&name);
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        let p = scan.pose.position;
        let _ = writeln!(manifest, "{name} {} {} {}", p.x, p.y, p.z);
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::LabeledPoint;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scans = vec![
            Scan {
                pose: ScanPose::new(Vec3::new(0.0, 0.0, 1.5)),
                points: vec![LabeledPoint::new(Vec3::new(0.1, 0.2, 0.3), [1.0, 0.0, 0.0], 1, 4)],
            },
            Scan {
                pose: ScanPose::new(Vec3::new(0.2, 0.0, 1.5)),
                points: vec![],
            },
        ];
        write_scan_dataset(dir.path(), &scans, -0.5).unwrap();
        let ds = ScanDataset::open(dir.path()).unwrap();
        assert_eq!(ds.floor_z, Some(-0.5));
        assert_eq!(ds.len(), 2);
        let s0 = ds.load_scan(0).unwrap();
        assert_eq!(s0.points, scans[0].points);
        assert_eq!(s0.pose, scans[0].pose);
        assert!(ds.load_scan(1).unwrap().points.is_empty());
    }

    #[test]
    fn missing_scan_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "gone.txt 0 0 0\n").unwrap();
        let ds = ScanDataset::open(dir.path()).unwrap();
        let err = ds.load_scan(0).unwrap_err();
        assert!(err.to_string().contains("gone.txt"), "{err}");
    }

    #[test]
    fn empty_manifest_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "# floor_z 0\n").unwrap();
        assert!(ScanDataset::open(dir.path()).is_err());
    }

    #[test]
    fn trajectory_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.txt");
        fs::write(&p, "# path\n0 0 1.5\n1 0 1.5\n").unwrap();
        assert_eq!(load_trajectory(&p).unwrap().len(), 2);
        fs::write(&p, "0 0\n").unwrap();
        assert!(load_trajectory(&p).is_err());
    }
}

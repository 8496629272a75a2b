//! KITTI raw-data ingestion: Velodyne point binaries, OXTS nav records,
//! per-frame timestamps, and the IMU-to-LiDAR extrinsic.

use super::{FrameSource, GpsFix, GroundTruthFrame, IngestError, SensorFrame};
use crate::geometry::{Frame, Point3, PointCloud, RigidTransform};
use crate::pose_ekf::ImuSample;
use nalgebra::{Matrix3, Vector3};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A parsed Velodyne scan plus the count of dropped non-finite points.
#[derive(Debug, Clone)]
pub struct VelodyneScan {
    pub cloud: PointCloud,
    pub dropped: usize,
}

/// Reads a KITTI Velodyne binary: consecutive little-endian f32 quadruples
/// (x, y, z, reflectance). Points with non-finite coordinates are dropped and
/// counted rather than failing the frame.
pub fn read_velodyne_bin(path: &Path) -> Result<VelodyneScan, IngestError> {
    let mut file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| io_err(path, e))?;
    if bytes.len() % 16 != 0 {
        return Err(IngestError::MalformedVelodyne {
            path: path.display().to_string(),
            len: bytes.len() as u64,
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0usize;
    for quad in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(quad[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        let (x, y, z, intensity) = (f(0), f(1), f(2), f(3));
        if x.is_finite() && y.is_finite() && z.is_finite() {
            points.push(Point3::new(x, y, z, intensity));
        } else {
            dropped += 1;
        }
    }
    Ok(VelodyneScan {
        cloud: PointCloud::new(points, Frame::Sensor, 0.0),
        dropped,
    })
}

/// Writes a cloud in the Velodyne binary layout (f32, little-endian).
pub fn write_velodyne_bin(path: &Path, cloud: &PointCloud) -> Result<(), IngestError> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))
}

/// One OXTS navigation record (the fields this pipeline consumes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OxtsRecord {
    pub lat: f64,
    pub lon: f64,
    pub alt: f64,
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Velocity toward north / east / forward, m/s.
    pub vn: f64,
    pub ve: f64,
    pub vf: f64,
    /// Body accelerations, m/s^2 (fields 12-14).
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
    /// Body angular rates, rad/s (fields 18-20).
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
}

/// Parses an OXTS text file: one whitespace-delimited record per line with at
/// least 30 numeric fields in the KITTI layout.
pub fn read_oxts(path: &Path) -> Result<Vec<OxtsRecord>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |what: String| IngestError::Parse {
            path: path.display().to_string(),
            line: line_no + 1,
            what,
        };
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|_| parse_err(format!("non-numeric field '{tok}'")))
            })
            .collect::<Result<_, _>>()?;
        if fields.len() < 30 {
            return Err(parse_err(format!(
                "expected at least 30 fields, got {}",
                fields.len()
            )));
        }
        records.push(OxtsRecord {
            lat: fields[0],
            lon: fields[1],
            alt: fields[2],
            roll: fields[3],
            pitch: fields[4],
            yaw: fields[5],
            vn: fields[6],
            ve: fields[7],
            vf: fields[8],
            ax: fields[11],
            ay: fields[12],
            az: fields[13],
            wx: fields[17],
            wy: fields[18],
            wz: fields[19],
        });
    }
    Ok(records)
}

/// Parses a KITTI timestamps file (ISO 8601 with nanoseconds, one per line)
/// into seconds relative to the first entry.
pub fn read_timestamps(path: &Path) -> Result<Vec<f64>, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut first: Option<chrono::NaiveDateTime> = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let stamp = chrono::NaiveDateTime::parse_from_str(line, "%Y-%m-%d %H:%M:%S%.f").map_err(
            |e| IngestError::Parse {
                path: path.display().to_string(),
                line: line_no + 1,
                what: format!("bad timestamp: {e}"),
            },
        )?;
        let base = *first.get_or_insert(stamp);
        let delta = stamp - base;
        out.push(delta.num_nanoseconds().unwrap_or(0) as f64 * 1e-9);
    }
    Ok(out)
}

/// Reads a KITTI `calib_imu_to_velo.txt` (R and T lines) and returns the
/// velodyne-to-IMU transform, i.e. the inverse of what the file stores.
pub fn read_imu_to_velo_calib(path: &Path) -> Result<RigidTransform, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rotation = None;
    let mut translation = None;
    for (line_no, line) in text.lines().enumerate() {
        let parse_err = |what: String| IngestError::Parse {
            path: path.display().to_string(),
            line: line_no + 1,
            what,
        };
        let numbers = |rest: &str| -> Result<Vec<f64>, IngestError> {
            rest.split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>()
                        .map_err(|_| parse_err(format!("non-numeric field '{tok}'")))
                })
                .collect()
        };
        if let Some(rest) = line.strip_prefix("R:") {
            let v = numbers(rest)?;
            if v.len() != 9 {
                return Err(parse_err(format!("R needs 9 values, got {}", v.len())));
            }
            rotation = Some(Matrix3::from_row_slice(&v));
        } else if let Some(rest) = line.strip_prefix("T:") {
            let v = numbers(rest)?;
            if v.len() != 3 {
                return Err(parse_err(format!("T needs 3 values, got {}", v.len())));
            }
            translation = Some(Vector3::new(v[0], v[1], v[2]));
        }
    }
    let (rotation, translation) = match (rotation, translation) {
        (Some(r), Some(t)) => (r, t),
        _ => {
            return Err(IngestError::MissingData {
                what: format!("R/T lines in {}", path.display()),
            })
        }
    };
    // The file maps IMU coordinates into the velodyne frame; clouds need the
    // opposite direction.
    let imu_to_velo =
        RigidTransform::new(rotation, translation).map_err(|e| IngestError::Parse {
            path: path.display().to_string(),
            line: 0,
            what: format!("calibration rotation invalid: {e}"),
        })?;
    Ok(imu_to_velo.inverse())
}

/// Streaming reader over a KITTI raw drive directory:
///
/// ```text
/// <root>/velodyne_points/data/*.bin
/// <root>/velodyne_points/timestamps.txt
/// <root>/oxts/data/*.txt
/// <root>/oxts/timestamps.txt        (fallback when the velodyne one is absent)
/// <root>/calib_imu_to_velo.txt      (optional; identity when absent)
/// ```
pub struct KittiReader {
    bins: Vec<PathBuf>,
    oxts: Vec<PathBuf>,
    timestamps: Vec<f64>,
    velo_to_imu: RigidTransform,
    cursor: usize,
    last_timestamp: Option<f64>,
    dropped_points: usize,
}

impl KittiReader {
    pub fn open(root: &Path) -> Result<Self, IngestError> {
        let list_sorted = |dir: PathBuf, ext: &str| -> Result<Vec<PathBuf>, IngestError> {
            let entries = std::fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?;
            let mut files: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == ext))
                .collect();
            files.sort();
            Ok(files)
        };
        let bins = list_sorted(root.join("velodyne_points/data"), "bin")?;
        let oxts = list_sorted(root.join("oxts/data"), "txt")?;
        if bins.is_empty() {
            return Err(IngestError::MissingData {
                what: format!("no .bin files under {}", root.display()),
            });
        }
        if bins.len() != oxts.len() {
            return Err(IngestError::CountMismatch {
                clouds: bins.len(),
                nav: oxts.len(),
            });
        }

        let velo_stamps = root.join("velodyne_points/timestamps.txt");
        let oxts_stamps = root.join("oxts/timestamps.txt");
        let timestamps = if velo_stamps.is_file() {
            read_timestamps(&velo_stamps)?
        } else if oxts_stamps.is_file() {
            read_timestamps(&oxts_stamps)?
        } else {
            return Err(IngestError::MissingData {
                what: format!("timestamps.txt under {}", root.display()),
            });
        };
        if timestamps.len() < bins.len() {
            return Err(IngestError::CountMismatch {
                clouds: bins.len(),
                nav: timestamps.len(),
            });
        }

        let calib = root.join("calib_imu_to_velo.txt");
        let velo_to_imu = if calib.is_file() {
            read_imu_to_velo_calib(&calib)?
        } else {
            RigidTransform::identity()
        };

        Ok(Self {
            bins,
            oxts,
            timestamps,
            velo_to_imu,
            cursor: 0,
            last_timestamp: None,
            dropped_points: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Total non-finite points dropped so far.
    pub fn dropped_points(&self) -> usize {
        self.dropped_points
    }
}

impl FrameSource for KittiReader {
    fn next_frame(
        &mut self,
    ) -> Result<Option<(SensorFrame, Option<GroundTruthFrame>)>, IngestError> {
        if self.cursor >= self.bins.len() {
            return Ok(None);
        }
        let idx = self.cursor;
        self.cursor += 1;

        let scan = read_velodyne_bin(&self.bins[idx])?;
        self.dropped_points += scan.dropped;
        let mut cloud = crate::geometry::transform_cloud(&scan.cloud, &self.velo_to_imu, Frame::Sensor);

        let records = read_oxts(&self.oxts[idx])?;
        let record = records.first().ok_or_else(|| IngestError::Parse {
            path: self.oxts[idx].display().to_string(),
            line: 0,
            what: "empty oxts file".to_string(),
        })?;

        let timestamp = self.timestamps[idx];
        if let Some(last) = self.last_timestamp {
            if timestamp <= last {
                return Err(IngestError::NonMonotonicTimestamps { index: idx });
            }
        }
        self.last_timestamp = Some(timestamp);
        cloud.timestamp = timestamp;

        let frame = SensorFrame {
            cloud,
            imu: ImuSample::new(
                Vector3::new(record.ax, record.ay, record.az),
                Vector3::new(record.wx, record.wy, record.wz),
            ),
            gps: GpsFix {
                lat: record.lat,
                lon: record.lon,
                alt: record.alt,
            },
            velocity: Vector3::new(record.ve, record.vn, 0.0),
            rpy: Vector3::new(record.roll, record.pitch, record.yaw),
            timestamp,
        };
        Ok(Some((frame, None)))
    }
}

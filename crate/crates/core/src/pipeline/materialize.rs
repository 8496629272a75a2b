//! Scenario materialization (KITTI-layout output of a synthetic stream) and
//! standalone performance probes.

use super::{io_err, PipelineError};
use crate::geometry::{Frame, Point3, PointCloud};
use crate::ingest::{
    write_velodyne_bin, FrameSource, SensorFrame, SyntheticScenario, SyntheticStream,
};
use crate::segmentation::{build_kdtree, dbscan, DbscanConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

fn format_oxts_line(frame: &SensorFrame) -> String {
    let v = frame.velocity;
    let vf = v.x.hypot(v.y);
    let fields: Vec<f64> = vec![
        frame.gps.lat,
        frame.gps.lon,
        frame.gps.alt,
        frame.rpy.x,
        frame.rpy.y,
        frame.rpy.z,
        v.y,       // vn
        v.x,       // ve
        vf,        // vf
        0.0,       // vl
        v.z,       // vu
        frame.imu.accel.x,
        frame.imu.accel.y,
        frame.imu.accel.z,
        0.0,
        0.0,
        0.0,
        frame.imu.gyro.x,
        frame.imu.gyro.y,
        frame.imu.gyro.z,
        0.0,
        0.0,
        0.0,
        0.01,
        0.01,
    ];
    let mut out: Vec<String> = fields.iter().map(|f| format!("{f:.12}")).collect();
    out.extend(["4", "11", "5", "5", "5"].map(String::from));
    out.join(" ")
}

fn format_timestamp(seconds: f64) -> String {
    let base = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
        .unwrap()
        .and_hms_opt(12, 0, 0)
        .unwrap();
    let nanos = (seconds * 1e9).round() as i64;
    let stamp = base + chrono::Duration::nanoseconds(nanos);
    stamp.format("%Y-%m-%d %H:%M:%S%.9f").to_string()
}

/// Writes a synthetic scenario to disk in the KITTI raw-drive layout
/// (`velodyne_points/`, `oxts/`, timestamps) plus `ground_truth.jsonl`, so
/// the result can be re-read through the KITTI ingestion path.
pub fn materialize_scenario(
    scenario: SyntheticScenario,
    out: &Path,
) -> Result<u64, PipelineError> {
    std::fs::create_dir_all(out.join("velodyne_points/data")).map_err(|e| io_err(out, e))?;
    std::fs::create_dir_all(out.join("oxts/data")).map_err(|e| io_err(out, e))?;

    let mut stream = SyntheticStream::new(scenario);
    let mut velo_stamps = String::new();
    let mut oxts_stamps = String::new();
    let truth_path = out.join("ground_truth.jsonl");
    let mut truth_file = std::io::BufWriter::new(
        std::fs::File::create(&truth_path).map_err(|e| io_err(&truth_path, e))?,
    );

    let mut count = 0u64;
    while let Some((frame, truth)) = stream.next_frame()? {
        let bin = out.join(format!("velodyne_points/data/{count:010}.bin"));
        write_velodyne_bin(&bin, &frame.cloud)?;
        let oxts = out.join(format!("oxts/data/{count:010}.txt"));
        std::fs::write(&oxts, format_oxts_line(&frame)).map_err(|e| io_err(&oxts, e))?;
        let stamp = format_timestamp(frame.timestamp);
        velo_stamps.push_str(&stamp);
        velo_stamps.push('\n');
        oxts_stamps.push_str(&stamp);
        oxts_stamps.push('\n');
        if let Some(truth) = truth {
            let line = serde_json::to_string(&truth)
                .map_err(|e| PipelineError::Config(format!("ground truth: {e}")))?;
            writeln!(truth_file, "{line}").map_err(|e| io_err(&truth_path, e))?;
        }
        count += 1;
    }
    truth_file.flush().map_err(|e| io_err(&truth_path, e))?;

    let velo_ts = out.join("velodyne_points/timestamps.txt");
    std::fs::write(&velo_ts, velo_stamps).map_err(|e| io_err(&velo_ts, e))?;
    let oxts_ts = out.join("oxts/timestamps.txt");
    std::fs::write(&oxts_ts, oxts_stamps).map_err(|e| io_err(&oxts_ts, e))?;
    Ok(count)
}

fn random_cloud_constant_density(n: usize, density: f64, seed: u64) -> PointCloud {
    let side = (n as f64 / density).cbrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            Point3::new(
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
                rng.gen_range(0.0..side),
                0.5,
            )
        })
        .collect();
    PointCloud::new(points, Frame::World, 0.0)
}

/// Times kd-tree construction plus DBSCAN on random clouds of `n` and `2n`
/// points at constant spatial density (so neighborhood sizes stay bounded),
/// returning the two wall times. The ratio indicates the empirical scaling.
pub fn dbscan_scaling_probe(n: usize, seed: u64) -> (Duration, Duration) {
    let density = 0.4; // points per cubic meter
    let cfg = DbscanConfig {
        eps: 2.0,
        min_pts: 10,
    };
    let run = |count: usize| {
        let cloud = random_cloud_constant_density(count, density, seed);
        let start = std::time::Instant::now();
        let tree = build_kdtree(&cloud);
        let labels = dbscan(&cloud, &tree, &cfg);
        let elapsed = start.elapsed();
        std::hint::black_box(labels.clusters.len());
        elapsed
    };
    (run(n), run(2 * n))
}

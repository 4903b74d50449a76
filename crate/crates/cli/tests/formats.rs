use std::fs;

use humanslam::body_model::FrameTag;
use humanslam::geometry::{CloudPoint, DepthMap, InstanceMask, PointCloud, Rotation, SE3Pose};
use humanslam::synth::{generate, SynthConfig};
use humanslam::world_frame::BodyTrack;
use humanslam_cli::formats::*;
use humanslam_cli::layout::{write_scenario, ScenarioInput};
use nalgebra::Vector3;

fn rewrite_is_identical(path: &std::path::Path, rewrite: impl Fn(&std::path::Path, &std::path::Path)) {
    let copy = path.with_extension("copy");
    rewrite(path, &copy);
    assert_eq!(fs::read(path).unwrap(), fs::read(&copy).unwrap(), "{}", path.display());
}

#[test]
fn tum_round_trip_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.txt");
    let poses = vec![
        SE3Pose::new(Rotation::exp(&Vector3::new(0.1, -0.7, 2.0)), Vector3::new(1.5, -0.25, 3.0)),
        SE3Pose::identity(),
    ];
    write_trajectory(&path, &[0.0, 0.1], &poses).unwrap();
    rewrite_is_identical(&path, |a, b| write_tum(b, &read_tum(a).unwrap()).unwrap());
    let (ts, back) = read_trajectory(&path).unwrap();
    assert_eq!(ts, vec![0.0, 0.1]);
    for (p, q) in poses.iter().zip(&back) {
        assert!((p.rotation.matrix() - q.rotation.matrix()).norm() < 1e-15);
        assert_eq!(p.translation, q.translation);
    }
    let parsed = parse_tum("# header\n\n1 2 3 4 0 0 0 1\n", "x").unwrap();
    assert_eq!(parsed[0].quat, [0.0, 0.0, 0.0, 1.0]);
    let err = parse_tum("1 2 3 4 0 0 0\n", "traj.txt").unwrap_err().to_string();
    assert!(err.contains("traj.txt") && err.contains("line 1"), "{}", err);
    assert!(parse_tum("1 2 3 nan 0 0 0 1\n", "x").is_err());
}

#[test]
fn depth_round_trip_keeps_nan_and_f32_values() {
    let dir = tempfile::tempdir().unwrap();
    let stem = dir.path().join("000003");
    let d = DepthMap::new(3, 2, vec![1.5, f64::NAN, 2.25, 0.1f32 as f64, 7.0, 1e-3f32 as f64]).unwrap();
    write_depth(&stem, &d).unwrap();
    let back = read_depth(&stem).unwrap();
    assert_eq!((back.width, back.height), (3, 2));
    for (a, b) in d.data.iter().zip(&back.data) {
        assert!(a == b || (a.is_nan() && b.is_nan()));
    }
    let copy = dir.path().join("copy");
    write_depth(&copy, &back).unwrap();
    for ext in ["f32", "json"] {
        assert_eq!(fs::read(stem.with_extension(ext)).unwrap(), fs::read(copy.with_extension(ext)).unwrap());
    }
    fs::write(stem.with_extension("f32"), [0u8; 5]).unwrap();
    let err = read_depth(&stem).unwrap_err().to_string();
    assert!(err.contains("000003.f32"), "{}", err);
    fs::write(stem.with_extension("json"), r#"{"width":3,"height":2,"units":"m","extra":1}"#).unwrap();
    assert!(read_depth(&stem).is_err());
}

#[test]
fn pgm_round_trip_and_comments() {
    let m = InstanceMask::new(4, 2, vec![0, 1, 1, 2, 0, 0, 2, 1]).unwrap();
    let bytes = encode_pgm(&m);
    assert_eq!(&bytes[..11], b"P5\n4 2\n255\n");
    assert_eq!(decode_pgm(&bytes, "m").unwrap(), m);
    let mut commented = b"P5\n# made by hand\n4 2\n255\n".to_vec();
    commented.extend_from_slice(&m.data);
    assert_eq!(decode_pgm(&commented, "m").unwrap(), m);
    assert!(decode_pgm(b"P2\n1 1\n255\n0", "m").is_err());
    assert!(decode_pgm(b"P5\n2 2\n255\n\x00\x01", "m").is_err());
    // ids must be contiguous
    assert!(decode_pgm(b"P5\n2 1\n255\n\x00\x02", "m").is_err());
}

#[test]
fn body_records_round_trip() {
    let s = generate(3, &SynthConfig { frames: 4, humans: 2, missing_rate: 0.4, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bodies.jsonl");
    write_tracks(&path, &s.cam_tracks).unwrap();
    rewrite_is_identical(&path, |a, b| write_jsonl(b, &read_jsonl::<BodyRecord>(a).unwrap()).unwrap());
    let back = read_tracks(&path, 4, FrameTag::Camera).unwrap();
    assert_eq!(back.len(), 2);
    for (a, b) in s.cam_tracks.iter().zip(&back) {
        assert_eq!(a.track_id, b.track_id);
        for (x, y) in a.slots.iter().zip(&b.slots) {
            assert_eq!(x.is_some(), y.is_some());
            if let (Some(x), Some(y)) = (x, y) {
                assert!(x.phi.angle_to(&y.phi) < 1e-12);
                assert_eq!(x.beta, y.beta);
                assert_eq!(x.gamma, y.gamma);
            }
        }
    }
    let err = read_tracks(&path, 4, FrameTag::World).unwrap_err().to_string();
    assert!(err.contains("bodies.jsonl") && err.contains("frame 0"), "{}", err);
    assert!(read_tracks(&path, 2, FrameTag::Camera).is_err());
}

#[test]
fn ply_round_trip() {
    let cloud = PointCloud::new(vec![
        CloudPoint { xyz: Vector3::new(0.125, -3.5, 1e-7), rgb: [0.0, 1.0, 128.0 / 255.0], human: 1.0 },
        CloudPoint { xyz: Vector3::new(10.0, 2.0, -0.3), rgb: [0.2, 0.4, 0.6], human: 0.0 },
    ]);
    let text = format_ply(&cloud);
    assert!(text.contains("property float human\nend_header\n"));
    let back = parse_ply(&text, "c.ply").unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back.points[0].xyz, cloud.points[0].xyz);
    assert_eq!(back.points[0].human, 1.0);
    assert_eq!(format_ply(&back), text);
    assert!(parse_ply(&text.replace("element vertex 2", "element vertex 3"), "c.ply").is_err());
    assert!(parse_ply(&text.replace("format ascii", "format binary_little_endian"), "c.ply").is_err());
}

#[test]
fn metrics_report_keys() {
    let v = serde_json::to_value(MetricsReport { ate_mm: Some(1.0), ..Default::default() }).unwrap();
    let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
    keys.sort();
    assert_eq!(
        keys,
        ["accel_mm_f2", "ate_mm", "delta1", "delta2", "delta3", "fa_mpjpe_mm", "pa_mpjpe_mm", "rel", "rmse_m", "wa_mpjpe_mm"]
    );
}

#[test]
fn scenario_directory_round_trip() {
    let s = generate(5, &SynthConfig { frames: 5, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scenario(dir.path(), &s).unwrap();
    let back = ScenarioInput::read(dir.path(), &Default::default()).unwrap();
    assert_eq!(back.intr, s.intr);
    assert_eq!(back.anchors, s.anchors);
    assert_eq!(back.masks, s.masks);
    assert_eq!(back.observations, s.observations);
    assert_eq!(back.anchor_human(), s.anchor_human);
    assert_eq!(back.tracks.len(), s.cam_tracks.len());
    for (a, b) in back.depth.iter().zip(&s.depth_raw) {
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x.is_nan() && y.is_nan()) || (x - y).abs() <= 1e-6 * y.abs());
        }
    }
    let track: &BodyTrack<f64> = &back.tracks[0];
    assert!(track.is_complete());
}

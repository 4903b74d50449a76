//! On-disk formats. Every reader has a writer, and records mirror the files
//! field for field so that writing what was read reproduces the bytes of a
//! canonical file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use humanslam::body_model::{BodyParams, FrameTag, NUM_BETAS, NUM_JOINTS};
use humanslam::geometry::{CloudPoint, DepthMap, InstanceMask, PointCloud, Rotation, SE3Pose, UnitQuat};
use humanslam::world_frame::BodyTrack;
use humanslam::{Error, Result};
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display(), e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display(), e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.display(), e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display(), e))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, to_json(value).as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::format(path.display(), e.to_string()))
}

/// One JSON value per non-empty line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("plain data serializes"));
        s.push('\n');
    }
    write_file(path, s.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::format(path.display(), format!("line {}: {}", n + 1, e))))
        .collect()
}

// ---------------------------------------------------------------- trajectories

/// `t tx ty tz qx qy qz qw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TumPose {
    pub t: f64,
    pub translation: [f64; 3],
    /// `x, y, z, w`
    pub quat: [f64; 4],
}

impl TumPose {
    pub fn from_pose(t: f64, pose: &SE3Pose<f64>) -> Self {
        let q = pose.rotation.to_quat().canonical();
        let p = pose.translation;
        Self { t, translation: [p.x, p.y, p.z], quat: [q.x, q.y, q.z, q.w] }
    }

    pub fn to_pose(&self) -> Result<SE3Pose<f64>> {
        let [x, y, z, w] = self.quat;
        let q = UnitQuat::new(w, x, y, z)?;
        let [tx, ty, tz] = self.translation;
        Ok(SE3Pose::new(q.to_rotation(), Vector3::new(tx, ty, tz)))
    }
}

pub fn format_tum(poses: &[TumPose]) -> String {
    let mut s = String::from("# t tx ty tz qx qy qz qw\n");
    for p in poses {
        let [tx, ty, tz] = p.translation;
        let [qx, qy, qz, qw] = p.quat;
        writeln!(s, "{} {} {} {} {} {} {} {}", p.t, tx, ty, tz, qx, qy, qz, qw).expect("string write");
    }
    s
}

pub fn parse_tum(text: &str, origin: &str) -> Result<Vec<TumPose>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(origin, format!("line {}: {}", n + 1, e)))?;
        if v.len() != 8 {
            return Err(Error::format(origin, format!("line {}: expected 8 fields, got {}", n + 1, v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::format(origin, format!("line {}: non-finite value", n + 1)));
        }
        out.push(TumPose { t: v[0], translation: [v[1], v[2], v[3]], quat: [v[4], v[5], v[6], v[7]] });
    }
    Ok(out)
}

pub fn write_tum(path: &Path, poses: &[TumPose]) -> Result<()> {
    write_file(path, format_tum(poses).as_bytes())
}

pub fn read_tum(path: &Path) -> Result<Vec<TumPose>> {
    parse_tum(&read_text(path)?, &path.display().to_string())
}

/// Poses and timestamps of a trajectory file.
pub fn read_trajectory(path: &Path) -> Result<(Vec<f64>, Vec<SE3Pose<f64>>)> {
    let recs = read_tum(path)?;
    let poses = recs
        .iter()
        .enumerate()
        .map(|(k, r)| r.to_pose().map_err(|e| Error::format(path.display(), format!("pose {}: {}", k, e))))
        .collect::<Result<_>>()?;
    Ok((recs.iter().map(|r| r.t).collect(), poses))
}

pub fn write_trajectory(path: &Path, timestamps: &[f64], poses: &[SE3Pose<f64>]) -> Result<()> {
    let recs: Vec<_> = timestamps.iter().zip(poses).map(|(t, p)| TumPose::from_pose(*t, p)).collect();
    write_tum(path, &recs)
}

// ---------------------------------------------------------------- depth maps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepthSidecar {
    pub width: usize,
    pub height: usize,
    pub units: String,
}

/// `<stem>.f32` and `<stem>.json`.
pub fn write_depth(stem: &Path, depth: &DepthMap<f64>) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 * depth.data.len());
    for d in &depth.data {
        bytes.extend_from_slice(&(*d as f32).to_le_bytes());
    }
    write_file(&stem.with_extension("f32"), &bytes)?;
    write_json(&stem.with_extension("json"), &DepthSidecar { width: depth.width, height: depth.height, units: "m".into() })
}

pub fn read_depth(stem: &Path) -> Result<DepthMap<f64>> {
    let side_path = stem.with_extension("json");
    let side: DepthSidecar = read_json(&side_path)?;
    if side.units != "m" {
        return Err(Error::format(side_path.display(), format!("units must be \"m\", got {:?}", side.units)));
    }
    let raw_path = stem.with_extension("f32");
    let bytes = read_bytes(&raw_path)?;
    if bytes.len() != 4 * side.width * side.height {
        return Err(Error::format(
            raw_path.display(),
            format!("{} bytes for a {}x{} map (expected {})", bytes.len(), side.width, side.height, 4 * side.width * side.height),
        ));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    DepthMap::new(side.width, side.height, data).map_err(|e| Error::format(raw_path.display(), e.to_string()))
}

// ---------------------------------------------------------------- masks

pub fn encode_pgm(mask: &InstanceMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    out
}

/// Binary 8-bit PGM; header comments are allowed.
pub fn decode_pgm(bytes: &[u8], origin: &str) -> Result<InstanceMask> {
    let bad = |m: &str| Error::format(origin, m.to_string());
    let mut pos = 0;
    let mut fields = Vec::new();
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?.to_string());
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("PGM masks must be 8-bit"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != w * h {
        return Err(Error::format(origin, format!("{} raster bytes for {}x{}", raster.len(), w, h)));
    }
    InstanceMask::new(w, h, raster.to_vec()).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn write_pgm(path: &Path, mask: &InstanceMask) -> Result<()> {
    write_file(path, &encode_pgm(mask))
}

pub fn read_pgm(path: &Path) -> Result<InstanceMask> {
    decode_pgm(&read_bytes(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- body tracks

/// One `(frame, track)` estimate; quaternions are `w, x, y, z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyRecord {
    pub frame: usize,
    pub track: u32,
    pub phi: [f64; 4],
    pub theta: Vec<[f64; 4]>,
    pub beta: [f64; NUM_BETAS],
    pub gamma: [f64; 3],
    pub frame_tag: FrameTag,
}

fn quat_of(r: &Rotation<f64>) -> [f64; 4] {
    r.to_quat().canonical().to_array()
}

fn rot_of(q: &[f64; 4], what: &str) -> Result<Rotation<f64>> {
    UnitQuat::from_array(*q).map(|q| q.to_rotation()).map_err(|e| Error::Domain(format!("{}: {}", what, e)))
}

impl BodyRecord {
    pub fn new(frame: usize, track: u32, tag: FrameTag, p: &BodyParams<f64>) -> Self {
        Self {
            frame,
            track,
            phi: quat_of(&p.phi),
            theta: p.theta.iter().map(quat_of).collect(),
            beta: p.beta,
            gamma: [p.gamma.x, p.gamma.y, p.gamma.z],
            frame_tag: tag,
        }
    }

    pub fn params(&self) -> Result<BodyParams<f64>> {
        if self.theta.len() != NUM_JOINTS {
            return Err(Error::Shape(format!("theta has {} joints, expected {}", self.theta.len(), NUM_JOINTS)));
        }
        let finite = self.phi.iter().chain(self.theta.iter().flatten()).chain(&self.beta).chain(&self.gamma).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        Ok(BodyParams {
            phi: rot_of(&self.phi, "phi")?,
            theta: self.theta.iter().enumerate().map(|(j, q)| rot_of(q, &format!("theta[{}]", j))).collect::<Result<_>>()?,
            beta: self.beta,
            gamma: Vector3::new(self.gamma[0], self.gamma[1], self.gamma[2]),
        })
    }
}

/// Records ordered by frame, then track.
pub fn tracks_to_records(tracks: &[BodyTrack<f64>]) -> Vec<BodyRecord> {
    let frames = tracks.iter().map(BodyTrack::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for t in 0..frames {
        for tr in tracks {
            if let Some(Some(p)) = tr.slots.get(t) {
                out.push(BodyRecord::new(t, tr.track_id, tr.frame, p));
            }
        }
    }
    out
}

/// Groups records into tracks of `frames` slots, ordered by track id.
pub fn records_to_tracks(records: &[BodyRecord], frames: usize, tag: FrameTag, origin: &str) -> Result<Vec<BodyTrack<f64>>> {
    let mut tracks: std::collections::BTreeMap<u32, BodyTrack<f64>> = Default::default();
    for (n, r) in records.iter().enumerate() {
        let at = |msg: String| Error::format(origin, format!("record {} (frame {}, track {}): {}", n + 1, r.frame, r.track, msg));
        if r.frame_tag != tag {
            return Err(at(format!("expected frame_tag {:?}", tag)));
        }
        if r.frame >= frames {
            return Err(at(format!("frame index beyond the {} frames of the sequence", frames)));
        }
        let p = r.params().map_err(|e| at(e.to_string()))?;
        let tr = tracks.entry(r.track).or_insert_with(|| BodyTrack { track_id: r.track, frame: tag, slots: vec![None; frames] });
        if tr.slots[r.frame].replace(p).is_some() {
            return Err(at("duplicate record".into()));
        }
    }
    Ok(tracks.into_values().collect())
}

pub fn write_tracks(path: &Path, tracks: &[BodyTrack<f64>]) -> Result<()> {
    write_jsonl(path, &tracks_to_records(tracks))
}

pub fn read_tracks(path: &Path, frames: usize, tag: FrameTag) -> Result<Vec<BodyTrack<f64>>> {
    records_to_tracks(&read_jsonl(path)?, frames, tag, &path.display().to_string())
}

// ---------------------------------------------------------------- point clouds

fn to_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn format_ply(cloud: &PointCloud<f64>) -> String {
    let mut s = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nproperty float human\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let [r, g, b] = p.rgb;
        writeln!(s, "{} {} {} {} {} {} {}", p.xyz.x, p.xyz.y, p.xyz.z, to_byte(r), to_byte(g), to_byte(b), p.human as f32)
            .expect("string write");
    }
    s
}

const PLY_PROPERTIES: [&str; 7] = ["x", "y", "z", "red", "green", "blue", "human"];

/// ASCII PLY with exactly the seven point channels, in order.
pub fn parse_ply(text: &str, origin: &str) -> Result<PointCloud<f64>> {
    let bad = |m: String| Error::format(origin, m);
    let mut lines = text.lines().enumerate();
    let mut count = None;
    let mut props = Vec::new();
    let mut first = true;
    loop {
        let (n, line) = lines.next().ok_or_else(|| bad("missing end_header".into()))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if first {
            if words != ["ply"] {
                return Err(bad("not a PLY file".into()));
            }
            first = false;
            continue;
        }
        match words.as_slice() {
            ["format", "ascii", "1.0"] => {}
            ["format", ..] => return Err(bad(format!("line {}: only ASCII PLY is supported", n + 1))),
            ["comment", ..] => {}
            ["element", "vertex", k] => count = Some(k.parse::<usize>().map_err(|e| bad(format!("line {}: {}", n + 1, e)))?),
            ["element", ..] => return Err(bad(format!("line {}: unexpected element", n + 1))),
            ["property", _, name] => props.push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(bad(format!("line {}: unexpected header line", n + 1))),
        }
    }
    if props != PLY_PROPERTIES {
        return Err(bad(format!("properties must be {:?}, got {:?}", PLY_PROPERTIES, props)));
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| bad(format!("line {}: {}", n + 1, e)))?;
        if v.len() != 7 || v.iter().any(|x| !x.is_finite()) {
            return Err(bad(format!("line {}: expected 7 finite values", n + 1)));
        }
        points.push(CloudPoint { xyz: Vector3::new(v[0], v[1], v[2]), rgb: [v[3] / 255.0, v[4] / 255.0, v[5] / 255.0], human: v[6] });
    }
    if points.len() != count {
        return Err(bad(format!("header declares {} vertices, found {}", count, points.len())));
    }
    Ok(PointCloud::new(points))
}

pub fn write_ply(path: &Path, cloud: &PointCloud<f64>) -> Result<()> {
    write_file(path, format_ply(cloud).as_bytes())
}

pub fn read_ply(path: &Path) -> Result<PointCloud<f64>> {
    parse_ply(&read_text(path)?, &path.display().to_string())
}

// ---------------------------------------------------------------- metrics

/// Flat evaluation report; metrics without inputs are `null`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub pa_mpjpe_mm: Option<f64>,
    pub fa_mpjpe_mm: Option<f64>,
    pub wa_mpjpe_mm: Option<f64>,
    pub accel_mm_f2: Option<f64>,
    pub ate_mm: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub delta3: Option<f64>,
    pub rel: Option<f64>,
    pub rmse_m: Option<f64>,
}

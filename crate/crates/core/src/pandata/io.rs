//! On-disk formats: frame stores (`video.json` + binary PGM frames), trace
//! CSVs, and HM map stores (raw little-endian f32 plus a JSON sidecar).

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Frame, HMMap, HMTrace, ScanpathStep};
use crate::error::{Error, Result};
use crate::sphere::GeoPos;

pub const VIDEO_MANIFEST: &str = "video.json";
pub const TRACES_FILE: &str = "traces.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoMeta {
    pub video_id: String,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub fps: f64,
}

#[derive(Debug, Clone)]
pub struct Video {
    pub meta: VideoMeta,
    pub frames: Vec<Frame>,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

pub fn map_file_name(index: usize) -> String {
    format!("map_{index:06}.f32")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary (P5) PGM with maxval 255.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |m: &str| Error::format(path, m.to_string());
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // skip whitespace and comments
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated PGM raster"))?;
    Ok((w, h, data.to_vec()))
}

pub fn write_video(dir: &Path, video_id: &str, frames: &[Frame], fps: f64) -> Result<()> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("video has no frames".into()))?;
    ensure_dir(dir)?;
    let meta = VideoMeta {
        video_id: video_id.to_string(),
        width: first.width(),
        height: first.height(),
        frame_count: frames.len(),
        fps,
    };
    let json = serde_json::to_vec_pretty(&meta).expect("manifest serializes");
    write_bytes(&dir.join(VIDEO_MANIFEST), &json)?;
    for (i, f) in frames.iter().enumerate() {
        write_bytes(&dir.join(frame_file_name(i)), &encode_pgm(f.width(), f.height(), f.pixels()))?;
    }
    Ok(())
}

pub fn read_video_meta(dir: &Path) -> Result<VideoMeta> {
    let path = dir.join(VIDEO_MANIFEST);
    serde_json::from_slice(&read_bytes(&path)?).map_err(|e| Error::format(&path, e.to_string()))
}

pub fn read_video(dir: &Path) -> Result<Video> {
    let meta = read_video_meta(dir)?;
    let mut frames = Vec::with_capacity(meta.frame_count);
    for i in 0..meta.frame_count {
        let path = dir.join(frame_file_name(i));
        let (w, h, px) = decode_pgm(&read_bytes(&path)?, &path)?;
        if w != meta.width || h != meta.height {
            return Err(Error::format(&path, format!("frame is {w}x{h}, manifest says {}x{}", meta.width, meta.height)));
        }
        frames.push(Frame::new(w, h, px).map_err(|e| Error::format(&path, e.to_string()))?);
    }
    Ok(Video { meta, frames })
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    video_id: String,
    subject_id: String,
    frame: usize,
    lon_deg: f64,
    lat_deg: f64,
}

pub fn write_traces(path: &Path, traces: &[HMTrace]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for t in traces {
        for (frame, p) in t.positions.iter().enumerate() {
            w.serialize(TraceRow {
                video_id: t.video_id.clone(),
                subject_id: t.subject_id.clone(),
                frame,
                lon_deg: p.lon(),
                lat_deg: p.lat(),
            })
            .map_err(|e| Error::format(path, e.to_string()))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a trace CSV; traces come back ordered by (video, subject) and must
/// cover frames `0..n` without gaps.
pub fn read_traces(path: &Path) -> Result<Vec<HMTrace>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut grouped: BTreeMap<(String, String), Vec<(usize, GeoPos)>> = BTreeMap::new();
    for row in r.deserialize::<TraceRow>() {
        let row = row.map_err(|e| Error::format(path, e.to_string()))?;
        if !row.lon_deg.is_finite() || !row.lat_deg.is_finite() || row.lat_deg.abs() > 90.0 {
            return Err(Error::format(path, format!("bad position at frame {}", row.frame)));
        }
        grouped
            .entry((row.video_id, row.subject_id))
            .or_default()
            .push((row.frame, GeoPos::new(row.lon_deg, row.lat_deg)));
    }
    let mut out = Vec::with_capacity(grouped.len());
    for ((video, subject), mut rows) in grouped {
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::format(path, format!("trace {video}/{subject} has missing or repeated frames")));
        }
        let positions = rows.into_iter().map(|r| r.1).collect();
        out.push(HMTrace::new(video, subject, positions).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(out)
}

pub fn write_scanpaths(path: &Path, traces: &[(HMTrace, Vec<ScanpathStep>)]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "video_id,subject_id,frame,dir_deg,mag_deg").map_err(io)?;
    for (t, steps) in traces {
        for (i, s) in steps.iter().enumerate() {
            writeln!(w, "{},{},{},{},{}", t.video_id, t.subject_id, i, s.dir.deg(), s.mag.deg()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapSidecar {
    width: usize,
    height: usize,
}

fn sidecar_path(map_path: &Path) -> PathBuf {
    map_path.with_extension("json")
}

pub fn write_map(path: &Path, map: &HMMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(map.values().len() * 4);
    for v in map.values() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_bytes(path, &bytes)?;
    let side = serde_json::to_vec(&MapSidecar { width: map.width(), height: map.height() }).unwrap();
    write_bytes(&sidecar_path(path), &side)
}

pub fn read_map(path: &Path) -> Result<HMMap> {
    let side_path = sidecar_path(path);
    let side: MapSidecar =
        serde_json::from_slice(&read_bytes(&side_path)?).map_err(|e| Error::format(&side_path, e.to_string()))?;
    let bytes = read_bytes(path)?;
    if bytes.len() != side.width * side.height * 4 {
        return Err(Error::format(path, format!("expected {} bytes, found {}", side.width * side.height * 4, bytes.len())));
    }
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    HMMap::from_values(side.width, side.height, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_map_dir(dir: &Path, maps: &[HMMap]) -> Result<()> {
    ensure_dir(dir)?;
    for (i, m) in maps.iter().enumerate() {
        write_map(&dir.join(map_file_name(i)), m)?;
    }
    Ok(())
}

/// Reads `map_000000.f32`, `map_000001.f32`, ... until the first gap.
pub fn read_map_dir(dir: &Path) -> Result<Vec<HMMap>> {
    if !dir.is_dir() {
        return Err(Error::format(dir, "not a directory"));
    }
    let mut maps = Vec::new();
    loop {
        let p = dir.join(map_file_name(maps.len()));
        if !p.exists() {
            break;
        }
        maps.push(read_map(&p)?);
    }
    if maps.is_empty() {
        return Err(Error::format(dir, "no map_*.f32 files"));
    }
    Ok(maps)
}

/// 8-bit visualization: the map's [min, max] range stretched to [0, 255].
pub fn map_to_pgm(map: &HMMap) -> Vec<u8> {
    let (lo, hi) = map
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px: Vec<u8> = map.values().iter().map(|v| ((v - lo) / span * 255.0).round() as u8).collect();
    encode_pgm(map.width(), map.height(), &px)
}

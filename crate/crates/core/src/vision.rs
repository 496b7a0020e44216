//! Synthetic microscope frames and the bounding-box centroid tracker.
//!
//! Pixel centres sit at integer coordinates. Workspace (μm) maps to pixels
//! as `px = width/2 + x/μm_per_px`, `py = height/2 + y/μm_per_px` with no
//! axis flip, so the workspace origin lands on pixel (width/2, height/2).

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{RobotKind, RobotState};

pub const FRAME_WIDTH: usize = 2448;
pub const FRAME_HEIGHT: usize = 2048;
pub const CAMERA_FPS: f64 = 24.0;
/// Sensor pixel pitch (μm); divided by the objective magnification to get
/// the workspace size of one pixel.
pub const CAMERA_PIXEL_UM: f64 = 3.45;
pub const DEFAULT_MAGNIFICATION: f64 = 10.0;
pub const VELOCITY_WINDOW: usize = 15;
/// Consecutive empty masks before a track is marked stale (1 s at 24 fps).
pub const STALE_AFTER: u32 = 24;
pub const BACKGROUND_LEVEL: u8 = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisionError {
    #[error("bounding box {0:?} has no overlap with the frame")]
    DegenerateBox(BBox),
    #[error("mask is empty; track lost")]
    LostTrack,
    #[error("velocity needs at least two positions, have {0}")]
    UndefinedVelocity(usize),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("pgm: {0}")]
    Pgm(String),
}

/// Rendered brightness of each body type. Distinct levels let per-track
/// threshold bands keep touching bodies apart.
pub fn intensity(kind: RobotKind) -> u8 {
    match kind {
        RobotKind::Roller => 220,
        RobotKind::AcousticCup => 200,
        RobotKind::Passive => 130,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Optics {
    pub magnification: f64,
    pub um_per_px: f64,
}

impl Optics {
    pub fn from_magnification(magnification: f64) -> Self {
        Self {
            magnification,
            um_per_px: CAMERA_PIXEL_UM / magnification,
        }
    }
}

impl Default for Optics {
    fn default() -> Self {
        Self::from_magnification(DEFAULT_MAGNIFICATION)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fps: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            width: FRAME_WIDTH,
            height: FRAME_HEIGHT,
            fps: CAMERA_FPS,
        }
    }
}

impl Camera {
    pub fn to_px(&self, optics: &Optics, x_um: f64, y_um: f64) -> (f64, f64) {
        (
            self.width as f64 / 2.0 + x_um / optics.um_per_px,
            self.height as f64 / 2.0 + y_um / optics.um_per_px,
        )
    }

    pub fn to_um(&self, optics: &Optics, px: f64, py: f64) -> (f64, f64) {
        (
            (px - self.width as f64 / 2.0) * optics.um_per_px,
            (py - self.height as f64 / 2.0) * optics.um_per_px,
        )
    }
}

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    pub frame_index: u64,
    pub timestamp: f64,
}

impl Frame {
    pub fn blank(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![BACKGROUND_LEVEL; width * height],
            frame_index: 0,
            timestamp: 0.0,
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Fills every pixel whose centre lies within `r` of `(cx, cy)`.
    pub fn draw_disc(&mut self, cx: f64, cy: f64, r: f64, v: u8) {
        let x0 = (cx - r).ceil().max(0.0);
        let x1 = (cx + r).floor().min(self.width as f64 - 1.0);
        let y0 = (cy - r).ceil().max(0.0);
        let y1 = (cy + r).floor().min(self.height as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let r2 = r * r;
        for y in y0 as usize..=y1 as usize {
            let dy = y as f64 - cy;
            for x in x0 as usize..=x1 as usize {
                let dx = x as f64 - cx;
                if dx * dx + dy * dy <= r2 {
                    self.set(x, y, v);
                }
            }
        }
    }
}

/// Redraws `frame` in place; passive bodies first so actuated robots stay
/// on top.
pub fn render_into(frame: &mut Frame, robots: &[RobotState], optics: &Optics, camera: &Camera, frame_index: u64) {
    assert!(optics.um_per_px > 0.0, "um_per_px must be positive");
    frame.width = camera.width;
    frame.height = camera.height;
    frame.pixels.clear();
    frame.pixels.resize(camera.width * camera.height, BACKGROUND_LEVEL);
    frame.frame_index = frame_index;
    frame.timestamp = frame_index as f64 / camera.fps;
    let order = robots
        .iter()
        .filter(|r| r.kind == RobotKind::Passive)
        .chain(robots.iter().filter(|r| r.kind != RobotKind::Passive));
    for r in order {
        let (cx, cy) = camera.to_px(optics, r.x, r.y);
        frame.draw_disc(cx, cy, r.radius / optics.um_per_px, intensity(r.kind));
    }
}

pub fn render_frame(robots: &[RobotState], optics: &Optics, camera: &Camera, frame_index: u64) -> Frame {
    let mut f = Frame::blank(0, 0);
    render_into(&mut f, robots, optics, camera, frame_index);
    f
}

/// Square crop given by its top-left pixel and side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub side: i64,
}

impl BBox {
    pub fn centered(cx: f64, cy: f64, side: usize) -> Self {
        let half = side as f64 / 2.0;
        Self {
            x: (cx - half).round() as i64,
            y: (cy - half).round() as i64,
            side: side as i64,
        }
    }

    pub fn contains(&self, px: f64, py: f64) -> bool {
        let (x0, y0) = (self.x as f64, self.y as f64);
        let s = self.side as f64;
        px >= x0 && px < x0 + s && py >= y0 && py < y0 + s
    }

    /// Intersection with a `width` x `height` frame as `(x0, y0, x1, y1)`,
    /// exclusive upper bounds.
    fn clip(&self, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
        let x0 = self.x.max(0);
        let y0 = self.y.max(0);
        let x1 = (self.x + self.side).min(width as i64);
        let y1 = (self.y + self.side).min(height as i64);
        (x1 > x0 && y1 > y0).then_some((x0 as usize, y0 as usize, x1 as usize, y1 as usize))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Bounding-box side (px).
    pub crop_length: usize,
    /// Box-blur radius (px); 0 disables blurring.
    pub blur: usize,
    /// Square dilation radius (px).
    pub dilation: usize,
    pub lower_thresh: u8,
    pub upper_thresh: u8,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self::for_kind(RobotKind::Roller, 96)
    }
}

impl MaskParams {
    /// Band centred on the rendered level of `kind`, wide enough to keep
    /// blurred edges and narrow enough to reject the other body types.
    pub fn for_kind(kind: RobotKind, crop_length: usize) -> Self {
        let (lower_thresh, upper_thresh) = match kind {
            RobotKind::Roller => (180, 255),
            RobotKind::AcousticCup => (160, 210),
            RobotKind::Passive => (100, 160),
        };
        Self {
            crop_length,
            blur: 1,
            dilation: 1,
            lower_thresh,
            upper_thresh,
        }
    }

    pub fn validate(&self) -> Result<(), VisionError> {
        if self.crop_length == 0 {
            return Err(VisionError::Param("crop_length must be positive".into()));
        }
        if self.lower_thresh > self.upper_thresh {
            return Err(VisionError::Param(format!(
                "lower threshold {} above upper {}",
                self.lower_thresh, self.upper_thresh
            )));
        }
        Ok(())
    }
}

/// Binary mask over the clipped crop; `origin` is the crop's top-left
/// pixel in frame coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub origin: (usize, usize),
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn area(&self) -> usize {
        self.data.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|b| *b)
    }
}

/// Crop, box blur, threshold to `[lower, upper]`, then square dilation.
pub fn segment(frame: &Frame, bbox: &BBox, params: &MaskParams) -> Result<Mask, VisionError> {
    params.validate()?;
    let (x0, y0, x1, y1) = bbox
        .clip(frame.width, frame.height)
        .ok_or(VisionError::DegenerateBox(*bbox))?;
    let (w, h) = (x1 - x0, y1 - y0);
    let r = params.blur;

    // separable window sums; the window is cut at the crop edge and the
    // mean taken over the pixels that remain
    let mut hsum = vec![0u32; w * h];
    for y in 0..h {
        let row = &frame.pixels[(y0 + y) * frame.width + x0..(y0 + y) * frame.width + x1];
        for x in 0..w {
            let lo = x.saturating_sub(r);
            let hi = (x + r).min(w - 1);
            hsum[y * w + x] = row[lo..=hi].iter().map(|v| *v as u32).sum();
        }
    }
    let span = |i: usize, n: usize| (i + r).min(n - 1) - i.saturating_sub(r) + 1;
    let (lower, upper) = (params.lower_thresh as u32, params.upper_thresh as u32);
    let mut band = vec![false; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(r);
        let hi = (y + r).min(h - 1);
        let ny = span(y, h) as u32;
        for x in 0..w {
            let sum: u32 = (lo..=hi).map(|yy| hsum[yy * w + x]).sum();
            let count = ny * span(x, w) as u32;
            band[y * w + x] = lower * count <= sum && sum <= upper * count;
        }
    }

    let d = params.dilation;
    let data = if d == 0 {
        band
    } else {
        let mut horiz = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(d);
                let hi = (x + d).min(w - 1);
                horiz[y * w + x] = band[y * w + lo..=y * w + hi].iter().any(|b| *b);
            }
        }
        let mut out = vec![false; w * h];
        for y in 0..h {
            let lo = y.saturating_sub(d);
            let hi = (y + d).min(h - 1);
            for x in 0..w {
                out[y * w + x] = (lo..=hi).any(|yy| horiz[yy * w + x]);
            }
        }
        out
    };
    Ok(Mask {
        origin: (x0, y0),
        width: w,
        height: h,
        data,
    })
}

/// Mean of white-pixel coordinates, in crop coordinates.
pub fn centroid(mask: &Mask) -> Result<(f64, f64), VisionError> {
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                sx += x as u64;
                sy += y as u64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(VisionError::LostTrack);
    }
    Ok((sx as f64 / n as f64, sy as f64 / n as f64))
}

/// Backward difference across the window endpoints (μm/s).
pub fn estimate_velocity(history: &[(f64, f64)], fps: f64, um_per_px: f64) -> Result<f64, VisionError> {
    let n = history.len();
    if n < 2 {
        return Err(VisionError::UndefinedVelocity(n));
    }
    let (a, b) = (history[0], history[n - 1]);
    let dist = (b.0 - a.0).hypot(b.1 - a.1);
    Ok(dist * um_per_px / ((n - 1) as f64 / fps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub params: MaskParams,
    pub bbox: BBox,
    /// Frame coordinates (px).
    pub centroid: (f64, f64),
    history: VecDeque<(f64, f64)>,
    /// μm/s; `None` until two positions are known.
    pub velocity: Option<f64>,
    pub size_px: usize,
    pub lost_frames: u32,
    pub stale: bool,
}

impl Track {
    /// Starts a track from a clicked pixel.
    pub fn seed(click: (f64, f64), params: MaskParams) -> Self {
        Self {
            bbox: BBox::centered(click.0, click.1, params.crop_length),
            params,
            centroid: click,
            history: VecDeque::with_capacity(VELOCITY_WINDOW),
            velocity: None,
            size_px: 0,
            lost_frames: 0,
            stale: false,
        }
    }

    pub fn history(&self) -> impl ExactSizeIterator<Item = &(f64, f64)> {
        self.history.iter()
    }

    /// Segments the current box, recentres it on the blob and refreshes the
    /// velocity estimate. On an empty mask the box stays put.
    pub fn update(&mut self, frame: &Frame, fps: f64, um_per_px: f64) -> Result<(), VisionError> {
        let found = segment(frame, &self.bbox, &self.params).and_then(|m| {
            let c = centroid(&m)?;
            Ok((m.origin.0 as f64 + c.0, m.origin.1 as f64 + c.1, m.area()))
        });
        let (cx, cy, area) = match found {
            Ok(v) => v,
            Err(e @ (VisionError::LostTrack | VisionError::DegenerateBox(_))) => {
                self.lost_frames += 1;
                self.stale |= self.lost_frames >= STALE_AFTER;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        self.lost_frames = 0;
        self.stale = false;
        self.centroid = (cx, cy);
        self.size_px = area;
        self.bbox = BBox::centered(cx, cy, self.params.crop_length);
        if self.history.len() == VELOCITY_WINDOW {
            self.history.pop_front();
        }
        self.history.push_back((cx, cy));
        let h: Vec<_> = self.history.iter().copied().collect();
        self.velocity = estimate_velocity(&h, fps, um_per_px).ok();
        Ok(())
    }
}

/// Binary PGM (P5): ASCII header `P5\n<width> <height>\n255\n`, then
/// `width * height` bytes, row-major from the top-left pixel.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Frame, VisionError> {
    let bad = |m: &str| VisionError::Pgm(m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("expected P5 with maxval 255"));
    }
    let width: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let pixels = bytes
        .get(pos..)
        .filter(|p| p.len() == width * height)
        .ok_or_else(|| bad("pixel count mismatch"))?;
    Ok(Frame {
        width,
        height,
        pixels: pixels.to_vec(),
        frame_index: 0,
        timestamp: 0.0,
    })
}

/// Writes `frame_<index>.pgm` (six-digit, zero-padded) into `dir`.
pub fn dump_frame(frame: &Frame, dir: &Path) -> io::Result<()> {
    let path = dir.join(format!("frame_{:06}.pgm", frame.frame_index));
    std::fs::File::create(path)?.write_all(&encode_pgm(frame))
}

pub fn read_pgm(path: &Path) -> io::Result<Frame> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_pgm(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

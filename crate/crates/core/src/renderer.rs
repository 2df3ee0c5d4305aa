//! Stick-figure rasterizer for the synthetic frame images.
//!
//! Bones are drawn as anti-aliased capsules between projected joints, with
//! coverage computed from the pixel-center distance to the segment. Pixels are
//! quantized to 8 bits, so identical inputs produce identical bytes.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{forward_kinematics, Pose, SkeletonModel};

pub const CANONICAL_SIZE: u32 = 224;

/// RGB image, 8 bits per channel, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl FrameImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take((width * height * 3) as usize)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_rgb(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != (width * height * 3) as usize {
            return Err(Error::input(format!(
                "{} bytes do not form a {width}x{height} RGB image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }

    /// Channel value in `[0, 1]`.
    pub fn value(&self, x: u32, y: u32, c: usize) -> f64 {
        f64::from(self.pixels[((y * self.width + x) * 3) as usize + c]) / 255.0
    }

    /// Mean of the three channels in `[0, 1]`.
    pub fn gray(&self, x: u32, y: u32) -> f64 {
        (0..3).map(|c| self.value(x, y, c)).sum::<f64>() / 3.0
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width, self.height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        writer
            .finish()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_png(&mut out)?;
        Ok(out)
    }

    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::input(format!("invalid PNG: {e}")))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::input(format!("invalid PNG: {e}")))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::input("PNG must be 8-bit RGB"));
        }
        buf.truncate(info.buffer_size());
        Self::from_rgb(info.width, info.height, buf)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in degrees.
    pub fov_y_deg: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Camera {
    /// Frontal view from 2.5 m, 45° vertical field of view, 224×224.
    fn default() -> Self {
        Self {
            eye: [0.0, 0.0, 2.5],
            target: [0.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            fov_y_deg: 45.0,
            width: CANONICAL_SIZE,
            height: CANONICAL_SIZE,
        }
    }
}

/// Pixel coordinates (x right, y down) and view-space depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let eye = Vector3::from(self.eye);
        let forward = Vector3::from(self.target) - eye;
        if forward.norm() < 1e-9 {
            return Err(Error::input("camera eye coincides with its target"));
        }
        if forward.cross(&Vector3::from(self.up)).norm() < 1e-9 * forward.norm() {
            return Err(Error::input(
                "camera up vector is parallel to the view direction",
            ));
        }
        if !(self.fov_y_deg > 0.0 && self.fov_y_deg < 180.0) || self.width == 0 || self.height == 0
        {
            return Err(Error::input(
                "camera field of view or image size out of range",
            ));
        }
        Ok(())
    }

    /// World-to-view rotation: rows are right, up and forward.
    fn basis(&self) -> Matrix3<f64> {
        let f = (Vector3::from(self.target) - Vector3::from(self.eye)).normalize();
        let r = f.cross(&Vector3::from(self.up)).normalize();
        let u = r.cross(&f);
        Matrix3::from_rows(&[r.transpose(), u.transpose(), f.transpose()])
    }

    fn focal(&self) -> f64 {
        0.5 * f64::from(self.height) / (0.5 * self.fov_y_deg.to_radians()).tan()
    }

    /// Perspective projection; `None` for points at or behind the eye plane.
    pub fn project(&self, point: &Vector3<f64>) -> Option<Projected> {
        let v = self.basis() * (point - Vector3::from(self.eye));
        if v.z <= 1e-9 {
            return None;
        }
        let f = self.focal();
        Some(Projected {
            x: 0.5 * f64::from(self.width) + f * v.x / v.z,
            y: 0.5 * f64::from(self.height) - f * v.y / v.z,
            depth: v.z,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub background: [u8; 3],
    pub bone: [u8; 3],
    /// Stroke width in pixels.
    pub line_width: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            background: [24, 24, 32],
            bone: [235, 235, 235],
            line_width: 3.0,
        }
    }
}

fn segment_distance(px: f64, py: f64, a: &Projected, b: &Projected) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    ((px - cx) * (px - cx) + (py - cy) * (py - cy)).sqrt()
}

/// Draws every bone of `pose` seen from `camera`.
///
/// Bones with an endpoint behind the camera are skipped; a pose entirely out
/// of view yields a background-only image.
pub fn rasterize(
    m: &SkeletonModel,
    pose: &Pose,
    camera: &Camera,
    style: &RenderStyle,
) -> Result<FrameImage> {
    camera.validate()?;
    let frames = forward_kinematics(m, pose)?;
    let projected: Vec<Option<Projected>> =
        frames.positions.iter().map(|p| camera.project(p)).collect();
    let (w, h) = (camera.width, camera.height);
    let mut coverage = vec![0.0f64; (w * h) as usize];
    let half = 0.5 * style.line_width;
    for (p, c) in m.bones() {
        let (Some(a), Some(b)) = (projected[p], projected[c]) else {
            continue;
        };
        let x0 = (a.x.min(b.x) - half - 1.0).floor().max(0.0);
        let x1 = (a.x.max(b.x) + half + 1.0).ceil().min(f64::from(w));
        let y0 = (a.y.min(b.y) - half - 1.0).floor().max(0.0);
        let y1 = (a.y.max(b.y) + half + 1.0).ceil().min(f64::from(h));
        if x0 >= x1 || y0 >= y1 {
            continue;
        }
        for y in y0 as u32..y1 as u32 {
            for x in x0 as u32..x1 as u32 {
                let d = segment_distance(f64::from(x) + 0.5, f64::from(y) + 0.5, &a, &b);
                let cov = (half + 0.5 - d).clamp(0.0, 1.0);
                let slot = &mut coverage[(y * w + x) as usize];
                *slot = slot.max(cov);
            }
        }
    }
    let mut pixels = Vec::with_capacity((w * h * 3) as usize);
    for cov in coverage {
        for ch in 0..3 {
            let bg = f64::from(style.background[ch]);
            let fg = f64::from(style.bone[ch]);
            pixels.push((bg + (fg - bg) * cov).round() as u8);
        }
    }
    FrameImage::from_rgb(w, h, pixels)
}

use crate::error::{Error, Result};
use crate::geom::{Dir3, Point3};

/// Half-extent of the scene bounding box `[-1, 1]^3`.
pub const BOX_HALF_EXTENT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub dir: Dir3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Point3, dir: Dir3, t_near: f64, t_far: f64) -> Result<Self> {
        if !(t_near.is_finite() && t_far.is_finite() && t_near >= 0.0 && t_near < t_far) {
            return Err(Error::Domain(format!("invalid ray extent [{t_near}, {t_far}]")));
        }
        Ok(Ray { origin, dir, t_near, t_far })
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.dir.as_vec() * t
    }

    /// Clips an unbounded ray against the scene box; `None` when it misses.
    pub fn clipped(origin: Point3, dir: Dir3) -> Option<Ray> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for axis in 0..3 {
            let o = origin.get(axis);
            let d = dir.as_vec().get(axis);
            if d.abs() < 1e-15 {
                if o.abs() > BOX_HALF_EXTENT {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let (mut a, mut b) = ((-BOX_HALF_EXTENT - o) * inv, (BOX_HALF_EXTENT - o) * inv);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
        }
        (t1 > t0 + 1e-9).then_some(Ray { origin, dir, t_near: t0, t_far: t1 })
    }
}

/// Pinhole camera. Pixel `(0, 0)` is the top-left corner of the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Point3,
    pub target: Point3,
    pub up: Point3,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(position: Point3, target: Point3, up: Point3, fov_y: f64, width: usize, height: usize) -> Result<Self> {
        if !(fov_y > 0.0 && fov_y < std::f64::consts::PI) {
            return Err(Error::config(format!("fov must lie in (0, pi), got {fov_y}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::config("image resolution must be at least 1x1"));
        }
        let cam = Camera { position, target, up, fov_y, width, height };
        cam.basis().ok_or_else(|| Error::config("degenerate camera basis"))?;
        Ok(cam)
    }

    /// Looks at the origin from distance 3 along +z with a 40 degree field of view.
    pub fn default_view(width: usize, height: usize) -> Self {
        Camera {
            position: Point3::new(0.0, 0.0, 3.0),
            target: Point3::ZERO,
            up: Point3::new(0.0, 1.0, 0.0),
            fov_y: 40f64.to_radians(),
            width,
            height,
        }
    }

    /// Same view as `default_view`, rotated about the origin by the given angles (radians).
    pub fn orbit(azimuth: f64, elevation: f64, width: usize, height: usize) -> Self {
        let r = 3.0;
        let position =
            Point3::new(r * elevation.cos() * azimuth.sin(), r * elevation.sin(), r * elevation.cos() * azimuth.cos());
        Camera { position, ..Camera::default_view(width, height) }
    }

    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Camera { width, height, ..*self }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    fn basis(&self) -> Option<(Point3, Point3, Point3)> {
        let forward = Dir3::new(self.target - self.position)?.as_vec();
        let right = Dir3::new(forward.cross(self.up))?.as_vec();
        let up = right.cross(forward);
        Some((forward, right, up))
    }

    /// Direction through the center of pixel `(px, py)`.
    pub fn direction(&self, px: usize, py: usize) -> Dir3 {
        let (forward, right, up) = self.basis().expect("validated camera");
        let tan = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        let sx = (2.0 * (px as f64 + 0.5) / self.width as f64 - 1.0) * aspect * tan;
        let sy = (1.0 - 2.0 * (py as f64 + 0.5) / self.height as f64) * tan;
        Dir3::new(forward + right * sx + up * sy).expect("finite direction")
    }

    /// Ray through pixel `(px, py)` clipped to the scene box.
    pub fn ray(&self, px: usize, py: usize) -> Option<Ray> {
        Ray::clipped(self.position, self.direction(px, py))
    }

    pub fn ray_at(&self, index: usize) -> Option<Ray> {
        self.ray(index % self.width, index / self.width)
    }
}

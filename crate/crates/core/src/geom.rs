use std::ops::{Add, Mul, Neg, Sub};

/// A position (or general 3-vector) in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// A unit-length direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dir3(Point3);

impl Point3 {
    pub const ZERO: Point3 = Point3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn get(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

impl Dir3 {
    /// Normalizes `v`; `None` for zero or non-finite vectors.
    pub fn new(v: Point3) -> Option<Dir3> {
        let len = v.length();
        if len.is_finite() && len > 0.0 {
            Some(Dir3(v * (1.0 / len)))
        } else {
            None
        }
    }

    pub fn as_vec(self) -> Point3 {
        self.0
    }

    pub fn x(self) -> f64 {
        self.0.x
    }
    pub fn y(self) -> f64 {
        self.0.y
    }
    pub fn z(self) -> f64 {
        self.0.z
    }
}

impl Neg for Dir3 {
    type Output = Dir3;
    fn neg(self) -> Dir3 {
        Dir3(-self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalized_directions_have_unit_norm(x in -1e3f64..1e3, y in -1e3f64..1e3, z in -1e3f64..1e3) {
            prop_assume!(x.abs() + y.abs() + z.abs() > 1e-6);
            let d = Dir3::new(Point3::new(x, y, z)).unwrap();
            prop_assert!((d.as_vec().length() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_vector_has_no_direction() {
        assert!(Dir3::new(Point3::ZERO).is_none());
    }
}

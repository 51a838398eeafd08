//! Small fixed-size vector and rotation types.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T = f64>(pub [T; 3]);

impl<T: Float> Vec3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self([x, y, z])
    }

    pub fn zero() -> Self {
        Self([T::zero(); 3])
    }

    pub fn x(self) -> T {
        self.0[0]
    }

    pub fn y(self) -> T {
        self.0[1]
    }

    pub fn z(self) -> T {
        self.0[2]
    }

    pub fn dot(self, o: Self) -> T {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Self) -> Self {
        let (a, b) = (self.0, o.0);
        Self([
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ])
    }

    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: T) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn normalized(self) -> Self {
        self.scale(T::one() / self.norm())
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Ground-plane (x, z) components.
    pub fn horizontal(self) -> [T; 2] {
        [self.0[0], self.0[2]]
    }

    pub fn cast<U: Float>(self) -> Vec3<U> {
        Vec3(self.0.map(|v| U::from(v).expect("float cast")))
    }
}

impl<T: Float> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl<T: Float> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Float> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl<T: Float> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self(self.0.map(|v| -v))
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T = f64>(pub [[T; 3]; 3]);

impl<T: Float> Default for Mat3<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Float> Mat3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Self([[o, z, z], [z, o, z], [z, z, o]])
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self([
            [c0.0[0], c1.0[0], c2.0[0]],
            [c0.0[1], c1.0[1], c2.0[1]],
            [c0.0[2], c1.0[2], c2.0[2]],
        ])
    }

    pub fn col(&self, c: usize) -> Vec3<T> {
        Vec3([self.0[0][c], self.0[1][c], self.0[2][c]])
    }

    pub fn transpose(&self) -> Self {
        let m = &self.0;
        Self([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn trace(&self) -> T {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> T {
        self.col(0).dot(self.col(1).cross(self.col(2)))
    }

    /// Rotation of `angle` radians about the (not necessarily unit) `axis`.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n == T::zero() {
            return Self::identity();
        }
        let [x, y, z] = axis.scale(T::one() / n).0;
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        Self([
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ])
    }

    /// Exponential map of a rotation vector.
    pub fn from_rotvec(v: Vec3<T>) -> Self {
        Self::from_axis_angle(v, v.norm())
    }

    pub fn rot_x(angle: T) -> Self {
        Self::from_axis_angle(Vec3::new(T::one(), T::zero(), T::zero()), angle)
    }

    pub fn rot_y(angle: T) -> Self {
        Self::from_axis_angle(Vec3::new(T::zero(), T::one(), T::zero()), angle)
    }

    pub fn rot_z(angle: T) -> Self {
        Self::from_axis_angle(Vec3::new(T::zero(), T::zero(), T::one()), angle)
    }

    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        let m = &self.0;
        Vec3([
            m[0][0] * v.0[0] + m[0][1] * v.0[1] + m[0][2] * v.0[2],
            m[1][0] * v.0[0] + m[1][1] * v.0[1] + m[1][2] * v.0[2],
            m[2][0] * v.0[0] + m[2][1] * v.0[1] + m[2][2] * v.0[2],
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Max-abs deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> T {
        let p = self.transpose() * *self;
        let i = Self::identity();
        let mut e = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                e = e.max((p.0[r][c] - i.0[r][c]).abs());
            }
        }
        e
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut e = T::zero();
        for r in 0..3 {
            for c in 0..3 {
                e = e.max((self.0[r][c] - o.0[r][c]).abs());
            }
        }
        e
    }

    pub fn row_major(&self) -> [T; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_row_major(v: &[T]) -> Self {
        Self([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    pub fn cast<U: Float>(&self) -> Mat3<U> {
        Mat3(self.0.map(|r| r.map(|v| U::from(v).expect("float cast"))))
    }

    /// Unit quaternion `[w, x, y, z]` with `w ≥ 0`.
    pub fn to_quaternion(&self) -> [T; 4] {
        let m = &self.0;
        let one = T::one();
        let quarter = T::from(0.25).unwrap();
        let tr = self.trace();
        let q = if tr > T::zero() {
            let s = (tr + one).sqrt() * (one + one);
            [quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * (one + one);
            [(m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * (one + one);
            [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s]
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * (one + one);
            [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s]
        };
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let sign = if q[0] < T::zero() { -one } else { one };
        q.map(|v| sign * v / n)
    }

    /// Rotation from a quaternion `[w, x, y, z]`; the input is normalized first.
    pub fn from_quaternion(q: [T; 4]) -> Result<Self> {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if !(n > T::from(1e-8).unwrap()) || !n.is_finite() {
            return Err(Error::Degenerate("quaternion norm near zero".into()));
        }
        let [w, x, y, z] = q.map(|v| v / n);
        let two = T::one() + T::one();
        let one = T::one();
        Ok(Self([
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]))
    }
}

impl<T: Float> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut out = [[T::zero(); 3]; 3];
        for (r, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.0[r][0] * o.0[0][c] + self.0[r][1] * o.0[1][c] + self.0[r][2] * o.0[2][c];
            }
        }
        Self(out)
    }
}

/// Continuous 6-number rotation encoding: the first two columns of the
/// rotation matrix, column-major `(r00, r10, r20, r01, r11, r21)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rotation6D<T = f64>(pub [T; 6]);

impl<T: Float> Rotation6D<T> {
    pub fn encode(r: &Mat3<T>) -> Self {
        let (a, b) = (r.col(0), r.col(1));
        Self([a.0[0], a.0[1], a.0[2], b.0[0], b.0[1], b.0[2]])
    }

    /// Gram-Schmidt decoding to a proper rotation.
    pub fn decode(&self) -> Result<Mat3<T>> {
        let v = self.0;
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Degenerate("non-finite 6D rotation".into()));
        }
        let a1 = Vec3([v[0], v[1], v[2]]);
        let a2 = Vec3([v[3], v[4], v[5]]);
        let tiny = T::from(1e-8).unwrap();
        let (n1, n2) = (a1.norm(), a2.norm());
        if n1 < tiny || n2 < tiny {
            return Err(Error::Degenerate(format!(
                "column norms {:.3e}, {:.3e}",
                n1.to_f64().unwrap_or(f64::NAN),
                n2.to_f64().unwrap_or(f64::NAN)
            )));
        }
        let cos = a1.dot(a2) / (n1 * n2);
        if cos.abs() > T::one() - tiny {
            return Err(Error::Degenerate("columns are parallel".into()));
        }
        let b1 = a1.scale(T::one() / n1);
        let u = a2 - b1.scale(b1.dot(a2));
        let b2 = u.normalized();
        let b3 = b1.cross(b2);
        Ok(Mat3::from_cols(b1, b2, b3))
    }
}

pub fn decode6d<T: Float>(r: &Rotation6D<T>) -> Result<Mat3<T>> {
    r.decode()
}

/// Angle of `Raᵀ·Rb` in degrees, in `[0, 180]`.
pub fn geodesic_angle<T: Float>(ra: &Mat3<T>, rb: &Mat3<T>) -> T {
    let rel = ra.transpose() * *rb;
    let one = T::one();
    let two = one + one;
    let c = ((rel.trace() - one) / two).max(-one).min(one);
    // sin θ from the skew part keeps small angles accurate where acos is flat.
    let m = &rel.0;
    let sx = m[2][1] - m[1][2];
    let sy = m[0][2] - m[2][0];
    let sz = m[1][0] - m[0][1];
    let s = (sx * sx + sy * sy + sz * sz).sqrt() / two;
    let theta = if c.abs() < T::from(0.9).unwrap() { c.acos() } else { s.min(one).atan2(c) };
    theta.to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_rotation(a: f64, b: f64, c: f64, angle: f64) -> Mat3 {
        Mat3::from_axis_angle(Vec3::new(a, b, c + 1e-3), angle)
    }

    #[test]
    fn identity_encoding_decodes_to_identity() {
        let r = Rotation6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).decode().unwrap();
        assert_eq!(r, Mat3::identity());
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(Rotation6D([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).decode().is_err());
        assert!(Rotation6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]).decode().is_err());
        assert!(Rotation6D([f64::NAN, 0.0, 0.0, 0.0, 1.0, 0.0]).decode().is_err());
    }

    #[test]
    fn perturbed_identity_decodes_orthonormal() {
        let r = Rotation6D([1.1, 0.05, -0.02, 0.1, 0.93, 0.04]).decode().unwrap();
        assert!(r.orthonormality_error() < 1e-10);
        assert!((r.det() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn geodesic_hand_cases() {
        let i = Mat3::<f64>::identity();
        assert_eq!(geodesic_angle(&i, &i), 0.0);
        for axis in [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.3, -0.7, 0.2)] {
            let r = Mat3::from_axis_angle(axis, std::f64::consts::FRAC_PI_2);
            assert!((geodesic_angle(&i, &r) - 90.0).abs() < 1e-9);
        }
        let r = Mat3::rot_x(30f64.to_radians()) * Mat3::rot_y(0.0);
        assert!((geodesic_angle(&i, &r) - 30.0).abs() < 1e-9);
        let r = Mat3::rot_z(std::f64::consts::PI);
        assert!((geodesic_angle(&i, &r) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn quaternion_round_trip() {
        for (i, angle) in [0.1, 1.0, 2.5, 3.1].iter().enumerate() {
            let r = random_rotation(0.2 * i as f64 - 0.3, 0.5, -0.1, *angle);
            let q = r.to_quaternion();
            assert!(q[0] >= 0.0);
            let back = Mat3::from_quaternion(q).unwrap();
            assert!(back.max_abs_diff(&r) < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, angle in -3.1f64..3.1) {
            let r = random_rotation(a, b, c, angle);
            let back = Rotation6D::encode(&r).decode().unwrap();
            prop_assert!(back.max_abs_diff(&r) < 1e-12);
        }

        #[test]
        fn geodesic_symmetric_and_triangle(
            a in proptest::array::uniform4(-1.0f64..1.0),
            b in proptest::array::uniform4(-1.0f64..1.0),
            c in proptest::array::uniform4(-1.0f64..1.0),
        ) {
            let ra = random_rotation(a[0], a[1], a[2], 3.0 * a[3]);
            let rb = random_rotation(b[0], b[1], b[2], 3.0 * b[3]);
            let rc = random_rotation(c[0], c[1], c[2], 3.0 * c[3]);
            let ab = geodesic_angle(&ra, &rb);
            prop_assert!((ab - geodesic_angle(&rb, &ra)).abs() < 1e-6);
            prop_assert!((0.0..=180.0).contains(&ab));
            let ac = geodesic_angle(&ra, &rc);
            let cb = geodesic_angle(&rc, &rb);
            prop_assert!(ab <= ac + cb + 1e-6);
        }
    }
}

//! Small fixed-size vector helpers shared by the solvers.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Moments of the collision invariants (1, v, |v|^2 / 2): mass, three
/// momentum components and total energy. The same layout serves as a
/// per-cell conserved state and as a flux vector.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Moments5 {
    pub mass: f64,
    pub mom: [f64; 3],
    pub energy: f64,
}

impl Moments5 {
    pub const ZERO: Moments5 = Moments5 {
        mass: 0.0,
        mom: [0.0; 3],
        energy: 0.0,
    };

    pub fn new(mass: f64, mom: [f64; 3], energy: f64) -> Self {
        Moments5 { mass, mom, energy }
    }

    pub fn to_array(self) -> [f64; 5] {
        [
            self.mass,
            self.mom[0],
            self.mom[1],
            self.mom[2],
            self.energy,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Moments5 {
            mass: a[0],
            mom: [a[1], a[2], a[3]],
            energy: a[4],
        }
    }

    /// Largest absolute component.
    pub fn abs_max(&self) -> f64 {
        self.to_array().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    /// True only if every component is exactly zero.
    pub fn is_exactly_zero(&self) -> bool {
        self.to_array().iter().all(|&c| c == 0.0)
    }
}

impl Add for Moments5 {
    type Output = Moments5;
    fn add(self, rhs: Moments5) -> Moments5 {
        Moments5 {
            mass: self.mass + rhs.mass,
            mom: add3(self.mom, rhs.mom),
            energy: self.energy + rhs.energy,
        }
    }
}

impl AddAssign for Moments5 {
    fn add_assign(&mut self, rhs: Moments5) {
        *self = *self + rhs;
    }
}

impl Sub for Moments5 {
    type Output = Moments5;
    fn sub(self, rhs: Moments5) -> Moments5 {
        Moments5 {
            mass: self.mass - rhs.mass,
            mom: sub3(self.mom, rhs.mom),
            energy: self.energy - rhs.energy,
        }
    }
}

impl Mul<f64> for Moments5 {
    type Output = Moments5;
    fn mul(self, s: f64) -> Moments5 {
        Moments5 {
            mass: self.mass * s,
            mom: scale3(self.mom, s),
            energy: self.energy * s,
        }
    }
}

impl Mul<Moments5> for f64 {
    type Output = Moments5;
    fn mul(self, m: Moments5) -> Moments5 {
        m * self
    }
}

impl Neg for Moments5 {
    type Output = Moments5;
    fn neg(self) -> Moments5 {
        self * -1.0
    }
}

pub fn add3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm_sq3(a: [f64; 3]) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_arithmetic() {
        let a = Moments5::new(1.0, [2.0, 0.0, -1.0], 3.0);
        let b = Moments5::new(0.5, [1.0, 1.0, 1.0], 1.0);
        assert_eq!((a + b).to_array(), [1.5, 3.0, 1.0, 0.0, 4.0]);
        assert_eq!((a - b).to_array(), [0.5, 1.0, -1.0, -2.0, 2.0]);
        assert_eq!((a * 2.0).to_array(), [2.0, 4.0, 0.0, -2.0, 6.0]);
    }

    #[test]
    fn array_round_trip() {
        let a = [0.1, -0.2, 0.3, 4.0, -5.0];
        assert_eq!(Moments5::from_array(a).to_array(), a);
    }

    #[test]
    fn exact_zero_detection() {
        assert!(Moments5::ZERO.is_exactly_zero());
        assert!(!Moments5::new(0.0, [0.0, 1e-300, 0.0], 0.0).is_exactly_zero());
    }
}

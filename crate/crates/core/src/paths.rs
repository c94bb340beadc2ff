//! Dense per-knot, per-particle arrays.

use serde::{Deserialize, Serialize};

/// `knots x particles x width` row-major values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotArray {
    knots: usize,
    particles: usize,
    width: usize,
    data: Vec<f64>,
}

impl KnotArray {
    pub fn zeros(knots: usize, particles: usize, width: usize) -> Self {
        KnotArray {
            knots,
            particles,
            width,
            data: vec![0.0; knots * particles * width],
        }
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, m: usize, j: usize) -> &[f64] {
        let o = (m * self.particles + j) * self.width;
        &self.data[o..o + self.width]
    }

    pub fn get_mut(&mut self, m: usize, j: usize) -> &mut [f64] {
        let o = (m * self.particles + j) * self.width;
        &mut self.data[o..o + self.width]
    }

    /// All particles at knot `m`.
    pub fn knot(&self, m: usize) -> &[f64] {
        let w = self.particles * self.width;
        &self.data[m * w..(m + 1) * w]
    }

    pub fn knot_mut(&mut self, m: usize) -> &mut [f64] {
        let w = self.particles * self.width;
        &mut self.data[m * w..(m + 1) * w]
    }

    /// Knot `m` mutably together with every earlier knot.
    pub fn split_at_knot(&mut self, m: usize) -> (&[f64], &mut [f64]) {
        let w = self.particles * self.width;
        let (a, b) = self.data.split_at_mut(m * w);
        (a, &mut b[..w])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// Particle average of `f` applied to each entry slice at knot `m`.
    pub fn knot_mean(&self, m: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        (0..self.particles).map(|j| f(self.get(m, j))).sum::<f64>() / self.particles as f64
    }

    /// Particle values of `sup_m f(entry)`.
    pub fn pathwise_sup(&self, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        (0..self.particles)
            .map(|j| {
                (0..self.knots)
                    .map(|m| f(self.get(m, j)))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Elementwise `self + c * other`.
    pub fn axpy(&self, c: f64, other: &KnotArray) -> KnotArray {
        debug_assert_eq!(self.data.len(), other.data.len());
        KnotArray {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + c * b)
                .collect(),
            ..self.clone()
        }
    }
}

use ndarray::Array3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// History of generated images fed to a discriminator.
///
/// Until full, every query stores and returns the fresh image. Afterwards
/// each query returns the fresh image with probability 0.5, otherwise a
/// random stored image which the fresh one then replaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePool<T> {
    capacity: usize,
    stored: Vec<Array3<T>>,
}

impl<T: Scalar> ImagePool<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            stored: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.stored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stored.is_empty()
    }

    pub fn stored(&self) -> &[Array3<T>] {
        &self.stored
    }

    pub fn query<R: Rng>(&mut self, fresh: &Array3<T>, rng: &mut R) -> Array3<T> {
        if self.capacity == 0 {
            return fresh.clone();
        }
        if self.stored.len() < self.capacity {
            self.stored.push(fresh.clone());
            return fresh.clone();
        }
        if rng.gen_bool(0.5) {
            let i = rng.gen_range(0..self.stored.len());
            std::mem::replace(&mut self.stored[i], fresh.clone())
        } else {
            fresh.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn img(v: f64) -> Array3<f64> {
        Array3::from_elem((3, 2, 2), v)
    }

    #[test]
    fn fills_then_caps() {
        let mut pool = ImagePool::new(50);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(pool.query(&img(0.0), &mut rng), img(0.0));
        assert_eq!(pool.len(), 1);
        for i in 1..200 {
            pool.query(&img(i as f64), &mut rng);
            assert!(pool.len() <= 50);
        }
        assert_eq!(pool.len(), 50);
    }

    #[test]
    fn fresh_fraction_is_one_half() {
        let mut pool = ImagePool::new(50);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..50 {
            pool.query(&img(-(i as f64) - 1.0), &mut rng);
        }
        let n = 10_000;
        let fresh = (0..n)
            .filter(|&i| {
                let f = img(i as f64);
                pool.query(&f, &mut rng) == f
            })
            .count();
        let frac = fresh as f64 / n as f64;
        assert!((frac - 0.5).abs() <= 0.02, "fraction {frac}");
    }

    #[test]
    fn returns_only_submitted_images() {
        let mut pool = ImagePool::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..100 {
            let out = pool.query(&img(i as f64), &mut rng);
            let v = out[[0, 0, 0]];
            assert!(v <= i as f64 && v.fract() == 0.0);
        }
    }
}

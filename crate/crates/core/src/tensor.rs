//! Dense NCHW tensors of `f64` and the seeded generator used for every
//! random draw in the crate.
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng`), whose output stream
//! is fixed for a given 64-bit seed on every platform. Uniform reals are taken
//! from the top 53 bits of `next_u64`, so the mapping from seed to values does
//! not depend on any `rand` sampling internals.

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape4 {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape4 {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        let shape = Shape4 {
            batch,
            channels,
            height,
            width,
        };
        shape.validate()?;
        Ok(shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Construction(format!("zero extent in {self}")));
        }
        self.checked_len()
            .map(|_| ())
            .ok_or_else(|| Error::Construction(format!("element count of {self} overflows")))
    }

    fn checked_len(&self) -> Option<usize> {
        self.batch
            .checked_mul(self.channels)?
            .checked_mul(self.height)?
            .checked_mul(self.width)
    }

    pub fn len(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values emitted per sample: `channels * height * width`.
    pub fn floats_out(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn with_batch(&self, batch: usize) -> Shape4 {
        Shape4 { batch, ..*self }
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.channels + c) * self.height + y) * self.width + x
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Initial contents for [`Tensor::create`].
pub enum Fill<'a> {
    Zeros,
    Constant(f64),
    /// Uniform on `[-sqrt(6 / fan_in), +sqrt(6 / fan_in)]`.
    HeUniform {
        rng: &'a mut Rng,
        fan_in: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape4,
    data: Vec<f64>,
}

impl Tensor {
    pub fn create(shape: Shape4, fill: Fill<'_>) -> Result<Tensor> {
        shape.validate()?;
        let len = shape.len();
        let data = match fill {
            Fill::Zeros => vec![0.0; len],
            Fill::Constant(c) => vec![c; len],
            Fill::HeUniform { rng, fan_in } => {
                if fan_in == 0 {
                    return Err(Error::Construction("he_uniform with fan_in 0".into()));
                }
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..len).map(|_| rng.uniform(-bound, bound)).collect()
            }
        };
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Tensor {
        Tensor {
            data: vec![0.0; shape.len()],
            shape,
        }
    }

    pub fn from_vec(shape: Shape4, data: Vec<f64>) -> Result<Tensor> {
        shape.validate()?;
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} values supplied for shape {shape} ({} elements)",
                data.len(),
                shape.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn floats_out(&self) -> usize {
        self.shape.floats_out()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(n, c, y, x)]
    }

    pub fn reshape(&self, new: Shape4) -> Result<Tensor> {
        new.validate()?;
        if new.len() != self.shape.len() {
            return Err(Error::Shape(format!("cannot reshape {} into {new}", self.shape)));
        }
        Ok(Tensor {
            shape: new,
            data: self.data.clone(),
        })
    }

    /// Contiguous `[height, width]` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    /// Copies samples `indices` into a new tensor, in the given order.
    pub fn gather_samples(&self, indices: &[usize]) -> Result<Tensor> {
        let per = self.shape.floats_out();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.shape.batch {
                return Err(Error::Shape(format!(
                    "sample {i} out of range for batch {}",
                    self.shape.batch
                )));
            }
            data.extend_from_slice(&self.data[i * per..(i + 1) * per]);
        }
        Tensor::from_vec(self.shape.with_batch(indices.len()), data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Seeded ChaCha8 stream.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n` (Lemire's multiply-shift, with rejection).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.inner.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Independent child stream, derived deterministically from this one.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

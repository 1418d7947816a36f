//! Flat parameter storage shared by all layers of a network.
//!
//! Every parameter tensor occupies a contiguous range of one flat vector,
//! registered under a unique name in allocation order. Gradients live in
//! caller-owned buffers of the same layout, so parallel workers can each
//! accumulate into their own buffer and reduce deterministically, and the
//! optimizer is a single pass over two slices.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{real, NnError, Real};

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Handle to one registered parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRef(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry>,
    data: Vec<T>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Registers a zero-initialized parameter tensor.
    pub fn alloc(&mut self, name: &str, shape: &[usize]) -> ParamRef {
        debug_assert!(
            self.entries.iter().all(|e| e.name != name),
            "duplicate parameter {name}"
        );
        let offset = self.data.len();
        let n: usize = shape.iter().product();
        self.data.resize(offset + n, T::zero());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            offset,
            shape: shape.to_vec(),
        });
        ParamRef(self.entries.len() - 1)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len_scalars(&self) -> usize {
        self.data.len()
    }

    pub fn value(&self, r: ParamRef) -> &[T] {
        let e = &self.entries[r.0];
        &self.data[e.range()]
    }

    pub fn value_mut(&mut self, r: ParamRef) -> &mut [T] {
        let e = self.entries[r.0].range();
        &mut self.data[e]
    }

    pub fn range(&self, r: ParamRef) -> Range<usize> {
        self.entries[r.0].range()
    }

    pub fn shape(&self, r: ParamRef) -> &[usize] {
        &self.entries[r.0].shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Fresh zeroed gradient buffer matching this store's layout.
    pub fn zero_grad(&self) -> Vec<T> {
        vec![T::zero(); self.data.len()]
    }

    /// Kaiming-uniform fan-in init (`bound = sqrt(6 / fan_in)`) for one
    /// tensor; biases stay zero by allocation.
    pub fn init_kaiming(&mut self, r: ParamRef, fan_in: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / fan_in as f64).sqrt();
        for x in self.value_mut(r) {
            *x = real(rng.random_range(-bound..bound));
        }
    }

    /// Deterministic init rng for a named substream.
    pub fn init_rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|x| x.to_f64().unwrap() as f32).collect()
    }

    /// Copies `src` (length-checked) into the store.
    pub fn load_f32(&mut self, src: &[f32]) -> Result<(), NnError> {
        if src.len() != self.data.len() {
            return Err(NnError::LengthMismatch {
                expected: self.data.len(),
                got: src.len(),
            });
        }
        for (dst, &s) in self.data.iter_mut().zip(src) {
            *dst = real(s as f64);
        }
        Ok(())
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alloc_ranges_are_contiguous() {
        let mut ps = ParamStore::<f32>::new();
        let a = ps.alloc("a", &[2, 3]);
        let b = ps.alloc("b", &[4]);
        assert_eq!(ps.range(a), 0..6);
        assert_eq!(ps.range(b), 6..10);
        assert_eq!(ps.len_scalars(), 10);
    }

    #[test]
    fn kaiming_init_is_bounded_and_seeded() {
        let mut ps = ParamStore::<f64>::new();
        let w = ps.alloc("w", &[64]);
        let mut rng = ParamStore::<f64>::init_rng(5);
        ps.init_kaiming(w, 16, &mut rng);
        let bound = (6.0f64 / 16.0).sqrt();
        assert!(ps.value(w).iter().all(|x| x.abs() < bound));
        assert!(ps.value(w).iter().any(|x| x.abs() > 0.0));

        let mut ps2 = ParamStore::<f64>::new();
        let w2 = ps2.alloc("w", &[64]);
        let mut rng2 = ParamStore::<f64>::init_rng(5);
        ps2.init_kaiming(w2, 16, &mut rng2);
        assert_eq!(ps.value(w), ps2.value(w2));
    }
}

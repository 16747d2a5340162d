//! FNV-1a rolling hashes for replica checksums and artifact digests.

use crate::sparsemat::SparseMatrix;

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Debug, Clone, Copy)]
pub struct Fnv1a64(u64);

impl Default for Fnv1a64 {
    fn default() -> Self {
        Self(OFFSET)
    }
}

impl Fnv1a64 {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(PRIME);
        }
    }

    #[inline]
    pub fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }

    #[inline]
    pub fn write_f64(&mut self, v: f64) {
        self.write(&v.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

/// Content digest of a matrix (shape plus all entries, bit-exact), used
/// to bind stepsize sidecar files to the data they were computed from.
pub fn matrix_digest(m: &SparseMatrix) -> u64 {
    let mut h = Fnv1a64::new();
    h.write_u64(m.n_rows() as u64);
    h.write_u64(m.n_cols() as u64);
    for (r, c, v) in m.iter() {
        h.write_u64(r as u64);
        h.write_u64(c as u64);
        h.write_f64(v);
    }
    h.finish()
}

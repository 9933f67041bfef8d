//! Packed bit-planes: one bit per weight, 8 bits per byte, little-endian bit
//! order within each byte. This is also the exact on-disk layout, so
//! serialization of a plane is a plain byte copy.

/// A fixed-length sequence of bits, byte-packed.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitPlane {
    bytes: Vec<u8>,
    len: usize,
}

impl BitPlane {
    pub fn zeros(len: usize) -> Self {
        Self {
            bytes: vec![0u8; len.div_ceil(8)],
            len,
        }
    }

    /// Build from one bool per bit.
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut plane = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                plane.set(i, true);
            }
        }
        plane
    }

    /// Reconstruct from packed bytes; trailing pad bits must be zero.
    pub fn from_bytes(bytes: Vec<u8>, len: usize) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let pad = bytes.len() * 8 - len;
        if pad > 0 {
            let last = *bytes.last().unwrap();
            if last >> (8 - pad) != 0 {
                return None;
            }
        }
        Some(Self { bytes, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.bytes[i / 8] >> (i % 8) & 1 == 1
    }

    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let mask = 1u8 << (i % 8);
        if v {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }
}

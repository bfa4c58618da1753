//! Dense Q tables and their binary dump format.
//!
//! A dump is a 32-byte little-endian header followed by the table entries as
//! little-endian `f64`, row-major by state:
//!
//! | offset | size | field                                              |
//! |--------|------|----------------------------------------------------|
//! | 0      | 8    | magic `CLQTAB01`                                   |
//! | 8      | 4    | `M`, prices per side (`u32`)                       |
//! | 12     | 4    | `N`, number of platforms (`u32`)                   |
//! | 16     | 4    | side order of actions, `0` = buyer-major (`u32`)   |
//! | 20     | 4    | platform owning the table, 0-based (`u32`)         |
//! | 24     | 8    | number of entries `M⁶` (`u64`)                     |

use std::io::{self, Read, Write};

use super::grid::{ActionIndex, GridShape, StateIndex};
use crate::scalar::Real;

pub const DUMP_MAGIC: &[u8; 8] = b"CLQTAB01";
pub const DUMP_HEADER_LEN: usize = 32;
const BUYER_MAJOR: u32 = 0;

/// Action values of one platform, `|𝒮| × |𝒜|`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable<F: Real> {
    shape: GridShape,
    values: Vec<F>,
}

impl<F: Real> QTable<F> {
    pub fn filled(shape: GridShape, value: F) -> Self {
        Self {
            shape,
            values: vec![value; shape.n_states() * shape.n_actions()],
        }
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(StateIndex, ActionIndex) -> F) -> Self {
        let na = shape.n_actions();
        let mut values = Vec::with_capacity(shape.n_states() * na);
        for s in 0..shape.n_states() {
            for a in 0..na {
                values.push(f(s, a));
            }
        }
        Self { shape, values }
    }

    pub fn from_values(shape: GridShape, values: Vec<F>) -> Option<Self> {
        (values.len() == shape.n_states() * shape.n_actions()).then_some(Self { shape, values })
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn row(&self, s: StateIndex) -> &[F] {
        let na = self.shape.n_actions();
        &self.values[s * na..(s + 1) * na]
    }

    pub fn row_mut(&mut self, s: StateIndex) -> &mut [F] {
        let na = self.shape.n_actions();
        &mut self.values[s * na..(s + 1) * na]
    }

    pub fn get(&self, s: StateIndex, a: ActionIndex) -> F {
        self.values[s * self.shape.n_actions() + a]
    }

    pub fn set(&mut self, s: StateIndex, a: ActionIndex, v: F) {
        let na = self.shape.n_actions();
        self.values[s * na + a] = v;
    }

    pub fn max(&self, s: StateIndex) -> F {
        row_max(self.row(s))
    }

    /// Greedy action; ties go to the lowest index.
    pub fn argmax(&self, s: StateIndex) -> ActionIndex {
        row_argmax(self.row(s))
    }

    /// Greedy action in every state.
    pub fn greedy_policy(&self) -> Vec<u32> {
        (0..self.shape.n_states())
            .map(|s| self.argmax(s) as u32)
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn write_dump<W: Write>(&self, mut w: W, platform: u32) -> io::Result<()> {
        let m = u32::try_from(self.shape.m).map_err(|_| invalid("grid size exceeds u32"))?;
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&m.to_le_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        w.write_all(&BUYER_MAJOR.to_le_bytes())?;
        w.write_all(&platform.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.values.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    /// Reads a dump; returns the table and the platform it belongs to.
    pub fn read_dump<R: Read>(mut r: R) -> io::Result<(Self, u32)> {
        let mut header = [0u8; DUMP_HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[..8] != DUMP_MAGIC {
            return Err(invalid("not a Q-table dump (bad magic)"));
        }
        let word = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let m = word(8) as usize;
        let side_order = word(16);
        let platform = word(20);
        let count = u64::from_le_bytes(header[24..32].try_into().unwrap());
        if side_order != BUYER_MAJOR {
            return Err(invalid("unsupported side order"));
        }
        let shape = GridShape::new(m);
        if count != (shape.n_states() * shape.n_actions()) as u64 {
            return Err(invalid("entry count does not match grid size"));
        }
        let mut values = Vec::with_capacity(count as usize);
        let mut buf = vec![0u8; 8 * 4096];
        let mut left = count as usize;
        while left > 0 {
            let n = left.min(4096);
            r.read_exact(&mut buf[..8 * n])?;
            for b in buf[..8 * n].chunks_exact(8) {
                let v = f64::from_le_bytes(b.try_into().unwrap());
                values.push(F::from_f64(v).ok_or_else(|| invalid("entry not representable"))?);
            }
            left -= n;
        }
        Ok((Self { shape, values }, platform))
    }
}

fn invalid(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub fn row_max<F: Real>(row: &[F]) -> F {
    row.iter().copied().fold(F::neg_infinity(), F::max)
}

/// First index of the maximum.
pub fn row_argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (a, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = a;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dump_round_trip() {
        let shape = GridShape::new(2);
        let q = QTable::from_fn(shape, |s, a| s as f64 * 0.5 - a as f64);
        let mut bytes = Vec::new();
        q.write_dump(&mut bytes, 1).unwrap();
        assert_eq!(bytes.len(), DUMP_HEADER_LEN + 8 * 64);
        assert_eq!(&bytes[..8], DUMP_MAGIC);
        let (back, platform) = QTable::<f64>::read_dump(bytes.as_slice()).unwrap();
        assert_eq!(platform, 1);
        assert_eq!(back, q);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let bytes = [0u8; 40];
        assert!(QTable::<f64>::read_dump(&bytes[..]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(row_argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(row_max(&[1.0, 3.0, 3.0, 2.0]), 3.0);
    }
}

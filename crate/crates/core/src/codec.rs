//! Little-endian binary reader used by every file format in the crate.

use crate::error::{Error, Result};

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8], kind: &'static str) -> Self {
        Self { bytes, pos: 0, kind }
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.kind,
                format!("truncated at byte offset {} (need {n} more bytes, have {})", self.pos, self.remaining()),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.array::<4>()?;
        if &got != magic {
            return Err(Error::format(
                self.kind,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&got), String::from_utf8_lossy(magic)),
            ));
        }
        Ok(())
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub fn i128(&mut self) -> Result<i128> {
        Ok(i128::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A `u32` count that must fit into the remaining bytes at `unit` bytes each.
    pub fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(unit) > self.remaining() {
            return Err(Error::format(
                self.kind,
                format!("count {n} at byte offset {} exceeds remaining payload", self.pos - 4),
            ));
        }
        Ok(n)
    }

    pub fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::format(self.kind, format!("{} (byte offset {})", message.into(), self.pos)))
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.kind,
                format!("{} trailing bytes at offset {}", self.remaining(), self.pos),
            ));
        }
        Ok(())
    }
}

pub(crate) fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_i64s(out: &mut Vec<u8>, vs: &[i64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

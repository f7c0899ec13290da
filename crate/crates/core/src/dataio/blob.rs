//! Little-endian writer/reader for versioned model blobs. Every read is
//! bounds-checked and reports truncation instead of panicking.

use crate::error::{Error, Result};

pub struct BlobWriter {
    buf: Vec<u8>,
}

impl BlobWriter {
    pub fn new(magic: &[u8; 4], version: u8) -> Self {
        let mut buf = magic.to_vec();
        buf.push(version);
        Self { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
        self.buf.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        self.u32(vs.len())?;
        vs.iter().for_each(|v| self.f64(*v));
        Ok(())
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct BlobReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BlobReader<'a> {
    /// Checks magic and version (`version` is the only supported one).
    pub fn new(bytes: &'a [u8], magic: &[u8; 4], version: u8) -> Result<Self> {
        if bytes.len() < 5 {
            return Err(Error::Truncation { expected: 5, found: bytes.len() });
        }
        if &bytes[..4] != magic {
            return Err(Error::Format(format!("bad magic {:?}, expected {:?}", &bytes[..4], magic)));
        }
        if bytes[4] != version {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        Ok(Self { bytes, pos: 5 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncation { expected: self.pos.saturating_add(n), found: self.bytes.len() }),
        }
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Length-prefixed `f64` array; the length is checked against the
    /// remaining bytes before allocating.
    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u32()?;
        self.f64_array(n)
    }

    pub fn f64_array(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("array length overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    pub fn finish(self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.bytes.len() - self.pos)))
        }
    }
}

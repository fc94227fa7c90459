//! Little-endian binary helpers shared by the dataset and checkpoint formats.

use std::io::{self, Read, Write};

pub(crate) struct LeWriter<W: Write> {
    inner: W,
}

impl<W: Write> LeWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        v.iter().try_for_each(|x| self.f64(*x))
    }
}

pub(crate) struct LeReader<R: Read> {
    inner: R,
}

impl<R: Read> LeReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn array<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner.read_exact(&mut buf)?;
        Ok(buf)
    }

    pub fn u8(&mut self) -> io::Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn at_eof(&mut self) -> io::Result<bool> {
        let mut probe = [0u8; 1];
        Ok(self.inner.read(&mut probe)? == 0)
    }
}

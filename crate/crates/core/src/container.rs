//! Shared binary envelope for archives, checkpoints and datasets.
//!
//! ```text
//! magic[4] | u32 version | u64 header_len | header (JSON, UTF-8) | payload | u64 checksum
//! ```
//!
//! All integers little-endian. The checksum is the first eight bytes of the
//! SHA-256 of the payload, read as a little-endian `u64`.

use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub struct ContainerWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl ContainerWriter<BufWriter<File>> {
    pub fn create(path: &Path, magic: &[u8; 4], version: u32, header: &str) -> Result<Self> {
        let f = BufWriter::with_capacity(1 << 20, File::create(path)?);
        Self::new(f, magic, version, header)
    }
}

impl<W: Write> ContainerWriter<W> {
    pub fn new(mut inner: W, magic: &[u8; 4], version: u32, header: &str) -> Result<Self> {
        inner.write_all(magic)?;
        inner.write_all(&version.to_le_bytes())?;
        inner.write_all(&(header.len() as u64).to_le_bytes())?;
        inner.write_all(header.as_bytes())?;
        Ok(Self {
            inner,
            hasher: Sha256::new(),
        })
    }

    pub fn write(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    pub fn write_f32s(&mut self, values: &[f32]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.write(&buf)
    }

    pub fn write_u64s(&mut self, values: &[u64]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 8);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.write(&buf)
    }

    pub fn finish(mut self) -> Result<W> {
        let sum = digest_u64(self.hasher.finalize().as_slice());
        self.inner.write_all(&sum.to_le_bytes())?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct ContainerReader<R: Read> {
    inner: R,
    hasher: Sha256,
    pub version: u32,
    pub header: String,
}

impl ContainerReader<BufReader<File>> {
    pub fn open(path: &Path, magic: &[u8; 4], supported: u32) -> Result<Self> {
        let f = BufReader::with_capacity(1 << 20, File::open(path)?);
        Self::new(f, magic, supported)
    }
}

impl<R: Read> ContainerReader<R> {
    pub fn new(mut inner: R, magic: &[u8; 4], supported: u32) -> Result<Self> {
        let mut m = [0u8; 4];
        inner.read_exact(&mut m)?;
        if &m != magic {
            return Err(Error::Format(format!(
                "magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = read_u32(&mut inner)?;
        if version != supported {
            return Err(Error::Version {
                expected: supported,
                found: version,
            });
        }
        let len = read_u64(&mut inner)?;
        if len > (1 << 30) {
            return Err(Error::Format(format!("header length {len}")));
        }
        let mut h = vec![0u8; len as usize];
        inner.read_exact(&mut h)?;
        let header = String::from_utf8(h).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            inner,
            hasher: Sha256::new(),
            version,
            header,
        })
    }

    pub fn read(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner.read_exact(buf).map_err(truncated)?;
        self.hasher.update(&*buf);
        Ok(())
    }

    pub fn read_f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; n * 4];
        self.read(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub fn read_u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let mut buf = vec![0u8; n * 8];
        self.read(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Verifies the trailing checksum and that nothing follows it.
    pub fn finish(mut self) -> Result<()> {
        let stored = read_u64(&mut self.inner).map_err(|_| Error::Format("missing checksum".into()))?;
        if stored != digest_u64(self.hasher.finalize().as_slice()) {
            return Err(Error::PayloadChecksum);
        }
        let mut rest = [0u8; 1];
        if self.inner.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checksum".into()));
        }
        Ok(())
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated payload".into())
    } else {
        Error::Io(e)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn digest_u64(d: &[u8]) -> u64 {
    u64::from_le_bytes(d[..8].try_into().expect("sha256 digest"))
}

/// Hex SHA-256 of a whole file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

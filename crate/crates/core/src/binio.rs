//! Little-endian helpers shared by the LWNB/LWNK/LWNM containers.

use std::fs;
use std::io::{self, BufWriter, ErrorKind, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const FORMAT_VERSION: u32 = 1;

#[derive(Default)]
pub(crate) struct LeWriter {
    buf: Vec<u8>,
}

impl LeWriter {
    pub fn with_capacity(n: usize) -> Self {
        Self { buf: Vec::with_capacity(n) }
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed (u16) UTF-8 string.
    pub fn short_str(&mut self, s: &str, what: &str) -> Result<()> {
        let len = u16::try_from(s.len())
            .map_err(|_| Error::Format(format!("{what} longer than 65535 bytes")))?;
        self.u16(len);
        self.bytes(s.as_bytes());
        Ok(())
    }

    pub fn dim(&mut self, v: usize, what: &str) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Format(format!("{what} does not fit in u32")))?;
        self.u32(v);
        Ok(())
    }

    pub fn f32s(&mut self, data: &[f32]) {
        self.buf.reserve(data.len() * 4);
        for v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct LeReader<R> {
    inner: R,
}

impl<R: Read + Seek> LeReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    fn exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Corrupt(format!("file truncated while reading {what}")),
            _ => Error::Corrupt(format!("read failed on {what}: {e}")),
        })
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let mut m = [0u8; 4];
        self.inner.read_exact(&mut m).map_err(|_| Error::Format("missing magic bytes".into()))?;
        if &m != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(expected)
            )));
        }
        let version = self.u32("format version").map_err(|_| Error::Format("missing version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format version {version}")));
        }
        Ok(())
    }

    pub fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.exact(&mut b, what)?;
        Ok(b[0])
    }

    pub fn u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.exact(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    pub fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn dim(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    pub fn short_str(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        let mut b = vec![0u8; len];
        self.exact(&mut b, what)?;
        String::from_utf8(b).map_err(|_| Error::Format(format!("{what} is not valid UTF-8")))
    }

    pub fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        const BLOCK: usize = 1 << 16;
        let mut out = Vec::with_capacity(count.min(1 << 28));
        let mut raw = vec![0u8; BLOCK * 4];
        let mut remaining = count;
        while remaining > 0 {
            let n = remaining.min(BLOCK);
            let buf = &mut raw[..n * 4];
            let mut filled = 0;
            while filled < buf.len() {
                match self.inner.read(&mut buf[filled..]) {
                    Ok(0) => {
                        return Err(Error::Corrupt(format!(
                            "{what}: expected {count} floats, payload ends after {}",
                            count - remaining + filled / 4
                        )))
                    }
                    Ok(k) => filled += k,
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(e) => return Err(Error::Corrupt(format!("read failed on {what}: {e}"))),
                }
            }
            out.extend(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])));
            remaining -= n;
        }
        Ok(out)
    }

    pub fn skip_f32s(&mut self, count: usize, what: &str) -> Result<()> {
        let nbytes = (count as u64)
            .checked_mul(4)
            .ok_or_else(|| Error::Corrupt(format!("{what}: element count overflows")))?;
        let here = self.position()?;
        let end = self
            .inner
            .seek(SeekFrom::End(0))
            .map_err(|e| Error::Corrupt(format!("seek failed: {e}")))?;
        if end - here < nbytes {
            return Err(Error::Corrupt(format!(
                "{what}: expected {count} floats, found {} bytes of payload",
                end - here
            )));
        }
        self.inner
            .seek(SeekFrom::Start(here + nbytes))
            .map_err(|e| Error::Corrupt(format!("seek failed: {e}")))?;
        Ok(())
    }

    fn position(&mut self) -> Result<u64> {
        self.inner.stream_position().map_err(|e| Error::Corrupt(format!("seek failed: {e}")))
    }

    /// Fails if bytes remain after the declared payload.
    pub fn expect_end(&mut self) -> Result<()> {
        let here = self.position()?;
        let end = self
            .inner
            .seek(SeekFrom::End(0))
            .map_err(|e| Error::Corrupt(format!("seek failed: {e}")))?;
        if end != here {
            return Err(Error::Corrupt(format!("{} trailing bytes after payload", end - here)));
        }
        Ok(())
    }
}

/// Write `bytes` to a temporary sibling of `path`, then rename over it.
pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    atomic_write_parts(path, bytes, &[])
}

/// Atomically writes `header` followed by `floats` in little-endian order.
pub(crate) fn atomic_write_parts(path: &Path, header: &[u8], floats: &[f32]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(header).map_err(|e| Error::io(path, e))?;
        let mut block = Vec::with_capacity(1 << 18);
        for chunk in floats.chunks(1 << 16) {
            block.clear();
            for v in chunk {
                block.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&block).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub(crate) fn open(path: &Path) -> Result<LeReader<io::BufReader<fs::File>>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(LeReader::new(io::BufReader::new(f)))
}

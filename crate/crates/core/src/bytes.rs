//! Little-endian byte buffers with CRC-32 framing, shared by the checkpoint
//! and binary dataset formats.

use std::path::Path;

use crate::error::{Error, Result};

/// Append-only little-endian writer.
#[derive(Default)]
pub(crate) struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_bits().to_le_bytes());
    }

    pub fn put_f64_slice(&mut self, vs: &[f64]) {
        self.put_u64(vs.len() as u64);
        for &v in vs {
            self.put_f64(v);
        }
    }

    pub fn put_str(&mut self, s: &str) {
        self.put_u64(s.len() as u64);
        self.put_bytes(s.as_bytes());
    }

    /// Finish the payload: appends the CRC-32 of everything written so far.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

/// Cursor over a little-endian byte buffer; every read checks for truncation.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> ByteReader<'a> {
    /// Verify the CRC-32 trailer, then return a reader over the payload.
    pub fn new_checked(buf: &'a [u8], path: &'a Path) -> Result<Self> {
        if buf.len() < 4 {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("{} bytes, need at least 4 for the checksum", buf.len()),
            });
        }
        let (payload, trailer) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("trailer is 4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(Error::ChecksumMismatch {
                path: path.to_path_buf(),
            });
        }
        Ok(Self {
            buf: payload,
            pos: 0,
            path,
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!(
                    "needed {n} bytes for {what} at offset {}, {} remain",
                    self.pos,
                    self.buf.len() - self.pos
                ),
            });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn get_bytes(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.take(n, what)
    }

    pub fn get_u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub fn get_u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub fn get_u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn get_f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.get_u64(what)?))
    }

    pub fn get_f64_vec(&mut self, what: &str) -> Result<Vec<f64>> {
        let n = self.get_u64(what)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.get_f64(what)?);
        }
        Ok(out)
    }

    pub fn get_string(&mut self, what: &str) -> Result<String> {
        let n = self.get_u64(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Truncated {
            path: self.path.to_path_buf(),
            detail: format!("{what} is not valid UTF-8"),
        })
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!(
                    "{} trailing bytes after the last field",
                    self.buf.len() - self.pos
                ),
            });
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| Error::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    #[test]
    fn round_trip_all_field_kinds() {
        let mut w = ByteWriter::new();
        w.put_bytes(b"HDR!");
        w.put_u32(7);
        w.put_u64(1 << 40);
        w.put_f64(-0.125);
        w.put_f64_slice(&[1.0, 2.5, -3.75]);
        w.put_str("domain-0");
        let bytes = w.finish();

        let path = PathBuf::from("mem");
        let mut r = ByteReader::new_checked(&bytes, &path).unwrap();
        assert_eq!(r.get_bytes(4, "magic").unwrap(), b"HDR!");
        assert_eq!(r.get_u32("v").unwrap(), 7);
        assert_eq!(r.get_u64("n").unwrap(), 1 << 40);
        assert_eq!(r.get_f64("x").unwrap(), -0.125);
        assert_eq!(r.get_f64_vec("xs").unwrap(), vec![1.0, 2.5, -3.75]);
        assert_eq!(r.get_string("tag").unwrap(), "domain-0");
        r.finish().unwrap();
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let mut w = ByteWriter::new();
        w.put_f64_slice(&[1.0, 2.0, 3.0]);
        let mut bytes = w.finish();
        bytes[9] ^= 0x01;
        let path = PathBuf::from("mem");
        match ByteReader::new_checked(&bytes, &path) {
            Err(Error::ChecksumMismatch { .. }) => {}
            other => panic!("expected checksum mismatch, got {:?}", other.err()),
        }
    }

    #[test]
    fn truncated_read_is_reported() {
        let mut w = ByteWriter::new();
        w.put_u32(1);
        let bytes = w.finish();
        let path = PathBuf::from("mem");
        let mut r = ByteReader::new_checked(&bytes, &path).unwrap();
        let _ = r.get_u32("v").unwrap();
        let err = r.get_u64("missing").unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }));
    }
}

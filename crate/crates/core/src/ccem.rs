//! CCEM: the on-disk embedding store.
//!
//! Little-endian throughout: magic `CCEM`, u32 version (= 1), u32 record
//! count, then per record a u16 id byte-length, the UTF-8 id bytes, u32 rows,
//! u32 cols, and rows x cols IEEE-754 f32 values row-major. Row 0 is the
//! global cls vector; any further rows are regions (images) or tokens
//! (texts). Single-row records hold bare concept vectors. No padding.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Vector};
use crate::types::{ImageEmbedding, TextEmbedding};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CCEM";
pub const VERSION: u32 = 1;

/// One store record: an id plus its payload matrix (row 0 = cls).
#[derive(Debug, Clone, PartialEq)]
pub struct CcemRecord {
    pub id: String,
    pub data: Matrix,
}

impl CcemRecord {
    pub fn from_image(e: &ImageEmbedding) -> Self {
        Self {
            id: e.id.clone(),
            data: stack(e.cls.as_slice(), &e.regions),
        }
    }

    pub fn from_text(e: &TextEmbedding) -> Self {
        Self {
            id: e.id.clone(),
            data: stack(e.cls.as_slice(), &e.tokens),
        }
    }

    /// A bare vector record (rows = 1), used for concept stores.
    pub fn from_vector(id: impl Into<String>, v: &Vector) -> Self {
        Self {
            id: id.into(),
            data: Matrix::new(1, v.dim(), v.as_slice().to_vec()).expect("valid vector"),
        }
    }

    pub fn cls(&self) -> &[f64] {
        self.data.row(0)
    }

    pub fn cls_vector(&self) -> Result<Vector> {
        Vector::new(self.cls().to_vec())
    }

    pub fn to_image(&self) -> Result<ImageEmbedding> {
        let (cls, rest) = self.split()?;
        ImageEmbedding::new(self.id.clone(), cls, rest)
    }

    pub fn to_text(&self) -> Result<TextEmbedding> {
        let (cls, rest) = self.split()?;
        TextEmbedding::new(self.id.clone(), cls, rest)
    }

    fn split(&self) -> Result<(Vector, Matrix)> {
        if self.data.rows() < 2 {
            return Err(Error::EmptyInput);
        }
        let cls = Vector::new(self.data.row(0).to_vec())?;
        let rest = Matrix::new(
            self.data.rows() - 1,
            self.data.cols(),
            self.data.values()[self.data.cols()..].to_vec(),
        )?;
        Ok((cls, rest))
    }
}

fn stack(cls: &[f64], rest: &Matrix) -> Matrix {
    let mut values = cls.to_vec();
    values.extend_from_slice(rest.values());
    Matrix::new(1 + rest.rows(), rest.cols(), values).expect("consistent shapes")
}

/// Serialize records to `path`. All records must share one column count.
pub fn write_ccem<P: AsRef<Path>>(records: &[CcemRecord], path: P) -> Result<()> {
    let mut buf = Vec::new();
    write_ccem_to(records, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_ccem_to<W: Write>(records: &[CcemRecord], w: &mut W) -> Result<()> {
    if let Some(first) = records.first() {
        for r in records {
            if r.data.cols() != first.data.cols() {
                return Err(Error::DimMismatch {
                    left: first.data.cols(),
                    right: r.data.cols(),
                });
            }
        }
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for r in records {
        let id = r.id.as_bytes();
        if id.len() > u16::MAX as usize {
            return Err(Error::LengthMismatch {
                left: id.len(),
                right: u16::MAX as usize,
            });
        }
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id)?;
        w.write_all(&(r.data.rows() as u32).to_le_bytes())?;
        w.write_all(&(r.data.cols() as u32).to_le_bytes())?;
        for &v in r.data.values() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Parse a CCEM file, validating magic, version, and all lengths.
pub fn read_ccem<P: AsRef<Path>>(path: P) -> Result<Vec<CcemRecord>> {
    let bytes = std::fs::read(path)?;
    read_ccem_from(&mut bytes.as_slice())
}

pub fn read_ccem_from<R: Read>(r: &mut R) -> Result<Vec<CcemRecord>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cursor = Cursor {
        bytes: &bytes,
        pos: 0,
    };

    let magic = cursor.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = cursor.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = cursor.u32("record count")? as usize;

    let mut records = Vec::with_capacity(count);
    let mut shared_cols: Option<usize> = None;
    for i in 0..count {
        let ctx = |what: &str| format!("record {i}: {what}");
        let id_len = cursor.u16(&ctx("id length"))? as usize;
        let id_bytes = cursor.take(id_len, &ctx("id bytes"))?;
        let id = String::from_utf8(id_bytes.to_vec())
            .map_err(|_| Error::Truncated(ctx("id is not valid UTF-8")))?;
        let rows = cursor.u32(&ctx("rows"))? as usize;
        let cols = cursor.u32(&ctx("cols"))? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::Truncated(ctx("zero rows or cols")));
        }
        if let Some(h) = shared_cols {
            if cols != h {
                return Err(Error::DimMismatch {
                    left: h,
                    right: cols,
                });
            }
        } else {
            shared_cols = Some(cols);
        }
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Truncated(ctx("rows*cols overflows")))?;
        let payload = cursor.take(n * 4, &ctx("payload"))?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        records.push(CcemRecord {
            id,
            data: Matrix::new(rows, cols, values)?,
        });
    }
    if cursor.pos != bytes.len() {
        return Err(Error::TrailingBytes);
    }
    Ok(records)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(what.to_string()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, rows: usize, cols: usize, seed: f64) -> CcemRecord {
        let values: Vec<f64> = (0..rows * cols)
            .map(|i| ((i as f64 + seed) * 0.25) as f32 as f64)
            .collect();
        CcemRecord {
            id: id.to_string(),
            data: Matrix::new(rows, cols, values).unwrap(),
        }
    }

    #[test]
    fn round_trip_identity() {
        let records = vec![record("a", 3, 4, 1.0), record("b", 1, 4, 9.0)];
        let mut buf = Vec::new();
        write_ccem_to(&records, &mut buf).unwrap();
        let back = read_ccem_from(&mut buf.as_slice()).unwrap();
        assert_eq!(records, back);
    }

    #[test]
    fn empty_store_round_trips() {
        let mut buf = Vec::new();
        write_ccem_to(&[], &mut buf).unwrap();
        assert_eq!(buf.len(), 12);
        let back = read_ccem_from(&mut buf.as_slice()).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn mixed_h_rejected_on_write() {
        let records = vec![record("a", 2, 4, 0.0), record("b", 2, 5, 0.0)];
        let mut buf = Vec::new();
        assert!(matches!(
            write_ccem_to(&records, &mut buf),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_ccem_to(&[record("a", 1, 2, 0.0)], &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(
            read_ccem_from(&mut buf.as_slice()),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn unsupported_version() {
        let mut buf = Vec::new();
        write_ccem_to(&[], &mut buf).unwrap();
        buf[4] = 2;
        assert!(matches!(
            read_ccem_from(&mut buf.as_slice()),
            Err(Error::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn truncated_mid_record() {
        let mut buf = Vec::new();
        write_ccem_to(&[record("a", 2, 3, 0.0)], &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(
            read_ccem_from(&mut buf.as_slice()),
            Err(Error::Truncated(_))
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut buf = Vec::new();
        write_ccem_to(&[record("a", 2, 3, 0.0)], &mut buf).unwrap();
        buf.push(0);
        assert!(matches!(
            read_ccem_from(&mut buf.as_slice()),
            Err(Error::TrailingBytes)
        ));
    }

    #[test]
    fn image_text_conversions() {
        let rec = record("img", 4, 3, 2.0);
        let img = rec.to_image().unwrap();
        assert_eq!(img.num_regions(), 3);
        assert_eq!(img.cls.as_slice(), rec.data.row(0));
        assert_eq!(CcemRecord::from_image(&img), rec);

        let txt = rec.to_text().unwrap();
        assert_eq!(txt.num_tokens(), 3);
        assert_eq!(CcemRecord::from_text(&txt), rec);

        let single = record("c", 1, 3, 0.0);
        assert!(single.to_image().is_err());
        assert_eq!(single.cls_vector().unwrap().dim(), 3);
    }

    #[test]
    fn write_is_reproducible() {
        let records = vec![record("a", 3, 4, 1.0), record("b", 5, 4, 3.0)];
        let mut b1 = Vec::new();
        let mut b2 = Vec::new();
        write_ccem_to(&records, &mut b1).unwrap();
        write_ccem_to(&records, &mut b2).unwrap();
        assert_eq!(b1, b2);
    }
}

//! Binary dataset files: a 20-byte header followed by little-endian f32
//! values, series after series. Query files use the same layout.
//!
//! ```text
//! "ODSY" | version u16 | count u64 | length u32 | encoding u16 | values
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::series::Dataset;

pub const MAGIC: [u8; 4] = *b"ODSY";
pub const VERSION: u16 = 1;
pub const ENCODING_F32_LE: u16 = 1;
pub const HEADER_LEN: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u16,
    pub count: u64,
    pub series_len: u32,
    pub encoding: u16,
}

impl DatasetHeader {
    pub fn payload_len(&self) -> Option<u64> {
        self.count.checked_mul(u64::from(self.series_len))?.checked_mul(4)
    }

    fn to_bytes(self) -> [u8; HEADER_LEN as usize] {
        let mut b = [0u8; HEADER_LEN as usize];
        b[..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..14].copy_from_slice(&self.count.to_le_bytes());
        b[14..18].copy_from_slice(&self.series_len.to_le_bytes());
        b[18..20].copy_from_slice(&self.encoding.to_le_bytes());
        b
    }

    fn parse(b: &[u8]) -> Result<Self> {
        if b.len() < HEADER_LEN as usize {
            return Err(Error::CorruptFile(format!("{} header bytes, expected {HEADER_LEN}", b.len())));
        }
        if b[..4] != MAGIC {
            return Err(Error::CorruptFile("bad magic".into()));
        }
        let h = Self {
            version: u16::from_le_bytes([b[4], b[5]]),
            count: u64::from_le_bytes(b[6..14].try_into().unwrap()),
            series_len: u32::from_le_bytes(b[14..18].try_into().unwrap()),
            encoding: u16::from_le_bytes([b[18], b[19]]),
        };
        if h.version != VERSION {
            return Err(Error::CorruptFile(format!("unsupported version {}", h.version)));
        }
        if h.encoding != ENCODING_F32_LE {
            return Err(Error::CorruptFile(format!("unknown value encoding {}", h.encoding)));
        }
        if h.series_len == 0 {
            return Err(Error::CorruptFile("series length 0".into()));
        }
        Ok(h)
    }
}

pub fn encode_dataset(data: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN as usize + data.values().len() * 4);
    write_to(data, &mut out)?;
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    read_from(bytes, bytes.len() as u64)
}

fn write_to(data: &Dataset, w: &mut impl Write) -> Result<()> {
    let series_len = u32::try_from(data.series_len()).map_err(|_| Error::invalid("series too long for the file format"))?;
    let header = DatasetHeader {
        version: VERSION,
        count: data.len() as u64,
        series_len,
        encoding: ENCODING_F32_LE,
    };
    w.write_all(&header.to_bytes())?;
    for &v in data.values() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_from(mut r: impl Read, file_len: u64) -> Result<Dataset> {
    let mut hb = [0u8; HEADER_LEN as usize];
    if file_len < HEADER_LEN {
        return Err(Error::CorruptFile(format!("{file_len} bytes is shorter than the header")));
    }
    r.read_exact(&mut hb)?;
    let header = DatasetHeader::parse(&hb)?;
    let payload = header
        .payload_len()
        .ok_or_else(|| Error::CorruptFile("header sizes overflow".into()))?;
    if file_len - HEADER_LEN != payload {
        return Err(Error::CorruptFile(format!(
            "header promises {payload} value bytes, file holds {}",
            file_len - HEADER_LEN
        )));
    }
    let mut raw = vec![0u8; payload as usize];
    r.read_exact(&mut raw)?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Dataset::new(header.series_len as usize, values)
}

pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(data, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path)?;
    let len = file.metadata()?.len();
    read_from(BufReader::new(file), len)
}

pub fn read_header(path: impl AsRef<Path>) -> Result<DatasetHeader> {
    let mut hb = [0u8; HEADER_LEN as usize];
    let mut file = File::open(path)?;
    let n = file.read(&mut hb)?;
    DatasetHeader::parse(&hb[..n])
}

/// Headerless little-endian f32 values, `series_len` per series.
pub fn import_raw_f32(path: impl AsRef<Path>, series_len: usize) -> Result<Dataset> {
    let raw = std::fs::read(path)?;
    if series_len == 0 || raw.len() % (4 * series_len) != 0 {
        return Err(Error::CorruptFile(format!(
            "{} bytes is not a whole number of {series_len}-value series",
            raw.len()
        )));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Dataset::new(series_len, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::random_walks;

    #[test]
    fn round_trip_is_bit_exact() {
        let data = random_walks(50, 33, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.odsy");
        write_dataset(&data, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.len(), 50);
        for (a, b) in data.values().iter().zip(back.values()) {
            assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
        }
        let again = dir.path().join("e.odsy");
        write_dataset(&back, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        assert_eq!(std::fs::metadata(&path).unwrap().len(), HEADER_LEN + 50 * 33 * 4);
    }

    #[test]
    fn truncated_and_bad_magic_are_corrupt() {
        let bytes = encode_dataset(&random_walks(4, 8, 1)).unwrap();
        assert!(matches!(decode_dataset(&bytes[..bytes.len() - 1]), Err(Error::CorruptFile(_))));
        assert!(matches!(decode_dataset(&bytes[..10]), Err(Error::CorruptFile(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_dataset(&bad), Err(Error::CorruptFile(_))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_dataset(&long), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn zero_count_reads_as_empty() {
        let data = Dataset::empty(16).unwrap();
        let back = decode_dataset(&encode_dataset(&data).unwrap()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.series_len(), 16);
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_dataset(&random_walks(2, 3, 1)).unwrap();
        assert_eq!(&bytes[..4], b"ODSY");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..14], &2u64.to_le_bytes());
        assert_eq!(&bytes[14..18], &3u32.to_le_bytes());
        assert_eq!(&bytes[18..20], &[1, 0]);
    }

    #[test]
    fn raw_import_checks_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.bin");
        let vals: Vec<u8> = (0..12).flat_map(|i| (i as f32).to_le_bytes()).collect();
        std::fs::write(&path, &vals).unwrap();
        assert_eq!(import_raw_f32(&path, 4).unwrap().len(), 3);
        assert!(import_raw_f32(&path, 5).is_err());
    }
}

//! SVOX v1 sample container, little-endian:
//!
//! | offset | size   | field                                  |
//! |--------|--------|----------------------------------------|
//! | 0      | 4      | magic `SVOX`                           |
//! | 4      | 2      | version (1)                            |
//! | 6      | 2      | grid side d                            |
//! | 8      | 1      | element width in bytes (8)             |
//! | 9      | 1      | reserved (0)                           |
//! | 10     | 24     | label: omega_m, sigma8, n_s as f64     |
//! | 34     | 8 d^3  | densities as f64, x fastest            |
//! | end-8  | 8      | FNV-1a 64 over header and payload      |

use super::{CosmoLabel, DatagenError, DensityGrid};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

pub const SVOX_MAGIC: [u8; 4] = *b"SVOX";
pub const SVOX_VERSION: u16 = 1;
pub const SVOX_HEADER_BYTES: usize = 34;
const ELEMENT_BYTES: u8 = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CosmoSample {
    pub label: CosmoLabel,
    pub grid: DensityGrid,
}

impl CosmoSample {
    /// Size of the encoded file.
    pub fn encoded_len(d: usize) -> usize {
        SVOX_HEADER_BYTES + d * d * d * ELEMENT_BYTES as usize + 8
    }

    pub fn encode(&self) -> Vec<u8> {
        let d = self.grid.d;
        let mut buf = Vec::with_capacity(Self::encoded_len(d));
        buf.extend_from_slice(&SVOX_MAGIC);
        buf.extend_from_slice(&SVOX_VERSION.to_le_bytes());
        buf.extend_from_slice(&(d as u16).to_le_bytes());
        buf.push(ELEMENT_BYTES);
        buf.push(0);
        for v in self.label.as_array() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.grid.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let sum = fnv1a64(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DatagenError> {
        let eof = |what: &str| DatagenError::Io(io::Error::new(io::ErrorKind::UnexpectedEof, what.to_string()));
        if bytes.len() < 4 {
            return Err(eof("missing magic"));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != SVOX_MAGIC {
            return Err(DatagenError::BadMagic(magic));
        }
        if bytes.len() < SVOX_HEADER_BYTES {
            return Err(eof("truncated header"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u16_at(4);
        if version != SVOX_VERSION {
            return Err(DatagenError::VersionUnsupported(version));
        }
        let d = u16_at(6) as usize;
        if bytes[8] != ELEMENT_BYTES {
            return Err(DatagenError::UnsupportedElementWidth(bytes[8]));
        }
        let expected = Self::encoded_len(d);
        if bytes.len() < expected {
            return Err(eof("truncated payload"));
        }
        if bytes.len() > expected {
            return Err(DatagenError::Io(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("{} trailing bytes", bytes.len() - expected),
            )));
        }
        let body = &bytes[..expected - 8];
        let stored = u64::from_le_bytes(bytes[expected - 8..].try_into().unwrap());
        let computed = fnv1a64(body);
        if stored != computed {
            return Err(DatagenError::ChecksumMismatch { stored, computed });
        }
        let label = CosmoLabel {
            omega_m: f64_at(10),
            sigma8: f64_at(18),
            n_s: f64_at(26),
        };
        let values = body[SVOX_HEADER_BYTES..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(CosmoSample {
            label,
            grid: DensityGrid { d, values },
        })
    }

    /// Checksum stored in the trailer of the encoding.
    pub fn checksum(&self) -> u64 {
        let enc = self.encode();
        u64::from_le_bytes(enc[enc.len() - 8..].try_into().unwrap())
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Writes the sample and returns its checksum.
pub fn write_sample(sample: &CosmoSample, path: &Path) -> Result<u64, DatagenError> {
    let enc = sample.encode();
    let io_at = |source| DatagenError::IoAt {
        path: path.to_path_buf(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io_at)?;
    f.write_all(&enc).map_err(io_at)?;
    Ok(u64::from_le_bytes(enc[enc.len() - 8..].try_into().unwrap()))
}

pub fn read_sample(path: &Path) -> Result<CosmoSample, DatagenError> {
    let bytes = fs::read(path).map_err(|source| DatagenError::IoAt {
        path: path.to_path_buf(),
        source,
    })?;
    CosmoSample::decode(&bytes)
}

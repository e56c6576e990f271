//! Byte files to field symbols and back.
//!
//! With `q >= 256` each byte is one symbol. Smaller fields split every byte
//! into equal chunks of `b` bits, most significant first, with `b` the
//! largest of 8, 4, 2, 1 such that `2^b <= q`. Files are zero padded to the
//! common length `alpha' * s`; the manifest keeps the original lengths.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SchemeParams;
use crate::protocol::Database;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Packing {
    Byte,
    Nibble,
    Crumb,
    Bit,
}

impl Packing {
    pub fn for_field(q: u64) -> Result<Self> {
        Ok(match q {
            256.. => Packing::Byte,
            16.. => Packing::Nibble,
            4.. => Packing::Crumb,
            2.. => Packing::Bit,
            _ => return Err(Error::NotPrime(q)),
        })
    }

    pub fn bits(self) -> u32 {
        match self {
            Packing::Byte => 8,
            Packing::Nibble => 4,
            Packing::Crumb => 2,
            Packing::Bit => 1,
        }
    }

    pub fn symbols_per_byte(self) -> usize {
        8 / self.bits() as usize
    }

    pub fn pack(self, bytes: &[u8]) -> Vec<u64> {
        let b = self.bits();
        let mask = (1u16 << b) - 1;
        let per = self.symbols_per_byte();
        let mut out = Vec::with_capacity(bytes.len() * per);
        for &byte in bytes {
            for j in (0..per).rev() {
                out.push(((byte as u16 >> (j as u32 * b)) & mask) as u64);
            }
        }
        out
    }

    /// Inverse of [`Packing::pack`], truncated to `len` bytes.
    pub fn unpack(self, symbols: &[u64], len: usize) -> Result<Vec<u8>> {
        let b = self.bits();
        let per = self.symbols_per_byte();
        if symbols.len() < len * per {
            return Err(Error::Manifest(format!(
                "{} symbols cannot hold {len} bytes",
                symbols.len()
            )));
        }
        symbols
            .chunks(per)
            .take(len)
            .map(|chunk| {
                chunk.iter().try_fold(0u16, |acc, &s| {
                    if s >> b != 0 {
                        return Err(Error::Manifest(format!("symbol {s} exceeds {b}-bit chunk")));
                    }
                    Ok((acc << b) | s as u16)
                })
            })
            .map(|r| r.map(|v| v as u8))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub params: SchemeParams,
    pub packing: Packing,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Manifest(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(e.to_string()))?;
        if m.files.len() != m.params.m() {
            return Err(Error::Manifest(format!(
                "{} file entries for m = {}",
                m.files.len(),
                m.params.m()
            )));
        }
        Ok(m)
    }

    /// Restores file `index` from its decoded symbols.
    pub fn restore(&self, index: usize, symbols: &[u64]) -> Result<Vec<u8>> {
        let entry = self.files.get(index).ok_or(Error::FileIndexOutOfRange {
            index,
            m: self.files.len(),
        })?;
        self.packing.unpack(symbols, entry.length)
    }
}

/// Packs named byte files into a database for `(n, k, t)` over GF(q).
/// The batch width is the smallest `s >= batch` that fits the longest file.
pub fn ingest(
    files: &[(String, Vec<u8>)],
    n: usize,
    k: usize,
    t: usize,
    q: u64,
    batch: usize,
) -> Result<(Manifest, Database)> {
    if files.is_empty() {
        return Err(Error::InvalidParameter("no input files".into()));
    }
    let packing = Packing::for_field(q)?;
    let probe = SchemeParams::new(n, k, t, files.len(), q, batch.max(1))?;
    let symbols: Vec<Vec<u64>> = files.iter().map(|(_, bytes)| packing.pack(bytes)).collect();
    let longest = symbols.iter().map(Vec::len).max().unwrap_or(0);
    let s = batch.max(1).max(longest.div_ceil(probe.alpha_prime()));
    let params = probe.with_files(files.len(), s)?;
    let db = Database::new(&params, &symbols)?;
    let manifest = Manifest {
        params,
        packing,
        files: files
            .iter()
            .map(|(name, bytes)| FileEntry {
                name: name.clone(),
                length: bytes.len(),
            })
            .collect(),
    };
    Ok((manifest, db))
}

/// Reads every regular file in `dir`, sorted by name.
pub fn read_dir_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        if entry.file_type()?.is_file() {
            out.push((
                entry.file_name().to_string_lossy().into_owned(),
                fs::read(entry.path())?,
            ));
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Rebuilds the database described by `manifest` from the files in `dir`.
pub fn load_database(manifest: &Manifest, dir: &Path) -> Result<Database> {
    let symbols = manifest
        .files
        .iter()
        .map(|f| {
            let bytes = fs::read(dir.join(&f.name))?;
            if bytes.len() != f.length {
                return Err(Error::Manifest(format!(
                    "{} is {} bytes, manifest says {}",
                    f.name,
                    bytes.len(),
                    f.length
                )));
            }
            Ok(manifest.packing.pack(&bytes))
        })
        .collect::<Result<Vec<_>>>()?;
    Database::new(&manifest.params, &symbols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::retrieve_local;
    use crate::staircase::StaircaseCode;

    #[test]
    fn packing_choice() {
        assert_eq!(Packing::for_field(257).unwrap(), Packing::Byte);
        assert_eq!(Packing::for_field(17).unwrap(), Packing::Nibble);
        assert_eq!(Packing::for_field(5).unwrap(), Packing::Crumb);
        assert_eq!(Packing::for_field(3).unwrap(), Packing::Bit);
        assert_eq!(Packing::Crumb.pack(&[0b1101_0010]), vec![3, 1, 0, 2]);
        assert_eq!(Packing::Nibble.pack(&[0xA7]), vec![0xA, 0x7]);
    }

    #[test]
    fn pack_unpack_identity() {
        let bytes: Vec<u8> = (0..=255).collect();
        for p in [Packing::Byte, Packing::Nibble, Packing::Crumb, Packing::Bit] {
            let mut syms = p.pack(&bytes);
            syms.extend([0, 0, 0]);
            assert_eq!(p.unpack(&syms, bytes.len()).unwrap(), bytes);
        }
        assert!(Packing::Crumb.unpack(&[4, 0, 0, 0], 1).is_err());
        assert!(Packing::Byte.unpack(&[1], 2).is_err());
    }

    #[test]
    fn retrieval_round_trip() {
        let files = vec![
            ("a.txt".to_string(), b"hello staircase".to_vec()),
            (
                "b.bin".to_string(),
                (0..40u8).map(|x| x.wrapping_mul(37)).collect(),
            ),
            ("c".to_string(), Vec::new()),
        ];
        for q in [257, 5] {
            let (manifest, db) = ingest(&files, 4, 2, 1, q, 1).unwrap();
            let code = StaircaseCode::vandermonde(manifest.params.clone()).unwrap();
            for (i, (_, bytes)) in files.iter().enumerate() {
                let got = retrieve_local(&code, &db, i, &[0, 2, 3], 5).unwrap();
                assert_eq!(&manifest.restore(i, &got.file).unwrap(), bytes);
            }
        }
    }

    #[test]
    fn manifest_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("x"), b"abc").unwrap();
        fs::write(dir.path().join("y"), b"defgh").unwrap();
        let files = read_dir_files(dir.path()).unwrap();
        let (manifest, db) = ingest(&files, 3, 2, 1, 257, 2).unwrap();
        assert_eq!(manifest.params.s(), 3);
        let path = dir.path().join("manifest.json");
        manifest.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back, manifest);
        assert_eq!(load_database(&back, dir.path()).unwrap(), db);
        fs::write(dir.path().join("y"), b"changed!").unwrap();
        assert!(load_database(&back, dir.path()).is_err());
    }
}

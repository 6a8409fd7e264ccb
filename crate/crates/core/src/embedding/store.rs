//! Binary embedding store.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "LMEB" | version u32 = 1 | dim u32 | count u64
//! count × [ id_len u16 | id (UTF-8) | dim × f32 ]
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::EmbeddingVector;

const MAGIC: &[u8; 4] = b"LMEB";
const VERSION: u32 = 1;

/// Largest accepted dimension; guards allocations against corrupt headers.
pub const MAX_DIM: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}, expected \"LMEB\"")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("store dimension must be positive")]
    ZeroDimension,
    #[error("store dimension {0} exceeds the maximum of {MAX_DIM}")]
    DimensionTooLarge(usize),
    #[error("dimension mismatch: store has {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("truncated store: {0}")]
    Truncated(String),
    #[error("record {index}: id is not valid UTF-8")]
    InvalidId { index: u64 },
    #[error("id {0:?} is longer than 65535 bytes")]
    IdTooLong(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("record {index} ({id:?}) contains a non-finite component")]
    NonFinite { index: u64, id: String },
    #[error("unexpected trailing bytes after {0} records")]
    TrailingBytes(u64),
}

/// Id-keyed collection of equal-dimension vectors, in insertion order.
///
/// Immutable once built; share it behind `&` or `Arc` across workers.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDimension);
        }
        if dim > MAX_DIM {
            return Err(StoreError::DimensionTooLarge(dim));
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), StoreError> {
        let id = id.into();
        if vector.dim() != self.dim {
            return Err(StoreError::DimensionMismatch {
                expected: self.dim,
                actual: vector.dim(),
            });
        }
        if id.len() > usize::from(u16::MAX) {
            return Err(StoreError::IdTooLong(id));
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.index.get(id).map(|&i| &self.vectors[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    /// Copy restricted to `keep`, preserving this store's order.
    pub fn retain_ids<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> Self {
        let keep: std::collections::HashSet<&str> = keep.into_iter().collect();
        let mut out = Self::new(self.dim).expect("dim already validated");
        for (id, v) in self.iter() {
            if keep.contains(id) {
                out.insert(id, v.clone()).expect("ids unique in source");
            }
        }
        out
    }
}

pub fn write_store<W: Write>(store: &EmbeddingStore, mut w: W) -> Result<(), StoreError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let dim = u32::try_from(store.dim).map_err(|_| StoreError::DimensionMismatch {
        expected: u32::MAX as usize,
        actual: store.dim,
    })?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&(store.len() as u64).to_le_bytes())?;
    for (id, v) in store.iter() {
        w.write_all(&(id.len() as u16).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for x in v.as_slice() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: impl FnOnce() -> String) -> Result<(), StoreError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => StoreError::Truncated(what()),
        _ => StoreError::Io(e),
    })
}

pub fn read_store<R: Read>(mut r: R) -> Result<EmbeddingStore, StoreError> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, || "missing magic".into())?;
    if &magic != MAGIC {
        return Err(StoreError::BadMagic(magic));
    }
    let mut b4 = [0u8; 4];
    read_exact_or(&mut r, &mut b4, || "missing version".into())?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    read_exact_or(&mut r, &mut b4, || "missing dim".into())?;
    let dim = u32::from_le_bytes(b4) as usize;
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b8, || "missing count".into())?;
    let count = u64::from_le_bytes(b8);

    let mut store = EmbeddingStore::new(dim)?;
    let mut row = vec![0u8; dim * 4];
    for index in 0..count {
        let mut b2 = [0u8; 2];
        read_exact_or(&mut r, &mut b2, || format!("record {index} header"))?;
        let mut id = vec![0u8; usize::from(u16::from_le_bytes(b2))];
        read_exact_or(&mut r, &mut id, || format!("record {index} id"))?;
        let id = String::from_utf8(id).map_err(|_| StoreError::InvalidId { index })?;
        read_exact_or(&mut r, &mut row, || format!("record {index} ({id:?}) vector"))?;
        let values: Vec<f32> = row
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StoreError::NonFinite { index, id });
        }
        store.insert(id, EmbeddingVector::from_raw_unchecked(values))?;
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(StoreError::TrailingBytes(count));
    }
    Ok(store)
}

pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), StoreError> {
    write_store(store, BufWriter::new(File::create(path)?))
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    read_store(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bytes(store: &EmbeddingStore) -> Vec<u8> {
        let mut out = Vec::new();
        write_store(store, &mut out).unwrap();
        out
    }

    fn random_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = EmbeddingStore::new(dim).unwrap();
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            s.insert(format!("2019{i:06}"), EmbeddingVector::normalized(v).unwrap())
                .unwrap();
        }
        s
    }

    #[test]
    fn empty_roundtrip() {
        let s = EmbeddingStore::new(16).unwrap();
        let back = read_store(bytes(&s).as_slice()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 16);
    }

    #[test]
    fn header_layout() {
        let s = random_store(1, 2, 0);
        let b = bytes(&s);
        assert_eq!(&b[..4], b"LMEB");
        assert_eq!(&b[4..8], &1u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..20], &1u64.to_le_bytes());
        assert_eq!(&b[20..22], &10u16.to_le_bytes());
        assert_eq!(b.len(), 20 + 2 + 10 + 8);
    }

    #[test]
    fn thousand_vectors_bit_exact() {
        let s = random_store(1000, 32, 5);
        let b = bytes(&s);
        let back = read_store(b.as_slice()).unwrap();
        assert_eq!(bytes(&back), b);
        for ((ia, va), (ib, vb)) in s.iter().zip(back.iter()) {
            assert_eq!(ia, ib);
            let xa: Vec<u32> = va.as_slice().iter().map(|x| x.to_bits()).collect();
            let xb: Vec<u32> = vb.as_slice().iter().map(|x| x.to_bits()).collect();
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn corrupted_headers_are_typed_errors() {
        let good = bytes(&random_store(3, 4, 1));

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(read_store(bad.as_slice()), Err(StoreError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 9;
        assert!(matches!(
            read_store(bad.as_slice()),
            Err(StoreError::UnsupportedVersion(9))
        ));

        let mut bad = good.clone();
        bad[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_store(bad.as_slice()), Err(StoreError::ZeroDimension)));
        let mut huge = good.clone();
        huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            read_store(huge.as_slice()),
            Err(StoreError::DimensionTooLarge(_))
        ));

        let truncated = &good[..good.len() - 3];
        assert!(matches!(read_store(truncated), Err(StoreError::Truncated(_))));
        assert!(matches!(read_store(&good[..6]), Err(StoreError::Truncated(_))));

        let mut bad = good.clone();
        bad.push(0);
        assert!(matches!(read_store(bad.as_slice()), Err(StoreError::TrailingBytes(3))));
    }

    #[test]
    fn insert_checks_dim_and_duplicates() {
        let mut s = EmbeddingStore::new(2).unwrap();
        s.insert("a", EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap())
            .unwrap();
        assert!(matches!(
            s.insert("b", EmbeddingVector::normalized(vec![1.0, 0.0, 0.0]).unwrap()),
            Err(StoreError::DimensionMismatch { expected: 2, actual: 3 })
        ));
        assert!(matches!(
            s.insert("a", EmbeddingVector::normalized(vec![0.0, 1.0]).unwrap()),
            Err(StoreError::DuplicateId(_))
        ));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.bin");
        let s = random_store(10, 8, 2);
        save_store(&s, &path).unwrap();
        assert_eq!(load_store(&path).unwrap(), s);
    }
}

//! Binary sentence-embedding files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic     4 bytes  "OHCE"
//! version   u32      1
//! model     u32 length + UTF-8 bytes
//! pooling   u32 length + UTF-8 bytes
//! dim       u32
//! count     u32
//! count × { pair_id: u32 length + UTF-8, q_vector: dim × f32, r_vector: dim × f32 }
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OHCE";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PairEmbedding {
    pub question: Vec<f32>,
    pub response: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub model_name: String,
    pub pooling: String,
    pub dim: usize,
    pub records: BTreeMap<String, PairEmbedding>,
}

impl EmbeddingTable {
    pub fn new(model_name: impl Into<String>, pooling: impl Into<String>, dim: usize) -> Self {
        Self {
            model_name: model_name.into(),
            pooling: pooling.into(),
            dim,
            records: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, pair_id: impl Into<String>, e: PairEmbedding) -> Result<()> {
        let pair_id = pair_id.into();
        for v in [&e.question, &e.response] {
            if v.len() != self.dim {
                return Err(Error::Dimension {
                    what: "embedding vector",
                    expected: self.dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Invalid(format!("non-finite embedding for `{pair_id}`")));
            }
        }
        if self.records.insert(pair_id.clone(), e).is_some() {
            return Err(Error::DuplicatePair(pair_id));
        }
        Ok(())
    }

    pub fn get(&self, pair_id: &str) -> Result<&PairEmbedding> {
        self.records
            .get(pair_id)
            .ok_or_else(|| Error::UnknownPair(pair_id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records are written in pair_id order.
    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_str(&mut w, &self.model_name)?;
        write_str(&mut w, &self.pooling)?;
        write_u32(&mut w, self.dim, "dimension")?;
        write_u32(&mut w, self.records.len(), "record count")?;
        for (id, e) in &self.records {
            write_str(&mut w, id)?;
            for v in e.question.iter().chain(&e.response) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        buf
    }
}

fn write_u32<W: Write>(w: &mut W, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len(), "string length")?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

struct Reader<R> {
    inner: R,
    offset: usize,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|e| {
            Error::Invalid(format!("embedding file truncated reading {what} at byte {}: {e}", self.offset))
        })?;
        self.offset += n;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.bytes(n, what)?)
            .map_err(|_| Error::Invalid(format!("{what} is not valid UTF-8")))
    }

    fn vector(&mut self, dim: usize) -> Result<Vec<f32>> {
        let b = self.bytes(dim * 4, "vector")?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Reads and validates an embedding file: magic, version, constant
/// dimension, finite values, unique ids and no trailing bytes.
pub fn load_embeddings<R: Read>(reader: R) -> Result<EmbeddingTable> {
    let mut r = Reader { inner: reader, offset: 0 };
    if r.bytes(4, "magic")? != MAGIC {
        return Err(Error::Invalid("not an embedding file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Invalid(format!("unsupported embedding file version {version}")));
    }
    let model = r.string("model name")?;
    let pooling = r.string("pooling")?;
    let dim = r.u32("dimension")? as usize;
    let count = r.u32("record count")? as usize;
    let mut table = EmbeddingTable::new(model, pooling, dim);
    for _ in 0..count {
        let id = r.string("pair_id")?;
        let question = r.vector(dim)?;
        let response = r.vector(dim)?;
        table.insert(id, PairEmbedding { question, response })?;
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Invalid(format!(
            "trailing bytes after {count} records (header count mismatch)"
        )));
    }
    Ok(table)
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingTable> {
    let f = std::fs::File::open(path)?;
    load_embeddings(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EmbeddingTable {
        let mut t = EmbeddingTable::new("test-model", "mean", 3);
        t.insert("b", PairEmbedding { question: vec![1.0, -2.5, 3.25], response: vec![0.1, 0.2, 0.3] })
            .unwrap();
        t.insert("a", PairEmbedding { question: vec![f32::MIN_POSITIVE, 0.0, -0.0], response: vec![1e30, -1e-30, 7.0] })
            .unwrap();
        t
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let t = sample();
        let back = load_embeddings(t.to_bytes().as_slice()).unwrap();
        assert_eq!(back.model_name, "test-model");
        for (id, e) in &t.records {
            let b = back.get(id).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&e.question), bits(&b.question));
            assert_eq!(bits(&e.response), bits(&b.response));
        }
    }

    #[test]
    fn empty_file_has_zero_count() {
        let t = EmbeddingTable::new("m", "mean", 8);
        let bytes = t.to_bytes();
        assert_eq!(&bytes[bytes.len() - 4..], &0u32.to_le_bytes());
        assert!(load_embeddings(bytes.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(load_embeddings(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(load_embeddings(extra.as_slice()).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(load_embeddings(magic.as_slice()).is_err());
        let mut t = EmbeddingTable::new("m", "mean", 2);
        assert!(t.insert("x", PairEmbedding { question: vec![1.0], response: vec![1.0, 2.0] }).is_err());
        assert!(t.insert("x", PairEmbedding { question: vec![f32::NAN, 1.0], response: vec![1.0, 2.0] }).is_err());
    }
}

//! Binary checkpoint and embedding-cache files.
//!
//! Both start with an 8-byte magic, a little-endian `u32` header length and a
//! JSON header, followed by little-endian `f64` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{EncoderModel, ModelConfig, Segment};
use super::search::EmbeddingMatrix;
use super::DenseError;
use crate::tokenize::TokenizerSpec;

const CHECKPOINT_MAGIC: &[u8; 8] = b"REQADE01";
const EMBEDDING_MAGIC: &[u8; 8] = b"REQAEM01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentShape {
    pub segment: Segment,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    shapes: Vec<SegmentShape>,
    tokenizer: TokenizerSpec,
    use_context: bool,
    config_fingerprint: String,
    payload_sha256: String,
}

/// A trained model plus what is needed to feed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: EncoderModel,
    pub tokenizer: TokenizerSpec,
    pub use_context: bool,
}

fn config_fingerprint(config: &ModelConfig, tokenizer: &TokenizerSpec, use_context: bool) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(serde_json::to_vec(tokenizer).expect("spec serializes"));
    h.update([use_context as u8]);
    hex::encode(h.finalize())
}

fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect()
}

fn write_header<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 8], header: &H) -> Result<(), DenseError> {
    let json = serde_json::to_vec(header)?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_header<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R, magic: &[u8; 8]) -> Result<H, DenseError> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m)
        .map_err(|_| DenseError::BadFile("file too short for magic".into()))?;
    if &m != magic {
        return Err(DenseError::BadFile(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&m),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)
        .map_err(|_| DenseError::BadFile("truncated header length".into()))?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)
        .map_err(|_| DenseError::BadFile("truncated header".into()))?;
    Ok(serde_json::from_slice(&json)?)
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), DenseError> {
        let config = self.model.config().clone();
        let shapes = Segment::ALL
            .iter()
            .map(|&segment| {
                let (rows, cols) = segment.shape(&config);
                SegmentShape { segment, rows, cols }
            })
            .collect();
        let payload = f64_bytes(self.model.params());
        let header = CheckpointHeader {
            config_fingerprint: config_fingerprint(&config, &self.tokenizer, self.use_context),
            config,
            shapes,
            tokenizer: self.tokenizer.clone(),
            use_context: self.use_context,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        write_header(&mut w, CHECKPOINT_MAGIC, &header)?;
        w.write_all(&payload)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, DenseError> {
        let header: CheckpointHeader = read_header(&mut r, CHECKPOINT_MAGIC)?;
        if header.config_fingerprint != config_fingerprint(&header.config, &header.tokenizer, header.use_context) {
            return Err(DenseError::BadFile("config fingerprint mismatch".into()));
        }
        for s in &header.shapes {
            if (s.rows, s.cols) != s.segment.shape(&header.config) {
                return Err(DenseError::BadFile(format!("shape of {:?} disagrees with config", s.segment)));
            }
        }
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if hex::encode(Sha256::digest(&payload)) != header.payload_sha256 {
            return Err(DenseError::BadFile("parameter payload checksum mismatch".into()));
        }
        if payload.len() % 8 != 0 {
            return Err(DenseError::BadFile("payload is not a whole number of f64".into()));
        }
        let model = EncoderModel::from_parts(header.config, read_f64s(&payload))?;
        Ok(Self {
            model,
            tokenizer: header.tokenizer,
            use_context: header.use_context,
        })
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(config_fingerprint(self.model.config(), &self.tokenizer, self.use_context));
        h.update(f64_bytes(self.model.params()));
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DenseError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DenseError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub count: usize,
    pub model_fingerprint: String,
    pub pool_fingerprint: String,
    pub use_context: bool,
}

pub fn write_embeddings<W: Write>(mut w: W, header: &EmbeddingHeader, m: &EmbeddingMatrix) -> Result<(), DenseError> {
    if header.dim != m.dim() || header.count != m.len() {
        return Err(DenseError::InvalidConfig("embedding header does not match matrix".into()));
    }
    write_header(&mut w, EMBEDDING_MAGIC, header)?;
    for (id, row) in m.rows().enumerate() {
        w.write_all(&(id as u32).to_le_bytes())?;
        w.write_all(&f64_bytes(row))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings<R: Read>(mut r: R) -> Result<(EmbeddingHeader, EmbeddingMatrix), DenseError> {
    let header: EmbeddingHeader = read_header(&mut r, EMBEDDING_MAGIC)?;
    let mut rows = Vec::with_capacity(header.count);
    let mut id = [0u8; 4];
    let mut buf = vec![0u8; 8 * header.dim];
    for expected in 0..header.count {
        r.read_exact(&mut id)
            .and_then(|_| r.read_exact(&mut buf))
            .map_err(|_| DenseError::BadFile(format!("truncated at record {expected}")))?;
        if u32::from_le_bytes(id) as usize != expected {
            return Err(DenseError::BadFile(format!(
                "record {expected} carries id {}",
                u32::from_le_bytes(id)
            )));
        }
        rows.push(read_f64s(&buf));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(DenseError::BadFile("trailing bytes after last record".into()));
    }
    let m = EmbeddingMatrix::from_rows(header.dim, rows)?;
    Ok((header, m))
}

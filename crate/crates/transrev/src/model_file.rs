//! Binary model container shared by TransRev and both baselines.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "TRANSREV"
//! 8       4     format version (u32 LE)
//! 12      1     kind: 0 transrev, 1 svd, 2 offset
//! 13      1     flags: bit 0 = svd factors frozen
//! 14      8     k (u64 LE)
//! 22      8     users
//! 30      8     items
//! 38      8     vocabulary size
//! 46      32    SHA-256 of the dataset vocabulary file
//! 78      ...   f64 LE tensors, row-major
//! ```
//!
//! Tensor order for `transrev`: word embeddings (V×k), user embeddings
//! (U×k), item embeddings (I×k), h0 (k), w (k), user biases (U), item biases
//! (I), global bias. For `svd`: user factors (U×k), item factors (I×k), user
//! biases, item biases, global bias. For `offset`: the mean. Dimensions are 0
//! for `offset`.

use std::fs;
use std::path::Path;

use transrev_core::{ModelParameters, OffsetModel, Predictor, SvdModel};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRANSREV";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 78;

#[derive(Debug, Clone, PartialEq)]
pub enum SavedModel {
    TransRev(ModelParameters),
    Svd(SvdModel),
    Offset(OffsetModel),
}

impl SavedModel {
    pub fn kind(&self) -> &'static str {
        match self {
            SavedModel::TransRev(_) => "transrev",
            SavedModel::Svd(_) => "svd",
            SavedModel::Offset(_) => "offset",
        }
    }

    fn kind_tag(&self) -> u8 {
        match self {
            SavedModel::TransRev(_) => 0,
            SavedModel::Svd(_) => 1,
            SavedModel::Offset(_) => 2,
        }
    }

    pub fn as_transrev(&self) -> Option<&ModelParameters> {
        match self {
            SavedModel::TransRev(p) => Some(p),
            _ => None,
        }
    }
}

impl Predictor for SavedModel {
    fn predict(&self, user: usize, item: usize) -> transrev_core::Result<f64> {
        match self {
            SavedModel::TransRev(m) => m.predict(user, item),
            SavedModel::Svd(m) => m.predict(user, item),
            SavedModel::Offset(m) => m.predict(user, item),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: SavedModel,
    pub vocabulary_hash: [u8; 32],
}

fn put_tensor(out: &mut Vec<u8>, t: &[f64]) {
    for x in t {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(file: &ModelFile) -> Vec<u8> {
    let (k, u, i, v, flags) = match &file.model {
        SavedModel::TransRev(p) => (p.k(), p.num_users(), p.num_items(), p.vocab_size(), 0u8),
        SavedModel::Svd(m) => (
            m.k(),
            m.num_users(),
            m.num_items(),
            0,
            m.factors_frozen() as u8,
        ),
        SavedModel::Offset(_) => (0, 0, 0, 0, 0),
    };
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(file.model.kind_tag());
    out.push(flags);
    for d in [k, u, i, v] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.extend_from_slice(&file.vocabulary_hash);
    match &file.model {
        SavedModel::TransRev(p) => {
            for t in p.tensors() {
                put_tensor(&mut out, t);
            }
            put_tensor(&mut out, &[p.global_bias]);
        }
        SavedModel::Svd(m) => {
            for t in [&m.user_factors, &m.item_factors, &m.user_bias, &m.item_bias] {
                put_tensor(&mut out, t);
            }
            put_tensor(&mut out, &[m.global_bias]);
        }
        SavedModel::Offset(m) => put_tensor(&mut out, &[m.global_mean]),
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or("truncated")?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> std::result::Result<usize, String> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| "dimension too large".to_string())
    }

    fn fill(&mut self, t: &mut [f64]) -> std::result::Result<(), String> {
        for x in t {
            *x = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        }
        Ok(())
    }

    fn scalar(&mut self) -> std::result::Result<f64, String> {
        let mut v = [0.0];
        self.fill(&mut v)?;
        Ok(v[0])
    }
}

fn decode(bytes: &[u8]) -> std::result::Result<ModelFile, String> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(8).map_err(|_| "too short")? != MAGIC {
        return Err("bad magic".into());
    }
    let version = u32::from_le_bytes(c.take(4)?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let kind = c.take(1)?[0];
    let flags = c.take(1)?[0];
    let (k, u, i, v) = (c.u64()?, c.u64()?, c.u64()?, c.u64()?);
    let vocabulary_hash: [u8; 32] = c.take(32)?.try_into().unwrap();

    // The payload size is fixed by the header; check it before allocating.
    let cells = match kind {
        0 => [v, u, i]
            .iter()
            .try_fold(0usize, |acc, &n| {
                n.checked_mul(k).and_then(|m| acc.checked_add(m))
            })
            .and_then(|n| n.checked_add(u.checked_add(i)?.checked_add(2 * k)?.checked_add(1)?)),
        1 => [u, i]
            .iter()
            .try_fold(0usize, |acc, &n| {
                n.checked_mul(k).and_then(|m| acc.checked_add(m))
            })
            .and_then(|n| n.checked_add(u.checked_add(i)?.checked_add(1)?)),
        2 => Some(1),
        other => return Err(format!("unknown model kind {other}")),
    }
    .ok_or("dimensions overflow")?;
    match cells
        .checked_mul(8)
        .map(|b| b.cmp(&(bytes.len() - HEADER_LEN)))
    {
        Some(std::cmp::Ordering::Equal) => {}
        Some(std::cmp::Ordering::Greater) | None => return Err("truncated".into()),
        Some(std::cmp::Ordering::Less) => return Err("trailing bytes".into()),
    }

    let model = match kind {
        0 => {
            let mut p = ModelParameters::zeros(k, u, i, v);
            c.fill(&mut p.word_embeddings)?;
            c.fill(&mut p.user_embeddings)?;
            c.fill(&mut p.item_embeddings)?;
            c.fill(&mut p.review_bias)?;
            c.fill(&mut p.regressor_weights)?;
            c.fill(&mut p.user_bias)?;
            c.fill(&mut p.item_bias)?;
            p.global_bias = c.scalar()?;
            SavedModel::TransRev(p)
        }
        1 => {
            let mut m = SvdModel::zeros(k, u, i);
            m.set_factors_frozen(flags & 1 != 0);
            c.fill(&mut m.user_factors)?;
            c.fill(&mut m.item_factors)?;
            c.fill(&mut m.user_bias)?;
            c.fill(&mut m.item_bias)?;
            m.global_bias = c.scalar()?;
            SavedModel::Svd(m)
        }
        2 => SavedModel::Offset(OffsetModel {
            global_mean: c.scalar()?,
        }),
        _ => unreachable!("kind checked above"),
    };
    debug_assert_eq!(c.pos, bytes.len());
    Ok(ModelFile {
        model,
        vocabulary_hash,
    })
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelFile> {
    decode(bytes).map_err(|reason| Error::BadModelFile {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save(path: &Path, file: &ModelFile) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, to_bytes(file)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelParameters {
        let mut p = ModelParameters::zeros(2, 2, 3, 4);
        for (n, x) in p.word_embeddings.iter_mut().enumerate() {
            *x = n as f64 * 0.1 - 0.3;
        }
        p.user_embeddings[1] = f64::MIN_POSITIVE;
        p.item_embeddings[5] = -0.0;
        p.review_bias = vec![1e-300, 7.0];
        p.global_bias = 3.75;
        p
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&ModelFile {
            model: SavedModel::TransRev(sample()),
            vocabulary_hash: [7; 32],
        });
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(bytes[12], 0);
        assert_eq!(u64::from_le_bytes(bytes[14..22].try_into().unwrap()), 2);
        assert_eq!(&bytes[46..78], &[7; 32]);
        let cells = 4 * 2 + 2 * 2 + 3 * 2 + 2 + 2 + 2 + 3 + 1;
        assert_eq!(bytes.len(), HEADER_LEN + 8 * cells);
    }

    #[test]
    fn round_trips_every_kind_bit_exactly() {
        let mut svd = SvdModel::zeros(3, 2, 2);
        svd.user_factors[4] = -1.5;
        svd.global_bias = 4.1;
        svd.set_factors_frozen(true);
        for model in [
            SavedModel::TransRev(sample()),
            SavedModel::Svd(svd),
            SavedModel::Offset(OffsetModel { global_mean: 4.2 }),
        ] {
            let f = ModelFile {
                model,
                vocabulary_hash: [1; 32],
            };
            let bytes = to_bytes(&f);
            let back = from_bytes(&bytes, Path::new("m")).unwrap();
            assert_eq!(back, f);
            assert_eq!(to_bytes(&back), bytes);
        }
    }

    #[test]
    fn rejects_damage() {
        let bytes = to_bytes(&ModelFile {
            model: SavedModel::TransRev(sample()),
            vocabulary_hash: [0; 32],
        });
        let p = Path::new("m");
        assert!(from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(from_bytes(&extra, p).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(from_bytes(&magic, p).is_err());
        let mut huge = bytes.clone();
        huge[22..30].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(from_bytes(&huge, p).is_err());
        assert!(from_bytes(b"", p).is_err());
    }
}

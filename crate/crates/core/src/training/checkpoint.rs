//! Binary checkpoint container.
//!
//! ```text
//! magic "NMMCKPT\0" | u32 version | u32 len + header text (key=value lines)
//! | u32 count + parameter blocks | u8 has_state [+ training state + momentum blocks]
//! | SHA-256 of everything before
//! ```
//!
//! A block is `u32 len + name | u64 rows | u64 cols | little-endian values`.
//! Integers are little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::TrainState;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Precision, Real, Rng};
use crate::mixture::{MixtureSpec, Nmm, NmmConfig};

const MAGIC: &[u8; 8] = b"NMMCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub config: NmmConfig,
    pub pad_id: usize,
    pub vocab_hash: String,
    pub precision: Precision,
}

impl CheckpointHeader {
    fn render(&self) -> String {
        let c = &self.config;
        format!(
            "spec={}\nembedding_size={}\nmixture_size={}\nvocab_size={}\nfnn_depth={}\npad_id={}\nvocab_hash={}\nprecision={}\n",
            c.spec,
            c.embedding_size,
            c.mixture_size.unwrap_or(0),
            c.vocab_size,
            c.fnn_depth,
            self.pad_id,
            self.vocab_hash,
            self.precision.as_str()
        )
    }

    fn parse(version: u32, text: &str) -> Result<Self> {
        let mut fields = std::collections::HashMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Checkpoint(format!("malformed header line `{line}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("header lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("header field `{k}` is not an integer")))
        };
        let spec = MixtureSpec::parse(get("spec")?)?;
        let mixture = num("mixture_size")?;
        let config = NmmConfig::new(
            spec,
            num("embedding_size")?,
            (mixture > 0).then_some(mixture),
            num("vocab_size")?,
        )
        .with_fnn_depth(num("fnn_depth")?);
        let precision = Precision::parse(get("precision")?)
            .ok_or_else(|| Error::Checkpoint("unknown precision in header".into()))?;
        Ok(Self {
            version,
            config,
            pad_id: num("pad_id")?,
            vocab_hash: get("vocab_hash")?.to_string(),
            precision,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub model: Nmm<T>,
    pub state: Option<TrainState<T>>,
}

/// Writes atomically (temporary file, then rename).
pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &Nmm<T>,
    state: Option<&TrainState<T>>,
    vocab_hash: &str,
) -> Result<()> {
    let header = CheckpointHeader {
        version: FORMAT_VERSION,
        config: model.config().clone(),
        pad_id: model.pad_id(),
        vocab_hash: vocab_hash.to_string(),
        precision: T::PRECISION,
    };
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = header.render();
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    write_blocks(&mut out, model);
    match state {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.lr.to_le_bytes());
            out.extend_from_slice(&(s.epoch as u64).to_le_bytes());
            out.extend_from_slice(&(s.step as u64).to_le_bytes());
            out.push(u8::from(s.best_valid_ll.is_some()));
            out.extend_from_slice(&s.best_valid_ll.unwrap_or(0.0).to_le_bytes());
            out.push(u8::from(s.halving));
            out.push(u8::from(s.stopped));
            out.extend_from_slice(&s.rng.seed().to_le_bytes());
            out.extend_from_slice(&s.rng.position().to_le_bytes());
            write_blocks(&mut out, &s.velocity);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);

    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &out)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads only the header, e.g. to pick the precision before a full load.
pub fn read_header(path: &Path) -> Result<CheckpointHeader> {
    let bytes = fs::read(path)?;
    let mut r = verified_reader(&bytes)?;
    r.header()
}

/// Loads and validates a checkpoint. When `expected_vocab_hash` is given the
/// stored hash must match it.
pub fn load_checkpoint<T: Real>(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    let mut r = verified_reader(&bytes)?;
    let header = r.header()?;
    if let Some(expected) = expected_vocab_hash {
        if expected != header.vocab_hash {
            return Err(Error::Checkpoint(format!(
                "vocabulary hash mismatch: checkpoint has {}, expected {expected}",
                header.vocab_hash
            )));
        }
    }
    if header.precision != T::PRECISION {
        return Err(Error::Checkpoint(format!(
            "checkpoint stores {} values, requested {}",
            header.precision.as_str(),
            T::PRECISION.as_str()
        )));
    }
    let mut model = Nmm::new(header.config.clone(), header.pad_id, &mut Rng::new(0))?;
    r.blocks_into(&mut model)?;
    let state = match r.u8()? {
        0 => None,
        1 => {
            let lr = r.f64()?;
            let epoch = r.u64()? as usize;
            let step = r.u64()? as usize;
            let has_best = r.u8()? == 1;
            let best = r.f64()?;
            let halving = r.u8()? == 1;
            let stopped = r.u8()? == 1;
            let seed = r.u64()?;
            let position = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
            let mut velocity = model.zeros_like();
            r.blocks_into(&mut velocity)?;
            Some(TrainState {
                lr,
                velocity,
                epoch,
                step,
                best_valid_ll: has_best.then_some(best),
                halving,
                stopped,
                rng: Rng::restore(seed, position),
            })
        }
        other => return Err(Error::Checkpoint(format!("invalid training-state flag {other}"))),
    };
    if r.pos != r.bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok(Checkpoint { header, model, state })
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

fn write_blocks<T: Real>(out: &mut Vec<u8>, model: &Nmm<T>) {
    let params = model.params();
    put_u32(out, params.len());
    for p in params {
        put_u32(out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.value.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(p.value.cols() as u64).to_le_bytes());
        for &v in p.value.data() {
            v.write_le(out);
        }
    }
}

fn verified_reader(bytes: &[u8]) -> Result<Reader<'_>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(Error::Checkpoint("file is truncated".into()));
    }
    let (payload, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(payload).as_slice() != digest {
        return Err(Error::Checkpoint(
            "checksum mismatch (truncated or corrupted file)".into(),
        ));
    }
    Ok(Reader {
        bytes: payload,
        pos: 12,
        version,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    version: u32,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self) -> Result<CheckpointHeader> {
        let len = self.u32()?;
        let text = std::str::from_utf8(self.take(len)?).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        CheckpointHeader::parse(self.version, text)
    }

    fn blocks_into<T: Real>(&mut self, model: &mut Nmm<T>) -> Result<()> {
        let count = self.u32()?;
        let params = model.params_mut();
        if count != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {count} parameter blocks, the spec needs {}",
                params.len()
            )));
        }
        for p in params {
            let len = self.u32()?;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            if name != p.name {
                return Err(Error::Checkpoint(format!(
                    "expected block `{}`, found `{name}`",
                    p.name
                )));
            }
            let rows = self.u64()? as usize;
            let cols = self.u64()? as usize;
            if (rows, cols) != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "block `{name}` is {rows}x{cols}, expected {:?}",
                    p.value.shape()
                )));
            }
            let raw = self.take(rows * cols * T::BYTES)?;
            let values: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            *p.value = Matrix::from_vec(rows, cols, values)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    fn sample() -> (Nmm<f64>, TrainState<f64>) {
        let cfg = NmmConfig::new(MixtureSpec::parse("L3+R2+F4^2,3").unwrap(), 3, Some(5), 9).with_fnn_depth(2);
        let m = Nmm::new(cfg, 1, &mut Rng::new(11)).unwrap();
        let mut st = TrainState::new(&m, &TrainConfig::ptb());
        for (i, p) in st.velocity.params_mut().into_iter().enumerate() {
            p.value.fill(i as f64 * 0.25 - 1.0);
        }
        st.rng.next_f64();
        st.epoch = 3;
        st.step = 77;
        st.best_valid_ll = Some(-123.5);
        st.halving = true;
        st.lr = 0.1;
        (m, st)
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (m, st) = sample();
        save_checkpoint(&path, &m, Some(&st), "abcd").unwrap();
        let ck: Checkpoint<f64> = load_checkpoint(&path, Some("abcd")).unwrap();
        assert_eq!(ck.model, m);
        assert_eq!(ck.state.as_ref(), Some(&st));
        assert_eq!(ck.header.vocab_hash, "abcd");
        assert_eq!(read_header(&path).unwrap(), ck.header);

        save_checkpoint(&path, &m, None, "abcd").unwrap();
        let ck: Checkpoint<f64> = load_checkpoint(&path, None).unwrap();
        assert!(ck.state.is_none());
    }

    #[test]
    fn single_precision_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let cfg = NmmConfig::new(MixtureSpec::parse("R4").unwrap(), 4, None, 6);
        let m: Nmm<f32> = Nmm::new(cfg, 1, &mut Rng::new(1)).unwrap();
        save_checkpoint(&path, &m, None, "h").unwrap();
        assert_eq!(load_checkpoint::<f32>(&path, None).unwrap().model, m);
        assert!(matches!(load_checkpoint::<f64>(&path, None), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn refuses_damaged_or_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let (m, st) = sample();
        save_checkpoint(&path, &m, Some(&st), "abcd").unwrap();
        let bytes = fs::read(&path).unwrap();

        let err = load_checkpoint::<f64>(&path, Some("ffff")).unwrap_err();
        assert!(err.to_string().contains("vocabulary hash mismatch"), "{err}");

        for cut in [0, 5, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(
                matches!(load_checkpoint::<f64>(&path, None), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }

        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        fs::write(&path, &flipped).unwrap();
        assert!(load_checkpoint::<f64>(&path, None).is_err());

        let mut other = bytes.clone();
        other[8..12].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&path, &other).unwrap();
        let err = load_checkpoint::<f64>(&path, None).unwrap_err();
        assert!(err.to_string().contains("version 2"), "{err}");
    }
}

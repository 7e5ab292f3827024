//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian: the magic `MLM1`, then
//! `V`, `E`, `H` as `u32`, then `V` vocabulary entries each as a `u32` byte
//! length followed by UTF-8 bytes, then Emb, U, V_rec, W and b as row-major
//! `f64`s.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Dims, ModelParams, ParamKind};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 4] = b"MLM1";

pub fn encode_checkpoint(model: &ModelParams, vocab: &Vocabulary) -> Result<Vec<u8>> {
    let dims = model.dims;
    if vocab.len() != dims.vocab {
        return Err(Error::ShapeMismatch(format!(
            "vocabulary has {} entries, model expects {}",
            vocab.len(),
            dims.vocab
        )));
    }
    let mut out = Vec::with_capacity(16 + 8 * dims.num_params() + 8 * dims.vocab);
    out.extend_from_slice(MAGIC);
    for n in [dims.vocab, dims.embed, dims.hidden] {
        out.extend_from_slice(&to_u32(n)?.to_le_bytes());
    }
    for token in vocab.tokens() {
        out.extend_from_slice(&to_u32(token.len())?.to_le_bytes());
        out.extend_from_slice(token.as_bytes());
    }
    for kind in ParamKind::ALL {
        for x in model.array(kind) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

fn to_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Checkpoint(format!("{n} does not fit in 32 bits")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, Vocabulary)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "bad magic, not a model checkpoint".into(),
        ));
    }
    let v = cur.u32("vocabulary size")? as usize;
    let e = cur.u32("embedding size")? as usize;
    let h = cur.u32("hidden size")? as usize;
    let dims =
        Dims::new(v, e, h).map_err(|err| Error::Checkpoint(format!("bad dimensions: {err}")))?;
    // every float array must fit in what is left, so absurd dims fail before allocating
    let needed = dims
        .num_params()
        .checked_mul(8)
        .ok_or_else(|| Error::Checkpoint("dimensions overflow".into()))?;
    if needed > bytes.len() {
        return Err(Error::Checkpoint(format!(
            "dimensions {v}x{e}x{h} need {needed} bytes of parameters, file has {}",
            bytes.len()
        )));
    }

    let mut tokens = Vec::with_capacity(v);
    for i in 0..v {
        let len = cur.u32("token length")? as usize;
        let raw = cur.take(len, "token")?;
        let token = std::str::from_utf8(raw)
            .map_err(|_| Error::Checkpoint(format!("token {i} is not valid UTF-8")))?;
        tokens.push(token.to_string());
    }
    let vocab = Vocabulary::from_tokens(tokens)
        .map_err(|err| Error::Checkpoint(format!("bad vocabulary: {err}")))?;

    let mut model = ModelParams::zeros(dims);
    for kind in ParamKind::ALL {
        let array = model.array_mut(kind);
        let raw = cur.take(8 * array.len(), kind.name())?;
        for (x, chunk) in array.iter_mut().zip(raw.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - cur.pos
        )));
    }
    if !model.is_finite() {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    model.warm = true;
    Ok((model, vocab))
}

pub fn save_checkpoint(
    model: &ModelParams,
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, vocab)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, Vocabulary)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

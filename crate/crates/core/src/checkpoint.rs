//! Binary checkpoint format.
//!
//! Layout: magic bytes `LSRC`, format version (u32, little-endian), then
//! length-prefixed records until end of file. Each record is: name length
//! (u32) + UTF-8 name, dtype tag (u8: 0 = f32, 1 = f64, 2 = u64 scalar),
//! rank (u32), dims (u64 each), then the raw little-endian payload. Tag 2
//! records are rank-0 single words used for iteration counters and PRNG
//! states, which cannot be stored exactly as floats.
//!
//! Saving the result of a load reproduces the original file byte for byte.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::nets::NetworkParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"LSRC";
const VERSION: u32 = 1;
const TAG_U64: u8 = 2;

/// Everything a checkpoint holds: named float tensors (parameters and
/// optimizer moments) plus named u64 state words.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint<T> {
    pub tensors: NetworkParams<T>,
    pub words: Vec<(String, u64)>,
}

impl<T: Elem> Checkpoint<T> {
    pub fn new() -> Self {
        Self {
            tensors: NetworkParams::new(),
            words: Vec::new(),
        }
    }

    pub fn push_word(&mut self, name: impl Into<String>, value: u64) -> Result<()> {
        let name = name.into();
        if self.words.iter().any(|(n, _)| *n == name) {
            return Err(Error::Checkpoint(format!("duplicate state word `{name}`")));
        }
        self.words.push((name, value));
        Ok(())
    }

    pub fn word(&self, name: &str) -> Option<u64> {
        self.words
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }
}

pub fn save<T: Elem>(path: &Path, ckpt: &Checkpoint<T>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    for (name, tensor) in ckpt.tensors.iter() {
        write_name(&mut out, name)?;
        out.write_all(&[T::DTYPE.tag()])?;
        out.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in tensor.data() {
            out.write_all(&v.to_le_bytes_vec())?;
        }
    }
    for (name, word) in &ckpt.words {
        write_name(&mut out, name)?;
        out.write_all(&[TAG_U64])?;
        out.write_all(&0u32.to_le_bytes())?;
        out.write_all(&word.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn load<T: Elem>(path: &Path) -> Result<Checkpoint<T>> {
    let file = fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut inp = BufReader::new(file);
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint(format!("{}: file too short", path.display())))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: bad magic {magic:?}",
            path.display()
        )));
    }
    let version = read_u32(&mut inp)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let mut ckpt = Checkpoint::new();
    loop {
        let mut len_buf = [0u8; 4];
        match inp.read(&mut len_buf)? {
            0 => break,
            4 => {}
            _ => return Err(Error::Checkpoint("truncated record header".into())),
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        inp.read_exact(&mut name_bytes)
            .map_err(|_| Error::Checkpoint("truncated record name".into()))?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Checkpoint("record name is not UTF-8".into()))?;
        let mut tag = [0u8; 1];
        inp.read_exact(&mut tag)
            .map_err(|_| Error::Checkpoint(format!("`{name}`: missing dtype tag")))?;
        let rank = read_u32(&mut inp)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u64(&mut inp)? as usize);
        }
        match tag[0] {
            TAG_U64 => {
                if rank != 0 {
                    return Err(Error::Checkpoint(format!(
                        "`{name}`: u64 records must be rank 0"
                    )));
                }
                ckpt.push_word(name, read_u64(&mut inp)?)?;
            }
            t if t == T::DTYPE.tag() => {
                let count: usize = dims.iter().product();
                let width = T::DTYPE.byte_width();
                let mut payload = vec![0u8; count * width];
                inp.read_exact(&mut payload)
                    .map_err(|_| Error::Checkpoint(format!("`{name}`: truncated payload")))?;
                let data: Vec<T> = payload
                    .chunks_exact(width)
                    .map(T::from_le_slice)
                    .collect();
                let tensor = Tensor::new_unchecked(dims, data)
                    .map_err(|e| Error::Checkpoint(format!("`{name}`: {e}")))?;
                ckpt.tensors.push(name, tensor)?;
            }
            other => {
                return Err(Error::Checkpoint(format!(
                    "`{name}`: dtype tag {other} does not match element type {:?}",
                    T::DTYPE
                )));
            }
        }
    }
    Ok(ckpt)
}

fn write_name(out: &mut impl Write, name: &str) -> Result<()> {
    out.write_all(&(name.len() as u32).to_le_bytes())?;
    out.write_all(name.as_bytes())?;
    Ok(())
}

fn read_u32(inp: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    inp.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated u32 field".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(inp: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    inp.read_exact(&mut buf)
        .map_err(|_| Error::Checkpoint("truncated u64 field".into()))?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("lsrgan_ckpt_test");
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    fn sample() -> Checkpoint<f32> {
        let mut rng = Rng::new(1);
        let mut c = Checkpoint::new();
        c.tensors
            .push(
                "g.head.w",
                Tensor::from_fn(vec![2, 3, 3, 3], |_| rng.next_range(-1.0, 1.0)),
            )
            .unwrap();
        c.tensors
            .push("g.head.b", Tensor::zeros(vec![2]))
            .unwrap();
        c.push_word("state.iter", 12345).unwrap();
        c.push_word("state.rng.order", 0xDEAD_BEEF_CAFE_F00D).unwrap();
        c
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let p1 = tmp("a.ckpt");
        let p2 = tmp("b.ckpt");
        let ckpt = sample();
        save(&p1, &ckpt).unwrap();
        let loaded: Checkpoint<f32> = load(&p1).unwrap();
        save(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn values_round_trip_exactly() {
        let p = tmp("values.ckpt");
        let ckpt = sample();
        save(&p, &ckpt).unwrap();
        let loaded: Checkpoint<f32> = load(&p).unwrap();
        assert_eq!(loaded.word("state.iter"), Some(12345));
        let orig = ckpt.tensors.get("g.head.w").unwrap();
        let back = loaded.tensors.get("g.head.w").unwrap();
        assert_eq!(orig.shape(), back.shape());
        assert_eq!(orig.data(), back.data());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let p = tmp("bad_magic.ckpt");
        fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn dtype_mismatch_is_rejected() {
        let p = tmp("dtype.ckpt");
        save(&p, &sample()).unwrap();
        // the file holds f32 tensors; loading as f64 must fail loudly
        assert!(matches!(load::<f64>(&p), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let p = tmp("trunc.ckpt");
        save(&p, &sample()).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load::<f32>(&p), Err(Error::Checkpoint(_))));
    }
}

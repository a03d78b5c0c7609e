//! `SEDG` checkpoint files.
//!
//! Layout, all integers little-endian: magic `SEDG`, u32 version, u32 tensor
//! count, then per tensor a u16 name length, the UTF-8 name, a u8 rank, `rank`
//! u32 dimensions and the raw f32 values. Files are written to a temporary
//! sibling and renamed into place, so an interrupted save never leaves a
//! partial checkpoint behind.

use std::io::Write as _;
use std::path::Path;

use edgelab::model::ModelConfig;
use edgelab::ModelParams;
use edgelab::{AdamState, SuperEdge, Tensor};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"SEDG";
pub const VERSION: u32 = 1;

const MODEL_KEY: &str = "meta.model";
const EPOCH_KEY: &str = "meta.epoch";
const STEP_KEY: &str = "adam.step";
/// Counters are stored as f32 and must stay exactly representable.
const MAX_COUNTER: u64 = 1 << 24;

/// Serialises named tensors.
pub fn encode_tensors<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let bad = |msg: String| CliError::Checkpoint(msg);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(tensors.len()).map_err(|_| bad("too many tensors".into()))?.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| bad(format!("tensor name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("rank of `{name}` too large")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| bad(format!("dimension of `{name}` too large")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            CliError::Checkpoint(format!("truncated checkpoint: {what} at byte {} runs past the end of the file", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses named tensors; any malformation is an error, never a partial result.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(CliError::Checkpoint("not a checkpoint: bad magic bytes".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CliError::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {VERSION})"
        )));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| CliError::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let bytes = numel
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CliError::Checkpoint(format!("tensor `{name}`: shape {shape:?} overflows")))?;
        let raw = r.take(bytes, &format!("data of `{name}`"))?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(shape, data).map_err(|e| CliError::Checkpoint(format!("tensor `{name}`: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CliError::Checkpoint(format!("{} trailing bytes after the last tensor", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CliError::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn save_tensors<'a>(path: &Path, tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<()> {
    write_atomic(path, &encode_tensors(tensors)?)
}

pub fn load_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_tensors(&bytes).map_err(|e| match e {
        CliError::Checkpoint(msg) => CliError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Model weights, optimiser state and training progress.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: SuperEdge,
    pub adam: Option<AdamState>,
    /// Completed training epochs.
    pub epoch: usize,
}

fn counter(v: u64, what: &str) -> Result<Tensor> {
    if v >= MAX_COUNTER {
        return Err(CliError::Checkpoint(format!("{what} {v} cannot be stored exactly")));
    }
    Ok(Tensor::new(vec![1], vec![v as f32])?)
}

fn read_counter(t: &Tensor, what: &str) -> Result<u64> {
    match t.data() {
        [v] if *v >= 0.0 && v.fract() == 0.0 && (*v as u64) < MAX_COUNTER => Ok(*v as u64),
        _ => Err(CliError::Checkpoint(format!("malformed {what}"))),
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = self.model.config;
        let dims: Vec<f32> = c.channels.iter().chain([&c.head_channels]).map(|&v| v as f32).collect();
        let model = Tensor::new(vec![5], dims)?;
        let epoch = counter(self.epoch as u64, "epoch")?;
        let mut named: Vec<(String, &Tensor)> = vec![(MODEL_KEY.into(), &model), (EPOCH_KEY.into(), &epoch)];
        named.extend(self.model.params.entries().iter().map(|(n, t)| (n.clone(), t)));
        let mut moments = Vec::new();
        let step;
        if let Some(adam) = &self.adam {
            step = counter(adam.step, "optimiser step")?;
            let names: Vec<&String> = self
                .model
                .params
                .entries()
                .iter()
                .map(|(n, _)| n)
                .filter(|n| ModelParams::is_trainable(n))
                .collect();
            if names.len() != adam.m.len() || names.len() != adam.v.len() {
                return Err(CliError::Checkpoint("optimiser state does not match the model".into()));
            }
            for ((name, m), v) in names.iter().zip(&adam.m).zip(&adam.v) {
                moments.push((format!("adam.m.{name}"), Tensor::new(vec![m.len()], m.clone())?));
                moments.push((format!("adam.v.{name}"), Tensor::new(vec![v.len()], v.clone())?));
            }
            named.push((STEP_KEY.into(), &step));
            named.extend(moments.iter().map(|(n, t)| (n.clone(), t)));
        }
        encode_tensors(named.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// `lr` is not stored; resumed runs take it from their configuration.
    pub fn from_bytes(bytes: &[u8], lr: f64) -> Result<Checkpoint> {
        let mut tensors = decode_tensors(bytes)?.into_iter().peekable();
        let mut expect = |key: &str| -> Result<Tensor> {
            match tensors.next() {
                Some((n, t)) if n == key => Ok(t),
                _ => Err(CliError::Checkpoint(format!("missing `{key}` record"))),
            }
        };
        let dims = expect(MODEL_KEY)?;
        let epoch = read_counter(&expect(EPOCH_KEY)?, "epoch")? as usize;
        let d: Vec<usize> = dims.data().iter().map(|&v| v as usize).collect();
        if d.len() != 5 || dims.data().iter().any(|v| v.fract() != 0.0 || *v < 1.0) {
            return Err(CliError::Checkpoint("malformed model description".into()));
        }
        let config = ModelConfig {
            channels: [d[0], d[1], d[2], d[3]],
            head_channels: d[4],
        };
        let template = SuperEdge::zeroed(config);
        let mut entries = Vec::with_capacity(template.params.len());
        while entries.len() < template.params.len() {
            match tensors.peek() {
                Some((n, _)) if !n.starts_with("adam.") => entries.extend(tensors.next()),
                _ => break,
            }
        }
        let model = SuperEdge::from_params(config, ModelParams::from_entries(entries))
            .map_err(|e| CliError::Checkpoint(format!("parameters do not fit the stored model: {e}")))?;
        let adam = match tensors.next() {
            None => None,
            Some((n, t)) if n == STEP_KEY => {
                let mut state = model.adam(lr);
                state.step = read_counter(&t, "optimiser step")?;
                let names: Vec<String> = model
                    .params
                    .entries()
                    .iter()
                    .map(|(n, _)| n.clone())
                    .filter(|n| ModelParams::is_trainable(n))
                    .collect();
                for (i, name) in names.iter().enumerate() {
                    for (prefix, slot) in [("adam.m.", &mut state.m[i]), ("adam.v.", &mut state.v[i])] {
                        let key = format!("{prefix}{name}");
                        match tensors.next() {
                            Some((n, t)) if n == key && t.numel() == slot.len() => *slot = t.into_data(),
                            _ => return Err(CliError::Checkpoint(format!("missing or malformed `{key}`"))),
                        }
                    }
                }
                Some(state)
            }
            Some((n, _)) => return Err(CliError::Checkpoint(format!("unexpected record `{n}`"))),
        };
        if let Some((n, _)) = tensors.next() {
            return Err(CliError::Checkpoint(format!("unexpected record `{n}`")));
        }
        Ok(Checkpoint { model, adam, epoch })
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path, lr: f64) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, lr).map_err(|e| match e {
        CliError::Checkpoint(msg) => CliError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

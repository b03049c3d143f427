//! Binary network checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SKFC"
//! version u32          1 = single network, 2 = shared trunk + named heads
//! body    network      layer table, then the parameter block
//! [v2]    head table   u32 count, then per head: name, network body
//! meta    entries      u32 count, then per entry: key, value (len-prefixed)
//! ```
//!
//! A network body is a `u32` layer count, per-layer `(in u32, out u32,
//! activation u8)`, a `u64` parameter count, and that many `f64`s — per
//! layer the weight matrix row-major, then the bias. Metadata is a sorted
//! map, so byte output is deterministic for identical inputs.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec, QNetwork};

pub type Metadata = BTreeMap<String, String>;

const MAGIC: &[u8; 4] = b"SKFC";
pub(crate) const VERSION_SINGLE: u32 = 1;
pub(crate) const VERSION_DISTILLED: u32 = 2;

/// Writes a network and its metadata as a version-1 checkpoint.
pub fn save_checkpoint(net: &QNetwork, meta: &Metadata, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION_SINGLE.to_le_bytes())?;
        write_network(&mut w, net)?;
        write_meta(&mut w, meta)?;
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads a version-1 checkpoint. Version-2 files are rejected with a
/// version error; anything malformed is reported as corrupt.
pub fn load_checkpoint(path: &Path) -> Result<(QNetwork, Metadata)> {
    let mut r = Reader::open(path)?;
    r.expect_magic()?;
    let version = r.u32()?;
    if version != VERSION_SINGLE {
        return Err(Error::CheckpointVersion {
            path: path.display().to_string(),
            found: version,
            expected: VERSION_SINGLE,
        });
    }
    let net = read_network(&mut r)?;
    let meta = read_meta(&mut r)?;
    r.expect_eof()?;
    Ok((net, meta))
}

/// Writes a trunk plus named output heads as a version-2 checkpoint.
pub(crate) fn save_distilled_checkpoint(
    trunk: &QNetwork,
    heads: &[(String, QNetwork)],
    meta: &Metadata,
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION_DISTILLED.to_le_bytes())?;
        write_network(&mut w, trunk)?;
        w.write_all(&(heads.len() as u32).to_le_bytes())?;
        for (name, head) in heads {
            write_str(&mut w, name)?;
            write_network(&mut w, head)?;
        }
        write_meta(&mut w, meta)?;
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Reads a version-2 checkpoint: `(trunk, named heads, metadata)`.
pub(crate) fn load_distilled_checkpoint(
    path: &Path,
) -> Result<(QNetwork, Vec<(String, QNetwork)>, Metadata)> {
    let mut r = Reader::open(path)?;
    r.expect_magic()?;
    let version = r.u32()?;
    if version != VERSION_DISTILLED {
        return Err(Error::CheckpointVersion {
            path: path.display().to_string(),
            found: version,
            expected: VERSION_DISTILLED,
        });
    }
    let trunk = read_network(&mut r)?;
    let head_count = r.u32()? as usize;
    if head_count == 0 || head_count > 1024 {
        return Err(r.corrupt(format!("implausible head count {head_count}")));
    }
    let mut heads = Vec::with_capacity(head_count);
    for _ in 0..head_count {
        let name = r.string()?;
        let head = read_network(&mut r)?;
        if head.input_dim() != trunk.output_dim() {
            return Err(r.corrupt(format!(
                "head '{}' expects {} inputs but trunk emits {}",
                name,
                head.input_dim(),
                trunk.output_dim()
            )));
        }
        heads.push((name, head));
    }
    let meta = read_meta(&mut r)?;
    r.expect_eof()?;
    Ok((trunk, heads, meta))
}

fn write_network<W: Write>(w: &mut W, net: &QNetwork) -> std::io::Result<()> {
    let shapes = net.layer_shapes();
    w.write_all(&(shapes.len() as u32).to_le_bytes())?;
    for (in_dim, out_dim, act) in &shapes {
        w.write_all(&(*in_dim as u32).to_le_bytes())?;
        w.write_all(&(*out_dim as u32).to_le_bytes())?;
        w.write_all(&[act.tag()])?;
    }
    let params = net.flat_params();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in &params {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_network(r: &mut Reader) -> Result<QNetwork> {
    let layer_count = r.u32()? as usize;
    if layer_count == 0 || layer_count > 64 {
        return Err(r.corrupt(format!("implausible layer count {layer_count}")));
    }
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let tag = r.u8()?;
        let act = Activation::from_tag(tag)
            .ok_or_else(|| r.corrupt(format!("unknown activation tag {tag}")))?;
        if in_dim == 0 || out_dim == 0 {
            return Err(r.corrupt("zero layer dimension".into()));
        }
        shapes.push((in_dim, out_dim, act));
    }
    for w in shapes.windows(2) {
        if w[0].1 != w[1].0 {
            return Err(r.corrupt(format!(
                "layer dimension chain broken: {} feeds {}",
                w[0].1, w[1].0
            )));
        }
    }
    let expected: u64 = shapes.iter().map(|&(i, o, _)| (i * o + o) as u64).sum();
    let declared = r.u64()?;
    if declared != expected {
        return Err(r.corrupt(format!(
            "parameter count {declared} does not match layer shapes (want {expected})"
        )));
    }
    let mut specs = Vec::with_capacity(layer_count);
    for (in_dim, out_dim, act) in shapes {
        let mut weights = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            let mut row = Vec::with_capacity(in_dim);
            for _ in 0..in_dim {
                row.push(r.f64()?);
            }
            weights.push(row);
        }
        let mut bias = Vec::with_capacity(out_dim);
        for _ in 0..out_dim {
            bias.push(r.f64()?);
        }
        specs.push(LayerSpec {
            weights,
            bias,
            activation: act,
        });
    }
    Ok(QNetwork::from_layer_specs(specs))
}

fn write_meta<W: Write>(w: &mut W, meta: &Metadata) -> std::io::Result<()> {
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    for (k, v) in meta {
        write_str(w, k)?;
        write_str(w, v)?;
    }
    Ok(())
}

fn read_meta(r: &mut Reader) -> Result<Metadata> {
    let count = r.u32()? as usize;
    if count > 4096 {
        return Err(r.corrupt(format!("implausible metadata entry count {count}")));
    }
    let mut meta = Metadata::new();
    for _ in 0..count {
        let k = r.string()?;
        let v = r.string()?;
        meta.insert(k, v);
    }
    Ok(meta)
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

/// Buffered reader that reports short reads and decode failures as
/// corrupt-checkpoint errors carrying the file path.
struct Reader {
    inner: BufReader<File>,
    path: PathBuf,
}

impl Reader {
    fn open(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Reader {
            inner: BufReader::new(file),
            path: path.to_path_buf(),
        })
    }

    fn corrupt(&self, reason: String) -> Error {
        Error::CorruptCheckpoint {
            path: self.path.display().to_string(),
            reason,
        }
    }

    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.corrupt("file truncated".into()))?;
        Ok(buf)
    }

    fn expect_magic(&mut self) -> Result<()> {
        let got: [u8; 4] = self.bytes()?;
        if &got == MAGIC {
            Ok(())
        } else {
            Err(self.corrupt("bad magic (not a checkpoint file)".into()))
        }
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if len > 1 << 20 {
            return Err(self.corrupt(format!("implausible string length {len}")));
        }
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| self.corrupt("file truncated".into()))?;
        String::from_utf8(buf).map_err(|_| self.corrupt("string is not valid UTF-8".into()))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut buf = [0u8; 1];
        match self.inner.read(&mut buf) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.corrupt("trailing bytes after checkpoint".into())),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}

//! Versioned little-endian checkpoint container.
//!
//! ```text
//! magic "TGNNCKPT" | version u32
//! config: u32 length + TOML text | precision u8 | dims: embed, time, node, edge as u32
//! params: count u32, then per param: name (u32 length + UTF-8) | rank u32 | shape u64* | f64*
//! memory: nodes u64 | dim u32 | values f64* | last_update f64* | clock f64
//!         pending count u32, then per entry: node u32 | other u32 | time f64 | ordinal u64
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dims, Memory, ModelConfig, ModelError, ModelState, ParamStore, PendingEvent};
use crate::numerics::{Array, Precision};

const MAGIC: &[u8; 8] = b"TGNNCKPT";
const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s<W: Write>(w: &mut W, vs: &[f64]) -> std::io::Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn put_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    put_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn write_checkpoint<W: Write>(state: &ModelState, w: &mut W) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    let cfg = toml::to_string(&state.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    put_str(w, &cfg)?;
    w.write_all(&[match state.precision {
        Precision::Fast => 0,
        Precision::Exact => 1,
    }])?;
    for d in [state.dims.embed, state.dims.time, state.dims.node, state.dims.edge] {
        put_u32(w, d as u32)?;
    }
    put_u32(w, state.params.len() as u32)?;
    for (name, a) in &state.params {
        put_str(w, name)?;
        put_u32(w, a.rank() as u32)?;
        for &s in a.shape() {
            put_u64(w, s as u64)?;
        }
        put_f64s(w, a.data())?;
    }
    let m = &state.memory;
    put_u64(w, m.nodes() as u64)?;
    put_u32(w, m.dim() as u32)?;
    put_f64s(w, m.values())?;
    put_f64s(w, m.last_updates())?;
    put_f64s(w, &[m.clock()])?;
    put_u32(w, m.pending().len() as u32)?;
    for (node, p) in m.pending() {
        put_u32(w, *node)?;
        put_u32(w, p.other)?;
        put_f64s(w, &[p.time])?;
        put_u64(w, p.ordinal as u64)?;
    }
    Ok(())
}

struct Reader<'r, R: Read>(&'r mut R);

impl<R: Read> Reader<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| ModelError::Checkpoint(format!("truncated: {e}")))?;
        Ok(b)
    }
    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        let mut b = vec![0u8; n];
        self.0
            .read_exact(&mut b)
            .map_err(|e| ModelError::Checkpoint(format!("truncated: {e}")))?;
        String::from_utf8(b).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelState, ModelError> {
    let mut r = Reader(r);
    if &r.bytes::<8>()? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let config: ModelConfig = toml::from_str(&r.string()?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let precision = match r.bytes::<1>()?[0] {
        0 => Precision::Fast,
        1 => Precision::Exact,
        c => return Err(ModelError::Checkpoint(format!("precision code {c}"))),
    };
    let dims = Dims {
        embed: r.u32()? as usize,
        time: r.u32()? as usize,
        node: r.u32()? as usize,
        edge: r.u32()? as usize,
    };
    let count = r.u32()?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|s| s as usize)).collect::<Result<_, _>>()?;
        let n = shape.iter().product();
        let data = r.f64s(n)?;
        params.insert(name, Array::new(shape, data).map_err(|e| ModelError::Checkpoint(e.to_string()))?);
    }
    let nodes = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let values = r.f64s(nodes * dim)?;
    let last_update = r.f64s(nodes)?;
    let clock = r.f64()?;
    let pending_count = r.u32()?;
    let mut pending = BTreeMap::new();
    for _ in 0..pending_count {
        let node = r.u32()?;
        let other = r.u32()?;
        let time = r.f64()?;
        let ordinal = r.u64()? as usize;
        pending.insert(node, PendingEvent { other, time, ordinal });
    }
    let memory = Memory::from_parts(dim, values, last_update, pending, clock);
    Ok(ModelState { config, dims, params, memory, precision })
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(state, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState, ModelError> {
    let mut r = BufReader::new(File::open(path)?);
    read_checkpoint(&mut r)
}

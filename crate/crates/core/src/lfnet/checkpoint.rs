//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! `"PLIF"`, `u16` version, `u8` precision tag (32 or 64), stage config,
//! stage index, depth grid, subnetworks with per-layer `v`, `g`, `b`, an
//! optional training state (step counters, Adam moments, RNG state) and a
//! CRC32 of everything before it.

use std::fs::{self, File};
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{DenseMatrix, LayerParams, ParamGradients};
use crate::error::{Error, Result};
use crate::lfnet::config::{DepthGrid, StageConfig};
use crate::lfnet::network::{LayerLayout, ProLiFNetwork, SubnetworkParams};
use crate::real::{Precision, Real};
use crate::train::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLIF";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Optimizer and sampler state needed to resume training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState<T> {
    /// Global step count (completed steps).
    pub step: u64,
    pub adam: AdamState<T>,
    pub rng: RngState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub net: ProLiFNetwork<T>,
    pub state: Option<TrainState<T>>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u16(&mut self, x: u16) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn u32(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u32).to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn reals<T: Real>(&mut self, xs: &[T]) {
        for &x in xs {
            x.write_le(&mut self.0);
        }
    }
    fn tensors<T: Real>(&mut self, l: &LayerParams<T>) {
        self.reals(l.v.data());
        self.reals(&l.g);
        self.reals(&l.b);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.path, "truncated file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let raw = self.take(n.checked_mul(T::BYTES).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
    fn tensors<T: Real>(&mut self, rows: usize, cols: usize) -> Result<LayerParams<T>> {
        let v = DenseMatrix::from_vec(rows, cols, self.reals(rows * cols)?)?;
        let g = self.reals(rows)?;
        let b = self.reals(rows)?;
        Ok(LayerParams { v, g, b })
    }
}

fn moments_like<T: Real>(r: &mut Reader<'_>, net: &ProLiFNetwork<T>) -> Result<ParamGradients<T>> {
    let mut subnets = Vec::with_capacity(net.subnets.len());
    for s in &net.subnets {
        let mut layers = Vec::with_capacity(s.layers.len());
        for l in &s.layers {
            layers.push(r.tensors(l.out_dim(), l.in_dim())?);
        }
        subnets.push(layers);
    }
    Ok(ParamGradients { subnets })
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<T: Real>(net: &ProLiFNetwork<T>, state: Option<&TrainState<T>>) -> Result<Vec<u8>> {
    net.check()?;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u8(T::PRECISION.tag());
    let c = &net.config;
    for x in [c.base_subnets, c.base_width, c.hidden_depth, c.skip_layer, c.num_stages] {
        w.u32(x);
    }
    w.f64(c.omega0);
    w.u32(net.stage);
    w.u32(net.grid.len());
    for &d in net.grid.values() {
        w.f64(d);
    }
    w.u32(net.subnets.len());
    for s in &net.subnets {
        w.u32(s.samples);
        w.u32(s.layers.len());
        for (l, lay) in s.layers.iter().zip(&s.layout) {
            w.u32(lay.hidden_in);
            w.u32(lay.raw_in);
            w.u32(l.out_dim());
            w.tensors(l);
        }
    }
    match state {
        None => w.u8(0),
        Some(st) => {
            w.u8(1);
            w.u64(st.step);
            w.u64(st.adam.t);
            for moments in [&st.adam.m, &st.adam.v] {
                if !moments.same_shape(&net.zero_grads()) {
                    return Err(Error::dim("checkpoint moments", "network-shaped", "mismatched"));
                }
                for layers in &moments.subnets {
                    for l in layers {
                        w.tensors(l);
                    }
                }
            }
            w.0.extend_from_slice(&st.rng.seed);
            w.u64(st.rng.stream);
            w.0.extend_from_slice(&st.rng.word_pos.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.0.extend_from_slice(&crc.to_le_bytes());
    Ok(w.0)
}

/// Reads only the precision tag of a checkpoint.
pub fn checkpoint_precision(bytes: &[u8], path: &Path) -> Result<Precision> {
    if bytes.len() < 7 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    Precision::from_tag(bytes[6]).ok_or_else(|| Error::format(path, format!("unknown precision tag {}", bytes[6])))
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8], path: &Path) -> Result<Checkpoint<T>> {
    let found = checkpoint_precision(bytes, path)?;
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if found != T::PRECISION {
        return Err(Error::PrecisionMismatch {
            found: found.to_string(),
            requested: T::PRECISION.to_string(),
        });
    }
    if bytes.len() < 11 {
        return Err(Error::format(path, "truncated file"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut r = Reader { bytes: body, pos: 7, path };
    let config = StageConfig {
        base_subnets: r.u32()?,
        base_width: r.u32()?,
        hidden_depth: r.u32()?,
        skip_layer: r.u32()?,
        num_stages: r.u32()?,
        omega0: r.f64()?,
    };
    config.validate()?;
    let stage = r.u32()?;
    let n = r.u32()?;
    let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let grid = DepthGrid::from_values(values)?;
    let count = r.u32()?;
    let mut subnets = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let samples = r.u32()?;
        let nl = r.u32()?;
        let mut layers = Vec::with_capacity(nl.min(1 << 10));
        let mut layout = Vec::with_capacity(nl.min(1 << 10));
        for _ in 0..nl {
            let lay = LayerLayout {
                hidden_in: r.u32()?,
                raw_in: r.u32()?,
            };
            let out = r.u32()?;
            layers.push(r.tensors(out, lay.width())?);
            layout.push(lay);
        }
        subnets.push(SubnetworkParams { layers, layout, samples });
    }
    let net = ProLiFNetwork {
        config,
        stage,
        grid,
        subnets,
    };
    net.check().map_err(|e| Error::format(path, e.to_string()))?;
    let state = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let t = r.u64()?;
            let m = moments_like(&mut r, &net)?;
            let v = moments_like(&mut r, &net)?;
            let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
            let stream = r.u64()?;
            let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
            Some(TrainState {
                step,
                adam: AdamState { m, v, t },
                rng: RngState { seed, stream, word_pos },
            })
        }
        t => return Err(Error::format(path, format!("bad train-state flag {t}"))),
    };
    if r.pos != body.len() {
        return Err(Error::format(path, "trailing bytes before checksum"));
    }
    Ok(Checkpoint { net, state })
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint<T: Real>(net: &ProLiFNetwork<T>, state: Option<&TrainState<T>>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(net, state)?;
    write_atomic(path, &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(name);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes, path)
}

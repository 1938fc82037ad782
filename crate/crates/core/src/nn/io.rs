//! Binary model and checkpoint files (little-endian).
//!
//! Model file:
//!
//! ```text
//! "LFSR"            magic
//! u32               format version (1)
//! u32               layer count
//! u32 x 3           input shape (channels, height, width)
//! u64               initialization seed
//! per layer:
//!   u32             kind: 1 = conv, 2 = relu, 3 = fully connected
//!   u32 x n         dims: conv (in, out, k); relu none; fc (in, out)
//!   f32 x ...       weights, row-major
//!   f32 x ...       biases
//! u32               CRC-32 of every preceding byte
//! ```
//!
//! Checkpoints (`"LFCK"`) use the same layer header but keep weights and
//! optimizer velocities in `f64`, plus the step counter and loss history, so
//! a resumed run continues bit-identically.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::network::{LayerSpec, Network, Params};
use crate::nn::train::{LossRecord, TrainConfig, Trainer};

pub const MODEL_MAGIC: &[u8; 4] = b"LFSR";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LFCK";
pub const FORMAT_VERSION: u32 = 1;

const KIND_CONV: u32 = 1;
const KIND_RELU: u32 = 2;
const KIND_FC: u32 = 3;

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&(*x as f32).to_le_bytes());
        }
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
    fn dim(&mut self, v: usize) {
        self.u32(u32::try_from(v).expect("dimension fits in u32"));
    }
    fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.0);
        self.u32(crc);
        self.0
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::ModelFormat(format!(
                "truncated: needed {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn dim(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(too_big)?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(too_big)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn done(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::ModelFormat(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn too_big() -> Error {
    Error::ModelFormat("array length overflows".into())
}

/// Checks magic, trailing CRC and version; returns a reader over the body.
fn open<'a>(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Reader<'a>> {
    if bytes.len() < 12 {
        return Err(Error::ModelFormat(format!("truncated: {} bytes", bytes.len())));
    }
    if &bytes[..4] != magic {
        return Err(Error::ModelFormat(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..4]),
            String::from_utf8_lossy(magic)
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::ModelFormat(format!(
            "CRC mismatch: stored {stored:08x}, computed {actual:08x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(r)
}

fn write_header(w: &mut Writer, net: &Network) {
    w.dim(net.layers().len());
    let (c, h, wd) = net.input_shape();
    w.dim(c);
    w.dim(h);
    w.dim(wd);
    w.u64(net.seed());
}

fn write_spec(w: &mut Writer, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
        } => {
            w.u32(KIND_CONV);
            w.dim(in_channels);
            w.dim(out_channels);
            w.dim(kernel);
        }
        LayerSpec::Relu => w.u32(KIND_RELU),
        LayerSpec::FullyConnected { in_size, out_size } => {
            w.u32(KIND_FC);
            w.dim(in_size);
            w.dim(out_size);
        }
    }
}

fn read_spec(r: &mut Reader) -> Result<LayerSpec> {
    Ok(match r.u32()? {
        KIND_CONV => LayerSpec::Conv {
            in_channels: r.dim()?,
            out_channels: r.dim()?,
            kernel: r.dim()?,
        },
        KIND_RELU => LayerSpec::Relu,
        KIND_FC => LayerSpec::FullyConnected {
            in_size: r.dim()?,
            out_size: r.dim()?,
        },
        other => return Err(Error::ModelFormat(format!("unknown layer kind {other}"))),
    })
}

struct Header {
    layers: usize,
    input: (usize, usize, usize),
    seed: u64,
}

fn read_header(r: &mut Reader) -> Result<Header> {
    let layers = r.dim()?;
    let input = (r.dim()?, r.dim()?, r.dim()?);
    let seed = r.u64()?;
    Ok(Header {
        layers,
        input,
        seed,
    })
}

pub fn model_to_bytes(net: &Network) -> Vec<u8> {
    let mut w = Writer(MODEL_MAGIC.to_vec());
    w.u32(FORMAT_VERSION);
    write_header(&mut w, net);
    for (spec, p) in net.layers().iter().zip(net.params()) {
        write_spec(&mut w, spec);
        w.f32s(&p.weights);
        w.f32s(&p.bias);
    }
    w.finish()
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Network> {
    let mut r = open(bytes, MODEL_MAGIC)?;
    let header = read_header(&mut r)?;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for _ in 0..header.layers {
        let spec = read_spec(&mut r)?;
        let (nw, nb) = spec.param_counts();
        params.push(Params {
            weights: r.f32s(nw)?,
            bias: r.f32s(nb)?,
        });
        layers.push(spec);
    }
    r.done()?;
    Network::from_parts(header.input, layers, params, header.seed)
}

pub fn save_model(net: &Network, path: &Path) -> Result<()> {
    fsutil::write_file(path, &model_to_bytes(net))
}

pub fn load_model(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes).map_err(|e| match e {
        Error::ModelFormat(msg) => Error::ModelFormat(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a model and checks it has exactly the expected input shape and layers.
pub fn load_model_expecting(
    path: &Path,
    input_shape: (usize, usize, usize),
    layers: &[LayerSpec],
) -> Result<Network> {
    let net = load_model(path)?;
    if net.input_shape() != input_shape || net.layers() != layers {
        return Err(Error::Shape {
            context: "stored model architecture",
            expected: format!("input {input_shape:?}, layers {layers:?}"),
            found: format!("input {:?}, layers {:?}", net.input_shape(), net.layers()),
        });
    }
    Ok(net)
}

pub fn checkpoint_to_bytes(trainer: &Trainer) -> Vec<u8> {
    let net = trainer.network();
    let mut w = Writer(CHECKPOINT_MAGIC.to_vec());
    w.u32(FORMAT_VERSION);
    w.u64(trainer.step());
    write_header(&mut w, net);
    for ((spec, p), v) in net
        .layers()
        .iter()
        .zip(net.params())
        .zip(trainer.sgd().velocity())
    {
        write_spec(&mut w, spec);
        w.f64s(&p.weights);
        w.f64s(&p.bias);
        w.f64s(&v.weights);
        w.f64s(&v.bias);
    }
    w.u64(trainer.history().len() as u64);
    for rec in trainer.history() {
        w.u64(rec.step);
        w.f64s(&[rec.loss]);
    }
    w.finish()
}

/// Restores a trainer; `config` must describe the same run (its learning
/// rates and seed drive the remaining steps).
pub fn checkpoint_from_bytes(bytes: &[u8], config: TrainConfig) -> Result<Trainer> {
    let mut r = open(bytes, CHECKPOINT_MAGIC)?;
    let step = r.u64()?;
    let header = read_header(&mut r)?;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    let mut velocity = Vec::new();
    for _ in 0..header.layers {
        let spec = read_spec(&mut r)?;
        let (nw, nb) = spec.param_counts();
        params.push(Params {
            weights: r.f64s(nw)?,
            bias: r.f64s(nb)?,
        });
        velocity.push(Params {
            weights: r.f64s(nw)?,
            bias: r.f64s(nb)?,
        });
        layers.push(spec);
    }
    let n = r.u64()? as usize;
    let mut history = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let step = r.u64()?;
        let loss = r.f64s(1)?[0];
        history.push(LossRecord { step, loss });
    }
    r.done()?;
    let net = Network::from_parts(header.input, layers, params, header.seed)?;
    Trainer::restore(net, config, velocity, step, history)
}

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    fsutil::write_file(path, &checkpoint_to_bytes(trainer))
}

pub fn load_checkpoint(path: &Path, config: TrainConfig) -> Result<Trainer> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, config)
}

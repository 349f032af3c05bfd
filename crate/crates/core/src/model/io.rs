//! Model file format, little-endian throughout:
//!
//! ```text
//! magic "BSDC" | version u16 | config block | seed u64
//! conv unit count u32, then per unit:
//!     weight count u64, f32 weights
//!     bias flag u8 [bias count u64, f32 bias]
//!     packed word count u64, u64 words (binary layers; one filter after another)
//!     map count u32, f32 gamma, beta, running mean, running variance
//! dense count u32, then per layer:
//!     in u32, out u32, f32 weights (out × in), f32 bias
//! ```
//!
//! The config block is: electrodes u32, time u32, conv mode u8, head u8,
//! clamp flag u8, block count u32 with (maps u32, kernel u32, axis u8,
//! stride u32) per block, dense count u32 with one u32 per size, bn eps f32,
//! bn momentum f32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, ConvAxis, ConvLayer, DenseLayer};
use crate::tensor::Shape;

use super::config::{BlockSpec, ConvMode, Head, ModelConfig};
use super::network::Model;

pub const MAGIC: &[u8; 4] = b"BSDC";
pub const FORMAT_VERSION: u16 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptModel(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        vs.iter().for_each(|&v| self.f32(v));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(corrupt(format!("truncated while reading {what} at byte {}", self.pos))),
        }
    }
    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| corrupt("length overflow"))?, what)?;
        let v: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(corrupt(format!("non-finite value in {what}")));
        }
        Ok(v)
    }
    /// A u64 element count that must equal `expected`.
    fn count(&mut self, expected: usize, what: &str) -> Result<()> {
        let n = self.u64(what)?;
        if n != expected as u64 {
            return Err(corrupt(format!("{what}: expected {expected} entries, file has {n}")));
        }
        Ok(())
    }
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    w.u32(c.input_shape.electrodes);
    w.u32(c.input_shape.time);
    w.u8(c.conv_mode.code());
    w.u8(match c.head {
        Head::GlobalMeanPool => 0,
        Head::Flatten => 1,
    });
    w.u8(c.clamp_electrode_kernels as u8);
    w.u32(c.blocks.len());
    for b in &c.blocks {
        w.u32(b.maps);
        w.u32(b.kernel);
        w.u8(match b.axis {
            ConvAxis::Time => 0,
            ConvAxis::Electrode => 1,
        });
        w.u32(b.stride);
    }
    w.u32(c.fc_dims.len());
    for &d in &c.fc_dims {
        w.u32(d);
    }
    w.f32(c.bn_eps);
    w.f32(c.bn_momentum);
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let electrodes = r.u32("input electrodes")?;
    let time = r.u32("input time")?;
    let conv_mode = ConvMode::from_code(r.u8("conv mode")?).ok_or_else(|| corrupt("unknown conv mode"))?;
    let head = match r.u8("head")? {
        0 => Head::GlobalMeanPool,
        1 => Head::Flatten,
        h => return Err(corrupt(format!("unknown head code {h}"))),
    };
    let clamp_electrode_kernels = match r.u8("clamp flag")? {
        0 => false,
        1 => true,
        f => return Err(corrupt(format!("bad clamp flag {f}"))),
    };
    let nblocks = r.u32("block count")?;
    if nblocks > 64 {
        return Err(corrupt(format!("implausible block count {nblocks}")));
    }
    let mut blocks = Vec::with_capacity(nblocks);
    for _ in 0..nblocks {
        let maps = r.u32("block maps")?;
        let kernel = r.u32("block kernel")?;
        let axis = match r.u8("block axis")? {
            0 => ConvAxis::Time,
            1 => ConvAxis::Electrode,
            a => return Err(corrupt(format!("unknown axis code {a}"))),
        };
        let stride = r.u32("block stride")?;
        blocks.push(BlockSpec {
            maps,
            kernel,
            axis,
            stride,
        });
    }
    let nfc = r.u32("dense count")?;
    if nfc > 64 {
        return Err(corrupt(format!("implausible dense count {nfc}")));
    }
    let fc_dims = (0..nfc).map(|_| r.u32("dense size")).collect::<Result<Vec<_>>>()?;
    let bn_eps = r.f32("bn eps")?;
    let bn_momentum = r.f32("bn momentum")?;
    Ok(ModelConfig {
        input_shape: Shape::new(electrodes, time, 1),
        conv_mode,
        blocks,
        head,
        fc_dims,
        clamp_electrode_kernels,
        bn_eps,
        bn_momentum,
    })
}

impl Model {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u16(FORMAT_VERSION);
        write_config(&mut w, &self.config);
        w.u64(self.seed);
        w.u32(self.convs.len());
        for (conv, bn) in self.convs.iter().zip(&self.bns) {
            w.u64(conv.weights().len() as u64);
            w.f32s(conv.weights());
            match conv.bias() {
                Some(b) => {
                    w.u8(1);
                    w.u64(b.len() as u64);
                    w.f32s(b);
                }
                None => w.u8(0),
            }
            let packed = conv.packed_words();
            w.u64(packed.len() as u64);
            packed.iter().for_each(|&x| w.u64(x));
            w.u32(bn.maps());
            w.f32s(&bn.gamma);
            w.f32s(&bn.beta);
            w.f32s(&bn.running_mean);
            w.f32s(&bn.running_var);
        }
        w.u32(self.dense.len());
        for d in &self.dense {
            w.u32(d.in_dim());
            w.u32(d.out_dim());
            w.f32s(&d.weights);
            w.f32s(&d.bias);
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(corrupt("bad magic (not a model file)"));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!(
                "unsupported format version {version} (this build reads version {FORMAT_VERSION})"
            )));
        }
        let config = read_config(&mut r)?;
        let plan = config.plan().map_err(|e| corrupt(format!("stored config is invalid: {e}")))?;
        let seed = r.u64("seed")?;
        let units = r.u32("conv unit count")?;
        if units != plan.convs.len() {
            return Err(corrupt(format!("expected {} conv units, file has {units}", plan.convs.len())));
        }
        let mut convs = Vec::with_capacity(units);
        let mut bns = Vec::with_capacity(units);
        for unit in &plan.convs {
            let mut conv = ConvLayer::new(unit.kernel, unit.stride, unit.in_maps, unit.out_maps, unit.precision)?;
            let n = conv.weights().len();
            r.count(n, &format!("{} weights", unit.name))?;
            conv.set_weights(r.f32s(n, "conv weights")?)?;
            match (r.u8("bias flag")?, conv.bias().map(<[f32]>::len)) {
                (0, None) => {}
                (1, Some(nb)) => {
                    r.count(nb, &format!("{} bias", unit.name))?;
                    conv.set_bias(r.f32s(nb, "conv bias")?)?;
                }
                (f, _) => return Err(corrupt(format!("{}: unexpected bias flag {f}", unit.name))),
            }
            let expected = conv.packed_words().len();
            r.count(expected, &format!("{} packed words", unit.name))?;
            for (k, &want) in conv.packed_words().to_vec().iter().enumerate() {
                if r.u64("packed words")? != want {
                    return Err(corrupt(format!(
                        "{}: packed word {k} does not match the signs of the latent weights",
                        unit.name
                    )));
                }
            }
            let maps = r.u32("bn maps")?;
            if maps != unit.out_maps {
                return Err(corrupt(format!("{}: batch norm has {maps} maps", unit.name)));
            }
            let mut bn = BatchNorm::new(maps, config.bn_eps, config.bn_momentum)?;
            bn.gamma = r.f32s(maps, "bn gamma")?;
            bn.beta = r.f32s(maps, "bn beta")?;
            bn.running_mean = r.f32s(maps, "bn running mean")?;
            bn.running_var = r.f32s(maps, "bn running variance")?;
            if bn.running_var.iter().any(|&v| v < 0.0) {
                return Err(corrupt(format!("{}: negative running variance", unit.name)));
            }
            convs.push(conv);
            bns.push(bn);
        }
        let nd = r.u32("dense count")?;
        if nd != plan.dense.len() {
            return Err(corrupt(format!("expected {} dense layers, file has {nd}", plan.dense.len())));
        }
        let mut dense = Vec::with_capacity(nd);
        for d in &plan.dense {
            let (i, o) = (r.u32("dense in")?, r.u32("dense out")?);
            if (i, o) != (d.in_dim, d.out_dim) {
                return Err(corrupt(format!("{}: stored as {i}x{o}", d.name)));
            }
            let mut layer = DenseLayer::new(i, o, d.activation)?;
            layer.weights = r.f32s(i * o, "dense weights")?;
            layer.bias = r.f32s(o, "dense bias")?;
            dense.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Model {
            config,
            plan,
            seed,
            convs,
            bns,
            dense,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Model> {
        Model::from_bytes(&fs::read(path)?)
    }
}

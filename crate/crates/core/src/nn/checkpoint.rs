//! Binary network checkpoints: little-endian, bit-exact round trip.

use std::io::{Read, Write};

use super::{Layer, LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::io::{
    expect_magic, read_f64_vec, read_u32, read_u64, write_f64_slice, write_u32, write_u64,
};

const MAGIC: &[u8; 4] = b"NNET";
const VERSION: u32 = 1;

impl Network {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u64(w, self.init_seed())?;
        write_u32(w, self.input_len() as u32)?;
        write_u32(w, self.layers().len() as u32)?;
        for layer in self.layers() {
            write_u32(w, layer.spec.kind.tag())?;
            write_u32(w, layer.spec.kernel_size as u32)?;
            write_u32(w, layer.spec.stride as u32)?;
            write_u32(w, layer.spec.in_features as u32)?;
            write_u32(w, layer.spec.out_features as u32)?;
            write_u64(w, layer.weights.len() as u64)?;
            write_f64_slice(w, &layer.weights)?;
            write_u64(w, layer.bias.len() as u64)?;
            write_f64_slice(w, &layer.bias)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Network> {
        expect_magic(r, MAGIC, "network checkpoint")?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::input(format!("unsupported network checkpoint version {version}")));
        }
        let init_seed = read_u64(r)?;
        let input_len = read_u32(r)? as usize;
        let n_layers = read_u32(r)? as usize;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let kind = LayerKind::from_tag(read_u32(r)?)?;
            let kernel_size = read_u32(r)? as usize;
            let stride = read_u32(r)? as usize;
            let in_features = read_u32(r)? as usize;
            let out_features = read_u32(r)? as usize;
            let wlen = read_u64(r)? as usize;
            let weights = read_f64_vec(r, wlen)?;
            let blen = read_u64(r)? as usize;
            let bias = read_f64_vec(r, blen)?;
            let expected_w = match kind {
                LayerKind::Dense => in_features * out_features,
                LayerKind::Conv1d => out_features * in_features * kernel_size,
                _ => 0,
            };
            if weights.len() != expected_w {
                return Err(Error::input("network checkpoint has inconsistent weight counts"));
            }
            layers.push(Layer {
                spec: LayerSpec { kind, kernel_size, stride, in_features, out_features },
                weights,
                bias,
            });
        }
        Ok(Network::from_parts(input_len, layers, init_seed))
    }
}

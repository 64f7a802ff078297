//! Binary checkpoint format.
//!
//! Little-endian throughout: magic `EPNN`, `u32` version, `u32` dims,
//! Fourier width, hidden width, block count and activation id, `f64` trained
//! alpha, `u32` layer count followed by `(u32 out, u32 in)` per layer, `u64`
//! parameter count and the parameters, then `u32` code count followed by
//! `(u32 env id, u32 d, u32 h, d*h f64)` per code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{FieldNet, LayerShape, NetConfig};
use crate::autodiff::Activation;
use crate::binio::*;
use crate::env::FourierCode;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EPNN";
const VERSION: u32 = 1;

impl FieldNet {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        let c = &self.cfg;
        for v in [c.dims, c.fourier_h, c.width, c.blocks] {
            write_u32(w, v as u32)?;
        }
        write_u32(w, c.activation.id())?;
        write_f64s(w, &[self.trained_alpha])?;
        let shapes = self.layer_shapes();
        write_u32(w, shapes.len() as u32)?;
        for s in &shapes {
            write_u32(w, s.out as u32)?;
            write_u32(w, s.inp as u32)?;
        }
        write_u64(w, self.params.len() as u64)?;
        write_f64s(w, &self.params)?;
        write_u32(w, self.codes.len() as u32)?;
        for (id, code) in &self.codes {
            write_u32(w, *id)?;
            write_u32(w, code.dims as u32)?;
            write_u32(w, code.h as u32)?;
            write_f64s(w, &code.values)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        read_magic(r, MAGIC)?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Incompatible(format!("checkpoint version {version}, expected {VERSION}")));
        }
        let dims = read_u32(r)? as usize;
        let fourier_h = read_u32(r)? as usize;
        let width = read_u32(r)? as usize;
        let blocks = read_u32(r)? as usize;
        if dims == 0 || dims > 64 || fourier_h > 1 << 16 || width > 1 << 16 || blocks > 1024 {
            return Err(Error::Format("implausible network header".into()));
        }
        let act_id = read_u32(r)?;
        let activation = Activation::from_id(act_id)
            .ok_or_else(|| Error::Incompatible(format!("unknown activation id {act_id}")))?;
        let trained_alpha = read_f64s(r, 1)?[0];
        let cfg = NetConfig {
            dims,
            fourier_h,
            width,
            blocks,
            activation,
        };
        let mut net = FieldNet::new(cfg, 0)?;
        net.trained_alpha = trained_alpha;

        let n_layers = read_u32(r)? as usize;
        let expected = net.layer_shapes();
        if n_layers != expected.len() {
            return Err(Error::Incompatible(format!(
                "{n_layers} layers stored, architecture has {}",
                expected.len()
            )));
        }
        for (i, e) in expected.iter().enumerate() {
            let got = LayerShape {
                out: read_u32(r)? as usize,
                inp: read_u32(r)? as usize,
            };
            if got != *e {
                return Err(Error::Incompatible(format!("layer {i} has shape {got:?}, expected {e:?}")));
            }
        }
        let n = read_u64(r)? as usize;
        if n != net.params.len() {
            return Err(Error::Incompatible(format!(
                "{n} parameters stored, architecture has {}",
                net.params.len()
            )));
        }
        net.params = read_f64s(r, n)?;
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        let n_codes = read_u32(r)? as usize;
        for _ in 0..n_codes {
            let id = read_u32(r)?;
            let d = read_u32(r)? as usize;
            let h = read_u32(r)? as usize;
            if d != dims || h != fourier_h {
                return Err(Error::Incompatible(format!("code for environment {id} is {d}x{h}")));
            }
            let values = read_f64s(r, d * h)?;
            if net.codes.iter().any(|(e, _)| *e == id) {
                return Err(Error::Format(format!("duplicate code for environment {id}")));
            }
            net.codes.push((id, FourierCode { dims: d, h, values }));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r)
    }
}

//! Rebuilds a [`FieldNet`] as a generic [`Program`], an independent
//! evaluation route used to cross-check the batched kernels.

use super::{FieldNet, Slot, TAU_SHIFT, TWO_PI};
use crate::autodiff::{Activation, NodeId, Program, ProgramBuilder};
use crate::error::Result;

impl FieldNet {
    /// The network for `env_id` as a program over `[q_s, q_g]`. The second
    /// value maps each program parameter to the network parameter it copies
    /// (`None` for frozen Fourier weights).
    pub fn to_program(&self, env_id: u32) -> Result<(Program, Vec<Option<usize>>)> {
        let code = self.code(env_id)?;
        let (d, h) = (self.cfg.dims, self.cfg.fourier_h);
        let act = self.cfg.activation;
        let mut b = ProgramBuilder::new(2 * d);
        let mut map: Vec<Option<usize>> = Vec::new();

        let mut fourier_w = vec![0.0; h * d];
        for j in 0..h {
            for i in 0..d {
                fourier_w[j * d + i] = TWO_PI * code.get(i, j);
            }
        }
        let layer = |b: &mut ProgramBuilder, map: &mut Vec<Option<usize>>, x: NodeId, s: &Slot| {
            let n = s.shape.out * s.shape.inp;
            map.extend((s.w..s.w + n + s.shape.out).map(Some));
            b.affine(
                x,
                &self.params[s.w..s.w + n],
                Some(&self.params[s.b..s.b + s.shape.out]),
                s.shape.out,
            )
        };

        let encode = |b: &mut ProgramBuilder, map: &mut Vec<Option<usize>>, offset: usize| -> Result<NodeId> {
            let q = b.input(offset, d)?;
            let theta = b.affine(q, &fourier_w, None, h)?;
            map.extend(std::iter::repeat(None).take(h * d));
            let c = b.activation(theta, Activation::Cos)?;
            let s = b.activation(theta, Activation::Sin)?;
            let x = b.concat(c, s)?;
            let z = layer(b, map, x, &self.layers.enc_in)?;
            let mut hcur = b.activation(z, act)?;
            for [l1, l2] in &self.layers.enc_blocks {
                let u = layer(b, map, hcur, l1)?;
                let a = b.activation(u, act)?;
                let v = layer(b, map, a, l2)?;
                hcur = b.add(hcur, v)?;
            }
            Ok(hcur)
        };
        let es = encode(&mut b, &mut map, 0)?;
        let eg = encode(&mut b, &mut map, d)?;
        let hi = b.max(es, eg)?;
        let lo = b.min(es, eg)?;
        let c = b.concat(hi, lo)?;

        let z = layer(&mut b, &mut map, c, &self.layers.gen_in)?;
        let mut hcur = b.activation(z, act)?;
        for [l1, l2] in &self.layers.gen_blocks {
            let u = layer(&mut b, &mut map, hcur, l1)?;
            let a = b.activation(u, act)?;
            let v = layer(&mut b, &mut map, a, l2)?;
            hcur = b.add(hcur, v)?;
        }
        let p = b.activation(hcur, act)?;
        let z = layer(&mut b, &mut map, p, &self.layers.gen_out)?;
        let shift = b.constant(vec![TAU_SHIFT]);
        let z = b.add(z, shift)?;
        let tau = b.activation(z, Activation::Softplus)?;
        Ok((b.build(tau)?, map))
    }
}

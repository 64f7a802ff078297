//! Batched jet kernels for dense layers.
//!
//! A [`JetBatch`] stores, for `rows` samples and `width` features, one value
//! channel, `dirs` first-derivative channels and (optionally) `dirs` pure
//! second-derivative channels, stacked channel-major so that a dense layer is
//! a single matrix product over all channels. The backward kernels run the
//! reverse sweep through that forward propagation, which yields parameter
//! gradients of losses built from input gradients and Laplacians.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use super::Activation;

#[derive(Clone, Debug, PartialEq)]
pub struct JetBatch {
    pub rows: usize,
    pub dirs: usize,
    pub second: bool,
    pub data: Array2<f64>,
}

impl JetBatch {
    pub fn channels_for(dirs: usize, second: bool) -> usize {
        1 + dirs * if second { 2 } else { 1 }
    }

    pub fn zeros(rows: usize, dirs: usize, second: bool, width: usize) -> Self {
        JetBatch {
            rows,
            dirs,
            second,
            data: Array2::zeros((rows * Self::channels_for(dirs, second), width)),
        }
    }

    pub fn channels(&self) -> usize {
        Self::channels_for(self.dirs, self.second)
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn same_shape(&self) -> Self {
        JetBatch::zeros(self.rows, self.dirs, self.second, self.width())
    }

    fn block(&self, c: usize) -> ArrayView2<'_, f64> {
        self.data.slice(s![c * self.rows..(c + 1) * self.rows, ..])
    }

    fn block_mut(&mut self, c: usize) -> ArrayViewMut2<'_, f64> {
        let r = self.rows;
        self.data.slice_mut(s![c * r..(c + 1) * r, ..])
    }

    pub fn value(&self) -> ArrayView2<'_, f64> {
        self.block(0)
    }

    pub fn value_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.block_mut(0)
    }

    pub fn d1(&self, k: usize) -> ArrayView2<'_, f64> {
        self.block(1 + k)
    }

    pub fn d1_mut(&mut self, k: usize) -> ArrayViewMut2<'_, f64> {
        self.block_mut(1 + k)
    }

    pub fn d2(&self, k: usize) -> ArrayView2<'_, f64> {
        assert!(self.second, "batch carries no second-order channels");
        self.block(1 + self.dirs + k)
    }

    pub fn d2_mut(&mut self, k: usize) -> ArrayViewMut2<'_, f64> {
        assert!(self.second, "batch carries no second-order channels");
        let c = 1 + self.dirs + k;
        self.block_mut(c)
    }

    pub fn add_assign(&mut self, o: &JetBatch) {
        self.data += &o.data;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `z = W x + b` on every channel; the bias only touches values.
/// `w` is `out x in`.
pub fn linear_forward(x: &JetBatch, w: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> JetBatch {
    let mut z = JetBatch {
        rows: x.rows,
        dirs: x.dirs,
        second: x.second,
        data: x.data.dot(&w.t()),
    };
    let mut v = z.value_mut();
    v += &b;
    z
}

/// Accumulates `dW`, `db` and returns `dx` when asked.
pub fn linear_backward(
    x: &JetBatch,
    w: ArrayView2<'_, f64>,
    dz: &JetBatch,
    mut dw: ArrayViewMut2<'_, f64>,
    mut db: ArrayViewMut1<'_, f64>,
    need_dx: bool,
) -> Option<JetBatch> {
    general_mat_mul(1.0, &dz.data.t(), &x.data, 1.0, &mut dw);
    db += &dz.value().sum_axis(Axis(0));
    need_dx.then(|| {
        JetBatch {
            rows: x.rows,
            dirs: x.dirs,
            second: x.second,
            data: dz.data.dot(&w),
        }
    })
}

/// Elementwise activation on every channel.
pub fn activation_forward(z: &JetBatch, act: Activation) -> JetBatch {
    let mut a = z.same_shape();
    let (rows, dirs, width) = (z.rows, z.dirs, z.width());
    let plane = rows * width;
    let zs = z.data.as_slice().expect("standard layout");
    let out = a.data.as_slice_mut().expect("standard layout");
    for i in 0..plane {
        let [f, f1, f2] = act.derivatives2(zs[i]);
        out[i] = f;
        for k in 0..dirs {
            let i1 = (1 + k) * plane + i;
            let z1 = zs[i1];
            out[i1] = f1 * z1;
            if z.second {
                let i2 = (1 + dirs + k) * plane + i;
                out[i2] = f2 * z1 * z1 + f1 * zs[i2];
            }
        }
    }
    a
}

/// Reverse sweep of [`activation_forward`]: adjoints of the pre-activation.
pub fn activation_backward(z: &JetBatch, act: Activation, da: &JetBatch) -> JetBatch {
    let mut dz = z.same_shape();
    let (rows, dirs, width) = (z.rows, z.dirs, z.width());
    let plane = rows * width;
    let zs = z.data.as_slice().expect("standard layout");
    let das = da.data.as_slice().expect("standard layout");
    let out = dz.data.as_slice_mut().expect("standard layout");
    for i in 0..plane {
        let [_, f1, f2, f3] = act.derivatives(zs[i]);
        let mut acc = das[i] * f1;
        for k in 0..dirs {
            let i1 = (1 + k) * plane + i;
            let z1 = zs[i1];
            let a1 = das[i1];
            acc += a1 * f2 * z1;
            let mut g1 = a1 * f1;
            if z.second {
                let i2 = (1 + dirs + k) * plane + i;
                let a2 = das[i2];
                acc += a2 * (f3 * z1 * z1 + f2 * zs[i2]);
                g1 += a2 * 2.0 * f2 * z1;
                out[i2] = a2 * f1;
            }
            out[i1] = g1;
        }
        out[i] = acc;
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Jet, Tape};
    use ndarray::Array1;

    fn filled(rows: usize, dirs: usize, second: bool, width: usize, seed: f64) -> JetBatch {
        let mut b = JetBatch::zeros(rows, dirs, second, width);
        for (i, v) in b.data.iter_mut().enumerate() {
            *v = ((i as f64 + seed) * 0.7315).sin();
        }
        b
    }

    #[test]
    fn activation_matches_scalar_jets() {
        let z = filled(3, 2, true, 4, 0.3);
        for act in [Activation::Softplus, Activation::Tanh, Activation::Sin] {
            let a = activation_forward(&z, act);
            for r in 0..3 {
                for j in 0..4 {
                    let jet = Jet {
                        value: z.value()[[r, j]],
                        d1: (0..2).map(|k| z.d1(k)[[r, j]]).collect(),
                        d2: (0..2).map(|k| z.d2(k)[[r, j]]).collect(),
                    }
                    .activate(act);
                    assert!((jet.value - a.value()[[r, j]]).abs() < 1e-15);
                    for k in 0..2 {
                        assert!((jet.d1[k] - a.d1(k)[[r, j]]).abs() < 1e-15);
                        assert!((jet.d2[k] - a.d2(k)[[r, j]]).abs() < 1e-15);
                    }
                }
            }
        }
    }

    /// The hand-written reverse kernels agree with a scalar tape running
    /// the same forward rules.
    #[test]
    fn backward_kernels_match_tape() {
        let (rows, dirs, inw, outw) = (2, 2, 3, 2);
        for second in [false, true] {
            let x = filled(rows, dirs, second, inw, 1.1);
            let w = Array2::from_shape_fn((outw, inw), |(i, j)| 0.3 * (i as f64) - 0.2 * (j as f64) + 0.1);
            let b = Array1::from_vec(vec![0.05, -0.1]);
            let act = Activation::Softplus;
            let z = linear_forward(&x, w.view(), b.view());
            let a = activation_forward(&z, act);
            // loss = sum of channel entries weighted by a fixed pattern
            let wt = filled(rows, dirs, second, outw, 7.0);
            let mut da = a.same_shape();
            da.data.assign(&wt.data);
            let dz = activation_backward(&z, act, &da);
            let mut dw = Array2::zeros((outw, inw));
            let mut db = Array1::zeros(outw);
            let dx = linear_backward(&x, w.view(), &dz, dw.view_mut(), db.view_mut(), true).unwrap();

            let tape = Tape::new();
            let wv: Vec<_> = w.iter().map(|&v| tape.var(v)).collect();
            let bv: Vec<_> = b.iter().map(|&v| tape.var(v)).collect();
            let xv: Vec<_> = x.data.iter().map(|&v| tape.var(v)).collect();
            let ch = x.channels();
            let idx = |c: usize, r: usize, j: usize, width: usize| (c * rows + r) * width + j;
            let mut loss = tape.var(0.0);
            for r in 0..rows {
                for o in 0..outw {
                    let lin = |c: usize| {
                        let mut acc = if c == 0 { bv[o] } else { tape.var(0.0) };
                        for i in 0..inw {
                            acc = acc + wv[o * inw + i] * xv[idx(c, r, i, inw)];
                        }
                        acc
                    };
                    let jet = Jet {
                        value: lin(0),
                        d1: (0..dirs).map(|k| lin(1 + k)).collect(),
                        d2: if second {
                            (0..dirs).map(|k| lin(1 + dirs + k)).collect()
                        } else {
                            vec![tape.var(0.0); dirs]
                        },
                    }
                    .activate(act);
                    let wts = wt.data.as_slice().unwrap();
                    loss = loss + jet.value * wts[idx(0, r, o, outw)];
                    for k in 0..dirs {
                        loss = loss + jet.d1[k] * wts[idx(1 + k, r, o, outw)];
                        if second {
                            loss = loss + jet.d2[k] * wts[idx(1 + dirs + k, r, o, outw)];
                        }
                    }
                }
            }
            let adj = tape.gradient(loss);
            for (i, v) in wv.iter().enumerate() {
                assert!((adj.wrt(*v) - dw.as_slice().unwrap()[i]).abs() < 1e-13);
            }
            for (i, v) in bv.iter().enumerate() {
                assert!((adj.wrt(*v) - db[i]).abs() < 1e-13);
            }
            for c in 0..ch {
                for r in 0..rows {
                    for i in 0..inw {
                        let k = idx(c, r, i, inw);
                        assert!((adj.wrt(xv[k]) - dx.data.as_slice().unwrap()[k]).abs() < 1e-13);
                    }
                }
            }
        }
    }
}

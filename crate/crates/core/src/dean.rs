//! Directional edge-enhanced attention: oriented edge responses gate the
//! feature map through channel and spatial attention.

use gwtrack_tensor::{CustomOp, Scalar, Tape, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::params::Params;

/// `E[c,y,x] = max_k |(F_c * g_k)[y,x]|` with replicate padding, so a
/// constant map has zero response. Records the winning orientation and its
/// sign for the backward pass.
struct EdgeMax {
    /// Per output element: orientation index and sign of the response.
    arg: Vec<(u16, bool)>,
}

fn clampi(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

fn edge_forward<T: Scalar>(x: &Tensor<T>, bank: &Tensor<T>) -> Result<(Tensor<T>, Vec<(u16, bool)>)> {
    let (c, h, w) = x.dims3("directional_edges")?;
    let bs = bank.shape();
    if bs.len() != 3 || bs[1] != 3 || bs[2] != 3 || bs[0] == 0 {
        return Err(CoreError::Shape(format!("edge bank must be [K,3,3], got {:?}", bs)));
    }
    let k = bs[0];
    let (xd, bd) = (x.data(), bank.data());
    let mut out = vec![T::zero(); c * h * w];
    let mut arg = vec![(0u16, true); c * h * w];
    let mut patch = [T::zero(); 9];
    for ch in 0..c {
        let plane = &xd[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                for a in 0..3 {
                    let sy = clampi(y as isize + a as isize - 1, h);
                    for b in 0..3 {
                        patch[a * 3 + b] = plane[sy * w + clampi(xx as isize + b as isize - 1, w)];
                    }
                }
                let mut best = T::zero();
                let mut best_arg = (0u16, true);
                for kk in 0..k {
                    let r: T = (0..9).map(|j| bd[kk * 9 + j] * patch[j]).sum();
                    if r.abs() > best || kk == 0 {
                        best = r.abs();
                        best_arg = (kk as u16, r >= T::zero());
                    }
                }
                let i = (ch * h + y) * w + xx;
                out[i] = best;
                arg[i] = best_arg;
            }
        }
    }
    Ok((Tensor::new([c, h, w], out)?, arg))
}

impl<T: Scalar> CustomOp<T> for EdgeMax {
    fn name(&self) -> &'static str {
        "edge_max"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _out: &Tensor<T>, g: &Tensor<T>, needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let (x, bank) = (inputs[0], inputs[1]);
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (xd, bd) = (x.data(), bank.data());
        let mut dx = vec![T::zero(); x.len()];
        let mut db = vec![T::zero(); bank.len()];
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let i = (ch * h + y) * w + xx;
                    let (kk, pos) = self.arg[i];
                    let gs = if pos { g.data()[i] } else { -g.data()[i] };
                    if gs == T::zero() {
                        continue;
                    }
                    for a in 0..3 {
                        let sy = clampi(y as isize + a as isize - 1, h);
                        for b in 0..3 {
                            let src = (ch * h + sy) * w + clampi(xx as isize + b as isize - 1, w);
                            let j = kk as usize * 9 + a * 3 + b;
                            dx[src] += gs * bd[j];
                            db[j] += gs * xd[src];
                        }
                    }
                }
            }
        }
        vec![
            needs[0].then(|| Tensor::new(x.shape().to_vec(), dx).expect("shape")),
            needs[1].then(|| Tensor::new(bank.shape().to_vec(), db).expect("shape")),
        ]
    }
}

/// Per-channel maximum absolute oriented edge response.
pub fn directional_edges<T: Scalar>(tape: &Tape<T>, f: Var, bank: Var) -> Result<Var> {
    let (out, arg) = edge_forward(&tape.value(f), &tape.value(bank))?;
    Ok(tape.custom(&[f, bank], out, EdgeMax { arg }))
}

/// `A_c = sigmoid(W_c [GAP(F) ; GAP(E)] + b_c)`, shape `[C]`.
pub fn channel_attention<T: Scalar>(tape: &Tape<T>, p: &Params, f: Var, e: Var) -> Result<Var> {
    if tape.shape(f) != tape.shape(e) {
        return Err(CoreError::Shape(format!("F {:?} vs E {:?}", tape.shape(f), tape.shape(e))));
    }
    let c = tape.shape(f)[0];
    let pooled = tape.concat(&[tape.global_avg_pool(f)?, tape.global_avg_pool(e)?])?;
    let row = tape.reshape(pooled, &[1, 2 * c])?;
    let z = tape.matmul(row, p.get("dean.wc")?, false, true)?;
    let z = tape.add_row_bias(z, p.get("dean.bc")?)?;
    let a = tape.sigmoid(z);
    Ok(tape.reshape(a, &[c])?)
}

/// `A_s = sigmoid(W_s * [F ; E] + b_s)`, shape `[1,H,W]`; `W_s` is any odd
/// square kernel applied with same padding.
pub fn spatial_attention<T: Scalar>(tape: &Tape<T>, p: &Params, f: Var, e: Var) -> Result<Var> {
    let (sf, se) = (tape.shape(f), tape.shape(e));
    if sf.len() != 3 || se.len() != 3 || sf[1..] != se[1..] {
        return Err(CoreError::Shape(format!("F {:?} vs E {:?}", sf, se)));
    }
    let ws = p.get("dean.ws")?;
    let k = tape.shape(ws)[2];
    let z = tape.conv2d(tape.concat(&[f, e])?, ws, 1, k / 2)?;
    let z = tape.add_channel_bias(z, p.get("dean.bs")?)?;
    Ok(tape.sigmoid(z))
}

/// `F_out = F * A_c (per channel) * A_s (per location)`.
pub fn dean_fuse<T: Scalar>(tape: &Tape<T>, f: Var, ac: Var, a_s: Var) -> Result<Var> {
    let y = tape.mul_channel(f, ac)?;
    Ok(tape.mul_spatial(y, a_s)?)
}

/// Full attention module on one feature map.
pub fn dean<T: Scalar>(tape: &Tape<T>, p: &Params, f: Var) -> Result<Var> {
    let e = directional_edges(tape, f, p.get("dean.bank")?)?;
    let ac = channel_attention(tape, p, f, e)?;
    let a_s = spatial_attention(tape, p, f, e)?;
    dean_fuse(tape, f, ac, a_s)
}

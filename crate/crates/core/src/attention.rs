//! Joint self-attention encoder over template and search tokens.

use gwtrack_tensor::{Scalar, Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};

use crate::config::ModelConfig;
use crate::error::{CoreError, Result};
use crate::params::Params;

/// Output of one encoder block; `weights[h]` is head `h`'s `[N, N]`
/// row-stochastic attention matrix.
pub struct BlockOutput {
    pub tokens: Var,
    pub weights: Vec<Var>,
}

/// Multi-head self-attention plus feed-forward, both residual:
/// `x1 = x + MHA(x)`, `out = x1 + FFN(x1)`.
///
/// `pos`, when given, is added to the query and key inputs only, so the
/// value path and residuals never see it.
pub fn self_attention_block<T: Scalar>(
    tape: &Tape<T>,
    p: &Params,
    prefix: &str,
    heads: usize,
    tokens: Var,
    pos: Option<Var>,
) -> Result<BlockOutput> {
    let shape = tape.shape(tokens);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(CoreError::Shape(format!("tokens must be [N>=1, d], got {:?}", shape)));
    }
    let qk_in = match pos {
        Some(pe) => tape.add(tokens, pe)?,
        None => tokens,
    };
    let mut attn: Option<Var> = None;
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let w = |m: &str| p.get(&format!("{}.h{}.{}", prefix, h, m));
        let q = tape.matmul(qk_in, w("wq")?, false, false)?;
        let k = tape.matmul(qk_in, w("wk")?, false, false)?;
        let v = tape.matmul(tokens, w("wv")?, false, false)?;
        let dh = tape.shape(q)[1];
        let logits = tape.matmul(q, k, false, true)?;
        let logits = tape.scale(logits, T::lit(1.0 / (dh as f64).sqrt()));
        let a = tape.softmax(logits, 1)?;
        let o = tape.matmul(a, v, false, false)?;
        let y = tape.matmul(o, w("wo")?, false, false)?;
        weights.push(a);
        attn = Some(match attn {
            None => y,
            Some(acc) => tape.add(acc, y)?,
        });
    }
    let attn = attn.ok_or_else(|| CoreError::Config("at least one head is required".into()))?;
    let attn = tape.add_row_bias(attn, p.get(&format!("{}.bo", prefix))?)?;
    let x1 = tape.add(tokens, attn)?;
    let f = tape.matmul(x1, p.get(&format!("{}.w1", prefix))?, false, false)?;
    let f = tape.add_row_bias(f, p.get(&format!("{}.b1", prefix))?)?;
    let f = tape.leaky_relu(f, T::lit(DEFAULT_LEAKY_SLOPE));
    let f = tape.matmul(f, p.get(&format!("{}.w2", prefix))?, false, false)?;
    let f = tape.add_row_bias(f, p.get(&format!("{}.b2", prefix))?)?;
    Ok(BlockOutput { tokens: tape.add(x1, f)?, weights })
}

/// Fixed 2-D sinusoidal encoding, `[h*w, d]`: the first half of the channels
/// encodes the row, the second half the column.
pub fn positional_encoding<T: Scalar>(h: usize, w: usize, d: usize) -> Tensor<T> {
    let half = d / 2;
    Tensor::from_fn([h * w, d], |i| {
        let (tok, ch) = (i / d, i % d);
        let (coord, j) = if ch < half { ((tok / w) as f64, ch) } else { ((tok % w) as f64, ch - half) };
        let n = half.max(1);
        let freq = 1.0 / 10000f64.powf((2 * (j / 2)) as f64 / n as f64);
        T::lit(if j % 2 == 0 { (coord * freq).sin() } else { (coord * freq).cos() })
    })
}

fn to_tokens<T: Scalar>(tape: &Tape<T>, f: Var) -> Result<Var> {
    let s = tape.shape(f);
    let m = tape.reshape(f, &[s[0], s[1] * s[2]])?;
    Ok(tape.transpose(m)?)
}

fn from_tokens<T: Scalar>(tape: &Tape<T>, t: Var, shape: &[usize]) -> Result<Var> {
    let m = tape.transpose(t)?;
    Ok(tape.reshape(m, shape)?)
}

/// Encodes template and search maps jointly: both are flattened into one
/// token sequence, so every token attends across both maps.
pub fn encode_fused<T: Scalar>(tape: &Tape<T>, p: &Params, cfg: &ModelConfig, fz: Var, fx: Var) -> Result<(Var, Var)> {
    let (sz, sx) = (tape.shape(fz), tape.shape(fx));
    if sz.len() != 3 || sx.len() != 3 || sz[0] != sx[0] {
        return Err(CoreError::Shape(format!("template {:?} and search {:?} must be [C,H,W] with equal C", sz, sx)));
    }
    let d = sz[0];
    let nz = sz[1] * sz[2];
    let tokens = tape.concat(&[to_tokens(tape, fz)?, to_tokens(tape, fx)?])?;
    let pe = tape.concat(&[
        tape.constant(positional_encoding::<T>(sz[1], sz[2], d)),
        tape.constant(positional_encoding::<T>(sx[1], sx[2], d)),
    ])?;
    let mut t = tokens;
    for blk in 0..cfg.enc_blocks {
        t = self_attention_block(tape, p, &format!("enc.b{}", blk), cfg.heads, t, Some(pe))?.tokens;
    }
    let n = tape.shape(t)[0];
    let z = from_tokens(tape, tape.slice(t, 0, nz)?, &sz)?;
    let x = from_tokens(tape, tape.slice(t, nz, n)?, &sx)?;
    Ok((z, x))
}

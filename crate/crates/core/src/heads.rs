//! Anchor-free prediction heads and box decoding.

use gwtrack_data::BBox;
use gwtrack_tensor::{sigmoid_scalar, Scalar, Tape, Tensor, Var};

use crate::backbone::conv_gn_act;
use crate::error::{CoreError, Result};
use crate::params::Params;

/// Head outputs on the tape: `cls` and `ctr` are `[1,H,W]` logits, `reg`
/// is `[4,H,W]` (left, top, right, bottom) distances in feature cells.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub cls: Var,
    pub ctr: Var,
    pub reg: Var,
}

/// Plain head values for decoding.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub cls: Tensor<f64>,
    pub ctr: Tensor<f64>,
    pub reg: Tensor<f64>,
}

impl HeadOutputs {
    pub fn from_tape<T: Scalar>(tape: &Tape<T>, h: &HeadVars) -> Result<Self> {
        let get = |v: Var| -> Tensor<f64> { tape.value(v).cast() };
        let (cls, ctr, reg) = (get(h.cls), get(h.ctr), get(h.reg));
        let (_, hh, ww) = cls.dims3("heads")?;
        Ok(HeadOutputs { cls: cls.reshape([hh, ww])?, ctr: ctr.reshape([hh, ww])?, reg })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.cls.shape()[0], self.cls.shape()[1])
    }

    /// `sigmoid(cls) * sigmoid(ctr)` per cell.
    pub fn scores(&self) -> Tensor<f64> {
        Tensor::from_fn(self.cls.shape().to_vec(), |i| sigmoid_scalar(self.cls.data()[i]) * sigmoid_scalar(self.ctr.data()[i]))
    }
}

/// Mixes correlation responses with search features: 1x1 conv over
/// `[R ; F_x]`, group norm, leaky ReLU.
pub fn refine<T: Scalar>(tape: &Tape<T>, p: &Params, response: Var, search: Var) -> Result<Var> {
    let x = tape.concat(&[response, search])?;
    conv_gn_act(tape, p, "head.fuse", x, 1, 0)
}

pub fn predict_heads<T: Scalar>(tape: &Tape<T>, p: &Params, feat: Var) -> Result<HeadVars> {
    let t = conv_gn_act(tape, p, "head.tower", feat, 1, 1)?;
    let out = tape.conv2d(t, p.get("head.out.w")?, 1, 1)?;
    let out = tape.add_channel_bias(out, p.get("head.out.b")?)?;
    Ok(HeadVars { cls: tape.slice(out, 0, 1)?, ctr: tape.slice(out, 1, 2)?, reg: tape.slice(out, 2, 6)? })
}

/// Cell maximizing `score * penalty`; ties go to the smallest row, then
/// column.
pub fn select_cell(out: &HeadOutputs, penalty: Option<&Tensor<f64>>) -> Result<(usize, usize)> {
    let (h, w) = out.dims();
    if let Some(pen) = penalty {
        if pen.shape() != [h, w] {
            return Err(CoreError::Shape(format!("penalty {:?} vs heads {:?}", pen.shape(), [h, w])));
        }
    }
    let s = out.scores();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..h * w {
        let v = s.data()[i] * penalty.map_or(1.0, |p| p.data()[i]);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok((best.0 / w, best.0 % w))
}

/// Box predicted at cell `(row, col)`, in the coordinates of `origin`
/// (the patch's top-left), plus the confidence `sigmoid(cls)`.
pub fn decode_at(out: &HeadOutputs, row: usize, col: usize, stride: f64, origin: (f64, f64)) -> Result<(BBox, f64)> {
    let (h, w) = out.dims();
    let r = |k: usize| out.reg.data()[(k * h + row) * w + col];
    let px = origin.0 + col as f64 * stride + stride / 2.0;
    let py = origin.1 + row as f64 * stride + stride / 2.0;
    let (l, t, rr, b) = (r(0), r(1), r(2), r(3));
    let bbox = BBox::from_corners(px - l * stride, py - t * stride, px + rr * stride, py + b * stride)
        .map_err(|e| CoreError::Input(e.to_string()))?;
    Ok((bbox, sigmoid_scalar(out.cls.data()[row * w + col])))
}

/// Selects the best cell (optionally penalized) and decodes its box.
pub fn decode_box(out: &HeadOutputs, stride: f64, origin: (f64, f64), penalty: Option<&Tensor<f64>>) -> Result<(BBox, f64)> {
    if !(stride > 0.0) {
        return Err(CoreError::Input("stride must be positive".into()));
    }
    let (row, col) = select_cell(out, penalty)?;
    decode_at(out, row, col, stride, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::init_params;
    use crate::config::ModelConfig;

    fn hot(h: usize, w: usize, at: (usize, usize), ltrb: [f64; 4]) -> HeadOutputs {
        let cls = Tensor::from_fn([h, w], |i| if i == at.0 * w + at.1 { 8.0 } else { -8.0 });
        let ctr = Tensor::full([h, w], 0.0);
        let reg = Tensor::from_fn([4, h, w], |i| ltrb[i / (h * w)]);
        HeadOutputs { cls, ctr, reg }
    }

    #[test]
    fn decode_hot_cell() {
        let out = hot(8, 8, (4, 4), [2.0; 4]);
        let (b, conf) = decode_box(&out, 8.0, (0.0, 0.0), None).unwrap();
        assert_eq!((b.cx, b.cy, b.w, b.h), (36.0, 36.0, 32.0, 32.0));
        assert!((0.0..=1.0).contains(&conf));
        assert!(conf > 0.99);
    }

    #[test]
    fn uniform_scores_pick_top_left() {
        let out = HeadOutputs { cls: Tensor::zeros([5, 5]), ctr: Tensor::zeros([5, 5]), reg: Tensor::full([4, 5, 5], 1.0) };
        assert_eq!(select_cell(&out, None).unwrap(), (0, 0));
        let (b, _) = decode_box(&out, 4.0, (10.0, 20.0), None).unwrap();
        assert_eq!((b.cx, b.cy), (12.0, 22.0));
    }

    #[test]
    fn degenerate_box_is_an_error() {
        let out = hot(4, 4, (1, 1), [-1.0, 1.0, 0.5, 1.0]);
        assert!(decode_box(&out, 8.0, (0.0, 0.0), None).is_err());
    }

    #[test]
    fn zero_weights_give_bias() {
        let cfg = ModelConfig::default();
        let mut store = init_params(&cfg, 1).unwrap();
        store.get_mut("head.out.w").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        store.insert("head.out.b", Tensor::new([6], vec![0.5, -0.25, 1.0, 2.0, 3.0, 4.0]).unwrap());
        let tape = Tape::<f64>::inference();
        let p = Params::bind(&tape, &store, false);
        let feat = tape.constant(Tensor::from_fn([64, 6, 7], |i| (i as f64 * 0.37).sin()));
        let hv = predict_heads(&tape, &p, feat).unwrap();
        let out = HeadOutputs::from_tape(&tape, &hv).unwrap();
        assert_eq!(out.dims(), (6, 7));
        assert!(out.cls.data().iter().all(|&v| v == 0.5));
        assert!(out.ctr.data().iter().all(|&v| v == -0.25));
        for k in 0..4 {
            assert!(out.reg.data()[k * 42..(k + 1) * 42].iter().all(|&v| v == (k + 1) as f64));
        }
    }
}

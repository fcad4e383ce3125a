//! Label assignment and the multi-task loss: GIoU localization, binary
//! cross-entropy on classification and centerness, Smooth L1 regression.

use gwtrack_data::{BBox, DegenerateBox};
use gwtrack_tensor::{CustomOp, Scalar, Tape, Tensor, Var};

use crate::error::{CoreError, Result};
use crate::heads::HeadVars;

/// Probability clamp for BCE.
pub const PROB_CLAMP: f64 = 1e-7;

/// Logit equivalent of clamping probabilities to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn logit_clamp() -> f64 {
    ((1.0 - PROB_CLAMP) / PROB_CLAMP).ln()
}

/// `IoU - (hull - union) / hull`, in `(-1, 1]`.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64, DegenerateBox> {
    a.validate()?;
    b.validate()?;
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    let hull = (ax2.max(bx2) - ax1.min(bx1)) * (ay2.max(by2) - ay1.min(by1));
    Ok(inter / union - (hull - union) / hull)
}

/// `-[r ln p + (1-r) ln(1-p)]` with `p` clamped to `[1e-7, 1-1e-7]`.
pub fn bce(r: f64, r_hat: f64) -> f64 {
    let p = r_hat.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(r * p.ln() + (1.0 - r) * (1.0 - p).ln())
}

fn sl1(d: f64) -> f64 {
    if d.abs() < 1.0 {
        0.5 * d * d
    } else {
        d.abs() - 0.5
    }
}

/// Smooth L1 summed over `(cx, cy, w, h)`.
pub fn smooth_l1(pred: &BBox, gt: &BBox) -> f64 {
    sl1(pred.cx - gt.cx) + sl1(pred.cy - gt.cy) + sl1(pred.w - gt.w) + sl1(pred.h - gt.h)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub loc: f64,
    pub cls: f64,
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { loc: 1.0, cls: 1.0, reg: 1.0 }
    }
}

impl LossWeights {
    pub fn new(loc: f64, cls: f64, reg: f64) -> Result<Self> {
        let w = LossWeights { loc, cls, reg };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.loc, self.cls, self.reg];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || all.iter().all(|&v| v == 0.0) {
            return Err(CoreError::Config(format!("loss weights must be >= 0 with one > 0, got {:?}", all)));
        }
        Ok(())
    }
}

/// Per-cell training targets on an `h x w` feature grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Labels {
    pub h: usize,
    pub w: usize,
    /// Flat indices of positive cells.
    pub pos: Vec<usize>,
    pub cls: Vec<f64>,
    pub ctr: Vec<f64>,
    /// Ground-truth corners in cell units.
    pub gt: [f64; 4],
}

impl Labels {
    /// Cell centre in cell units.
    pub fn anchor(&self, i: usize) -> (f64, f64) {
        ((i % self.w) as f64 + 0.5, (i / self.w) as f64 + 0.5)
    }

    /// `(l, t, r, b)` targets of cell `i`, in cells.
    pub fn ltrb(&self, i: usize) -> [f64; 4] {
        let (px, py) = self.anchor(i);
        [px - self.gt[0], py - self.gt[1], self.gt[2] - px, self.gt[3] - py]
    }
}

/// Cells whose centres fall strictly inside `gt` (patch pixels) are
/// positive; their centerness target is
/// `sqrt(min(l,r)/max(l,r) * min(t,b)/max(t,b))`. Negatives get 0 for both.
pub fn assign_labels(h: usize, w: usize, stride: f64, gt: &BBox) -> Labels {
    let c = gt.corners();
    let mut labels = Labels {
        h,
        w,
        pos: Vec::new(),
        cls: vec![0.0; h * w],
        ctr: vec![0.0; h * w],
        gt: [c[0] / stride, c[1] / stride, c[2] / stride, c[3] / stride],
    };
    for i in 0..h * w {
        let [l, t, r, b] = labels.ltrb(i);
        if l > 0.0 && t > 0.0 && r > 0.0 && b > 0.0 {
            labels.pos.push(i);
            labels.cls[i] = 1.0;
            labels.ctr[i] = ((l.min(r) / l.max(r)) * (t.min(b) / t.max(b))).sqrt();
        }
    }
    labels
}

fn entropy(t: f64) -> f64 {
    let t = t.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(t * t.ln() + (1.0 - t) * (1.0 - t).ln())
}

/// Mean over cells of `BCE(target, sigmoid(z)) - H(target)`, evaluated on
/// clamped logits. Subtracting the target entropy makes a perfect
/// prediction score zero for soft targets too; for hard targets it is a
/// no-op up to the clamp.
struct BceLogits<T> {
    targets: Vec<T>,
}

fn bce_logit(z: f64, t: f64) -> f64 {
    let z = z.clamp(-logit_clamp(), logit_clamp());
    z.max(0.0) - t * z + (-z.abs()).exp().ln_1p()
}

fn bce_logits<T: Scalar>(tape: &Tape<T>, logits: Var, targets: &[f64]) -> Result<Var> {
    let v = {
        let z = tape.value(logits);
        if z.len() != targets.len() {
            return Err(CoreError::Shape(format!("{} logits vs {} targets", z.len(), targets.len())));
        }
        let s: f64 = z.data().iter().zip(targets).map(|(&z, &t)| bce_logit(z.as_f64(), t) - entropy(t)).sum();
        s / targets.len() as f64
    };
    let op = BceLogits { targets: targets.iter().map(|&t| T::lit(t)).collect() };
    Ok(tape.custom(&[logits], Tensor::scalar(T::lit(v)), op))
}

impl<T: Scalar> CustomOp<T> for BceLogits<T> {
    fn name(&self) -> &'static str {
        "bce_logits"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let z = inputs[0];
        let n = T::lit(z.len() as f64);
        let lim = T::lit(logit_clamp());
        let scale = g.item() / n;
        let d = Tensor::from_fn(z.shape().to_vec(), |i| {
            let zi = z.data()[i];
            if zi.abs() > lim {
                T::zero()
            } else {
                (gwtrack_tensor::sigmoid_scalar(zi) - self.targets[i]) * scale
            }
        });
        vec![Some(d)]
    }
}

/// Predicted corners `(x1, y1, x2, y2)` from an anchor and `(l, t, r, b)`.
fn corners(anchor: (f64, f64), ltrb: [f64; 4]) -> [f64; 4] {
    [anchor.0 - ltrb[0], anchor.1 - ltrb[1], anchor.0 + ltrb[2], anchor.1 + ltrb[3]]
}

/// GIoU loss `2 - I/U - U/C` of one prediction against `g`, and its
/// gradient with respect to `(l, t, r, b)`. Negative predicted extents are
/// treated as zero area.
fn giou_loss_grad(anchor: (f64, f64), ltrb: [f64; 4], g: [f64; 4]) -> (f64, [f64; 4]) {
    let p = corners(anchor, ltrb);
    let (wp, hp) = ((ltrb[0] + ltrb[2]).max(0.0), (ltrb[1] + ltrb[3]).max(0.0));
    let ap = wp * hp;
    let ag = (g[2] - g[0]) * (g[3] - g[1]);
    let iw = p[2].min(g[2]) - p[0].max(g[0]);
    let ih = p[3].min(g[3]) - p[1].max(g[1]);
    let (iwc, ihc) = (iw.max(0.0), ih.max(0.0));
    let inter = iwc * ihc;
    let union = ap + ag - inter;
    let cw = p[2].max(g[2]) - p[0].min(g[0]);
    let ch = p[3].max(g[3]) - p[1].min(g[1]);
    let hull = cw * ch;
    let loss = 2.0 - inter / union - union / hull;

    // d/d(l,t,r,b) of each quantity
    let d_ap = [
        if ltrb[0] + ltrb[2] > 0.0 { hp } else { 0.0 },
        if ltrb[1] + ltrb[3] > 0.0 { wp } else { 0.0 },
        if ltrb[0] + ltrb[2] > 0.0 { hp } else { 0.0 },
        if ltrb[1] + ltrb[3] > 0.0 { wp } else { 0.0 },
    ];
    let mut d_inter = [0.0; 4];
    if iw > 0.0 && ih > 0.0 {
        d_inter[0] = if p[0] > g[0] { ihc } else { 0.0 };
        d_inter[1] = if p[1] > g[1] { iwc } else { 0.0 };
        d_inter[2] = if p[2] < g[2] { ihc } else { 0.0 };
        d_inter[3] = if p[3] < g[3] { iwc } else { 0.0 };
    }
    let d_hull = [
        if p[0] < g[0] { ch } else { 0.0 },
        if p[1] < g[1] { cw } else { 0.0 },
        if p[2] > g[2] { ch } else { 0.0 },
        if p[3] > g[3] { cw } else { 0.0 },
    ];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let du = d_ap[k] - d_inter[k];
        grad[k] = -(d_inter[k] * union - inter * du) / (union * union) - (du * hull - union * d_hull[k]) / (hull * hull);
    }
    (loss, grad)
}

/// `(cx, cy, w, h)` of a prediction and the Jacobian rows with respect to
/// `(l, t, r, b)`.
fn cxcywh(anchor: (f64, f64), ltrb: [f64; 4]) -> [f64; 4] {
    [
        anchor.0 + (ltrb[2] - ltrb[0]) / 2.0,
        anchor.1 + (ltrb[3] - ltrb[1]) / 2.0,
        ltrb[0] + ltrb[2],
        ltrb[1] + ltrb[3],
    ]
}

const CXCYWH_JAC: [[f64; 4]; 4] = [[-0.5, 0.0, 0.5, 0.0], [0.0, -0.5, 0.0, 0.5], [1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, 1.0]];

fn sl1_loss_grad(anchor: (f64, f64), ltrb: [f64; 4], g: [f64; 4]) -> (f64, [f64; 4]) {
    let p = cxcywh(anchor, ltrb);
    let gt = [(g[0] + g[2]) / 2.0, (g[1] + g[3]) / 2.0, g[2] - g[0], g[3] - g[1]];
    let mut loss = 0.0;
    let mut grad = [0.0; 4];
    for q in 0..4 {
        let d = p[q] - gt[q];
        loss += sl1(d);
        let dd = if d.abs() < 1.0 { d } else { d.signum() };
        for k in 0..4 {
            grad[k] += dd * CXCYWH_JAC[q][k];
        }
    }
    (loss, grad)
}

#[derive(Clone, Copy)]
enum BoxLossKind {
    Giou,
    SmoothL1,
}

/// Mean box loss over positive cells, read directly from the `[4,H,W]`
/// regression map.
struct BoxLoss {
    kind: BoxLossKind,
    labels: Labels,
}

impl BoxLoss {
    fn eval(&self, reg: &[f64]) -> (f64, Vec<[f64; 4]>) {
        let hw = self.labels.h * self.labels.w;
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(self.labels.pos.len());
        for &i in &self.labels.pos {
            let ltrb = [reg[i], reg[hw + i], reg[2 * hw + i], reg[3 * hw + i]];
            let a = self.labels.anchor(i);
            let (l, g) = match self.kind {
                BoxLossKind::Giou => giou_loss_grad(a, ltrb, self.labels.gt),
                BoxLossKind::SmoothL1 => sl1_loss_grad(a, ltrb, self.labels.gt),
            };
            total += l;
            grads.push(g);
        }
        let n = self.labels.pos.len().max(1) as f64;
        (total / n, grads)
    }
}

impl<T: Scalar> CustomOp<T> for BoxLoss {
    fn name(&self) -> &'static str {
        match self.kind {
            BoxLossKind::Giou => "giou_loss",
            BoxLossKind::SmoothL1 => "smooth_l1_loss",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _o: &Tensor<T>, g: &Tensor<T>, _needs: &[bool]) -> Vec<Option<Tensor<T>>> {
        let reg: Vec<f64> = inputs[0].data().iter().map(|v| v.as_f64()).collect();
        let (_, grads) = self.eval(&reg);
        let hw = self.labels.h * self.labels.w;
        let scale = g.item().as_f64() / self.labels.pos.len().max(1) as f64;
        let mut d = vec![T::zero(); reg.len()];
        for (&i, gr) in self.labels.pos.iter().zip(&grads) {
            for k in 0..4 {
                d[k * hw + i] += T::lit(gr[k] * scale);
            }
        }
        vec![Some(Tensor::new(inputs[0].shape().to_vec(), d).expect("shape"))]
    }
}

fn box_loss<T: Scalar>(tape: &Tape<T>, reg: Var, labels: &Labels, kind: BoxLossKind) -> Result<Var> {
    let shape = tape.shape(reg);
    if shape != [4, labels.h, labels.w] {
        return Err(CoreError::Shape(format!("regression map {:?} vs grid {}x{}", shape, labels.h, labels.w)));
    }
    let op = BoxLoss { kind, labels: labels.clone() };
    let regv: Vec<f64> = tape.value(reg).data().iter().map(|v| v.as_f64()).collect();
    let (v, _) = op.eval(&regv);
    Ok(tape.custom(&[reg], Tensor::scalar(T::lit(v)), op))
}

/// Mean GIoU loss over positive cells.
pub fn giou_loss<T: Scalar>(tape: &Tape<T>, reg: Var, labels: &Labels) -> Result<Var> {
    box_loss(tape, reg, labels, BoxLossKind::Giou)
}

/// Mean Smooth L1 over positive cells, on `(cx, cy, w, h)` in cells.
pub fn smooth_l1_loss<T: Scalar>(tape: &Tape<T>, reg: Var, labels: &Labels) -> Result<Var> {
    box_loss(tape, reg, labels, BoxLossKind::SmoothL1)
}

/// Classification term: mean BCE of `cls` plus mean BCE of `ctr`.
pub fn cls_loss<T: Scalar>(tape: &Tape<T>, heads: &HeadVars, labels: &Labels) -> Result<Var> {
    let a = bce_logits(tape, heads.cls, &labels.cls)?;
    let b = bce_logits(tape, heads.ctr, &labels.ctr)?;
    Ok(tape.add(a, b)?)
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub loc: Var,
    pub cls: Var,
    pub reg: Var,
}

/// `λ_loc * L_loc + λ_cls * L_cls + λ_reg * L_reg`. Without positive cells
/// the localization and regression terms are zero.
pub fn total_loss<T: Scalar>(tape: &Tape<T>, heads: &HeadVars, labels: &Labels, weights: &LossWeights) -> Result<LossVars> {
    weights.validate()?;
    let cls = cls_loss(tape, heads, labels)?;
    let (loc, reg) = if labels.pos.is_empty() {
        let z = tape.constant(Tensor::scalar(T::zero()));
        (z, z)
    } else {
        (giou_loss(tape, heads.reg, labels)?, smooth_l1_loss(tape, heads.reg, labels)?)
    };
    let a = tape.scale(loc, T::lit(weights.loc));
    let b = tape.scale(cls, T::lit(weights.cls));
    let c = tape.scale(reg, T::lit(weights.reg));
    let total = tape.add(tape.add(a, b)?, c)?;
    Ok(LossVars { total, loc, cls, reg })
}

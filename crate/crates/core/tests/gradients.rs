//! Finite-difference checks of every differentiable model component.

use gwtrack_core::attention::{encode_fused, self_attention_block};
use gwtrack_core::backbone::{adjust_and_fuse, extract_features};
use gwtrack_core::correlator::xcorr_channels;
use gwtrack_core::dean::{channel_attention, dean, directional_edges, spatial_attention};
use gwtrack_core::heads::{predict_heads, refine};
use gwtrack_core::loss::{assign_labels, cls_loss, giou_loss, smooth_l1_loss, total_loss};
use gwtrack_core::{BackboneConfig, LossWeights, ModelConfig, Params};
use gwtrack_data::BBox;
use gwtrack_tensor::gradcheck::{check_gradients, project, GradCheckConfig};
use gwtrack_tensor::{Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn assert_ok(name: &str, seed: u64, err: f64) {
    assert!(err < TOL, "{} seed {}: relative error {:e}", name, seed, err);
}

/// Runs `f` with named parameter tensors bound as gradcheck inputs.
fn check_named<F>(name: &str, seed: u64, named: Vec<(String, Tensor<f64>)>, f: F)
where
    F: Fn(&gwtrack_tensor::Tape<f64>, &Params, &[Var]) -> gwtrack_core::Result<Var>,
{
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let inputs: Vec<Tensor<f64>> = named.into_iter().map(|(_, t)| t).collect();
    let rep = check_gradients(&inputs, GradCheckConfig::default(), |tape, vars| {
        let p = Params::from_pairs(names.iter().map(|s| s.as_str()).zip(vars.iter().copied()));
        f(tape, &p, vars).map_err(|e| gwtrack_tensor::TensorError::Invalid { op: "test", detail: e.to_string() })
    })
    .unwrap();
    assert_ok(name, seed, rep.max_rel_error);
}

fn n(s: &str, t: Tensor<f64>) -> (String, Tensor<f64>) {
    (s.to_string(), t)
}

#[test]
fn edge_max_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_t(&[2, 5, 5], &mut rng, -1.0, 1.0);
        let bank = rand_t(&[3, 3, 3], &mut rng, -1.0, 1.0);
        check_named("edge_max", seed, vec![n("x", x), n("dean.bank", bank)], |tape, p, _| {
            let e = directional_edges(tape, p.get("x")?, p.get("dean.bank")?)?;
            Ok(project(tape, e, seed)?)
        });
    }
}

#[test]
fn xcorr_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let z = rand_t(&[2, 3, 3], &mut rng, -1.0, 1.0);
        let x = rand_t(&[2, 6, 5], &mut rng, -1.0, 1.0);
        check_named("xcorr", seed, vec![n("z", z), n("x", x)], |tape, p, _| {
            let r = xcorr_channels(tape, p.get("z")?, p.get("x")?, 0.1)?;
            let r = tape.roll(r, 1, 1)?;
            Ok(project(tape, r, seed)?)
        });
    }
}

fn dean_params(c: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor<f64>)> {
    vec![
        n("dean.bank", rand_t(&[4, 3, 3], rng, -1.0, 1.0)),
        n("dean.wc", rand_t(&[c, 2 * c], rng, -0.8, 0.8)),
        n("dean.bc", rand_t(&[c], rng, -0.5, 0.5)),
        n("dean.ws", rand_t(&[1, 2 * c, 3, 3], rng, -0.5, 0.5)),
        n("dean.bs", rand_t(&[1], rng, -0.5, 0.5)),
    ]
}

#[test]
fn dean_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let mut named = vec![n("f", rand_t(&[3, 4, 4], &mut rng, -1.0, 1.0))];
        named.extend(dean_params(3, &mut rng));
        check_named("dean", seed, named, |tape, p, _| {
            let out = dean(tape, p, p.get("f")?)?;
            Ok(project(tape, out, seed)?)
        });
    }
}

#[test]
fn attention_gate_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let mut named = vec![n("f", rand_t(&[2, 3, 4], &mut rng, -1.0, 1.0)), n("e", rand_t(&[2, 3, 4], &mut rng, 0.0, 1.0))];
        named.extend(dean_params(2, &mut rng));
        check_named("channel_attention", seed, named.clone(), |tape, p, _| {
            let a = channel_attention(tape, p, p.get("f")?, p.get("e")?)?;
            Ok(project(tape, a, seed)?)
        });
        check_named("spatial_attention", seed, named, |tape, p, _| {
            let a = spatial_attention(tape, p, p.get("f")?, p.get("e")?)?;
            Ok(project(tape, a, seed)?)
        });
    }
}

fn encoder_params(d: usize, heads: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor<f64>)> {
    let dh = d / heads;
    let mut v = Vec::new();
    for h in 0..heads {
        for m in ["wq", "wk", "wv"] {
            v.push(n(&format!("enc.b0.h{}.{}", h, m), rand_t(&[d, dh], rng, -0.6, 0.6)));
        }
        v.push(n(&format!("enc.b0.h{}.wo", h), rand_t(&[dh, d], rng, -0.6, 0.6)));
    }
    v.push(n("enc.b0.bo", rand_t(&[d], rng, -0.3, 0.3)));
    v.push(n("enc.b0.w1", rand_t(&[d, ffn], rng, -0.6, 0.6)));
    v.push(n("enc.b0.b1", rand_t(&[ffn], rng, -0.3, 0.3)));
    v.push(n("enc.b0.w2", rand_t(&[ffn, d], rng, -0.6, 0.6)));
    v.push(n("enc.b0.b2", rand_t(&[d], rng, -0.3, 0.3)));
    v
}

#[test]
fn attention_block_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let mut named = vec![n("tok", rand_t(&[4, 4], &mut rng, -1.0, 1.0))];
        named.extend(encoder_params(4, 2, 5, &mut rng));
        check_named("self_attention_block", seed, named, |tape, p, _| {
            let out = self_attention_block(tape, p, "enc.b0", 2, p.get("tok")?, None)?;
            Ok(project(tape, out.tokens, seed)?)
        });
    }
}

#[test]
fn encoder_gradients() {
    let cfg = ModelConfig {
        backbone: BackboneConfig { c: 4, ..BackboneConfig::default() },
        heads: 2,
        ffn_dim: 4,
        ..ModelConfig::default()
    };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let mut named = vec![n("z", rand_t(&[4, 2, 2], &mut rng, -1.0, 1.0)), n("x", rand_t(&[4, 2, 3], &mut rng, -1.0, 1.0))];
        named.extend(encoder_params(4, 2, 4, &mut rng));
        check_named("encode_fused", seed, named, |tape, p, _| {
            let (z, x) = encode_fused(tape, p, &cfg, p.get("z")?, p.get("x")?)?;
            let a = project(tape, z, seed)?;
            let b = project(tape, x, seed + 1)?;
            Ok(tape.add(a, b)?)
        });
    }
}

fn head_params(c: usize, rng: &mut ChaCha8Rng) -> Vec<(String, Tensor<f64>)> {
    vec![
        n("head.fuse.w", rand_t(&[c, 2 * c, 1, 1], rng, -0.7, 0.7)),
        n("head.fuse.gn_g", rand_t(&[c], rng, 0.5, 1.5)),
        n("head.fuse.gn_b", rand_t(&[c], rng, -0.3, 0.3)),
        n("head.tower.w", rand_t(&[c, c, 3, 3], rng, -0.5, 0.5)),
        n("head.tower.gn_g", rand_t(&[c], rng, 0.5, 1.5)),
        n("head.tower.gn_b", rand_t(&[c], rng, -0.3, 0.3)),
        n("head.out.w", rand_t(&[6, c, 3, 3], rng, -0.3, 0.3)),
        n("head.out.b", Tensor::from_fn([6], |i| if i < 2 { rng.random_range(-0.5..0.5) } else { rng.random_range(1.0..2.0) })),
    ]
}

#[test]
fn head_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(600 + seed);
        let mut named = vec![n("r", rand_t(&[2, 4, 4], &mut rng, -1.0, 1.0)), n("f", rand_t(&[2, 4, 4], &mut rng, -1.0, 1.0))];
        named.extend(head_params(2, &mut rng));
        check_named("heads", seed, named, |tape, p, _| {
            let feat = refine(tape, p, p.get("r")?, p.get("f")?)?;
            let h = predict_heads(tape, p, feat)?;
            let a = project(tape, h.cls, seed)?;
            let b = project(tape, h.ctr, seed + 1)?;
            let c = project(tape, h.reg, seed + 2)?;
            Ok(tape.add(tape.add(a, b)?, c)?)
        });
    }
}

fn random_gt(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(rng.random_range(20.0..44.0), rng.random_range(20.0..44.0), rng.random_range(14.0..30.0), rng.random_range(14.0..30.0))
        .unwrap()
}

#[test]
fn loss_term_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let labels = assign_labels(8, 8, 8.0, &random_gt(&mut rng));
        assert!(!labels.pos.is_empty());
        let reg = rand_t(&[4, 8, 8], &mut rng, 0.2, 3.0);
        let l2 = labels.clone();
        check_named("giou_loss", seed, vec![n("reg", reg.clone())], move |tape, p, _| giou_loss(tape, p.get("reg")?, &l2));
        let l3 = labels.clone();
        check_named("smooth_l1_loss", seed, vec![n("reg", reg)], move |tape, p, _| smooth_l1_loss(tape, p.get("reg")?, &l3));
        let cls = rand_t(&[1, 8, 8], &mut rng, -4.0, 4.0);
        let ctr = rand_t(&[1, 8, 8], &mut rng, -4.0, 4.0);
        check_named("bce", seed, vec![n("cls", cls), n("ctr", ctr)], move |tape, p, _| {
            let h = gwtrack_core::HeadVars { cls: p.get("cls")?, ctr: p.get("ctr")?, reg: p.get("cls")? };
            cls_loss(tape, &h, &labels)
        });
    }
}

#[test]
fn giou_gradient_on_disjoint_and_inverted_boxes() {
    // predictions far from the box and with negative extents
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + seed);
        let labels = assign_labels(6, 6, 8.0, &random_gt(&mut rng));
        let reg = rand_t(&[4, 6, 6], &mut rng, -1.5, 4.0);
        check_named("giou_loss_wide", seed, vec![n("reg", reg)], move |tape, p, _| giou_loss(tape, p.get("reg")?, &labels));
    }
}

#[test]
fn total_loss_gradients() {
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
        let labels = assign_labels(6, 6, 8.0, &random_gt(&mut rng));
        let w = LossWeights::new(rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)).unwrap();
        let mut named = vec![n("feat", rand_t(&[2, 6, 6], &mut rng, -1.0, 1.0))];
        named.extend(head_params(2, &mut rng).into_iter().skip(3));
        check_named("total_loss", seed, named, move |tape, p, _| {
            let h = predict_heads(tape, p, p.get("feat")?)?;
            Ok(total_loss(tape, &h, &labels, &w)?.total)
        });
    }
}

#[test]
fn backbone_gradients() {
    let cfg = BackboneConfig { channels: [2, 2, 3, 3], strides: [2, 2, 1, 1], c: 2, template_size: 8, search_size: 12 };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut named = vec![n("img", rand_t(&[1, 8, 8], &mut rng, -1.0, 1.0))];
        let mut ci = 1;
        for s in 0..4 {
            let co = cfg.channels[s];
            for j in 0..2 {
                let k = if j == 0 { ci } else { co };
                named.push(n(&format!("backbone.s{}.c{}.w", s, j), rand_t(&[co, k, 3, 3], &mut rng, -0.6, 0.6)));
                named.push(n(&format!("backbone.s{}.c{}.gn_g", s, j), rand_t(&[co], &mut rng, 0.5, 1.5)));
                named.push(n(&format!("backbone.s{}.c{}.gn_b", s, j), rand_t(&[co], &mut rng, -0.3, 0.3)));
            }
            named.push(n(&format!("adjust.l{}.w", s), rand_t(&[2, co, 1, 1], &mut rng, -0.6, 0.6)));
            named.push(n(&format!("adjust.l{}.b", s), rand_t(&[2], &mut rng, -0.3, 0.3)));
            ci = co;
        }
        let c2 = cfg.clone();
        check_named("backbone", seed, named, move |tape, p, _| {
            let pyr = extract_features(tape, p, &c2, p.get("img")?)?;
            let fused = adjust_and_fuse(tape, p, &pyr.levels, 2)?;
            Ok(project(tape, fused, seed)?)
        });
    }
}

#[test]
fn end_to_end_gradients() {
    let cfg = ModelConfig {
        backbone: BackboneConfig { channels: [2, 2, 3, 3], strides: [2, 2, 1, 1], c: 4, template_size: 8, search_size: 16 },
        heads: 2,
        ffn_dim: 4,
        ..ModelConfig::default()
    };
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(1100 + seed);
        let store = gwtrack_core::params::init_params(&cfg, seed).unwrap();
        let mut named: Vec<(String, Tensor<f64>)> =
            store.iter().map(|(k, t)| (k.clone(), t.clone())).collect();
        for (_, t) in named.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
        }
        named.push(n("template", rand_t(&[1, 8, 8], &mut rng, -1.0, 1.0)));
        named.push(n("search", rand_t(&[1, 16, 16], &mut rng, -1.0, 1.0)));
        let gt = BBox::new(rng.random_range(6.0..10.0), rng.random_range(6.0..10.0), rng.random_range(5.0..8.0), rng.random_range(5.0..8.0))
            .unwrap();
        let labels = assign_labels(4, 4, 4.0, &gt);
        let c2 = cfg.clone();
        check_named("model", seed, named, move |tape, p, _| {
            let h = gwtrack_core::model::forward(tape, p, &c2, p.get("template")?, p.get("search")?)?;
            Ok(total_loss(tape, &h, &labels, &LossWeights::default())?.total)
        });
    }
}

//! Checks shared by the integration tests and the acceptance runner. Every
//! check returns a one-line summary on success and a reason on failure.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Mutex;

use jnn_core::arch::{
    plan, Detector, DetectorSpec, FeatureShape, JointPlacementMask, LayerDef, NetworkSpec,
    Preset, Recognizer, RecognizerSpec, TwinNetwork,
};
use jnn_core::data::{
    validate_split, ClassSplit, DatasetManifest, ManifestEntry, PairSampler, Side, SplitViolation,
};
use jnn_core::detmath::{
    assign_targets, bce_pair_loss, decode_anchor, encode_anchor, total_detection_loss,
    AnchorPrior, BBox, LossWeights, RawPrediction,
};
use jnn_core::harness::{
    init_model, load_checkpoint, save_checkpoint, train, Dataset, RunConfig, Task,
};
use jnn_core::metrics::{
    average_precision, nms, roc_sweep, ApMethod, DetectionRecord, GroundTruth, Rect,
};
use jnn_core::numerics::gradcheck::{relative_error, REL_ERR_FLOOR};
use jnn_core::numerics::{sgd_step, Graph, LayerKind, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Outcome = Result<String, String>;

/// Paper-scale networks take over a gigabyte each; build them one at a time.
pub static HEAVY: Mutex<()> = Mutex::new(());

pub fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape, 1.0, r)
}

// ---------------------------------------------------------------------------
// Gradient fidelity

const FD_EPS: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

/// Max relative error between tape gradients and central differences of
/// `sum(out * weights)` with respect to the input and every parameter.
fn layer_check<F>(params: &ParamStore, x: &Tensor, build: F, r: &mut ChaCha8Rng) -> f64
where
    F: Fn(&mut Graph, &ParamStore, Var) -> Var,
{
    let eval = |params: &ParamStore, x: &Tensor, w: Option<&Tensor>| -> (Graph, Var, f64) {
        let mut g = Graph::new();
        let v = g.input(x.clone());
        let out = build(&mut g, params, v);
        let obj = w.map_or(0.0, |w| {
            g.value(out).data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        });
        (g, out, obj)
    };
    let (g, out, _) = eval(params, x, None);
    let weights = randn(g.value(out).shape(), r);
    let (grads, inputs) = g.backward(params, out, weights.clone()).unwrap();
    let dx = inputs[0].clone().unwrap_or_else(|| Tensor::zeros(x.shape()));

    let mut worst = 0.0f64;
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + FD_EPS;
        let plus = eval(params, &xp, Some(&weights)).2;
        xp.data_mut()[i] = orig - FD_EPS;
        let minus = eval(params, &xp, Some(&weights)).2;
        xp.data_mut()[i] = orig;
        let num = (plus - minus) / (2.0 * FD_EPS);
        worst = worst.max(relative_error(dx.data()[i], num, REL_ERR_FLOOR));
    }
    let mut pp = params.clone();
    for id in params.ids() {
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(params.value(id).shape()));
        for i in 0..params.value(id).len() {
            let orig = pp.value(id).data()[i];
            pp.get_mut(id).value.data_mut()[i] = orig + FD_EPS;
            let plus = eval(&pp, x, Some(&weights)).2;
            pp.get_mut(id).value.data_mut()[i] = orig - FD_EPS;
            let minus = eval(&pp, x, Some(&weights)).2;
            pp.get_mut(id).value.data_mut()[i] = orig;
            let num = (plus - minus) / (2.0 * FD_EPS);
            worst = worst.max(relative_error(analytic.data()[i], num, REL_ERR_FLOOR));
        }
    }
    worst
}

/// Worst relative error per layer kind over `instances` random cases.
pub fn layer_gradient_errors(instances: u64) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    let mut worst = |name: &'static str, f: &dyn Fn(&mut ChaCha8Rng) -> f64| {
        let e = (0..instances).map(|s| f(&mut rng(100 + s))).fold(0.0, f64::max);
        out.push((name, e));
    };
    worst("conv2d", &|r| {
        let (cin, cout) = (r.random_range(1..4), r.random_range(1..4));
        let k = r.random_range(1..4);
        let stride = r.random_range(1..3);
        let pad = r.random_range(0..2);
        let size = r.random_range(k.max(3)..7);
        let mut p = ParamStore::new();
        let w = p.add("w", randn(&[cout, cin, k, k], r));
        let b = p.add("b", randn(&[cout], r));
        let x = randn(&[2, cin, size, size], r);
        layer_check(&p, &x, |g, p, v| g.conv2d(p, v, w, b, stride, pad).unwrap(), r)
    });
    worst("maxpool2d", &|r| {
        let k = r.random_range(2..4);
        let stride = r.random_range(1..3);
        let x = randn(&[2, 2, 6, 6], r);
        layer_check(&ParamStore::new(), &x, |g, _, v| g.maxpool2d(v, k, stride).unwrap(), r)
    });
    worst("linear", &|r| {
        let (fi, fo) = (r.random_range(1..8), r.random_range(1..6));
        let mut p = ParamStore::new();
        let w = p.add("w", randn(&[fo, fi], r));
        let b = p.add("b", randn(&[fo], r));
        let x = randn(&[3, fi], r);
        layer_check(&p, &x, |g, p, v| g.linear(p, v, w, b).unwrap(), r)
    });
    worst("flatten+linear", &|r| {
        let mut p = ParamStore::new();
        let w = p.add("w", randn(&[3, 2 * 3 * 3], r));
        let b = p.add("b", randn(&[3], r));
        let x = randn(&[2, 2, 3, 3], r);
        layer_check(
            &p,
            &x,
            |g, p, v| {
                let f = g.flatten(v).unwrap();
                g.linear(p, f, w, b).unwrap()
            },
            r,
        )
    });
    worst("leaky_relu", &|r| {
        let slope = [0.0, 0.01, 0.1][r.random_range(0..3)];
        let x = randn(&[2, 3, 4, 4], r);
        layer_check(&ParamStore::new(), &x, |g, _, v| g.leaky_relu(v, slope), r)
    });
    worst("sigmoid", &|r| {
        let x = randn(&[4, 5], r);
        layer_check(&ParamStore::new(), &x, |g, _, v| g.sigmoid(v), r)
    });
    worst("concat_channels", &|r| {
        let mut p = ParamStore::new();
        let w = p.add("w", randn(&[2, 2, 3, 3], r));
        let b = p.add("b", randn(&[2], r));
        let x = randn(&[2, 2, 4, 4], r);
        // the second operand is a function of the first so both paths carry gradient
        layer_check(
            &p,
            &x,
            |g, p, v| {
                let y = g.conv2d(p, v, w, b, 1, 1).unwrap();
                g.concat_channels(y, v).unwrap()
            },
            r,
        )
    });
    out
}

pub fn bce_gradient_error(instances: u64) -> f64 {
    (0..instances)
        .map(|s| {
            let r = &mut rng(300 + s);
            let n = r.random_range(1..9);
            let p: Vec<f64> = (0..n).map(|_| r.random_range(0.02..0.98)).collect();
            let y: Vec<f64> = (0..n).map(|_| f64::from(r.random_bool(0.5) as u8)).collect();
            let (_, grad) = bce_pair_loss(&p, &y).unwrap();
            let mut q = p.clone();
            (0..n)
                .map(|i| {
                    q[i] = p[i] + FD_EPS;
                    let plus = bce_pair_loss(&q, &y).unwrap().0;
                    q[i] = p[i] - FD_EPS;
                    let minus = bce_pair_loss(&q, &y).unwrap().0;
                    q[i] = p[i];
                    relative_error(grad[i], (plus - minus) / (2.0 * FD_EPS), REL_ERR_FLOOR)
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn detection_loss_gradient_error(instances: u64) -> f64 {
    (0..instances)
        .map(|s| {
            let r = &mut rng(400 + s);
            let grid = r.random_range(2..5);
            let priors: Vec<AnchorPrior> = (0..r.random_range(1..4))
                .map(|_| AnchorPrior::new(r.random_range(0.5..3.0), r.random_range(0.5..3.0)).unwrap())
                .collect();
            let n = r.random_range(1..3);
            let assignments: Vec<_> = (0..n)
                .map(|_| {
                    let gts: Vec<BBox> = (0..r.random_range(0..3))
                        .map(|_| {
                            BBox::new(
                                r.random_range(0.1..grid as f64 - 0.1),
                                r.random_range(0.1..grid as f64 - 0.1),
                                r.random_range(0.3..2.5),
                                r.random_range(0.3..2.5),
                            )
                        })
                        .collect();
                    assign_targets(&gts, &priors, grid).unwrap()
                })
                .collect();
            let weights = LossWeights {
                lambda_coord: r.random_range(0.5..5.0),
                lambda_obj: r.random_range(0.5..2.0),
                lambda_noobj: r.random_range(0.1..1.0),
                ..Default::default()
            };
            let head = Tensor::randn(&[n, priors.len() * 5, grid, grid], 0.5, r);
            let grad = total_detection_loss(&head, &assignments, &priors, &weights).unwrap().grad;
            let mut h = head.clone();
            (0..head.len())
                .map(|i| {
                    let orig = head.data()[i];
                    h.data_mut()[i] = orig + FD_EPS;
                    let plus = total_detection_loss(&h, &assignments, &priors, &weights).unwrap().total;
                    h.data_mut()[i] = orig - FD_EPS;
                    let minus = total_detection_loss(&h, &assignments, &priors, &weights).unwrap().total;
                    h.data_mut()[i] = orig;
                    relative_error(grad.data()[i], (plus - minus) / (2.0 * FD_EPS), REL_ERR_FLOOR)
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Recognizer forward plus pair BCE, differentiated end to end, checked on
/// `coords` random parameter coordinates per instance.
pub fn recognizer_composite_error(instances: u64, coords: usize) -> f64 {
    let spec = RecognizerSpec::alexnet(64, 16, 0.01);
    (0..instances)
        .map(|s| {
            let r = &mut rng(500 + s);
            let net = Recognizer::build(&spec, r).unwrap();
            let q = Tensor::uniform(&[2, 3, 64, 64], 0.0, 1.0, r);
            let t = Tensor::uniform(&[2, 3, 64, 64], 0.0, 1.0, r);
            let y = [1.0, 0.0];
            let loss_of = |params: &ParamStore| {
                let mut n = net.clone();
                *n.net.params_mut() = params.clone();
                let p = n.forward(&q, &t).unwrap();
                bce_pair_loss(p.data(), &y).unwrap().0
            };
            let mut g = Graph::new();
            let out = net.forward_graph(&mut g, q.clone(), t.clone()).unwrap();
            let (_, dp) = bce_pair_loss(g.value(out).data(), &y).unwrap();
            let seed = Tensor::new(g.value(out).shape().to_vec(), dp).unwrap();
            let (grads, _) = g.backward(net.shared_parameters(), out, seed).unwrap();

            let params = net.shared_parameters().clone();
            let ids: Vec<_> = params.ids().collect();
            let mut pp = params.clone();
            (0..coords)
                .map(|_| {
                    let id = ids[r.random_range(0..ids.len())];
                    let i = r.random_range(0..params.value(id).len());
                    let orig = params.value(id).data()[i];
                    pp.get_mut(id).value.data_mut()[i] = orig + FD_EPS;
                    let plus = loss_of(&pp);
                    pp.get_mut(id).value.data_mut()[i] = orig - FD_EPS;
                    let minus = loss_of(&pp);
                    pp.get_mut(id).value.data_mut()[i] = orig;
                    let a = grads.get(id).map_or(0.0, |g| g.data()[i]);
                    relative_error(a, (plus - minus) / (2.0 * FD_EPS), REL_ERR_FLOOR)
                })
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn gradient_fidelity() -> Outcome {
    let mut parts = Vec::new();
    for (name, e) in layer_gradient_errors(10) {
        ensure(e < GRAD_TOL, || format!("{name} relative error {e:.3e}"))?;
        parts.push(e);
    }
    let bce = bce_gradient_error(10);
    ensure(bce < GRAD_TOL, || format!("bce_pair_loss relative error {bce:.3e}"))?;
    let det = detection_loss_gradient_error(10);
    ensure(det < GRAD_TOL, || format!("detection loss relative error {det:.3e}"))?;
    let comp = recognizer_composite_error(10, 12);
    ensure(comp < GRAD_TOL, || format!("recognizer+BCE relative error {comp:.3e}"))?;
    let layers = parts.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "layers {layers:.1e}, bce {bce:.1e}, detection loss {det:.1e}, composite {comp:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Equation oracles

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn decode_oracle_error(cases: u64) -> f64 {
    let r = &mut rng(600);
    (0..cases)
        .map(|_| {
            let t = RawPrediction {
                tx: r.random_range(-8.0..8.0),
                ty: r.random_range(-8.0..8.0),
                tw: r.random_range(-3.0..3.0),
                th: r.random_range(-3.0..3.0),
                to: r.random_range(-8.0..8.0),
            };
            let (cx, cy) = (r.random_range(0..14usize), r.random_range(0..14usize));
            let (pw, ph) = (r.random_range(0.2..5.0), r.random_range(0.2..5.0));
            let b = decode_anchor(&t, (cx, cy), &AnchorPrior::new(pw, ph).unwrap());
            let want = [
                logistic(t.tx) + cx as f64,
                logistic(t.ty) + cy as f64,
                pw * t.tw.exp(),
                ph * t.th.exp(),
                logistic(t.to),
            ];
            [b.x, b.y, b.w, b.h, b.conf]
                .iter()
                .zip(want)
                .map(|(a, w)| (a - w).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn roundtrip_error(cases: u64) -> f64 {
    let r = &mut rng(601);
    (0..cases)
        .map(|_| {
            let cell = (r.random_range(0..14usize), r.random_range(0..14usize));
            let gt = BBox::new(
                cell.0 as f64 + r.random_range(0.01..0.99),
                cell.1 as f64 + r.random_range(0.01..0.99),
                r.random_range(0.1..10.0),
                r.random_range(0.1..10.0),
            );
            let prior = AnchorPrior::new(r.random_range(0.5..4.0), r.random_range(0.5..4.0)).unwrap();
            let o = encode_anchor(&gt, cell, &prior).unwrap();
            let t = RawPrediction { tx: o.tx, ty: o.ty, tw: o.tw, th: o.th, to: 0.0 };
            let b = decode_anchor(&t, cell, &prior);
            [(b.x, gt.x), (b.y, gt.y), (b.w, gt.w), (b.h, gt.h)]
                .iter()
                .map(|(a, w)| (a - w).abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

pub fn equation_oracles() -> Outcome {
    let d = decode_oracle_error(100);
    ensure(d <= 1e-12, || format!("decode differs from scalar oracle by {d:.3e}"))?;
    let rt = roundtrip_error(100);
    ensure(rt < 1e-9, || format!("encode/decode roundtrip error {rt:.3e}"))?;
    let half = bce_pair_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap().0;
    ensure((half - std::f64::consts::LN_2).abs() < 1e-6, || format!("BCE at 0.5 is {half}"))?;
    let two = bce_pair_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap().0;
    let exact = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
    ensure((two - exact).abs() < 1e-6 && (two - 0.1643).abs() < 5e-5, || {
        format!("two-element BCE is {two}, expected {exact}")
    })?;
    Ok(format!("decode {d:.1e}, roundtrip {rt:.1e}, bce {half:.6}/{two:.6}"))
}

// ---------------------------------------------------------------------------
// Metric oracles

fn corner_iou(a: &Rect, b: &Rect) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.x, a.y, a.x + a.w, a.y + a.h);
    let (bx1, by1, bx2, by2) = (b.x, b.y, b.x + b.w, b.y + b.h);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.w * a.h + b.w * b.h - inter)
}

/// Suppression-forward formulation: each kept box removes every later box
/// overlapping it by more than the threshold.
pub fn brute_force_nms(records: &[DetectionRecord], thr: f64) -> Vec<DetectionRecord> {
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in 0..n - 1 - i {
            let (a, b) = (order[j], order[j + 1]);
            if records[b].confidence > records[a].confidence {
                order.swap(j, j + 1);
            }
        }
    }
    let mut suppressed = vec![false; n];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(records[i].clone());
        for &j in &order[pos + 1..] {
            if corner_iou(&records[i].rect, &records[j].rect) > thr {
                suppressed[j] = true;
            }
        }
    }
    kept
}

pub fn random_records(r: &mut ChaCha8Rng, n: usize) -> Vec<DetectionRecord> {
    (0..n)
        .map(|_| DetectionRecord {
            image_id: 0,
            class: "c".into(),
            rect: Rect::new(
                r.random_range(0.0..80.0),
                r.random_range(0.0..80.0),
                r.random_range(5.0..40.0),
                r.random_range(5.0..40.0),
            ),
            // coarse confidences so ties occur
            confidence: (r.random_range(1..20) as f64) / 20.0,
        })
        .collect()
}

fn rec(image_id: usize, rect: Rect, confidence: f64) -> DetectionRecord {
    DetectionRecord { image_id, class: "c".into(), rect, confidence }
}

pub fn ap_hand_cases() -> Vec<f64> {
    let gt = [GroundTruth { image_id: 0, rect: Rect::new(0.0, 0.0, 10.0, 10.0) }];
    let hit = Rect::new(0.0, 0.0, 10.0, 10.0);
    let miss = Rect::new(50.0, 50.0, 10.0, 10.0);
    let cases = [
        vec![rec(0, hit, 0.9)],
        vec![rec(0, hit, 0.9), rec(0, miss, 0.8)],
        vec![rec(0, miss, 0.9), rec(0, hit, 0.8)],
    ];
    cases
        .iter()
        .map(|c| average_precision("c", c, &gt, 0.5, ApMethod::AllPoints).ap.unwrap())
        .collect()
}

/// Best accuracy over every cut at an observed score.
pub fn exhaustive_best_accuracy(scores: &[f64], labels: &[bool]) -> f64 {
    scores
        .iter()
        .map(|&t| {
            scores
                .iter()
                .zip(labels)
                .filter(|(&s, &y)| (s >= t) == y)
                .count() as f64
                / scores.len() as f64
        })
        .fold(0.0, f64::max)
}

/// Ten scores on the 20-point threshold grid over `[0, 19]`, both ends used.
pub fn grid_aligned_case(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let mut scores: Vec<f64> = vec![0.0, 19.0];
    scores.extend((0..8).map(|_| r.random_range(0..20) as f64));
    let mut labels: Vec<bool> = (0..10).map(|_| r.random_bool(0.5)).collect();
    labels[0] = false;
    labels[1] = true;
    (scores, labels)
}

pub fn metric_oracles() -> Outcome {
    let r = &mut rng(700);
    for case in 0..100 {
        let n = r.random_range(0..=50);
        let recs = random_records(r, n);
        let thr = r.random_range(0.2..0.8);
        let got = nms(&recs, thr);
        let want = brute_force_nms(&recs, thr);
        ensure(got == want, || {
            format!("NMS case {case}: {} kept, brute force keeps {}", got.len(), want.len())
        })?;
    }
    let aps = ap_hand_cases();
    ensure(aps == [1.0, 1.0, 0.5], || format!("AP hand cases gave {aps:?}"))?;

    let scores: Vec<f64> = (0..40)
        .map(|i| if i < 20 { i as f64 / 100.0 } else { 0.6 + i as f64 / 100.0 })
        .collect();
    let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
    let perfect = roc_sweep(&scores, &labels, 20).map_err(|e| e.to_string())?;
    ensure((perfect.auc - 1.0).abs() <= 0.01 && perfect.best.accuracy == 1.0, || {
        format!("separated scores: AUC {} best accuracy {}", perfect.auc, perfect.best.accuracy)
    })?;
    for case in 0..50 {
        let (s, y) = grid_aligned_case(r);
        let got = roc_sweep(&s, &y, 20).map_err(|e| e.to_string())?.best.accuracy;
        let want = exhaustive_best_accuracy(&s, &y);
        ensure(got == want, || format!("ROC case {case}: best accuracy {got}, oracle {want}"))?;
    }
    Ok(format!("NMS 100/100, AP {aps:?}, AUC {:.3}, ROC 50/50", perfect.auc))
}

// ---------------------------------------------------------------------------
// Architecture integrity

/// Layer-by-layer `(main, secondary)` shapes computed straight from the layer
/// table, independently of the library's planner.
pub fn shape_oracle(
    spec: &NetworkSpec,
    mask: &JointPlacementMask,
) -> Vec<(String, Vec<usize>, Option<Vec<usize>>)> {
    let last_joint = spec
        .layers
        .iter()
        .filter_map(|l| l.joint)
        .filter(|&j| mask.is_enabled(j))
        .max()
        .unwrap_or(0);
    let apply = |l: &LayerDef, s: &[usize], cin_mul: usize| -> Vec<usize> {
        match (&l.kind, s) {
            (LayerKind::Conv2d { out_channels, kernel, stride, padding }, [_, h, w]) => {
                let _ = cin_mul;
                let o = |x: usize| (x + 2 * padding - kernel) / stride + 1;
                vec![*out_channels, o(*h), o(*w)]
            }
            (LayerKind::MaxPool2d { kernel, stride }, [c, h, w]) => {
                vec![*c, (h - kernel) / stride + 1, (w - kernel) / stride + 1]
            }
            (LayerKind::Linear { out_features }, _) => vec![*out_features],
            other => panic!("unexpected {other:?}"),
        }
    };
    let mut main = vec![spec.in_channels, spec.target_size, spec.target_size];
    let mut sec = Some(vec![spec.in_channels, spec.query_size, spec.query_size]);
    let mut out = Vec::new();
    for l in &spec.layers {
        match l.joint {
            Some(j) if !mask.is_enabled(j) => continue,
            Some(j) => {
                main = apply(l, &main, 2);
                if j == last_joint {
                    sec = None;
                }
            }
            None => {
                let was_twin = sec.is_some();
                main = apply(l, &main, 1);
                if was_twin && !l.target_only {
                    sec = sec.map(|s| apply(l, &s, 1));
                }
            }
        }
        out.push((l.name.clone(), main.clone(), sec.clone()));
    }
    out
}

pub fn trace_matches_oracle(net: &TwinNetwork, batch: usize, r: &mut ChaCha8Rng) -> Result<(), String> {
    let spec = net.spec();
    let q = Tensor::uniform(&[batch, 3, spec.query_size, spec.query_size], 0.0, 1.0, r);
    let t = Tensor::uniform(&[batch, 3, spec.target_size, spec.target_size], 0.0, 1.0, r);
    let mut g = Graph::new();
    let (_, trace) = net.forward_graph(&mut g, q, t).map_err(|e| e.to_string())?;
    let oracle = shape_oracle(spec, net.mask());
    let planned = plan(spec, net.mask()).map_err(|e| e.to_string())?;
    ensure(trace.len() == oracle.len() && planned.len() == oracle.len(), || {
        format!("{}: {} traced layers, {} in the oracle", spec.name, trace.len(), oracle.len())
    })?;
    for ((t, (name, main, sec)), p) in trace.iter().zip(&oracle).zip(&planned) {
        ensure(&t.name == name && &t.main == main && &t.secondary == sec, || {
            format!("{}: traced {:?}/{:?}, oracle {main:?}/{sec:?}", name, t.main, t.secondary)
        })?;
        let pm = p.main_out.dims();
        let ps = p.secondary_out.as_ref().map(FeatureShape::dims);
        ensure(&pm == main && &ps == sec, || format!("{name}: planner disagrees with oracle"))?;
    }
    Ok(())
}

pub fn architecture_integrity() -> Outcome {
    let _heavy = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let r = &mut rng(800);
    // paper scale
    let rec = Recognizer::build(&RecognizerSpec::preset(Preset::Paper), r).map_err(|e| e.to_string())?;
    let head = rec.net.steps().last().unwrap().main_out.dims();
    ensure(head == [1], || format!("recognizer head {head:?}"))?;
    ensure(rec.shared_parameters().len() == 22, || {
        format!("recognizer has {} parameter tensors", rec.shared_parameters().len())
    })?;
    trace_matches_oracle(&rec.net, 1, r)?;
    drop(rec);
    let det = Detector::build(
        &DetectorSpec::preset(Preset::Paper, 5, JointPlacementMask::detector_default()),
        r,
    )
    .map_err(|e| e.to_string())?;
    let head = det.net.steps().last().unwrap().main_out.dims();
    ensure(head == [25, 14, 14], || format!("detector head {head:?}"))?;
    ensure(det.shared_parameters().len() == 52, || {
        format!("detector has {} parameter tensors", det.shared_parameters().len())
    })?;
    trace_matches_oracle(&det.net, 1, r)?;
    drop(det);
    for mask in JointPlacementMask::ablation_rows() {
        let spec = DetectorSpec::preset(Preset::Paper, 5, mask.clone());
        let d = Detector::build(&spec, r).map_err(|e| format!("mask {mask}: {e}"))?;
        let h = d.net.steps().last().unwrap().main_out.dims();
        ensure(h == [25, 14, 14], || format!("mask {mask}: head {h:?}"))?;
    }
    // desk scale, every ablation mask
    trace_matches_oracle(&Recognizer::build(&RecognizerSpec::preset(Preset::Desk), r).unwrap().net, 2, r)?;
    for mask in JointPlacementMask::ablation_rows() {
        let d = Detector::build(&DetectorSpec::preset(Preset::Desk, 5, mask.clone()), r)
            .map_err(|e| format!("desk mask {mask}: {e}"))?;
        trace_matches_oracle(&d.net, 1, r).map_err(|e| format!("desk mask {mask}: {e}"))?;
    }
    weight_sharing_after_step()?;
    Ok("paper heads (1) and (25,14,14), 10 masks, traces match oracle, sharing holds".into())
}

/// One SGD step on a desk detector: both branches must still read one value.
pub fn weight_sharing_after_step() -> Result<(), String> {
    let r = &mut rng(801);
    let mut det = Detector::build(
        &DetectorSpec::preset(Preset::Desk, 5, JointPlacementMask::detector_default()),
        r,
    )
    .unwrap();
    let q = Tensor::uniform(&[1, 3, 56, 56], 0.0, 1.0, r);
    let t = Tensor::uniform(&[1, 3, 112, 112], 0.0, 1.0, r);
    let before = det.net.params().value(det.net.branch_params("conv2", false).unwrap().0).clone();
    let mut g = Graph::new();
    let out = det.forward_graph(&mut g, q, t).unwrap();
    let seed = Tensor::full(g.value(out).shape(), 1.0);
    let (grads, _) = g.backward(det.shared_parameters(), out, seed).unwrap();
    det.net.params_mut().accumulate(&grads).unwrap();
    sgd_step(det.net.params_mut(), 1e-3, 0.9).unwrap();
    for layer in ["conv1", "conv2", "conv5", "conv13"] {
        let main = det.net.branch_params(layer, false).ok_or(format!("{layer} missing"))?;
        let sec = det.net.branch_params(layer, true).ok_or(format!("{layer} has no secondary"))?;
        ensure(main == sec, || format!("{layer}: branches hold different parameters"))?;
        let p = det.net.params();
        ensure(p.value(main.0).data() == p.value(sec.0).data(), || format!("{layer} diverged"))?;
    }
    let after = det.net.params().value(det.net.branch_params("conv2", false).unwrap().0);
    ensure(after != &before, || "optimizer step left conv2 unchanged".into())?;
    let ids: BTreeSet<usize> = det.net.params().ids().map(|i| i.0).collect();
    ensure(ids.len() == det.net.params().len(), || "duplicate parameter ids".into())?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Protocol checks

pub fn toy_manifest(classes: usize, per_class: usize) -> DatasetManifest {
    let names: Vec<String> = (0..classes).map(|c| format!("k{c}")).collect();
    let mut entries = Vec::new();
    for c in &names {
        for i in 0..per_class {
            entries.push(ManifestEntry {
                path: format!("{c}_{i}.png").into(),
                label: c.clone(),
                boxes: vec![Rect::new(4.0, 4.0, 20.0, 20.0)],
                width: 64,
                height: 64,
                line: 0,
            });
        }
    }
    DatasetManifest { root: ".".into(), classes: names, entries }
}

pub fn match_rates(draws: usize, seed: u64) -> (f64, f64) {
    let m = toy_manifest(6, 5);
    let split = ClassSplit::first_n(&m.classes, 6);
    let mut s = PairSampler::new(&m, &split, Side::Train, rng(seed));
    let rec = (0..draws).filter(|_| s.sample_recognition_pair().unwrap().matched).count();
    let det = (0..draws).filter(|_| !s.sample_detection_pair().unwrap().gts.is_empty()).count();
    (rec as f64 / draws as f64, det as f64 / draws as f64)
}

/// Small synthetic detection run used for the reproducibility and
/// checkpoint checks.
pub fn tiny_detection_setup(dir: &std::path::Path) -> (RunConfig, Dataset) {
    let mut cfg = RunConfig::defaults(Task::Detection);
    cfg.synthetic.shapes.classes = 4;
    cfg.synthetic.shapes.images_per_class = 3;
    cfg.synthetic.train_classes = 2;
    let data = jnn_core::harness::cmd_gen_synthetic(&cfg.synthetic, &dir.join("data"), 5).unwrap();
    cfg.run.out_dir = dir.join("run");
    cfg.run.seed = 11;
    cfg.model.width_div = 16;
    cfg.optimizer.epochs = 2;
    cfg.optimizer.batch_size = 2;
    cfg.optimizer.batches_per_epoch = 2;
    cfg.eval.pairs = 6;
    (cfg, data)
}

pub fn protocol_checks() -> Outcome {
    let (rec, det) = match_rates(10_000, 900);
    ensure((rec - 0.5).abs() <= 0.03 && (det - 0.5).abs() <= 0.03, || {
        format!("match rates {rec:.4} (recognition) {det:.4} (detection)")
    })?;

    let m = toy_manifest(4, 1);
    let overlap = ClassSplit { train: vec!["k0".into(), "k1".into()], test: vec!["k1".into(), "k2".into()] };
    let v = validate_split(&m, &overlap);
    ensure(v.contains(&SplitViolation::Overlap("k1".into())), || format!("overlap not flagged: {v:?}"))?;
    ensure(Dataset::new(m.clone(), overlap).is_err(), || "dataset accepted an overlapping split".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (cfg, data) = tiny_detection_setup(dir.path());
    let model = init_model(&cfg).map_err(|e| e.to_string())?;
    let path = dir.path().join("ck.bin");
    let digest = cfg.digest().unwrap();
    save_checkpoint(&path, &model, &digest, 3, &rng(1)).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).and_then(|c| c.to_model()).map_err(|e| e.to_string())?;
    for (a, b) in model.shared_parameters().iter().zip(loaded.shared_parameters().iter()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same, || "checkpoint changed a parameter".into())?;
    }
    let r = &mut rng(2);
    let q = Tensor::uniform(&[1, 3, 56, 56], 0.0, 1.0, r);
    let t = Tensor::uniform(&[1, 3, 112, 112], 0.0, 1.0, r);
    let (a, b) = (model.forward(&q, &t).unwrap(), loaded.forward(&q, &t).unwrap());
    ensure(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()), || {
        "reloaded model computes different outputs".into()
    })?;

    let run = |sub: &str| {
        let mut c = cfg.clone();
        c.run.out_dir = dir.path().join(sub);
        train(&c, &data, None).map_err(|e| e.to_string())
    };
    let (x, y) = (run("a")?, run("b")?);
    let bits = |v: &[f64]| v.iter().map(|f| f.to_bits()).collect::<Vec<_>>();
    ensure(bits(&x.epoch_losses) == bits(&y.epoch_losses), || "loss logs differ between runs".into())?;
    let same_params = x
        .model
        .shared_parameters()
        .iter()
        .zip(y.model.shared_parameters().iter())
        .all(|(p, q)| bits(p.value.data()) == bits(q.value.data()));
    ensure(same_params, || "parameters differ between identical runs".into())?;
    Ok(format!("match rates {rec:.4}/{det:.4}, overlap rejected, checkpoint bitwise, runs bitwise"))
}

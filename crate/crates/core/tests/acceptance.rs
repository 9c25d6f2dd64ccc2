//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Pass criterion numbers as arguments to run a subset.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use jnn_core::data::{ImageCache, Side};
use jnn_core::detmath::bce_pair_loss;
use jnn_core::harness::{
    cmd_gen_synthetic, evaluate, init_model, localization_rate, train, Dataset, EvalReport, Model,
    RunConfig, Task,
};
use jnn_core::numerics::{sgd_step, Graph, Tensor};

/// Dataset and schedules for the end-to-end run.
fn e2e_data(dir: &Path) -> Result<(RunConfig, Dataset), String> {
    let mut base = RunConfig::defaults(Task::Recognition);
    base.synthetic.shapes.classes = 12;
    base.synthetic.shapes.images_per_class = 20;
    base.synthetic.train_classes = 8;
    let data = cmd_gen_synthetic(&base.synthetic, &dir.join("shapes"), 2024).map_err(|e| e.to_string())?;
    Ok((base, data))
}

fn recognition_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::defaults(Task::Recognition);
    cfg.run.seed = 3;
    cfg.run.out_dir = dir.join("recognition");
    cfg.optimizer.epochs = 50;
    cfg.optimizer.batch_size = 16;
    cfg.optimizer.batches_per_epoch = 20;
    cfg.optimizer.lr = 1e-3;
    cfg.optimizer.clip_norm = 5.0;
    cfg.eval.pairs = 400;
    cfg
}

fn detection_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::defaults(Task::Detection);
    cfg.run.seed = 3;
    cfg.run.out_dir = dir.join("detection");
    cfg.model.mask = "1,2,4".into();
    cfg.model.width_div = 8;
    cfg.optimizer.epochs = 60;
    cfg.optimizer.batch_size = 8;
    cfg.optimizer.batches_per_epoch = 20;
    cfg.optimizer.lr = 3e-3;
    cfg.optimizer.clip_norm = 20.0;
    cfg.eval.pairs = 400;
    cfg
}

/// Overfits ten fixed pairs and reads back their scores.
fn overfit_ten_pairs(data: &Dataset) -> Result<(f64, f64), String> {
    let mut cfg = RunConfig::defaults(Task::Recognition);
    cfg.run.seed = 9;
    let mut model = init_model(&cfg).map_err(|e| e.to_string())?;
    let m = &data.manifest;
    let train: Vec<usize> = (0..m.entries.len())
        .filter(|&i| data.split.train.contains(&m.entries[i].label))
        .collect();
    let mut cache = ImageCache::new();
    let (mut q, mut t, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..10 {
        let a = train[(k * 17) % train.len()];
        let same = k % 2 == 0;
        let b = *train
            .iter()
            .find(|&&j| j != a && (m.entries[j].label == m.entries[a].label) == same)
            .unwrap();
        q.push(cache.image(m, a, 64).map_err(|e| e.to_string())?);
        t.push(cache.image(m, b, 64).map_err(|e| e.to_string())?);
        y.push(if same { 1.0 } else { 0.0 });
    }
    let (q, t) = (Tensor::stack(&q).unwrap(), Tensor::stack(&t).unwrap());
    for _ in 0..300 {
        let mut g = Graph::new();
        let out = model.forward_graph(&mut g, q.clone(), t.clone()).map_err(|e| e.to_string())?;
        let (_, grad) = bce_pair_loss(g.value(out).data(), &y).unwrap();
        let seed = Tensor::new(g.value(out).shape().to_vec(), grad).unwrap();
        let (grads, _) = g.backward(model.shared_parameters(), out, seed).unwrap();
        let params = model.net_mut().params_mut();
        params.accumulate(&grads).unwrap();
        jnn_core::numerics::clip_grad_norm(params, 5.0);
        sgd_step(params, 1e-3, 0.9).map_err(|e| e.to_string())?;
    }
    let p = model.forward(&q, &t).map_err(|e| e.to_string())?;
    let min_match = p.data().iter().zip(&y).filter(|(_, &l)| l == 1.0).map(|(p, _)| *p).fold(1.0, f64::min);
    let max_mismatch = p.data().iter().zip(&y).filter(|(_, &l)| l == 0.0).map(|(p, _)| *p).fold(0.0, f64::max);
    Ok((min_match, max_mismatch))
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, data) = e2e_data(dir.path())?;

    let (lo, hi) = overfit_ten_pairs(&data)?;
    ensure(lo > 0.9 && hi < 0.1, || {
        format!("overfit pairs: matched min {lo:.3}, mismatched max {hi:.3}")
    })?;

    let rcfg = recognition_config(dir.path());
    let rec = train(&rcfg, &data, None).map_err(|e| e.to_string())?;
    let final_loss = *rec.epoch_losses.last().unwrap();
    let EvalReport::Recognition(r) =
        evaluate(&rcfg, &data, &rec.model, Side::Test).map_err(|e| e.to_string())?
    else {
        return Err("recognition produced a detection report".into());
    };
    let acc = r.roc.best.accuracy;

    let dcfg = detection_config(dir.path());
    let det = train(&dcfg, &data, None).map_err(|e| e.to_string())?;
    let loc = localization_rate(&dcfg, &data, &det.model, Side::Train, 200).map_err(|e| e.to_string())?;
    let EvalReport::Detection(d) =
        evaluate(&dcfg, &data, &det.model, Side::Test).map_err(|e| e.to_string())?
    else {
        return Err("detection produced a recognition report".into());
    };
    debug_assert!(matches!(det.model, Model::Detector(_)));

    let summary = format!(
        "overfit {lo:.3}/{hi:.3}; recognition loss {final_loss:.4} unseen accuracy {acc:.3}; \
         detection localization {loc:.3} unseen mAP {:.3}",
        d.map
    );
    ensure(final_loss < 0.1, || format!("recognition loss {final_loss:.4} >= 0.1; {summary}"))?;
    ensure(acc > 0.75, || format!("unseen accuracy {acc:.3} <= 0.75; {summary}"))?;
    ensure(loc >= 0.9, || format!("localization {loc:.3} < 0.9; {summary}"))?;
    ensure(d.map > 0.3, || format!("unseen mAP {:.3} <= 0.3; {summary}", d.map))?;
    Ok(summary)
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 6] = [
        (1, "gradient fidelity", gradient_fidelity, Duration::from_secs(60)),
        (2, "equation oracles", equation_oracles, Duration::MAX),
        (3, "metric oracles", metric_oracles, Duration::MAX),
        (4, "architecture integrity", architecture_integrity, Duration::from_secs(120)),
        (5, "end-to-end desk-scale learning", end_to_end, Duration::from_secs(20 * 60)),
        (6, "protocol checks", protocol_checks, Duration::MAX),
    ];
    let mut failed = 0;
    for (n, name, check, budget) in criteria {
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(check)
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>())));
        let secs = start.elapsed();
        let result = result.and_then(|s| {
            if secs > budget {
                Err(format!("took {:.1}s, budget {:.0}s; {s}", secs.as_secs_f64(), budget.as_secs_f64()))
            } else {
                Ok(s)
            }
        });
        match result {
            Ok(detail) => println!("criterion {n} {name}: PASS ({:.1}s) {detail}", secs.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({:.1}s) {why}", secs.as_secs_f64());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Run with `cargo test --release -p ess-lab --test acceptance`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ess_core::augment::AugmentConfig;
use ess_core::encoder::{embed_images, Architecture};
use ess_core::env::dataset::{Dataset, ManifestRecord};
use ess_core::env::{default_palette, generate_floorplan, random_walk, replay, LightingPolicy, PlanParams};
use ess_core::ess::{
    find_positives, loss_baseline, loss_mb, loss_mw, momentum_blend, DictionaryQueue, LossConfig, LossMode, TrainConfig,
    Trainer, TrainingSet,
};
use ess_core::eval::localization::rotation_error;
use ess_core::eval::{
    cluster_metrics, linear_probe, localization_loss, localization_train_eval, split_dataset, LightingHoldout,
    LocalizationConfig, ProbeConfig,
};
use ess_core::gradcheck::{CaseKind, CaseResult};
use ess_core::image::RgbImage;
use ess_core::spatial::{Pose, SimilarityThreshold, WeightParams};
use ess_lab::config::RunConfig;
use ess_lab::pipeline::{self, RunRecord};
use ess_tensor::{checkpoint, ParameterSet};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    unit((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ess-lab"))
}

fn desk_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let out = bin().arg("gradcheck").output().map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let failures: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    // the suite itself, to read per-kind worst errors
    let cases: Vec<CaseResult> = ess_core::gradcheck::run_suite().map_err(|e| e.to_string())?;
    let worst = |k: CaseKind| cases.iter().filter(|c| c.kind == k).map(|c| c.max_rel_error).fold(0.0, f64::max);
    let (op, loss) = (worst(CaseKind::Op), worst(CaseKind::Loss));
    let mb = cases
        .iter()
        .filter(|c| c.name.contains("mb") || c.name.contains("micro"))
        .map(|c| c.max_rel_error)
        .fold(0.0, f64::max);
    check(
        out.status.success() && failures.is_empty() && secs < 60.0 && op < 1e-4 && loss < 1e-3 && mb < 1e-3,
        format!(
            "gradcheck exit {:?} in {secs:.1}s, {} cases, worst op rel err {op:.2e}, worst loss rel err {loss:.2e}, MB {mb:.2e}",
            out.status.code(),
            cases.len()
        ),
    )
}

fn walk_dataset(n: usize, seed: u64, res: usize) -> Dataset {
    let plan = generate_floorplan(7, &PlanParams::default()).unwrap();
    let palette = default_palette();
    let walk = random_walk(&plan, n, &Default::default(), seed).unwrap();
    let frames = replay(&plan, &walk, &LightingPolicy::Fixed { id: 0 }, &palette, res, res).unwrap();
    Dataset::from_frames(plan, palette, frames)
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tau = 0.2;
    let wp = WeightParams::default();

    // (a) positives all at the same pose offset from the query
    let mut worst_a: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..40);
        let dict: Vec<Vec<f64>> = (0..k).map(|_| random_unit(16, &mut rng)).collect();
        let refs: Vec<&[f64]> = dict.iter().map(Vec::as_slice).collect();
        let q = random_unit(16, &mut rng);
        let query = Pose::new(3.0, 4.0, 1.5, rng.random_range(0.0..360.0)).unwrap();
        let (r, dyaw) = (rng.random_range(0.0..1.0), rng.random_range(0.0..30.0));
        let mut positives = Vec::new();
        let poses: Vec<Pose> = (0..k)
            .map(|i| {
                let positive = i == 0 || rng.random_bool(0.4);
                if positive {
                    positives.push(i);
                    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                    Pose::new(query.x() + r * a.cos(), query.y() + r * a.sin(), 1.5, query.yaw() + sign * dyaw).unwrap()
                } else {
                    Pose::new(20.0, 20.0, 1.5, 0.0).unwrap()
                }
            })
            .collect();
        let mw = loss_mw(&q, &refs, &poses, &positives, &query, &wp, tau).unwrap();
        let mb = loss_mb(&q, &refs, &positives, tau).unwrap();
        worst_a = worst_a.max((mw - mb).abs());
    }

    // (b) a single positive that is the query's own key
    let mut worst_b: f64 = 0.0;
    for _ in 0..200 {
        let k = rng.random_range(2..40);
        let dict: Vec<Vec<f64>> = (0..k).map(|_| random_unit(16, &mut rng)).collect();
        let refs: Vec<&[f64]> = dict.iter().map(Vec::as_slice).collect();
        let q = random_unit(16, &mut rng);
        let s = rng.random_range(0..k);
        let others: Vec<&[f64]> = refs.iter().enumerate().filter(|&(i, _)| i != s).map(|(_, v)| *v).collect();
        let base = loss_baseline(&q, refs[s], &others, tau).unwrap();
        let mb = loss_mb(&q, &refs, &[s], tau).unwrap();
        worst_b = worst_b.max((base - mb).abs());
    }

    // (c) degenerate thresholds on a dataset with no coincident poses
    let ds = walk_dataset(512, 21, 32);
    let tiny = SimilarityThreshold::bounded(0.001, 0.001).unwrap();
    for i in 0..ds.len() {
        for j in 0..i {
            let (a, b) = (&ds.poses[i], &ds.poses[j]);
            let dp = ((a.x() - b.x()).powi(2) + (a.y() - b.y()).powi(2) + (a.z() - b.z()).powi(2)).sqrt();
            let dr = (a.yaw() - b.yaw()).abs();
            if dp < 0.01 && dr.min(360.0 - dr) < 0.01 {
                return Err(format!("frames {i} and {j} nearly coincide"));
            }
        }
    }
    let data = TrainingSet::from_dataset(&ds);
    // one epoch: later epochs meet keys of the same frames still queued
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 32,
        queue_size: 128,
        encoder_momentum: 0.99,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = |loss: LossConfig| -> Vec<f64> {
        let mut t = Trainer::new(Architecture::default(), loss, AugmentConfig::default(), cfg.clone()).unwrap();
        (0..cfg.epochs).flat_map(|_| t.train_epoch(&data).unwrap().batch_losses).collect()
    };
    let base = run(LossConfig::baseline());
    let mb = run(LossConfig::mb(tiny));
    let worst_c = base.iter().zip(&mb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        worst_a < 1e-10 && worst_b < 1e-10 && worst_c < 1e-6 && base.len() == mb.len() && !base.is_empty(),
        format!(
            "(a) MW vs MB max diff {worst_a:.1e}; (b) MB self-only vs baseline {worst_b:.1e}; (c) {} batch losses, max diff {worst_c:.1e}",
            base.len()
        ),
    )
}

fn criterion_3() -> Outcome {
    let plan = generate_floorplan(7, &PlanParams::default()).unwrap();
    let walk = random_walk(&plan, 500, &Default::default(), 3).unwrap();
    let poses: Vec<Pose> = walk.poses().copied().collect();
    let mut queue = DictionaryQueue::new(poses.len(), 2).unwrap();
    for (i, p) in poses.iter().enumerate() {
        queue.enqueue(vec![1.0, 0.0], *p, i as u64).unwrap();
    }
    let mut means = Vec::new();
    for (tp, tr) in [(0.6, 20.0), (1.2, 40.0), (2.4, 80.0)] {
        let thr = SimilarityThreshold::bounded(tp, tr).unwrap();
        let mut total = 0usize;
        for q in &poses {
            let found = find_positives(q, &queue, &thr).map_err(|e| e.to_string())?;
            let brute: Vec<usize> = poses
                .iter()
                .enumerate()
                .filter(|(_, k)| {
                    let dp = ((q.x() - k.x()).powi(2) + (q.y() - k.y()).powi(2) + (q.z() - k.z()).powi(2)).sqrt();
                    let d = (q.yaw() - k.yaw()).abs();
                    dp < tp && d.min(360.0 - d) < tr
                })
                .map(|(i, _)| i)
                .collect();
            if found != brute {
                return Err(format!("mismatch at thresholds ({tp}, {tr})"));
            }
            total += found.len();
        }
        means.push(total as f64 / poses.len() as f64);
    }
    check(
        means.windows(2).all(|w| w[0] <= w[1]),
        format!(
            "500 queries match brute force; mean positives {:.2} -> {:.2} -> {:.2} as thresholds double",
            means[0], means[1], means[2]
        ),
    )
}

fn mean_of(runs: &[RunRecord], mode: LossMode, key: &str) -> f64 {
    let v: Vec<f64> = runs.iter().filter(|r| r.mode == mode).map(|r| r.metrics[key]).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// The desk-scale baseline vs ESS-MB experiment shared by criteria 4 and 5.
fn desk_experiment() -> Result<(Vec<RunRecord>, f64), String> {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(
        Some(&desk_config()),
        &[format!("output_dir={}", toml::Value::String(dir.path().display().to_string()))],
    )
    .map_err(|e| e.to_string())?;
    pipeline::generate(&cfg).map_err(|e| e.to_string())?;
    let report = pipeline::report(&cfg, &mut |label, m| {
        if m.epoch + 1 == cfg.train.epochs {
            eprintln!(
                "  [{label}] final loss {:.4}, mean positives {:.2}",
                m.loss, m.mean_positives
            );
        }
    })
    .map_err(|e| e.to_string())?;
    Ok((report.runs, started.elapsed().as_secs_f64()))
}

fn criterion_4(exp: &Result<(Vec<RunRecord>, f64), String>) -> Outcome {
    let (runs, secs) = exp.as_ref().map_err(Clone::clone)?;
    let base = mean_of(runs, LossMode::Baseline, "probe_test_accuracy");
    let mb = mean_of(runs, LossMode::Mb, "probe_test_accuracy");
    let positives: f64 = runs.iter().filter(|r| r.mode == LossMode::Mb).map(|r| r.mean_positives).sum::<f64>()
        / runs.iter().filter(|r| r.mode == LossMode::Mb).count() as f64;
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| format!("{}-s{} {:.3}", r.mode.name(), r.seed, r.metrics["probe_test_accuracy"]))
        .collect();
    check(
        mb > base && *secs < 1800.0,
        format!(
            "holdout probe accuracy baseline {base:.4}, ESS-MB {mb:.4} (diff {:+.4}); MB mean positives {positives:.2}; {secs:.0}s; [{}]",
            mb - base,
            per_seed.join(", ")
        ),
    )
}

fn criterion_5(exp: &Result<(Vec<RunRecord>, f64), String>) -> Outcome {
    // angle error wraps through 0/360
    let t = Pose::new(1.0, 2.0, 1.5, 359.0).unwrap();
    let alpha = 1.0 / 360.0;
    let wrap_cases = [(1.0, 2.0), (359.0, 0.0), (179.0, 180.0), (181.0, 178.0), (719.0, 0.0), (-1.0, 0.0)];
    for (pred_yaw, expected) in wrap_cases {
        let (l, lp, lr) = localization_loss([1.0, 2.0, 1.5, pred_yaw], &t, alpha);
        if lr != expected || lp != 0.0 || l != alpha * expected * expected {
            return Err(format!("L_rot({pred_yaw}, 359) = {lr}, expected {expected}"));
        }
    }
    let a = Pose::new(0.0, 0.0, 0.0, 350.0).unwrap();
    let b = Pose::new(0.0, 0.0, 0.0, 10.0).unwrap();
    if rotation_error(&a, &b) != 20.0 {
        return Err("rotation error across 0 is not 20".into());
    }
    let (runs, _) = exp.as_ref().map_err(Clone::clone)?;
    let base = mean_of(runs, LossMode::Baseline, "loc_position_error");
    let mb = mean_of(runs, LossMode::Mb, "loc_position_error");
    let base_rot = mean_of(runs, LossMode::Baseline, "loc_rotation_error");
    let mb_rot = mean_of(runs, LossMode::Mb, "loc_rotation_error");
    check(
        mb <= base,
        format!(
            "L_rot wraparound exact; fine-tuned position error baseline {base:.3} m, ESS-MB {mb:.3} m (rotation {base_rot:.1} vs {mb_rot:.1} deg)"
        ),
    )
}

fn random_image(res: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_raw(res, res, (0..res * res * 3).map(|_| rng.random()).collect()).unwrap()
}

fn records(n: usize, seed: u64) -> Vec<ManifestRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| ManifestRecord {
            step: i as u64,
            x: i as f64 * 0.05,
            y: 1.0,
            z: 1.5,
            yaw: 0.0,
            lighting_id: 0,
            image_path: format!("frames/{i:06}.ppm"),
            room_label: (rng.random_range(0..5) != 0).then(|| format!("room_{}", rng.random_range(0..4))),
        })
        .collect()
}

fn cases(n: u32) -> Config {
    Config {
        cases: n,
        failure_persistence: None,
        ..Config::default()
    }
}

fn criterion_6() -> Outcome {
    let mut runner = TestRunner::new(cases(48));
    let mut done = Vec::new();
    let mut prop = |name: &str, r: Result<(), String>| -> Result<(), String> {
        r.map_err(|e| format!("{name}: {e}"))?;
        done.push(name.to_string());
        Ok(())
    };

    prop(
        "queue FIFO/capacity",
        runner
            .run(&(1usize..40, 0usize..120), |(cap, n)| {
                let mut q = DictionaryQueue::new(cap, 2).unwrap();
                for i in 0..n {
                    q.enqueue(vec![0.0, 1.0], Pose::new(i as f64, 0.0, 0.0, 0.0).unwrap(), i as u64).unwrap();
                    prop_assert!(q.len() <= cap);
                }
                prop_assert_eq!(q.len(), n.min(cap));
                let frames: Vec<u64> = q.iter().map(|e| e.frame).collect();
                let expect: Vec<u64> = (n.saturating_sub(cap) as u64..n as u64).collect();
                prop_assert_eq!(frames, expect);
                prop_assert!(q.enqueue(vec![0.5, 0.5], Pose::new(0.0, 0.0, 0.0, 0.0).unwrap(), 0).is_err());
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;

    prop(
        "unit-norm keys",
        runner
            .run(&(any::<u64>(), 1usize..5), |(seed, n)| {
                let arch = Architecture::default();
                let params = arch.init::<f32>(seed).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let imgs: Vec<RgbImage> = (0..n).map(|_| random_image(arch.resolution, &mut rng)).collect();
                let refs: Vec<&RgbImage> = imgs.iter().collect();
                for k in embed_images(&params, &refs).unwrap() {
                    let norm = k.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                    prop_assert!((norm - 1.0).abs() < 1e-5, "norm {}", norm);
                }
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;

    let mut small = TestRunner::new(cases(6));
    prop(
        "frozen-probe byte identity",
        small
            .run(&any::<u64>(), |seed| {
                let arch = Architecture::default();
                let params = arch.init::<f32>(seed).unwrap();
                let before = checkpoint::encode(&arch.descriptor(), &params);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let imgs: Vec<RgbImage> = (0..12).map(|_| random_image(arch.resolution, &mut rng)).collect();
                let refs: Vec<&RgbImage> = imgs.iter().collect();
                let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
                let cfg = ProbeConfig {
                    epochs: 3,
                    ..ProbeConfig::default()
                };
                linear_probe(&params, (&refs[..8], &labels[..8]), (&refs[8..], &labels[8..]), 3, &cfg).unwrap();
                let poses: Vec<Pose> = (0..12).map(|i| Pose::new(i as f64, 1.0, 1.5, 10.0 * i as f64).unwrap()).collect();
                for fine_tune in [false, true] {
                    let lc = LocalizationConfig {
                        epochs: 1,
                        fine_tune,
                        ..LocalizationConfig::default()
                    };
                    localization_train_eval(&params, (&refs[..8], &poses[..8]), (&refs[8..], &poses[8..]), &lc).unwrap();
                }
                prop_assert_eq!(before, checkpoint::encode(&arch.descriptor(), &params));
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;

    prop(
        "momentum identities",
        small
            .run(&(any::<u64>(), any::<u64>()), |(a, b)| {
                let arch = Architecture::default();
                let query: ParameterSet<f32> = arch.init(a).unwrap();
                let key: ParameterSet<f32> = arch.init(b).unwrap();
                let mut k0 = key.clone();
                momentum_blend(&mut k0, &query, 0.0).unwrap();
                prop_assert_eq!(&k0, &query);
                let mut k1 = key.clone();
                momentum_blend(&mut k1, &query, 1.0).unwrap();
                prop_assert_eq!(&k1, &key);
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;

    prop(
        "split determinism and holdout exclusivity",
        runner
            .run(&(any::<u64>(), any::<u64>(), 20usize..300), |(data_seed, split_seed, n)| {
                let recs = records(n, data_seed);
                let variants: Vec<u16> = (1..10).collect();
                let holdout = LightingHoldout::new(&[4, 7], &variants).unwrap();
                let a = split_dataset(&recs, 0.8, split_seed, true, Some(&holdout)).unwrap();
                let b = split_dataset(&recs, 0.8, split_seed, true, Some(&holdout)).unwrap();
                prop_assert_eq!(&a, &b);
                prop_assert!(a.test.iter().all(|it| it.lighting == 4 || it.lighting == 7));
                prop_assert!(a.train.iter().all(|it| it.lighting != 4 && it.lighting != 7));
                let mut seen: Vec<usize> = a.train.iter().chain(&a.test).map(|it| it.index).collect();
                seen.sort_unstable();
                seen.dedup();
                prop_assert_eq!(seen.len(), a.train.len() + a.test.len());
                Ok(())
            })
            .map_err(|e| e.to_string()),
    )?;

    Ok(format!("{} property groups hold: {}", done.len(), done.join(", ")))
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_7() -> Outcome {
    let settings = [
        "env.steps=240",
        "env.eval_walk_seed=18",
        "train.epochs=2",
        "train.batch_size=32",
        "train.queue_size=64",
        "loss.mode=\"mb\"",
        "loss.threshold.position.below=1.2",
        "loss.threshold.rotation.below=40",
        "pretext.lighting_ids=[1,2]",
        "eval.lighting_holdout=[4,7]",
        "eval.probe.epochs=5",
        "eval.localization.epochs=2",
    ];
    let roots: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for root in &roots {
        for cmd in ["generate", "train", "eval"] {
            let mut c = bin();
            c.arg(cmd).arg("--output-dir").arg(root.path());
            for s in settings {
                c.arg("--set").arg(s);
            }
            let out = c.output().map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!("{cmd} failed: {}", String::from_utf8_lossy(&out.stderr)));
            }
        }
    }
    let (a, b) = (roots[0].path(), roots[1].path());
    let files = files_under(a);
    if files != files_under(b) {
        return Err("the two runs wrote different file sets".into());
    }
    let mut compared = 0;
    for f in &files {
        // the training log records wall-clock time per epoch
        if f.ends_with(pipeline::TRAIN_LOG) || f.ends_with(ess_lab::config::RESOLVED_CONFIG) || f.ends_with(pipeline::EVAL_CONFIG) {
            continue;
        }
        if fs::read(a.join(f)).unwrap() != fs::read(b.join(f)).unwrap() {
            return Err(format!("{} differs", f.display()));
        }
        compared += 1;
    }
    let must = ["dataset/manifest.jsonl", "runs/run/checkpoint.bin", "runs/run/eval.json"];
    let missing: Vec<&str> = must.iter().copied().filter(|m| !files.iter().any(|f| f == Path::new(m))).collect();
    check(
        missing.is_empty(),
        format!("generate + train + eval twice: {compared} files byte-identical (manifests, frames, checkpoint, reports)"),
    )
}

fn brute_cluster(points: &[Vec<f64>], labels: &[usize]) -> (f64, f64, f64) {
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n = points.len();
    let k = labels.iter().max().unwrap() + 1;
    let members = |c: usize| (0..n).filter(|&i| labels[i] == c).collect::<Vec<_>>();
    let mut sil = 0.0;
    for i in 0..n {
        let mean_to = |c: usize| {
            let m: Vec<usize> = members(c).into_iter().filter(|&j| j != i).collect();
            m.iter().map(|&j| d(&points[i], &points[j])).sum::<f64>() / m.len() as f64
        };
        let a = mean_to(labels[i]);
        let b = (0..k).filter(|&c| c != labels[i]).map(mean_to).fold(f64::INFINITY, f64::min);
        sil += (b - a) / a.max(b);
    }
    sil /= n as f64;
    let dim = points[0].len();
    let mean = |idx: &[usize]| (0..dim).map(|t| idx.iter().map(|&i| points[i][t]).sum::<f64>() / idx.len() as f64).collect::<Vec<_>>();
    let all: Vec<usize> = (0..n).collect();
    let g = mean(&all);
    let cents: Vec<Vec<f64>> = (0..k).map(|c| mean(&members(c))).collect();
    let between: f64 = (0..k).map(|c| members(c).len() as f64 * d(&cents[c], &g).powi(2)).sum();
    let within: f64 = (0..n).map(|i| d(&points[i], &cents[labels[i]]).powi(2)).sum();
    let ch = (between / (k - 1) as f64) / (within / (n - k) as f64);
    let s: Vec<f64> = (0..k)
        .map(|c| {
            let m = members(c);
            m.iter().map(|&i| d(&points[i], &cents[c])).sum::<f64>() / m.len() as f64
        })
        .collect();
    let db = (0..k)
        .map(|i| (0..k).filter(|&j| j != i).map(|j| (s[i] + s[j]) / d(&cents[i], &cents[j])).fold(f64::MIN, f64::max))
        .sum::<f64>()
        / k as f64;
    (sil, ch, db)
}

fn criterion_8() -> Outcome {
    let mut worst: f64 = 0.0;
    let fixtures = [(200, 4, 8, 1.5), (60, 3, 2, 0.5), (12, 2, 5, 4.0), (150, 6, 3, 2.0), (199, 5, 16, 3.0)];
    for (seed, &(n, k, dim, spread)) in fixtures.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(80 + seed as u64);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let points: Vec<Vec<f64>> = labels
            .iter()
            .map(|&c| centers[c].iter().map(|v| v + spread * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let r = cluster_metrics(&points, &labels).map_err(|e| e.to_string())?;
        let (sil, ch, db) = brute_cluster(&points, &labels);
        worst = worst
            .max((r.silhouette - sil).abs())
            .max((r.calinski_harabasz - ch).abs() / ch.max(1.0))
            .max((r.davies_bouldin - db).abs());
    }
    check(
        worst < 1e-8,
        format!("{} fixtures up to 200 points, worst deviation from brute force {worst:.1e}", fixtures.len()),
    )
}

fn report(n: u32, name: &str, outcome: &Outcome, secs: f64) -> bool {
    let (tag, detail) = match outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("criterion {n} {tag}: {name} ({secs:.1}s) {detail}");
    outcome.is_ok()
}

fn timed(f: impl FnOnce() -> Outcome) -> (Outcome, f64) {
    let started = Instant::now();
    let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    (r, started.elapsed().as_secs_f64())
}

fn main() {
    let mut ok = true;
    let (r, s) = timed(criterion_1);
    ok &= report(1, "gradient suite", &r, s);
    let (r, s) = timed(criterion_2);
    ok &= report(2, "reduction oracles", &r, s);
    let (r, s) = timed(criterion_3);
    ok &= report(3, "positive mining", &r, s);
    let started = Instant::now();
    let exp = desk_experiment();
    let secs = started.elapsed().as_secs_f64();
    let (r, _) = timed(|| criterion_4(&exp));
    ok &= report(4, "held-out lighting probe", &r, secs);
    let (r, s) = timed(|| criterion_5(&exp));
    ok &= report(5, "fine-tuned localization", &r, s);
    let (r, s) = timed(criterion_6);
    ok &= report(6, "structural invariants", &r, s);
    let (r, s) = timed(criterion_7);
    ok &= report(7, "pipeline determinism", &r, s);
    let (r, s) = timed(criterion_8);
    ok &= report(8, "cluster metrics", &r, s);
    if !ok {
        std::process::exit(1);
    }
}

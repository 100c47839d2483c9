//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits nonzero if any fails. Pass criterion ids (`C1`..`C9`) as arguments
//! to run a subset.

use std::collections::{HashSet, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use cdaseg::eval::{
    accumulate_confusion, evaluate_model, iou_from_confusion, prepare, run_ablation_with,
    table1_with, worker_threads, ConfusionCounts, ExperimentConfig, ReportTable, UNDEFINED_IOU,
};
use cdaseg::labeldist::{
    chi2_distance, cross_entropy, dist_from_mask, dist_from_prediction, entropy, LabelDistribution,
};
use cdaseg::raster::{Image, LabelMask, VOID};
use cdaseg::scenegen::{generate_scene, preset_source, preset_target};
use cdaseg::seeded_rng;
use cdaseg::segnet::gradcheck::{run_gradcheck, GradcheckConfig};
use cdaseg::segnet::{forward, init_model, loss_and_grad, train, Regime, TargetItem, TrainConfig};
use cdaseg::superpix::{slic, SlicParams};

// disjoint from the seeds the synthetic presets were tuned on
const SEEDS: [u64; 5] = [101, 102, 103, 104, 105];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn random_mask(
    rng: &mut impl Rng,
    w: usize,
    h: usize,
    classes: usize,
    void_rate: f64,
) -> LabelMask {
    let labels = (0..w * h)
        .map(|_| {
            if rng.random::<f64>() < void_rate {
                VOID
            } else {
                rng.random_range(0..classes) as u8
            }
        })
        .collect();
    LabelMask::new(w, h, classes, labels).unwrap()
}

fn random_simplex(rng: &mut impl Rng, classes: usize, zero_rate: f64) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..classes)
            .map(|_| {
                if rng.random::<f64>() < zero_rate {
                    0.0
                } else {
                    Exp1.sample(rng)
                }
            })
            .collect();
        let sum: f64 = w.iter().sum();
        if sum > 0.0 {
            return w.iter().map(|v| v / sum).collect();
        }
    }
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let cfg = GradcheckConfig::default();
    let report = run_gradcheck(11, &cfg).unwrap();
    let elapsed = start.elapsed();
    let regimes: HashSet<Regime> = report.probes.iter().map(|p| p.regime).collect();
    let kinks: usize = report.probes.iter().map(|p| p.kinks_skipped).sum();
    let max_err = report.max_rel_err();
    verdict(
        report.probes.len() >= 20 && regimes.len() == 4 && max_err <= 1e-3 && elapsed <= Duration::from_secs(120),
        format!(
            "{} probes over {} regimes, max rel err {max_err:.3e} (tol 1e-3), {kinks} kink coords redrawn, {:.1}s (limit 120s)",
            report.probes.len(),
            regimes.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn c2_distributions() -> Verdict {
    let mut rng = seeded_rng(2, 0);
    let mut mask_mismatch = 0;
    for _ in 0..100 {
        let classes = rng.random_range(2..=12);
        let (w, h) = (rng.random_range(1..=40), rng.random_range(1..=40));
        let mut mask = random_mask(&mut rng, w, h, classes, 0.15);
        if mask.labels().iter().all(|&l| l == VOID) {
            let mut labels = mask.labels().to_vec();
            labels[0] = 0;
            mask = LabelMask::new(w, h, classes, labels).unwrap();
        }
        let got = dist_from_mask(&mask).unwrap();
        let labeled = mask.labels().iter().filter(|&&l| l != VOID).count();
        let expect: Vec<f64> = (0..classes)
            .map(|c| {
                mask.labels().iter().filter(|&&l| l == c as u8).count() as f64 / labeled as f64
            })
            .collect();
        if got.probs() != expect.as_slice() {
            mask_mismatch += 1;
        }
    }

    let (mut gibbs_min, mut asym_max, mut chi2_max, mut self_max) =
        (f64::INFINITY, 0.0f64, 0.0f64, 0.0f64);
    let mut zero_for_distinct = 0;
    for _ in 0..10_000 {
        let classes = rng.random_range(2..=10);
        let p = LabelDistribution::new(random_simplex(&mut rng, classes, 0.2)).unwrap();
        let q = LabelDistribution::new(random_simplex(&mut rng, classes, 0.2)).unwrap();
        gibbs_min = gibbs_min.min(cross_entropy(&p, &q) - entropy(&p));
        let (pq, qp) = (chi2_distance(&p, &q), chi2_distance(&q, &p));
        asym_max = asym_max.max((pq - qp).abs());
        chi2_max = chi2_max.max(pq);
        self_max = self_max.max(chi2_distance(&p, &p));
        if p != q && pq <= 0.0 {
            zero_for_distinct += 1;
        }
    }
    verdict(
        mask_mismatch == 0
            && gibbs_min >= -1e-9
            && asym_max == 0.0
            && chi2_max <= 1.0
            && self_max == 0.0
            && zero_for_distinct == 0,
        format!(
            "{mask_mismatch}/100 masks differ from pixel counts; min CE-H {gibbs_min:.3e}; chi2 max asym {asym_max:.1e}, \
             max {chi2_max:.4}, max self {self_max:.1e}, {zero_for_distinct} zero for distinct pairs"
        ),
    )
}

/// Per-seed numbers shared by criteria 3, 4 and 5.
struct SeedRun {
    chi2: Vec<(String, f64)>,
    iou: Vec<(String, f64)>,
    sp_all: f64,
    sp_landmarks: f64,
    table1_time: Duration,
    total_time: Duration,
}

fn value(rows: &[(String, f64)], name: &str) -> f64 {
    rows.iter()
        .find(|(n, _)| n == name)
        .unwrap_or_else(|| panic!("row {name}"))
        .1
}

fn rows_of(table: &ReportTable) -> Vec<(String, f64)> {
    table
        .rows
        .iter()
        .map(|r| (r.method.clone(), r.values[0]))
        .collect()
}

fn desk_scale_run(seed: u64) -> SeedRun {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = seed;
    let start = Instant::now();
    let prep = prepare(&cfg).unwrap();
    let prepared = start.elapsed();
    let t = Instant::now();
    let noadapt = prep.train(Regime::NoAdapt).unwrap();
    let noadapt_time = t.elapsed();
    let t = Instant::now();
    let table1 = table1_with(&prep, &noadapt).unwrap();
    let table1_time = prepared + noadapt_time + t.elapsed();
    let t = Instant::now();
    let ablation = run_ablation_with(&prep, Some(noadapt), &mut |_| Ok(())).unwrap();
    let total_time = prepared + noadapt_time + t.elapsed();
    let run = SeedRun {
        chi2: rows_of(&table1),
        iou: rows_of(&ablation.table),
        sp_all: ablation.sp_accuracy.all,
        sp_landmarks: ablation.sp_accuracy.landmarks,
        table1_time,
        total_time,
    };
    let fmt = |rows: &[(String, f64)], prec: usize| {
        rows.iter()
            .map(|(n, v)| format!("{n} {v:.prec$}"))
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("  seed {seed}: chi2 [{}]", fmt(&run.chi2, 4));
    println!("  seed {seed}: mIoU [{}]", fmt(&run.iou, 2));
    println!(
        "  seed {seed}: sp accuracy all {:.3} landmarks {:.3}; {:.0}s",
        run.sp_all,
        run.sp_landmarks,
        run.total_time.as_secs_f64()
    );
    run
}

fn c3_table1(runs: &[SeedRun]) -> Verdict {
    let med = |name: &str| {
        median(
            &runs
                .iter()
                .map(|r| value(&r.chi2, name))
                .collect::<Vec<_>>(),
        )
    };
    let (lr, knn, mean, uniform) = (med("LR"), med("kNN"), med("Source mean"), med("Uniform"));
    let time: Duration = runs.iter().map(|r| r.table1_time).sum();
    let chain = lr <= knn + 0.05 && knn + 0.05 <= mean + 0.05 && mean + 0.05 <= uniform;
    verdict(
        chain && time <= Duration::from_secs(600),
        format!(
            "median chi2 LR {lr:.4} <= kNN+0.05 {:.4} <= SrcMean+0.05 {:.4} <= Uniform {uniform:.4} (NoAdapt {:.4}); {:.0}s (limit 600s)",
            knn + 0.05,
            mean + 0.05,
            med("NoAdapt"),
            time.as_secs_f64()
        ),
    )
}

fn c4_adaptation(runs: &[SeedRun]) -> Verdict {
    let med = |name: &str| median(&runs.iter().map(|r| value(&r.iou, name)).collect::<Vec<_>>());
    let (noadapt, img, sp, both) = (
        med("NoAdapt"),
        med("Ours(I)"),
        med("Ours(SP)"),
        med("Ours(I+SP)"),
    );
    let time: Duration = runs.iter().map(|r| r.total_time).sum();
    verdict(
        both - noadapt >= 2.0 && both >= img.max(sp) - 0.5 && time <= Duration::from_secs(1800),
        format!(
            "median mIoU Ours(I+SP) {both:.2} vs NoAdapt {noadapt:.2} (gain {:.2}, need 2), Ours(I) {img:.2}, Ours(SP) {sp:.2} \
             (need >= {:.2}); SP {:.2}, SP Lndmk {:.2}; {:.0}s (limit 1800s)",
            both - noadapt,
            img.max(sp) - 0.5,
            med("SP"),
            med("SP Lndmk"),
            time.as_secs_f64()
        ),
    )
}

fn c5_landmarks(runs: &[SeedRun]) -> Verdict {
    let all = median(&runs.iter().map(|r| r.sp_all).collect::<Vec<_>>());
    let lm = median(&runs.iter().map(|r| r.sp_landmarks).collect::<Vec<_>>());
    verdict(
        lm - all >= 0.05,
        format!(
            "median accuracy landmarks {:.1}% vs all superpixels {:.1}% (gap {:.1} points, need 5)",
            100.0 * lm,
            100.0 * all,
            100.0 * (lm - all)
        ),
    )
}

/// Ours(I+SP) on seed 0 at other source weights; informational only.
fn gamma_sweep(at_half: f64) {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = SEEDS[0];
    let mut prep = prepare(&cfg).unwrap();
    let mut line = Vec::new();
    for gamma in [0.25, 0.5, 0.75] {
        let iou = if gamma == 0.5 {
            at_half
        } else {
            prep.cfg.train.gamma = gamma;
            100.0
                * evaluate_model(&prep.train(Regime::ImageSuperpixel).unwrap(), &prep.val)
                    .unwrap()
                    .mean_iou
        };
        line.push(format!("gamma {gamma}: {iou:.2}"));
    }
    println!(
        "[INFO] Ours(I+SP) mIoU on seed {} by gamma: {}",
        SEEDS[0],
        line.join(", ")
    );
}

/// Number of 4-connected pieces of every label, by breadth-first flood fill.
fn pieces_per_label(w: usize, h: usize, labels: &[u32], k: usize) -> Vec<usize> {
    let mut seen = vec![false; w * h];
    let mut pieces = vec![0; k];
    for start in 0..w * h {
        if seen[start] {
            continue;
        }
        let label = labels[start];
        pieces[label as usize] += 1;
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            let mut next = Vec::with_capacity(4);
            if r > 0 {
                next.push(i - w);
            }
            if r + 1 < h {
                next.push(i + w);
            }
            if c > 0 {
                next.push(i - 1);
            }
            if c + 1 < w {
                next.push(i + 1);
            }
            for j in next {
                if !seen[j] && labels[j] == label {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    pieces
}

fn c6_superpixels() -> Verdict {
    let mut rng = seeded_rng(6, 0);
    let (mut uncovered, mut disconnected, mut off_count, mut worst) = (0, 0, 0, 0.0f64);
    for i in 0..100 {
        let (w, h) = (rng.random_range(24..=80), rng.random_range(24..=80));
        let img = match i % 3 {
            0 => {
                generate_scene(&preset_source(), w, h, rng.random())
                    .unwrap()
                    .image
            }
            1 => {
                generate_scene(&preset_target(), w, h, rng.random())
                    .unwrap()
                    .image
            }
            _ => Image::new(w, h, 3, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap(),
        };
        let k = rng.random_range(8..=120);
        let part = slic(
            &img,
            &SlicParams {
                k,
                ..SlicParams::default()
            },
        )
        .unwrap();
        let got = part.num_superpixels();
        let labels = part.assignment();
        let mut sizes = vec![0usize; got];
        let mut covered = labels.len() == w * h;
        for &l in labels {
            match sizes.get_mut(l as usize) {
                Some(s) => *s += 1,
                None => covered = false,
            }
        }
        if !covered || sizes.contains(&0) {
            uncovered += 1;
            continue;
        }
        if pieces_per_label(w, h, labels, got).iter().any(|&p| p != 1) {
            disconnected += 1;
        }
        let rel = (got as f64 - k as f64).abs() / k as f64;
        worst = worst.max(rel);
        if rel > 0.2 {
            off_count += 1;
        }
    }
    verdict(
        uncovered == 0 && disconnected == 0 && off_count == 0,
        format!(
            "100 images: {uncovered} not covering, {disconnected} with disconnected superpixels, \
             {off_count} outside 20% of K (worst {:.1}%)",
            100.0 * worst
        ),
    )
}

const SMALL_CONFIG: &str = "\
data.width=24
data.height=24
data.n_source=12
data.n_target=6
data.n_val=4
superpix.k=16
lr.epochs=30
train.epochs=2
train.arch=tiny
train.noadapt_batch_source=6
seed=5
";

fn c7_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("small.cfg");
    std::fs::write(&cfg_path, SMALL_CONFIG).unwrap();
    let run = |out: &Path| -> Result<Vec<u8>, String> {
        let status = Command::new(env!("CARGO_BIN_EXE_cdaseg"))
            .arg("--config")
            .arg(&cfg_path)
            .arg("ablation")
            .arg("--out")
            .arg(out)
            .env("RUST_LOG", "warn")
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!(
                "exit {:?}: {}",
                status.status.code(),
                String::from_utf8_lossy(&status.stderr)
            ));
        }
        std::fs::read(out.join("ablation.csv")).map_err(|e| e.to_string())
    };
    match (run(&dir.path().join("a")), run(&dir.path().join("b"))) {
        (Ok(a), Ok(b)) => {
            let rows = String::from_utf8_lossy(&a)
                .lines()
                .filter(|l| !l.starts_with('#'))
                .count()
                - 1;
            verdict(
                a == b && rows == 6,
                format!(
                    "two CLI ablation runs: {} and {} bytes, identical: {}, {rows} rows",
                    a.len(),
                    b.len(),
                    a == b
                ),
            )
        }
        (a, b) => verdict(
            false,
            format!("CLI ablation failed: {:?} / {:?}", a.err(), b.err()),
        ),
    }
}

fn c8_iou() -> Verdict {
    let mut rng = seeded_rng(8, 0);
    let mut worst = 0.0f64;
    let mut sentinel_mismatch = 0;
    for _ in 0..50 {
        let classes = rng.random_range(2..=9);
        let (w, h) = (rng.random_range(1..=30), rng.random_range(1..=30));
        let truth = random_mask(&mut rng, w, h, classes, 0.1);
        let pred = random_mask(&mut rng, w, h, classes, 0.05);
        let mut counts = ConfusionCounts::new(classes);
        accumulate_confusion(&pred, &truth, &mut counts).unwrap();
        let m = iou_from_confusion(&counts);
        let mut defined = Vec::new();
        for c in 0..classes {
            let c8 = c as u8;
            let in_truth: HashSet<usize> =
                (0..w * h).filter(|&i| truth.labels()[i] == c8).collect();
            let in_pred: HashSet<usize> = (0..w * h)
                .filter(|&i| pred.labels()[i] == c8 && truth.labels()[i] != VOID)
                .collect();
            let union = in_truth.union(&in_pred).count();
            if union == 0 {
                if m.per_class_iou[c] != UNDEFINED_IOU {
                    sentinel_mismatch += 1;
                }
                continue;
            }
            let iou = in_truth.intersection(&in_pred).count() as f64 / union as f64;
            defined.push(iou);
            worst = worst.max((iou - m.per_class_iou[c]).abs());
        }
        let mean = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        worst = worst.max((mean - m.mean_iou).abs());
    }
    verdict(
        worst <= 1e-12 && sentinel_mismatch == 0,
        format!("50 random pairs: max |IoU - set oracle| {worst:.1e} (tol 1e-12), {sentinel_mismatch} sentinel mismatches"),
    )
}

fn c9_decomposition() -> Verdict {
    let mut cfg = ExperimentConfig::parse(SMALL_CONFIG).unwrap();
    cfg.seed = 9;
    let prep = prepare(&cfg).unwrap();
    let c = cfg.num_classes();
    let source = prep.source.labeled().unwrap();
    let props: Vec<_> = prep
        .target_props
        .iter()
        .map(|p| p.for_regime(Regime::ImageSuperpixel).unwrap())
        .collect();
    let items: Vec<TargetItem> = prep
        .target
        .items
        .iter()
        .zip(&props)
        .map(|(s, props)| TargetItem {
            image: &s.image,
            props,
        })
        .collect();
    let model = init_model("small", 3, c, 4).unwrap();

    // independent reconstruction of both terms from the forward pass
    let src_oracle = source[..4]
        .iter()
        .map(|(img, mask)| {
            let pred = forward(&model, img).unwrap();
            let labeled: Vec<(usize, usize)> = (0..mask.num_pixels())
                .filter_map(|i| mask.class_of(i).map(|k| (i, k)))
                .collect();
            labeled
                .iter()
                .map(|&(i, k)| -pred.pixel(i)[k].max(1e-12).ln())
                .sum::<f64>()
                / labeled.len() as f64
        })
        .sum::<f64>()
        / 4.0;
    let tgt_oracle = items[..3]
        .iter()
        .map(|t| {
            let pred = forward(&model, t.image).unwrap();
            let img_term = cross_entropy(
                t.props.image_dist.as_ref().unwrap(),
                &dist_from_prediction(&pred, None).unwrap(),
            );
            let regions = t.props.landmarks.as_ref().unwrap();
            let sp_term = regions
                .iter()
                .map(|r| {
                    cross_entropy(
                        &r.dist,
                        &dist_from_prediction(&pred, Some(&r.pixels)).unwrap(),
                    )
                })
                .sum::<f64>()
                / regions.len() as f64;
            img_term + sp_term
        })
        .sum::<f64>()
        / 3.0;

    let mut worst = 0.0f64;
    for gamma in [0.0, 0.3, 1.0] {
        let mut tcfg = TrainConfig::for_regime(Regime::ImageSuperpixel);
        tcfg.gamma = gamma;
        let (terms, _) = loss_and_grad(&model, &source[..4], &items[..3], &tcfg).unwrap();
        worst =
            worst.max((terms.total - (gamma * terms.source + (1.0 - gamma) * terms.target)).abs());
        worst = worst.max((terms.source - src_oracle).abs());
        worst = worst.max((terms.target - tgt_oracle).abs());
    }

    let mut base = TrainConfig::for_regime(Regime::NoAdapt);
    base.arch = "tiny".into();
    base.epochs = 2;
    base.batch_source = 4;
    base.seed = 3;
    let plain = train(&base, &prep.source, &[]).unwrap();
    let mut adapted = base.clone();
    adapted.regime = Regime::ImageSuperpixel;
    adapted.gamma = 1.0;
    adapted.batch_target = 3;
    let pinned = train(&adapted, &prep.source, &items).unwrap();
    let same_params = plain.model.params.len() == pinned.model.params.len()
        && plain
            .model
            .params
            .iter()
            .zip(&pinned.model.params)
            .all(|(a, b)| a.to_bits() == b.to_bits());
    let same_history = plain.history.len() == pinned.history.len()
        && plain.history.iter().zip(&pinned.history).all(|(a, b)| {
            a.terms.source.to_bits() == b.terms.source.to_bits()
                && a.terms.total.to_bits() == b.terms.total.to_bits()
        });
    verdict(
        worst <= 1e-9 && same_params && same_history,
        format!(
            "gamma 0/0.3/1: max deviation {worst:.1e} (tol 1e-9, includes independent term oracles); \
             gamma=1 vs NoAdapt trajectories bit-identical: params {same_params}, losses {same_history}"
        ),
    )
}

fn main() {
    let wanted: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let run = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w.eq_ignore_ascii_case(id));
    println!("acceptance: {} worker thread(s)", worker_threads());

    let mut verdicts: Vec<(&str, &str, Verdict)> = Vec::new();
    let mut check = |id: &'static str, name: &'static str, f: &dyn Fn() -> Verdict| {
        if run(id) {
            let v = f();
            println!(
                "[{}] {id} {name}: {}",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            );
            verdicts.push((id, name, v));
        }
    };
    check("C1", "gradient oracle", &c1_gradients);
    check("C2", "distribution math", &c2_distributions);
    check("C6", "superpixel invariants", &c6_superpixels);
    check("C7", "ablation determinism", &c7_determinism);
    check("C8", "IoU oracle", &c8_iou);
    check("C9", "loss decomposition", &c9_decomposition);
    if run("C3") || run("C4") || run("C5") {
        let runs: Vec<SeedRun> = SEEDS.iter().map(|&s| desk_scale_run(s)).collect();
        check("C3", "Table 1 ordering", &|| c3_table1(&runs));
        check("C4", "adaptation gain", &|| c4_adaptation(&runs));
        check("C5", "landmark accuracy", &|| c5_landmarks(&runs));
        if wanted.is_empty() {
            gamma_sweep(value(&runs[0].iou, "Ours(I+SP)"));
        }
    }

    verdicts.sort_by_key(|(id, ..)| *id);
    println!("summary:");
    for (id, name, v) in &verdicts {
        println!("[{}] {id} {name}", if v.pass { "PASS" } else { "FAIL" });
    }
    let failed = verdicts.iter().filter(|(.., v)| !v.pass).count();
    println!(
        "{} of {} criteria passed",
        verdicts.len() - failed,
        verdicts.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}

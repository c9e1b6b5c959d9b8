//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints exactly one PASS/FAIL line, even when an earlier one fails.

use std::f64::consts::{LN_2, PI};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hsmargin::eval::{auc, auc_x, roc};
use hsmargin::geometry::{normalize_weights, FnScheme};
use hsmargin::loss::{angular_loss, loss_forward};
use hsmargin::trainer::binary_margin_experiment;
use hsmargin::{Angle, Family, LossConfig, MarginSpec, Matrix};
use hsmargin_cli::commands;
use hsmargin_cli::config::RunConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type DeltaRow = (MarginSpec, Box<dyn Fn(f64) -> f64>);
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    ensure(
        elapsed < limit,
        format!("{detail}, {:.2?} (limit {limit:?})", elapsed),
    )
}

fn angle(t: f64) -> Angle {
    Angle::new(t).unwrap()
}

fn margin_principle() -> Outcome {
    let start = Instant::now();
    let n = 10_000;
    let (lo, hi) = (0.001, PI - 0.001);
    let mut worst = f64::INFINITY;
    for family in [
        Family::SphereFace,
        Family::SphereFaceRv1,
        Family::SphereFaceRv2,
    ] {
        for m in [1.1, 1.4, 2.0] {
            let spec = MarginSpec::new(family, m).unwrap();
            for i in 0..n {
                let t = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                let d = spec.characteristic_delta(angle(t)).unwrap();
                if d.is_nan() || d <= 0.0 {
                    return Err(format!("{spec}: delta({t}) = {d}"));
                }
                worst = worst.min(d);
            }
        }
    }
    for m in [1.1, 1.4, 2.0] {
        let v1 = MarginSpec::new(Family::SphereFaceRv1, m).unwrap();
        for t in [0.0, PI] {
            let d = v1.characteristic_delta(angle(t)).unwrap();
            if d.abs() > 1e-12 {
                return Err(format!("{v1}: delta({t}) = {d}, expected 0"));
            }
        }
    }
    within(
        start.elapsed(),
        Duration::from_secs(1),
        format!("min delta {worst:.3e}"),
    )
}

fn closed_form_deltas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rows: Vec<DeltaRow> = vec![
        (MarginSpec::norm_face(), Box::new(|_| 0.0)),
        (
            MarginSpec::new(Family::CosFace, 0.35).unwrap(),
            Box::new(|_| 0.35),
        ),
        (
            MarginSpec::new(Family::ArcFace, 0.5).unwrap(),
            Box::new(|t: f64| t.cos() - (t + 0.5).cos()),
        ),
        (
            MarginSpec::new(Family::SphereFace, 1.7).unwrap(),
            Box::new(|t: f64| {
                let k = (1.7 * t / PI).floor();
                let sign = if k as i64 % 2 == 0 { 1.0 } else { -1.0 };
                t.cos() - sign * (1.7 * t).cos() + 2.0 * k
            }),
        ),
        (
            MarginSpec::new(Family::SphereFaceRv1, 1.5).unwrap(),
            Box::new(|t: f64| t.cos() - (1.5f64.min(PI / t) * t).cos()),
        ),
        (
            MarginSpec::new(Family::SphereFaceRv2, 1.3).unwrap(),
            Box::new(|t: f64| (t / 1.3).cos() - t.cos()),
        ),
    ];
    let mut worst = 0.0f64;
    for (spec, delta) in &rows {
        for _ in 0..1000 {
            let t = rng.random_range(0.0..PI);
            let err = (spec.characteristic_delta(angle(t)).unwrap() - delta(t)).abs();
            worst = worst.max(err);
        }
    }
    ensure(
        worst < 1e-12,
        format!("max abs error {worst:.3e} over {} rows", rows.len()),
    )
}

fn gradcheck_all() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::parse("").unwrap();
    let rows = match commands::gradcheck(&cfg, &mut std::io::sink(), false) {
        Ok(rows) => rows,
        Err(e) => return Err(e.to_string()),
    };
    let worst = rows.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let trials = rows.iter().map(|r| r.trials).min().unwrap_or(0);
    if rows.len() != 48 || trials != 100 {
        return Err(format!("{} combinations, {trials} trials", rows.len()));
    }
    within(
        start.elapsed(),
        Duration::from_secs(30),
        format!("48 combinations, max rel error {worst:.3e}"),
    )
}

fn random_loss_config(
    rng: &mut ChaCha8Rng,
    family: Family,
    scheme: FnScheme,
) -> (LossConfig, LossConfig) {
    let spec = match family {
        Family::NormFace => MarginSpec::norm_face(),
        Family::CosFace | Family::ArcFace => {
            MarginSpec::new(family, rng.random_range(0.1..0.6)).unwrap()
        }
        Family::ExpMargin => MarginSpec::new(family, rng.random_range(1.2..3.0)).unwrap(),
        Family::CombinedMargin => MarginSpec::combined(
            rng.random_range(1.0..1.5),
            rng.random_range(0.0..0.4),
            rng.random_range(0.0..0.3),
        )
        .unwrap(),
        _ => MarginSpec::new(family, rng.random_range(1.0..2.0)).unwrap(),
    };
    (
        LossConfig::new(spec, scheme, true).unwrap(),
        LossConfig::new(spec, scheme, false).unwrap(),
    )
}

fn cgd_forward_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut checked = 0;
    while checked < 1000 {
        let family = Family::ALL[rng.random_range(0..Family::ALL.len())];
        let scheme = match rng.random_range(0..3) {
            0 => FnScheme::Nfn,
            1 => FnScheme::Hfn {
                s: rng.random_range(1.0..64.0),
            },
            _ => FnScheme::Sfn {
                s: rng.random_range(1.0..64.0),
                t: rng.random_range(0.0..1.0),
            },
        };
        let (on, off) = random_loss_config(&mut rng, family, scheme);
        let (k, d) = (rng.random_range(2..10), rng.random_range(2..12));
        let mut draw = |n: usize| -> Vec<f64> {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            // ExpMargin is only defined on [0, π/2]; keep every angle acute.
            if family == Family::ExpMargin {
                v.iter().map(|e| e.abs()).collect()
            } else {
                v
            }
        };
        let head = normalize_weights(Matrix::from_vec(k, d, draw(k * d)).unwrap()).unwrap();
        let x = draw(d);
        let y = (x[0].abs() * 1e3) as usize % k;
        let (a, b) = (
            loss_forward(&x, &head, y, &on),
            loss_forward(&x, &head, y, &off),
        );
        match (a, b) {
            (Ok(a), Ok(b)) if a.to_bits() == b.to_bits() => checked += 1,
            (Ok(a), Ok(b)) => return Err(format!("{family} {scheme:?}: {a:e} vs {b:e}")),
            (Err(_), Err(_)) => {}
            (a, b) => return Err(format!("{family}: {a:?} vs {b:?}")),
        }
    }
    Ok(format!("{checked} configurations bit-identical"))
}

fn scale_limits() -> Outcome {
    let nf = MarginSpec::norm_face();
    let easy = angular_loss(&[angle(PI / 3.0), angle(PI / 2.0)], 0, 200.0, &nf).unwrap();
    if easy.is_nan() || easy >= 1e-12 {
        return Err(format!("loss at s=200 is {easy:e}"));
    }
    let mut worst = 0.0f64;
    for s in [1.0, 10.0, 100.0] {
        let l = angular_loss(&[angle(PI / 3.0), angle(PI / 3.0)], 0, s, &nf).unwrap();
        worst = worst.max((l - LN_2).abs());
    }
    ensure(
        worst < 1e-12,
        format!("s=200 loss {easy:.3e}, boundary |L - ln 2| <= {worst:.3e}"),
    )
}

fn binary_margins() -> Outcome {
    let mut worst = 0.0f64;
    for m in [1.2, 1.4, 1.8] {
        for t12 in [PI / 6.0, PI / 3.0, PI / 2.0] {
            let r = binary_margin_experiment(m, angle(t12), 200).map_err(|e| e.to_string())?;
            let expected = (m - 1.0) / (m + 1.0) * t12;
            worst = worst.max((r.empirical - expected).abs());
        }
    }
    let headline = binary_margin_experiment(1.4, angle(PI / 2.0), 200)
        .unwrap()
        .empirical;
    ensure(
        worst < 1e-8 && (headline - PI / 12.0).abs() < 1e-8,
        format!("m=1.4 at pi/2 gives {headline:.15}, max error {worst:.3e}"),
    )
}

struct Run {
    accuracy: f64,
    gap: f64,
    tail_loss: f64,
    metrics_csv: Vec<u8>,
}

fn train_run(text: &str) -> Result<Run, String> {
    let cfg = RunConfig::parse(text).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = commands::train(&cfg, 1, Some(dir.path()), &mut std::io::sink())
        .map_err(|e| e.to_string())?;
    Ok(Run {
        accuracy: out.history.final_accuracy,
        gap: out.separation.gap(),
        tail_loss: out.history.tail_mean(100),
        metrics_csv: fs::read(dir.path().join("metrics.csv")).map_err(|e| e.to_string())?,
    })
}

// The default run configuration is the margin-emergence setup:
// K=8, d=2, κ=30, 300 per class, HFN s=16, 3000 iterations, seed 7, v2 m=1.4.
const EMERGENCE_V2: &str = "";
const EMERGENCE_NORMFACE: &str = "[margin]\nfamily = \"normface\"\n";

fn margin_emergence() -> Outcome {
    let start = Instant::now();
    let v2 = train_run(EMERGENCE_V2)?;
    let nf = train_run(EMERGENCE_NORMFACE)?;
    let detail = format!(
        "gap v2 {:.4} vs normface {:.4}, accuracy {} / {}",
        v2.gap, nf.gap, v2.accuracy, nf.accuracy
    );
    if !(v2.gap > nf.gap && v2.accuracy >= 0.99 && nf.accuracy >= 0.99) {
        return Err(detail);
    }
    within(start.elapsed(), Duration::from_secs(120), detail)
}

fn fn_schemes_on_noisy_data() -> Outcome {
    let base = "[margin]\nfamily = \"sphereface_r_v2\"\nm = 1.2\n\
        [data]\nclasses = 50\ndim = 16\nn_per_class = 20\nkappa = 5.0\nlabel_noise = 0.2\nseed = 8\n\
        [trainer]\nlr = 0.1\nembed_lr = 0.1\nembed = \"mlp\"\nhidden = 128\niters = 3000\nlr_decay_steps = []\nseed = 8\n";
    let nfn = train_run(&format!("{base}[fn]\nscheme = \"nfn\"\n"))?;
    let hfn = train_run(&format!("{base}[fn]\nscheme = \"hfn\"\ns = 16.0\n"))?;
    ensure(
        nfn.tail_loss > hfn.tail_loss,
        format!(
            "final mean loss nfn {:.4} vs hfn {:.4}",
            nfn.tail_loss, hfn.tail_loss
        ),
    )
}

/// Area under the linear interpolation of the ROC vertices on `[0, x]`,
/// built directly from the scores, by the midpoint rule on a grid of `n`
/// cells over `[0, 1]`.
fn riemann_auc_x(scores: &[(f64, bool)], x: f64, n: usize) -> f64 {
    let pos = scores.iter().filter(|s| s.1).count() as f64;
    let neg = scores.len() as f64 - pos;
    let mut levels: Vec<f64> = scores.iter().map(|s| s.0).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let mut vertices = vec![(0.0, 0.0)];
    for l in levels {
        let fp = scores.iter().filter(|s| !s.1 && s.0 >= l).count() as f64 / neg;
        let tp = scores.iter().filter(|s| s.1 && s.0 >= l).count() as f64 / pos;
        vertices.push((fp, tp));
    }
    let h = 1.0 / n as f64;
    let cells = (x * n as f64).round() as usize;
    let mut seg = 0;
    let mut sum = 0.0;
    for i in 0..cells {
        let f = (i as f64 + 0.5) * h;
        while vertices[seg + 1].0 < f {
            seg += 1;
        }
        let ((f0, t0), (f1, t1)) = (vertices[seg], vertices[seg + 1]);
        sum += t0 + (t1 - t0) * (f - f0) / (f1 - f0);
    }
    sum * h / (cells as f64 * h)
}

fn u_statistic(scores: &[(f64, bool)]) -> f64 {
    let (p, q): (Vec<&(f64, bool)>, Vec<_>) = scores.iter().partition(|s| s.1);
    let mut wins = 0.0;
    for a in &p {
        for b in &q {
            wins += if a.0 > b.0 {
                1.0
            } else if a.0 == b.0 {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (p.len() * q.len()) as f64
}

fn auc_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut worst_x, mut worst_u) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        // Negative counts divide the oracle grid, and x is a multiple of
        // 1/N, so every vertex lands on a cell edge.
        let neg = [10, 20, 40, 50, 80, 100][rng.random_range(0..6)];
        let pos = rng.random_range(5..60);
        let levels = rng.random_range(3..30) as f64;
        let mut scores = Vec::new();
        for i in 0..pos + neg {
            let shift = if i < pos { 0.3 } else { 0.0 };
            let s = ((rng.random::<f64>() + shift) * levels).floor() / levels;
            scores.push((s, i < pos));
        }
        let curve = roc(&scores).map_err(|e| e.to_string())?;
        let x = rng.random_range(1..=neg) as f64 / neg as f64;
        let err = (auc_x(&curve, x).unwrap() - riemann_auc_x(&scores, x, 1_000_000)).abs();
        worst_x = worst_x.max(err);
        worst_u = worst_u.max((auc(&curve) - u_statistic(&scores)).abs());
    }
    ensure(
        worst_x < 1e-9 && worst_u < 1e-12,
        format!("auc_x vs riemann {worst_x:.3e}, auc vs U {worst_u:.3e}"),
    )
}

fn determinism() -> Outcome {
    let a = train_run(EMERGENCE_V2)?;
    let b = train_run(EMERGENCE_V2)?;
    ensure(
        a.metrics_csv == b.metrics_csv,
        format!(
            "metrics.csv {} bytes, identical: {}",
            a.metrics_csv.len(),
            a.metrics_csv == b.metrics_csv
        ),
    )
}

fn main() -> ExitCode {
    // With `cargo test -- --list` libtest expects a listing, not a run.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 10] = [
        ("margin principle sweep", margin_principle),
        ("closed-form deltas", closed_form_deltas),
        ("gradient oracle", gradcheck_all),
        ("cgd forward identity", cgd_forward_identity),
        ("scale limits", scale_limits),
        ("binary margin geometry", binary_margins),
        ("margin emergence", margin_emergence),
        ("fn schemes on noisy data", fn_schemes_on_noisy_data),
        ("auc oracles", auc_oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

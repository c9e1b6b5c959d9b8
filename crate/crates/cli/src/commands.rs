//! Subcommand bodies. Each writes CSV with a header row to `out`.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use hsmargin::eval::{
    auc, auc_x, identification, read_embeddings, read_pairs, roc, score_pairs, tar_at_far,
    write_embeddings, EmbeddingSet,
};
use hsmargin::gradcheck::{run_gradcheck, run_gradcheck_with, GradcheckOptions, GradcheckRow};
use hsmargin::loss::{loss_backward, loss_landscape_curve, scale_limit_curve};
use hsmargin::trainer::{
    binary_margin_experiment, generate_synthetic, measure_angular_separation, save_checkpoint,
    train as run_training, Separation, TrainHistory,
};
use hsmargin::Angle;

use crate::config::{parse_curve, RunConfig};
use crate::error::CliError;

fn csv_writer(out: &mut dyn Write) -> csv::Writer<&mut dyn Write> {
    csv::Writer::from_writer(out)
}

fn num(v: f64) -> String {
    format!("{v}")
}

fn angle(t: f64) -> Result<Angle, CliError> {
    Ok(Angle::new(t)?)
}

fn grid(n: usize, hi: f64) -> Result<Vec<f64>, CliError> {
    if n < 2 {
        return Err(CliError::config(format!("plot.grid must be >= 2, got {n}")));
    }
    Ok((0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect())
}

/// `theta` plus Δ(θ) for every configured curve over `[0, π]`. Cells outside
/// a family's domain are left empty.
pub fn plot_delta(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let specs = cfg
        .plot
        .curves
        .iter()
        .map(|c| parse_curve(c))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer(out);
    let mut header = vec!["theta".to_string()];
    header.extend(cfg.plot.curves.iter().cloned());
    w.write_record(&header)?;
    for t in grid(cfg.plot.grid, PI)? {
        let mut row = vec![num(t)];
        for spec in &specs {
            row.push(if t <= spec.domain_max() {
                num(spec.characteristic_delta(angle(t)?)?)
            } else {
                String::new()
            });
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary loss against `theta_y` for each configured scale.
pub fn plot_q(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let spec = cfg.margin.spec()?;
    let thetas = grid(cfg.plot.grid, spec.domain_max())?
        .into_iter()
        .map(angle)
        .collect::<Result<Vec<_>, _>>()?;
    let other = angle(cfg.plot.theta_other)?;
    let columns = cfg
        .plot
        .s
        .iter()
        .map(|&s| Ok(loss_landscape_curve(&thetas, other, &spec, s)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let mut w = csv_writer(out);
    let mut header = vec!["theta_y".to_string()];
    header.extend(cfg.plot.s.iter().map(|s| format!("s={s}")));
    w.write_record(&header)?;
    for (i, t) in thetas.iter().enumerate() {
        let mut row = vec![num(t.radians())];
        row.extend(columns.iter().map(|c| num(c[i].1)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Gradient check report. Fails with [`CliError::GradcheckFailed`] after
/// writing the report when any row exceeds the tolerance. `corrupt` scales
/// the analytic feature gradient by 1.01 to exercise the failure path.
pub fn gradcheck(
    cfg: &RunConfig,
    out: &mut dyn Write,
    corrupt: bool,
) -> Result<Vec<GradcheckRow>, CliError> {
    let g = &cfg.gradcheck;
    if g.trials == 0 {
        return Err(CliError::config("gradcheck.trials must be >= 1"));
    }
    let opts = GradcheckOptions {
        seed: g.seed,
        trials: g.trials,
        dim: g.dim,
        classes: g.classes,
        ..GradcheckOptions::default()
    };
    let rows = if corrupt {
        run_gradcheck_with(&opts, |x, head, y, c| {
            let mut r = loss_backward(x, head, y, c)?;
            r.grad_feature.iter_mut().for_each(|v| *v *= 1.01);
            Ok(r)
        })?
    } else {
        run_gradcheck(&opts)?
    };
    let mut w = csv_writer(out);
    w.write_record([
        "family",
        "scheme",
        "cgd",
        "trials",
        "max_rel_error",
        "passed",
    ])?;
    for r in &rows {
        w.write_record([
            r.family.name().to_string(),
            r.scheme.to_string(),
            r.cgd.to_string(),
            r.trials.to_string(),
            format!("{:e}", r.max_rel_error),
            r.passed.to_string(),
        ])?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(CliError::GradcheckFailed(failed));
    }
    Ok(rows)
}

pub struct TrainOutcome {
    pub history: TrainHistory,
    pub separation: Separation,
}

fn write_history(history: &TrainHistory, out: &mut dyn Write) -> Result<(), CliError> {
    let mut w = csv_writer(out);
    w.write_record(["step", "lr", "loss"])?;
    for r in &history.records {
        w.write_record([r.step.to_string(), num(r.lr), num(r.loss)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_metrics(outcome: &TrainOutcome, out: &mut dyn Write) -> Result<(), CliError> {
    let s = &outcome.separation;
    let mut w = csv_writer(out);
    w.write_record(["metric", "value"])?;
    for (k, v) in [
        ("final_accuracy", outcome.history.final_accuracy),
        ("final_loss", outcome.history.tail_mean(100)),
        ("max_intra_angle", s.max_intra),
        ("min_inter_angle", s.min_inter),
        ("angular_gap", s.gap()),
    ] {
        w.write_record([k, &num(v)])?;
    }
    w.flush()?;
    Ok(())
}

fn write_classes(sep: &Separation, out: &mut dyn Write) -> Result<(), CliError> {
    let mut w = csv_writer(out);
    w.write_record(["class", "count", "mean_angle", "max_angle"])?;
    for (c, st) in sep.per_class.iter().enumerate() {
        w.write_record([
            c.to_string(),
            st.count.to_string(),
            num(st.mean_angle),
            num(st.max_angle),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Trains on synthetic data. With `out_dir`, writes `history.csv`,
/// `metrics.csv`, `classes.csv`, `embeddings.hsemb` and `model.hsmg` there;
/// otherwise the loss history goes to `stdout`.
pub fn train(
    cfg: &RunConfig,
    threads: usize,
    out_dir: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<TrainOutcome, CliError> {
    let tcfg = cfg.train_config(threads)?;
    let data = generate_synthetic(&cfg.data.spec())?;
    let (model, history) = run_training(&data, &tcfg)?;
    let separation = measure_angular_separation(&model, &data);
    let outcome = TrainOutcome {
        history,
        separation,
    };

    match out_dir {
        None => write_history(&outcome.history, stdout)?,
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
            write_history(&outcome.history, &mut create(&dir.join("history.csv"))?)?;
            write_metrics(&outcome, &mut create(&dir.join("metrics.csv"))?)?;
            write_classes(&outcome.separation, &mut create(&dir.join("classes.csv"))?)?;
            let set = EmbeddingSet {
                ids: data
                    .labels
                    .iter()
                    .enumerate()
                    .map(|(i, l)| format!("{l}#{i}"))
                    .collect(),
                vectors: data
                    .inputs
                    .iter()
                    .enumerate()
                    .map(|(i, x)| model.embed(i, x))
                    .collect(),
            };
            write_embeddings(create(&dir.join("embeddings.hsemb"))?, &set)?;
            save_checkpoint(&dir.join("model.hsmg"), &model)?;
        }
    }
    Ok(outcome)
}

fn open_embeddings(path: &Path) -> Result<EmbeddingSet, CliError> {
    let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    Ok(read_embeddings(BufReader::new(f))?)
}

/// Verification metrics over `eval.embeddings` + `eval.pairs`, then
/// identification metrics when `eval.gallery` and `eval.probes` are set.
pub fn eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let e = &cfg.eval;
    let verification = e.embeddings.is_some() || e.pairs.is_some();
    let ident = e.gallery.is_some() || e.probes.is_some();
    if !verification && !ident {
        return Err(CliError::config(
            "eval needs eval.embeddings + eval.pairs or eval.gallery + eval.probes",
        ));
    }
    let mut rows: Vec<(String, f64)> = Vec::new();

    if verification {
        let (Some(emb_path), Some(pair_path)) = (&e.embeddings, &e.pairs) else {
            return Err(CliError::config(
                "eval.embeddings and eval.pairs must be set together",
            ));
        };
        let set = open_embeddings(emb_path)?;
        let pf = File::open(pair_path)
            .map_err(|err| CliError::Io(format!("{}: {err}", pair_path.display())))?;
        let protocol = read_pairs(BufReader::new(pf), &set)?;
        let scores = score_pairs(&set.vectors, &protocol, e.t)?;
        let curve = roc(&scores)?;
        let n_pos = scores.iter().filter(|s| s.1).count();
        rows.push(("pairs".into(), scores.len() as f64));
        rows.push(("positives".into(), n_pos as f64));
        rows.push(("negatives".into(), (scores.len() - n_pos) as f64));
        rows.push(("auc".into(), auc(&curve)));
        for &x in &e.auc_x {
            rows.push((format!("auc_x@{x}"), auc_x(&curve, x)?));
        }
        for (&far, tar) in e.far_levels.iter().zip(tar_at_far(&curve, &e.far_levels)) {
            rows.push((format!("tar@far={far}"), tar));
        }
        if let Some(path) = &e.roc_out {
            let mut f = create(path)?;
            let mut w = csv_writer(&mut f);
            w.write_record(["threshold", "fpr", "tpr"])?;
            for (t, (fpr, tpr)) in curve.thresholds.iter().zip(&curve.points) {
                w.write_record([num(*t), num(*fpr), num(*tpr)])?;
            }
            w.flush()?;
        }
    }

    if ident {
        let (Some(g_path), Some(p_path)) = (&e.gallery, &e.probes) else {
            return Err(CliError::config(
                "eval.gallery and eval.probes must be set together",
            ));
        };
        let gallery = open_embeddings(g_path)?;
        let probes = open_embeddings(p_path)?;
        let distractors = match &e.distractors {
            Some(p) => open_embeddings(p)?.vectors,
            None => Vec::new(),
        };
        let report = identification(
            &gallery.vectors,
            &gallery.labels(),
            &probes.vectors,
            &probes.labels(),
            &distractors,
            &e.fpir_levels,
        )?;
        rows.push(("top1".into(), report.top1));
        for (fpir, tpir) in report.tpir_at_fpir {
            rows.push((format!("tpir@fpir={fpir}"), tpir));
        }
    }

    let mut w = csv_writer(out);
    w.write_record(["metric", "value"])?;
    for (k, v) in rows {
        w.write_record([k, num(v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Binary margin geometry for every `(m, θ₁₂)` combination.
pub fn margin_exp(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let mut w = csv_writer(out);
    w.write_record([
        "m",
        "theta_12",
        "boundary_1",
        "boundary_2",
        "empirical_margin",
        "theoretical_margin",
    ])?;
    for &m in &x.m {
        for &t in &x.theta_12 {
            let r = binary_margin_experiment(m, angle(t)?, x.bisection_iters)?;
            w.write_record([
                num(m),
                num(t),
                num(r.boundary_1),
                num(r.boundary_2),
                num(r.empirical),
                num(r.theoretical),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loss at fixed angles as the scale grows.
pub fn scale_limit(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), CliError> {
    let x = &cfg.experiment;
    let others = x
        .theta_others
        .iter()
        .map(|&t| angle(t))
        .collect::<Result<Vec<_>, _>>()?;
    let curve = scale_limit_curve(angle(x.theta_y)?, &others, &cfg.margin.spec()?, &x.s_grid)?;
    let mut w = csv_writer(out);
    w.write_record(["s", "loss"])?;
    for (s, l) in curve {
        w.write_record([num(s), num(l)])?;
    }
    w.flush()?;
    Ok(())
}

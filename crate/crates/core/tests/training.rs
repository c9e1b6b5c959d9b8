use hsmargin::linalg::{dot, norm};
use hsmargin::trainer::{
    generate_synthetic, init_model, measure_angular_separation, train, train_model, Dataset,
    EmbedKind, SyntheticSpec, TrainConfig,
};
use hsmargin::{Error, FnScheme, LossConfig, MarginSpec};

fn data(classes: usize, dim: usize, n: usize, kappa: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes,
        dim,
        n_per_class: n,
        kappa,
        seed,
        magnitude_range: (1.0, 2.0),
        label_noise: 0.0,
    })
    .unwrap()
}

fn config(margin: MarginSpec, scheme: FnScheme, embed: EmbedKind, iters: usize) -> TrainConfig {
    TrainConfig {
        loss: LossConfig::new(margin, scheme, true).unwrap(),
        lr: 0.05,
        momentum: 0.9,
        iters,
        batch: 32,
        lr_decay_steps: vec![],
        lr_decay_factor: 0.1,
        seed: 5,
        embed,
        embed_lr: 0.03,
        threads: 1,
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let ds = data(3, 3, 40, 20.0, 1);
    for embed in [
        EmbedKind::Fixed,
        EmbedKind::Free,
        EmbedKind::Mlp { hidden: 8 },
    ] {
        let cfg = TrainConfig {
            lr: 0.0,
            embed_lr: 0.0,
            batch: 120,
            ..config(
                MarginSpec::norm_face(),
                FnScheme::Hfn { s: 10.0 },
                embed,
                20,
            )
        };
        let before = init_model(&ds, &cfg).unwrap();
        let (after, hist) = train(&ds, &cfg).unwrap();
        assert_eq!(before.embedding, after.embedding);
        assert!(before
            .head
            .weights()
            .as_slice()
            .iter()
            .zip(after.head.weights().as_slice())
            .all(|(a, b)| (a - b).abs() < 1e-15));
        let l = hist.losses();
        assert!(l.iter().all(|v| (v - l[0]).abs() < 1e-12), "{embed:?}");
    }
}

#[test]
fn normface_converges_on_separable_data() {
    let ds = generate_synthetic(&SyntheticSpec {
        classes: 4,
        dim: 2,
        n_per_class: 200,
        kappa: 50.0,
        seed: 1,
        magnitude_range: (1.0, 1.0),
        label_noise: 0.0,
    })
    .unwrap();
    let cfg = TrainConfig {
        lr: 0.1,
        batch: 64,
        ..config(
            MarginSpec::norm_face(),
            FnScheme::Hfn { s: 16.0 },
            EmbedKind::Fixed,
            2000,
        )
    };
    let (_, hist) = train(&ds, &cfg).unwrap();
    assert!(hist.tail_mean(100) < 0.1, "{}", hist.tail_mean(100));
}

#[test]
fn every_family_reaches_high_accuracy() {
    let ds = data(4, 3, 50, 40.0, 2);
    let specs = [
        MarginSpec::norm_face(),
        MarginSpec::new(hsmargin::Family::CosFace, 0.3).unwrap(),
        MarginSpec::new(hsmargin::Family::ArcFace, 0.3).unwrap(),
        MarginSpec::new(hsmargin::Family::SphereFace, 1.4).unwrap(),
        MarginSpec::new(hsmargin::Family::SphereFaceRv1, 1.4).unwrap(),
        MarginSpec::new(hsmargin::Family::SphereFaceRv2, 1.4).unwrap(),
        MarginSpec::combined(1.1, 0.2, 0.1).unwrap(),
    ];
    for spec in specs {
        let (_, hist) = train(
            &ds,
            &config(spec, FnScheme::Hfn { s: 16.0 }, EmbedKind::Free, 1500),
        )
        .unwrap();
        assert!(
            hist.final_accuracy >= 0.99,
            "{spec}: {}",
            hist.final_accuracy
        );
        assert!(hist.losses().iter().all(|l| l.is_finite()));
    }
}

#[test]
fn training_is_deterministic_and_thread_count_independent() {
    let ds = data(5, 4, 30, 10.0, 3);
    let base = config(
        MarginSpec::new(hsmargin::Family::SphereFaceRv2, 1.3).unwrap(),
        FnScheme::Sfn { s: 8.0, t: 0.05 },
        EmbedKind::Mlp { hidden: 6 },
        200,
    );
    let (m1, h1) = train(&ds, &base).unwrap();
    let (m2, h2) = train(&ds, &base).unwrap();
    let (m3, h3) = train(
        &ds,
        &TrainConfig {
            threads: 4,
            ..base.clone()
        },
    )
    .unwrap();
    assert_eq!(m1, m2);
    assert_eq!(h1, h2);
    assert_eq!(m1, m3);
    assert_eq!(h1, h3);
}

#[test]
fn head_rows_stay_unit_norm() {
    let ds = data(4, 3, 25, 5.0, 4);
    let mut cfg = config(
        MarginSpec::new(hsmargin::Family::ArcFace, 0.4).unwrap(),
        FnScheme::Nfn,
        EmbedKind::Linear,
        1,
    );
    cfg.lr = 0.5;
    let mut model = init_model(&ds, &cfg).unwrap();
    for _ in 0..100 {
        train_model(&mut model, &ds, &cfg).unwrap();
        assert!(model.head_norm_error() < 1e-9);
    }
}

#[test]
fn hfn_trajectory_ignores_input_scale_with_linear_embedding() {
    let ds = data(4, 3, 25, 10.0, 6);
    let big = ds.scaled(10.0);
    let cfg = config(
        MarginSpec::new(hsmargin::Family::SphereFaceRv2, 1.4).unwrap(),
        FnScheme::Hfn { s: 16.0 },
        EmbedKind::Linear,
        1,
    );
    let (mut a, mut b) = (
        init_model(&ds, &cfg).unwrap(),
        init_model(&big, &cfg).unwrap(),
    );
    for step in 0..100 {
        train_model(
            &mut a,
            &ds,
            &TrainConfig {
                seed: step,
                ..cfg.clone()
            },
        )
        .unwrap();
        train_model(
            &mut b,
            &big,
            &TrainConfig {
                seed: step,
                ..cfg.clone()
            },
        )
        .unwrap();
        for (i, (x, xb)) in ds.inputs.iter().zip(&big.inputs).enumerate() {
            let (ea, eb) = (a.embed(i, x), b.embed(i, xb));
            for w in a
                .head
                .weights()
                .iter_rows()
                .zip(b.head.weights().iter_rows())
            {
                let ta = (dot(&ea, w.0) / norm(&ea)).clamp(-1.0, 1.0).acos();
                let tb = (dot(&eb, w.1) / norm(&eb)).clamp(-1.0, 1.0).acos();
                assert!((ta - tb).abs() < 1e-9, "step {step}: {ta} vs {tb}");
            }
        }
    }
}

#[test]
fn moving_average_loss_settles() {
    let ds = data(4, 2, 100, 50.0, 7);
    let cfg = config(
        MarginSpec::new(hsmargin::Family::SphereFaceRv2, 1.4).unwrap(),
        FnScheme::Hfn { s: 16.0 },
        EmbedKind::Free,
        1500,
    );
    let (_, hist) = train(&ds, &cfg).unwrap();
    let l = hist.losses();
    let ma: Vec<f64> = l
        .windows(100)
        .map(|w| w.iter().sum::<f64>() / 100.0)
        .collect();
    let start = 2 * l.len() / 3;
    // Mini-batch noise of the window average is far below this slack.
    for w in ma[start - 99..].windows(2) {
        assert!(w[1] <= w[0] + 2e-3, "{} -> {}", w[0], w[1]);
    }
}

#[test]
fn nfn_on_noisy_many_class_data_does_not_diverge() {
    let ds = generate_synthetic(&SyntheticSpec {
        classes: 30,
        dim: 8,
        n_per_class: 10,
        kappa: 5.0,
        seed: 9,
        magnitude_range: (1.0, 1.0),
        label_noise: 0.2,
    })
    .unwrap();
    let cfg = config(
        MarginSpec::new(hsmargin::Family::SphereFaceRv2, 1.2).unwrap(),
        FnScheme::Nfn,
        EmbedKind::Mlp { hidden: 32 },
        500,
    );
    let (_, hist) = train(&ds, &cfg).unwrap();
    assert!(hist.losses().iter().all(|l| l.is_finite()));
}

#[test]
fn non_finite_loss_is_divergence() {
    let ds = data(3, 3, 10, 10.0, 10);
    let cfg = TrainConfig {
        lr: 1e300,
        embed_lr: 1e300,
        ..config(
            MarginSpec::norm_face(),
            FnScheme::Sfn { s: 4.0, t: 1.0 },
            EmbedKind::Linear,
            50,
        )
    };
    let r = train(&ds, &cfg);
    assert!(matches!(r, Err(Error::Divergence { .. })), "{r:?}");
}

#[test]
fn invalid_configs_are_rejected() {
    let ds = data(3, 3, 10, 10.0, 11);
    let base = config(MarginSpec::norm_face(), FnScheme::Nfn, EmbedKind::Fixed, 5);
    for bad in [
        TrainConfig {
            momentum: 1.0,
            ..base.clone()
        },
        TrainConfig {
            batch: 0,
            ..base.clone()
        },
        TrainConfig {
            lr: -1.0,
            ..base.clone()
        },
        TrainConfig {
            lr_decay_factor: 0.0,
            ..base.clone()
        },
    ] {
        assert!(matches!(train(&ds, &bad), Err(Error::InvalidParam(_))));
    }
}

#[test]
fn margin_grows_with_multiplier() {
    let ds = generate_synthetic(&SyntheticSpec {
        classes: 4,
        dim: 2,
        n_per_class: 100,
        kappa: 40.0,
        seed: 12,
        magnitude_range: (1.0, 1.0),
        label_noise: 0.0,
    })
    .unwrap();
    let gap = |m: f64| {
        let spec = if m == 1.0 {
            MarginSpec::norm_face()
        } else {
            MarginSpec::new(hsmargin::Family::SphereFaceRv2, m).unwrap()
        };
        let (model, _) = train(
            &ds,
            &config(spec, FnScheme::Hfn { s: 16.0 }, EmbedKind::Free, 1500),
        )
        .unwrap();
        measure_angular_separation(&model, &ds).gap()
    };
    assert!(gap(1.6) > gap(1.0));
}

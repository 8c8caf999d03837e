use nnam_core::cells::{CellKind, NetworkConfig, RecurrentNetwork, ZoneoutConfig};
use nnam_core::corpus::{generate_synthetic, SynthSpec};
use nnam_core::ensemble::*;
use nnam_core::numeric::{log_softmax, softmax, Matrix, Vector};
use nnam_core::rng::Rng;
use nnam_core::training::{StagePlan, TrainConfig};

/// Frames whose labels are drawn from softmax(z); returns (labels, log softmax(scale * z)).
fn calibrated(frames: usize, c: usize, scale: f64, rng: &mut Rng) -> (Matrix, Vec<usize>) {
    let mut data = Vec::with_capacity(frames * c);
    let mut labels = Vec::with_capacity(frames);
    for _ in 0..frames {
        let z = Vector((0..c).map(|_| 1.5 * rng.normal()).collect());
        let p = softmax(&z);
        let mut u = rng.uniform();
        let mut y = c - 1;
        for (k, pk) in p.iter().enumerate() {
            if u < *pk {
                y = k;
                break;
            }
            u -= pk;
        }
        labels.push(y);
        data.extend(log_softmax(&z.map(|v| v * scale)).0);
    }
    (Matrix::from_vec(frames, c, data).unwrap(), labels)
}

#[test]
fn rpl_undoes_fourfold_overconfidence() {
    let mut rng = Rng::new(3);
    let (m, l) = calibrated(20_000, 4, 4.0, &mut rng);
    let fit = fit_rpl(&[m], &[l], &RplConfig::default(), &mut rng).unwrap();
    for d in fit.params.d.iter() {
        assert!((d - 0.25).abs() < 0.03, "d = {:?}", fit.params.d);
    }
    assert!(fit.held_aside_ce < fit.identity_ce);
}

#[test]
fn rpl_on_calibrated_inputs_stays_near_identity() {
    let mut rng = Rng::new(5);
    let (m, l) = calibrated(20_000, 4, 1.0, &mut rng);
    let fit = fit_rpl(&[m], &[l], &RplConfig::default(), &mut rng).unwrap();
    assert!(fit.held_aside_ce <= fit.identity_ce);
    assert!((fit.identity_ce - fit.held_aside_ce).abs() < 1e-3, "{fit:?}");
}

#[test]
fn rpl_is_never_worse_than_identity() {
    for seed in 0..20 {
        let mut rng = Rng::new(seed);
        let scale = 0.3 + 0.3 * seed as f64;
        let (m, l) = calibrated(300, 3, scale, &mut rng);
        let fit = fit_rpl(&[m], &[l], &RplConfig::default(), &mut rng).unwrap();
        assert!(fit.held_aside_ce <= fit.identity_ce, "seed {seed}");
    }
}

#[test]
fn apply_rpl_stays_on_the_simplex() {
    let mut rng = Rng::new(9);
    for _ in 0..200 {
        let c = rng.between(2, 8);
        let p = softmax(&Vector((0..c).map(|_| 10.0 * rng.normal()).collect()));
        let r = RplParams {
            d: Vector((0..c).map(|_| rng.uniform_range(-3.0, 3.0)).collect()),
            b: Vector((0..c).map(|_| rng.uniform_range(-3.0, 3.0)).collect()),
        };
        let out = apply_rpl(&r, &p).unwrap();
        assert!((out.sum() - 1.0).abs() < 1e-12);
        assert!(out.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn aggregate_is_permutation_invariant_and_convex() {
    let mut rng = Rng::new(2);
    for _ in 0..100 {
        let c = rng.between(2, 6);
        let k = rng.between(1, 6);
        let members: Vec<Vec<f64>> = (0..k)
            .map(|_| log_softmax(&Vector((0..c).map(|_| 3.0 * rng.normal()).collect())).0)
            .collect();
        let master = log_softmax(&Vector((0..c).map(|_| rng.normal()).collect())).0;
        let refs: Vec<&[f64]> = members.iter().map(Vec::as_slice).collect();
        let mut shuffled = refs.clone();
        rng.shuffle(&mut shuffled);
        let a = aggregate(Members::MasterFolds, Some(&master), &refs, 0.5).unwrap();
        let b = aggregate(Members::MasterFolds, Some(&master), &shuffled, 0.5).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!((a.sum() - 1.0).abs() < 1e-12);
    }
}

fn tiny_setup() -> (nnam_core::corpus::Corpus, NetworkConfig, TrainConfig) {
    let spec = SynthSpec {
        phones: 3,
        feature_dim: 4,
        train: 10,
        dev: 3,
        test: 3,
        min_frames: 8,
        max_frames: 14,
        noise: 0.5,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic(&spec, &mut Rng::new(1)).unwrap();
    let net_cfg = NetworkConfig {
        kind: CellKind::Lstm,
        feature_dim: corpus.feature_dim,
        context: 1,
        hidden: vec![6],
        num_classes: corpus.num_classes(),
        delay: 1,
        dropout: 0.0,
        zoneout: ZoneoutConfig::new(0.0, 0.0).unwrap(),
    };
    let train_cfg = TrainConfig {
        plan: StagePlan::new(vec![nnam_core::training::Stage {
            optimizer: nnam_core::training::OptimizerKind::Adam,
            batch_size: 2,
            lr: 1e-2,
        }])
        .unwrap(),
        max_epochs: 4,
        scale_batches: false,
        ..TrainConfig::recurrent_default()
    };
    (corpus, net_cfg, train_cfg)
}

#[test]
fn crogging_covers_every_utterance_with_an_unseen_net() {
    let (corpus, net_cfg, train_cfg) = tiny_setup();
    let ids: Vec<String> = corpus.train.iter().map(|u| u.id.clone()).collect();
    let split = split_folds(&ids, 2, &mut Rng::new(4)).unwrap();
    let cr = train_crogging(&net_cfg, &train_cfg, &corpus.train, &split, &mut Rng::new(5), &mut |_, _| {}).unwrap();
    assert_eq!(cr.nets.len(), 2);
    for (i, u) in corpus.train.iter().enumerate() {
        assert_eq!(cr.held_out_by[i], split.fold[i]);
        assert_eq!(cr.held_out[i].rows(), u.frames());
    }
    for log in &cr.logs {
        assert!(log.best_dev_ce() <= log.initial_dev_ce);
    }

    // Jensen: the folds-mean never loses to the average member.
    let labels: Vec<Vec<usize>> = corpus.test.iter().map(|u| u.labels.clone()).collect();
    let ens = Ensemble::new(None, cr.nets.clone(), None, 0.5).unwrap();
    let member_lps: Vec<Vec<Matrix>> = (0..2)
        .map(|j| {
            corpus
                .test
                .iter()
                .map(|u| ens.member_outputs(&u.features).unwrap().folds[j].clone())
                .collect()
        })
        .collect();
    let (mix, mean) = jensen_check(&member_lps, &labels).unwrap();
    assert!(mix <= mean + 1e-12, "{mix} > {mean}");

    let again = train_crogging(&net_cfg, &train_cfg, &corpus.train, &split, &mut Rng::new(5), &mut |_, _| {}).unwrap();
    assert_eq!(again.nets, cr.nets);
}

#[test]
fn identity_rpl_leaves_every_scenario_unchanged() {
    let (corpus, net_cfg, _) = tiny_setup();
    let nets: Vec<RecurrentNetwork> = (0..3)
        .map(|s| RecurrentNetwork::new(net_cfg.clone(), &mut Rng::new(s)).unwrap())
        .collect();
    let ens = Ensemble::new(
        Some(nets[0].clone()),
        nets[1..].to_vec(),
        Some(RplParams::identity(net_cfg.num_classes)),
        0.5,
    )
    .unwrap();
    let streams = evaluate_scenarios(&ens, &corpus.test).unwrap();
    let get = |s: Scenario| &streams.iter().find(|x| x.0 == s).unwrap().1;
    for s in Scenario::ALL.into_iter().filter(|s| s.uses_rpl()) {
        let base = Scenario::from_parts(s.members(), false);
        for (a, b) in get(s).iter().zip(get(base)) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-10, "{s}");
            }
        }
    }
    // master alone equals exp of its own output
    let out = ens.member_outputs(&corpus.test[0].features).unwrap();
    let master = exp_matrix(out.master.as_ref().unwrap());
    assert_eq!(&get(Scenario::Master)[0], &master);

    let no_rpl = Ensemble::new(None, nets[1..].to_vec(), None, 0.5).unwrap();
    let fold_out = no_rpl.member_outputs(&corpus.test[0].features).unwrap();
    assert!(no_rpl.scenario_posteriors(Scenario::FoldsRpl, &fold_out).is_err());
    assert!(no_rpl.scenario_posteriors(Scenario::Master, &fold_out).is_err());
    assert!(no_rpl.scenario_posteriors(Scenario::Folds, &fold_out).is_ok());
}

#[test]
fn ensemble_manifest_round_trip() {
    let (_, net_cfg, _) = tiny_setup();
    let nets: Vec<RecurrentNetwork> = (0..3)
        .map(|s| RecurrentNetwork::new(net_cfg.clone(), &mut Rng::new(s)).unwrap())
        .collect();
    let rpl = RplParams {
        d: Vector::filled(net_cfg.num_classes, 0.7),
        b: Vector::filled(net_cfg.num_classes, -0.1),
    };
    let ens = Ensemble::new(Some(nets[0].clone()), nets[1..].to_vec(), Some(rpl), 0.5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = save_ensemble(dir.path(), &ens, "ensemble.txt").unwrap();
    assert_eq!(load_ensemble(&path).unwrap(), ens);
}

use std::collections::HashSet;

use proptest::prelude::*;
use safeguarded_polyak::analysis::solve_reference;
use safeguarded_polyak::harness::*;
use safeguarded_polyak::*;

fn hinge_config(n: usize, d: usize, epochs: usize, batch: usize) -> (ExperimentConfig, Problem) {
    let cfg = ExperimentConfig {
        instance: InstanceSpec {
            n,
            d,
            seed: 5,
            loss: LossKind::Hinge,
            ..InstanceSpec::default()
        },
        rule: RuleConfig::sps_safe(1.0),
        epochs,
        batch_size: batch,
        repeats: 3,
        checkpoints: vec![],
        init: InitKind::Zeros,
        ..ExperimentConfig::default()
    };
    let p = cfg.instance.build().unwrap();
    (cfg, p)
}

#[test]
fn mean_std_examples() {
    assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
    assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
}

#[test]
fn aggregate_rejects_empty_input() {
    assert!(matches!(aggregate(&[]), Err(Error::Empty(_))));
}

#[test]
fn aggregate_of_identical_records_has_zero_spread() {
    let (mut cfg, p) = hinge_config(40, 5, 4, 10);
    cfg.repeats = 1;
    let rec = run_experiment(&cfg, &p, None, &[0.0; 5]).unwrap().remove(0);
    let agg = aggregate(&[rec.clone(), rec.clone()]).unwrap();
    assert!(agg.f_last.std.iter().all(|&s| s == 0.0));
    assert_eq!(agg.f_last.mean, rec.epochs.iter().map(|m| m.f_last).collect::<Vec<_>>());
    assert!(agg.subopt_last.is_none());
}

#[test]
fn one_full_batch_epoch_is_one_deterministic_step() {
    let (mut cfg, p) = hinge_config(30, 4, 1, 30);
    cfg.repeats = 1;
    let x0 = vec![0.1, -0.2, 0.3, 0.0];
    let rec = run_experiment(&cfg, &p, None, &x0).unwrap().remove(0);
    let all: Vec<usize> = (0..30).collect();
    let (f, g) = p.batch_eval(&all, &x0).unwrap();
    let gamma = f / g.iter().map(|v| v * v).sum::<f64>().max(1.0);
    let expected: Vec<f64> = x0.iter().zip(&g).map(|(x, gi)| x - gamma * gi).collect();
    // The batch is shuffled, so sums differ from the ordered ones by rounding.
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-14 * a.abs().max(b.abs()).max(1.0);
    assert!(rec.final_x.iter().zip(&expected).all(|(a, b)| close(*a, *b)));
    assert!(close(rec.epochs[0].step_size, gamma));
    assert!(close(rec.epochs[0].f_cesaro, f));
}

#[test]
fn each_epoch_visits_every_index_once_with_a_partial_last_batch() {
    let (mut cfg, p) = hinge_config(47, 3, 3, 10);
    cfg.repeats = 1;
    let mut batches: Vec<Vec<usize>> = Vec::new();
    run_single(&cfg, &p, None, &[0.0; 3], 0, |e| batches.push(e.batch.to_vec())).unwrap();
    assert_eq!(batches.len(), 15);
    for epoch in batches.chunks(5) {
        assert_eq!(epoch[4].len(), 7);
        let seen: HashSet<usize> = epoch.iter().flatten().copied().collect();
        assert_eq!(seen.len(), 47);
        assert_eq!(epoch.iter().map(Vec::len).sum::<usize>(), 47);
    }
}

#[test]
fn run_trajectories_depend_only_on_their_own_seed() {
    let (cfg, p) = hinge_config(60, 6, 5, 12);
    let x0 = vec![0.0; 6];
    let three = run_experiment(&cfg, &p, None, &x0).unwrap();
    let mut shifted = cfg.clone();
    shifted.base_seed = cfg.base_seed + 2;
    shifted.repeats = 1;
    let alone = run_experiment(&shifted, &p, None, &x0).unwrap();
    assert_eq!(three[2].seed, alone[0].seed);
    assert_eq!(three[2].final_x, alone[0].final_x);
    assert_eq!(three[2].epochs, alone[0].epochs);
    assert_ne!(three[0].final_x, three[1].final_x);
}

#[test]
fn records_have_one_entry_per_epoch_and_valid_clip_fractions() {
    let (mut cfg, p) = hinge_config(60, 6, 7, 12);
    cfg.rule = RuleConfig {
        c: 0.5,
        gamma_b: 0.1,
        ..RuleConfig::new(RuleKind::SpsMax)
    };
    for rec in run_experiment(&cfg, &p, None, &[0.0; 6]).unwrap() {
        assert_eq!(rec.epochs.len(), 7);
        for m in &rec.epochs {
            let c = m.clip_frac.unwrap();
            assert!((0.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn oracle_rules_need_a_reference() {
    let (mut cfg, p) = hinge_config(20, 3, 1, 5);
    cfg.rule = RuleConfig::new(RuleKind::SpsStar);
    assert!(run_experiment(&cfg, &p, None, &[0.0; 3]).is_err());
    let r = solve_reference(&p, 500, &[0.0; 3]).unwrap();
    let recs = run_experiment(&cfg, &p, Some(&r), &[0.0; 3]).unwrap();
    assert!(recs[0].final_metrics().subopt_last.is_some());
}

#[test]
fn zero_subgradient_failures_name_the_run_and_samples() {
    // Separable instance started at its witness: every loss and subgradient is 0.
    let (data, x_sep) = Dataset::generate_separable(20, 3, 1, 1.0).unwrap();
    let p = Problem::new(data, LossKind::Hinge);
    let cfg = ExperimentConfig {
        instance: InstanceSpec {
            n: 20,
            d: 3,
            loss: LossKind::Hinge,
            ..InstanceSpec::default()
        },
        rule: RuleConfig::new(RuleKind::SpsStar),
        batch_size: 5,
        epochs: 1,
        repeats: 1,
        checkpoints: vec![],
        ..ExperimentConfig::default()
    };
    let mut r = solve_reference(&p, 1, &x_sep).unwrap();
    // A reference strictly below the batch losses forces a positive numerator.
    r.f_i_star = vec![-1.0; 20];
    match run_experiment(&cfg, &p, Some(&r), &x_sep) {
        Err(Error::RunFailed { run: 0, seed: 0, source }) => {
            assert!(matches!(*source, Error::ZeroSubgradientAt { step: 0, ref samples, .. } if samples.len() == 5));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let (cfg, p) = hinge_config(20, 3, 1, 5);
    for bad in [
        ExperimentConfig { epochs: 0, ..cfg.clone() },
        ExperimentConfig { repeats: 0, ..cfg.clone() },
        ExperimentConfig { batch_size: 21, ..cfg.clone() },
        ExperimentConfig { checkpoints: vec![2], ..cfg.clone() },
        ExperimentConfig { optimizer: OptimizerKind::Ima, ..cfg.clone() },
    ] {
        assert!(run_experiment(&bad, &p, None, &[0.0; 3]).is_err());
    }
}

#[test]
fn free_running_clipped_and_safeguarded_runs_stay_together() {
    let (mut cfg, p) = hinge_config(300, 100, 100, 30);
    cfg.repeats = 1;
    let c = 1.0;
    let a = run_experiment(&cfg, &p, None, &[0.0; 100]).unwrap().remove(0);
    let clipped = ExperimentConfig {
        optimizer: OptimizerKind::ClippedSsm,
        rule: RuleConfig {
            kind: RuleKind::ClippedAdaptive,
            c,
            ..cfg.rule
        },
        ..cfg.clone()
    };
    let b = run_experiment(&clipped, &p, None, &[0.0; 100]).unwrap().remove(0);
    let scale = a.final_x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = a.final_x.iter().zip(&b.final_x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    assert!(dev <= 1e-12 * scale, "{dev} vs {scale}");
}

#[test]
fn singleton_sweep_matches_run_experiment() {
    let (cfg, p) = hinge_config(40, 4, 3, 8);
    let x0 = [0.0; 4];
    let table = sweep(&cfg, SweepParam::Safeguard, &[1.0], &p, None, &x0).unwrap();
    let direct = run_experiment(&cfg, &p, None, &x0).unwrap();
    assert_eq!(table.entries.len(), 1);
    for (a, b) in table.entries[0].records.iter().zip(&direct) {
        assert_eq!(a.epochs, b.epochs);
    }
}

#[test]
fn sweep_drops_duplicate_values() {
    assert_eq!(dedup_values(&[0.01, 0.1, 1.0, 1.0, 10.0, 100.0]), vec![0.01, 0.1, 1.0, 10.0, 100.0]);
    let (mut cfg, p) = hinge_config(40, 4, 2, 8);
    cfg.repeats = 1;
    let table = sweep(&cfg, SweepParam::Safeguard, &[1.0, 1.0, 10.0], &p, None, &[0.0; 4]).unwrap();
    let ids: Vec<_> = table.entries.iter().map(|e| e.config_id.as_str()).collect();
    assert_eq!(ids, ["ssm/sps_safe/M=1", "ssm/sps_safe/M=10"]);
}

#[test]
fn empty_table_writes_header_only() {
    let text = render_csv(&SweepTable::default(), "loss = hinge");
    assert_eq!(text, format!("# loss = hinge\n{CSV_HEADER}\n"));
}

#[test]
fn csv_rows_follow_config_seed_epoch_order_and_round_trip() {
    let (mut cfg, p) = hinge_config(60, 5, 100, 12);
    cfg.repeats = 2;
    let r = solve_reference(&p, 2000, &[0.0; 5]).unwrap();
    let table = sweep(&cfg, SweepParam::Safeguard, &[1.0, 10.0], &p, Some(&r), &[0.0; 5]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out.csv");
    write_csv(&table, &path, "a = 1\nb = 2").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("# a = 1\n# b = 2\n"));

    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>().join(","), CSV_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 2 * 100);

    let mut k = 0;
    for entry in &table.entries {
        for rec in &entry.records {
            for m in &rec.epochs {
                let row = &rows[k];
                assert_eq!(&row[0], entry.config_id);
                assert_eq!(row[7].parse::<u64>().unwrap(), rec.seed);
                assert_eq!(row[8].parse::<usize>().unwrap(), m.epoch);
                assert_eq!(row[9].parse::<f64>().unwrap().to_bits(), m.f_last.to_bits());
                assert_eq!(row[10].parse::<f64>().unwrap().to_bits(), m.f_cesaro.to_bits());
                assert_eq!(row[11].parse::<f64>().unwrap().to_bits(), m.step_size.to_bits());
                assert_eq!(row[14].parse::<f64>().unwrap().to_bits(), m.subopt_last.unwrap().to_bits());
                // Fields the rule does not use are empty.
                assert_eq!(&row[5], "");
                assert_eq!(&row[6], "");
                assert_eq!(&row[13], "");
                k += 1;
            }
        }
    }
}

#[test]
fn write_csv_reports_the_failing_path() {
    let missing = std::path::Path::new("/nonexistent-dir/out.csv");
    match write_csv(&SweepTable::default(), missing, "") {
        Err(Error::Io { path, .. }) => assert_eq!(path, missing),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn aggregate_csv_documents_the_std_convention() {
    let (mut cfg, p) = hinge_config(40, 4, 2, 8);
    cfg.repeats = 1;
    let table = sweep(&cfg, SweepParam::GammaConst, &[0.1], &p, None, &[0.0; 4]).unwrap();
    let text = render_aggregate_csv(&table, "");
    assert!(text.contains("divisor repeats-1"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], AGGREGATE_CSV_HEADER);
    let width = AGGREGATE_CSV_HEADER.split(',').count();
    assert!(rows[1..].iter().all(|r| r.split(',').count() == width));
}

#[test]
fn comparison_sets_share_instance_and_seeds() {
    let (cfg, _) = hinge_config(40, 4, 2, 8);
    let grids = CompareGrids::default();
    let ssm = comparison_configs(&cfg, CompareFamily::Ssm, &grids);
    assert_eq!(ssm.len(), 5 + 1 + 4 + 4);
    let ima = comparison_configs(&cfg, CompareFamily::Ima, &grids);
    assert_eq!(ima.len(), 2 * (5 + 1 + 4));
    for (_, c) in ssm.iter().chain(&ima) {
        assert_eq!(c.instance, cfg.instance);
        assert_eq!(c.base_seed, cfg.base_seed);
        c.validate().unwrap();
    }
    let ids: HashSet<_> = ima.iter().map(|(id, _)| id.clone()).collect();
    assert_eq!(ids.len(), ima.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identical_configs_give_identical_csv(seed in 0u64..1000, batch in 1usize..20) {
        let (mut cfg, p) = hinge_config(20, 3, 3, batch);
        cfg.base_seed = seed;
        let a = sweep(&cfg, SweepParam::Safeguard, &[1.0, 10.0], &p, None, &[0.0; 3]).unwrap();
        let b = sweep(&cfg, SweepParam::Safeguard, &[1.0, 10.0], &p, None, &[0.0; 3]).unwrap();
        prop_assert_eq!(render_csv(&a, "x"), render_csv(&b, "x"));
    }

    #[test]
    fn aggregate_std_is_nonnegative_and_mean_is_bounded(vals in proptest::collection::vec(-1e3f64..1e3, 1..8)) {
        let (m, s) = mean_std(&vals);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s >= 0.0);
        prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
    }
}

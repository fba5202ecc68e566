mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use seqmc::harness::{RunTrace, TraceStep};
use seqmc::io::*;
use seqmc::Error;

#[test]
fn dense_matrix_roundtrip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let mut r = rng(1);
    let m = DMatrix::from_fn(10, 7, |_, _| {
        normal(&mut r) * 10f64.powi(r.random_range(-8..8))
    });
    save_dense_matrix(&path, &m).unwrap();
    let back = load_dense_matrix(&path).unwrap();
    assert!(m
        .iter()
        .zip(back.iter())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn triples_roundtrip_and_density() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.tsv");
    let mut r = rng(2);
    let (d, n) = (40, 50);
    let mut cells: Vec<(u64, u64)> = (0..n as u64)
        .flat_map(|u| (0..d as u64).map(move |i| (u, i)))
        .collect();
    // Shuffle deterministically and keep 1000 distinct pairs.
    for i in (1..cells.len()).rev() {
        cells.swap(i, r.random_range(0..=i));
    }
    cells.truncate(1000);
    let triples = RatingsTriples {
        rows: cells
            .iter()
            .map(|&(user, item)| Triple {
                user,
                item,
                rating: normal(&mut r),
            })
            .collect(),
    };
    save_ratings_triples(&path, &triples, b'\t').unwrap();
    let opts = TriplesOptions {
        delimiter: b'\t',
        ..Default::default()
    };
    let back = load_ratings_triples(&path, &opts).unwrap();
    assert_eq!(back, triples);

    let masked = densify(&back, (d, n), Orientation::UsersAsColumns).unwrap();
    assert_eq!(masked.n_known(), 1000);
    let density = masked.mask().iter().filter(|b| **b).count() as f64 / (d * n) as f64;
    assert_eq!(density, 1000.0 / (d * n) as f64);
}

#[test]
fn trace_roundtrip_is_field_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let mut r = rng(3);
    let mut trace = RunTrace::default();
    let mut cum = 0.0;
    for step in 1..=200 {
        cum += r.random::<f64>();
        trace.steps.push(TraceStep {
            step,
            row: r.random_range(0..20),
            col: r.random_range(0..40),
            reward: normal(&mut r),
            expected_reward: normal(&mut r),
            cum_regret: cum,
        });
    }
    save_trace(&trace, &path).unwrap();
    assert_eq!(load_trace(&path).unwrap().steps, trace.steps);

    save_trace(&RunTrace::default(), &path).unwrap();
    assert_eq!(count_lines(&path).unwrap(), 1);
    assert!(load_trace(&path).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn corrupted_files_are_rejected_or_clean(
        bytes in proptest::collection::vec(
            prop_oneof![
                Just(b'1'), Just(b'2'), Just(b'.'), Just(b','), Just(b'\n'), Just(b'-'),
                Just(b'e'), Just(b'N'), Just(b'a'), Just(b' '), Just(b'\t'), any::<u8>()
            ],
            0..80,
        )
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        fs::write(&path, &bytes).unwrap();
        if let Ok(m) = load_dense_matrix(&path) {
            prop_assert!(m.iter().all(|x| x.is_finite()));
        }
        if let Ok(t) = load_ratings_triples(&path, &TriplesOptions::default()) {
            prop_assert!(t.rows.iter().all(|x| x.rating.is_finite()));
        }
        if let Ok(t) = load_trace(&path) {
            prop_assert!(t.steps.iter().all(|s| s.reward.is_finite() && s.cum_regret.is_finite()));
        }
    }
}

#[test]
fn malformed_inputs_map_to_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, text: &str| {
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    assert!(matches!(
        load_dense_matrix(&write("a", "1,2\n3")),
        Err(Error::RaggedRow { .. })
    ));
    assert!(matches!(
        load_dense_matrix(&write("b", "1,x\n")),
        Err(Error::Parse { line: 1, .. })
    ));
    assert!(matches!(
        load_dense_matrix(&write("c", "")),
        Err(Error::EmptyFile(_))
    ));
    let dup = write("d", "0,0,5.0\n1,2,3.5\n0,0,1.0\n");
    match load_ratings_triples(&dup, &TriplesOptions::default()) {
        Err(Error::DuplicatePair { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected duplicate error, got {other:?}"),
    }
    assert!(matches!(
        load_trace(&write("e", "a,b,c\n")),
        Err(Error::Schema(_))
    ));
}

// End-to-end through the binary.

fn seqmc(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_seqmc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    v.sort();
    v
}

fn same_outputs(a: &Path, b: &Path) -> bool {
    ["traces", "aggregates"].iter().all(|sub| {
        let (fa, fb) = (files_in(&a.join(sub)), files_in(&b.join(sub)));
        fa.len() == fb.len()
            && fa.iter().zip(&fb).all(|(x, y)| {
                x.file_name() == y.file_name() && fs::read(x).unwrap() == fs::read(y).unwrap()
            })
    })
}

const SYNTH: &str = "D = 8\nN = 12\nranks = 1\nw_dist = uniform01\nruns = 2\npolicies = random\n";

#[test]
fn synth_writes_one_trace_per_run_and_one_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.cfg", SYNTH);
    let out = dir.path().join("out");
    let (code, err) = seqmc(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(files_in(&out.join("traces")).len(), 2);
    assert_eq!(files_in(&out.join("aggregates")).len(), 1);
    assert!(out.join("effective_config.txt").is_file());
}

#[test]
fn missing_key_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.cfg",
        "D = 8\nN = 12\nranks = 1\nruns = 1\npolicies = random\n",
    );
    let (code, err) = seqmc(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("w_dist"), "{err}");
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.cfg", &format!("{SYNTH}colour = blue\n"));
    let (code, err) = seqmc(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn masked_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let triples = write_config(dir.path(), "r.csv", "0,0,1.0\n0,1,2.0\n1,0,0.5\n");
    let cfg = write_config(
        dir.path(),
        "ds.cfg",
        &format!(
            "triples = {}\nshape = 2, 2\nk_model = 1\nruns = 1\npolicies = random\n",
            triples.display()
        ),
    );
    let (code, _) = seqmc(&[
        "run-dataset",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn dataset_runs_repeat_identically_and_from_the_echoed_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(4);
    let (_, m) = seqmc::harness::synth_generate(
        6,
        10,
        2,
        seqmc::harness::WeightDist::Uniform01,
        0.3,
        &mut r,
    )
    .unwrap();
    let matrix = dir.path().join("m.csv");
    save_dense_matrix(&matrix, &m).unwrap();
    let text = format!(
        "matrix = {}\nk_model = 2\nruns = 2\npolicies = ts,oracle,empirical\nsvi.max_iters = 40\nsvi.map_iters = 20\n",
        matrix.display()
    );
    let cfg = write_config(dir.path(), "ds.cfg", &text);
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("o{i}"))).collect();
    for o in &outs {
        let (code, err) = seqmc(&[
            "run-dataset",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            o.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
    }
    assert!(same_outputs(&outs[0], &outs[1]));
    let echoed = outs[0].join("effective_config.txt");
    let replay = dir.path().join("replay");
    let (code, err) = seqmc(&[
        "run-dataset",
        "--config",
        echoed.to_str().unwrap(),
        "--out",
        replay.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    assert!(same_outputs(&outs[0], &replay));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        "D = 6\nN = 10\nranks = 1,2\nw_dist = beta25\nruns = 2\npolicies = ts,random,greedy\nk_model = 3\nsvi.max_iters = 30\nsvi.map_iters = 10\n",
    );
    let a = dir.path().join("j1");
    let b = dir.path().join("j4");
    for (o, j) in [(&a, "1"), (&b, "4")] {
        let (code, err) = seqmc(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--jobs",
            j,
            "--out",
            o.to_str().unwrap(),
        ]);
        assert_eq!(code, 0, "{err}");
    }
    assert!(same_outputs(&a, &b));
}

#[test]
fn export_merges_and_rejects_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "s.cfg",
        &SYNTH.replace("policies = random", "policies = random,oracle"),
    );
    let out = dir.path().join("out");
    assert_eq!(
        seqmc(&[
            "synth",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap()
        ])
        .0,
        0
    );
    let merged = dir.path().join("merged.csv");
    let (code, err) = seqmc(&[
        "export",
        out.to_str().unwrap(),
        "--out",
        merged.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let records = load_aggregate(&merged).unwrap();
    let mut labels: Vec<String> = records.iter().map(|r| r.policy.to_string()).collect();
    labels.dedup();
    assert_eq!(labels, vec!["oracle", "random"]);

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(seqmc(&["export", empty.to_str().unwrap()]).0, 2);
}

#[test]
fn default_synthetic_dimensions_give_2600_aggregate_rows() {
    // D=50, N=100, K*=20 with every policy, shrunk inference settings so the
    // model-based policies stay fast; the horizon does not depend on them.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "large.cfg",
        "D = 50\nN = 100\nranks = 20\nw_dist = uniform01\nruns = 1\npolicies = all\n\
         svi.max_iters = 2\nsvi.n_mc_samples = 1\nsvi.map_iters = 2\nids.n_theta = 4\nids.candidates = 128\n\
         greedy.max_iters = 3\n",
    );
    let out = dir.path().join("out");
    let (code, err) = seqmc(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let aggregates = files_in(&out.join("aggregates"));
    assert_eq!(aggregates.len(), 6);
    for a in aggregates {
        assert_eq!(count_lines(&a).unwrap(), 2601, "{}", a.display());
    }
}

use numrep_cli::{dispatch, tree_contents};

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["numrep"];
    v.extend_from_slice(args);
    dispatch(v)
}

fn is_empty_dir(p: &std::path::Path) -> bool {
    !p.exists() || std::fs::read_dir(p).unwrap().next().is_none()
}

#[test]
fn unknown_flag_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let code = run(&["gen-data", "--out", out.to_str().unwrap(), "--bogus"]);
    assert_eq!(code, 2);
    assert!(is_empty_dir(&out));
}

#[test]
fn invalid_config_field_exits_2_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"steps": 1}"#).unwrap();
    let out = tmp.path().join("run");
    let code = run(&["full-run", "--oracle", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(is_empty_dir(&out));

    std::fs::write(&cfg, r#"{"no_such_field": 1}"#).unwrap();
    let code = run(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(is_empty_dir(&out));
}

#[test]
fn zero_threads_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    assert_eq!(run(&["gen-data", "--threads", "0", "--out", out.to_str().unwrap()]), 2);
    assert!(is_empty_dir(&out));
}

#[test]
fn stage_without_inputs_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let code = run(&["probe", "--out", out.to_str().unwrap()]);
    assert_ne!(code, 0);
    assert!(is_empty_dir(&out));
    let code = run(&["patch", "--oracle", "--out", out.to_str().unwrap()]);
    assert_ne!(code, 0);
    assert!(is_empty_dir(&out));
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn staged_oracle_run_matches_full_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    // small so that two runs stay quick
    std::fs::write(
        &cfg,
        r#"{"steps": 11, "n_test": 20, "side_effect_steps": 7, "side_effect_entities": 5,
            "locus_search": false, "k_sweep": [1, 2, 4, 8]}"#,
    )
    .unwrap();
    let c = cfg.to_str().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let a_s = a.to_str().unwrap();
    let b_s = b.to_str().unwrap();
    assert_eq!(run(&["full-run", "--oracle", "--seed", "3", "--config", c, "--out", a_s]), 0);
    for stage in ["gen-data", "probe", "patch", "side-effects", "report"] {
        assert_eq!(run(&[stage, "--oracle", "--seed", "3", "--config", c, "--out", b_s]), 0, "{stage}");
    }
    let strip = |v: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        v.into_iter().filter(|(p, _)| p != "bundle.json").collect()
    };
    let ta = strip(tree_contents(&a).unwrap());
    let tb = strip(tree_contents(&b).unwrap());
    let names = |t: &[(String, Vec<u8>)]| t.iter().map(|x| x.0.clone()).collect::<Vec<_>>();
    assert_eq!(names(&ta), names(&tb));
    for ((p, x), (_, y)) in ta.iter().zip(&tb) {
        assert!(x == y, "{p} differs");
    }
    for f in ["summary.json", "bundle.json", "side_effects/matrix.svg", "patch/summary.csv"] {
        assert!(a.join(f).is_file(), "{f}");
    }
}

#[test]
fn self_test_passes_on_the_oracle() {
    assert!(numrep_cli::self_test(1, Some(1)).unwrap());
    assert_eq!(run(&["self-test", "--threads", "0"]), 2);
}

use std::process::Command;

fn superprim(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_superprim"))
        .args(args)
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    assert_eq!(superprim(&["--help"]).status.code(), Some(0));
    assert_eq!(superprim(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let out = out.to_str().unwrap();
    assert_eq!(superprim(&["synth", "--preset", "nope", "--out", out]).status.code(), Some(1));
    assert_eq!(superprim(&["integrate", "--bundle", "/does/not/exist", "--out", out]).status.code(), Some(2));
}

#[test]
fn synth_then_integrate_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    assert!(superprim(&["synth", "--out", &p("s")]).status.success());
    assert!(superprim(&["integrate", "--bundle", &p("s/frame_0000"), "--out", &p("i")]).status.success());
    let status = std::fs::read_to_string(p("i/status.txt")).unwrap();
    assert!(status.lines().count() > 0 && status.lines().all(|l| l == "ok"));

    let r = superprim(&[
        "eval-depth",
        "--pred",
        &p("s/frame_0000/depth.f32"),
        "--gt",
        &p("s/frame_0000/depth.f32"),
        "--intr",
        &p("s/frame_0000/intrinsics.txt"),
    ]);
    let text = String::from_utf8(r.stdout).unwrap();
    assert!(text.contains("mae_mm 0.000000"), "{text}");
}

#[test]
fn vo_config_typos_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("vo.toml");
    std::fs::write(&cfg, "windw_size = 3\n").unwrap();
    let frames = dir.path().join("frames");
    std::fs::create_dir(&frames).unwrap();
    let r = superprim(&[
        "vo",
        "--frames",
        frames.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("windw_size"));
}

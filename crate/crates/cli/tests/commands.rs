mod common;

use common::*;
use motionalign::data::{load_dataset, read_motion_file};
use motionalign_cli::api::{
    ApiMotionPayload, ClassifyRequest, DecodeRequest, EncodeRequest, EncodeResponse, Service,
};

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["encode", "--bogus"]).status.code(), Some(2));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&help.stdout).contains("text2motion"));
    let fx = Fixture::new();
    let o = run(&[
        "edit",
        "--checkpoint",
        fx.ckpt(),
        "--term",
        "one:text:walk",
        "--out",
        "x.mclip",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "edit",
        "--checkpoint",
        fx.ckpt(),
        "--term",
        "1:sound:walk",
        "--out",
        "x.mclip",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_with_one() {
    let fx = Fixture::new();
    let missing = fx.path("missing.ckpt");
    let o = run(&[
        "encode",
        "--checkpoint",
        s(&missing),
        "--motion",
        s(&fx.walk),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&[
        "text2motion",
        "--checkpoint",
        fx.ckpt(),
        "--prompt",
        " ",
        "--out",
        s(&fx.path("e.mclip")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("empty"));
    let o = run(&[
        "classify",
        "--checkpoint",
        fx.ckpt(),
        "--motion",
        s(&fx.walk),
        "--classes",
        "walk",
    ]);
    assert_eq!(o.status.code(), Some(1));
    std::fs::write(fx.path("bad.ckpt"), b"garbage").unwrap();
    let o = run(&[
        "encode",
        "--checkpoint",
        s(&fx.path("bad.ckpt")),
        "--motion",
        s(&fx.walk),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_synth_and_stats() {
    let fx = Fixture::new();
    let out = fx.path("data");
    let o = run(&[
        "data",
        "synth",
        "--seed",
        "4",
        "--families",
        "3",
        "--per-family",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success());
    assert_eq!(load_dataset(&out).unwrap().len(), 6);
    let o = run(&["data", "stats", "--data", s(&out)]);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["records"], 6);
    assert_eq!(stats["windows"], 6);
}

#[test]
fn text2motion_output_renders() {
    let fx = Fixture::new();
    let m = fx.path("m.mclip");
    let o = run(&[
        "text2motion",
        "--checkpoint",
        fx.ckpt(),
        "--prompt",
        "jump",
        "--out",
        s(&m),
    ]);
    assert!(o.status.success());
    let motion = read_motion_file(&m).unwrap();
    assert_eq!(motion.len(), 60);
    let frames = fx.path("frames");
    let o = run(&[
        "render",
        "--motion",
        s(&m),
        "--render-dir",
        s(&frames),
        "--every",
        "20",
        "--width",
        "32",
        "--height",
        "32",
    ]);
    assert!(o.status.success());
    let mut names: Vec<String> = std::fs::read_dir(&frames)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["frame_0000.png", "frame_0020.png", "frame_0040.png"]
    );
}

#[test]
fn interp_emits_steps_with_exact_endpoints() {
    let fx = Fixture::new();
    let out = fx.path("interp");
    let o = run(&[
        "interp",
        "--checkpoint",
        fx.ckpt(),
        "--a",
        s(&fx.walk),
        "--b",
        s(&fx.jump),
        "--steps",
        "5",
        "--frames",
        "30",
        "--out-dir",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 5);

    let svc = Service::load(&fx.checkpoint, None).unwrap();
    for (file, src) in [
        ("interp_000.mclip", &fx.walk),
        ("interp_004.mclip", &fx.jump),
    ] {
        let motion = ApiMotionPayload::from_motion(&read_motion_file(src).unwrap(), None).unwrap();
        let z: EncodeResponse = svc.encode(&EncodeRequest { motion }).unwrap();
        let direct = svc
            .decode(&DecodeRequest {
                latent: z.latent,
                frames: Some(30),
            })
            .unwrap();
        assert_eq!(
            read_motion_file(out.join(file)).unwrap(),
            direct.motion.to_motion().unwrap()
        );
    }
}

#[test]
fn classify_prints_a_ranked_table() {
    let fx = Fixture::new();
    let o = run(&[
        "classify",
        "--checkpoint",
        fx.ckpt(),
        "--motion",
        s(&fx.walk),
        "--classes",
        "walk,jump,bow",
    ]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("rank"));
    assert_eq!(lines.len(), 4);

    let svc = Service::load(&fx.checkpoint, None).unwrap();
    let expect = svc
        .classify(&ClassifyRequest {
            motion: ApiMotionPayload::from_motion(&read_motion_file(&fx.walk).unwrap(), None)
                .unwrap(),
            classes: vec!["walk".into(), "jump".into(), "bow".into()],
            top_k: None,
            temperature: None,
        })
        .unwrap();
    for (line, r) in lines[1..].iter().zip(&expect.top) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(cols[1], r.class);
        assert_eq!(cols[2], format!("{:.6}", r.probability));
    }
}

#[test]
fn edit_terms_from_files_and_text() {
    let fx = Fixture::new();
    let z = fx.path("z.json");
    let o = run(&[
        "encode",
        "--checkpoint",
        fx.ckpt(),
        "--motion",
        s(&fx.jump),
        "--out",
        s(&z),
    ]);
    assert!(o.status.success());
    let out = fx.path("e.mclip");
    let o = run(&[
        "edit",
        "--checkpoint",
        fx.ckpt(),
        "--term",
        &format!("1:motion:{}", s(&fx.walk)),
        "--term",
        &format!("-1:latent:{}", s(&z)),
        "--term",
        "0.5:text:happy",
        "--frames",
        "12",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_motion_file(&out).unwrap().len(), 12);
}

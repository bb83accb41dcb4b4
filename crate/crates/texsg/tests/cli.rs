use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use texsg::imageio::{read_pfm, write_pfm_rgb};
use texsg_core::math::Rgb;
use texsg_core::raster::Image;

fn texsg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_texsg")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = texsg(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn demo_render_and_relight() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&["demo-scene", "--out", s(&d), "--frames", "2", "--resolution", "24"]);
    let scene = d.join("scene.json");
    let r = tmp.path().join("r");
    ok(&["render", "--scene", s(&scene), "--out", s(&r), "--frames", "0", "--aovs", "albedo,occlusion,mask"]);
    for f in ["rgb_000.png", "rgb_000.pfm", "albedo_000.png", "occlusion_000.pfm", "mask_000.png", "ho_mask_000.png", "poses.json", "manifest.json"] {
        assert!(r.join(f).exists(), "missing {f}");
    }
    assert!(!r.join("rgb_001.pfm").exists());
    let occ = read_pfm(&r.join("occlusion_000.pfm")).unwrap();
    assert!(occ.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    assert!(occ.data.iter().any(|&v| v > 0.0), "the hand should occlude part of the box");

    let env2 = tmp.path().join("env2.json");
    fs::copy(d.join("env.json"), &env2).unwrap();
    let r2 = tmp.path().join("r2");
    ok(&["relight", "--scene", s(&scene), "--env", s(&env2), "--out", s(&r2), "--frames", "0"]);
    assert!(fs::read(r.join("rgb_000.pfm")).unwrap() == fs::read(r2.join("rgb_000.pfm")).unwrap());

    let r3 = tmp.path().join("r3");
    ok(&["render", "--scene", s(&scene), "--out", s(&r3), "--frames", "0", "--aovs", "albedo,occlusion,mask"]);
    for f in ["rgb_000.pfm", "occlusion_000.pfm", "poses.json"] {
        assert!(fs::read(r.join(f)).unwrap() == fs::read(r3.join(f)).unwrap(), "{f} differs between runs");
    }
    let outputs = |dir: &Path| -> serde_json::Value {
        serde_json::from_str::<serde_json::Value>(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()["outputs"].clone()
    };
    assert_eq!(outputs(&r), outputs(&r3));
}

#[test]
fn render_without_hand_has_no_occlusion() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&["demo-scene", "--out", s(&d), "--frames", "1", "--resolution", "16", "--no-hand"]);
    assert!(!d.join("hand.json").exists());
    let r = tmp.path().join("r");
    ok(&["render", "--scene", s(&d.join("scene.json")), "--out", s(&r), "--aovs", "occlusion"]);
    let occ = read_pfm(&r.join("occlusion_000.pfm")).unwrap();
    assert!(occ.data.iter().all(|&v| v == 0.0));
}

#[test]
fn validate_occlusion_suite() {
    let tmp = tempfile::tempdir().unwrap();
    let v = tmp.path().join("v");
    ok(&["validate-occlusion", "--cases", "100", "--samples", "1000000", "--out", s(&v)]);
    let mut rdr = csv::Reader::from_path(v.join("validate_occlusion.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["case_id", "eta", "caps", "analytic", "oracle", "rel_error", "time_analytic", "time_oracle"]);
    let mut rel: Vec<f64> = rdr.records().map(|r| r.unwrap()[5].parse().unwrap()).collect();
    assert_eq!(rel.len(), 100);
    rel.sort_by(f64::total_cmp);
    assert!(rel[49] <= 0.05 && rel[50] <= 0.05, "median {}", rel[50]);
    assert!(fs::read_to_string(v.join("validate_occlusion.svg")).unwrap().contains("</svg>"));
}

#[test]
fn bench_writes_the_documented_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let b = tmp.path().join("b");
    ok(&["bench", "--cases", "3", "--samples", "2000", "--out", s(&b)]);
    let text = fs::read_to_string(b.join("bench.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "case_id,eta,n_spheres,analytic_value,mc_value,mc_stderr,rel_err,t_analytic_us,t_mc_us");
    assert_eq!(text.lines().count(), 4);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.join("bench_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["analytic_ray_tests"], 0);
}

#[test]
fn short_fit_from_a_render() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&["demo-scene", "--out", s(&d), "--frames", "2", "--resolution", "16"]);
    let r = tmp.path().join("r");
    ok(&["render", "--scene", s(&d.join("scene.json")), "--out", s(&r)]);
    let f = tmp.path().join("f");
    ok(&["fit", "--scene", s(&d.join("scene.json")), s(&r), "--out", s(&f), "--iters", "20", "--seed", "3", "--freeze", "env,specular"]);
    let params: serde_json::Value = serde_json::from_str(&fs::read_to_string(f.join("params.json")).unwrap()).unwrap();
    assert_eq!(params["steps"], 20);
    assert_eq!(params["specular"], serde_json::json!([0.04, 0.04, 0.04]));
    let history = fs::read_to_string(f.join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 21);
    for p in ["before_rgb_000.pfm", "after_rgb_000.pfm", "after_albedo_000.png", "loss_history.svg", "albedo_texture.png"] {
        assert!(f.join(p).exists(), "missing {p}");
    }
}

#[test]
fn fit_env_on_a_constant_map() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("sky.pfm");
    write_pfm_rgb(&img, &Image::filled(32, 16, Rgb::new(0.5, 0.6, 0.7))).unwrap();
    let out = tmp.path().join("e");
    ok(&["fit-env", "--env", s(&img), "--num-sg", "16", "--sharpness", "4", "--out", s(&out)]);
    let env: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("env.json")).unwrap()).unwrap();
    assert_eq!(env.as_array().unwrap().len(), 16);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.json");
    let out = texsg(&["render", "--scene", s(&missing), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.json"));
    assert_eq!(texsg(&["render", "--scene", "a", "--out", "b", "--bogus"]).status.code(), Some(1));
    assert_eq!(texsg(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(texsg(&["--help"]).status.code(), Some(0));

    let d = tmp.path().join("d");
    ok(&["demo-scene", "--out", s(&d), "--frames", "1", "--resolution", "8"]);
    let scene = d.join("scene.json");
    assert_eq!(texsg(&["render", "--scene", s(&scene), "--out", s(&tmp.path().join("r")), "--aovs", "normals"]).status.code(), Some(1));

    let mut env: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("env.json")).unwrap()).unwrap();
    for lobe in env.as_array_mut().unwrap() {
        lobe["amplitude"] = serde_json::json!([1e308, 1e308, 1e308]);
    }
    let huge = tmp.path().join("huge.json");
    fs::write(&huge, env.to_string()).unwrap();
    let out = texsg(&["render", "--scene", s(&scene), "--env", s(&huge), "--out", s(&tmp.path().join("h"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

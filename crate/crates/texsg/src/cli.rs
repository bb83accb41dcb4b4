//! The `texsg` command line.
//!
//! Exit codes: 0 on success, 1 for bad input (arguments, missing or
//! malformed files), 2 for numerical failure (NaN output, singular skinning,
//! diverged fit).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use texsg_core::demo::{demo_scene, DemoOptions};
use texsg_core::env::{env_fit, SGEnvironment, DEFAULT_LOBES};
use texsg_core::fit::{albedo_rmse, fit, flat_start, FitConfig, FitProblem, FitState, Freeze, Observation, ObservedFrame};
use texsg_core::math::Rgb;
use texsg_core::occlusion::OcclusionEngine;
use texsg_core::oracle::{bench_occlusion, mc_sg_integral, random_occlusion_case, OracleConfig, Sampling, BENCH_CSV_HEADER};
use texsg_core::raster::Image;
use texsg_core::shading::{relight, RenderOptions, RenderOutput, Renderer, Scene};
use texsg_core::Error as CoreError;

use crate::formats::{self, IndexedFrame, PosesFile};
use crate::imageio;
use crate::manifest::Manifest;
use crate::plot::{Plot, Style};

#[derive(Debug, Parser)]
#[command(name = "texsg", version, about = "Spherical Gaussian shading with analytic hand occlusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the bundled textured-box-and-hand scene.
    DemoScene(DemoArgs),
    /// Render frames with RGB, masks and optional AOVs.
    Render(RenderArgs),
    /// Render a scene under a different SG environment.
    Relight(RelightArgs),
    /// Compare analytic occlusion with the Monte-Carlo oracle on random cases.
    ValidateOcclusion(ValidateArgs),
    /// Time analytic occlusion against the Monte-Carlo oracle.
    Bench(BenchArgs),
    /// Recover material and lighting from an observation directory.
    Fit(FitArgs),
    /// Fit SG lobes to an equirectangular HDR environment map.
    FitEnv(FitEnvArgs),
}

#[derive(Debug, Args, Serialize)]
struct DemoArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    /// Image width and height in pixels.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    /// Leave out the hand.
    #[arg(long)]
    no_hand: bool,
}

#[derive(Debug, Args, Serialize)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Frame selection such as `all`, `0,3` or `0-6`.
    #[arg(long, default_value = "all")]
    frames: String,
    /// Environment JSON replacing the scene's.
    #[arg(long)]
    env: Option<PathBuf>,
    /// Extra outputs: albedo, occlusion, specular, mask, ho_mask.
    #[arg(long, value_delimiter = ',')]
    aovs: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct RelightArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    frames: String,
    #[arg(long, value_delimiter = ',')]
    aovs: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    #[arg(long, default_value_t = 100)]
    cases: u64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    cases: u64,
    /// Oracle samples per query.
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Directory with poses.json, rgb_NNN.pfm, mask_NNN.png and ho_mask_NNN.png.
    observations: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "all")]
    frames: String,
    #[arg(long, default_value_t = 2000)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parameters held fixed: albedo, roughness, specular, indirect, env, none.
    #[arg(long, value_delimiter = ',')]
    freeze: Option<Vec<String>>,
    /// Initial environment JSON (defaults to the scene's).
    #[arg(long)]
    env: Option<PathBuf>,
    /// Ignore hand occlusion while fitting.
    #[arg(long)]
    no_occlusion: bool,
}

#[derive(Debug, Args, Serialize)]
struct FitEnvArgs {
    /// Equirectangular .hdr, .exr or .pfm image.
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LOBES)]
    num_sg: usize,
    #[arg(long, default_value_t = 12.0)]
    sharpness: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Parse `args` (including the program name), run the command and return
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = std::env::var("TEXSG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    let numerical = e.chain().any(|c| {
        matches!(c.downcast_ref::<CoreError>(), Some(CoreError::Numerical(_) | CoreError::Diverged(_) | CoreError::SingularSkinning(_)))
    });
    if numerical {
        2
    } else {
        1
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::DemoScene(a) => demo_cmd(&a),
        Command::Render(a) => {
            let mut scene = formats::load_scene(&a.scene)?;
            let mut inputs = formats::scene_inputs(&a.scene)?;
            if let Some(env) = &a.env {
                scene = relight(&scene, &formats::load_env(env)?);
                inputs.push(env.clone());
            }
            render_cmd("render", &a, &scene, &a.frames, &a.aovs, &a.out, &inputs)
        }
        Command::Relight(a) => {
            let scene = formats::load_scene(&a.scene)?;
            let scene = relight(&scene, &formats::load_env(&a.env)?);
            let mut inputs = formats::scene_inputs(&a.scene)?;
            inputs.push(a.env.clone());
            render_cmd("relight", &a, &scene, &a.frames, &a.aovs, &a.out, &inputs)
        }
        Command::ValidateOcclusion(a) => validate_cmd(&a),
        Command::Bench(a) => bench_cmd(&a),
        Command::Fit(a) => fit_cmd(&a),
        Command::FitEnv(a) => fit_env_cmd(&a),
    }
}

fn config<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn create_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

/// Parse `all`, `3`, `0,2,5` or `0-6` against `n` available frames.
pub fn parse_frames(spec: &str, n: usize) -> Result<Vec<usize>> {
    if spec.trim() == "all" {
        return Ok((0..n).collect());
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let num = |s: &str| s.trim().parse::<usize>().with_context(|| format!("bad frame selection {spec:?}"));
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    bail!("bad frame range {part:?}");
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        bail!("empty frame selection {spec:?}");
    }
    if let Some(bad) = out.iter().find(|&&k| k >= n) {
        bail!("frame {bad} out of range (scene has {n} frames)");
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn finite_rgb(img: &Image<Rgb>, what: &str) -> Result<()> {
    if img.has_non_finite() {
        return Err(CoreError::Numerical(format!("{what} contains NaN or infinite values")).into());
    }
    Ok(())
}

fn finite_gray(img: &Image<f64>, what: &str) -> Result<()> {
    if img.has_non_finite() {
        return Err(CoreError::Numerical(format!("{what} contains NaN or infinite values")).into());
    }
    Ok(())
}

fn save_rgb(out: &Path, name: &str, img: &Image<Rgb>, written: &mut Vec<PathBuf>) -> Result<()> {
    finite_rgb(img, name)?;
    for (ext, png) in [("png", true), ("pfm", false)] {
        let p = out.join(format!("{name}.{ext}"));
        if png {
            imageio::write_png_rgb(&p, img)?;
        } else {
            imageio::write_pfm_rgb(&p, img)?;
        }
        written.push(p);
    }
    Ok(())
}

fn save_gray(out: &Path, name: &str, img: &Image<f64>, written: &mut Vec<PathBuf>) -> Result<()> {
    finite_gray(img, name)?;
    for (ext, png) in [("png", true), ("pfm", false)] {
        let p = out.join(format!("{name}.{ext}"));
        if png {
            imageio::write_png_gray(&p, img)?;
        } else {
            imageio::write_pfm_gray(&p, img)?;
        }
        written.push(p);
    }
    Ok(())
}

const AOVS: [&str; 5] = ["albedo", "occlusion", "specular", "mask", "ho_mask"];

/// Write one rendered frame. Masks are always written so a render
/// directory can serve as fit observations.
fn save_render(out: &Path, k: usize, r: &RenderOutput, aovs: &[String], prefix: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    save_rgb(out, &format!("{prefix}rgb_{k:03}"), &r.rgb, written)?;
    save_gray(out, &format!("{prefix}mask_{k:03}"), &r.mask, written)?;
    save_gray(out, &format!("{prefix}ho_mask_{k:03}"), &r.hand_object_mask, written)?;
    for a in aovs {
        match a.as_str() {
            "albedo" => save_rgb(out, &format!("{prefix}albedo_{k:03}"), &r.albedo, written)?,
            "occlusion" => save_gray(out, &format!("{prefix}occlusion_{k:03}"), &r.occlusion, written)?,
            "specular" => save_rgb(out, &format!("{prefix}specular_{k:03}"), &r.specular, written)?,
            _ => {}
        }
    }
    Ok(())
}

fn check_aovs(aovs: &[String]) -> Result<()> {
    if let Some(bad) = aovs.iter().find(|a| !AOVS.contains(&a.as_str())) {
        bail!("unknown AOV {bad:?} (expected one of {})", AOVS.join(", "));
    }
    Ok(())
}

fn demo_cmd(a: &DemoArgs) -> Result<()> {
    if a.frames == 0 || a.resolution == 0 {
        bail!("--frames and --resolution must be positive");
    }
    create_out(&a.out)?;
    let scene = demo_scene(&DemoOptions { frames: a.frames, width: a.resolution, height: a.resolution, with_hand: !a.no_hand })?;
    formats::save_scene(&a.out, &scene)?;
    let written: Vec<PathBuf> = ["scene.json", "object.obj", "env.json", "material.json", "hand.json", "seeds.json"]
        .iter()
        .map(|f| a.out.join(f))
        .filter(|p| p.exists())
        .collect();
    Manifest::new("demo-scene", config(a), None).finish(&a.out, &written)
}

fn render_cmd<T: Serialize>(name: &str, args: &T, scene: &Scene, frames: &str, aovs: &[String], out: &Path, inputs: &[PathBuf]) -> Result<()> {
    check_aovs(aovs)?;
    let frames = parse_frames(frames, scene.frames.len())?;
    let mut manifest = Manifest::new(name, config(args), None);
    for p in inputs {
        manifest.input(p)?;
    }
    create_out(out)?;
    let renderer = Renderer::new(scene);
    let mut written = Vec::new();
    let mut poses = Vec::new();
    for &k in &frames {
        let t = Instant::now();
        let r = renderer.render_frame(scene, k, &RenderOptions::default())?;
        log::info!("frame {k}: {:.2}s, {} clamped pixels", t.elapsed().as_secs_f64(), r.clamped_pixels);
        save_render(out, k, &r, aovs, "", &mut written)?;
        poses.push(IndexedFrame { index: k, frame: formats::frame_to_file(&scene.frames[k]) });
    }
    let p = out.join("poses.json");
    formats::write_json(&p, &PosesFile { frames: poses })?;
    written.push(p);
    manifest.finish(out, &written)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Validated {
    id: u64,
    eta: f64,
    caps: usize,
    analytic: f64,
    oracle: f64,
    rel: f64,
    t_analytic: f64,
    t_oracle: f64,
}

fn validate_cmd(a: &ValidateArgs) -> Result<()> {
    if a.cases == 0 || a.samples == 0 {
        bail!("--cases and --samples must be positive");
    }
    create_out(&a.out)?;
    let engine = OcclusionEngine::default();
    let rows = (0..a.cases)
        .into_par_iter()
        .map(|id| -> Result<Validated> {
            let case = random_occlusion_case(a.seed, id);
            let t = Instant::now();
            let analytic = engine.occluded_sg_integral(&case.sg, &case.query())?.occluded.x;
            let t_analytic = t.elapsed().as_secs_f64() * 1e6;
            let cfg = OracleConfig::new(a.samples, a.seed, Sampling::Lobe)?.with_stream(id);
            let t = Instant::now();
            let oracle = mc_sg_integral(&case.sg, &case.spheres, &case.point, &case.normal, &cfg)?.occluded.x;
            let t_oracle = t.elapsed().as_secs_f64() * 1e6;
            let rel = if oracle > 0.0 { (analytic - oracle).abs() / oracle } else if analytic == 0.0 { 0.0 } else { f64::INFINITY };
            Ok(Validated { id, eta: case.sg.sharpness, caps: case.spheres.len(), analytic, oracle, rel, t_analytic, t_oracle })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.iter().any(|r| !r.analytic.is_finite() || !r.oracle.is_finite()) {
        return Err(CoreError::Numerical("non-finite occlusion integral".into()).into());
    }
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.eta.to_string(),
                r.caps.to_string(),
                r.analytic.to_string(),
                r.oracle.to_string(),
                r.rel.to_string(),
                format!("{:.3}", r.t_analytic),
                format!("{:.3}", r.t_oracle),
            ]
        })
        .collect();
    let csv_path = a.out.join("validate_occlusion.csv");
    write_csv(&csv_path, &["case_id", "eta", "caps", "analytic", "oracle", "rel_error", "time_analytic", "time_oracle"], &csv_rows)?;

    let mut rels: Vec<f64> = rows.iter().map(|r| r.rel).collect();
    let max = rels.iter().cloned().fold(0.0, f64::max);
    let med = median(&mut rels);
    let mut plot = Plot::new("Analytic occlusion vs Monte-Carlo oracle", "lobe sharpness", "relative error")
        .series("cases", Style::Points, rows.iter().map(|r| (r.eta, r.rel)).collect());
    plot.guides = vec![("5%".into(), 0.05), ("15%".into(), 0.15)];
    let svg = a.out.join("validate_occlusion.svg");
    plot.save(&svg)?;
    let summary = a.out.join("validate_summary.json");
    formats::write_json(&summary, &serde_json::json!({ "cases": rows.len(), "median_rel_error": med, "max_rel_error": max }))?;
    println!("{} cases: median relative error {med:.4}, max {max:.4}", rows.len());
    Manifest::new("validate-occlusion", config(a), Some(a.seed)).finish(&a.out, &[csv_path, svg, summary])
}

fn bench_cmd(a: &BenchArgs) -> Result<()> {
    if a.cases == 0 || a.samples == 0 {
        bail!("--cases and --samples must be positive");
    }
    create_out(&a.out)?;
    let engine = OcclusionEngine::default();
    let cases: Vec<_> = (0..a.cases).map(|id| random_occlusion_case(a.seed, id)).collect();
    let rows = bench_occlusion(&engine, &cases, a.samples, a.seed)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.case_id.to_string(),
                r.eta.to_string(),
                r.n_spheres.to_string(),
                r.analytic_value.to_string(),
                r.mc_value.to_string(),
                r.mc_stderr.to_string(),
                r.rel_err.to_string(),
                format!("{:.3}", r.t_analytic_us),
                format!("{:.3}", r.t_mc_us),
            ]
        })
        .collect();
    let csv_path = a.out.join("bench.csv");
    write_csv(&csv_path, &BENCH_CSV_HEADER, &csv_rows)?;
    let ta: f64 = rows.iter().map(|r| r.t_analytic_us).sum();
    let tm: f64 = rows.iter().map(|r| r.t_mc_us).sum();
    let ray_tests: u64 = rows.iter().map(|r| r.analytic_ray_tests).sum();
    let mut rels: Vec<f64> = rows.iter().map(|r| r.rel_err).collect();
    let summary = a.out.join("bench_summary.json");
    formats::write_json(
        &summary,
        &serde_json::json!({
            "cases": rows.len(),
            "mc_samples": a.samples,
            "analytic_us_mean": ta / rows.len() as f64,
            "mc_us_mean": tm / rows.len() as f64,
            "speedup": tm / ta,
            "analytic_ray_tests": ray_tests,
            "median_rel_err": median(&mut rels),
        }),
    )?;
    let mut plot = Plot::new("Time per (point, lobe) query", "case", "microseconds")
        .series("analytic", Style::Points, rows.iter().map(|r| (r.case_id as f64, r.t_analytic_us)).collect())
        .series("Monte-Carlo", Style::Points, rows.iter().map(|r| (r.case_id as f64, r.t_mc_us)).collect());
    plot.log_y = true;
    let svg = a.out.join("bench.svg");
    plot.save(&svg)?;
    println!("speedup {:.1}x over {} samples per query, {} analytic ray tests", tm / ta, a.samples, ray_tests);
    Manifest::new("bench", config(a), Some(a.seed)).finish(&a.out, &[csv_path, summary, svg])
}

fn parse_freeze(list: &Option<Vec<String>>) -> Result<Freeze> {
    let Some(list) = list else { return Ok(Freeze::default()) };
    let mut f = Freeze::NONE;
    for item in list {
        match item.trim() {
            "albedo" => f.albedo = true,
            "roughness" => f.roughness = true,
            "specular" => f.specular = true,
            "indirect" => f.indirect = true,
            "env" => f.env = true,
            "all" => f = Freeze::ALL,
            "none" | "" => {}
            other => bail!("unknown --freeze entry {other:?} (expected albedo, roughness, specular, indirect, env, all or none)"),
        }
    }
    Ok(f)
}

type Observed = (Vec<usize>, Vec<texsg_core::shading::Frame>, Observation, Vec<PathBuf>);

/// Load the frames of an observation directory, in `poses.json` order.
fn load_observations(dir: &Path, select: &str) -> Result<Observed> {
    let poses_path = dir.join("poses.json");
    let poses: PosesFile = formats::read_json(&poses_path)?;
    let mut available: Vec<usize> = poses.frames.iter().map(|f| f.index).collect();
    available.sort_unstable();
    let wanted: Vec<usize> = if select.trim() == "all" {
        available.clone()
    } else {
        let max = available.last().map_or(0, |m| m + 1);
        let w = parse_frames(select, max)?;
        if let Some(bad) = w.iter().find(|k| !available.contains(k)) {
            bail!("frame {bad} is not in {}", poses_path.display());
        }
        w
    };
    let mut inputs = vec![poses_path.clone()];
    let mut frames = Vec::new();
    let mut obs = Vec::new();
    for (slot, &k) in wanted.iter().enumerate() {
        let entry = poses.frames.iter().find(|f| f.index == k).expect("selected frames exist");
        let frame = formats::frame_from_file(&entry.frame).with_context(|| format!("frame {k} of {}", poses_path.display()))?;
        let rgb_p = dir.join(format!("rgb_{k:03}.pfm"));
        let mask_p = dir.join(format!("mask_{k:03}.png"));
        let ho_p = dir.join(format!("ho_mask_{k:03}.png"));
        let rgb = imageio::read_pfm_rgb(&rgb_p)?;
        let mask = imageio::read_png_gray(&mask_p)?;
        let ho = imageio::read_png_gray(&ho_p)?;
        if (rgb.width, rgb.height) != (frame.camera.width, frame.camera.height) {
            bail!("{} is {}x{} but the camera of frame {k} is {}x{}", rgb_p.display(), rgb.width, rgb.height, frame.camera.width, frame.camera.height);
        }
        obs.push(ObservedFrame::new(slot, rgb, mask, ho).with_context(|| format!("observation frame {k}"))?);
        frames.push(frame);
        inputs.extend([rgb_p, mask_p, ho_p]);
    }
    Ok((wanted, frames, Observation { frames: obs }, inputs))
}

#[derive(Serialize)]
struct ParamsFile {
    material: formats::MaterialFile,
    environment: formats::EnvFile,
    indirect: [f64; 3],
    specular: [f64; 3],
    steps: usize,
    final_monitor_loss: Option<f64>,
    status: String,
    /// Albedo RMSE against the scene's material over observed texels.
    scene_albedo_rmse: f64,
}

fn write_fit_outputs(out: &Path, base: &Scene, init: &FitState, state: &FitState, problem: &FitProblem, status: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let fitted = state.apply(base);
    let p = out.join("params.json");
    let rgb3 = |c: &Rgb| [c.x, c.y, c.z];
    formats::write_json(
        &p,
        &ParamsFile {
            material: formats::material_to_file(&fitted.material),
            environment: formats::env_to_file(&fitted.environment),
            indirect: rgb3(&fitted.material.indirect),
            specular: rgb3(&fitted.material.specular),
            steps: state.step,
            final_monitor_loss: state.loss_history.iter().rev().find_map(|r| r.monitor),
            status: status.into(),
            scene_albedo_rmse: albedo_rmse(&state.material.albedo.texels, &base.material.albedo.texels, Some(problem.observed_texels())),
        },
    )?;
    written.push(p);

    let csv_path = out.join("loss_history.csv");
    let rows: Vec<Vec<String>> = state
        .loss_history
        .iter()
        .map(|r| {
            vec![
                r.step.to_string(),
                r.batch.rgb.to_string(),
                r.batch.mask.to_string(),
                r.batch.eikonal.to_string(),
                r.batch.total.to_string(),
                r.monitor.map(|m| m.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(&csv_path, &["step", "rgb", "mask", "eikonal", "total", "monitor"], &rows)?;
    written.push(csv_path);
    let mut plot = Plot::new("Fit loss", "iteration", "loss")
        .series("batch total", Style::Line, state.loss_history.iter().map(|r| (r.step as f64, r.batch.total)).collect())
        .series("monitor", Style::Line, state.loss_history.iter().filter_map(|r| r.monitor.map(|m| (r.step as f64, m))).collect());
    plot.log_y = true;
    let svg = out.join("loss_history.svg");
    plot.save(&svg)?;
    written.push(svg);

    let tex = &fitted.material.albedo;
    let tex_img = Image { width: tex.width, height: tex.height, data: tex.texels.clone() };
    save_rgb(out, "albedo_texture", &tex_img, written)?;

    let aovs: Vec<String> = ["albedo", "occlusion", "specular"].iter().map(|s| s.to_string()).collect();
    let before = init.apply(base);
    for (prefix, scene) in [("before_", &before), ("after_", &fitted)] {
        let r = Renderer::new(scene).render_frame(scene, 0, &RenderOptions::default())?;
        save_render(out, 0, &r, &aovs, prefix, written)?;
    }
    Ok(())
}

fn fit_cmd(a: &FitArgs) -> Result<()> {
    if a.iters == 0 {
        bail!("--iters must be positive");
    }
    let freeze = parse_freeze(&a.freeze)?;
    let mut scene = formats::load_scene(&a.scene)?;
    let mut manifest = Manifest::new("fit", config(a), Some(a.seed));
    for p in formats::scene_inputs(&a.scene)? {
        manifest.input(&p)?;
    }
    if let Some(env) = &a.env {
        scene = relight(&scene, &formats::load_env(env)?);
        manifest.input(env)?;
    }
    let (indices, frames, obs, inputs) = load_observations(&a.observations, &a.frames)?;
    for p in &inputs {
        manifest.input(p)?;
    }
    scene.frames = frames;
    create_out(&a.out)?;

    let renderer = Renderer::new(&scene);
    let t = Instant::now();
    let problem = FitProblem::new(&renderer, &scene, &obs, !a.no_occlusion)?;
    log::info!(
        "frames {:?}: {} pixels, {} silhouette rays, set up in {:.1}s",
        indices,
        problem.pixel_count(),
        problem.mask_ray_count(),
        t.elapsed().as_secs_f64()
    );
    let init = flat_start(&scene, 0.5, 0.5, 0.04, 0.5);
    let cfg = FitConfig { iters: a.iters, seed: a.seed, freeze, ..FitConfig::default() };
    let t = Instant::now();
    let result = fit(&problem, init.clone(), &cfg);
    log::info!("fit finished in {:.1}s", t.elapsed().as_secs_f64());
    let mut written = Vec::new();
    match result {
        Ok(state) => {
            write_fit_outputs(&a.out, &scene, &init, &state, &problem, "completed", &mut written)?;
            manifest.finish(&a.out, &written)
        }
        Err(failure) => {
            write_fit_outputs(&a.out, &scene, &init, &failure.state, &problem, &format!("aborted: {failure}"), &mut written)?;
            manifest.finish(&a.out, &written)?;
            Err(anyhow::Error::new(failure.error.clone())).context(format!("fit aborted after {} steps; state written to {}", failure.state.step, a.out.display()))
        }
    }
}

fn fit_env_cmd(a: &FitEnvArgs) -> Result<()> {
    let image = imageio::read_equirect(&a.env)?;
    let mut manifest = Manifest::new("fit-env", config(a), None);
    manifest.input(&a.env)?;
    create_out(&a.out)?;
    let fitted = env_fit(&image, a.num_sg, a.sharpness)?;
    let env: &SGEnvironment = &fitted.env;
    if env.amplitudes().iter().any(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(CoreError::Numerical("fitted lobe amplitudes are not finite".into()).into());
    }
    let env_path = a.out.join("env.json");
    formats::write_json(&env_path, &formats::env_to_file(env))?;
    let report = a.out.join("fit_env.json");
    formats::write_json(&report, &serde_json::json!({ "lobes": env.len(), "sharpness": a.sharpness, "relative_error": fitted.relative_error }))?;
    println!("{} lobes, relative error {:.4}", env.len(), fitted.relative_error);
    manifest.finish(&a.out, &[env_path, report])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_selection() {
        assert_eq!(parse_frames("all", 3).unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_frames("0-2,5,1", 8).unwrap(), vec![0, 1, 2, 5]);
        assert!(parse_frames("7", 3).is_err());
        assert!(parse_frames("3-1", 8).is_err());
        assert!(parse_frames("x", 8).is_err());
    }

    #[test]
    fn freeze_lists() {
        assert_eq!(parse_freeze(&None).unwrap(), Freeze::default());
        let f = parse_freeze(&Some(vec!["albedo".into(), "env".into()])).unwrap();
        assert!(f.albedo && f.env && !f.roughness);
        assert!(parse_freeze(&Some(vec!["axes".into()])).is_err());
    }

    #[test]
    fn numerical_errors_map_to_two() {
        let e = anyhow::Error::new(CoreError::Numerical("x".into())).context("outer");
        assert_eq!(exit_code(&e), 2);
        assert_eq!(exit_code(&anyhow::anyhow!("missing file")), 1);
        assert_eq!(exit_code(&anyhow::Error::new(CoreError::Invalid("x".into()))), 1);
    }
}

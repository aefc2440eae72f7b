use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use splatnav::protocol::Client;
use splatnav::server::Service;
use splatnav_core::env::{write_log_csv, Env, EnvConfig, EnvWorld, LogRow, Stage, Termination};
use splatnav_core::image_io::write_ppm;
use splatnav_core::relight::{
    build_occlusion_field, edit_light, load_field, save_field, EnvLight, FieldParams, GridSpec, LightEdit,
    LightSpec, LightTransport, OcclusionField,
};
use splatnav_core::render::{render, render_colors, Background, Camera, Shading};
use splatnav_core::scene::{gen_forest, load_scene, save_scene, write_atomically, ForestParams, SceneModel};

/// Camera pose from the command line; yaw in radians.
struct Pose {
    position: [f64; 3],
    yaw: f64,
}

#[derive(Parser)]
#[command(name = "splatnav", version, about = "Relightable splat forest simulator for UAV navigation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural forest scene.
    GenForest(GenForestArgs),
    /// Render one frame, baked or relit.
    Render(RenderArgs),
    /// Render a relit frame under an edited light, or the preset strip.
    Relight(RelightArgs),
    /// Precompute the occlusion probe field for a scene.
    ProbeField(ProbeFieldArgs),
    /// Run scripted episodes and log them.
    Rollout(RolloutArgs),
    /// Serve the environment over TCP.
    Serve(ServeArgs),
    /// Report rendering, stepping and protocol throughput.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenForestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    trees: usize,
    /// Side of the square area in meters.
    #[arg(long, default_value_t = 60.0)]
    size: f32,
    /// JSON file with generator parameters; --trees and --size override it.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baked,
    Relit,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackgroundKind {
    /// Gray for baked frames, sky from the light for relit frames.
    Auto,
    /// Sky from the light in both modes.
    Sky,
}

#[derive(Args)]
struct ViewArgs {
    #[arg(long)]
    scene: PathBuf,
    /// `x,y,z,yaw` with yaw in degrees; defaults to the scene center at 1.5 m facing +x.
    #[arg(long)]
    pose: Option<String>,
    #[arg(long, default_value_t = 96)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Horizontal field of view in degrees.
    #[arg(long, default_value_t = 90.0)]
    hfov: f64,
    /// Occlusion field; without one every Gaussian sees the full sphere.
    #[arg(long)]
    field: Option<PathBuf>,
    /// Light spec JSON: an edit of the default sky, `{"uniform": r}` or `{"panorama": "sky.pfm"}`.
    #[arg(long)]
    light: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long, value_enum, default_value_t = Mode::Relit)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = BackgroundKind::Auto)]
    background: BackgroundKind,
}

#[derive(Args)]
struct RelightArgs {
    #[command(flatten)]
    view: ViewArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    rotate_deg: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    intensity: f64,
    /// Per-channel tint `r,g,b`.
    #[arg(long, default_value = "1,1,1", allow_hyphen_values = true)]
    tint: String,
    /// Emit the original/overcast/dusk/morning strip instead of one frame.
    #[arg(long, conflicts_with_all = ["rotate_deg", "intensity", "tint"])]
    grid: bool,
}

#[derive(Args)]
struct ProbeFieldArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Probe spacing in meters.
    #[arg(long, default_value_t = 1.0)]
    cell: f64,
    /// Occluder distance threshold in meters.
    #[arg(long, default_value_t = 0.3)]
    thresh: f64,
    #[arg(long, default_value_t = 32)]
    face_res: usize,
    /// Far plane of the probe faces in meters.
    #[arg(long, default_value_t = 2.0)]
    range: f64,
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    z_min: f64,
    #[arg(long, default_value_t = 4.5, allow_negative_numbers = true)]
    z_max: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    /// Zero yaw-rate command; episodes start facing the goal.
    Straight,
    /// Uniform yaw-rate commands.
    Random,
    /// Actions read from --script, then zero.
    Scripted,
}

#[derive(Args)]
struct WorldArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    field: Option<PathBuf>,
    /// Environment config JSON; RNS_* variables override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base light spec JSON; defaults to the procedural sky.
    #[arg(long)]
    light: Option<PathBuf>,
}

#[derive(Args)]
struct RolloutArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, value_enum, default_value_t = Policy::Straight)]
    policy: Policy,
    /// Whitespace- or comma-separated yaw-rate commands for the scripted policy.
    #[arg(long, required_if_eq("policy", "scripted"))]
    script: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    episodes: usize,
    /// Episode k uses seed + k.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Curriculum stage, 1 (static light) or 2 (randomized light).
    #[arg(long)]
    stage: Option<u8>,
    #[arg(long)]
    no_randomization: bool,
    /// Per-step log of every episode.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Summary JSON; always printed to stdout as well.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    world: WorldArgs,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 7878)]
    port: u16,
}

#[derive(Args)]
struct BenchArgs {
    /// Scene to use; defaults to a generated 50-tree forest.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    sessions: usize,
    /// Steps per protocol session.
    #[arg(long, default_value_t = 50)]
    session_steps: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            // clap's usage block spans several lines; keep only the message
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default();
            eprintln!("splatnav: {}", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("splatnav: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenForest(a) => gen_forest_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Relight(a) => relight_cmd(a),
        Command::ProbeField(a) => probe_field_cmd(a),
        Command::Rollout(a) => rollout_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn parse_floats<const N: usize>(s: &str, what: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != N {
        bail!("{what} needs {N} comma-separated numbers, got {s:?}");
    }
    let mut out = [0.0f64; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().with_context(|| format!("{what}: {p:?} is not a number"))?;
        if !o.is_finite() {
            bail!("{what}: {p:?} is not finite");
        }
    }
    Ok(out)
}

fn read_scene(path: &Path) -> Result<SceneModel> {
    load_scene(path).with_context(|| format!("loading scene {}", path.display()))
}

fn read_field(path: Option<&Path>) -> Result<Option<OcclusionField>> {
    path.map(|p| load_field(p).with_context(|| format!("loading field {}", p.display())))
        .transpose()
}

fn read_light(path: Option<&Path>, degree: usize) -> Result<EnvLight> {
    let base = EnvLight::default_sky(degree);
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading light spec {}", path.display()))?;
    let spec: LightSpec =
        serde_json::from_str(&text).with_context(|| format!("parsing light spec {}", path.display()))?;
    Ok(spec.resolve(&base, path.parent())?)
}

fn transport_for(scene: &SceneModel, field: Option<&OcclusionField>) -> Result<LightTransport> {
    let norm = Default::default();
    Ok(match field {
        Some(f) => LightTransport::new(scene, f, &norm)?,
        None => LightTransport::unoccluded(scene, &norm),
    })
}

fn camera(scene: &SceneModel, v: &ViewArgs) -> Result<Camera> {
    let pose = match &v.pose {
        Some(s) => {
            let [x, y, z, yaw] = parse_floats::<4>(s, "--pose")?;
            Pose { position: [x, y, z], yaw: yaw.to_radians() }
        }
        None => {
            let c = scene.bounds().center();
            Pose { position: [c.x, c.y, scene.ground_z() as f64 + 1.5], yaw: 0.0 }
        }
    };
    Ok(Camera::from_pose(pose.position.into(), pose.yaw, (v.width, v.height), v.hfov)?)
}

fn write_frame_ppm(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    write_ppm(path, w, h, rgb).with_context(|| format!("writing {}", path.display()))
}

fn gen_forest_cmd(a: GenForestArgs) -> Result<()> {
    let mut params = match &a.params {
        Some(p) => serde_json::from_str::<ForestParams>(&std::fs::read_to_string(p)?)
            .with_context(|| format!("parsing forest params {}", p.display()))?,
        None => ForestParams::default(),
    };
    if !(a.size > 0.0 && a.size.is_finite()) {
        bail!("--size must be positive");
    }
    params.area = [0.0, 0.0, a.size, a.size];
    params.n_trees = a.trees;
    let scene = gen_forest(a.seed, &params)?;
    save_scene(&scene, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    println!("{} gaussians -> {}", scene.gaussians().len(), a.output.display());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let scene = read_scene(&a.view.scene)?;
    let cam = camera(&scene, &a.view)?;
    let light = read_light(a.view.light.as_deref(), scene.degree())?;
    let fb = match a.mode {
        Mode::Relit => {
            let field = read_field(a.view.field.as_deref())?;
            let transport = transport_for(&scene, field.as_ref())?;
            render(&scene, &cam, &Shading::Relit { light: &light, transport: &transport })?
        }
        Mode::Baked => match a.background {
            BackgroundKind::Auto => render(&scene, &cam, &Shading::Baked)?,
            BackgroundKind::Sky => {
                if !scene.has_baked() {
                    bail!("scene has no baked radiance");
                }
                let deg = scene.degree();
                let colors: Vec<[f64; 3]> = scene
                    .gaussians()
                    .iter()
                    .map(|g| {
                        let dir = splatnav_core::sh::Direction::normalize(g.mean() - cam.position)
                            .unwrap_or_else(|| splatnav_core::sh::Direction::from_spherical(0.0, 0.0));
                        let c = g.baked_sh(deg).expect("checked").eval(dir);
                        [c[0], c[1], c[2]]
                    })
                    .collect();
                render_colors(&scene, &cam, &colors, &Background::sky_from_light(&light))
            }
        },
    };
    write_frame_ppm(&a.view.output, fb.width, fb.height, &fb.to_rgb8())
}

fn relight_cmd(a: RelightArgs) -> Result<()> {
    let scene = read_scene(&a.view.scene)?;
    let cam = camera(&scene, &a.view)?;
    let base = read_light(a.view.light.as_deref(), scene.degree())?;
    let field = read_field(a.view.field.as_deref())?;
    let transport = transport_for(&scene, field.as_ref())?;
    let frame = |edit: &LightEdit| -> Result<Vec<u8>> {
        let light = edit_light(&base, edit)?;
        Ok(render(&scene, &cam, &Shading::Relit { light: &light, transport: &transport })?.to_rgb8())
    };
    let (w, h) = (cam.width, cam.height);
    if a.grid {
        let frames = LightEdit::PRESETS
            .iter()
            .map(|name| frame(&LightEdit::preset(name).expect("known preset")))
            .collect::<Result<Vec<_>>>()?;
        let mut strip = Vec::with_capacity(frames.len() * 3 * w * h);
        for row in 0..h {
            for f in &frames {
                strip.extend_from_slice(&f[row * 3 * w..(row + 1) * 3 * w]);
            }
        }
        write_frame_ppm(&a.view.output, frames.len() * w, h, &strip)
    } else {
        let edit = LightEdit {
            rotation: a.rotate_deg.to_radians(),
            intensity: a.intensity,
            tint: parse_floats::<3>(&a.tint, "--tint")?,
        };
        write_frame_ppm(&a.view.output, w, h, &frame(&edit)?)
    }
}

fn probe_field_cmd(a: ProbeFieldArgs) -> Result<()> {
    let scene = read_scene(&a.scene)?;
    let grid = GridSpec::covering(&scene, a.cell, [a.z_min, a.z_max])?;
    let params = FieldParams {
        d_thresh: a.thresh,
        face_res: a.face_res,
        probe_range: a.range,
    };
    let t = Instant::now();
    let field = build_occlusion_field(&scene, grid, params)?;
    save_field(&field, &a.output).with_context(|| format!("writing {}", a.output.display()))?;
    println!(
        "{} probes ({}x{}x{}) in {:.1}s -> {}",
        grid.node_count(),
        grid.dims[0],
        grid.dims[1],
        grid.dims[2],
        t.elapsed().as_secs_f64(),
        a.output.display()
    );
    Ok(())
}

fn load_world(w: &WorldArgs, config: &EnvConfig) -> Result<Arc<EnvWorld>> {
    let scene = read_scene(&w.scene)?;
    let field = read_field(w.field.as_deref())?;
    let light = read_light(w.light.as_deref(), scene.degree())?;
    Ok(Arc::new(EnvWorld::new(scene, field.as_ref(), light, config)?))
}

fn load_config(path: Option<&Path>) -> Result<EnvConfig> {
    EnvConfig::load(path).with_context(|| match path {
        Some(p) => format!("loading config {}", p.display()),
        None => "applying RNS_* overrides".to_string(),
    })
}

fn read_script(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("script {}: {t:?} is not a finite number", path.display()))
        })
        .collect()
}

fn rollout_cmd(a: RolloutArgs) -> Result<()> {
    if a.episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let mut config = load_config(a.world.config.as_deref())?;
    if a.no_randomization {
        config.randomization.enabled = false;
    }
    let stage = match a.stage {
        Some(s) => Stage::try_from(s).map_err(|e| anyhow!(e))?,
        None => config.stage,
    };
    let script = a.script.as_deref().map(read_script).transpose()?.unwrap_or_default();
    let world = load_world(&a.world, &config)?;
    let u_max = config.dynamics.u_max;
    let mut env = Env::new(world, config)?;
    let mut rows: Vec<LogRow> = Vec::new();
    let (mut successes, mut collisions, mut total_reward, mut total_steps) = (0usize, 0usize, 0.0, 0usize);
    for k in 0..a.episodes {
        let seed = a.seed.wrapping_add(k as u64);
        env.reset(seed, stage)?;
        let mut policy_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_a11);
        let mut ret = 0.0;
        let mut t = 0;
        loop {
            let action = match a.policy {
                Policy::Straight => 0.0,
                Policy::Random => policy_rng.gen_range(-u_max..=u_max),
                Policy::Scripted => script.get(t).copied().unwrap_or(0.0),
            };
            let r = env.step(action)?;
            ret += r.reward;
            t += 1;
            if r.terminated {
                match r.reason {
                    Termination::Success => successes += 1,
                    Termination::Collision => collisions += 1,
                    _ => {}
                }
                break;
            }
        }
        total_reward += ret;
        total_steps += t;
        rows.extend_from_slice(env.episode_log());
    }
    if let Some(p) = &a.csv {
        write_log_csv(p, &rows).with_context(|| format!("writing {}", p.display()))?;
    }
    let n = a.episodes as f64;
    let summary = json!({
        "episodes": a.episodes,
        "success_rate": successes as f64 / n,
        "collision_rate": collisions as f64 / n,
        "mean_reward": total_reward / n,
        "mean_steps": total_steps as f64 / n,
    });
    if let Some(p) = &a.summary {
        write_atomically(p, format!("{summary:#}\n").as_bytes()).with_context(|| format!("writing {}", p.display()))?;
    }
    println!("{summary}");
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let config = load_config(a.world.config.as_deref())?;
    let world = load_world(&a.world, &config)?;
    let svc = Service::new(world, config)?;
    let listener = std::net::TcpListener::bind((a.host.as_str(), a.port))
        .with_context(|| format!("binding {}:{}", a.host, a.port))?;
    println!("listening on {}", listener.local_addr()?);
    svc.serve(listener)?;
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    if a.frames == 0 || a.steps == 0 || a.sessions == 0 || a.session_steps == 0 {
        bail!("bench counts must be positive");
    }
    let scene = match &a.scene {
        Some(p) => read_scene(p)?,
        None => gen_forest(0, &ForestParams::default())?,
    };
    let field = read_field(a.field.as_deref())?;
    let mut config = EnvConfig::default();
    config.sampling.min_distance = 10.0;
    let light = EnvLight::default_sky(scene.degree());
    let world = Arc::new(EnvWorld::new(scene, field.as_ref(), light.clone(), &config)?);

    let mut env = Env::new(world.clone(), config.clone())?;
    env.reset(0, Stage::StaticLight)?;
    let s = *env.state().expect("reset");
    let cam = Camera::from_pose(s.p, s.yaw, (config.image_width, config.image_height), config.hfov_deg)?;
    let t = Instant::now();
    for _ in 0..a.frames {
        render(&world.scene, &cam, &Shading::Relit { light: &light, transport: &world.transport })?;
    }
    let fps = a.frames as f64 / t.elapsed().as_secs_f64();
    println!(
        "render: {fps:.1} frames/s at {}x{} ({} gaussians)",
        config.image_height,
        config.image_width,
        world.scene.gaussians().len()
    );

    let t = Instant::now();
    let mut seed = 1;
    for _ in 0..a.steps {
        if env.is_done() {
            env.reset(seed, Stage::RandomizedLight)?;
            seed += 1;
        }
        env.step(0.0)?;
    }
    println!("env: {:.1} steps/s", a.steps as f64 / t.elapsed().as_secs_f64());

    let (addr, _server) = Service::new(world, config)?.spawn("127.0.0.1:0")?;
    let t = Instant::now();
    let workers: Vec<_> = (0..a.sessions)
        .map(|i| {
            let n = a.session_steps;
            std::thread::spawn(move || -> Result<usize> {
                let mut c = Client::connect(addr)?;
                let mut seed = i as u64 * 1000;
                c.reset(seed, None)?;
                for _ in 0..n {
                    if c.step(0.0)?.done {
                        seed += 1;
                        c.reset(seed, None)?;
                    }
                }
                c.close()?;
                Ok(n)
            })
        })
        .collect();
    let mut steps = 0;
    for w in workers {
        steps += w.join().map_err(|_| anyhow!("bench session panicked"))??;
    }
    println!(
        "protocol: {:.1} steps/s aggregate over {} sessions",
        steps as f64 / t.elapsed().as_secs_f64(),
        a.sessions
    );
    Ok(())
}

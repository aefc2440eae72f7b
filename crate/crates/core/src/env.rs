//! Navigation environment: episode lifecycle, observations, reward,
//! termination and domain randomization.

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dynamics::{self, DroneState, DynParams};
use crate::error::{Error, Result};
use crate::relight::{edit_light, EnvLight, LightEdit, LightTransport, OcclusionField, ShadingNorm};
use crate::render::{self, Background, Camera};
use crate::scene::{extract_point_cloud, SceneModel, DEFAULT_ALPHA_MIN};
use crate::world::{check_collision, sample_start_goal, CollisionSpec, SamplingSpec, SpatialIndex, StartGoal};

/// Prefix of environment variables that override config keys, e.g.
/// `RNS_DYNAMICS__K_PSI=4` sets `dynamics.k_psi`.
pub const ENV_PREFIX: &str = "RNS_";

/// Curriculum stage: original illumination, or a fresh light edit per episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Stage {
    #[default]
    StaticLight,
    RandomizedLight,
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Stage::StaticLight),
            2 => Ok(Stage::RandomizedLight),
            _ => Err(format!("stage must be 1 or 2, got {v}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        match s {
            Stage::StaticLight => 1,
            Stage::RandomizedLight => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub progress: f64,
    pub align: f64,
    pub obstacle: f64,
    pub success: f64,
    pub collision: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            progress: 1.0,
            align: 0.1,
            obstacle: 0.2,
            success: 100.0,
            collision: -50.0,
        }
    }
}

/// Distributions for the randomized quantities. Intervals are `[lo, hi]`,
/// noise terms are zero-mean standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomizationConfig {
    /// Off turns every dynamics and sensing perturbation into its nominal
    /// value. Light edits are governed by the stage alone.
    pub enabled: bool,
    pub action_noise_std: f64,
    pub latency_ms: [f64; 2],
    pub control_interval_ms: [f64; 2],
    pub position_noise_xy: f64,
    pub position_noise_z: f64,
    pub velocity_noise: f64,
    pub camera_position_offset: f64,
    pub camera_orientation_offset_deg: f64,
    pub light_rotation_deg: [f64; 2],
    pub light_intensity: [f64; 2],
    pub light_tint: [f64; 2],
}

impl Default for RandomizationConfig {
    fn default() -> Self {
        RandomizationConfig {
            enabled: true,
            action_noise_std: 1.0,
            latency_ms: [0.0, 80.0],
            control_interval_ms: [10.0, 100.0],
            position_noise_xy: 0.05,
            position_noise_z: 0.03,
            velocity_noise: 0.08,
            camera_position_offset: 0.1,
            camera_orientation_offset_deg: 5.0,
            light_rotation_deg: [0.0, 360.0],
            light_intensity: [0.3, 1.7],
            light_tint: [0.8, 1.2],
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn gaussian<R: Rng>(rng: &mut R, std: f64) -> f64 {
    Normal::new(0.0, std).expect("validated std").sample(rng)
}

/// Per-episode draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeDraw {
    pub camera_position_offset: [f64; 3],
    pub camera_orientation_offset_deg: [f64; 3],
    pub light: LightEdit,
}

/// Per-step draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDraw {
    pub action_noise: f64,
    pub latency_ms: f64,
    pub control_interval_ms: f64,
    pub position_noise: [f64; 3],
    pub velocity_noise: [f64; 3],
}

/// Everything randomized that affected one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RandomizationDraw {
    #[serde(flatten)]
    pub episode: EpisodeDraw,
    #[serde(flatten)]
    pub step: StepDraw,
}

impl RandomizationConfig {
    pub fn validate(&self) -> Result<()> {
        let intervals = [
            ("latency_ms", self.latency_ms),
            ("control_interval_ms", self.control_interval_ms),
            ("light_rotation_deg", self.light_rotation_deg),
            ("light_intensity", self.light_intensity),
            ("light_tint", self.light_tint),
        ];
        for (name, [lo, hi]) in intervals {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Config(format!("{name} must be a finite [lo, hi] with lo <= hi")));
            }
        }
        if self.latency_ms[0] < 0.0 || self.control_interval_ms[0] <= 0.0 {
            return Err(Error::Config("latency must be >= 0 and control interval > 0".into()));
        }
        if self.light_intensity[0] < 0.0 || self.light_tint[0] < 0.0 {
            return Err(Error::Config("light intensity and tint must be >= 0".into()));
        }
        let scales = [
            self.action_noise_std,
            self.position_noise_xy,
            self.position_noise_z,
            self.velocity_noise,
            self.camera_position_offset,
            self.camera_orientation_offset_deg,
        ];
        if scales.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::Config("noise and offset magnitudes must be >= 0".into()));
        }
        Ok(())
    }

    pub fn draw_episode<R: Rng>(&self, rng: &mut R, stage: Stage) -> EpisodeDraw {
        let mut d = EpisodeDraw::default();
        if self.enabled {
            let p = self.camera_position_offset;
            let o = self.camera_orientation_offset_deg;
            d.camera_position_offset = [(); 3].map(|_| uniform(rng, [-p, p]));
            d.camera_orientation_offset_deg = [(); 3].map(|_| uniform(rng, [-o, o]));
        }
        if stage == Stage::RandomizedLight {
            d.light = LightEdit {
                rotation: uniform(rng, self.light_rotation_deg).to_radians(),
                intensity: uniform(rng, self.light_intensity),
                tint: [(); 3].map(|_| uniform(rng, self.light_tint)),
            };
        }
        d
    }

    pub fn draw_step<R: Rng>(&self, rng: &mut R, nominal_dt: f64) -> StepDraw {
        if !self.enabled {
            return StepDraw {
                control_interval_ms: 1000.0 * nominal_dt,
                ..StepDraw::default()
            };
        }
        StepDraw {
            action_noise: gaussian(rng, self.action_noise_std),
            latency_ms: uniform(rng, self.latency_ms),
            control_interval_ms: uniform(rng, self.control_interval_ms),
            position_noise: [
                gaussian(rng, self.position_noise_xy),
                gaussian(rng, self.position_noise_xy),
                gaussian(rng, self.position_noise_z),
            ],
            velocity_noise: [(); 3].map(|_| gaussian(rng, self.velocity_noise)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    /// Nominal control interval; sets the integration substep size.
    pub dt: f64,
    pub max_steps: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub hfov_deg: f64,
    pub collision: CollisionSpec,
    pub dynamics: DynParams,
    pub reward: RewardWeights,
    pub randomization: RandomizationConfig,
    pub sampling: SamplingSpec,
    pub stage: Stage,
    pub shading: ShadingNorm,
    pub alpha_min: f32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.1,
            max_steps: 600,
            image_height: 64,
            image_width: 96,
            hfov_deg: 90.0,
            collision: CollisionSpec::default(),
            dynamics: DynParams::default(),
            reward: RewardWeights::default(),
            randomization: RandomizationConfig::default(),
            sampling: SamplingSpec::default(),
            stage: Stage::StaticLight,
            shading: ShadingNorm::default(),
            alpha_min: DEFAULT_ALPHA_MIN,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.max_steps == 0 || self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Config("max_steps and image size must be positive".into()));
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 180.0) {
            return Err(Error::Config("hfov_deg must be in (0, 180)".into()));
        }
        let w = &self.reward;
        if [w.progress, w.align, w.obstacle, w.success, w.collision]
            .iter()
            .any(|v| !v.is_finite())
        {
            return Err(Error::Config("reward weights must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha_min) {
            return Err(Error::Config("alpha_min must be in [0, 1]".into()));
        }
        self.dynamics.validate()?;
        self.collision.validate()?;
        self.randomization.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: EnvConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads `path` (defaults when `None`) and applies `RNS_*` variables
    /// from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut c = match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?)?,
            None => EnvConfig::default(),
        };
        c.apply_overrides(std::env::vars())?;
        Ok(c)
    }

    /// Applies `PREFIX` + `SECTION__KEY` overrides. Values are parsed as
    /// JSON when possible and taken as strings otherwise.
    pub fn apply_overrides<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut vars: Vec<_> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|r| (r.to_ascii_lowercase(), v)))
            .collect();
        if vars.is_empty() {
            return Ok(());
        }
        vars.sort();
        let mut root = serde_json::to_value(&*self)?;
        for (key, raw) in vars {
            let mut slot = &mut root;
            for part in key.split("__") {
                slot = slot
                    .get_mut(part)
                    .ok_or_else(|| Error::Config(format!("unknown config key {ENV_PREFIX}{}", key.to_uppercase())))?;
            }
            *slot = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        }
        let c: EnvConfig = serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        *self = c;
        Ok(())
    }
}

/// Reward terms before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardComponents {
    pub progress: f64,
    pub align: f64,
    pub obstacle: f64,
    pub success: f64,
    pub collision: f64,
}

impl RewardComponents {
    pub fn weighted(&self, w: &RewardWeights) -> RewardComponents {
        RewardComponents {
            progress: w.progress * self.progress,
            align: w.align * self.align,
            obstacle: w.obstacle * self.obstacle,
            success: w.success * self.success,
            collision: w.collision * self.collision,
        }
    }

    /// `Σ λ_i r_i`, always summed in field order.
    pub fn weighted_sum(&self, w: &RewardWeights) -> f64 {
        let c = self.weighted(w);
        c.progress + c.align + c.obstacle + c.success + c.collision
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardEvents {
    pub success: bool,
    pub collision: bool,
}

/// Returns `(total, components)`; `total` is exactly `weighted_sum`.
#[allow(clippy::too_many_arguments)]
pub fn compute_reward(
    prev_d: f64,
    d_t: f64,
    psi: f64,
    psi_target: f64,
    d_obs: f64,
    events: RewardEvents,
    r_safe: f64,
    weights: &RewardWeights,
) -> (f64, RewardComponents) {
    let c = RewardComponents {
        progress: prev_d - d_t,
        align: (psi_target - psi).cos(),
        obstacle: ((d_obs - r_safe) / r_safe).min(0.0),
        success: f64::from(u8::from(events.success)),
        collision: f64::from(u8::from(events.collision)),
    };
    (c.weighted_sum(weights), c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Running,
    Success,
    Collision,
    Timeout,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Running => "running",
            Termination::Success => "success",
            Termination::Collision => "collision",
            Termination::Timeout => "timeout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB8.
    pub image: Vec<u8>,
    /// `[p_rel (body frame), v (world), ψ, ψ̇]`.
    pub state: [f64; 8],
}

/// Interval of simulated time integrated under one command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub u: f64,
    /// Step that issued the active command; `None` for the reset command.
    pub issued_by: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub step: usize,
    pub components: RewardComponents,
    pub weighted: RewardComponents,
    pub d_t: f64,
    /// `+∞` (null in JSON) when no obstacle is in range.
    #[serde(with = "inf_as_null")]
    pub d_obs: f64,
    pub psi_target: f64,
    /// Command after clamp, noise and re-clamp.
    pub applied_action: f64,
    pub randomization: RandomizationDraw,
    pub segments: Vec<Segment>,
    pub sim_time: f64,
    pub position: [f64; 3],
    pub yaw: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub reason: Termination,
    pub info: StepInfo,
}

/// One row of the episode CSV log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub seed: u64,
    pub step: usize,
    pub action: f64,
    pub applied_action: f64,
    pub r_progress: f64,
    pub r_align: f64,
    pub r_obstacle: f64,
    pub r_success: f64,
    pub r_collision: f64,
    pub reward: f64,
    pub d_t: f64,
    pub d_obs: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
    pub reason: String,
}

pub fn write_log_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    crate::scene::write_atomically(path, &buf)
}

/// Immutable data shared by every environment instance.
#[derive(Debug)]
pub struct EnvWorld {
    pub scene: SceneModel,
    pub base_light: EnvLight,
    pub transport: LightTransport,
    pub index: SpatialIndex,
    /// `[min_x, min_y, max_x, max_y]` used for start/goal sampling.
    pub area: [f64; 4],
}

impl EnvWorld {
    /// Without a field every Gaussian sees the full sphere.
    pub fn new(
        scene: SceneModel,
        field: Option<&OcclusionField>,
        base_light: EnvLight,
        config: &EnvConfig,
    ) -> Result<Self> {
        if base_light.degree() != scene.degree() {
            return Err(Error::DegreeMismatch {
                left: scene.degree(),
                right: base_light.degree(),
            });
        }
        let transport = match field {
            Some(f) => LightTransport::new(&scene, f, &config.shading)?,
            None => LightTransport::unoccluded(&scene, &config.shading),
        };
        let index = SpatialIndex::build(extract_point_cloud(&scene, Some(config.alpha_min)));
        let b = scene.bounds();
        let area = [b.min[0] as f64, b.min[1] as f64, b.max[0] as f64, b.max[1] as f64];
        Ok(EnvWorld {
            scene,
            base_light,
            transport,
            index,
            area,
        })
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    effect_time: f64,
    issued_by: usize,
    u: f64,
}

struct Episode {
    seed: u64,
    state: DroneState,
    goal: Vector3<f64>,
    draw: EpisodeDraw,
    colors: Vec<[f64; 3]>,
    background: Background,
    time: f64,
    active_u: f64,
    active_from: Option<usize>,
    pending: Vec<Pending>,
    steps: usize,
    prev_d: f64,
    done: bool,
    log: Vec<LogRow>,
}

pub struct Env {
    world: Arc<EnvWorld>,
    config: EnvConfig,
    rng: ChaCha8Rng,
    episode: Option<Episode>,
}

impl Env {
    pub fn new(world: Arc<EnvWorld>, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Env {
            world,
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn world(&self) -> &Arc<EnvWorld> {
        &self.world
    }

    /// Starts an episode at a sampled start/goal pair.
    pub fn reset(&mut self, seed: u64, stage: Stage) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let sg = sample_start_goal(
            &self.world.index,
            self.world.area,
            self.config.dynamics.z_ref,
            &self.config.collision,
            &self.config.sampling,
            &mut self.rng,
        )?;
        self.begin(seed, stage, sg)
    }

    /// Starts an episode at a given start/goal pair.
    pub fn reset_at(&mut self, seed: u64, stage: Stage, sg: StartGoal) -> Result<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.begin(seed, stage, sg)
    }

    fn begin(&mut self, seed: u64, stage: Stage, sg: StartGoal) -> Result<Observation> {
        let draw = self.config.randomization.draw_episode(&mut self.rng, stage);
        let light = edit_light(&self.world.base_light, &draw.light)?;
        let colors = self.world.transport.colors(&light)?;
        let start = Vector3::new(sg.start.x, sg.start.y, self.config.dynamics.z_ref);
        let goal = Vector3::new(sg.goal.x, sg.goal.y, self.config.dynamics.z_ref);
        let ep = Episode {
            seed,
            state: DroneState::hover(start, sg.yaw),
            goal,
            draw,
            background: Background::sky_from_light(&light),
            colors,
            time: 0.0,
            active_u: 0.0,
            active_from: None,
            pending: Vec::new(),
            steps: 0,
            prev_d: (goal - start).norm(),
            done: false,
            log: Vec::new(),
        };
        let state = ep.state;
        self.episode = Some(ep);
        self.observe(&state, [0.0; 3], [0.0; 3])
    }

    pub fn state(&self) -> Option<&DroneState> {
        self.episode.as_ref().map(|e| &e.state)
    }

    pub fn goal(&self) -> Option<Vector3<f64>> {
        self.episode.as_ref().map(|e| e.goal)
    }

    pub fn episode_draw(&self) -> Option<EpisodeDraw> {
        self.episode.as_ref().map(|e| e.draw)
    }

    pub fn episode_log(&self) -> &[LogRow] {
        self.episode.as_ref().map_or(&[], |e| &e.log)
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().map_or(true, |e| e.done)
    }

    /// Renders the first-person view from the true pose with the
    /// episode's camera offsets and builds the noisy state vector.
    fn observe(&self, s: &DroneState, p_noise: [f64; 3], v_noise: [f64; 3]) -> Result<Observation> {
        let ep = self.episode.as_ref().ok_or(Error::EpisodeInactive("reset first"))?;
        let (sy, cy) = s.yaw.sin_cos();
        let off = ep.draw.camera_position_offset;
        let cam_pos = s.p + Vector3::new(cy * off[0] - sy * off[1], sy * off[0] + cy * off[1], off[2]);
        let rpy = ep.draw.camera_orientation_offset_deg.map(f64::to_radians);
        let cam = Camera::from_pose_with_offset(
            cam_pos,
            s.yaw,
            rpy,
            (self.config.image_width, self.config.image_height),
            self.config.hfov_deg,
        )?;
        let fb = render::render_colors(&self.world.scene, &cam, &ep.colors, &ep.background);
        let p_obs = s.p + Vector3::from(p_noise);
        let v_obs = s.v + Vector3::from(v_noise);
        let rel = ep.goal - p_obs;
        let state = [
            cy * rel.x + sy * rel.y,
            -sy * rel.x + cy * rel.y,
            rel.z,
            v_obs.x,
            v_obs.y,
            v_obs.z,
            s.yaw,
            s.yaw_rate,
        ];
        Ok(Observation {
            width: fb.width,
            height: fb.height,
            image: fb.to_rgb8(),
            state,
        })
    }

    pub fn step(&mut self, action: f64) -> Result<StepResult> {
        let cfg = self.config.clone();
        let ep = self.episode.as_mut().ok_or(Error::EpisodeInactive("reset first"))?;
        if ep.done {
            return Err(Error::EpisodeInactive("episode has terminated"));
        }
        if !action.is_finite() {
            return Err(Error::input(format!("action must be finite, got {action}")));
        }
        let u_max = cfg.dynamics.u_max;
        let step_draw = cfg.randomization.draw_step(&mut self.rng, cfg.dt);
        let applied = (action.clamp(-u_max, u_max) + step_draw.action_noise).clamp(-u_max, u_max);
        let step_index = ep.steps;
        ep.pending.push(Pending {
            effect_time: ep.time + step_draw.latency_ms / 1000.0,
            issued_by: step_index,
            u: applied,
        });

        let t_end = ep.time + step_draw.control_interval_ms / 1000.0;
        let h_nominal = cfg.dt / cfg.dynamics.substeps as f64;
        let mut segments = Vec::new();
        loop {
            // activate everything due now; a newer command supersedes older ones
            let due: Vec<Pending> = ep.pending.iter().copied().filter(|p| p.effect_time <= ep.time).collect();
            if let Some(latest) = due.iter().max_by_key(|p| p.issued_by) {
                ep.active_u = latest.u;
                ep.active_from = Some(latest.issued_by);
                let newest = latest.issued_by;
                ep.pending.retain(|p| p.issued_by > newest);
            }
            if ep.time >= t_end {
                break;
            }
            let next_event = ep
                .pending
                .iter()
                .map(|p| p.effect_time)
                .fold(t_end, f64::min);
            let seg = next_event - ep.time;
            if seg > 0.0 {
                let n = ((seg / h_nominal) - 1e-9).ceil().max(1.0) as usize;
                let params = DynParams { substeps: n, ..cfg.dynamics };
                let index = &self.world.index;
                let (state, hit) = dynamics::step_observed(&ep.state, ep.active_u, seg, &params, |s| {
                    check_collision(index, &s.p, &cfg.collision).collided
                })?;
                ep.state = state;
                segments.push(Segment {
                    t0: ep.time,
                    t1: next_event,
                    u: ep.active_u,
                    issued_by: ep.active_from,
                });
                if hit {
                    break;
                }
            }
            ep.time = next_event;
        }
        ep.steps += 1;

        let s = ep.state;
        let hit = check_collision(&self.world.index, &s.p, &cfg.collision);
        let d_t = (ep.goal - s.p).norm();
        let psi_target = (ep.goal.y - s.p.y).atan2(ep.goal.x - s.p.x);
        let events = RewardEvents {
            success: d_t < cfg.collision.r_goal,
            collision: hit.collided,
        };
        let (reward, components) = compute_reward(
            ep.prev_d,
            d_t,
            s.yaw,
            psi_target,
            hit.d_obs,
            events,
            cfg.collision.r_safe,
            &cfg.reward,
        );
        ep.prev_d = d_t;
        let reason = if events.collision {
            Termination::Collision
        } else if events.success {
            Termination::Success
        } else if ep.steps >= cfg.max_steps {
            Termination::Timeout
        } else {
            Termination::Running
        };
        let terminated = reason != Termination::Running;
        ep.done = terminated;
        ep.log.push(LogRow {
            seed: ep.seed,
            step: step_index,
            action,
            applied_action: applied,
            r_progress: components.progress,
            r_align: components.align,
            r_obstacle: components.obstacle,
            r_success: components.success,
            r_collision: components.collision,
            reward,
            d_t,
            d_obs: hit.d_obs,
            x: s.p.x,
            y: s.p.y,
            z: s.p.z,
            yaw: s.yaw,
            reason: reason.as_str().to_string(),
        });
        let info = StepInfo {
            step: step_index,
            components,
            weighted: components.weighted(&cfg.reward),
            d_t,
            d_obs: hit.d_obs,
            psi_target,
            applied_action: applied,
            randomization: RandomizationDraw {
                episode: ep.draw,
                step: step_draw,
            },
            segments,
            sim_time: ep.time,
            position: [s.p.x, s.p.y, s.p.z],
            yaw: s.yaw,
        };
        let observation = self.observe(&s, step_draw.position_noise, step_draw.velocity_noise)?;
        Ok(StepResult {
            observation,
            reward,
            terminated,
            reason,
            info,
        })
    }
}

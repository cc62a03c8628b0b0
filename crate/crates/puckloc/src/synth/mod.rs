//! Synthetic broadcast-clip generator. A virtual pan/zoom camera follows a
//! moving puck over a rendered rink while elliptical occluders cross the
//! view, producing labelled clips whose ground truth is exact by
//! construction: the label is the puck's rink location at the clip's
//! temporal midpoint.

mod camera;
mod render;

pub use camera::{project_point, CameraParams, CameraState, Projection};
pub use render::{dark_centroid, render_frame, Occluder, Subframe};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::EventType;
use crate::error::{io_err, Error, Result};
use crate::rink::{RinkPoint, RINK_LENGTH_FT, RINK_WIDTH_FT};
use crate::seed::{derive_seed, rng_for};

/// Full description of one generated clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub rng_seed: u64,
    pub clip_len_frames: usize,
    pub fps: f64,
    pub frame_size: usize,
    /// Puck start position, feet.
    pub puck_start: (f64, f64),
    /// Puck velocity, ft/s.
    pub puck_velocity: (f64, f64),
    pub max_speed_fps: f64,
    /// Apply a random velocity kick at the clip midpoint.
    pub impulse_at_mid: bool,
    pub occluder_count: usize,
    /// Occluder ellipse semi-axes in pixels, quoted at zoom 1 in a 256-px
    /// frame; rendering scales them with zoom and frame size.
    pub occluder_semi_px: (f64, f64),
    pub camera: CameraParams,
    /// Sub-instant renders averaged per frame (motion blur).
    pub blur_subsamples: usize,
    /// Highest tolerated fraction of frames with the puck fully occluded.
    pub max_occluded_frac: f64,
}

impl ScenarioConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            rng_seed: seed,
            clip_len_frames: 60,
            fps: 60.0,
            frame_size: 256,
            puck_start: (100.0, 42.5),
            puck_velocity: (30.0, 12.0),
            max_speed_fps: 120.0,
            impulse_at_mid: true,
            occluder_count: 3,
            occluder_semi_px: (6.0, 14.0),
            camera: CameraParams::default(),
            blur_subsamples: 2,
            max_occluded_frac: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_len_frames == 0 || self.frame_size < 16 || self.fps <= 0.0 {
            return Err(Error::InvalidArgument(
                "clip length, frame size and fps must be positive".into(),
            ));
        }
        if self.blur_subsamples == 0 {
            return Err(Error::InvalidArgument(
                "blur subsamples must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.max_occluded_frac) {
            return Err(Error::InvalidArgument(
                "max occluded fraction must lie in [0, 1)".into(),
            ));
        }
        if self.max_speed_fps <= 0.0 || self.max_speed_fps > 120.0 {
            return Err(Error::InvalidArgument(
                "puck speed cap must lie in (0, 120] ft/s".into(),
            ));
        }
        let speed =
            (self.puck_velocity.0.powi(2) + self.puck_velocity.1.powi(2)).sqrt();
        if speed > self.max_speed_fps {
            return Err(Error::InvalidArgument(format!(
                "puck speed {speed:.1} ft/s exceeds the {:.1} ft/s cap",
                self.max_speed_fps
            )));
        }
        RinkPoint::new(self.puck_start.0, self.puck_start.1)?;
        if self.camera.zoom_min <= 0.0 || self.camera.zoom_min > self.camera.zoom_max {
            return Err(Error::InvalidArgument("bad zoom range".into()));
        }
        Ok(())
    }
}

/// Simulated tracks before rendering. Fine tracks carry one sample per
/// blur subinstant.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub puck_track: Vec<RinkPoint>,
    pub camera_track: Vec<CameraState>,
    pub truth: RinkPoint,
    pub midpoint: usize,
    puck_fine: Vec<(f64, f64)>,
    occluder_fine: Vec<Vec<(f64, f64)>>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

const BOARD_MARGIN: f64 = 1.0;

fn reflect(pos: &mut f64, vel: &mut f64, lo: f64, hi: f64) {
    if *pos < lo {
        *pos = lo + (lo - *pos);
        *vel = -*vel;
    }
    if *pos > hi {
        *pos = hi - (*pos - hi);
        *vel = -*vel;
    }
    *pos = pos.clamp(lo, hi);
}

/// Runs puck kinematics, camera follow and occluder tracks for a config.
/// Deterministic in the config (including its seed).
pub fn simulate(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let sub = config.blur_subsamples;
    let steps = config.clip_len_frames * sub;
    let dt = 1.0 / (config.fps * sub as f64);

    // Puck: constant velocity, board reflections, optional midpoint kick.
    let mut rng = rng_for(config.rng_seed, "puck");
    let (mut x, mut y) = config.puck_start;
    let (mut vx, mut vy) = config.puck_velocity;
    let mut puck_fine = Vec::with_capacity(steps);
    let kick_at = steps / 2;
    for i in 0..steps {
        if config.impulse_at_mid && i == kick_at {
            vx += gauss(&mut rng) * 25.0;
            vy += gauss(&mut rng) * 12.0;
            let speed = (vx * vx + vy * vy).sqrt();
            if speed > config.max_speed_fps {
                let k = config.max_speed_fps / speed;
                vx *= k;
                vy *= k;
            }
        }
        puck_fine.push((x, y));
        x += vx * dt;
        y += vy * dt;
        reflect(&mut x, &mut vx, BOARD_MARGIN, RINK_LENGTH_FT - BOARD_MARGIN);
        reflect(&mut y, &mut vy, BOARD_MARGIN, RINK_WIDTH_FT - BOARD_MARGIN);
    }

    // Camera: exponential pan toward the puck with jitter, slow zoom walk.
    let mut cam_rng = rng_for(config.rng_seed, "camera");
    let mut pan = config.puck_start.0;
    let zoom_mid = (config.camera.zoom_min + config.camera.zoom_max) / 2.0;
    let mut zoom = zoom_mid
        + gauss(&mut cam_rng) * (config.camera.zoom_max - config.camera.zoom_min) / 4.0;
    zoom = zoom.clamp(config.camera.zoom_min, config.camera.zoom_max);
    let mut camera_track = Vec::with_capacity(config.clip_len_frames);
    for f in 0..config.clip_len_frames {
        let puck_x = puck_fine[f * sub].0;
        pan += config.camera.pan_lag * (puck_x - pan)
            + gauss(&mut cam_rng) * config.camera.jitter_std;
        pan = pan.clamp(0.0, RINK_LENGTH_FT);
        zoom += gauss(&mut cam_rng) * config.camera.zoom_walk_std;
        zoom = zoom.clamp(config.camera.zoom_min, config.camera.zoom_max);
        camera_track.push(CameraState::broadcast(
            pan,
            zoom,
            config.frame_size,
            &config.camera,
        ));
    }

    // Occluders hover near the puck; the first one deliberately sweeps
    // through it for a bounded window so occlusion genuinely occurs. If a
    // draw occludes too much, redraw the occluder offsets deterministically.
    let window = ((config.clip_len_frames as f64 * config.max_occluded_frac).floor()
        as usize)
        .max(1);
    let mut occluder_fine = Vec::new();
    let mut attempt = 0u64;
    loop {
        let mut occ_rng = rng_for(
            config.rng_seed,
            &format!("occluders/{attempt}"),
        );
        occluder_fine.clear();
        for j in 0..config.occluder_count {
            let mut track = Vec::with_capacity(steps);
            let side = if j % 2 == 0 { 1.0 } else { -1.0 };
            let (mut ox, mut oy) = if j == 0 {
                (-10.0, 0.0)
            } else {
                (
                    side * (6.0 + 3.0 * j as f64 + gauss(&mut occ_rng).abs() * 4.0),
                    gauss(&mut occ_rng) * 6.0,
                )
            };
            let sweep_start = if config.clip_len_frames > window {
                (occ_rng.random_range(0..config.clip_len_frames - window) * sub) as i64
            } else {
                0
            };
            for i in 0..steps {
                let mut in_window = false;
                if j == 0 {
                    // Linear sweep across the puck during the window.
                    let t = (i as i64 - sweep_start) as f64 / (window * sub) as f64;
                    in_window = (-0.05..=1.05).contains(&t);
                    ox = -10.0 + 20.0 * t.clamp(-0.25, 1.25);
                } else {
                    ox += gauss(&mut occ_rng) * 0.05;
                    oy += gauss(&mut occ_rng) * 0.05;
                }
                let (px, py) = puck_fine[i];
                let mut x = (px + ox).clamp(0.0, RINK_LENGTH_FT);
                // Board clamping can park an occluder on top of a puck that
                // hugs the boards; outside the deliberate sweep window, hop
                // to the puck's other side instead.
                if !in_window && (x - px).abs() < 4.0 {
                    x = (px - ox).clamp(0.0, RINK_LENGTH_FT);
                }
                track.push((x, (py + oy).clamp(0.0, RINK_WIDTH_FT)));
            }
            occluder_fine.push(track);
        }
        let occluded = count_occluded_frames(config, &puck_fine, &camera_track, &occluder_fine);
        if occluded as f64 <= config.max_occluded_frac * config.clip_len_frames as f64 {
            break;
        }
        attempt += 1;
        if attempt >= 8 {
            return Err(Error::InvalidArgument(format!(
                "could not satisfy the occlusion allowance ({occluded} of {} frames occluded)",
                config.clip_len_frames
            )));
        }
    }

    // Field-of-view containment: the camera tracks the puck, so containment
    // is structural; verify the invariant anyway.
    let mut visible = 0usize;
    for f in 0..config.clip_len_frames {
        let (px, py) = puck_fine[f * sub];
        if matches!(
            camera_track[f].project_xy(px, py),
            Projection::Visible { .. }
        ) {
            visible += 1;
        }
    }
    if (visible as f64) < 0.8 * config.clip_len_frames as f64 {
        return Err(Error::InvalidArgument(format!(
            "puck in view for only {visible} of {} frames",
            config.clip_len_frames
        )));
    }

    let midpoint = config.clip_len_frames / 2;
    let puck_track: Vec<RinkPoint> = (0..config.clip_len_frames)
        .map(|f| {
            let (x, y) = puck_fine[f * sub];
            RinkPoint::new(x, y).expect("reflection keeps the puck on the rink")
        })
        .collect();
    let truth = puck_track[midpoint];
    Ok(Scenario {
        puck_track,
        camera_track,
        truth,
        midpoint,
        puck_fine,
        occluder_fine,
    })
}

fn puck_radius_px(config: &ScenarioConfig, zoom: f64) -> f64 {
    (zoom * config.frame_size as f64 / 110.0).clamp(2.0, 5.0)
}

fn occluder_scale(config: &ScenarioConfig, zoom: f64) -> f64 {
    zoom * config.frame_size as f64 / 256.0
}

fn occluders_at(
    config: &ScenarioConfig,
    scenario: &Scenario,
    cam: &CameraState,
    idx: usize,
) -> Vec<Occluder> {
    let scale = occluder_scale(config, cam.zoom);
    scenario
        .occluder_fine
        .iter()
        .enumerate()
        .filter_map(|(j, track)| {
            let (x, y) = track[idx];
            match cam.project_xy(x, y) {
                Projection::Visible { u, v } => Some(Occluder {
                    u,
                    v,
                    semi_u: config.occluder_semi_px.0 * scale,
                    semi_v: config.occluder_semi_px.1 * scale,
                    team: j,
                }),
                Projection::OutOfView => None,
            }
        })
        .collect()
}

fn count_occluded_frames(
    config: &ScenarioConfig,
    puck_fine: &[(f64, f64)],
    camera_track: &[CameraState],
    occluder_fine: &[Vec<(f64, f64)>],
) -> usize {
    let sub = config.blur_subsamples;
    let mut occluded = 0;
    for (f, cam) in camera_track.iter().enumerate() {
        let (px, py) = puck_fine[f * sub];
        if let Projection::Visible { u, v } = cam.project_xy(px, py) {
            let scale = occluder_scale(config, cam.zoom);
            let covered = occluder_fine.iter().enumerate().any(|(j, track)| {
                let (ox, oy) = track[f * sub];
                match cam.project_xy(ox, oy) {
                    Projection::Visible { u: ou, v: ov } => Occluder {
                        u: ou,
                        v: ov,
                        semi_u: config.occluder_semi_px.0 * scale,
                        semi_v: config.occluder_semi_px.1 * scale,
                        team: j,
                    }
                    .covers(u, v),
                    Projection::OutOfView => false,
                }
            });
            if covered {
                occluded += 1;
            }
        }
    }
    occluded
}

/// A fully rendered clip with its label and camera metadata.
pub struct GeneratedClip {
    pub frames: Vec<image::RgbImage>,
    pub truth: RinkPoint,
    pub cameras: Vec<CameraState>,
    pub scenario: Scenario,
}

/// Simulates and renders one clip. Bit-deterministic in the config.
pub fn generate_clip(config: &ScenarioConfig) -> Result<GeneratedClip> {
    let scenario = simulate(config)?;
    let sub = config.blur_subsamples;
    let mut frames = Vec::with_capacity(config.clip_len_frames);
    for f in 0..config.clip_len_frames {
        let cam = &scenario.camera_track[f];
        let radius = puck_radius_px(config, cam.zoom);
        let occluder_sets: Vec<Vec<Occluder>> = (0..sub)
            .map(|k| occluders_at(config, &scenario, cam, f * sub + k))
            .collect();
        let subframes: Vec<Subframe<'_>> = (0..sub)
            .map(|k| {
                let (px, py) = scenario.puck_fine[f * sub + k];
                let puck = match cam.project_xy(px, py) {
                    Projection::Visible { u, v } => Some((u, v, radius)),
                    Projection::OutOfView => None,
                };
                Subframe {
                    camera: cam,
                    puck,
                    occluders: &occluder_sets[k],
                }
            })
            .collect();
        frames.push(render_frame(config.frame_size, &subframes)?);
    }
    Ok(GeneratedClip {
        frames,
        truth: scenario.truth,
        cameras: scenario.camera_track.clone(),
        scenario,
    })
}

/// Randomization ranges for dataset generation; per-clip configs are drawn
/// from these around the base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTemplate {
    pub base: ScenarioConfig,
    pub speed_range: (f64, f64),
    /// Uniform puck start inside this margin from the boards.
    pub start_margin_ft: f64,
    /// Clips are redrawn until their truths keep at least this distance,
    /// spreading labels evenly over the rink.
    pub min_truth_separation_ft: f64,
}

impl ScenarioTemplate {
    pub fn default_with_seed(seed: u64) -> Self {
        Self {
            base: ScenarioConfig::default_with_seed(seed),
            speed_range: (8.0, 90.0),
            start_margin_ft: 6.0,
            min_truth_separation_ft: 2.0,
        }
    }

    /// The deterministic per-clip scenario for clip `index` under `seed`.
    /// `attempt > 0` redraws the randomization (used by the truth-separation
    /// rule in [`plan_dataset`]).
    pub fn scenario_for(&self, seed: u64, index: usize, attempt: u64) -> ScenarioConfig {
        let tag = if attempt == 0 {
            format!("clip/{index}")
        } else {
            format!("clip/{index}/retry/{attempt}")
        };
        let mut rng = rng_for(seed, &tag);
        let mx = self.start_margin_ft;
        let x = rng.random_range(mx..RINK_LENGTH_FT - mx);
        let y = rng.random_range(mx..RINK_WIDTH_FT - mx);
        let speed = rng.random_range(self.speed_range.0..self.speed_range.1);
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mut config = self.base.clone();
        config.rng_seed = derive_seed(seed, &format!("{tag}/sim"));
        config.puck_start = (x, y);
        config.puck_velocity = (speed * heading.cos(), speed * heading.sin());
        config.impulse_at_mid = rng.random::<f64>() < 0.5;
        config
    }
}

/// Draws and simulates `n` scenarios, enforcing the template's minimum
/// truth separation by deterministic redraws. No frames are rendered.
pub fn plan_dataset(
    n: usize,
    template: &ScenarioTemplate,
    seed: u64,
) -> Result<Vec<(ScenarioConfig, Scenario)>> {
    let mut planned: Vec<(ScenarioConfig, Scenario)> = Vec::with_capacity(n);
    for i in 0..n {
        let mut accepted = None;
        for attempt in 0..64u64 {
            let config = template.scenario_for(seed, i, attempt);
            let scenario = simulate(&config)?;
            let crowded = planned.iter().any(|(_, s)| {
                s.truth.distance(&scenario.truth) < template.min_truth_separation_ft
            });
            if !crowded {
                accepted = Some((config, scenario));
                break;
            }
        }
        match accepted {
            Some(pair) => planned.push(pair),
            None => {
                return Err(Error::InvalidArgument(format!(
                    "clip {i}: no scenario satisfies the {} ft truth separation",
                    template.min_truth_separation_ft
                )))
            }
        }
    }
    Ok(planned)
}

/// Manifest of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub rel_path: String,
    pub truth: RinkPoint,
    pub event_type: EventType,
}

impl DatasetManifest {
    /// Stable digest over ids, paths and truths, for determinism checks.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for e in &self.entries {
            hasher.update(e.clip_id.as_bytes());
            hasher.update(e.rel_path.as_bytes());
            hasher.update(e.truth.x().to_le_bytes());
            hasher.update(e.truth.y().to_le_bytes());
            hasher.update(e.event_type.as_str().as_bytes());
        }
        crate::nn::hex_string(&hasher.finalize())
    }
}

const EVENT_CYCLE: [EventType; 3] = [EventType::Shot, EventType::Dump, EventType::Faceoff];

/// Generates `n` clips plus the events CSV and clip manifest. Frames land in
/// `out_dir/clips/<clip_id>/frame_%04d.png`; `events.csv`, `manifest.csv`
/// and a `scenario.toml` config echo are written last (via temp-file rename)
/// so a failed run never leaves a partial manifest behind.
pub fn generate_dataset(
    n: usize,
    template: &ScenarioTemplate,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    let clips_dir = out_dir.join("clips");
    std::fs::create_dir_all(&clips_dir).map_err(|e| io_err(&clips_dir, e))?;

    let planned = plan_dataset(n, template, seed)?;
    let mut entries = Vec::with_capacity(n);
    for (i, (config, _)) in planned.iter().enumerate() {
        let clip = generate_clip(config)?;
        let clip_id = format!("clip_{i:05}");
        let rel_path = format!("clips/{clip_id}");
        let dir = out_dir.join(&rel_path);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        for (f, frame) in clip.frames.iter().enumerate() {
            let path = dir.join(format!("frame_{f:04}.png"));
            frame.save(&path)?;
        }
        entries.push(ManifestEntry {
            clip_id,
            rel_path,
            truth: clip.truth,
            event_type: EVENT_CYCLE[i % EVENT_CYCLE.len()],
        });
    }

    write_atomic(&out_dir.join("events.csv"), |w| {
        writeln!(w, "clip_id,game_clock_s,event_type,x_ft,y_ft")?;
        for (i, e) in entries.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{}",
                e.clip_id,
                600 + i,
                e.event_type.as_str(),
                e.truth.x(),
                e.truth.y()
            )?;
        }
        Ok(())
    })?;
    write_atomic(&out_dir.join("manifest.csv"), |w| {
        writeln!(w, "clip_id,path")?;
        for e in &entries {
            writeln!(w, "{},{}", e.clip_id, e.rel_path)?;
        }
        Ok(())
    })?;
    let echo = toml::to_string_pretty(template)
        .map_err(|e| Error::Config(format!("scenario echo: {e}")))?;
    write_atomic(&out_dir.join("scenario.toml"), |w| {
        w.write_all(echo.as_bytes())
    })?;

    Ok(DatasetManifest { entries })
}

fn write_atomic(
    path: &Path,
    fill: impl FnOnce(&mut std::fs::File) -> std::io::Result<()>,
) -> Result<()> {
    let tmp: PathBuf = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    fill(&mut file).map_err(|e| io_err(&tmp, e))?;
    file.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    Ok(())
}

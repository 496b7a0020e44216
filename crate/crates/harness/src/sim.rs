//! Scenario runner on a virtual clock.
//!
//! Firmware ticks at the loop rate; vision frame `k` is taken at tick
//! `ceil(k * loop_rate / fps)`, so consecutive telemetry rows are
//! `floor(loop_rate / fps)` or one more ticks apart. On a frame tick the
//! order is: render, track, control (commands go out over the serial
//! link), firmware tick, telemetry row, physics step. Client messages are
//! drained before every tick, so a joystick sample reaches the very next
//! PWM frame.

use std::collections::VecDeque;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use microtwin_core::coil_model::CoilCalibration;
use microtwin_core::control::{
    distance_to_polyline, freq_search_step, orientation_step, path_follow_step, FreqSearchState, JoystickMapper,
    OrientationState, OrientationStep, PathFollowConfig, PathStep, Trajectory,
};
use microtwin_core::dynamics::{RobotState, World, WorldConfig};
use microtwin_core::field_synth::{FieldCommand, Firmware, DEFAULT_LOOP_RATE};
use microtwin_core::serial::{link, HostPort};
use microtwin_core::vision::{dump_frame, Camera, Frame, MaskParams, Optics, Track};

use crate::protocol::{Envelope, FieldSnapshot, Message, TelemetrySnapshot, TrackSnapshot};
use crate::scenario::{ControllerSpec, PathSpec, Scenario, ScriptStep};
use crate::service::Service;
use crate::telemetry::{TelemetryRow, TrackSample};
use crate::HarnessError;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    /// Pace the virtual clock to wall time.
    pub realtime: bool,
    pub dump_frames: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub scenario: String,
    pub frames: u64,
    pub ticks: u64,
    /// s
    pub sim_time: f64,
    /// Goal reached (path finished or target arrived).
    pub completed: bool,
    /// s
    pub completion_time: Option<f64>,
    /// Mean tracked speed of the steered robot (μm/s).
    pub mean_speed: Option<f64>,
    /// Mean and max distance from the desired path (μm).
    pub mean_path_error: Option<f64>,
    pub max_path_error: Option<f64>,
    pub f_optimal: Option<f64>,
    pub final_increment: Option<f64>,
    /// Frames on which some pair of tracks sat closer to each other's body
    /// than to their own.
    pub identity_swaps: u64,
    pub stale_tracks: usize,
    pub rejected_commands: u64,
    /// Smallest and largest firmware tick count between telemetry rows.
    pub ticks_per_row: Option<(u64, u64)>,
    /// Exit criterion for the controller type.
    pub success: bool,
}

struct TrackSlot {
    robot: usize,
    track: Track,
}

enum Controller {
    PathFollow {
        traj: Trajectory,
        cfg: PathFollowConfig,
        desired: Vec<(f64, f64)>,
    },
    FreqSearch {
        search: FreqSearchState,
        orient: OrientationState,
        field_on_at: f64,
        acoustic_on_at: f64,
    },
    Manual {
        mapper: JoystickMapper,
        script: VecDeque<ScriptStep>,
    },
    OpenLoop {
        script: VecDeque<ScriptStep>,
    },
}

pub struct Simulation {
    scenario: Scenario,
    world: World,
    firmware: Firmware,
    port: HostPort,
    optics: Optics,
    camera: Camera,
    tracks: Vec<TrackSlot>,
    subject: Option<usize>,
    controller: Controller,
    acoustic_hz: f64,
    service: Option<Service>,
    opts: RunOptions,
}

fn frame_tick(k: u64, loop_rate: f64, fps: f64) -> u64 {
    (k as f64 * loop_rate / fps).ceil() as u64
}

impl Simulation {
    pub fn new(scenario: Scenario, opts: RunOptions) -> Result<Self, HarnessError> {
        scenario.validate()?;
        let calibration = match &scenario.calibration {
            Some(p) => CoilCalibration::load(p)?,
            None => CoilCalibration::default(),
        };
        let p = &scenario.physics;
        let config = WorldConfig {
            voltage: scenario.voltage,
            rolling: p.rolling.clone(),
            acoustic: p.acoustic.clone(),
            cup_heading_offset_deg: p.cup_heading_offset,
            brownian_diffusion: p.brownian_diffusion,
            heading_noise: p.heading_noise,
            gradient_pull: p.gradient_pull,
            seed: opts.seed.unwrap_or(scenario.seed),
        };
        let robots: Vec<_> = scenario
            .robots
            .iter()
            .map(|r| RobotState::new(r.kind, r.x, r.y, r.radius))
            .collect();
        let world = World::new(config, calibration, robots)?;
        let (port, rx) = link();
        let firmware = Firmware::new(DEFAULT_LOOP_RATE).with_link(rx);
        let optics = Optics::from_magnification(scenario.magnification);
        let camera = scenario.camera;

        let mut tracks = Vec::new();
        let mut subject = None;
        for (i, spec) in scenario.robots.iter().enumerate() {
            if !spec.track {
                continue;
            }
            let r_px = spec.radius / optics.um_per_px;
            let mask = spec
                .mask
                .unwrap_or_else(|| MaskParams::for_kind(spec.kind, default_crop(r_px)));
            if Some(i) == scenario.subject() {
                subject = Some(tracks.len());
            }
            tracks.push(TrackSlot {
                robot: i,
                track: Track::seed(camera.to_px(&optics, spec.x, spec.y), mask),
            });
        }

        let controller = match &scenario.controller {
            ControllerSpec::PathFollow {
                freq,
                gamma,
                threshold,
                path,
            } => {
                let start = &scenario.robots[scenario.subject().expect("validated")];
                let threshold = threshold.unwrap_or(Trajectory::default_threshold(start.radius));
                let traj = match path {
                    PathSpec::Circle {
                        center,
                        radius,
                        nodes,
                        start_deg,
                    } => Trajectory::circle((center[0], center[1]), *radius, *nodes, *start_deg, threshold)?,
                    PathSpec::Nodes { nodes } => {
                        Trajectory::new(nodes.iter().map(|n| (n[0], n[1])).collect(), threshold)?
                    }
                };
                let mut desired = vec![(start.x, start.y)];
                desired.extend(&traj.nodes);
                Controller::PathFollow {
                    traj,
                    cfg: PathFollowConfig {
                        freq: *freq,
                        gamma: *gamma,
                    },
                    desired,
                }
            }
            ControllerSpec::FreqSearchOrientation {
                target,
                field_on_at,
                acoustic_on_at,
                f_min,
                f_max,
                v_min,
                v_max,
                orientation,
            } => Controller::FreqSearch {
                search: FreqSearchState::new(*f_min, *f_max, *v_min, *v_max)?,
                orient: OrientationState::new((target[0], target[1]), orientation.unwrap_or_default()),
                field_on_at: *field_on_at,
                acoustic_on_at: *acoustic_on_at,
            },
            ControllerSpec::Manual { freq, script } => Controller::Manual {
                mapper: JoystickMapper::new(*freq)?,
                script: script.iter().cloned().collect(),
            },
            ControllerSpec::OpenLoop { steps } => Controller::OpenLoop {
                script: steps.iter().cloned().collect(),
            },
        };

        Ok(Self {
            scenario,
            world,
            firmware,
            port,
            optics,
            camera,
            tracks,
            subject,
            controller,
            acoustic_hz: 0.0,
            service: None,
            opts,
        })
    }

    pub fn attach_service(&mut self, service: Service) {
        self.service = Some(service);
    }

    pub fn service(&self) -> Option<&Service> {
        self.service.as_ref()
    }

    pub fn optics(&self) -> &Optics {
        &self.optics
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    /// Robot index behind each vision track, in track order.
    pub fn tracked_robots(&self) -> Vec<usize> {
        self.tracks.iter().map(|t| t.robot).collect()
    }

    pub fn desired_path(&self) -> Option<&[(f64, f64)]> {
        match &self.controller {
            Controller::PathFollow { desired, .. } => Some(desired),
            _ => None,
        }
    }

    /// Runs to completion. `on_row` sees each telemetry row together with
    /// the true body positions at that frame.
    pub fn run(&mut self, mut on_row: impl FnMut(&TelemetryRow, &[RobotState])) -> Result<Summary, HarnessError> {
        let loop_rate = self.firmware.clock().loop_rate();
        let dt = 1.0 / loop_rate;
        let fps = self.camera.fps;
        let total_ticks = (self.scenario.duration * loop_rate).round() as u64;
        if let Some(dir) = &self.opts.dump_frames {
            std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        }

        let mut frame = Frame::blank(self.camera.width, self.camera.height);
        let mut k = 0u64;
        let mut next_frame = 0u64;
        let mut last_frame_tick: Option<u64> = None;
        let mut gaps: Option<(u64, u64)> = None;
        let mut completed_at = None;
        let mut speeds = Vec::new();
        let mut path_errors = Vec::new();
        let mut swaps = 0u64;
        let wall_start = Instant::now();
        let mut tick = 0u64;

        while tick < total_ticks {
            let t = tick as f64 * dt;
            self.drain_clients();
            self.run_script(t);

            let is_frame = tick == next_frame;
            if is_frame {
                if self.opts.realtime {
                    let due = Duration::from_secs_f64(t);
                    if let Some(wait) = due.checked_sub(wall_start.elapsed()) {
                        std::thread::sleep(wait);
                    }
                }
                if let Some(prev) = last_frame_tick {
                    let g = tick - prev;
                    gaps = Some(gaps.map_or((g, g), |(lo, hi)| (lo.min(g), hi.max(g))));
                }
                last_frame_tick = Some(tick);

                microtwin_core::vision::render_into(&mut frame, &self.world.robots, &self.optics, &self.camera, k);
                if let Some(dir) = &self.opts.dump_frames {
                    dump_frame(&frame, dir).map_err(|e| HarnessError::io(dir, e))?;
                }
                for slot in &mut self.tracks {
                    // an empty mask keeps the old box; the row reports it as lost
                    let _ = slot.track.update(&frame, fps, self.optics.um_per_px);
                }
                if completed_at.is_none() && self.control(t) {
                    completed_at = Some(t);
                }
                swaps += u64::from(self.has_identity_swap());
                if let Some(d) = self.path_error() {
                    if completed_at.is_none() || completed_at == Some(t) {
                        path_errors.push(d);
                    }
                }
                if let Some(v) = self.subject_track().and_then(|t| t.velocity) {
                    if completed_at.is_none() {
                        speeds.push(v);
                    }
                }
            }

            let pwm = self.firmware.tick();

            if is_frame {
                let row = self.row(k, &pwm.duties());
                on_row(&row, &self.world.robots);
                self.publish(&row);
                k += 1;
                next_frame = frame_tick(k, loop_rate, fps);
                if completed_at.is_some() && self.scenario.stop_on_completion {
                    tick += 1;
                    break;
                }
            }

            self.world.step(&pwm, self.acoustic_hz, dt);
            tick += 1;
        }

        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let stale_tracks = self.tracks.iter().filter(|s| s.track.stale).count();
        let (f_optimal, final_increment) = match &self.controller {
            Controller::FreqSearch { search, .. } => (search.f_optimal, Some(search.increment)),
            _ => (None, None),
        };
        let completed = completed_at.is_some();
        let success = match self.controller {
            Controller::PathFollow { .. } | Controller::FreqSearch { .. } => completed,
            Controller::Manual { .. } | Controller::OpenLoop { .. } => stale_tracks == 0 && swaps == 0,
        };
        Ok(Summary {
            scenario: self.scenario.name.clone(),
            frames: k,
            ticks: tick,
            sim_time: tick as f64 * dt,
            completed,
            completion_time: completed_at,
            mean_speed: mean(&speeds),
            mean_path_error: mean(&path_errors),
            max_path_error: path_errors.iter().copied().reduce(f64::max),
            f_optimal,
            final_increment,
            identity_swaps: swaps,
            stale_tracks,
            rejected_commands: self.firmware.rejected(),
            ticks_per_row: gaps,
            success,
        })
    }

    fn subject_track(&self) -> Option<&Track> {
        self.subject.map(|i| &self.tracks[i].track)
    }

    /// Tracked position of the steered robot in μm.
    fn subject_position(&self) -> Option<(f64, f64)> {
        let t = self.subject_track()?;
        (t.lost_frames == 0).then(|| self.camera.to_um(&self.optics, t.centroid.0, t.centroid.1))
    }

    /// Last frame-to-frame displacement of the steered robot (μm/s).
    fn subject_motion(&self) -> (f64, f64) {
        let Some(t) = self.subject_track() else {
            return (0.0, 0.0);
        };
        let h: Vec<_> = t.history().copied().collect();
        match h.as_slice() {
            [.., a, b] => {
                let s = self.optics.um_per_px * self.camera.fps;
                ((b.0 - a.0) * s, (b.1 - a.1) * s)
            }
            _ => (0.0, 0.0),
        }
    }

    fn send(&mut self, cmd: &FieldCommand) {
        // scripts, client messages and controllers all yield validated commands
        self.port.send(cmd).expect("controller produced an invalid command");
    }

    /// One control update; true once the goal is reached.
    fn control(&mut self, t: f64) -> bool {
        let pos = self.subject_position();
        let motion = self.subject_motion();
        let velocity = self.subject_track().and_then(|t| t.velocity).unwrap_or(0.0);
        let mut out: Option<FieldCommand> = None;
        let mut done = false;
        match &mut self.controller {
            Controller::PathFollow { traj, cfg, .. } => {
                if let Some(p) = pos {
                    match path_follow_step(traj, p, cfg) {
                        PathStep::Command(c) => out = Some(c),
                        PathStep::Advance => {}
                        PathStep::Done => {
                            out = Some(FieldCommand::off());
                            done = true;
                        }
                    }
                }
            }
            Controller::FreqSearch {
                search,
                orient,
                field_on_at,
                acoustic_on_at,
            } => {
                if let Some(p) = pos {
                    if t >= *field_on_at {
                        match orientation_step(orient, p, motion) {
                            OrientationStep::Steer { command, .. } => out = Some(command),
                            OrientationStep::Arrived => {
                                out = Some(FieldCommand::off());
                                self.acoustic_hz = 0.0;
                                done = true;
                            }
                        }
                    }
                    if !done && t >= *acoustic_on_at {
                        self.acoustic_hz = freq_search_step(search, velocity);
                    }
                }
            }
            Controller::Manual { .. } | Controller::OpenLoop { .. } => {}
        }
        if let Some(c) = out {
            self.send(&c);
        }
        done
    }

    fn run_script(&mut self, t: f64) {
        loop {
            let script = match &mut self.controller {
                Controller::Manual { script, .. } | Controller::OpenLoop { script } => script,
                _ => return,
            };
            match script.front() {
                Some(s) if s.at <= t => {
                    let step = script.pop_front().expect("front exists");
                    if let Some(j) = step.joystick {
                        self.handle(Message::Joystick(j));
                    }
                    if let Some(f) = step.field {
                        self.send(&f);
                    }
                    if let Some(a) = step.acoustic_hz {
                        self.acoustic_hz = a;
                    }
                }
                _ => return,
            }
        }
    }

    fn drain_clients(&mut self) {
        while let Some(msg) = self.service.as_ref().and_then(Service::try_recv) {
            self.handle(msg);
        }
    }

    /// Applies a client message. Outside manual mode the controller owns
    /// the coils and client messages are ignored.
    fn handle(&mut self, msg: Message) {
        let Controller::Manual { mapper, .. } = &mut self.controller else {
            return;
        };
        match msg {
            Message::Joystick(j) => {
                let cmd = mapper.map(&j);
                self.send(&cmd);
            }
            Message::Command(c) => {
                if let Some(f) = c.field {
                    self.send(&f);
                }
                if let Some(a) = c.acoustic_hz {
                    self.acoustic_hz = a;
                }
            }
            Message::Telemetry(_) | Message::Error { .. } => {}
        }
    }

    fn path_error(&self) -> Option<f64> {
        let Controller::PathFollow { desired, .. } = &self.controller else {
            return None;
        };
        let r = &self.world.robots[self.tracks[self.subject?].robot];
        Some(distance_to_polyline((r.x, r.y), desired))
    }

    fn has_identity_swap(&self) -> bool {
        let truth: Vec<(f64, f64)> = self
            .tracks
            .iter()
            .map(|s| {
                let r = &self.world.robots[s.robot];
                self.camera.to_px(&self.optics, r.x, r.y)
            })
            .collect();
        let d = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
        for i in 0..self.tracks.len() {
            for j in i + 1..self.tracks.len() {
                let (a, b) = (self.tracks[i].track.centroid, self.tracks[j].track.centroid);
                if d(a, truth[j]) + d(b, truth[i]) < d(a, truth[i]) + d(b, truth[j]) {
                    return true;
                }
            }
        }
        false
    }

    fn row(&self, k: u64, duty: &[f64; 3]) -> TelemetryRow {
        TelemetryRow {
            frame: k,
            time: k as f64 / self.camera.fps,
            tracks: self
                .tracks
                .iter()
                .map(|s| TrackSample {
                    x: s.track.centroid.0,
                    y: s.track.centroid.1,
                    vel: s.track.velocity,
                    size: s.track.size_px,
                    lost: s.track.lost_frames > 0,
                    mask: s.track.params,
                })
                .collect(),
            field: *self.firmware.active(),
            duty: *duty,
            acoustic_hz: self.acoustic_hz,
        }
    }

    fn publish(&self, row: &TelemetryRow) {
        let Some(svc) = &self.service else { return };
        if svc.client_count() == 0 {
            return;
        }
        let snap = TelemetrySnapshot {
            frame: row.frame,
            time: row.time,
            fps: self.camera.fps,
            um_per_px: self.optics.um_per_px,
            width: self.camera.width,
            height: self.camera.height,
            tracks: self
                .tracks
                .iter()
                .enumerate()
                .map(|(id, s)| {
                    let (x_um, y_um) = self.camera.to_um(&self.optics, s.track.centroid.0, s.track.centroid.1);
                    TrackSnapshot {
                        id,
                        kind: self.world.robots[s.robot].kind,
                        x_px: s.track.centroid.0,
                        y_px: s.track.centroid.1,
                        x_um,
                        y_um,
                        velocity: s.track.velocity,
                        size_px: s.track.size_px,
                        stale: s.track.stale,
                    }
                })
                .collect(),
            field: FieldSnapshot {
                mode: row.field.mode,
                alpha: row.field.alpha,
                gamma: row.field.gamma,
                freq: row.field.freq,
                z_bias: row.field.z_bias,
                duty: row.duty,
            },
            acoustic_hz: row.acoustic_hz,
            desired_path: self.desired_path().map(|p| p.iter().map(|&(x, y)| [x, y]).collect()),
        };
        svc.broadcast(&Envelope::new(Message::Telemetry(Box::new(snap))).to_json());
    }
}

/// Crop side for a body of radius `r_px`: room for the disc plus a margin
/// for motion between frames, rounded up to a multiple of 8.
pub fn default_crop(r_px: f64) -> usize {
    let side = (3.2 * r_px).ceil() as usize + 8;
    (side.div_ceil(8) * 8).max(48)
}

/// Runs a scenario headless and collects its telemetry.
pub fn run_scenario(scenario: Scenario, opts: RunOptions) -> Result<(Summary, Vec<TelemetryRow>), HarnessError> {
    let mut sim = Simulation::new(scenario, opts)?;
    let mut rows = Vec::new();
    let summary = sim.run(|r, _| rows.push(r.clone()))?;
    Ok((summary, rows))
}

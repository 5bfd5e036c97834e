use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{channel, sync_channel, Receiver};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::Serialize;

use super::{Mode, RunConfig};
use crate::backend::{Backend, IterationRecord};
use crate::frontend::{CorrectionMessage, Frontend, KeyframeMessage, TrackingStatus};
use crate::geometry::{Trajectory, Transform};
use crate::imu::{ImuBias, NavState};
use crate::loop_closure::{LoopCloser, LoopStats};
use crate::simulator::MeasurementStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub timestamp: f64,
    /// Body pose in the world.
    pub pose: Transform,
    pub status: TrackingStatus,
    pub correspondences: usize,
    pub inliers: usize,
    pub reprojection_rms: f64,
    pub bias: ImuBias,
}

/// Wall-clock seconds spent per stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct StageTimings {
    pub frontend: f64,
    pub backend: f64,
    pub loop_closure: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data")
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub frames: Vec<FrameRecord>,
    pub failure: Option<String>,
    pub keyframes: usize,
    pub corrections_applied: usize,
    pub window_log: Vec<(u64, IterationRecord)>,
    pub loop_stats: LoopStats,
    pub similarity_csv: Option<String>,
    pub map_csv: String,
    pub timings: StageTimings,
}

impl PipelineOutput {
    pub fn estimate(&self) -> Trajectory {
        let mut t = Trajectory::new();
        for f in &self.frames {
            // frames are strictly ordered; a rejected push only drops a duplicate
            let _ = t.push(f.timestamp, f.pose);
        }
        t
    }
}

/// Window optimization plus its diagnostics.
struct WindowStage {
    backend: Option<Backend>,
    log: Vec<(u64, IterationRecord)>,
    time: Duration,
}

impl WindowStage {
    fn handle(&mut self, kf: KeyframeMessage, seq: &AtomicU64) -> (KeyframeMessage, Option<CorrectionMessage>) {
        let Some(backend) = &mut self.backend else {
            return (kf, None);
        };
        let start = Instant::now();
        let out = match backend.process(&kf, || seq.fetch_add(1, Ordering::SeqCst) + 1) {
            Ok((refined, corr)) => {
                if corr.is_some() {
                    if let Some(sol) = &backend.last_solution {
                        self.log.extend(sol.log.iter().map(|r| (kf.keyframe_id, *r)));
                    }
                }
                (refined, corr)
            }
            Err(err) => {
                warn!("window rejected keyframe {}: {err}", kf.keyframe_id);
                (kf, None)
            }
        };
        self.time += start.elapsed();
        out
    }

    /// Forwards a loop correction towards the frontend, through the window
    /// when there is one so that the frontend sees a single ordered stream.
    fn relay(&mut self, msg: &CorrectionMessage, seq: &AtomicU64) -> CorrectionMessage {
        let next = || seq.fetch_add(1, Ordering::SeqCst) + 1;
        match &mut self.backend {
            Some(b) => b.relay(msg, next),
            None => {
                let mut out = msg.clone();
                out.sequence = next();
                out
            }
        }
    }
}

struct LoopStage {
    closer: Option<LoopCloser>,
    time: Duration,
}

impl LoopStage {
    fn handle(&mut self, kf: &KeyframeMessage) -> Option<CorrectionMessage> {
        let closer = self.closer.as_mut()?;
        let start = Instant::now();
        let out = closer.process(kf);
        self.time += start.elapsed();
        out
    }
}

struct FrontendStage {
    frontend: Frontend,
    frames: Vec<FrameRecord>,
    failure: Option<String>,
    keyframes: usize,
    applied: usize,
    time: Duration,
}

impl FrontendStage {
    fn new(cfg: &RunConfig, initial: NavState, capacity: usize) -> Self {
        let mut fcfg = cfg.estimator.frontend_config();
        fcfg.rig = cfg.scenario.camera.rig;
        Self {
            frontend: Frontend::new(fcfg, initial),
            frames: Vec::with_capacity(capacity),
            failure: None,
            keyframes: 0,
            applied: 0,
            time: Duration::ZERO,
        }
    }

    fn correct(&mut self, msg: &CorrectionMessage) {
        if self.frontend.apply_correction(msg) {
            self.applied += 1;
        } else {
            debug!("stale correction {} ignored", msg.sequence);
        }
    }

    /// Runs every frame; `on_keyframe` receives each new keyframe and
    /// `before_frame` may feed corrections in.
    ///
    /// With `pace` set, frame `k` is not processed before
    /// `(t_k − t_0) / pace` seconds of wall time have passed.
    fn drive(
        &mut self,
        stream: &MeasurementStream,
        pace: Option<f64>,
        mut before_frame: impl FnMut(&mut Self),
        mut on_keyframe: impl FnMut(&mut Self, KeyframeMessage),
    ) {
        let mut previous = f64::NEG_INFINITY;
        let clock = Instant::now();
        let t0 = stream.frames.first().map_or(0.0, |f| f.timestamp);
        for input in &stream.frames {
            if let Some(speed) = pace {
                let due = Duration::from_secs_f64(((input.timestamp - t0) / speed).max(0.0));
                if let Some(wait) = due.checked_sub(clock.elapsed()) {
                    thread::sleep(wait);
                }
            }
            before_frame(self);
            let imu = stream.imu_between(previous, input.timestamp);
            previous = input.timestamp;
            let start = Instant::now();
            let result = self.frontend.process_frame(input, imu);
            self.time += start.elapsed();
            match result {
                Ok(frame) => {
                    self.frames.push(FrameRecord {
                        frame_id: frame.frame_id,
                        timestamp: frame.timestamp,
                        pose: frame.nav_state.pose(),
                        status: frame.status,
                        correspondences: frame.correspondences,
                        inliers: frame.inliers,
                        reprojection_rms: frame.reprojection_rms,
                        bias: frame.bias,
                    });
                    if let Some(kf) = frame.keyframe {
                        self.keyframes += 1;
                        on_keyframe(self, kf);
                    }
                }
                Err(err) => {
                    warn!("frame {}: {err}", input.frame_id);
                    self.failure = Some(err.to_string());
                    break;
                }
            }
        }
    }
}

fn drain(rx: &Receiver<CorrectionMessage>, mut apply: impl FnMut(&CorrectionMessage)) {
    while let Ok(msg) = rx.try_recv() {
        apply(&msg);
    }
}

/// Runs the estimator over a recorded stream.
///
/// The initial state is the true state at the first frame with zero bias
/// estimates.
pub fn run_pipeline(stream: &MeasurementStream, cfg: &RunConfig, mode: Mode) -> PipelineOutput {
    let total = Instant::now();
    let Some(initial) = stream.states.first().copied() else {
        return PipelineOutput {
            failure: Some("empty measurement stream".into()),
            ..Default::default()
        };
    };
    let est = &cfg.estimator;
    let rig = cfg.scenario.camera.rig;
    let mut front = FrontendStage::new(cfg, initial, stream.frames.len());
    let mut window = WindowStage {
        backend: est.features.sliding_window.then(|| Backend::new(rig, est.window)),
        log: Vec::new(),
        time: Duration::ZERO,
    };
    let mut closing = LoopStage {
        closer: est.features.loop_closure.then(|| LoopCloser::new(rig, est.loop_closure)),
        time: Duration::ZERO,
    };
    let seq = AtomicU64::new(0);

    match mode {
        Mode::Sync => {
            front.drive(
                stream,
                None,
                |_| {},
                |f, kf| {
                    let (refined, corr) = window.handle(kf, &seq);
                    if let Some(c) = corr {
                        f.correct(&c);
                    }
                    if let Some(c) = closing.handle(&refined) {
                        f.correct(&window.relay(&c, &seq));
                    }
                },
            );
        }
        Mode::Async => {
            let cap = est.queue_capacity;
            let (kf_tx, kf_rx) = sync_channel::<KeyframeMessage>(cap);
            let (loop_tx, loop_rx) = sync_channel::<KeyframeMessage>(cap);
            // corrections flow against the keyframe direction; unbounded so
            // the stages can never block on each other in a cycle
            let (corr_tx, corr_rx) = channel::<CorrectionMessage>();
            let (back_tx, back_rx) = channel::<CorrectionMessage>();
            let seq = &seq;
            let window = &mut window;
            let closing = &mut closing;
            let direct = !est.features.sliding_window;
            thread::scope(|s| {
                let to_front = corr_tx.clone();
                s.spawn(move || {
                    for kf in kf_rx {
                        drain(&back_rx, |c| {
                            let _ = to_front.send(window.relay(c, seq));
                        });
                        let (refined, corr) = window.handle(kf, seq);
                        if let Some(c) = corr {
                            let _ = to_front.send(c);
                        }
                        if loop_tx.send(refined).is_err() {
                            break;
                        }
                    }
                });
                s.spawn(move || {
                    for kf in loop_rx {
                        if let Some(c) = closing.handle(&kf) {
                            if direct {
                                let mut c = c;
                                c.sequence = seq.fetch_add(1, Ordering::SeqCst) + 1;
                                let _ = corr_tx.send(c);
                            } else {
                                let _ = back_tx.send(c);
                            }
                        }
                    }
                });
                let pace = (est.replay_speed > 0.0).then_some(est.replay_speed);
                front.drive(
                    stream,
                    pace,
                    |f| drain(&corr_rx, |c| f.correct(c)),
                    |_, kf| {
                        let _ = kf_tx.send(kf);
                    },
                );
                drop(kf_tx);
            });
        }
    }

    PipelineOutput {
        keyframes: front.keyframes,
        corrections_applied: front.applied,
        map_csv: front.frontend.map().to_csv_string(),
        frames: front.frames,
        failure: front.failure,
        window_log: window.log,
        loop_stats: closing.closer.as_ref().map(|c| c.stats).unwrap_or_default(),
        similarity_csv: closing.closer.as_ref().map(|c| c.similarity_csv()),
        timings: StageTimings {
            frontend: front.time.as_secs_f64(),
            backend: window.time.as_secs_f64(),
            loop_closure: closing.time.as_secs_f64(),
            total: total.elapsed().as_secs_f64(),
        },
    }
}

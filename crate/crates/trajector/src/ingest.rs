//! Landmark track parsing, validation, gap repair, and seeded synthetic
//! real/fake track generation.
//!
//! The track file format is one JSON document per video:
//! `{"video_id": string, "fps": number, "label": 0|1|null,
//!   "frames": [{"frame": int, "points": [[x,y] × 68], "conf": number|null}]}`.
//! Landmark numbering follows the 68-point iBUG-300W convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::face3d::{self, AffineCamera, N_LANDMARKS, ShapeCoefficients, ShapeModel};
use crate::rng::Rng;

/// Default gap-repair bound, in frames.
pub const DEFAULT_MAX_GAP: usize = 5;

/// Video-level ground truth. 0 = real, 1 = fake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Label> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(Error::invalid(format!("label must be 0 or 1, got {other}"))),
        }
    }
}

/// One frame of 68 tracked 2D landmarks, in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkFrame {
    pub frame_index: u64,
    pub points: [[f64; 2]; N_LANDMARKS],
    pub confidence: Option<f64>,
}

/// Ordered landmark frames for one video.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkTrack {
    pub video_id: String,
    pub fps: f64,
    pub frames: Vec<LandmarkFrame>,
    pub label: Option<Label>,
}

#[derive(Serialize, Deserialize)]
struct FrameDoc {
    frame: u64,
    points: Vec<[f64; 2]>,
    conf: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrackDoc {
    video_id: String,
    fps: f64,
    label: Option<u8>,
    frames: Vec<FrameDoc>,
}

/// Parse and validate a track JSON document.
pub fn parse_track(bytes: &[u8]) -> Result<LandmarkTrack> {
    let doc: TrackDoc = serde_json::from_slice(bytes)?;
    if !(doc.fps > 0.0 && doc.fps.is_finite()) {
        return Err(Error::invalid("fps must be a positive finite number"));
    }
    if doc.frames.is_empty() {
        return Err(Error::invalid("track has no frames"));
    }
    let label = doc.label.map(Label::from_u8).transpose()?;
    let mut frames = Vec::with_capacity(doc.frames.len());
    let mut prev_index: Option<u64> = None;
    for f in doc.frames {
        if f.points.len() != N_LANDMARKS {
            return Err(Error::invalid(format!(
                "point count: frame {} has {} points, expected {N_LANDMARKS}",
                f.frame,
                f.points.len()
            )));
        }
        for p in &f.points {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(Error::invalid(format!("non-finite coordinate in frame {}", f.frame)));
            }
        }
        if let Some(c) = f.conf {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::invalid(format!("confidence out of [0,1] in frame {}", f.frame)));
            }
        }
        if let Some(prev) = prev_index {
            if f.frame <= prev {
                return Err(Error::invalid(format!(
                    "non-monotone frame index: {} after {prev}",
                    f.frame
                )));
            }
        }
        prev_index = Some(f.frame);
        let mut points = [[0.0f64; 2]; N_LANDMARKS];
        points.copy_from_slice(&f.points);
        frames.push(LandmarkFrame {
            frame_index: f.frame,
            points,
            confidence: f.conf,
        });
    }
    Ok(LandmarkTrack {
        video_id: doc.video_id,
        fps: doc.fps,
        frames,
        label,
    })
}

/// Serialize a track back to the JSON document format.
pub fn serialize_track(track: &LandmarkTrack) -> Vec<u8> {
    let doc = TrackDoc {
        video_id: track.video_id.clone(),
        fps: track.fps,
        label: track.label.map(Label::as_u8),
        frames: track
            .frames
            .iter()
            .map(|f| FrameDoc {
                frame: f.frame_index,
                points: f.points.to_vec(),
                conf: f.confidence,
            })
            .collect(),
    };
    serde_json::to_vec(&doc).expect("track serialization cannot fail")
}

/// Result of [`interpolate_gaps`].
#[derive(Clone, Debug)]
pub struct RepairedTrack {
    pub track: LandmarkTrack,
    /// Number of frames inserted by interpolation.
    pub filled: usize,
    /// Frame index at which the track was cut because a gap exceeded the
    /// bound, if any.
    pub truncated_at: Option<u64>,
}

/// Fill missing frame indices up to `max_gap` by per-coordinate linear
/// interpolation; a longer gap truncates the track at the gap start.
pub fn interpolate_gaps(track: &LandmarkTrack, max_gap: usize) -> RepairedTrack {
    let mut frames: Vec<LandmarkFrame> = Vec::with_capacity(track.frames.len());
    let mut filled = 0usize;
    let mut truncated_at = None;
    for frame in &track.frames {
        if let Some(prev) = frames.last() {
            let gap = (frame.frame_index - prev.frame_index - 1) as usize;
            if gap > max_gap {
                truncated_at = Some(prev.frame_index);
                break;
            }
            if gap > 0 {
                let start = prev.clone();
                let span = (frame.frame_index - start.frame_index) as f64;
                for k in 1..=gap {
                    let t = k as f64 / span;
                    let mut points = [[0.0f64; 2]; N_LANDMARKS];
                    for i in 0..N_LANDMARKS {
                        for j in 0..2 {
                            points[i][j] =
                                start.points[i][j] * (1.0 - t) + frame.points[i][j] * t;
                        }
                    }
                    frames.push(LandmarkFrame {
                        frame_index: start.frame_index + k as u64,
                        points,
                        confidence: None,
                    });
                    filled += 1;
                }
            }
        }
        frames.push(frame.clone());
    }
    RepairedTrack {
        track: LandmarkTrack {
            video_id: track.video_id.clone(),
            fps: track.fps,
            frames,
            label: track.label,
        },
        filled,
        truncated_at,
    }
}

/// Parameters of the synthetic track generator.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_frames: usize,
    /// Peak head rotation per axis, radians.
    pub head_motion_amplitude: f64,
    /// Peak PCA coefficient excursion, model units.
    pub expression_amplitude: f64,
    /// Per-frame independent landmark jitter for fake tracks, model units.
    pub fake_jitter_std: f64,
    /// Per-frame probability of an expression-coefficient discontinuity for
    /// fake tracks.
    pub fake_dropout_prob: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_frames: 150,
            head_motion_amplitude: 0.3,
            expression_amplitude: 1.0,
            fake_jitter_std: 0.02,
            fake_dropout_prob: 0.08,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::invalid("n_frames must be positive"));
        }
        if !(self.head_motion_amplitude >= 0.0 && self.expression_amplitude >= 0.0) {
            return Err(Error::invalid("amplitudes must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fake_dropout_prob) {
            return Err(Error::invalid("fake_dropout_prob must be in [0,1]"));
        }
        if !(self.fake_jitter_std >= 0.0) {
            return Err(Error::invalid("fake_jitter_std must be non-negative"));
        }
        Ok(())
    }
}

/// Sum of a few sinusoids; evaluated in seconds.
struct SinSum {
    terms: Vec<(f64, f64, f64)>, // (amplitude, frequency Hz, phase)
}

impl SinSum {
    fn draw(rng: &mut Rng, n_terms: usize, total_amplitude: f64, f_lo: f64, f_hi: f64) -> SinSum {
        let raw: Vec<f64> = (0..n_terms).map(|_| rng.range(0.2, 1.0)).collect();
        let sum: f64 = raw.iter().sum();
        let scale = if sum > 0.0 { total_amplitude / sum } else { 0.0 };
        let terms = raw
            .iter()
            .map(|a| {
                (
                    a * scale,
                    rng.range(f_lo, f_hi),
                    rng.range(0.0, 2.0 * std::f64::consts::PI),
                )
            })
            .collect();
        SinSum { terms }
    }

    fn eval(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|(a, f, p)| a * (2.0 * std::f64::consts::PI * f * t + p).sin())
            .sum()
    }
}

const SYNTH_FPS: f64 = 25.0;

/// Generate a seeded synthetic track with the bundled shape model.
///
/// Real tracks follow smooth low-frequency head motion and smooth expression
/// coefficient curves under a slowly varying affine camera. Fake tracks share
/// the same base motion plus per-frame landmark jitter and occasional
/// expression discontinuities.
pub fn synth_track(config: &SynthConfig, label: Label) -> Result<LandmarkTrack> {
    synth_track_with_model(config, label, &ShapeModel::bundled())
}

pub fn synth_track_with_model(
    config: &SynthConfig,
    label: Label,
    model: &ShapeModel,
) -> Result<LandmarkTrack> {
    config.validate()?;
    let mut rng = Rng::seed_from(config.seed);

    let amp = config.head_motion_amplitude;
    let a_pitch = amp * rng.range(0.4, 1.0);
    let pitch = SinSum::draw(&mut rng, 3, a_pitch, 0.05, 0.4);
    let a_yaw = amp * rng.range(0.4, 1.0);
    let yaw = SinSum::draw(&mut rng, 3, a_yaw, 0.05, 0.4);
    let a_roll = amp * rng.range(0.4, 1.0);
    let roll = SinSum::draw(&mut rng, 3, a_roll, 0.05, 0.4);
    let a_tx = 0.25 * rng.range(0.5, 1.0);
    let tx = SinSum::draw(&mut rng, 2, a_tx, 0.05, 0.3);
    let a_ty = 0.25 * rng.range(0.5, 1.0);
    let ty = SinSum::draw(&mut rng, 2, a_ty, 0.05, 0.3);
    let s0 = rng.range(100.0, 140.0);
    let s_mod = SinSum::draw(&mut rng, 1, 0.04, 0.05, 0.2);
    let center = [rng.range(120.0, 200.0), rng.range(120.0, 200.0)];
    let ncomp = model.n_components();
    let alpha_curves: Vec<SinSum> = (0..ncomp)
        .map(|_| {
            let a = config.expression_amplitude * rng.range(0.2, 1.0);
            SinSum::draw(&mut rng, 2, a, 0.1, 0.6)
        })
        .collect();

    // Base motion above consumes the same draws for both labels; fake-only
    // noise comes from a forked stream.
    let mut noise = rng.fork();
    let mut jump_offset = vec![0.0f64; ncomp];

    let mut frames = Vec::with_capacity(config.n_frames);
    for fi in 0..config.n_frames {
        let t = fi as f64 / SYNTH_FPS;
        let mut alpha: Vec<f64> = alpha_curves.iter().map(|c| c.eval(t)).collect();
        if label == Label::Fake {
            if noise.uniform() < config.fake_dropout_prob {
                for o in jump_offset.iter_mut() {
                    *o = noise.normal_scaled(config.expression_amplitude);
                }
            }
            for (a, o) in alpha.iter_mut().zip(&jump_offset) {
                *a += o;
            }
        }
        let mut shape =
            face3d::synthesize_shape(model, &ShapeCoefficients { alpha })?;
        if label == Label::Fake && config.fake_jitter_std > 0.0 {
            for i in 0..N_LANDMARKS {
                for j in 0..3 {
                    shape[(i, j)] += noise.normal_scaled(config.fake_jitter_std);
                }
            }
        }
        let s = s0 * (1.0 + s_mod.eval(t));
        let cam = AffineCamera::from_pose(
            pitch.eval(t),
            yaw.eval(t),
            roll.eval(t),
            s,
            tx.eval(t) + center[0] / s,
            ty.eval(t) + center[1] / s,
        );
        let p2 = cam.project(&shape);
        let mut points = [[0.0f64; 2]; N_LANDMARKS];
        for i in 0..N_LANDMARKS {
            points[i] = [p2[(i, 0)], p2[(i, 1)]];
        }
        frames.push(LandmarkFrame {
            frame_index: fi as u64,
            points,
            confidence: None,
        });
    }

    Ok(LandmarkTrack {
        video_id: format!(
            "synth_{}_{:016x}",
            match label {
                Label::Real => "real",
                Label::Fake => "fake",
            },
            config.seed
        ),
        fps: SYNTH_FPS,
        frames,
        label: Some(label),
    })
}

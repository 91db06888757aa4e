//! Per-frame feature extraction: the expression stream (FE, 9 values) and the
//! head-pose stream (HP, 6 values), plus the per-video sequence builder and
//! the feature CSV dump format.
//!
//! FE is computed on frontalized canonical coordinates (y up) and normalized
//! by the first-frame inter-ocular distance, so it is invariant to rigid head
//! motion and to uniform image scaling. HP carries the removed rigid motion:
//! translation, a depth proxy (1/scale), and the three Euler angles.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::face3d::{
    self, FrontalFrame, PoseFrame, ShapeModel, apply_geometric_constraints, frontalize_track,
};
use crate::ingest::{Label, LandmarkTrack};

pub const FE_DIM: usize = 9;
pub const HP_DIM: usize = 6;

/// Which feature stream a sequence belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Fe,
    Hp,
}

impl Stream {
    pub fn dim(self) -> usize {
        match self {
            Stream::Fe => FE_DIM,
            Stream::Hp => HP_DIM,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Stream::Fe => "FE",
            Stream::Hp => "HP",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Stream> {
        match tag {
            "FE" => Ok(Stream::Fe),
            "HP" => Ok(Stream::Hp),
            other => Err(Error::invalid(format!("unknown stream tag {other:?}"))),
        }
    }
}

/// T×d feature matrix for one video and one stream.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub stream: Stream,
    pub values: DMatrix<f64>,
    pub fps: f64,
    pub video_id: String,
    pub label: Option<Label>,
}

/// Tunables for [`build_sequences`].
#[derive(Clone, Copy, Debug)]
pub struct FeatureParams {
    pub lambda: f64,
    /// Per-frame clamp in model units; `None` derives it from fps.
    pub max_step: Option<f64>,
    pub symmetry_bound: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            lambda: face3d::DEFAULT_LAMBDA,
            max_step: None,
            symmetry_bound: face3d::DEFAULT_SYMMETRY_BOUND,
        }
    }
}

fn xy(points: &DMatrix<f64>, i: usize) -> [f64; 2] {
    [points[(i, 0)], points[(i, 1)]]
}

/// Inter-ocular distance: outer eye corners 36 and 45 in the canonical plane.
pub fn interocular_distance(points3d: &DMatrix<f64>) -> f64 {
    let a = xy(points3d, 36);
    let b = xy(points3d, 45);
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn interior_angle(points: &DMatrix<f64>, vertex: usize, a: usize, b: usize) -> f64 {
    let v = xy(points, vertex);
    let pa = xy(points, a);
    let pb = xy(points, b);
    let u = [pa[0] - v[0], pa[1] - v[1]];
    let w = [pb[0] - v[0], pb[1] - v[1]];
    let dot = u[0] * w[0] + u[1] * w[1];
    let nu = (u[0] * u[0] + u[1] * u[1]).sqrt();
    let nw = (w[0] * w[0] + w[1] * w[1]).sqrt();
    (dot / (nu * nw)).clamp(-1.0, 1.0).acos()
}

/// The 9-entry expression feature vector over frontalized canonical
/// coordinates, normalized by `interocular` (the first-frame inter-ocular
/// distance of the owning track):
///
/// f1 right-brow mean height, f2 left-brow mean height, f3 brow-angle
/// difference (radians, unnormalized), f4 signed outer eye-corner height
/// difference, f5 inner eye-corner distance, f6 mean eye opening, f7 mouth
/// width, f8 lip vertical distance, f9 mean mouth-corner height.
pub fn expression_features(points3d: &DMatrix<f64>, interocular: f64) -> Result<[f64; FE_DIM]> {
    if !(interocular > 0.0) || !interocular.is_finite() {
        return Err(Error::invalid("inter-ocular distance must be positive"));
    }
    let d = interocular;
    let y = |i: usize| points3d[(i, 1)];
    let x = |i: usize| points3d[(i, 0)];
    let f1 = (17..=21).map(y).sum::<f64>() / 5.0 / d;
    let f2 = (22..=26).map(y).sum::<f64>() / 5.0 / d;
    let f3 = interior_angle(points3d, 19, 18, 20) - interior_angle(points3d, 24, 23, 25);
    let f4 = (y(36) - y(45)) / d;
    let f5 = (x(39) - x(42)).abs() / d;
    let f6 = ((y(37) - y(41)).abs()
        + (y(38) - y(40)).abs()
        + (y(43) - y(47)).abs()
        + (y(44) - y(46)).abs())
        / 4.0
        / d;
    let f7 = (x(48) - x(54)).abs() / d;
    let f8 = (y(51) - y(57)).abs() / d;
    let f9 = (y(48) + y(54)) / 2.0 / d;
    Ok([f1, f2, f3, f4, f5, f6, f7, f8, f9])
}

/// [tx, ty, 1/scale, roll, pitch, yaw]. The third entry is the depth proxy:
/// a larger face (larger scale) means a closer head.
pub fn head_pose_features(pose: &PoseFrame) -> [f64; HP_DIM] {
    [
        pose.tx,
        pose.ty,
        1.0 / pose.scale,
        pose.roll,
        pose.pitch,
        pose.yaw,
    ]
}

/// Frontalize a track, apply geometric constraints, and extract both streams.
pub fn build_sequences(
    track: &LandmarkTrack,
    model: &ShapeModel,
    params: &FeatureParams,
) -> Result<(FeatureSequence, FeatureSequence)> {
    let frames = frontalize_track(track, model, params.lambda)?;
    let max_step = params
        .max_step
        .unwrap_or_else(|| face3d::max_step_for_fps(track.fps));
    let constrained = apply_geometric_constraints(&frames, max_step, params.symmetry_bound);
    sequences_from_frames(&constrained.frames, track)
}

fn sequences_from_frames(
    frames: &[FrontalFrame],
    track: &LandmarkTrack,
) -> Result<(FeatureSequence, FeatureSequence)> {
    let t = frames.len();
    let interocular = interocular_distance(&frames[0].points3d);
    let mut fe = DMatrix::zeros(t, FE_DIM);
    let mut hp = DMatrix::zeros(t, HP_DIM);
    for (row, frame) in frames.iter().enumerate() {
        let f = expression_features(&frame.points3d, interocular)?;
        for (c, v) in f.iter().enumerate() {
            fe[(row, c)] = *v;
        }
        let h = head_pose_features(&frame.pose);
        for (c, v) in h.iter().enumerate() {
            hp[(row, c)] = *v;
        }
    }
    let mk = |stream: Stream, values: DMatrix<f64>| FeatureSequence {
        stream,
        values,
        fps: track.fps,
        video_id: track.video_id.clone(),
        label: track.label,
    };
    Ok((mk(Stream::Fe, fe), mk(Stream::Hp, hp)))
}

// ---------------------------------------------------------------------------
// Feature CSV dump
// ---------------------------------------------------------------------------

/// Write sequences of one stream: header `video_id,stream,frame,c0..cD`.
pub fn write_feature_csv(path: &Path, seqs: &[FeatureSequence]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let dim = seqs.first().map(|s| s.stream.dim()).unwrap_or(FE_DIM);
    let mut header = vec!["video_id".to_string(), "stream".to_string(), "frame".to_string()];
    header.extend((0..dim).map(|c| format!("c{c}")));
    w.write_record(&header)?;
    for seq in seqs {
        for row in 0..seq.values.nrows() {
            let mut record = vec![
                seq.video_id.clone(),
                seq.stream.tag().to_string(),
                row.to_string(),
            ];
            record.extend((0..seq.values.ncols()).map(|c| format!("{}", seq.values[(row, c)])));
            w.write_record(&record)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    crate::par::write_atomic(path, &bytes)?;
    Ok(())
}

/// Read a feature CSV back into per-video sequences (labels are not part of
/// the dump format; callers join them from the dataset manifest).
pub fn read_feature_csv(path: &Path, fps: f64) -> Result<Vec<FeatureSequence>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let dim = headers.len().saturating_sub(3);
    if dim == 0 {
        return Err(Error::invalid(format!("{}: no feature columns", path.display())));
    }
    // BTreeMap keyed by first-seen order is not needed; frames arrive in
    // order per video, and videos are contiguous in our dumps. Collect
    // defensively by id anyway.
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, (Stream, Vec<Vec<f64>>)> = BTreeMap::new();
    for record in r.records() {
        let record = record?;
        let id = record
            .get(0)
            .ok_or_else(|| Error::invalid("missing video_id column"))?
            .to_string();
        let stream = Stream::from_tag(record.get(1).unwrap_or(""))?;
        let mut vals = Vec::with_capacity(dim);
        for c in 0..dim {
            let raw = record
                .get(3 + c)
                .ok_or_else(|| Error::invalid("short feature row"))?;
            vals.push(
                raw.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad feature value {raw:?}: {e}")))?,
            );
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_insert_with(|| (stream, Vec::new())).1.push(vals);
    }
    order
        .into_iter()
        .map(|id| {
            let (stream, vals) = rows.remove(&id).expect("id recorded on insert");
            if stream.dim() != dim {
                return Err(Error::invalid(format!(
                    "stream {} expects {} columns, file has {dim}",
                    stream.tag(),
                    stream.dim()
                )));
            }
            let t = vals.len();
            let values = DMatrix::from_fn(t, dim, |i, j| vals[i][j]);
            Ok(FeatureSequence {
                stream,
                values,
                fps,
                video_id: id,
                label: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::face3d::{AffineCamera, N_LANDMARKS, ShapeCoefficients, synthesize_shape};
    use crate::ingest::{LandmarkFrame, SynthConfig, synth_track};
    use crate::rng::Rng;

    #[test]
    fn symmetric_neutral_shape_zeroes_f3_f4() {
        let m = ShapeModel::bundled();
        let f = expression_features(m.mean_shape(), 1.0).unwrap();
        assert_eq!(f[2], 0.0, "f3");
        assert_eq!(f[3], 0.0, "f4");
    }

    #[test]
    fn lower_lip_shift_moves_only_f8() {
        let m = ShapeModel::bundled();
        let d = interocular_distance(m.mean_shape());
        let base = expression_features(m.mean_shape(), d).unwrap();
        let delta = 0.07;
        let mut moved = m.mean_shape().clone();
        moved[(57, 1)] -= delta;
        let got = expression_features(&moved, d).unwrap();
        assert!((got[7] - (base[7] + delta / d)).abs() < 1e-12);
        for (k, (a, b)) in base.iter().zip(&got).enumerate() {
            if k == 7 {
                continue;
            }
            assert_eq!(a, b, "entry {k} changed");
        }
    }

    #[test]
    fn matches_independent_landmark_arithmetic_oracle() {
        let m = ShapeModel::bundled();
        let mut rng = Rng::seed_from(17);
        let mut pts = m.mean_shape().clone();
        for i in 0..N_LANDMARKS {
            for j in 0..3 {
                pts[(i, j)] += rng.normal_scaled(0.05);
            }
        }
        let d = interocular_distance(&pts);
        let got = expression_features(&pts, d).unwrap();

        // Independent re-computation with plain scalar arithmetic.
        let p = |i: usize, j: usize| pts[(i, j)];
        let angle = |v: usize, a: usize, b: usize| {
            let ux = p(a, 0) - p(v, 0);
            let uy = p(a, 1) - p(v, 1);
            let wx = p(b, 0) - p(v, 0);
            let wy = p(b, 1) - p(v, 1);
            ((ux * wx + uy * wy)
                / ((ux * ux + uy * uy).sqrt() * (wx * wx + wy * wy).sqrt()))
            .acos()
        };
        let mut expect = [0.0f64; FE_DIM];
        expect[0] = (p(17, 1) + p(18, 1) + p(19, 1) + p(20, 1) + p(21, 1)) / 5.0 / d;
        expect[1] = (p(22, 1) + p(23, 1) + p(24, 1) + p(25, 1) + p(26, 1)) / 5.0 / d;
        expect[2] = angle(19, 18, 20) - angle(24, 23, 25);
        expect[3] = (p(36, 1) - p(45, 1)) / d;
        expect[4] = (p(39, 0) - p(42, 0)).abs() / d;
        expect[5] = ((p(37, 1) - p(41, 1)).abs()
            + (p(38, 1) - p(40, 1)).abs()
            + (p(43, 1) - p(47, 1)).abs()
            + (p(44, 1) - p(46, 1)).abs())
            / 4.0
            / d;
        expect[6] = (p(48, 0) - p(54, 0)).abs() / d;
        expect[7] = (p(51, 1) - p(57, 1)).abs() / d;
        expect[8] = (p(48, 1) + p(54, 1)) / 2.0 / d;
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_interocular_distance_is_an_error() {
        let m = ShapeModel::bundled();
        assert!(expression_features(m.mean_shape(), 0.0).is_err());
    }

    #[test]
    fn locality_perturbing_unrelated_landmark() {
        // f8 reads landmarks 51 and 57 only (plus the fixed normalizer);
        // moving the jaw must leave it bit-identical.
        let m = ShapeModel::bundled();
        let d = interocular_distance(m.mean_shape());
        let base = expression_features(m.mean_shape(), d).unwrap();
        let mut moved = m.mean_shape().clone();
        moved[(4, 0)] += 0.3;
        moved[(4, 1)] -= 0.2;
        let got = expression_features(&moved, d).unwrap();
        assert_eq!(base[7], got[7]);
        assert_eq!(base[0], got[0]);
        assert_eq!(base[2], got[2]);
    }

    #[test]
    fn head_pose_identity() {
        let pose = PoseFrame {
            pitch: 0.0,
            yaw: 0.0,
            roll: 0.0,
            tx: 0.0,
            ty: 0.0,
            tz: 0.0,
            scale: 1.0,
        };
        assert_eq!(head_pose_features(&pose), [0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn head_pose_depth_proxy_halves_when_scale_doubles() {
        let mk = |scale| PoseFrame {
            pitch: 0.1,
            yaw: 0.2,
            roll: 0.3,
            tx: 1.0,
            ty: 2.0,
            tz: 0.0,
            scale,
        };
        let a = head_pose_features(&mk(1.5));
        let b = head_pose_features(&mk(3.0));
        assert_eq!(b[2], a[2] / 2.0);
    }

    #[test]
    fn head_pose_field_order() {
        let pose = PoseFrame {
            pitch: 0.11,
            yaw: 0.22,
            roll: 0.33,
            tx: 0.44,
            ty: 0.55,
            tz: 0.0,
            scale: 2.0,
        };
        assert_eq!(
            head_pose_features(&pose),
            [pose.tx, pose.ty, 1.0 / pose.scale, pose.roll, pose.pitch, pose.yaw]
        );
    }

    #[test]
    fn sequences_shape_contract() {
        let cfg = SynthConfig {
            n_frames: 40,
            seed: 3,
            ..SynthConfig::default()
        };
        let track = synth_track(&cfg, crate::ingest::Label::Real).unwrap();
        let m = ShapeModel::bundled();
        let (fe, hp) = build_sequences(&track, &m, &FeatureParams::default()).unwrap();
        assert_eq!((fe.values.nrows(), fe.values.ncols()), (40, FE_DIM));
        assert_eq!((hp.values.nrows(), hp.values.ncols()), (40, HP_DIM));
        assert_eq!(fe.label, Some(crate::ingest::Label::Real));
        assert_eq!(fe.fps, 25.0);
    }

    fn rigid_track(alpha_scale: f64, n_frames: usize) -> LandmarkTrack {
        let m = ShapeModel::bundled();
        let mut rng = Rng::seed_from(70);
        let alpha = ShapeCoefficients {
            alpha: (0..10).map(|_| rng.range(-1.0, 1.0) * alpha_scale).collect(),
        };
        let shape = synthesize_shape(&m, &alpha).unwrap();
        let frames = (0..n_frames)
            .map(|t| {
                let s = t as f64 * 0.13;
                let cam = AffineCamera::from_pose(
                    0.25 * s.sin(),
                    0.3 * (s * 1.3).cos() - 0.1,
                    0.2 * (s * 0.7).sin(),
                    100.0 + 5.0 * s.sin(),
                    0.2 * s.cos(),
                    0.1 * s.sin(),
                );
                let p2 = cam.project(&shape);
                let mut points = [[0.0f64; 2]; N_LANDMARKS];
                for i in 0..N_LANDMARKS {
                    points[i] = [p2[(i, 0)], p2[(i, 1)]];
                }
                LandmarkFrame {
                    frame_index: t as u64,
                    points,
                    confidence: None,
                }
            })
            .collect();
        LandmarkTrack {
            video_id: "rigid".into(),
            fps: 25.0,
            frames,
            label: None,
        }
    }

    fn noiseless_params() -> FeatureParams {
        FeatureParams {
            lambda: 0.0,
            // Rigid synthetic pose sweeps move faster than real heads; the
            // clamp is a repair for noisy tracks, not for these oracles.
            max_step: Some(f64::INFINITY),
            ..FeatureParams::default()
        }
    }

    #[test]
    fn rigid_motion_gives_constant_fe_varying_hp() {
        let track = rigid_track(1.0, 15);
        let m = ShapeModel::bundled();
        let (fe, hp) = build_sequences(&track, &m, &noiseless_params()).unwrap();
        for row in 1..fe.values.nrows() {
            for c in 0..FE_DIM {
                assert!((fe.values[(row, c)] - fe.values[(0, c)]).abs() < 1e-6);
            }
        }
        let hp_span: f64 = (0..HP_DIM)
            .map(|c| {
                let col = hp.values.column(c);
                col.max() - col.min()
            })
            .sum();
        assert!(hp_span > 1e-3, "HP should vary under rigid motion");
    }

    #[test]
    fn fe_invariant_under_uniform_image_scaling() {
        let track = rigid_track(0.8, 10);
        let mut scaled = track.clone();
        for f in &mut scaled.frames {
            for p in &mut f.points {
                p[0] *= 3.7;
                p[1] *= 3.7;
            }
        }
        let m = ShapeModel::bundled();
        let p = noiseless_params();
        let (fe_a, _) = build_sequences(&track, &m, &p).unwrap();
        let (fe_b, _) = build_sequences(&scaled, &m, &p).unwrap();
        let dev = (&fe_a.values - &fe_b.values).abs().max();
        assert!(dev < 1e-6, "scaling deviation {dev}");
    }

    #[test]
    fn feature_csv_round_trip() {
        let cfg = SynthConfig {
            n_frames: 12,
            seed: 8,
            ..SynthConfig::default()
        };
        let track = synth_track(&cfg, crate::ingest::Label::Fake).unwrap();
        let m = ShapeModel::bundled();
        let (fe, _) = build_sequences(&track, &m, &FeatureParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fe.csv");
        write_feature_csv(&path, std::slice::from_ref(&fe)).unwrap();
        let back = read_feature_csv(&path, 25.0).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].video_id, fe.video_id);
        assert_eq!(back[0].stream, Stream::Fe);
        // Display formatting of f64 round-trips exactly.
        assert_eq!(back[0].values, fe.values);
    }
}

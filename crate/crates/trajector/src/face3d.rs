//! PCA face shape model, affine camera fitting, Euler pose decomposition, and
//! track frontalization.
//!
//! A face shape is the mean mesh plus a weighted sum of orthonormal principal
//! components. Each frame's 2D landmarks are explained by an affine camera
//! applied to the current shape estimate; alternating the camera fit and the
//! shape-coefficient fit separates rigid head motion (pose) from non-rigid
//! expression (the frontalized canonical shape).

use nalgebra::{DMatrix, DVector, Matrix2x4, Matrix3, Matrix3x4, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LandmarkTrack;
use crate::rng::Rng;

pub const N_LANDMARKS: usize = 68;

/// Default Tikhonov weight for the shape-coefficient fit.
pub const DEFAULT_LAMBDA: f64 = 1e-2;
/// Default temporal clamp at 25 fps, in model units per frame.
pub const DEFAULT_MAX_STEP_AT_25FPS: f64 = 0.05;
/// Default bound on left/right outer eye-corner height divergence before a
/// frame is flagged as bilaterally asymmetric, in model units.
pub const DEFAULT_SYMMETRY_BOUND: f64 = 0.2;
/// Fixed number of camera/shape alternation passes per frame.
pub const FIT_ITERATIONS: usize = 12;

/// Per-fps temporal clamp: same physical speed allowance at any frame rate.
pub fn max_step_for_fps(fps: f64) -> f64 {
    DEFAULT_MAX_STEP_AT_25FPS * 25.0 / fps
}

// ---------------------------------------------------------------------------
// Shape model
// ---------------------------------------------------------------------------

/// PCA face basis: mean shape, orthonormal components, per-component standard
/// deviations. Shapes are 68x3 matrices in model units, y up, z toward the
/// camera.
#[derive(Clone, Debug)]
pub struct ShapeModel {
    mean: DMatrix<f64>,
    components: Vec<DMatrix<f64>>,
    sigmas: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ShapeModelDoc {
    n_components: usize,
    mean: Vec<f64>,
    components: Vec<Vec<f64>>,
    sigma: Vec<f64>,
}

fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    // Row-major (landmark, xyz) flattening.
    (0..m.nrows())
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| m[(i, j)])
        .collect()
}

fn unflatten(v: &[f64]) -> Result<DMatrix<f64>> {
    if v.len() != N_LANDMARKS * 3 {
        return Err(Error::invalid(format!(
            "expected {} values per shape, got {}",
            N_LANDMARKS * 3,
            v.len()
        )));
    }
    Ok(DMatrix::from_fn(N_LANDMARKS, 3, |i, j| v[i * 3 + j]))
}

impl ShapeModel {
    pub fn new(mean: DMatrix<f64>, components: Vec<DMatrix<f64>>, sigmas: Vec<f64>) -> Result<Self> {
        let model = ShapeModel {
            mean,
            components,
            sigmas,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn mean_shape(&self) -> &DMatrix<f64> {
        &self.mean
    }

    pub fn components(&self) -> &[DMatrix<f64>] {
        &self.components
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn validate(&self) -> Result<()> {
        if self.mean.nrows() != N_LANDMARKS || self.mean.ncols() != 3 {
            return Err(Error::invalid("mean shape must be 68x3"));
        }
        if self.components.len() != self.sigmas.len() {
            return Err(Error::invalid("component/sigma count mismatch"));
        }
        for s in &self.sigmas {
            if !(*s > 0.0) {
                return Err(Error::invalid("sigmas must be positive"));
            }
        }
        let flat: Vec<Vec<f64>> = self.components.iter().map(flatten).collect();
        for (i, fi) in flat.iter().enumerate() {
            let norm: f64 = fi.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!("component {i} not unit norm")));
            }
            for (j, fj) in flat.iter().enumerate().skip(i + 1) {
                let dot: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                if dot.abs() > 1e-9 {
                    return Err(Error::invalid(format!("components {i} and {j} not orthogonal")));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let doc: ShapeModelDoc = serde_json::from_slice(bytes)?;
        if doc.components.len() != doc.n_components || doc.sigma.len() != doc.n_components {
            return Err(Error::invalid("n_components disagrees with component/sigma counts"));
        }
        let mean = unflatten(&doc.mean)?;
        let components = doc
            .components
            .iter()
            .map(|c| unflatten(c))
            .collect::<Result<Vec<_>>>()?;
        ShapeModel::new(mean, components, doc.sigma)
    }

    pub fn to_json(&self) -> Vec<u8> {
        let doc = ShapeModelDoc {
            n_components: self.n_components(),
            mean: flatten(&self.mean),
            components: self.components.iter().map(flatten).collect(),
            sigma: self.sigmas.clone(),
        };
        serde_json::to_vec(&doc).expect("shape model serialization cannot fail")
    }

    /// The bundled default model: a hand-parameterized neutral 68-landmark
    /// mesh plus 10 orthonormalized random deformation fields, generated
    /// deterministically from fixed constants.
    pub fn bundled() -> ShapeModel {
        let mean = neutral_mean_shape();
        let n = 10;
        let mut rng = Rng::seed_from(0x5EED_FACE);
        let mut flats: Vec<Vec<f64>> = Vec::with_capacity(n);
        while flats.len() < n {
            let mut raw: Vec<f64> = (0..N_LANDMARKS * 3).map(|_| rng.normal()).collect();
            // Two modified Gram-Schmidt passes.
            for _ in 0..2 {
                for prev in &flats {
                    let dot: f64 = raw.iter().zip(prev).map(|(a, b)| a * b).sum();
                    for (r, p) in raw.iter_mut().zip(prev) {
                        *r -= dot * p;
                    }
                }
            }
            let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-6 {
                continue;
            }
            for r in &mut raw {
                *r /= norm;
            }
            flats.push(raw);
        }
        let components = flats.iter().map(|f| unflatten(f).unwrap()).collect();
        let sigmas = (0..n).map(|i| 0.30 * 0.9f64.powi(i as i32)).collect();
        ShapeModel::new(mean, components, sigmas).expect("bundled model is valid by construction")
    }
}

/// Neutral bilaterally symmetric mean face, iBUG 68-point ordering.
fn neutral_mean_shape() -> DMatrix<f64> {
    let mut p = [[0.0f64; 3]; N_LANDMARKS];
    // Jaw 0-16: arc from the subject's right ear, around the chin, to the
    // left ear. Ears sit back (negative z), the chin slightly forward.
    for i in 0..17 {
        let phi = std::f64::consts::PI * (i as f64 / 16.0) - std::f64::consts::FRAC_PI_2;
        p[i] = [phi.sin(), 0.1 - 1.3 * phi.cos(), -0.3 + 0.25 * phi.cos()];
    }
    // Right brow 17-21 (outer to inner).
    let brow = [
        [-0.85, 0.42, 0.10],
        [-0.65, 0.50, 0.15],
        [-0.45, 0.53, 0.18],
        [-0.28, 0.50, 0.16],
        [-0.12, 0.44, 0.12],
    ];
    for (i, b) in brow.iter().enumerate() {
        p[17 + i] = *b;
        // Left brow 22-26 mirrors 21..17.
        p[26 - i] = [-b[0], b[1], b[2]];
    }
    // Nose bridge 27-30 and base 31-35.
    p[27] = [0.0, 0.35, 0.20];
    p[28] = [0.0, 0.18, 0.28];
    p[29] = [0.0, 0.02, 0.36];
    p[30] = [0.0, -0.14, 0.45];
    let base = [
        [-0.20, -0.25, 0.22],
        [-0.10, -0.28, 0.28],
        [0.0, -0.30, 0.32],
        [0.10, -0.28, 0.28],
        [0.20, -0.25, 0.22],
    ];
    for (i, b) in base.iter().enumerate() {
        p[31 + i] = *b;
    }
    // Right eye 36-41 (36 outer corner, 39 inner corner), left eye 42-47.
    let eye = [
        [-0.55, 0.0, 0.05],
        [-0.42, 0.05, 0.08],
        [-0.28, 0.05, 0.08],
        [-0.16, 0.0, 0.10],
        [-0.28, -0.05, 0.08],
        [-0.42, -0.05, 0.08],
    ];
    for (i, e) in eye.iter().enumerate() {
        p[36 + i] = *e;
    }
    // Mirror order: 42 inner, 45 outer, 46/47 lower lids.
    p[42] = [0.16, 0.0, 0.10];
    p[43] = [0.28, 0.05, 0.08];
    p[44] = [0.42, 0.05, 0.08];
    p[45] = [0.55, 0.0, 0.05];
    p[46] = [0.42, -0.05, 0.08];
    p[47] = [0.28, -0.05, 0.08];
    // Outer lip 48-59.
    let outer = [
        [-0.42, -0.65, 0.15],
        [-0.28, -0.58, 0.20],
        [-0.12, -0.54, 0.24],
        [0.0, -0.53, 0.26],
        [0.12, -0.54, 0.24],
        [0.28, -0.58, 0.20],
        [0.42, -0.65, 0.15],
        [0.28, -0.74, 0.20],
        [0.12, -0.79, 0.23],
        [0.0, -0.81, 0.24],
        [-0.12, -0.79, 0.23],
        [-0.28, -0.74, 0.20],
    ];
    for (i, o) in outer.iter().enumerate() {
        p[48 + i] = *o;
    }
    // Inner lip 60-67.
    let inner = [
        [-0.34, -0.66, 0.17],
        [-0.12, -0.62, 0.22],
        [0.0, -0.61, 0.23],
        [0.12, -0.62, 0.22],
        [0.34, -0.66, 0.17],
        [0.12, -0.70, 0.22],
        [0.0, -0.71, 0.22],
        [-0.12, -0.70, 0.22],
    ];
    for (i, o) in inner.iter().enumerate() {
        p[60 + i] = *o;
    }
    DMatrix::from_fn(N_LANDMARKS, 3, |i, j| p[i][j])
}

/// Coordinates of a face in the PCA shape space.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeCoefficients {
    pub alpha: Vec<f64>,
}

impl ShapeCoefficients {
    pub fn zeros(n: usize) -> Self {
        ShapeCoefficients { alpha: vec![0.0; n] }
    }
}

/// mean + sum_n alpha_n sigma_n component_n.
pub fn synthesize_shape(model: &ShapeModel, coeffs: &ShapeCoefficients) -> Result<DMatrix<f64>> {
    if coeffs.alpha.len() != model.n_components() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for a {}-component model",
            coeffs.alpha.len(),
            model.n_components()
        )));
    }
    let mut shape = model.mean.clone();
    for ((a, s), c) in coeffs
        .alpha
        .iter()
        .zip(&model.sigmas)
        .zip(&model.components)
    {
        shape += c * (*a * *s);
    }
    Ok(shape)
}

// ---------------------------------------------------------------------------
// Euler angles
// ---------------------------------------------------------------------------

/// R = R_x(pitch) · R_y(yaw) · R_z(roll), applied to column vectors.
pub fn euler_to_matrix(pitch: f64, yaw: f64, roll: f64) -> Matrix3<f64> {
    let (sa, ca) = pitch.sin_cos();
    let (sb, cb) = yaw.sin_cos();
    let (sc, cc) = roll.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, ca, -sa, 0.0, sa, ca);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rz = Matrix3::new(cc, -sc, 0.0, sc, cc, 0.0, 0.0, 0.0, 1.0);
    rx * ry * rz
}

/// Inverse of [`euler_to_matrix`] away from yaw = ±π/2.
pub fn matrix_to_euler(r: &Matrix3<f64>) -> Result<(f64, f64, f64)> {
    let rtr = r.transpose() * r;
    let mut max_dev = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            max_dev = max_dev.max((rtr[(i, j)] - target).abs());
        }
    }
    if max_dev > 1e-6 || r.determinant() < 0.0 {
        return Err(Error::invalid("matrix is not a rotation"));
    }
    // R[0][2] = sin(yaw); cos(yaw) vanishes at the gimbal singularity.
    let s_yaw = r[(0, 2)].clamp(-1.0, 1.0);
    if 1.0 - s_yaw.abs() < 1e-12 {
        return Err(Error::GimbalLock);
    }
    let yaw = s_yaw.asin();
    let pitch = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let roll = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Ok((pitch, yaw, roll))
}

// ---------------------------------------------------------------------------
// Affine camera
// ---------------------------------------------------------------------------

/// 2x4 affine camera mapping homogeneous 3D model points to pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineCamera {
    pub p: Matrix2x4<f64>,
}

impl AffineCamera {
    /// Build from pose parameters: x = s · (R·X)_{xy} + s·(tx, ty).
    pub fn from_pose(pitch: f64, yaw: f64, roll: f64, scale: f64, tx: f64, ty: f64) -> Self {
        let r = euler_to_matrix(pitch, yaw, roll);
        let mut p = Matrix2x4::zeros();
        for i in 0..2 {
            for j in 0..3 {
                p[(i, j)] = scale * r[(i, j)];
            }
        }
        p[(0, 3)] = scale * tx;
        p[(1, 3)] = scale * ty;
        AffineCamera { p }
    }

    /// Project an n×3 point matrix to n×2 pixels.
    pub fn project(&self, points3d: &DMatrix<f64>) -> DMatrix<f64> {
        let n = points3d.nrows();
        DMatrix::from_fn(n, 2, |i, k| {
            self.p[(k, 0)] * points3d[(i, 0)]
                + self.p[(k, 1)] * points3d[(i, 1)]
                + self.p[(k, 2)] * points3d[(i, 2)]
                + self.p[(k, 3)]
        })
    }
}

/// Result of the gold-standard camera fit.
#[derive(Clone, Debug)]
pub struct CameraFit {
    pub camera: AffineCamera,
    /// RMS reprojection error in pixels.
    pub residual: f64,
}

/// Least-squares affine camera from 2D-3D correspondences, with isotropic
/// normalization of both point sets for conditioning.
pub fn fit_camera_gold_standard(points2d: &DMatrix<f64>, points3d: &DMatrix<f64>) -> Result<CameraFit> {
    let n = points2d.nrows();
    if points3d.nrows() != n || points2d.ncols() != 2 || points3d.ncols() != 3 {
        return Err(Error::ShapeMismatch("points2d must be n×2 and points3d n×3".into()));
    }
    if n < 4 {
        return Err(Error::Degenerate(format!("need at least 4 points, got {n}")));
    }

    // Normalize 2D: centroid to origin, RMS distance sqrt(2).
    let c2 = [points2d.column(0).mean(), points2d.column(1).mean()];
    let rms2 = ((0..n)
        .map(|i| (points2d[(i, 0)] - c2[0]).powi(2) + (points2d[(i, 1)] - c2[1]).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    // Normalize 3D: RMS distance sqrt(3).
    let c3 = [
        points3d.column(0).mean(),
        points3d.column(1).mean(),
        points3d.column(2).mean(),
    ];
    let rms3 = ((0..n)
        .map(|i| {
            (0..3)
                .map(|j| (points3d[(i, j)] - c3[j]).powi(2))
                .sum::<f64>()
        })
        .sum::<f64>()
        / n as f64)
        .sqrt();
    if rms2 < 1e-12 || rms3 < 1e-12 {
        return Err(Error::Degenerate("point set collapses to a single point".into()));
    }
    let s2 = 2.0f64.sqrt() / rms2;
    let s3 = 3.0f64.sqrt() / rms3;

    // Design matrix on normalized 3D points, shared by both image rows.
    let a = DMatrix::from_fn(n, 4, |i, j| {
        if j < 3 {
            s3 * (points3d[(i, j)] - c3[j])
        } else {
            1.0
        }
    });
    let bx = DVector::from_fn(n, |i, _| s2 * (points2d[(i, 0)] - c2[0]));
    let by = DVector::from_fn(n, |i, _| s2 * (points2d[(i, 1)] - c2[1]));

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= 1e-10 * smax {
        return Err(Error::Degenerate("3D points are coplanar or otherwise rank-deficient".into()));
    }
    let p1 = svd
        .solve(&bx, 0.0)
        .map_err(|e| Error::Singular(e.to_string()))?;
    let p2 = svd
        .solve(&by, 0.0)
        .map_err(|e| Error::Singular(e.to_string()))?;

    // Denormalize: P = T⁻¹ · [P̃; 0 0 0 1] · U.
    let t_inv = Matrix3::new(
        1.0 / s2,
        0.0,
        c2[0],
        0.0,
        1.0 / s2,
        c2[1],
        0.0,
        0.0,
        1.0,
    );
    let u = Matrix4::new(
        s3,
        0.0,
        0.0,
        -s3 * c3[0],
        0.0,
        s3,
        0.0,
        -s3 * c3[1],
        0.0,
        0.0,
        s3,
        -s3 * c3[2],
        0.0,
        0.0,
        0.0,
        1.0,
    );
    let p_norm = Matrix3x4::new(
        p1[0], p1[1], p1[2], p1[3], p2[0], p2[1], p2[2], p2[3], 0.0, 0.0, 0.0, 1.0,
    );
    let full = t_inv * p_norm * u;
    let p = Matrix2x4::from_fn(|i, j| full[(i, j)]);
    let camera = AffineCamera { p };

    let reproj = camera.project(points3d);
    let residual = ((0..n)
        .map(|i| (reproj[(i, 0)] - points2d[(i, 0)]).powi(2) + (reproj[(i, 1)] - points2d[(i, 1)]).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();

    Ok(CameraFit { camera, residual })
}

// ---------------------------------------------------------------------------
// Pose decomposition
// ---------------------------------------------------------------------------

/// Rigid head pose recovered from an affine camera.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub pitch: f64,
    pub yaw: f64,
    pub roll: f64,
    pub tx: f64,
    pub ty: f64,
    /// Not observable under a pure affine camera; reported as 0. Depth motion
    /// is carried by the reciprocal of `scale` downstream.
    pub tz: f64,
    pub scale: f64,
}

/// Factor the left 2x3 block as s·[r1ᵀ; r2ᵀ] and complete the rotation.
pub fn decompose_camera(camera: &AffineCamera) -> Result<PoseFrame> {
    let m1 = Vector3::new(camera.p[(0, 0)], camera.p[(0, 1)], camera.p[(0, 2)]);
    let m2 = Vector3::new(camera.p[(1, 0)], camera.p[(1, 1)], camera.p[(1, 2)]);
    let n1 = m1.norm();
    let n2 = m2.norm();
    if n1 < 1e-12 || n2 < 1e-12 {
        return Err(Error::Degenerate("camera matrix left block is rank-deficient".into()));
    }
    let scale = 0.5 * (n1 + n2);
    let r1 = m1 / n1;
    let mut r2 = m2 - (m2.dot(&r1)) * r1;
    let n2o = r2.norm();
    if n2o < 1e-12 {
        return Err(Error::Degenerate("camera rows are collinear".into()));
    }
    r2 /= n2o;
    let r3 = r1.cross(&r2);
    let r = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r3.transpose()]);
    let (pitch, yaw, roll) = matrix_to_euler(&r)?;
    Ok(PoseFrame {
        pitch,
        yaw,
        roll,
        tx: camera.p[(0, 3)] / scale,
        ty: camera.p[(1, 3)] / scale,
        tz: 0.0,
        scale,
    })
}

// ---------------------------------------------------------------------------
// Shape-coefficient fit
// ---------------------------------------------------------------------------

/// Regularized linear least squares for the PCA coefficients under a fixed
/// camera: argmin_a ||x - P·[shape(a); 1]||² + lambda·||a||².
pub fn fit_shape_coeffs(
    points2d: &DMatrix<f64>,
    camera: &AffineCamera,
    model: &ShapeModel,
    lambda: f64,
) -> Result<ShapeCoefficients> {
    let n = points2d.nrows();
    if n != N_LANDMARKS || points2d.ncols() != 2 {
        return Err(Error::ShapeMismatch("points2d must be 68×2".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be non-negative"));
    }
    let ncomp = model.n_components();
    let mean_proj = camera.project(&model.mean);
    // Residual target: observations minus projected mean shape.
    let mut b = DVector::zeros(2 * n);
    for i in 0..n {
        b[2 * i] = points2d[(i, 0)] - mean_proj[(i, 0)];
        b[2 * i + 1] = points2d[(i, 1)] - mean_proj[(i, 1)];
    }
    // Column n: linear part of the camera applied to sigma_n * component_n.
    let mut a = DMatrix::zeros(2 * n, ncomp);
    for (c, (comp, sigma)) in model.components.iter().zip(&model.sigmas).enumerate() {
        for i in 0..n {
            for k in 0..2 {
                a[(2 * i + k, c)] = sigma
                    * (camera.p[(k, 0)] * comp[(i, 0)]
                        + camera.p[(k, 1)] * comp[(i, 1)]
                        + camera.p[(k, 2)] * comp[(i, 2)]);
            }
        }
    }

    let alpha = if lambda == 0.0 {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smax <= 0.0 || smin <= 1e-10 * smax {
            return Err(Error::Singular("design matrix is rank-deficient with lambda = 0".into()));
        }
        svd.solve(&b, 0.0).map_err(|e| Error::Singular(e.to_string()))?
    } else {
        let mut ata = a.transpose() * &a;
        for i in 0..ncomp {
            ata[(i, i)] += lambda;
        }
        let atb = a.transpose() * b;
        ata.cholesky()
            .ok_or_else(|| Error::Singular("normal equations not positive definite".into()))?
            .solve(&atb)
    };

    Ok(ShapeCoefficients {
        alpha: alpha.iter().copied().collect(),
    })
}

// ---------------------------------------------------------------------------
// Frontalization
// ---------------------------------------------------------------------------

/// One frontalized frame: canonical (pose-free) 3D landmarks plus the rigid
/// pose that was removed.
#[derive(Clone, Debug)]
pub struct FrontalFrame {
    pub points3d: DMatrix<f64>,
    pub pose: PoseFrame,
    /// RMS reprojection error in pixels.
    pub residual: f64,
}

/// Alternate camera and shape fits per frame; expression stays in `points3d`,
/// head motion in `pose`.
pub fn frontalize_track(
    track: &LandmarkTrack,
    model: &ShapeModel,
    lambda: f64,
) -> Result<Vec<FrontalFrame>> {
    if track.frames.len() < 2 {
        return Err(Error::TrackTooShort(track.frames.len()));
    }
    let mut out = Vec::with_capacity(track.frames.len());
    for (idx, frame) in track.frames.iter().enumerate() {
        let points2d = DMatrix::from_fn(N_LANDMARKS, 2, |i, j| frame.points[i][j]);
        let frontal = (|| -> Result<FrontalFrame> {
            let mut shape = model.mean.clone();
            for _ in 0..FIT_ITERATIONS {
                let fit = fit_camera_gold_standard(&points2d, &shape)?;
                let coeffs = fit_shape_coeffs(&points2d, &fit.camera, model, lambda)?;
                shape = synthesize_shape(model, &coeffs)?;
            }
            let fit = fit_camera_gold_standard(&points2d, &shape)?;
            let pose = decompose_camera(&fit.camera)?;
            Ok(FrontalFrame {
                points3d: shape,
                pose,
                residual: fit.residual,
            })
        })()
        .map_err(|e| Error::at_frame(idx, e))?;
        out.push(frontal);
    }
    Ok(out)
}

/// Output of [`apply_geometric_constraints`].
#[derive(Clone, Debug)]
pub struct ConstrainedFrames {
    pub frames: Vec<FrontalFrame>,
    /// Indices of frames whose left/right outer eye-corner heights diverge
    /// beyond the bound (flagged, never corrected).
    pub asymmetric_frames: Vec<usize>,
}

/// Temporal continuity clamp: per-landmark displacement between consecutive
/// output frames is limited to `max_step` along its direction.
pub fn apply_geometric_constraints(
    frames: &[FrontalFrame],
    max_step: f64,
    symmetry_bound: f64,
) -> ConstrainedFrames {
    let mut out: Vec<FrontalFrame> = Vec::with_capacity(frames.len());
    let mut asymmetric = Vec::new();
    for (t, frame) in frames.iter().enumerate() {
        let mut next = frame.clone();
        if let Some(prev) = out.last() {
            for i in 0..N_LANDMARKS {
                let d = [
                    next.points3d[(i, 0)] - prev.points3d[(i, 0)],
                    next.points3d[(i, 1)] - prev.points3d[(i, 1)],
                    next.points3d[(i, 2)] - prev.points3d[(i, 2)],
                ];
                let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
                // The relative slack keeps the operation idempotent: a step
                // already clamped to max_step re-measures within rounding of
                // the bound and must not be re-shortened.
                if len > max_step * (1.0 + 1e-9) {
                    let f = max_step / len;
                    for j in 0..3 {
                        next.points3d[(i, j)] = prev.points3d[(i, j)] + d[j] * f;
                    }
                }
            }
        }
        if (next.points3d[(36, 1)] - next.points3d[(45, 1)]).abs() > symmetry_bound {
            asymmetric.push(t);
        }
        out.push(next);
    }
    ConstrainedFrames {
        frames: out,
        asymmetric_frames: asymmetric,
    }
}

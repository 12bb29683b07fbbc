use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::{CameraModel, FaceModel3D, LandmarkFrame, Result, SensorError};

const MAX_ITERATIONS: usize = 100;
const STEP_TOLERANCE: f64 = 1e-8;
// Minor-axis spread below which the image points are treated as collinear/coincident.
const DEGENERATE_SPREAD_PX: f64 = 1e-3;

/// Head orientation relative to a frontal view, plus camera-frame translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPose {
    /// Degrees, positive when the head turns toward the user's right.
    pub yaw: f64,
    /// Degrees, positive when the head tilts up.
    pub pitch: f64,
    pub roll: f64,
    /// Millimetres, camera frame.
    pub translation: [f64; 3],
    /// RMS reprojection error in pixels.
    pub reprojection_error: f64,
    /// False when refinement hit the iteration cap before the step tolerance.
    pub converged: bool,
}

impl HeadPose {
    pub fn new(yaw: f64, pitch: f64, roll: f64, translation: [f64; 3]) -> Self {
        Self {
            yaw,
            pitch,
            roll,
            translation,
            reprojection_error: 0.0,
            converged: true,
        }
    }

    /// Camera-from-model rotation.
    ///
    /// The head rotation is intrinsic yaw about model y, then pitch about x, then roll
    /// about z, composed with the fixed frontal flip diag(1, -1, -1).
    pub fn rotation(&self) -> Matrix3<f64> {
        frontal() * head_rotation(self.yaw, self.pitch, self.roll)
    }

    fn from_rotation(r: &Matrix3<f64>, t: &Vector3<f64>, error: f64, converged: bool) -> Self {
        let m = frontal().transpose() * r;
        let b = (-m[(1, 2)]).clamp(-1.0, 1.0).asin();
        let a = m[(0, 2)].atan2(m[(2, 2)]);
        let c = m[(1, 0)].atan2(m[(1, 1)]);
        Self {
            yaw: normalize_degrees(-a.to_degrees()),
            pitch: normalize_degrees(-b.to_degrees()),
            roll: normalize_degrees(c.to_degrees()),
            translation: [t.x, t.y, t.z],
            reprojection_error: error,
            converged,
        }
    }
}

fn frontal() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0))
}

fn head_rotation(yaw: f64, pitch: f64, roll: f64) -> Matrix3<f64> {
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), -yaw.to_radians());
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), -pitch.to_radians());
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), roll.to_radians());
    (ry * rx * rz).into_inner()
}

/// Maps an angle to (-180, 180].
fn normalize_degrees(a: f64) -> f64 {
    let mut a = a % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Pinhole projection of the model under `pose`.
pub fn project(model: &FaceModel3D, pose: &HeadPose, camera: &CameraModel) -> Result<Vec<[f64; 2]>> {
    let values = [pose.yaw, pose.pitch, pose.roll];
    if values.iter().chain(&pose.translation).any(|v| !v.is_finite()) {
        return Err(SensorError::InvalidInput("pose is not finite".into()));
    }
    let r = pose.rotation();
    let t = Vector3::from(pose.translation);
    project_with(model, &r, &t, camera)
}

fn project_with(
    model: &FaceModel3D,
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    camera: &CameraModel,
) -> Result<Vec<[f64; 2]>> {
    model
        .points()
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let c = r * Vector3::from(*p) + t;
            if c.z <= 0.0 {
                return Err(SensorError::BehindCamera { index, z: c.z });
            }
            Ok([
                camera.focal_length * c.x / c.z + camera.principal_point[0],
                camera.focal_length * c.y / c.z + camera.principal_point[1],
            ])
        })
        .collect()
}

struct Problem<'a> {
    model: &'a FaceModel3D,
    image: &'a [[f64; 2]],
    camera: &'a CameraModel,
}

impl Problem<'_> {
    /// Sum of squared pixel residuals; infinite when any point is behind the camera.
    fn cost(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> f64 {
        match project_with(self.model, r, t, self.camera) {
            Ok(proj) => proj
                .iter()
                .zip(self.image)
                .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
                .sum(),
            Err(_) => f64::INFINITY,
        }
    }

    fn rms(&self, cost: f64) -> f64 {
        (cost / self.image.len() as f64).sqrt()
    }

    /// Normal equations of the residuals w.r.t. a left rotation increment and translation.
    fn normal_equations(&self, r: &Matrix3<f64>, t: &Vector3<f64>) -> (Matrix6<f64>, Vector6<f64>) {
        let f = self.camera.focal_length;
        let [cx, cy] = self.camera.principal_point;
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (p, q) in self.model.points().iter().zip(self.image) {
            let rotated = r * Vector3::from(*p);
            let c = rotated + t;
            let inv_z = 1.0 / c.z;
            let du = Vector3::new(f * inv_z, 0.0, -f * c.x * inv_z * inv_z);
            let dv = Vector3::new(0.0, f * inv_z, -f * c.y * inv_z * inv_z);
            // d(c)/d(omega) = -[rotated]x
            let skew = -rotated.cross_matrix();
            let ru = f * c.x * inv_z + cx - q[0];
            let rv = f * c.y * inv_z + cy - q[1];
            for (d, res) in [(du, ru), (dv, rv)] {
                let rot_part = skew.transpose() * d;
                let row = Vector6::new(rot_part.x, rot_part.y, rot_part.z, d.x, d.y, d.z);
                jtj += row * row.transpose();
                jtr += row * res;
            }
        }
        (jtj, jtr)
    }

    /// Levenberg-Marquardt refinement. Only cost-decreasing steps are accepted.
    fn refine(&self, mut r: Matrix3<f64>, mut t: Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>, f64, bool) {
        let mut cost = self.cost(&r, &t);
        let mut lambda = 1e-3;
        let mut converged = false;
        for _ in 0..MAX_ITERATIONS {
            let (jtj, jtr) = self.normal_equations(&r, &t);
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            if step.norm() < STEP_TOLERANCE {
                converged = true;
                break;
            }
            let omega = Vector3::new(step[0], step[1], step[2]);
            let r_new = Rotation3::new(omega).into_inner() * r;
            let t_new = t + Vector3::new(step[3], step[4], step[5]);
            let cost_new = self.cost(&r_new, &t_new);
            if cost_new < cost {
                r = r_new;
                t = t_new;
                cost = cost_new;
                lambda = (lambda * 0.3).max(1e-12);
            } else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    // no descent direction left at this scale
                    converged = true;
                    break;
                }
            }
        }
        (orthonormalize(&r), t, cost, converged)
    }
}

fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return *m;
    };
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Direct linear transform on normalised image coordinates, projected onto SO(3).
fn dlt_initial(problem: &Problem) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = problem.image.len();
    if n < 6 {
        return None;
    }
    let f = problem.camera.focal_length;
    let [cx, cy] = problem.camera.principal_point;
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (p, q)) in problem.model.points().iter().zip(problem.image).enumerate() {
        let x = (q[0] - cx) / f;
        let y = (q[1] - cy) / f;
        let hp = [p[0], p[1], p[2], 1.0];
        for k in 0..4 {
            a[(2 * i, k)] = hp[k];
            a[(2 * i, 8 + k)] = -x * hp[k];
            a[(2 * i + 1, 4 + k)] = hp[k];
            a[(2 * i + 1, 8 + k)] = -y * hp[k];
        }
    }
    // Null vector of A = eigenvector of AᵀA with the smallest eigenvalue.
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))?;
    let v = eig.eigenvectors.column(idx);
    let mut m = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let mut t = Vector3::new(v[3], v[7], v[11]);
    if t.z < 0.0 {
        m = -m;
        t = -t;
    }
    let scale = m.svd(false, false).singular_values.mean();
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    let r = orthonormalize(&(m / scale));
    let t = t / scale;
    (t.z > 0.0).then_some((r, t))
}

/// Frontal rotation with translation from the image centroid and spread.
fn frontal_initial(problem: &Problem) -> (Matrix3<f64>, Vector3<f64>) {
    let f = problem.camera.focal_length;
    let [cx, cy] = problem.camera.principal_point;
    let n = problem.image.len() as f64;
    let (mut u, mut v) = (0.0, 0.0);
    for q in problem.image {
        u += q[0] / n;
        v += q[1] / n;
    }
    let image_spread: f64 = problem
        .image
        .iter()
        .map(|q| ((q[0] - u).powi(2) + (q[1] - v).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let model = problem.model.points();
    let mut c = [0.0; 3];
    for p in model {
        for k in 0..3 {
            c[k] += p[k] / n;
        }
    }
    let model_spread: f64 = model
        .iter()
        .map(|p| ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    let z = f * model_spread / image_spread.max(1e-9);
    let r = frontal();
    let centroid = r * Vector3::from(c);
    let t = Vector3::new((u - cx) * z / f, (v - cy) * z / f, z) - centroid;
    (r, t)
}

fn minor_spread(points: &[[f64; 2]]) -> f64 {
    let n = points.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for p in points {
        mx += p[0] / n;
        my += p[1] / n;
    }
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx / n;
        syy += dy * dy / n;
        sxy += dx * dy / n;
    }
    let half_trace = (sxx + syy) / 2.0;
    let disc = (((sxx - syy) / 2.0).powi(2) + sxy * sxy).sqrt();
    (half_trace - disc).max(0.0).sqrt()
}

/// Recovers the head pose minimising RMS reprojection error.
///
/// Two starts are refined (a DLT estimate and a frontal guess) and the lower-error
/// result is kept. A result that hit the iteration cap is returned with
/// `converged == false`.
pub fn solve_head_pose(frame: &LandmarkFrame, camera: &CameraModel, model: &FaceModel3D) -> Result<HeadPose> {
    if frame.points.len() != model.len() {
        return Err(SensorError::InvalidInput(format!(
            "frame has {} landmarks, model has {}",
            frame.points.len(),
            model.len()
        )));
    }
    if frame.points.len() < 4 {
        return Err(SensorError::NoSolution(
            "at least 4 correspondences are required".into(),
        ));
    }
    if frame.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SensorError::InvalidInput("landmark is not finite".into()));
    }
    if minor_spread(&frame.points) < DEGENERATE_SPREAD_PX {
        return Err(SensorError::NoSolution(
            "landmarks are collinear or coincident".into(),
        ));
    }

    let problem = Problem {
        model,
        image: &frame.points,
        camera,
    };
    let mut starts = vec![frontal_initial(&problem)];
    if let Some(dlt) = dlt_initial(&problem) {
        starts.insert(0, dlt);
    }

    let best = starts
        .into_iter()
        .map(|(r, t)| problem.refine(r, t))
        .filter(|(_, _, cost, _)| cost.is_finite())
        .min_by(|a, b| a.2.total_cmp(&b.2))
        .ok_or_else(|| SensorError::NoSolution("no start reached a finite cost".into()))?;

    let (r, t, cost, converged) = best;
    Ok(HeadPose::from_rotation(&r, &t, problem.rms(cost), converged))
}

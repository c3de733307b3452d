//! Simulated Furuta pendulum under linear state feedback.
//!
//! The plant is a zero-order-hold discretization of a rotary inverted
//! pendulum linearized about the upright position, with Qube-Servo-class
//! physical constants. State is `[theta, alpha, theta_dot, alpha_dot]`
//! (rotary arm angle, pendulum angle from upright, their rates); input is
//! the motor voltage `u = K x`. A rollout starts from a small pendulum
//! displacement and runs one episode; the reward scores stabilization around
//! upright and the two constraints are angle margins along the trajectory.
//!
//! This is a qualitative stand-in for hardware: all constants live in
//! [`FurutaParams`] and the shipped preset is calibrated so that the default
//! initial parameter is safely inside the stabilizing region while parts of
//! the gain box are not.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NoiseDistribution;
use crate::plants::Plant;
use crate::rng::{Stream, StreamTag};

type Mat4 = SMatrix<f64, 4, 4>;
type Vec4 = SVector<f64, 4>;

/// Discrete-time closed-loop simulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FurutaParams {
    /// Zero-order-hold state matrix.
    pub a_d: [[f64; 4]; 4],
    /// Zero-order-hold input column.
    pub b_d: [f64; 4],
    /// Sample time in seconds.
    pub dt: f64,
    /// Steps per episode.
    pub episode_len: usize,
    /// Initial state (pendulum slightly off upright).
    pub x0: [f64; 4],
    /// Affine map from `a_1` to the arm-angle gain.
    pub k1_range: (f64, f64),
    /// Affine map from `a_2` to the pendulum-angle gain.
    pub k2_range: (f64, f64),
    /// Fixed rate gains `(K_3, K_4)`.
    pub k34: (f64, f64),
}

/// One simulated episode. Angles are recorded after clipping to the
/// mechanical range.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub theta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub alpha_dot: Vec<f64>,
    pub control: Vec<f64>,
    /// True when an angle hit the clip range or the state left the finite
    /// regime (the remainder is filled with saturation values).
    pub saturated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// Matrix exponential by scaled-and-squared Taylor series, together with its
/// integral `G = int_0^dt exp(A s) ds`, which turns the continuous pair
/// `(A, B)` into the zero-order-hold pair `(exp(A dt), G B)`.
fn zoh(a_ct: &Mat4, dt: f64) -> (Mat4, Mat4) {
    let norm = a_ct.abs().max() * dt;
    let scale = norm.log2().ceil().max(0.0) as u32 + 1;
    let h = dt / f64::powi(2.0, scale as i32);
    let t = a_ct * h;

    let mut exp = Mat4::identity();
    let mut integral = Mat4::identity() * h;
    let mut term = Mat4::identity();
    for k in 1..=24 {
        term = (term * t) / k as f64;
        exp += term;
        integral += term * (h / (k + 1) as f64);
    }
    // Interval doubling: exp doubles by squaring, the integral satisfies
    // int_0^{2h} = (I + exp_h) int_0^h.
    for _ in 0..scale {
        integral = (Mat4::identity() + exp) * integral;
        exp *= exp.clone();
    }
    (exp, integral)
}

/// Infinite-horizon discrete LQR gain by Riccati iteration; `u = -K x`
/// stabilizes `(a, b)` when the iteration converges.
fn discrete_lqr(a: &Mat4, b: &Vec4, q: &Mat4, r: f64) -> Vec4 {
    let mut p = *q;
    for _ in 0..20_000 {
        let btpb = (b.transpose() * p * b)[(0, 0)] + r;
        let btpa = b.transpose() * p * a;
        let k = btpa / btpb;
        let next = q + a.transpose() * p * a - (a.transpose() * p * b) * k;
        let delta = (next - p).abs().max();
        p = next;
        if delta < 1e-12 {
            break;
        }
    }
    let btpb = (b.transpose() * p * b)[(0, 0)] + r;
    let btpa = b.transpose() * p * a;
    (btpa / btpb).transpose()
}

impl FurutaParams {
    /// Preset built from Qube-Servo-class constants: arm mass 95 g and
    /// length 85 mm, pendulum mass 24 g and length 129 mm, 8.4-ohm motor
    /// with 0.042 torque/back-EMF constants, 5 ms sampling, 5 s episodes.
    ///
    /// The gain box is anchored so that the default initial parameter
    /// `(0.225, 0.40)` maps exactly to an LQR design for this linearization;
    /// the spans are wide enough that the box corners destabilize the loop.
    pub fn qube_preset() -> Self {
        let (a_ct, b_ct) = Self::qube_continuous();
        let dt = 0.005;
        let (a_d, g) = zoh(&a_ct, dt);
        let b_d = g * b_ct;

        let q = Mat4::from_diagonal(&Vec4::new(5.0, 1.0, 1.0, 0.04));
        let k_lqr = discrete_lqr(&a_d, &b_d, &q, 1.0);
        // Rollouts use u = +K x, so the stabilizing nominal is -K_lqr.
        let k_nom = -k_lqr;

        // Anchor the nominal at a = (0.225, 0.40); spans calibrated so the
        // stabilizing region fills roughly the middle of the box.
        let span1 = 16.0;
        let span2 = 56.0;
        let k1_lo = k_nom[0] - 0.225 * span1;
        let k2_lo = k_nom[1] - 0.40 * span2;
        FurutaParams {
            a_d: mat_to_rows(&a_d),
            b_d: [b_d[0], b_d[1], b_d[2], b_d[3]],
            dt,
            episode_len: 1000,
            x0: [0.0, 0.12, 0.0, 0.0],
            k1_range: (k1_lo, k1_lo + span1),
            k2_range: (k2_lo, k2_lo + span2),
            k34: (k_nom[2], k_nom[3]),
        }
    }

    /// Continuous-time linearization about upright.
    fn qube_continuous() -> (Mat4, Vec4) {
        // Physical constants (SI units).
        let m_arm = 0.095;
        let l_arm = 0.085;
        let m_pend = 0.024;
        let l_pend = 0.129;
        let g = 9.81;
        let j_arm = m_arm * l_arm * l_arm / 3.0;
        let j_pend = m_pend * l_pend * l_pend / 3.0;
        let lp = l_pend / 2.0;
        let damp_arm = 0.0015;
        let damp_pend = 0.0005;
        let r_motor = 8.4;
        let k_torque = 0.042;
        let k_emf = 0.042;

        // Mass matrix of the linearized two-body system.
        let m11 = j_arm + m_pend * l_arm * l_arm;
        let m12 = m_pend * lp * l_arm;
        let m22 = j_pend;
        let det = m11 * m22 - m12 * m12;
        let (i11, i12, i21, i22) = (m22 / det, -m12 / det, -m12 / det, m11 / det);

        // Generalized forces, linearized: torque and damping on the arm,
        // gravity and damping on the pendulum.
        let grav = m_pend * g * lp;
        let theta_dot_coeff = -(damp_arm + k_torque * k_emf / r_motor);
        let u_coeff = k_torque / r_motor;

        let mut a = Mat4::zeros();
        a[(0, 2)] = 1.0;
        a[(1, 3)] = 1.0;
        a[(2, 1)] = i12 * grav;
        a[(2, 2)] = i11 * theta_dot_coeff;
        a[(2, 3)] = i12 * (-damp_pend);
        a[(3, 1)] = i22 * grav;
        a[(3, 2)] = i21 * theta_dot_coeff;
        a[(3, 3)] = i22 * (-damp_pend);

        let b = Vec4::new(0.0, 0.0, i11 * u_coeff, i21 * u_coeff);
        (a, b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_len < 1 {
            return Err(Error::Config("episode length must be >= 1".into()));
        }
        if self.k1_range.0 == self.k1_range.1 || self.k2_range.0 == self.k2_range.1 {
            return Err(Error::Config("gain ranges must have nonzero width".into()));
        }
        Ok(())
    }

    /// Affine gain map on the unit square.
    pub fn gain_for(&self, a: &[f64]) -> [f64; 4] {
        let k1 = self.k1_range.0 + a[0] * (self.k1_range.1 - self.k1_range.0);
        let k2 = self.k2_range.0 + a[1] * (self.k2_range.1 - self.k2_range.0);
        [k1, k2, self.k34.0, self.k34.1]
    }
}

fn mat_to_rows(m: &Mat4) -> [[f64; 4]; 4] {
    let mut out = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            out[r][c] = m[(r, c)];
        }
    }
    out
}

/// Closed-loop simulation of one episode at parameter `a` in the unit
/// square. Angles clip to `|theta| <= pi`, `|alpha| <= pi`; a non-finite
/// state truncates the rollout and fills the remainder with saturation
/// values.
pub fn furuta_rollout(params: &FurutaParams, a: &[f64]) -> Result<Trajectory> {
    if a.len() != 2 || a.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
        return Err(Error::Config(format!(
            "Furuta parameter must lie in the unit square, got {a:?}"
        )));
    }
    params.validate()?;
    let gains = params.gain_for(a);
    let a_d = Mat4::from_fn(|r, c| params.a_d[r][c]);
    let b_d = Vec4::from_column_slice(&params.b_d);
    let mut x = Vec4::from_column_slice(&params.x0);

    let steps = params.episode_len;
    let mut traj = Trajectory {
        theta: Vec::with_capacity(steps),
        alpha: Vec::with_capacity(steps),
        theta_dot: Vec::with_capacity(steps),
        alpha_dot: Vec::with_capacity(steps),
        control: Vec::with_capacity(steps),
        saturated: false,
    };

    for _ in 0..steps {
        let u = gains[0] * x[0] + gains[1] * x[1] + gains[2] * x[2] + gains[3] * x[3];
        x = a_d * x + b_d * u;
        if !x.iter().all(|v| v.is_finite()) {
            traj.saturated = true;
            break;
        }
        let pi = std::f64::consts::PI;
        if x[0].abs() > pi {
            x[0] = x[0].clamp(-pi, pi);
            traj.saturated = true;
        }
        if x[1].abs() > pi {
            x[1] = x[1].clamp(-pi, pi);
            traj.saturated = true;
        }
        traj.theta.push(x[0]);
        traj.alpha.push(x[1]);
        traj.theta_dot.push(x[2]);
        traj.alpha_dot.push(x[3]);
        traj.control.push(u);
    }
    // Non-finite escape: hold saturation values for the remaining steps.
    let pi = std::f64::consts::PI;
    while traj.theta.len() < steps {
        traj.theta.push(pi);
        traj.alpha.push(pi);
        traj.theta_dot.push(0.0);
        traj.alpha_dot.push(0.0);
        traj.control.push(0.0);
    }
    Ok(traj)
}

/// Reward and constraint functionals of one trajectory.
///
/// The reward averages a clamped quadratic score of the angle deviation from
/// upright; the constraints are the margins of the arm and pendulum angles
/// to their limits (`pi/2` and `pi/4`), so the safety thresholds are zero.
pub fn furuta_reward_constraints(traj: &Trajectory) -> (f64, f64, f64) {
    let steps = traj.len().max(1) as f64;
    let pi = std::f64::consts::PI;
    let mut acc = 0.0;
    let mut max_theta = 0.0f64;
    let mut max_alpha = 0.0f64;
    for (&theta, &alpha) in traj.theta.iter().zip(&traj.alpha) {
        let score = (1.0 - (0.8 * alpha.abs() + 0.2 * theta.abs()) / pi).max(0.0);
        acc += score * score;
        max_theta = max_theta.max(theta.abs());
        max_alpha = max_alpha.max(alpha.abs());
    }
    (acc / steps, pi / 2.0 - max_theta, pi / 4.0 - max_alpha)
}

/// The three-output Furuta plant: reward plus two angle margins, with
/// observation noise added per output.
pub struct FurutaPlant {
    pub params: FurutaParams,
    pub noise: NoiseDistribution,
}

/// Plant constructor mirroring the synthetic ones.
pub fn furuta_plant(params: FurutaParams, noise: NoiseDistribution) -> FurutaPlant {
    FurutaPlant { params, noise }
}

impl Plant for FurutaPlant {
    fn outputs(&self) -> usize {
        3
    }

    fn query(&self, point: &[f64], stream: Stream) -> Result<Vec<f64>> {
        let traj = furuta_rollout(&self.params, point)?;
        let (h0, h1, h2) = furuta_reward_constraints(&traj);
        let mut rng = stream.tagged(StreamTag::PlantQuery).rng();
        Ok(vec![
            h0 + self.noise.sample(&mut rng),
            h1 + self.noise.sample(&mut rng),
            h2 + self.noise.sample(&mut rng),
        ])
    }

    fn truth(&self, point: &[f64]) -> Option<Vec<f64>> {
        let traj = furuta_rollout(&self.params, point).ok()?;
        let (h0, h1, h2) = furuta_reward_constraints(&traj);
        Some(vec![h0, h1, h2])
    }
}

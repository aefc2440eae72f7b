//! Decoupled quadrotor model: first-order yaw, a forward speed servo along
//! the heading, drag, gravity and an altitude PID, all integrated with
//! substepped semi-implicit Euler.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup bound on the integral state, m·s.
    pub integral_limit: f64,
}

impl Default for PidGains {
    // Critically damped altitude loop at ωn = 3 rad/s for the default mass.
    fn default() -> Self {
        PidGains {
            kp: 5.4,
            ki: 0.5,
            kd: 3.6,
            integral_limit: 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DynParams {
    pub k_psi: f64,
    pub drag: f64,
    pub mass: f64,
    pub gravity: f64,
    pub k_v: f64,
    pub pid: PidGains,
    pub z_ref: f64,
    pub substeps: usize,
    pub u_max: f64,
    pub v_base: f64,
    pub v_min: f64,
    /// Adds `c_d‖v‖(v·d)` to the thrust so the speed loop settles on the
    /// scheduled speed instead of below it.
    pub drag_compensation: bool,
}

impl Default for DynParams {
    fn default() -> Self {
        DynParams {
            k_psi: 5.0,
            drag: 0.05,
            mass: 0.6,
            gravity: 9.81,
            k_v: 2.0,
            pid: PidGains::default(),
            z_ref: 1.5,
            substeps: 10,
            u_max: 1.0,
            v_base: 10.0,
            v_min: 2.0,
            drag_compensation: true,
        }
    }
}

impl DynParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_psi", self.k_psi),
            ("mass", self.mass),
            ("gravity", self.gravity),
            ("k_v", self.k_v),
            ("u_max", self.u_max),
            ("pid.kp", self.pid.kp),
            ("pid.kd", self.pid.kd),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("drag", self.drag),
            ("pid.ki", self.pid.ki),
            ("pid.integral_limit", self.pid.integral_limit),
            ("v_min", self.v_min),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.v_min <= self.v_base) || !self.v_base.is_finite() {
            return Err(Error::Config(format!(
                "need v_min <= v_base, got {} > {}",
                self.v_min, self.v_base
            )));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be >= 1".into()));
        }
        if !self.z_ref.is_finite() {
            return Err(Error::Config("z_ref must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

impl PidState {
    /// Force correction for error `e` over a substep of length `h`.
    pub fn update(&mut self, gains: &PidGains, e: f64, h: f64) -> f64 {
        self.integral = (self.integral + e * h).clamp(-gains.integral_limit, gains.integral_limit);
        let derivative = self.prev_error.map_or(0.0, |p| (e - p) / h);
        self.prev_error = Some(e);
        gains.kp * e + gains.ki * self.integral + gains.kd * derivative
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DroneState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
    pub pid: PidState,
}

impl DroneState {
    /// At rest at `p` facing `yaw`.
    pub fn hover(p: Vector3<f64>, yaw: f64) -> Self {
        DroneState {
            p,
            v: Vector3::zeros(),
            yaw: wrap_angle(yaw),
            yaw_rate: 0.0,
            pid: PidState::default(),
        }
    }

    pub fn heading(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|v| v.is_finite())
            && self.yaw.is_finite()
            && self.yaw_rate.is_finite()
            && self.pid.integral.is_finite()
            && self.pid.prev_error.map_or(true, f64::is_finite)
    }

    pub fn kinetic_energy(&self, mass: f64) -> f64 {
        0.5 * mass * self.v.norm_squared()
    }
}

/// Wraps to `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    x - 2.0 * PI * ((x - PI) / (2.0 * PI)).ceil()
}

/// Forward speed scheduled for yaw-rate command `u` (clamped to `±u_max`).
pub fn target_speed(u: f64, params: &DynParams) -> f64 {
    let r = (u.abs() / params.u_max).min(1.0);
    params.v_min + (params.v_base - params.v_min) * (1.0 - r).sqrt()
}

/// Force terms acting during one substep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Forces {
    pub thrust: Vector3<f64>,
    pub drag: Vector3<f64>,
    pub gravity: Vector3<f64>,
    pub altitude: Vector3<f64>,
}

impl Forces {
    pub fn total(&self) -> Vector3<f64> {
        self.thrust + self.drag + self.gravity + self.altitude
    }
}

/// One semi-implicit Euler substep of length `h`. `thrust` switches the
/// forward servo off, which isolates drag for energy checks.
pub fn substep(state: &mut DroneState, u: f64, h: f64, params: &DynParams, thrust: bool) -> Forces {
    let u = u.clamp(-params.u_max, params.u_max);
    let yaw_acc = params.k_psi * (u - state.yaw_rate);
    let d = state.heading();
    let speed = state.v.norm();
    let along = state.v.dot(&d);
    let thrust_mag = if thrust {
        let servo = params.mass * params.k_v * (target_speed(u, params) - along);
        let ff = if params.drag_compensation {
            params.drag * speed * along
        } else {
            0.0
        };
        servo + ff
    } else {
        0.0
    };
    let correction = state.pid.update(&params.pid, params.z_ref - state.p.z, h);
    let forces = Forces {
        thrust: thrust_mag * d,
        drag: -params.drag * speed * state.v,
        gravity: Vector3::new(0.0, 0.0, -params.mass * params.gravity),
        altitude: Vector3::new(0.0, 0.0, params.mass * params.gravity + correction),
    };
    let a = forces.total() / params.mass;
    state.v += h * a;
    state.p += h * state.v;
    state.yaw_rate += h * yaw_acc;
    state.yaw = wrap_angle(state.yaw + h * state.yaw_rate);
    forces
}

/// Advances `state` by `dt` under command `u` using `params.substeps` substeps.
pub fn step(state: &DroneState, u: f64, dt: f64, params: &DynParams) -> Result<DroneState> {
    step_observed(state, u, dt, params, |_| false).map(|(s, _)| s)
}

/// As [`step`], calling `stop` after every substep. Integration ends early
/// when it returns true; the second value reports whether that happened.
pub fn step_observed(
    state: &DroneState,
    u: f64,
    dt: f64,
    params: &DynParams,
    mut stop: impl FnMut(&DroneState) -> bool,
) -> Result<(DroneState, bool)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::input(format!("dt must be positive, got {dt}")));
    }
    if !state.is_finite() || !u.is_finite() {
        return Err(Error::NonFiniteState);
    }
    let mut s = *state;
    let h = dt / params.substeps as f64;
    for _ in 0..params.substeps {
        substep(&mut s, u, h, params, true);
        if !s.is_finite() {
            return Err(Error::NonFiniteState);
        }
        if stop(&s) {
            return Ok((s, true));
        }
    }
    Ok((s, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at_ref(p: &DynParams) -> DroneState {
        DroneState::hover(Vector3::new(0.0, 0.0, p.z_ref), 0.0)
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(0.0), 0.0);
        assert!(wrap_angle(2.0 * PI).abs() < 1e-15);
        assert!((wrap_angle(3.5 * PI) + 0.5 * PI).abs() < 1e-12);
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(PI + 1e-3) - (-PI + 1e-3)).abs() < 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let p = DynParams::default();
        assert_eq!(target_speed(0.0, &p), 10.0);
        assert_eq!(target_speed(p.u_max, &p), p.v_min);
        assert_eq!(target_speed(-p.u_max, &p), p.v_min);
        assert_eq!(target_speed(5.0, &p), p.v_min);
        assert!((target_speed(0.75, &p) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn defaults_validate() {
        DynParams::default().validate().unwrap();
        let bad = DynParams { v_min: 11.0, ..DynParams::default() };
        assert!(bad.validate().is_err());
        let bad = DynParams { substeps: 0, ..DynParams::default() };
        assert!(bad.validate().is_err());
        let bad = DynParams { k_psi: 0.0, ..DynParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_bad_input() {
        let p = DynParams::default();
        let mut s = at_ref(&p);
        assert!(step(&s, 0.0, 0.0, &p).is_err());
        s.v.x = f64::NAN;
        assert!(matches!(step(&s, 0.0, 0.1, &p), Err(Error::NonFiniteState)));
        assert!(matches!(step(&at_ref(&p), f64::INFINITY, 0.1, &p), Err(Error::NonFiniteState)));
    }

    #[test]
    fn vertical_equilibrium_holds() {
        let p = DynParams::default();
        let mut s = at_ref(&p);
        for _ in 0..100 {
            let next = step(&s, 0.0, 0.1, &p).unwrap();
            assert!((next.p.z - s.p.z).abs() < 1e-9);
            assert!(next.v.z.abs() < 1e-9);
            assert_eq!(next.yaw_rate, 0.0);
            assert_eq!(next.yaw, 0.0);
            s = next;
        }
    }

    #[test]
    fn yaw_rate_matches_first_order_response() {
        let p = DynParams { substeps: 200, ..DynParams::default() };
        let mut s = at_ref(&p);
        let tau = 1.0 / p.k_psi;
        let mut worst: f64 = 0.0;
        for i in 1..=20 {
            s = step(&s, 1.0, 0.1, &p).unwrap();
            let t = 0.1 * i as f64;
            worst = worst.max((s.yaw_rate - (1.0 - (-t / tau).exp())).abs());
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn speed_settles_on_schedule() {
        let p = DynParams::default();
        let mut s = at_ref(&p);
        let steps = (5.0 / p.k_v / 0.1f64).ceil() as usize;
        for _ in 0..steps {
            s = step(&s, 0.0, 0.1, &p).unwrap();
        }
        let along = s.v.dot(&s.heading());
        assert!((along - p.v_base).abs() / p.v_base < 0.02, "{along}");
    }

    #[test]
    fn uncompensated_speed_falls_short() {
        let p = DynParams { drag_compensation: false, ..DynParams::default() };
        let mut s = at_ref(&p);
        for _ in 0..200 {
            s = step(&s, 0.0, 0.1, &p).unwrap();
        }
        assert!(s.v.x < 9.0);
    }

    #[test]
    fn altitude_disturbance_recovers() {
        let p = DynParams::default();
        for dz in [-0.5, -0.2, 0.3, 0.5] {
            let mut s = DroneState::hover(Vector3::new(0.0, 0.0, p.z_ref + dz), 0.0);
            for _ in 0..30 {
                s = step(&s, 0.0, 0.1, &p).unwrap();
            }
            assert!((s.p.z - p.z_ref).abs() <= 0.1, "dz {dz}: {}", s.p.z);
        }
    }

    #[test]
    fn substep_halving_halves_yaw_error() {
        let err = |n: usize| {
            let p = DynParams { substeps: n, ..DynParams::default() };
            let s = step(&at_ref(&p), 1.0, 0.2, &p).unwrap();
            (s.yaw_rate - (1.0 - (-0.2 * p.k_psi).exp())).abs()
        };
        let ratio = err(10) / err(20);
        assert!((1.8..2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn first_pid_sample_has_no_derivative_kick() {
        let mut pid = PidState::default();
        let g = PidGains::default();
        let out = pid.update(&g, 0.5, 0.01);
        assert!((out - (g.kp * 0.5 + g.ki * 0.005)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn drag_alone_dissipates(vx in -15.0..15.0f64, vy in -15.0..15.0f64, h in 0.001..0.05f64) {
            let p = DynParams::default();
            let mut s = at_ref(&p);
            s.v = Vector3::new(vx, vy, 0.0);
            for _ in 0..50 {
                let before = s.kinetic_energy(p.mass);
                substep(&mut s, 0.0, h, &p, false);
                prop_assert!(s.kinetic_energy(p.mass) <= before + 1e-12);
            }
        }

        #[test]
        fn yaw_rate_approaches_command(u in -1.0..1.0f64, r0 in -2.0..2.0f64) {
            let p = DynParams::default();
            let mut s = at_ref(&p);
            s.yaw_rate = r0;
            let mut gap = (s.yaw_rate - u).abs();
            for _ in 0..20 {
                s = step(&s, u, 0.1, &p).unwrap();
                let g = (s.yaw_rate - u).abs();
                prop_assert!(g <= gap + 1e-15);
                gap = g;
            }
        }

        #[test]
        fn yaw_stays_wrapped(u in -1.0..1.0f64, yaw in -10.0..10.0f64) {
            let p = DynParams::default();
            let mut s = DroneState::hover(Vector3::new(0.0, 0.0, 1.5), yaw);
            for _ in 0..30 {
                s = step(&s, u, 0.1, &p).unwrap();
                prop_assert!(s.yaw > -PI && s.yaw <= PI);
            }
        }

        #[test]
        fn wrap_is_equivalent_mod_two_pi(x in -100.0..100.0f64) {
            let w = wrap_angle(x);
            prop_assert!(w > -PI && w <= PI);
            let k = (x - w) / (2.0 * PI);
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}

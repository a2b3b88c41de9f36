//! Deterministic 1D vehicle-following rollouts: the leader replays a logged
//! trajectory, the follower accelerates per the plugged-in model at a fixed
//! quantile level (or with resampled levels behind a seed), and features are
//! recomputed every step.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::data::{derive_thw, derive_ttc, read_json, write_json, StateFeatures, DEFAULT_TIME_CAP};
use crate::error::{Error, Result};
use crate::models::QuantileModel;
use crate::quantile::QuantileLevel;

pub const SCENARIO_VERSION: u32 = 1;

/// Leader log-replay trajectory plus follower initial conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    /// Integration step, s (1 / frame rate; 0.04 at 25 Hz).
    pub dt: f64,
    /// Vehicle length used for the net gap, m.
    pub vehicle_length: f64,
    pub leader_positions: Vec<f64>,
    pub leader_velocities: Vec<f64>,
    pub follower_position: f64,
    pub follower_velocity: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != SCENARIO_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                supported: SCENARIO_VERSION,
            });
        }
        if !(self.dt > 0.0) {
            return Err(Error::invalid("Scenario", "dt must be positive"));
        }
        if self.leader_positions.len() != self.leader_velocities.len() {
            return Err(Error::ShapeMismatch {
                context: "Scenario leader series",
                expected: self.leader_positions.len(),
                actual: self.leader_velocities.len(),
            });
        }
        if self.leader_positions.is_empty() {
            return Err(Error::EmptyInput {
                context: "Scenario leader series",
            });
        }
        let initial_gap = self.leader_positions[0] - self.follower_position - self.vehicle_length;
        if !(initial_gap > 0.0) {
            return Err(Error::invalid(
                "Scenario",
                format!("initial follower gap must be positive, got {initial_gap}"),
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s: Scenario = read_json(path)?;
        s.validate()?;
        Ok(s)
    }

    /// A leader that cruises, brakes to a slower speed, holds it, then
    /// accelerates back: the shape behind the rollout figures. Deterministic.
    pub fn synthetic_leader(
        steps: usize,
        dt: f64,
        cruise_speed: f64,
        slow_speed: f64,
        initial_gap: f64,
        vehicle_length: f64,
    ) -> Scenario {
        let mut positions = Vec::with_capacity(steps);
        let mut velocities = Vec::with_capacity(steps);
        let mut x = initial_gap + vehicle_length;
        let phase = steps / 4;
        let mut v = cruise_speed;
        for k in 0..steps {
            positions.push(x);
            velocities.push(v);
            let target = if k < phase {
                cruise_speed
            } else if k < 2 * phase {
                slow_speed
            } else if k < 3 * phase {
                slow_speed
            } else {
                cruise_speed
            };
            let dv = (target - v).clamp(-2.0 * dt, 1.5 * dt);
            v += dv;
            x += v * dt;
        }
        Scenario {
            format_version: SCENARIO_VERSION,
            dt,
            vehicle_length,
            leader_positions: positions,
            leader_velocities: velocities,
            follower_position: 0.0,
            follower_velocity: cruise_speed,
        }
    }
}

/// How the rollout picks the quantile level each step.
#[derive(Debug, Clone, Copy)]
pub enum ActionRule {
    /// The same level every step (the level-curve rollouts).
    FixedLevel(QuantileLevel),
    /// A fresh uniform level each step; for flows this samples the learned
    /// conditional distribution.
    SampledLevel { seed: u64 },
}

/// One per-step record of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub time: f64,
    pub accel: f64,
    pub velocity: f64,
    pub dhw: f64,
    pub thw: f64,
    pub ttc: f64,
}

/// Terminal state of a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    Completed,
    Collision,
}

/// Rollout output: per-step records, truncated at the first nonpositive gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub steps: Vec<TraceStep>,
    pub terminal: Terminal,
}

impl RolloutTrace {
    pub fn mean_dhw(&self) -> f64 {
        if self.steps.is_empty() {
            return f64::NAN;
        }
        self.steps.iter().map(|s| s.dhw).sum::<f64>() / self.steps.len() as f64
    }
}

/// Semi-implicit Euler step with the no-reversing clamp:
/// v' = max(0, v + a dt); x' = x + v' dt.
pub fn kinematic_step(position: f64, velocity: f64, accel: f64, dt: f64) -> (f64, f64) {
    let v_next = (velocity + accel * dt).max(0.0);
    (position + v_next * dt, v_next)
}

/// Features from the current simulation state. The follower must be behind
/// the leader; a nonpositive gap is the rollout's collision path, not an
/// error here.
pub fn recompute_features(
    leader_position: f64,
    leader_velocity: f64,
    follower_position: f64,
    follower_velocity: f64,
    vehicle_length: f64,
) -> StateFeatures {
    let dhw = leader_position - follower_position - vehicle_length;
    StateFeatures {
        dhw,
        thw: derive_thw(dhw, follower_velocity, DEFAULT_TIME_CAP),
        ttc: derive_ttc(dhw, follower_velocity, leader_velocity, DEFAULT_TIME_CAP),
        follower_velocity,
        leader_velocity,
        lanes: None,
    }
}

/// Runs a rollout: at each step the model's quantile prediction is the
/// follower acceleration, the follower integrates semi-implicitly, and the
/// leader advances along its log. Stops at the horizon, the end of the
/// leader log, or the first nonpositive gap (collision; the trace truncates
/// there). Fully deterministic given its inputs.
pub fn rollout(
    model: &dyn QuantileModel,
    rule: ActionRule,
    scenario: &Scenario,
    horizon: usize,
) -> Result<RolloutTrace> {
    scenario.validate()?;
    if model.feature_dim() != 5 {
        return Err(Error::ShapeMismatch {
            context: "rollout model features",
            expected: 5,
            actual: model.feature_dim(),
        });
    }
    let steps = horizon.min(scenario.leader_positions.len());
    let mut rng = match rule {
        ActionRule::FixedLevel(_) => None,
        ActionRule::SampledLevel { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
    };
    let mut x = scenario.follower_position;
    let mut v = scenario.follower_velocity;
    let mut trace = RolloutTrace {
        steps: Vec::with_capacity(steps),
        terminal: Terminal::Completed,
    };
    for k in 0..steps {
        let state = recompute_features(
            scenario.leader_positions[k],
            scenario.leader_velocities[k],
            x,
            v,
            scenario.vehicle_length,
        );
        if state.dhw <= 0.0 {
            trace.terminal = Terminal::Collision;
            break;
        }
        let level = match rule {
            ActionRule::FixedLevel(l) => l,
            ActionRule::SampledLevel { .. } => {
                QuantileLevel::new(rng.as_mut().unwrap().gen())?
            }
        };
        let accel = model.quantile(&state, level, &[])?;
        if !accel.is_finite() {
            return Err(Error::invalid(
                "rollout",
                format!("non-finite acceleration at step {k}"),
            ));
        }
        trace.steps.push(TraceStep {
            time: k as f64 * scenario.dt,
            accel,
            velocity: v,
            dhw: state.dhw,
            thw: state.thw,
            ttc: state.ttc,
        });
        let (x_next, v_next) = kinematic_step(x, v, accel, scenario.dt);
        x = x_next;
        v = v_next;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SyntheticSpec;
    use crate::models::SyntheticOracle;

    struct ConstantAccel(f64);

    impl QuantileModel for ConstantAccel {
        fn feature_dim(&self) -> usize {
            5
        }
        fn action_dims(&self) -> usize {
            1
        }
        fn quantile(&self, _s: &StateFeatures, _l: QuantileLevel, _p: &[f64]) -> Result<f64> {
            Ok(self.0)
        }
    }

    fn lv(a: f64) -> QuantileLevel {
        QuantileLevel::new(a).unwrap()
    }

    fn constant_leader(steps: usize, speed: f64, gap: f64) -> Scenario {
        let dt = 0.04;
        Scenario {
            format_version: SCENARIO_VERSION,
            dt,
            vehicle_length: 4.5,
            leader_positions: (0..steps).map(|k| gap + 4.5 + speed * dt * k as f64).collect(),
            leader_velocities: vec![speed; steps],
            follower_position: 0.0,
            follower_velocity: speed,
        }
    }

    #[test]
    fn kinematic_examples() {
        let (dx, v) = kinematic_step(0.0, 20.0, 1.0, 0.04);
        assert!((v - 20.04).abs() < 1e-12);
        assert!((dx - 0.8016).abs() < 1e-12);

        let (dx, v) = kinematic_step(0.0, 0.02, -2.0, 0.04);
        assert_eq!(v, 0.0);
        assert_eq!(dx, 0.0);

        let (dx, v) = kinematic_step(5.0, 10.0, 0.0, 0.04);
        assert_eq!(v, 10.0);
        assert!((dx - 5.4).abs() < 1e-12);
    }

    #[test]
    fn feature_examples() {
        let f = recompute_features(104.5, 20.0, 0.0, 20.0, 4.5);
        assert_eq!(f.dhw, 100.0);
        assert_eq!(f.thw, 5.0);
        assert_eq!(f.ttc, 50.0);

        let f = recompute_features(104.5, 20.0, 0.0, 25.0, 4.5);
        assert_eq!(f.ttc, 20.0);

        let f = recompute_features(104.5, 20.0, 0.0, 0.0, 4.5);
        assert_eq!(f.thw, 50.0);
    }

    #[test]
    fn matched_speeds_hold_the_gap() {
        let scenario = constant_leader(500, 25.0, 60.0);
        let trace = rollout(&ConstantAccel(0.0), ActionRule::FixedLevel(lv(0.5)), &scenario, 500)
            .unwrap();
        assert_eq!(trace.terminal, Terminal::Completed);
        assert_eq!(trace.steps.len(), 500);
        for s in &trace.steps {
            assert!((s.dhw - 60.0).abs() < 1e-9);
            assert_eq!(s.velocity, 25.0);
        }
    }

    #[test]
    fn collision_step_count_matches_closed_form() {
        // Follower starts 0.5 m behind at the leader's speed and accelerates
        // at +2; with semi-implicit Euler the gap after k steps is
        // 0.5 - dt^2 * a/2 * k (k+1) = 0.5 - 0.0016 k(k+1), first
        // nonpositive at k = 18. The trace holds records for k = 0..17.
        let scenario = constant_leader(400, 10.0, 0.5);
        let trace = rollout(&ConstantAccel(2.0), ActionRule::FixedLevel(lv(0.5)), &scenario, 400)
            .unwrap();
        assert_eq!(trace.terminal, Terminal::Collision);
        assert_eq!(trace.steps.len(), 18);
        assert!(trace.steps.iter().all(|s| s.dhw > 0.0));
    }

    #[test]
    fn leader_log_replay_is_exact() {
        // Reconstruct follower positions from the recorded velocities and
        // accelerations; dhw + position + length must reproduce the scenario
        // series at every step.
        let scenario = constant_leader(200, 22.0, 40.0);
        let model = ConstantAccel(0.3);
        let trace =
            rollout(&model, ActionRule::FixedLevel(lv(0.5)), &scenario, 200).unwrap();
        let mut x = scenario.follower_position;
        for (k, s) in trace.steps.iter().enumerate() {
            let leader_x = s.dhw + x + scenario.vehicle_length;
            assert!(
                (leader_x - scenario.leader_positions[k]).abs() < 1e-9,
                "step {k}"
            );
            let (xn, _) = kinematic_step(x, s.velocity, s.accel, scenario.dt);
            x = xn;
        }
    }

    #[test]
    fn no_reversing_and_determinism() {
        let scenario = constant_leader(600, 18.0, 80.0);
        let model = ConstantAccel(-5.0);
        let a = rollout(&model, ActionRule::FixedLevel(lv(0.5)), &scenario, 600).unwrap();
        let b = rollout(&model, ActionRule::FixedLevel(lv(0.5)), &scenario, 600).unwrap();
        assert_eq!(a, b);
        assert!(a.steps.iter().all(|s| s.velocity >= 0.0));
        assert_eq!(*a.steps.last().map(|s| &s.velocity).unwrap(), 0.0);
    }

    #[test]
    fn oracle_accel_is_monotone_in_level_at_first_step() {
        let oracle = SyntheticOracle(SyntheticSpec::default());
        let scenario = constant_leader(10, 25.0, 45.0);
        let mut prev = f64::NEG_INFINITY;
        for alpha in [0.25, 0.5, 0.75, 0.9, 0.99] {
            let trace =
                rollout(&oracle, ActionRule::FixedLevel(lv(alpha)), &scenario, 1).unwrap();
            assert!(trace.steps[0].accel >= prev);
            prev = trace.steps[0].accel;
        }
    }

    #[test]
    fn sampled_rollout_is_seed_deterministic() {
        let oracle = SyntheticOracle(SyntheticSpec::default());
        let scenario = constant_leader(100, 25.0, 45.0);
        let a = rollout(&oracle, ActionRule::SampledLevel { seed: 5 }, &scenario, 100).unwrap();
        let b = rollout(&oracle, ActionRule::SampledLevel { seed: 5 }, &scenario, 100).unwrap();
        let c = rollout(&oracle, ActionRule::SampledLevel { seed: 6 }, &scenario, 100).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn scenario_validation() {
        let mut s = constant_leader(10, 20.0, 30.0);
        s.follower_position = 100.0;
        assert!(s.validate().is_err());
        let mut s = constant_leader(10, 20.0, 30.0);
        s.dt = 0.0;
        assert!(s.validate().is_err());
        let mut s = constant_leader(10, 20.0, 30.0);
        s.leader_velocities.pop();
        assert!(s.validate().is_err());
    }

    #[test]
    fn scenario_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let s = Scenario::synthetic_leader(100, 0.04, 28.0, 22.0, 40.0, 4.5);
        s.validate().unwrap();
        let path = dir.path().join("scenario.json");
        s.save(&path).unwrap();
        let back = Scenario::load(&path).unwrap();
        assert_eq!(s.leader_positions, back.leader_positions);
        assert_eq!(s.dt, back.dt);
    }
}

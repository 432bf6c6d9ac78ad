//! Fixed-timestep highway simulator.
//!
//! Five lanes (0 and 4 are shoulders), traffic only in lanes 1..=3. The agent
//! drives at a constant 60 mph and sits at the origin of a frame moving with
//! it, so every traffic car drifts backwards at `(60 - v) mph`. One unit of
//! distance is one metre; one timestep is 1/5 s.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::state::{clip_distance, Action, StateVector, LANE_COUNT, SENSOR_RANGE};

pub const AGENT_SPEED_MPH: f64 = 60.0;
pub const MPH_TO_MPS: f64 = 0.44704;
pub const TIMESTEP_SECONDS: f64 = 0.2;
pub const CAR_LENGTH: f64 = 4.0;
/// Timesteps a lane change takes; forward takes one.
pub const LANE_CHANGE_STEPS: u8 = 5;
/// Free road ahead of the agent in its start lane at timestep 0.
pub const START_CLEARANCE: f64 = 40.0;
pub const PATTERN_VERSION: u32 = 1;

/// Distance a car at `speed_mph` falls back relative to the agent per step.
pub fn closing_per_step(speed_mph: f64) -> f64 {
    (AGENT_SPEED_MPH - speed_mph) * MPH_TO_MPS * TIMESTEP_SECONDS
}

/// Timesteps an action occupies.
pub fn action_duration(a: Action) -> u32 {
    match a {
        Action::Forward => 1,
        Action::Left | Action::Right => LANE_CHANGE_STEPS as u32,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    RandomTraining,
    FixedEvaluation,
}

/// Traffic generator parameters. The frozen evaluation pattern ships with the
/// crate, see [`TrafficPattern::evaluation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficPattern {
    pub version: u32,
    pub kind: PatternKind,
    pub seed: u64,
    /// Poisson arrival rate (cars per timestep) for lanes 1, 2, 3.
    pub lane_rates: [f64; 3],
    pub speed_min_mph: f64,
    pub speed_max_mph: f64,
    /// Where cars appear ahead of the agent.
    pub spawn_distance: f64,
    /// Cars further behind than this are removed.
    pub despawn_distance: f64,
    /// Minimum bumper-to-bumper spacing kept between consecutive cars in a lane.
    pub min_gap: f64,
    /// Traffic-only steps simulated before timestep 0 so the road starts full.
    pub warmup_steps: u32,
    pub start_lane: u8,
}

const EVALUATION_PATTERN: &str = include_str!("../assets/eval_pattern_v1.json");

impl TrafficPattern {
    /// The frozen evaluation road segment.
    pub fn evaluation() -> TrafficPattern {
        Self::from_json(EVALUATION_PATTERN).expect("bundled evaluation pattern parses")
    }

    /// A random training pattern with the evaluation densities and a fresh seed.
    pub fn training(seed: u64) -> TrafficPattern {
        let mut p = Self::evaluation();
        p.kind = PatternKind::RandomTraining;
        p.seed = seed;
        p
    }

    pub fn from_json(s: &str) -> Result<TrafficPattern> {
        let p: TrafficPattern = serde_json::from_str(s)?;
        if p.version != PATTERN_VERSION {
            return Err(Error::SchemaVersion {
                what: "traffic pattern",
                found: p.version,
                expected: PATTERN_VERSION,
            });
        }
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lane_rates.iter().all(|r| r.is_finite() && *r >= 0.0)
            && self.speed_min_mph > 0.0
            && self.speed_min_mph <= self.speed_max_mph
            && self.speed_max_mph < AGENT_SPEED_MPH
            && self.spawn_distance > SENSOR_RANGE
            && self.despawn_distance < -CAR_LENGTH
            && self.min_gap >= CAR_LENGTH
            && self.start_lane < LANE_COUNT;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid traffic pattern: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Car {
    pub id: u64,
    pub lane: u8,
    /// Longitudinal offset from the agent; positive is ahead.
    pub x: f64,
    pub speed_mph: f64,
}

impl Car {
    pub fn closing_per_step(&self) -> f64 {
        closing_per_step(self.speed_mph)
    }
}

/// Lateral state of the agent. `progress` counts completed steps of the
/// current lane change; at rest `lane_from == lane_to`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPose {
    pub lane_from: u8,
    pub lane_to: u8,
    pub progress: u8,
}

impl AgentPose {
    pub fn at(lane: u8) -> Self {
        AgentPose {
            lane_from: lane,
            lane_to: lane,
            progress: 0,
        }
    }

    pub fn in_transition(&self) -> bool {
        self.lane_from != self.lane_to
    }

    pub fn lateral_fraction(&self) -> f64 {
        if self.in_transition() {
            self.progress as f64 / LANE_CHANGE_STEPS as f64
        } else {
            1.0
        }
    }

    /// Continuous lateral position in lane units.
    pub fn lateral_position(&self) -> f64 {
        let from = self.lane_from as f64;
        let to = self.lane_to as f64;
        from + (to - from) * if self.in_transition() { self.lateral_fraction() } else { 0.0 }
    }

    /// The integer lane the agent is considered to be in.
    pub fn lane(&self) -> u8 {
        if self.in_transition() && self.lateral_fraction() >= 0.5 {
            self.lane_to
        } else if self.in_transition() {
            self.lane_from
        } else {
            self.lane_to
        }
    }

    /// Starts a lane change; no-op at the road edges or mid-transition.
    pub fn apply(&mut self, action: Action) {
        if self.in_transition() {
            return;
        }
        let target = self.lane_to as i16 + action.lane_delta() as i16;
        if action != Action::Forward && (0..LANE_COUNT as i16).contains(&target) {
            self.lane_to = target as u8;
            self.progress = 0;
        }
    }

    pub fn advance(&mut self) {
        if self.in_transition() {
            self.progress += 1;
            if self.progress >= LANE_CHANGE_STEPS {
                self.lane_from = self.lane_to;
                self.progress = 0;
            }
        }
    }
}

/// Whether the agent at `pose` overlaps a car at lateral lane `lane` and
/// longitudinal offset `x`. Both rectangles are one lane wide.
pub fn overlaps(pose: &AgentPose, lane: u8, x: f64) -> bool {
    x.abs() < CAR_LENGTH && (pose.lateral_position() - lane as f64).abs() < 1.0
}

#[derive(Debug, Clone)]
struct LaneStream {
    rng: ChaCha8Rng,
    rate: f64,
    next_arrival: f64,
}

impl LaneStream {
    fn draw_interarrival(&mut self) -> f64 {
        if self.rate <= 0.0 {
            return f64::INFINITY;
        }
        let u: f64 = self.rng.random::<f64>();
        -(1.0 - u).ln() / self.rate
    }
}

/// Which lanes the three distance readings refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorFrame {
    /// The agent's lane and its two neighbours.
    #[default]
    Relative,
    /// The three traffic lanes (1, 2, 3) wherever the agent is.
    Absolute,
}

/// Sensor configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    pub noise_sigma: f64,
    pub noise_seed: u64,
    #[serde(default)]
    pub frame: SensorFrame,
}

impl SensorConfig {
    pub fn noiseless() -> Self {
        SensorConfig {
            noise_sigma: 0.0,
            ..Self::default()
        }
    }
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            noise_sigma: 0.5,
            noise_seed: 0,
            frame: SensorFrame::Relative,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub timestep: u64,
    pub agent: AgentPose,
    pub cars: Vec<Car>,
    pattern: TrafficPattern,
    lanes: Vec<LaneStream>,
    /// Traffic clock; runs ahead of `timestep` by the warmup.
    clock: u64,
    next_car_id: u64,
    noise_rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    frame: SensorFrame,
}

impl WorldState {
    pub fn new(pattern: &TrafficPattern, sensor: SensorConfig) -> WorldState {
        let lanes = (0..3)
            .map(|i| {
                let mut s = LaneStream {
                    rng: ChaCha8Rng::seed_from_u64(derive_seed(pattern.seed, &[0x7A_FF1C, i])),
                    rate: pattern.lane_rates[i as usize],
                    next_arrival: 0.0,
                };
                s.next_arrival = s.draw_interarrival();
                s
            })
            .collect();
        let noise = (sensor.noise_sigma > 0.0)
            .then(|| Normal::new(0.0, sensor.noise_sigma).expect("finite sigma"));
        let mut w = WorldState {
            timestep: 0,
            agent: AgentPose::at(pattern.start_lane),
            cars: Vec::new(),
            pattern: pattern.clone(),
            lanes,
            clock: 0,
            next_car_id: 0,
            noise_rng: ChaCha8Rng::seed_from_u64(derive_seed(sensor.noise_seed, &[0x5E_4507])),
            noise,
            frame: sensor.frame,
        };
        for _ in 0..pattern.warmup_steps {
            w.advance_traffic();
        }
        // Clear the start lane far enough ahead that the agent can always
        // get out of the way of what comes next.
        let lane = pattern.start_lane;
        w.cars
            .retain(|c| !(c.lane == lane && c.x > -CAR_LENGTH && c.x < START_CLEARANCE));
        w
    }

    pub fn pattern(&self) -> &TrafficPattern {
        &self.pattern
    }

    fn advance_traffic(&mut self) {
        for car in &mut self.cars {
            car.x -= car.closing_per_step();
        }
        let despawn = self.pattern.despawn_distance;
        self.cars.retain(|c| c.x >= despawn);
        self.clock += 1;
        let now = self.clock as f64;
        for li in 0..3 {
            let lane = li as u8 + 1;
            while self.lanes[li].next_arrival <= now {
                // front-most car in the lane is the one a new car spawns ahead of
                let front = self
                    .cars
                    .iter()
                    .filter(|c| c.lane == lane)
                    .max_by(|a, b| a.x.total_cmp(&b.x))
                    .copied();
                if front.is_some_and(|f| f.x > self.pattern.spawn_distance - self.pattern.min_gap) {
                    break; // blocked, retry next step
                }
                let stream = &mut self.lanes[li];
                let u: f64 = stream.rng.random();
                let mut speed =
                    self.pattern.speed_min_mph + u * (self.pattern.speed_max_mph - self.pattern.speed_min_mph);
                if let Some(f) = front {
                    speed = ordering_clamp(&self.pattern, &f, speed);
                }
                self.cars.push(Car {
                    id: self.next_car_id,
                    lane,
                    x: self.pattern.spawn_distance,
                    speed_mph: speed,
                });
                self.next_car_id += 1;
                let dt = stream.draw_interarrival();
                stream.next_arrival += dt;
            }
        }
    }

    /// Advances one timestep. Lane changes requested mid-transition, or off
    /// the road edge, are ignored.
    pub fn step(&mut self, action: Option<Action>) {
        if let Some(a) = action {
            self.agent.apply(a);
        }
        self.agent.advance();
        self.advance_traffic();
        self.timestep += 1;
    }

    pub fn collision(&self) -> bool {
        self.cars.iter().any(|c| overlaps(&self.agent, c.lane, c.x))
    }

    /// Signed distance to the nearest car (smallest |x|) in `lane`.
    pub fn nearest_in_lane(&self, lane: i16) -> Option<f64> {
        if !(0..LANE_COUNT as i16).contains(&lane) {
            return None;
        }
        self.cars
            .iter()
            .filter(|c| c.lane as i16 == lane)
            .map(|c| c.x)
            .min_by(|a, b| a.abs().total_cmp(&b.abs()))
    }

    fn reading(&mut self, lane: i16, noisy: bool) -> f64 {
        match self.nearest_in_lane(lane) {
            None => SENSOR_RANGE,
            Some(x) => {
                let n = match (&self.noise, noisy) {
                    (Some(dist), true) => dist.sample(&mut self.noise_rng),
                    _ => 0.0,
                };
                clip_distance(x + n)
            }
        }
    }

    /// Noisy sensing; advances the sensor-noise stream only.
    pub fn sense(&mut self) -> StateVector {
        self.sense_with(true)
    }

    /// Ground-truth sensing without noise.
    pub fn sense_noiseless(&self) -> StateVector {
        let lane = self.agent.lane();
        let read = |l: i16| self.nearest_in_lane(l).map_or(SENSOR_RANGE, clip_distance);
        let [l, c, r] = self.sensed_lanes();
        StateVector::new(lane, read(l), read(c), read(r))
    }

    /// Lanes behind the three distance readings (may be off the road).
    pub fn sensed_lanes(&self) -> [i16; 3] {
        let lane = self.agent.lane() as i16;
        match self.frame {
            SensorFrame::Relative => [lane - 1, lane, lane + 1],
            SensorFrame::Absolute => [1, 2, 3],
        }
    }

    fn sense_with(&mut self, noisy: bool) -> StateVector {
        let lane = self.agent.lane();
        let [l, c, r] = self.sensed_lanes();
        let l = self.reading(l, noisy);
        let c = self.reading(c, noisy);
        let r = self.reading(r, noisy);
        StateVector::new(lane, l, c, r)
    }
}

/// Raises a new car's speed if the car directly behind it would otherwise
/// close to within `min_gap` before leaving the road, so cars never overtake
/// inside a lane.
fn ordering_clamp(p: &TrafficPattern, behind: &Car, speed: f64) -> f64 {
    let rel_behind = behind.closing_per_step();
    let steps_left = (behind.x - p.despawn_distance) / rel_behind;
    let gap = p.spawn_distance - behind.x;
    let max_rel = rel_behind + (gap - p.min_gap).max(0.0) / steps_left.max(1e-9);
    let rel = closing_per_step(speed);
    if rel <= max_rel {
        speed
    } else {
        (AGENT_SPEED_MPH - max_rel / (MPH_TO_MPS * TIMESTEP_SECONDS)).min(p.speed_max_mph)
    }
}

/// Lane occupancy and collisions over an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub lane_occupancy: [f64; LANE_COUNT as usize],
    pub collision_rate: f64,
    pub collisions: u64,
    pub timesteps: u64,
}

impl EvalReport {
    /// Total-variation distance between two lane-occupancy vectors.
    pub fn occupancy_distance(&self, other: &EvalReport) -> f64 {
        0.5 * self
            .lane_occupancy
            .iter()
            .zip(&other.lane_occupancy)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }

    pub fn csv_header() -> &'static str {
        "lane0,lane1,lane2,lane3,lane4,collision_rate,collisions,timesteps"
    }

    pub fn csv_row(&self) -> String {
        let o = &self.lane_occupancy;
        format!(
            "{},{},{},{},{},{},{},{}",
            o[0], o[1], o[2], o[3], o[4], self.collision_rate, self.collisions, self.timesteps
        )
    }
}

/// Something that picks actions during an evaluation run.
pub trait Driver {
    fn act(&mut self, sensed: &StateVector, world: &WorldState) -> Action;
}

/// Always drives forward.
pub struct ForwardDriver;

impl Driver for ForwardDriver {
    fn act(&mut self, _: &StateVector, _: &WorldState) -> Action {
        Action::Forward
    }
}

/// Runs `driver` for exactly `n` timesteps on a fresh world.
pub fn evaluate(
    driver: &mut dyn Driver,
    pattern: &TrafficPattern,
    sensor: SensorConfig,
    n: u64,
) -> EvalReport {
    let mut world = WorldState::new(pattern, sensor);
    let mut lanes = [0u64; LANE_COUNT as usize];
    let mut collisions = 0u64;
    let mut busy = 0u32;
    for _ in 0..n {
        let s = world.sense();
        let action = if busy == 0 {
            let a = driver.act(&s, &world);
            busy = action_duration(a);
            Some(a)
        } else {
            None
        };
        busy -= 1;
        world.step(action);
        lanes[world.agent.lane() as usize] += 1;
        if world.collision() {
            collisions += 1;
        }
    }
    let total = n.max(1) as f64;
    EvalReport {
        lane_occupancy: lanes.map(|c| c as f64 / total),
        collision_rate: collisions as f64 / total,
        collisions,
        timesteps: n,
    }
}

/// Bisects the middle-lane arrival rate until the always-forward baseline
/// collides on `target` of `n` timesteps. Returns the calibrated pattern and
/// its baseline collision rate.
pub fn calibrate_center_rate(template: &TrafficPattern, target: f64, n: u64) -> (TrafficPattern, f64) {
    let rate_for = |r: f64| {
        let mut p = template.clone();
        p.lane_rates[1] = r;
        let rep = evaluate(&mut ForwardDriver, &p, SensorConfig::default(), n);
        (p, rep.collision_rate)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = rate_for(template.lane_rates[1]);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let (p, rate) = rate_for(mid);
        if (rate - target).abs() < (best.1 - target).abs() {
            best = (p, rate);
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_pattern() -> TrafficPattern {
        let mut p = TrafficPattern::evaluation();
        p.lane_rates = [0.0; 3];
        p
    }

    fn quiet() -> SensorConfig {
        SensorConfig::noiseless()
    }

    #[test]
    fn closing_speed_for_slowest_car() {
        // 40 mph relative = 17.8816 m/s, 0.2 s per step
        assert!((closing_per_step(20.0) - 3.57632).abs() < 1e-12);
    }

    #[test]
    fn lane_change_takes_five_steps_and_clamps_at_edges() {
        let mut pose = AgentPose::at(0);
        pose.apply(Action::Left);
        assert!(!pose.in_transition());
        let mut pose = AgentPose::at(2);
        pose.apply(Action::Left);
        for i in 1..=5 {
            pose.advance();
            if i < 5 {
                assert!(pose.in_transition());
                assert!((pose.lateral_position() - (2.0 - i as f64 / 5.0)).abs() < 1e-12);
            }
        }
        assert_eq!(pose, AgentPose::at(1));
        // sensed lane flips at the midpoint
        let mut pose = AgentPose::at(2);
        pose.apply(Action::Right);
        pose.advance();
        pose.advance();
        assert_eq!(pose.lane(), 2);
        pose.advance();
        assert_eq!(pose.lane(), 3);
    }

    #[test]
    fn empty_road_senses_sentinels_and_never_collides() {
        let mut w = WorldState::new(&empty_pattern(), quiet());
        for _ in 0..200 {
            let s = w.sense();
            assert_eq!((s.d_left, s.d_center, s.d_right), (25.0, 25.0, 25.0));
            w.step(Some(Action::Forward));
            assert!(!w.collision());
        }
        let rep = evaluate(&mut ForwardDriver, &empty_pattern(), quiet(), 100);
        assert_eq!(rep.lane_occupancy[2], 1.0);
        assert_eq!(rep.collisions, 0);
    }

    #[test]
    fn sensing_clips_and_reports_cars_behind() {
        let mut w = WorldState::new(&empty_pattern(), quiet());
        w.cars.push(Car { id: 0, lane: 2, x: 30.0, speed_mph: 30.0 });
        w.cars.push(Car { id: 1, lane: 1, x: -10.0, speed_mph: 30.0 });
        let s = w.sense();
        assert_eq!(s.d_center, 25.0);
        assert_eq!(s.d_left, -10.0);
        assert_eq!(s.d_right, 25.0);
        // shoulder: the off-road neighbour reads the sentinel
        w.agent = AgentPose::at(0);
        let s = w.sense();
        assert_eq!(s.d_left, 25.0);
        assert_eq!(s.d_right, -10.0);
    }

    #[test]
    fn collision_geometry() {
        let mut w = WorldState::new(&empty_pattern(), quiet());
        w.cars.push(Car { id: 0, lane: 2, x: 10.0, speed_mph: 30.0 });
        assert!(!w.collision());
        w.cars[0].x = 0.0;
        assert!(w.collision());
        w.cars[0].lane = 1;
        assert!(!w.collision());
        // mid-merge towards lane 1 the agent spans both lanes
        w.agent.apply(Action::Left);
        w.agent.advance();
        assert!(w.collision());
    }

    #[test]
    fn noise_does_not_change_the_trajectory() {
        let p = TrafficPattern::training(42);
        let mut a = WorldState::new(&p, SensorConfig { noise_seed: 1, ..SensorConfig::default() });
        let mut b = WorldState::new(&p, quiet());
        let actions = [Action::Forward, Action::Left, Action::Right];
        for t in 0..300 {
            a.sense();
            b.sense();
            let act = actions[(t / 7) % 3];
            a.step(Some(act));
            b.step(Some(act));
            assert_eq!(a.cars, b.cars);
            assert_eq!(a.agent, b.agent);
        }
    }
}

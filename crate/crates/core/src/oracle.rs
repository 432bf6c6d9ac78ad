//! Scripted teacher used for unattended experiments.
//!
//! The oracle plans over a short horizon with the ground-truth positions and
//! speeds of the cars on the road, preferring lanes in a fixed order
//! (center > left > left shoulder > right shoulder > right). Planning is an
//! exact search over the agent's lateral poses, since car trajectories are
//! known in advance. It answers
//! demonstration requests and, while the agent acts on its own, watches for
//! mistakes and sends corrective demonstrations after a reaction delay.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::TeacherChannel;
use crate::seed::derive_seed;
use crate::state::{Action, StateVector, LANE_COUNT, SENSOR_RANGE};
use crate::world::{
    action_duration, overlaps, AgentPose, Car, Driver, WorldState, CAR_LENGTH,
    LANE_CHANGE_STEPS,
};

/// What the oracle bases its decisions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perception {
    /// Plans with every car on the road.
    GroundTruth,
    /// Applies the lane rule to the state vector the agent sensed, so the
    /// teacher judges the situation from the same readings the learner gets.
    /// The whole road is consulted only to veto a choice that would make
    /// contact unavoidable.
    SensorView,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// A car ahead in the agent's lane closer than this makes it change lanes.
    /// The planner also charges `tailgate_cost` per step spent this close.
    pub merge_trigger: f64,
    /// A neighbouring lane is clear to enter when its nearest car is at least
    /// this far away, ahead or behind.
    pub entry_clearance: f64,
    pub tailgate_cost: f64,
    /// Lanes from most to least preferred.
    pub lane_preference: [u8; LANE_COUNT as usize],
    /// Cost of a lane change, in steps of one rank of lane preference: a
    /// better lane must be held this long before moving pays off.
    pub hysteresis_steps: u32,
    /// Planning horizon in steps.
    pub horizon: u32,
    pub perception: Perception,
    /// Steps between spotting a mistake and the correction arriving.
    pub reaction_latency: u32,
    /// Steps ahead a committed trajectory is checked for contact.
    pub braking_margin_steps: u32,
    /// Consecutive disagreeing autonomous decisions tolerated.
    pub dwell_budget: u32,
    pub oscillation_window: u32,
    /// Lane changes in alternating directions within the window that count
    /// as oscillating.
    pub oscillation_reversals: u32,
    /// Probability of breaking a tie between equally ranked safe plans at random.
    pub tie_epsilon: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            merge_trigger: 22.0,
            entry_clearance: 24.0,
            tailgate_cost: 2.0,
            lane_preference: [2, 1, 0, 4, 3],
            hysteresis_steps: 10,
            horizon: 30,
            perception: Perception::SensorView,
            reaction_latency: 2,
            braking_margin_steps: 5,
            dwell_budget: 10,
            oscillation_window: 25,
            oscillation_reversals: 3,
            tie_epsilon: 0.0,
            seed: 0,
        }
    }
}

/// A car as perceived by the oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneCar {
    pub lane: u8,
    pub x: f64,
    pub closing: f64,
}

impl From<&Car> for SceneCar {
    fn from(c: &Car) -> Self {
        SceneCar {
            lane: c.lane,
            x: c.x,
            closing: c.closing_per_step(),
        }
    }
}

/// Steps of the agent trajectory `plan` (then forward) until first contact.
pub fn first_contact(pose: &AgentPose, cars: &[SceneCar], plan: &[Action], horizon: u32) -> Option<u32> {
    let mut pose = *pose;
    let mut queue: VecDeque<Action> = plan.iter().copied().collect();
    let mut busy = if pose.in_transition() {
        (LANE_CHANGE_STEPS - pose.progress) as u32
    } else {
        0
    };
    for t in 1..=horizon {
        if busy == 0 {
            let a = queue.pop_front().unwrap_or(Action::Forward);
            pose.apply(a);
            busy = action_duration(a);
        }
        pose.advance();
        busy -= 1;
        let tf = t as f64;
        if cars.iter().any(|c| overlaps(&pose, c.lane, c.x - c.closing * tf)) {
            return Some(t);
        }
    }
    None
}

/// Lateral poses: 5 resting lanes, then (from lane, direction, progress).
const POSE_SLOTS: usize = LANE_COUNT as usize + LANE_COUNT as usize * 2 * LANE_CHANGE_STEPS as usize;

fn pose_slot(p: &AgentPose) -> usize {
    if !p.in_transition() {
        return p.lane_to as usize;
    }
    let dir = usize::from(p.lane_to > p.lane_from);
    LANE_COUNT as usize + (p.lane_from as usize * 2 + dir) * LANE_CHANGE_STEPS as usize + p.progress as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OraclePolicy {
    pub config: OracleConfig,
}

struct Planner<'a> {
    policy: &'a OraclePolicy,
    cars: &'a [SceneCar],
    memo: Vec<f64>,
}

impl Planner<'_> {
    /// Cost of spending timestep `t` at `pose`.
    fn occupancy_cost(&self, pose: &AgentPose, t: u32) -> f64 {
        let cfg = &self.policy.config;
        let tf = t as f64;
        let lane = pose.lane();
        let mut cost = self.policy.rank(lane) as f64;
        for c in self.cars {
            let x = c.x - c.closing * tf;
            if overlaps(pose, c.lane, x) {
                cost += COLLISION_COST;
            } else if c.lane == lane && x >= 0.0 && x < cfg.merge_trigger {
                cost += cfg.tailgate_cost;
            }
        }
        cost
    }

    fn successors(pose: &AgentPose) -> impl Iterator<Item = (Action, AgentPose)> + '_ {
        Action::ALL.into_iter().filter_map(move |a| {
            if pose.in_transition() && a != Action::Forward {
                return None;
            }
            let mut next = *pose;
            next.apply(a);
            if a != Action::Forward && next == *pose {
                return None;
            }
            next.advance();
            Some((a, next))
        })
    }

    fn edge_cost(&self, pose: &AgentPose, a: Action) -> f64 {
        if a != Action::Forward && !pose.in_transition() {
            self.policy.config.hysteresis_steps as f64
        } else {
            0.0
        }
    }

    /// Cheapest total cost from `pose` at time `t` to the horizon.
    fn value(&mut self, pose: &AgentPose, t: u32) -> f64 {
        if t >= self.policy.config.horizon {
            return 0.0;
        }
        let key = t as usize * POSE_SLOTS + pose_slot(pose);
        if !self.memo[key].is_nan() {
            return self.memo[key];
        }
        let mut best = f64::INFINITY;
        for (a, next) in Self::successors(pose) {
            let c = self.edge_cost(pose, a) + self.occupancy_cost(&next, t + 1) + self.value(&next, t + 1);
            best = best.min(c);
        }
        self.memo[key] = best;
        best
    }
}

/// Added per timestep of predicted contact; dominates every other cost.
const COLLISION_COST: f64 = 1.0e4;

impl OraclePolicy {
    pub fn new(config: OracleConfig) -> Self {
        OraclePolicy { config }
    }

    fn rank(&self, lane: u8) -> usize {
        self.config
            .lane_preference
            .iter()
            .position(|&l| l == lane)
            .unwrap_or(LANE_COUNT as usize)
    }

    /// Ranking used by the lane rule: shoulders are for passing, so any
    /// traffic lane beats either shoulder.
    fn move_rank(&self, lane: u8) -> usize {
        let shoulder = lane == 0 || lane + 1 == LANE_COUNT;
        self.rank(lane) + if shoulder { LANE_COUNT as usize } else { 0 }
    }

    /// Every car on the road.
    pub fn scene(&self, world: &WorldState) -> Vec<SceneCar> {
        world.cars.iter().map(SceneCar::from).collect()
    }

    /// The oracle's action for the agent's current situation; `sensed` is
    /// what the agent read from `world` this timestep.
    pub fn act(&self, world: &WorldState, sensed: &StateVector) -> Action {
        let pose = &world.agent;
        if pose.in_transition() {
            return Action::Forward;
        }
        let full = self.score(pose, &self.scene(world));
        if self.config.perception == Perception::GroundTruth {
            return self.pick(&full, world.timestep);
        }
        let choice = self.rule_action(sensed);
        let safe = |a: Action| full.iter().any(|&(b, c)| b == a && c < COLLISION_COST);
        if safe(choice) || !full.iter().any(|&(a, _)| safe(a)) {
            choice
        } else {
            self.pick(&full, world.timestep)
        }
    }

    /// The lane rule on a sensed state. A car ahead within the merge trigger
    /// sends the agent to the best clear neighbouring lane (or the one with
    /// the most room if none is clear); otherwise it moves to a clear
    /// neighbour it prefers to its own lane, or keeps going.
    pub fn rule_action(&self, s: &StateVector) -> Action {
        let cfg = &self.config;
        let lane = s.lane;
        // a reading behind the agent can hide a car ahead, so both count
        let clear = |d: f64| d.abs() >= cfg.entry_clearance;
        let mut options: Vec<(Action, u8, f64)> = Vec::with_capacity(2);
        if lane > 0 {
            options.push((Action::Left, lane - 1, s.d_left));
        }
        if lane + 1 < LANE_COUNT {
            options.push((Action::Right, lane + 1, s.d_right));
        }
        options.sort_by_key(|o| self.move_rank(o.1));
        let best_clear = options.iter().find(|o| clear(o.2));
        let threatened = s.d_center > -CAR_LENGTH && s.d_center < cfg.merge_trigger;
        if threatened {
            if let Some(o) = best_clear {
                return o.0;
            }
            // no clear lane: go where the nearest car ahead is farthest, if
            // that beats staying
            let room = |d: f64| if d <= -CAR_LENGTH { SENSOR_RANGE } else { d };
            return options
                .iter()
                .filter(|o| room(o.2) > room(s.d_center))
                .max_by(|a, b| room(a.2).total_cmp(&room(b.2)))
                .map_or(Action::Forward, |o| o.0);
        }
        match best_clear {
            Some(o) if self.move_rank(o.1) < self.move_rank(lane) => o.0,
            _ => Action::Forward,
        }
    }

    /// First action of the cheapest trajectory over the planning horizon.
    /// A trajectory pays the preference rank of its lane every step, a
    /// penalty for each lane change and for following a car closer than the
    /// merge trigger, and a prohibitive cost for every step in contact.
    pub fn act_on_scene(&self, pose: &AgentPose, cars: &[SceneCar], timestep: u64) -> Action {
        if pose.in_transition() {
            return Action::Forward;
        }
        self.pick(&self.score(pose, cars), timestep)
    }

    /// Cost of the best trajectory starting with each legal action.
    fn score(&self, pose: &AgentPose, cars: &[SceneCar]) -> Vec<(Action, f64)> {
        let mut planner = Planner {
            policy: self,
            cars,
            memo: vec![f64::NAN; (self.config.horizon as usize + 1) * POSE_SLOTS],
        };
        Planner::successors(pose)
            .map(|(a, next)| {
                let c = planner.edge_cost(pose, a) + planner.occupancy_cost(&next, 1) + planner.value(&next, 1);
                (a, c)
            })
            .collect()
    }

    fn pick(&self, scored: &[(Action, f64)], timestep: u64) -> Action {
        let best = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let tied: Vec<&Action> = scored
            .iter()
            .filter(|s| s.1 <= best + 1e-9)
            .map(|s| &s.0)
            .collect();
        *self.break_tie(&tied, timestep)
    }

    /// Usually the first (best ranked) option; with probability `tie_epsilon`
    /// a random safe one instead.
    fn break_tie<'a, T>(&self, tied: &[&'a T], timestep: u64) -> &'a T {
        if tied.len() > 1 && self.config.tie_epsilon > 0.0 {
            let h = derive_seed(self.config.seed, &[timestep]);
            let u = (h >> 11) as f64 / (1u64 << 53) as f64;
            if u < self.config.tie_epsilon {
                return tied[(h as usize) % tied.len()];
            }
        }
        tied[0]
    }

    /// The lane rule over a grid of sensed states, for auditing.
    pub fn rule_table(&self, distances: &[f64]) -> Vec<(StateVector, Action)> {
        let mut out = Vec::new();
        for lane in 0..LANE_COUNT {
            for &l in distances {
                for &c in distances {
                    for &r in distances {
                        let s = StateVector::new(lane, l, c, r);
                        out.push((s, self.rule_action(&s)));
                    }
                }
            }
        }
        out
    }
}

/// Drives the simulator with the oracle directly.
pub struct OracleDriver(pub OraclePolicy);

impl Driver for OracleDriver {
    fn act(&mut self, sensed: &StateVector, world: &WorldState) -> Action {
        self.0.act(world, sensed)
    }
}

/// Which predicate flagged a mistake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mistake {
    ImminentCollision,
    WrongLaneDwell,
    Oscillation,
}

#[derive(Debug, Clone)]
struct Anchor {
    world: WorldState,
    state: StateVector,
    action: Action,
    corrected: bool,
}

/// The oracle wired up as a [`TeacherChannel`]. Call [`OracleTeacher::observe`]
/// with the current world before every engine step.
#[derive(Debug, Clone)]
pub struct OracleTeacher {
    policy: OraclePolicy,
    corrections: bool,
    world: Option<WorldState>,
    pending_demo: Option<Action>,
    anchor: Option<Anchor>,
    autonomous: bool,
    disagreements: u32,
    lane_changes: VecDeque<(u64, i8)>,
    due: Option<(u64, Mistake)>,
    /// Mistakes flagged so far, by kind, for reporting.
    pub flagged: Vec<(u64, Mistake)>,
}

impl OracleTeacher {
    pub fn new(policy: OraclePolicy, corrections: bool) -> Self {
        OracleTeacher {
            policy,
            corrections,
            world: None,
            pending_demo: None,
            anchor: None,
            autonomous: false,
            disagreements: 0,
            lane_changes: VecDeque::new(),
            due: None,
            flagged: Vec::new(),
        }
    }

    pub fn policy(&self) -> &OraclePolicy {
        &self.policy
    }

    fn now(&self) -> u64 {
        self.world.as_ref().map_or(0, |w| w.timestep)
    }

    /// Updates the teacher's view of the road and runs the mistake predicates.
    pub fn observe(&mut self, world: &WorldState) {
        self.world = Some(world.clone());
        if !self.corrections || !self.autonomous || self.due.is_some() {
            return;
        }
        if self.anchor.as_ref().is_none_or(|a| a.corrected) {
            return;
        }
        let cars = self.policy.scene(world);
        let committed = first_contact(&world.agent, &cars, &[], self.policy.config.braking_margin_steps);
        if world.collision() || committed.is_some() {
            self.flag(Mistake::ImminentCollision);
        }
    }

    fn flag(&mut self, kind: Mistake) {
        let now = self.now();
        self.flagged.push((now, kind));
        self.due = Some((now + self.policy.config.reaction_latency as u64, kind));
    }
}

impl TeacherChannel for OracleTeacher {
    fn poll(&mut self) -> Option<Action> {
        if let Some(a) = self.pending_demo.take() {
            return Some(a);
        }
        let (due, _) = self.due?;
        if self.now() < due {
            return None;
        }
        self.due = None;
        let anchor = self.anchor.as_mut()?;
        if anchor.corrected {
            return None;
        }
        let correct = self.policy.act(&anchor.world, &anchor.state);
        if correct == anchor.action {
            return None;
        }
        anchor.corrected = true;
        self.disagreements = 0;
        Some(correct)
    }

    fn notify_request(&mut self, s: &StateVector) {
        self.autonomous = false;
        self.due = None;
        self.disagreements = 0;
        if let Some(w) = &self.world {
            self.pending_demo = Some(self.policy.act(w, s));
        }
    }

    fn notify_autonomous(&mut self, action: Action, s: &StateVector) {
        let Some(world) = self.world.clone() else {
            return;
        };
        self.autonomous = true;
        let now = world.timestep;
        if !self.corrections {
            return;
        }
        let oracle_action = self.policy.act(&world, s);
        if oracle_action != action {
            self.disagreements += 1;
        } else {
            self.disagreements = 0;
        }
        if action != Action::Forward && action.lane_delta() != 0 {
            self.lane_changes.push_back((now, action.lane_delta()));
        }
        let window = self.policy.config.oscillation_window as u64;
        while self
            .lane_changes
            .front()
            .is_some_and(|(t, _)| t + window < now)
        {
            self.lane_changes.pop_front();
        }
        self.anchor = Some(Anchor {
            world,
            state: *s,
            action,
            corrected: false,
        });
        if self.due.is_some() {
            return;
        }
        // trailing run of lane changes that alternate direction
        let mut run = 0u32;
        let mut last = 0i8;
        for &(_, d) in self.lane_changes.iter().rev() {
            if run > 0 && d == last {
                break;
            }
            run += 1;
            last = d;
        }
        if run >= self.policy.config.oscillation_reversals {
            self.lane_changes.clear();
            self.flag(Mistake::Oscillation);
        } else if self.disagreements > self.policy.config.dwell_budget {
            self.disagreements = 0;
            self.flag(Mistake::WrongLaneDwell);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Car, SensorConfig, TrafficPattern};

    fn road(cars: &[(u8, f64, f64)], lane: u8) -> WorldState {
        let mut p = TrafficPattern::evaluation();
        p.lane_rates = [0.0; 3];
        let mut w = WorldState::new(&p, SensorConfig::noiseless());
        w.agent = AgentPose::at(lane);
        w.cars = cars
            .iter()
            .enumerate()
            .map(|(i, &(lane, x, v))| Car { id: i as u64, lane, x, speed_mph: v })
            .collect();
        w
    }

    fn decide(o: &OraclePolicy, w: &WorldState) -> Action {
        o.act(w, &w.sense_noiseless())
    }

    fn ground_truth() -> OraclePolicy {
        OraclePolicy::new(OracleConfig {
            perception: Perception::GroundTruth,
            ..OracleConfig::default()
        })
    }

    #[test]
    fn empty_road_center_lane_goes_forward() {
        let o = OraclePolicy::new(OracleConfig::default());
        assert_eq!(decide(&o, &road(&[], 2)), Action::Forward);
        assert_eq!(decide(&ground_truth(), &road(&[], 2)), Action::Forward);
    }

    #[test]
    fn slow_car_ahead_with_clear_left_goes_left() {
        // a 20 mph car closes 3.58 units per step; a lane change takes 5 steps
        let o = OraclePolicy::new(OracleConfig::default());
        assert_eq!(decide(&o, &road(&[(2, 20.0, 20.0)], 2)), Action::Left);
        assert_eq!(decide(&ground_truth(), &road(&[(2, 20.0, 20.0)], 2)), Action::Left);
    }

    #[test]
    fn distant_car_ahead_is_not_yet_a_threat() {
        let o = OraclePolicy::new(OracleConfig::default());
        assert_eq!(decide(&o, &road(&[(2, 23.0, 40.0)], 2)), Action::Forward);
    }

    #[test]
    fn boxed_in_left_and_center_goes_right() {
        let o = OraclePolicy::new(OracleConfig::default());
        let w = road(&[(2, 20.0, 20.0), (1, 20.0, 20.0)], 2);
        assert_eq!(decide(&o, &w), Action::Right);
    }

    #[test]
    fn returns_to_preferred_lane_when_clear() {
        let o = OraclePolicy::new(OracleConfig::default());
        assert_eq!(decide(&o, &road(&[], 0)), Action::Right);
        assert_eq!(decide(&o, &road(&[], 1)), Action::Right);
        assert_eq!(decide(&o, &road(&[], 4)), Action::Left);
        assert_eq!(decide(&o, &road(&[], 3)), Action::Left);
    }

    #[test]
    fn car_behind_blocks_a_lane_change() {
        // nearest-car readings can hide a car ahead behind one just behind
        let o = OraclePolicy::new(OracleConfig::default());
        let s = StateVector::new(1, 25.0, 25.0, -6.0);
        assert_eq!(o.rule_action(&s), Action::Forward);
        assert_eq!(o.rule_action(&StateVector::new(1, 25.0, 25.0, 25.0)), Action::Right);
    }

    #[test]
    fn shoulders_rank_below_every_traffic_lane() {
        // lane 3 is least preferred among traffic lanes, still beats lane 4
        let o = OraclePolicy::new(OracleConfig::default());
        assert!(o.move_rank(3) < o.move_rank(4));
        assert!(o.move_rank(3) < o.move_rank(0));
        let s = StateVector::new(4, 25.0, 25.0, 25.0);
        assert_eq!(o.rule_action(&s), Action::Left);
    }

    #[test]
    fn unseen_trap_is_vetoed() {
        // the left lane reads empty but hides a slow car just past sensor
        // range; moving left would leave no way out
        let o = OraclePolicy::new(OracleConfig::default());
        let w = road(&[(2, 21.0, 20.0), (1, 26.0, 20.0), (3, -10.0, 40.0)], 2);
        let s = w.sense_noiseless();
        assert_eq!(s.d_left, SENSOR_RANGE);
        assert_eq!(o.rule_action(&s), Action::Left);
        assert_eq!(decide(&o, &w), Action::Right);
    }

    #[test]
    fn committed_lane_change_continues() {
        let o = OraclePolicy::new(OracleConfig::default());
        let mut w = road(&[], 2);
        w.agent.apply(Action::Left);
        assert_eq!(decide(&o, &w), Action::Forward);
    }

    fn teaching(world: &WorldState) -> OracleTeacher {
        let mut t = OracleTeacher::new(OraclePolicy::new(OracleConfig::default()), true);
        t.observe(world);
        t
    }

    #[test]
    fn answers_requests_with_its_own_choice() {
        let w = road(&[(2, 20.0, 20.0)], 2);
        let mut t = teaching(&w);
        assert_eq!(t.poll(), None);
        t.notify_request(&w.sense_noiseless());
        assert_eq!(t.poll(), Some(Action::Left));
        assert_eq!(t.poll(), None);
    }

    #[test]
    fn corrects_forward_into_a_slow_car_after_the_latency() {
        let mut w = road(&[(2, 14.0, 20.0)], 2);
        let s = w.sense_noiseless();
        let mut t = teaching(&w);
        t.notify_autonomous(Action::Forward, &s);
        t.observe(&w);
        assert_eq!(t.flagged.last().map(|f| f.1), Some(Mistake::ImminentCollision));
        assert_eq!(t.poll(), None);
        w.timestep += 1;
        t.observe(&w);
        assert_eq!(t.poll(), None);
        w.timestep += 1;
        t.observe(&w);
        // judged on the state the agent acted in
        assert_eq!(t.poll(), Some(Action::Left));
        assert_eq!(t.poll(), None);
    }

    #[test]
    fn left_right_left_is_corrected_to_forward() {
        let mut w = road(&[], 2);
        let s = w.sense_noiseless();
        let mut t = teaching(&w);
        for a in [Action::Left, Action::Right, Action::Left] {
            t.notify_autonomous(a, &s);
            w.timestep += 5;
            t.observe(&w);
        }
        assert_eq!(t.flagged.last().map(|f| f.1), Some(Mistake::Oscillation));
        assert_eq!(t.poll(), Some(Action::Forward));
    }

    #[test]
    fn left_left_is_not_oscillation() {
        let mut w = road(&[], 3);
        let s = w.sense_noiseless();
        let mut t = teaching(&w);
        for _ in 0..3 {
            t.notify_autonomous(Action::Left, &s);
            w.timestep += 5;
            t.observe(&w);
        }
        assert!(t.flagged.iter().all(|f| f.1 != Mistake::Oscillation));
    }

    #[test]
    fn lingering_in_the_wrong_lane_is_corrected() {
        // forward on the left shoulder of an empty road, decision after decision
        let mut w = road(&[], 0);
        let s = w.sense_noiseless();
        let mut t = teaching(&w);
        let budget = OracleConfig::default().dwell_budget;
        for _ in 0..=budget {
            t.notify_autonomous(Action::Forward, &s);
            w.timestep += 1;
            t.observe(&w);
        }
        assert_eq!(t.flagged.last().map(|f| f.1), Some(Mistake::WrongLaneDwell));
        w.timestep += 2;
        t.observe(&w);
        assert_eq!(t.poll(), Some(Action::Right));
    }

    #[test]
    fn no_corrections_when_disabled() {
        let mut w = road(&[(2, 14.0, 20.0)], 2);
        let s = w.sense_noiseless();
        let mut t = OracleTeacher::new(OraclePolicy::new(OracleConfig::default()), false);
        t.observe(&w);
        t.notify_autonomous(Action::Forward, &s);
        w.timestep += 3;
        t.observe(&w);
        assert_eq!(t.poll(), None);
        assert!(t.flagged.is_empty());
    }

    #[test]
    fn never_leaves_the_road() {
        let o = OraclePolicy::new(OracleConfig::default());
        let table = o.rule_table(&[-20.0, -3.0, 0.0, 6.0, 15.0, 25.0]);
        for (s, a) in table {
            assert!(!(s.lane == 0 && a == Action::Left), "{s:?}");
            assert!(!(s.lane == 4 && a == Action::Right), "{s:?}");
        }
    }
}

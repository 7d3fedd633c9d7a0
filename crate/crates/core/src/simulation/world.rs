use std::collections::{BTreeMap, BTreeSet};

use super::config::SimConfig;
use crate::runtime::{PhysicalTarget, WorldView};
use crate::types::{IdleState, VehicleId};

/// Longitudinal kinematic state of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub lane: i64,
    /// Position along the road, m.
    pub s: f64,
    /// Speed, m/s.
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub body: Body,
    pub target: Option<PhysicalTarget>,
    /// Latched once the current target was first reached.
    pub reached: bool,
}

/// Regulation-layer notification for the vehicle's agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhysicalEvent {
    /// An MTP target was reached.
    Arrived,
    /// An SH target converged.
    Done,
}

/// Ground truth: kinematics, leader pointers and the member lists leaders
/// last published.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub vehicles: BTreeMap<VehicleId, VehicleState>,
    pub obstacles: BTreeMap<VehicleId, Body>,
    pub leader_of: BTreeMap<VehicleId, VehicleId>,
    pub published: BTreeMap<VehicleId, Vec<VehicleId>>,
    /// Smallest signed same-lane gap seen between consecutive objects.
    pub min_gap_seen: f64,
}

impl WorldView for World {
    fn members(&self, leader: &VehicleId) -> Vec<VehicleId> {
        let mut followers: Vec<&VehicleId> = self
            .leader_of
            .iter()
            .filter(|(_, l)| *l == leader)
            .map(|(v, _)| v)
            .collect();
        followers.sort_by(|a, b| {
            let (sa, sb) = (self.vehicles[*a].body.s, self.vehicles[*b].body.s);
            sb.total_cmp(&sa).then_with(|| a.cmp(b))
        });
        std::iter::once(leader.clone()).chain(followers.into_iter().cloned()).collect()
    }

    fn leader_of(&self, v: &VehicleId) -> Option<VehicleId> {
        self.leader_of.get(v).cloned()
    }

    fn lane(&self, v: &VehicleId) -> Option<i64> {
        self.vehicles.get(v).map(|x| x.body.lane)
    }
}

/// Speed command that closes `e` metres on a reference moving at `v_ref`
/// and can still brake to the reference within `b_max`.
fn approach(v_ref: f64, e: f64, kp: f64, b_max: f64) -> f64 {
    v_ref + e.signum() * (kp * e.abs()).min((2.0 * b_max * e.abs()).sqrt())
}

impl World {
    pub fn new(config: SimConfig) -> World {
        World {
            config,
            vehicles: BTreeMap::new(),
            obstacles: BTreeMap::new(),
            leader_of: BTreeMap::new(),
            published: BTreeMap::new(),
            min_gap_seen: f64::INFINITY,
        }
    }

    pub fn add_vehicle(&mut self, id: VehicleId, body: Body, target: Option<PhysicalTarget>) {
        self.vehicles.insert(
            id,
            VehicleState {
                body,
                target,
                reached: false,
            },
        );
    }

    pub fn body(&self, id: &VehicleId) -> Option<&Body> {
        self.vehicles.get(id).map(|v| &v.body).or_else(|| self.obstacles.get(id))
    }

    fn objects(&self) -> impl Iterator<Item = (&VehicleId, &Body)> {
        self.vehicles
            .iter()
            .map(|(id, v)| (id, &v.body))
            .chain(self.obstacles.iter())
    }

    /// Closest object strictly ahead of `id` in `lane`.
    pub fn nearest_ahead(&self, id: &VehicleId, lane: i64, s: f64) -> Option<(&VehicleId, &Body)> {
        self.objects()
            .filter(|(o, b)| *o != id && b.lane == lane && (b.s > s || (b.s == s && *o < id)))
            .min_by(|(ia, a), (ib, b)| a.s.total_cmp(&b.s).then_with(|| ib.cmp(ia)))
    }

    /// The platoon member directly ahead, else the closest object ahead in
    /// the same lane.
    pub fn predecessor(&self, id: &VehicleId) -> Option<&Body> {
        let me = &self.vehicles[id].body;
        if let Some(l) = self.leader_of.get(id) {
            let members = self.members(l);
            if let Some(i) = members.iter().position(|m| m == id) {
                if i > 0 {
                    return self.body(&members[i - 1]);
                }
            }
        }
        self.nearest_ahead(id, me.lane, me.s).map(|(_, b)| b)
    }

    /// Position error (reference minus position) and reference speed of
    /// the vehicle's current target.
    fn tracking(&self, id: &VehicleId) -> Option<(f64, f64)> {
        let st = &self.vehicles[id];
        let me = &st.body;
        match st.target.as_ref()? {
            PhysicalTarget::Position { target, offset, .. } => match self.body(target) {
                Some(t) if target != id => Some((t.s + offset - me.s, t.v)),
                _ => Some((0.0, me.v)),
            },
            PhysicalTarget::TimeHeadway(th) => {
                let p = self.predecessor(id)?;
                Some((p.s - me.s - th * me.v, p.v))
            }
            PhysicalTarget::SpaceHeadway(g) => {
                let p = self.predecessor(id)?;
                Some((p.s - me.s - g, p.v))
            }
        }
    }

    /// One fixed step of the longitudinal controller, then lane changes.
    pub fn advance_physics(&mut self, dt: f64) {
        let c = &self.config;
        let mut ahead_before = Vec::new();
        for (id, b) in self.objects() {
            if let Some((a, _)) = self.nearest_ahead(id, b.lane, b.s) {
                ahead_before.push((id.clone(), a.clone()));
            }
        }
        let mut next: Vec<(VehicleId, f64, f64)> = Vec::new();
        for (id, st) in &self.vehicles {
            let me = &st.body;
            let mut v_cmd = match self.tracking(id) {
                Some((e, v_ref)) => approach(v_ref, e, c.kp, c.b_max),
                None => me.v,
            };
            if let Some((_, a)) = self.nearest_ahead(id, me.lane, me.s) {
                let room = (a.s - me.s - c.min_gap).max(0.0);
                v_cmd = v_cmd.min(a.v + (2.0 * c.b_max * room).sqrt());
            }
            let acc = ((v_cmd - me.v) / dt).clamp(-c.b_max, c.a_max);
            let v = (me.v + acc * dt).max(0.0);
            next.push((id.clone(), me.s + 0.5 * (me.v + v) * dt, v));
        }
        for (id, s, v) in next {
            let b = &mut self.vehicles.get_mut(&id).expect("vehicle").body;
            b.s = s;
            b.v = v;
        }
        for b in self.obstacles.values_mut() {
            b.s += b.v * dt;
        }
        for (id, ahead) in &ahead_before {
            if let (Some(x), Some(a)) = (self.body(id), self.body(ahead)) {
                if x.lane == a.lane {
                    self.min_gap_seen = self.min_gap_seen.min(a.s - x.s);
                }
            }
        }
        self.change_lanes();
    }

    fn change_lanes(&mut self) {
        let min_gap = self.config.min_gap;
        let movers: Vec<(VehicleId, i64)> = self
            .vehicles
            .iter()
            .filter_map(|(id, st)| match &st.target {
                Some(PhysicalTarget::Position { lane: Some(l), .. }) if *l != st.body.lane => Some((id.clone(), *l)),
                _ => None,
            })
            .collect();
        for (id, lane) in movers {
            let aligned = self.tracking(&id).is_some_and(|(e, _)| e.abs() <= 1.0);
            let s = self.vehicles[&id].body.s;
            let free = self
                .objects()
                .all(|(o, b)| *o == id || b.lane != lane || (b.s - s).abs() >= min_gap);
            if aligned && free {
                self.vehicles.get_mut(&id).expect("vehicle").body.lane = lane;
            }
        }
    }

    /// Latching check of the current target; fires at most once per target.
    pub fn arrival_check(&mut self, id: &VehicleId) -> Option<PhysicalEvent> {
        let st = self.vehicles.get(id)?;
        if st.reached {
            return None;
        }
        let target = st.target.clone()?;
        let (e, v_ref) = self.tracking(id)?;
        let c = &self.config;
        let lane_ok = match &target {
            PhysicalTarget::Position { lane: Some(l), .. } => *l == st.body.lane,
            _ => true,
        };
        if !(lane_ok && e.abs() <= c.arrival_tolerance && (st.body.v - v_ref).abs() <= c.speed_tolerance) {
            return None;
        }
        self.vehicles.get_mut(id).expect("vehicle").reached = true;
        Some(match target {
            PhysicalTarget::Position { .. } => PhysicalEvent::Arrived,
            _ => PhysicalEvent::Done,
        })
    }

    pub fn set_target(&mut self, id: &VehicleId, target: Option<PhysicalTarget>) {
        if let Some(st) = self.vehicles.get_mut(id) {
            st.reached = target.is_none();
            st.target = target;
        }
    }

    pub fn targets_settled(&self) -> bool {
        self.vehicles.values().all(|v| v.reached || v.target.is_none())
    }

    /// `id` leads itself and every member behind it up to the next
    /// temporary leader in `tentative`, whose own half decides where it and
    /// its followers end up.
    pub fn split(&mut self, id: &VehicleId, tentative: &BTreeSet<VehicleId>) {
        if let Some(l) = self.leader_of.get(id).cloned() {
            let members = self.members(&l);
            let at = members.iter().position(|m| m == id).unwrap_or(members.len());
            let leaving: Vec<VehicleId> = std::iter::once(id.clone())
                .chain(members[at + 1..].iter().take_while(|m| !tentative.contains(*m)).cloned())
                .collect();
            for m in &leaving[1..] {
                self.leader_of.insert(m.clone(), id.clone());
            }
            self.leader_of.remove(id);
            // The split is announced, so the old leader's list drops them.
            if let Some(list) = self.published.get_mut(&l) {
                list.retain(|m| !leaving.contains(m));
            }
        }
        self.published.insert(id.clone(), self.members(id));
    }

    /// `id` and its own followers join `leader`.
    pub fn merge(&mut self, id: &VehicleId, leader: &VehicleId) {
        for l in self.leader_of.values_mut() {
            if l == id {
                *l = leader.clone();
            }
        }
        self.leader_of.insert(id.clone(), leader.clone());
        self.published.remove(id);
    }

    pub fn set_leader(&mut self, id: &VehicleId, leader: Option<VehicleId>) {
        match leader {
            Some(l) => {
                self.leader_of.insert(id.clone(), l);
            }
            None => {
                self.leader_of.remove(id);
            }
        }
        self.published.remove(id);
    }

    pub fn publish(&mut self, id: &VehicleId) -> Vec<VehicleId> {
        let m = self.members(id);
        self.published.insert(id.clone(), m.clone());
        m
    }

    /// Disagreements between idle states, leader pointers and published
    /// member lists.
    pub fn membership_violations(&self, idle: &BTreeMap<VehicleId, IdleState>) -> Vec<String> {
        let mut out = Vec::new();
        for (id, state) in idle {
            let leader = self.leader_of.get(id);
            match state {
                IdleState::Pl => {
                    if let Some(l) = leader {
                        out.push(format!("{id} is PL but follows {l}"));
                    }
                    let truth = self.members(id);
                    match self.published.get(id) {
                        Some(p) if *p == truth => {}
                        Some(p) => out.push(format!("{id} publishes {p:?} but leads {truth:?}")),
                        None if truth.len() == 1 => {}
                        None => out.push(format!("{id} leads {truth:?} without a member list")),
                    }
                }
                IdleState::Pf => match leader {
                    Some(l) if idle.get(l) == Some(&IdleState::Pl) => {}
                    Some(l) => out.push(format!("{id} is PF behind {l}, which is not a PL")),
                    None => out.push(format!("{id} is PF without a leader")),
                },
                IdleState::Fv => {
                    if let Some(l) = leader {
                        out.push(format!("{id} is FV but follows {l}"));
                    }
                    if self.members(id).len() > 1 {
                        out.push(format!("{id} is FV but has followers"));
                    }
                }
                other => out.push(format!("{id} is in unstable {other}")),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(gap: f64, target: PhysicalTarget) -> World {
        let mut w = World::new(SimConfig::default());
        w.add_vehicle("L".into(), Body { lane: 0, s: 100.0, v: 20.0 }, None);
        w.add_vehicle("F".into(), Body { lane: 0, s: 100.0 - gap, v: 20.0 }, Some(target));
        w.leader_of.insert("F".into(), "L".into());
        w
    }

    #[test]
    fn no_target_holds_speed() {
        let mut w = World::new(SimConfig::default());
        w.add_vehicle("A".into(), Body { lane: 0, s: 0.0, v: 15.0 }, None);
        w.advance_physics(0.1);
        assert_eq!(w.vehicles[&VehicleId::new("A")].body.v, 15.0);
    }

    #[test]
    fn space_headway_converges_and_latches() {
        let mut w = two(20.0, PhysicalTarget::SpaceHeadway(6.0));
        let f = VehicleId::new("F");
        let mut fired = 0;
        for _ in 0..600 {
            w.advance_physics(0.1);
            if w.arrival_check(&f).is_some() {
                fired += 1;
            }
        }
        assert_eq!(fired, 1);
        let gap = w.vehicles[&VehicleId::new("L")].body.s - w.vehicles[&f].body.s;
        assert!((gap - 6.0).abs() < 0.5, "gap {gap}");
    }

    #[test]
    fn split_takes_downstream_members() {
        let mut w = World::new(SimConfig::default());
        for (i, id) in ["A", "B", "C", "D"].iter().enumerate() {
            w.add_vehicle((*id).into(), Body { lane: 0, s: 100.0 - 6.0 * i as f64, v: 20.0 }, None);
        }
        for id in ["B", "C", "D"] {
            w.leader_of.insert(id.into(), "A".into());
        }
        w.split(&"C".into(), &BTreeSet::new());
        assert_eq!(w.members(&"A".into()), vec![VehicleId::new("A"), "B".into()]);
        assert_eq!(w.members(&"C".into()), vec![VehicleId::new("C"), "D".into()]);
        assert_eq!(w.published[&VehicleId::new("C")], w.members(&"C".into()));
    }

    #[test]
    fn split_stops_at_a_temporary_leader() {
        let mut w = World::new(SimConfig::default());
        for (i, id) in ["A", "B", "C", "D", "E"].iter().enumerate() {
            w.add_vehicle((*id).into(), Body { lane: 0, s: 100.0 - 6.0 * i as f64, v: 20.0 }, None);
        }
        for id in ["B", "C", "D", "E"] {
            w.leader_of.insert(id.into(), "A".into());
        }
        w.split(&"B".into(), &BTreeSet::from(["D".into()]));
        assert_eq!(w.members(&"B".into()), vec![VehicleId::new("B"), "C".into()]);
        assert_eq!(w.members(&"A".into()), vec![VehicleId::new("A"), "D".into(), "E".into()]);
    }
}

//! Length-class scheduling of tree links.
//!
//! Links are binned by length into classes `(2^(i-1), 2^i]` (class 1 also
//! takes everything down to length 1/2). Classes run one after another;
//! within class `i` every link fires with probability `1/K_i` per slot,
//! where `K_i` bounds the number of class-`i` links near any node.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{Instance, NodeId, GEOM_TOL};
use crate::nnt::RunConfig;
use crate::sim::{Action, Delivery, Engine, Payload, Protocol, StageEvent, Trace};
use crate::sinr::Link;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthClass {
    pub index: u32,
    /// Indices into the input link list.
    pub links: Vec<usize>,
    /// Largest number of class links with an endpoint within `2^(i+1)` of
    /// any node; at least 1.
    pub k: usize,
}

/// Class of a link of the given length: the smallest `i >= 1` with
/// `length <= 2^i`.
pub fn class_of(length: f64) -> u32 {
    let mut i = 1;
    while length > 2f64.powi(i as i32) + GEOM_TOL {
        i += 1;
    }
    i
}

/// Partitions `links` (as `(sender, receiver)`) into length classes in
/// increasing order, with exact `K` values over all nodes of `inst`.
pub fn classify(inst: &Instance, links: &[(NodeId, NodeId)]) -> Vec<LengthClass> {
    let mut classes: Vec<LengthClass> = Vec::new();
    for (k, &(u, v)) in links.iter().enumerate() {
        let i = class_of(inst.dist(u, v));
        match classes.iter_mut().find(|c| c.index == i) {
            Some(c) => c.links.push(k),
            None => classes.push(LengthClass { index: i, links: vec![k], k: 0 }),
        }
    }
    classes.sort_by_key(|c| c.index);
    for c in &mut classes {
        let radius = 2f64.powi(c.index as i32 + 1) + GEOM_TOL;
        c.k = inst
            .node_ids()
            .map(|x| {
                c.links
                    .iter()
                    .filter(|&&k| {
                        let (u, v) = links[k];
                        inst.dist(x, u) <= radius || inst.dist(x, v) <= radius
                    })
                    .count()
            })
            .max()
            .unwrap_or(0)
            .max(1);
    }
    classes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub index: u32,
    pub links: usize,
    pub k: usize,
    pub power: f64,
    pub slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub links: Vec<Link>,
    /// Links that got through, slot by slot from the schedule start.
    pub slots: Vec<Vec<Link>>,
    /// First successful slot of each input link.
    pub first_success: Vec<Option<usize>>,
    pub classes: Vec<ClassSummary>,
    /// Slots allotted across all classes.
    pub allocated: usize,
    /// One past the last first success; the time by which every link has
    /// been delivered once.
    pub completion: usize,
}

impl ScheduleResult {
    pub fn complete(&self) -> bool {
        self.first_success.iter().all(Option::is_some)
    }

    /// The successful link set of every slot, as `[sender, receiver, power]`.
    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<(NodeId, NodeId, f64)>> =
            self.slots.iter().map(|s| s.iter().map(|l| (l.sender, l.receiver, l.power)).collect()).collect();
        let mut s = serde_json::to_string(&rows).expect("schedule serializes");
        s.push('\n');
        s
    }
}

struct ClassRun<'a> {
    links: &'a [Link],
    in_class: Vec<bool>,
    /// For each node, the class links it sends on.
    outgoing: Vec<Vec<usize>>,
    prob: f64,
    slot: usize,
    slots_left: usize,
    /// `(slot, link)` for every successful reception.
    successes: Vec<(usize, usize)>,
}

impl Protocol for ClassRun<'_> {
    fn act(&mut self, v: NodeId, rng: &mut ChaCha8Rng) -> Action {
        let mut chosen = None;
        // One coin per link; a node with several firing links sends the first.
        for &k in &self.outgoing[v] {
            if rng.gen_bool(self.prob) && chosen.is_none() {
                chosen = Some(k);
            }
        }
        match chosen {
            Some(k) => Action::Transmit { power: self.links[k].power, payload: Payload::Link { link: k } },
            None => Action::Listen,
        }
    }

    fn accept(&mut self, d: &Delivery) -> bool {
        match d.payload {
            Payload::Link { link } if self.in_class[link] && self.links[link].receiver == d.receiver => {
                self.successes.push((self.slot, link));
                true
            }
            _ => false,
        }
    }

    fn end_slot(&mut self) {
        self.slot += 1;
        self.slots_left -= 1;
    }

    fn is_done(&self) -> bool {
        self.slots_left == 0
    }
}

/// Schedules every `(sender, receiver)` link once, class by class.
pub fn schedule(engine: &mut Engine<'_>, links: &[(NodeId, NodeId)], cfg: &RunConfig) -> Result<ScheduleResult> {
    let inst = engine.instance();
    let classes = classify(inst, links);
    let mut powered: Vec<Link> = links.iter().map(|&(u, v)| Link { sender: u, receiver: v, power: 0.0 }).collect();
    for c in &classes {
        let power = cfg.power_for(2f64.powi(c.index as i32), inst);
        for &k in &c.links {
            powered[k].power = power;
        }
    }
    let mut first_success = vec![None; links.len()];
    let mut slots: Vec<Vec<Link>> = Vec::new();
    let mut summaries = Vec::new();
    for c in &classes {
        let n_slots = cfg.broadcast.slots_for(c.k, inst);
        let mut outgoing = vec![Vec::new(); inst.n()];
        let mut in_class = vec![false; links.len()];
        for &k in &c.links {
            outgoing[powered[k].sender].push(k);
            in_class[k] = true;
        }
        let mut run = ClassRun {
            links: &powered,
            in_class,
            outgoing,
            prob: 1.0 / c.k as f64,
            slot: 0,
            slots_left: n_slots,
            successes: Vec::new(),
        };
        engine.mark(
            format!("schedule-class-{}", c.index),
            StageEvent::Schedule { class: c.index, k: c.k, slots: n_slots },
        );
        engine.run_protocol(&mut run, n_slots)?;
        let offset = slots.len();
        slots.resize(offset + n_slots, Vec::new());
        for (t, k) in run.successes {
            first_success[k].get_or_insert(offset + t);
            slots[offset + t].push(powered[k]);
        }
        summaries.push(ClassSummary {
            index: c.index,
            links: c.links.len(),
            k: c.k,
            power: powered[c.links[0]].power,
            slots: n_slots,
        });
    }
    let allocated = slots.len();
    let completion = first_success.iter().flatten().map(|&t| t + 1).max().unwrap_or(0);
    Ok(ScheduleResult { links: powered, slots, first_success, classes: summaries, allocated, completion })
}

/// Runs the scheduler on a fresh engine, returning its trace too.
pub fn schedule_tree(
    inst: &Instance,
    seed: u64,
    links: &[(NodeId, NodeId)],
    cfg: &RunConfig,
) -> Result<(ScheduleResult, Trace)> {
    let mut engine = Engine::new(inst, seed, "");
    let res = schedule(&mut engine, links, cfg)?;
    Ok((res, engine.into_trace()))
}

/// Orients each `(child, parent)` edge at random: upward with probability 1/2.
pub fn random_orientation(edges: &[(NodeId, NodeId)], rng: &mut impl Rng) -> Vec<(NodeId, NodeId)> {
    edges.iter().map(|&(c, p)| if rng.gen_bool(0.5) { (c, p) } else { (p, c) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Point, SinrParams};
    use crate::sinr::feasible;
    use rand::SeedableRng;

    fn line(k: usize, p_max: f64) -> Instance {
        let pts: Vec<Point> = (0..k).map(|i| Point::new(i as f64, 0.0)).collect();
        Instance::new(&pts, SinrParams { p_max, ..SinrParams::default() }, 0).unwrap()
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(class_of(1.0), 1);
        assert_eq!(class_of(1.5), 1);
        assert_eq!(class_of(2.0), 1);
        assert_eq!(class_of(2.0 + 1e-6), 2);
        assert_eq!(class_of(3.0), 2);
        assert_eq!(class_of(4.0), 2);
        assert_eq!(class_of(9.0), 4);
    }

    #[test]
    fn classify_examples() {
        let pts = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(2.5, 0.0), Point::new(5.5, 0.0)];
        let inst = Instance::new(&pts, SinrParams::default(), 0).unwrap();
        let c = classify(&inst, &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].index, c[0].links.clone()), (1, vec![0, 1]));
        assert_eq!((c[1].index, c[1].links.clone()), (2, vec![2]));
        assert!(classify(&inst, &[]).is_empty());
    }

    #[test]
    fn single_link_is_scheduled_immediately() {
        let inst = line(2, 100.0);
        let (res, _) = schedule_tree(&inst, 1, &[(0, 1)], &RunConfig::default()).unwrap();
        assert!(res.complete());
        assert_eq!(res.completion, 1);
        assert_eq!(res.allocated, 8);
    }

    #[test]
    fn path_in_both_orientations() {
        let inst = line(4, 100.0);
        for links in [vec![(1, 0), (2, 1), (3, 2)], vec![(0, 1), (1, 2), (2, 3)]] {
            for seed in 0..5 {
                let (res, trace) = schedule_tree(&inst, seed, &links, &RunConfig::default()).unwrap();
                assert!(res.complete(), "{links:?} seed {seed}");
                for s in &res.slots {
                    assert!(feasible(s, &inst));
                }
                assert_eq!(trace.len(), res.allocated);
            }
        }
    }

    #[test]
    fn random_orientation_flips_some() {
        let edges: Vec<(NodeId, NodeId)> = (1..64).map(|v| (v, v - 1)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let o = random_orientation(&edges, &mut rng);
        let up = o.iter().zip(&edges).filter(|(a, b)| a == b).count();
        assert!(up > 10 && up < 53);
    }
}

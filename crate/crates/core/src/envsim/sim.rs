use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ElementKind, WorldSpec};
use crate::embedding::{Embedding, SimilarityThresholds};
use crate::error::{Error, Result};
use crate::ids::ObjectId;
use crate::memory::{AtomicAction, UIObject};
use crate::oracle::{GroundTruth, ObservationView, VisibleObject};

pub const GRID_SIDE: usize = 16;
const CELLS: usize = GRID_SIDE * GRID_SIDE;
const BASE_COLORS: u8 = 8;
const HIGHLIGHT_COLOR: u8 = 8;
const PANEL_COLOR: u8 = 9;
const HIGHLIGHT_CELLS: usize = 3;
const SKIN_RECOLOR: f64 = 0.3;

// squared weights of the embedding components
const SHARED: f64 = 0.25;
const GROUP: f64 = 0.25;
const SCREEN: f64 = 0.42;
const SKIN: f64 = 0.085;
const HIGHLIGHT: f64 = 0.16;
const NOISE: f64 = 0.01;
const NOISE_DIMS: usize = 8;

type Grid = [u8; CELLS];

#[derive(Debug, Clone)]
struct Basis {
    shared: Vec<f64>,
    groups: BTreeMap<u32, Vec<f64>>,
    screens: Vec<Vec<f64>>,
    skins: Vec<Vec<f64>>,
    highlight: Vec<f64>,
    noise: Vec<Vec<f64>>,
}

/// A validated world plus everything derived from its seed: embedding
/// geometry and screen grids.
#[derive(Debug, Clone)]
pub struct World {
    spec: WorldSpec,
    basis: Basis,
    grids: Vec<Vec<Grid>>,
    panels: BTreeMap<ObjectId, Vec<usize>>,
    highlights: BTreeMap<ObjectId, [usize; HIGHLIGHT_CELLS]>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn orthonormal(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &out {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        // a draw nearly inside the span so far; try again
        if n < 1e-6 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        out.push(v);
    }
    out
}

impl World {
    pub fn new(spec: WorldSpec) -> Result<World> {
        spec.validate()?;
        let groups: BTreeSet<u32> = spec.screens.iter().map(|s| s.group).collect();
        let needed = 1 + groups.len() + spec.screens.len() + spec.skins as usize + 1 + NOISE_DIMS;
        if needed > spec.dimension {
            return Err(Error::InvalidWorld(format!(
                "{} screens, {} groups and {} skins need dimension {needed}, world has {}",
                spec.screens.len(),
                groups.len(),
                spec.skins,
                spec.dimension
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x005e_ed0f_3a7e);
        let mut vs = orthonormal(needed, spec.dimension, &mut rng).into_iter();
        let mut take = || vs.next().expect("basis sized above");
        let shared = take();
        let groups = groups.into_iter().map(|g| (g, take())).collect();
        let screens = (0..spec.screens.len()).map(|_| take()).collect();
        let skins = (0..spec.skins).map(|_| take()).collect();
        let highlight = take();
        let noise = (0..NOISE_DIMS).map(|_| take()).collect();
        let basis = Basis {
            shared,
            groups,
            screens,
            skins,
            highlight,
            noise,
        };

        let mut grids = Vec::with_capacity(spec.screens.len());
        for _ in &spec.screens {
            let base: Grid = std::array::from_fn(|_| rng.gen_range(0..BASE_COLORS));
            let mut variants = vec![base];
            for _ in 1..spec.skins {
                let mut g = base;
                for c in g.iter_mut() {
                    if rng.gen_bool(SKIN_RECOLOR) {
                        *c = (*c + rng.gen_range(1..BASE_COLORS)) % BASE_COLORS;
                    }
                }
                variants.push(g);
            }
            grids.push(variants);
        }
        let mut panels = BTreeMap::new();
        let mut highlights = BTreeMap::new();
        for el in &spec.elements {
            match el.kind {
                ElementKind::Cosmetic => {
                    let w = rng.gen_range(4..=8);
                    let h = rng.gen_range(5..=12);
                    let x0 = rng.gen_range(0..=GRID_SIDE - w);
                    let y0 = rng.gen_range(0..=GRID_SIDE - h);
                    let cells = (y0..y0 + h)
                        .flat_map(|y| (x0..x0 + w).map(move |x| y * GRID_SIDE + x))
                        .collect();
                    panels.insert(el.id, cells);
                }
                ElementKind::Trigger => {
                    let start = rng.gen_range(0..CELLS - HIGHLIGHT_CELLS);
                    highlights.insert(el.id, std::array::from_fn(|i| start + i));
                }
                _ => {}
            }
        }
        let world = World {
            spec,
            basis,
            grids,
            panels,
            highlights,
        };
        world.check_calibration(&SimilarityThresholds::default())?;
        Ok(world)
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension
    }

    pub fn ui_object(&self, id: ObjectId) -> Option<UIObject> {
        self.spec.element(id).map(|e| UIObject {
            id,
            name: e.name.clone(),
            reference_descriptor: format!("ref:{}", e.name),
        })
    }

    fn prototype(&self, screen: u32, skin: u32, armed: bool) -> Vec<f64> {
        let b = &self.basis;
        let group = self.spec.screens[screen as usize].group;
        let mut v = vec![0.0; self.spec.dimension];
        let mut add = |u: &[f64], w2: f64| {
            let w = w2.sqrt();
            v.iter_mut().zip(u).for_each(|(x, y)| *x += w * y);
        };
        add(&b.shared, SHARED);
        add(&b.groups[&group], GROUP);
        add(&b.screens[screen as usize], SCREEN);
        add(&b.skins[skin as usize], SKIN);
        if armed {
            add(&b.highlight, HIGHLIGHT);
        }
        v
    }

    /// Every observation is a prototype plus noise of fixed norm in a
    /// subspace orthogonal to all prototypes, so cosine bounds can be
    /// checked exactly: same prototype merges, siblings (another skin,
    /// or armed versus idle) land in the similarity band, everything
    /// else stays at or below it.
    pub fn check_calibration(&self, t: &SimilarityThresholds) -> Result<()> {
        let armed_screens: BTreeSet<u32> = self.spec.combos.iter().map(|c| c.screen).collect();
        let mut protos = Vec::new();
        for s in 0..self.spec.screens.len() as u32 {
            for k in 0..self.spec.skins {
                protos.push((s, k, false, self.prototype(s, k, false)));
                if armed_screens.contains(&s) {
                    protos.push((s, k, true, self.prototype(s, k, true)));
                }
            }
        }
        let fail = |msg: String| Err(Error::InvalidWorld(format!("embedding calibration: {msg}")));
        for (i, (s1, k1, a1, p1)) in protos.iter().enumerate() {
            let n1 = dot(p1, p1);
            let self_low = (n1 - NOISE) / (n1 + NOISE);
            if self_low <= t.merge() {
                return fail(format!("screen {s1} skin {k1} may split on noise ({self_low})"));
            }
            for (s2, k2, a2, p2) in &protos[i + 1..] {
                let n2 = dot(p2, p2);
                let d = dot(p1, p2);
                let denom = ((n1 + NOISE) * (n2 + NOISE)).sqrt();
                let (lo, hi) = ((d - NOISE) / denom, (d + NOISE) / denom);
                let sibling = s1 == s2 && ((k1 != k2) ^ (a1 != a2));
                if sibling {
                    if lo <= t.similar() || hi > t.merge() {
                        return fail(format!("siblings on screen {s1} span [{lo}, {hi}]"));
                    }
                } else if hi > t.similar() {
                    return fail(format!("screens {s1}/{s2} (skins {k1}/{k2}) reach {hi}"));
                }
            }
        }
        Ok(())
    }
}

/// What the agent sees after an action.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub step: u64,
    pub embedding: Embedding,
    pub objects: Vec<VisibleObject>,
    pub truth: GroundTruth,
    grid: Grid,
}

impl Observation {
    pub fn handle(&self) -> String {
        format!("x{}", self.step)
    }

    pub fn view(&self) -> ObservationView {
        ObservationView {
            step: self.step,
            handle: self.handle(),
            objects: self.objects.clone(),
            truth: Some(self.truth.clone()),
        }
    }

    pub fn has_object(&self, id: ObjectId) -> bool {
        self.objects.iter().any(|o| o.id == id)
    }

    /// Share of grid cells that differ.
    pub fn delta(&self, other: &Observation) -> f64 {
        let changed = self.grid.iter().zip(other.grid.iter()).filter(|(a, b)| a != b).count();
        changed as f64 / CELLS as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_observation: Observation,
    pub latent_changed: bool,
    pub delta: f64,
    pub grounding_failed: bool,
    /// Index into the milestone list, when a new one was reached.
    pub milestone_reached: Option<u32>,
    /// The run entered a screen deeper than any before.
    pub frontier: bool,
    pub actions_applied: usize,
}

/// One episode's worth of world state.
#[derive(Debug, Clone)]
pub struct Simulator {
    world: World,
    rng: ChaCha8Rng,
    screen: u32,
    skin: u32,
    armed: Option<usize>,
    panels_open: BTreeSet<ObjectId>,
    reached: BTreeSet<u32>,
    max_depth: u32,
    tick: u64,
    current: Observation,
}

impl Simulator {
    pub fn new(world: World, seed: u64) -> Simulator {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let screen = world.spec.start;
        let skin = rng.gen_range(0..world.spec.skins);
        let max_depth = world.spec.screens[screen as usize].depth;
        let placeholder = Observation {
            step: 0,
            embedding: Embedding::new(vec![1.0]).expect("nonzero"),
            objects: Vec::new(),
            truth: GroundTruth {
                screen,
                inert: vec![],
                useful: vec![],
                goal_distance: None,
            },
            grid: [0; CELLS],
        };
        let mut sim = Simulator {
            world,
            rng,
            screen,
            skin,
            armed: None,
            panels_open: BTreeSet::new(),
            reached: BTreeSet::new(),
            max_depth,
            tick: 0,
            current: placeholder,
        };
        sim.current = sim.render();
        sim
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn observation(&self) -> &Observation {
        &self.current
    }

    pub fn screen(&self) -> u32 {
        self.screen
    }

    pub fn is_armed(&self) -> bool {
        self.armed.is_some()
    }

    pub fn milestones_reached(&self) -> &BTreeSet<u32> {
        &self.reached
    }

    pub fn all_milestones_reached(&self) -> bool {
        self.reached.len() == self.world.spec.milestones.len()
    }

    fn grid(&self) -> Grid {
        let mut g = self.world.grids[self.screen as usize][self.skin as usize];
        if let Some(c) = self.armed {
            let trigger = self.world.spec.combos[c].trigger;
            for i in self.world.highlights[&trigger] {
                g[i] = HIGHLIGHT_COLOR;
            }
        }
        for p in &self.panels_open {
            for &i in &self.world.panels[p] {
                g[i] = PANEL_COLOR;
            }
        }
        g
    }

    fn render(&mut self) -> Observation {
        let dist = self.goal_distances();
        let spec = &self.world.spec;
        let mut v = self.world.prototype(self.screen, self.skin, self.armed.is_some());
        let coeffs: Vec<f64> = (0..NOISE_DIMS).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
        for (c, u) in coeffs.iter().zip(&self.world.basis.noise) {
            let w = NOISE.sqrt() * c / norm;
            v.iter_mut().zip(u).for_each(|(x, y)| *x += w * y);
        }
        let highlighted = self.armed.map(|c| spec.combos[c].trigger);
        let screen = &spec.screens[self.screen as usize];
        let objects = screen
            .elements
            .iter()
            .map(|id| {
                let el = &spec.elements[id.index()];
                VisibleObject {
                    id: *id,
                    name: el.name.clone(),
                    salience: el.salience,
                    highlighted: highlighted == Some(*id),
                }
            })
            .collect();
        let inert = screen
            .elements
            .iter()
            .copied()
            .filter(|id| matches!(spec.elements[id.index()].kind, ElementKind::NoOp | ElementKind::Cosmetic))
            .collect();
        Observation {
            step: self.tick,
            embedding: Embedding::new(v).expect("prototype is nonzero"),
            objects,
            truth: GroundTruth {
                screen: self.screen,
                inert,
                useful: self.useful(&dist),
                goal_distance: u32::try_from(dist[self.screen as usize]).ok(),
            },
            grid: self.grid(),
        }
    }

    /// Hops from every screen to the nearest unreached milestone.
    fn goal_distances(&self) -> Vec<usize> {
        let spec = &self.world.spec;
        let n = spec.screens.len();
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        for (i, m) in spec.milestones.iter().enumerate() {
            if !self.reached.contains(&(i as u32)) {
                dist[*m as usize] = 0;
                queue.push_back(*m);
            }
        }
        while let Some(s) = queue.pop_front() {
            for t in spec.transitions.iter().filter(|t| t.to == s) {
                if dist[t.screen as usize] == usize::MAX {
                    dist[t.screen as usize] = dist[s as usize] + 1;
                    queue.push_back(t.screen);
                }
            }
        }
        dist
    }

    /// Elements here whose target is one hop closer to an unreached
    /// milestone. Combo setups stay hidden.
    fn useful(&self, dist: &[usize]) -> Vec<ObjectId> {
        let spec = &self.world.spec;
        let here = dist[self.screen as usize];
        if here == usize::MAX || here == 0 {
            return Vec::new();
        }
        let mut out = Vec::new();
        for t in spec.transitions.iter().filter(|t| t.screen == self.screen) {
            if dist[t.to as usize] + 1 == here {
                out.push(t.element);
            }
        }
        out.sort();
        out.dedup();
        out
    }

    fn enter(&mut self, to: u32, milestone: &mut Option<u32>) {
        self.screen = to;
        self.skin = self.rng.gen_range(0..self.world.spec.skins);
        self.armed = None;
        self.panels_open.clear();
        if let Some(i) = self.world.spec.milestones.iter().position(|m| *m == to) {
            if self.reached.insert(i as u32) && milestone.is_none() {
                *milestone = Some(i as u32);
            }
        }
    }

    /// Run `actions` in order, stopping at the first one that cannot be
    /// grounded on the current screen.
    pub fn execute(&mut self, actions: &[AtomicAction]) -> StepOutcome {
        let before_grid = self.grid();
        let before_screen = self.screen;
        let before_depth = self.max_depth;
        let mut milestone = None;
        let mut grounding_failed = false;
        let mut applied = 0;
        for a in actions {
            let on_screen = self.world.spec.screens[self.screen as usize].elements.contains(&a.object_id);
            if !on_screen || self.rng.gen_bool(self.world.spec.grounding_failure) {
                grounding_failed = true;
                break;
            }
            applied += 1;
            let el = self.world.spec.elements[a.object_id.index()].clone();
            match el.kind {
                ElementKind::Navigate => {
                    let to = self.world.spec.transition(el.id).expect("validated");
                    self.enter(to, &mut milestone);
                }
                ElementKind::Trigger => {
                    let combo = self.world.spec.combo_of(el.id).map(|(i, _)| i);
                    if self.armed.is_some() && self.armed == combo {
                        let to = self.world.spec.transition(el.id).expect("validated");
                        self.enter(to, &mut milestone);
                    } else {
                        self.armed = None;
                    }
                }
                ElementKind::Setup => {
                    self.armed = self.world.spec.combo_of(el.id).map(|(i, _)| i);
                }
                ElementKind::Cosmetic => {
                    self.armed = None;
                    if !self.panels_open.remove(&el.id) {
                        self.panels_open.insert(el.id);
                    }
                }
                ElementKind::NoOp => self.armed = None,
            }
            let depth = self.world.spec.screens[self.screen as usize].depth;
            self.max_depth = self.max_depth.max(depth);
        }
        self.tick += 1;
        self.current = self.render();
        let delta = {
            let after = self.grid();
            before_grid.iter().zip(after.iter()).filter(|(a, b)| a != b).count() as f64 / CELLS as f64
        };
        StepOutcome {
            next_observation: self.current.clone(),
            latent_changed: self.screen != before_screen,
            delta,
            grounding_failed,
            milestone_reached: milestone,
            frontier: self.max_depth > before_depth,
            actions_applied: applied,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{generate_world, Profile};
    use super::*;
    use crate::embedding::cosine;

    fn click(id: ObjectId) -> AtomicAction {
        AtomicAction::click(id, "x")
    }

    fn sim(profile: Profile, seed: u64) -> Simulator {
        let mut world = generate_world(profile, seed).unwrap();
        world.spec.grounding_failure = 0.0;
        Simulator::new(world, 1)
    }

    fn element_of(sim: &Simulator, kind: ElementKind) -> Option<ObjectId> {
        let spec = sim.world().spec();
        spec.screens[sim.screen() as usize]
            .elements
            .iter()
            .copied()
            .find(|e| spec.elements[e.index()].kind == kind)
    }

    #[test]
    fn noop_changes_nothing() {
        let mut s = sim(Profile::Linear, 3);
        let before = s.observation().clone();
        let noop = element_of(&s, ElementKind::NoOp).unwrap();
        let out = s.execute(&[click(noop)]);
        assert!(!out.latent_changed && !out.grounding_failed);
        assert_eq!(out.delta, 0.0);
        assert_eq!(out.milestone_reached, None);
        assert!(cosine(&before.embedding, &out.next_observation.embedding).unwrap() > 0.95);
    }

    #[test]
    fn missing_object_is_a_grounding_failure() {
        let mut s = sim(Profile::Linear, 3);
        let screen = s.screen();
        let out = s.execute(&[click(ObjectId(9999))]);
        assert!(out.grounding_failed);
        assert_eq!((s.screen(), out.delta, out.actions_applied), (screen, 0.0, 0));
    }

    #[test]
    fn cosmetic_is_loud_but_goes_nowhere() {
        let mut s = sim(Profile::Linear, 3);
        let c = element_of(&s, ElementKind::Cosmetic).unwrap();
        let out = s.execute(&[click(c)]);
        assert!(!out.latent_changed);
        assert!(out.delta >= 20.0 / 256.0);
        let out = s.execute(&[click(c)]);
        assert!(out.delta >= 20.0 / 256.0);
    }

    #[test]
    fn forward_navigation_changes_screen() {
        let mut s = sim(Profile::Linear, 3);
        let fwd = s.world().spec().progressing_elements(s.screen())[0];
        let out = s.execute(&[click(fwd)]);
        assert!(out.latent_changed && out.frontier);
        assert!(out.delta > 0.5);
    }

    #[test]
    fn combo_needs_setup_first() {
        let mut s = sim(Profile::ComboHeavy, 7);
        let spec = s.world().spec().clone();
        let combo = spec.combos[0];
        // walk to the combo screen along forward edges
        while s.screen() != combo.screen {
            let fwd = spec.progressing_elements(s.screen());
            let step = fwd
                .iter()
                .copied()
                .find(|e| spec.elements[e.index()].kind == ElementKind::Navigate)
                .unwrap();
            s.execute(&[click(step)]);
        }
        let idle = s.execute(&[click(combo.trigger)]);
        assert!(!idle.latent_changed);
        assert_eq!(idle.delta, 0.0);

        let armed = s.execute(&[click(combo.setup)]);
        assert!(!armed.latent_changed);
        assert!(armed.delta > 0.0 && armed.delta < 0.05);
        assert!(armed.next_observation.objects.iter().any(|o| o.highlighted && o.id == combo.trigger));
        let fired = s.execute(&[click(combo.trigger)]);
        assert!(fired.latent_changed);
        assert!(fired.milestone_reached.is_some());

        let mut s2 = sim(Profile::ComboHeavy, 7);
        while s2.screen() != combo.screen {
            let fwd = spec.progressing_elements(s2.screen());
            let step = fwd
                .iter()
                .copied()
                .find(|e| spec.elements[e.index()].kind == ElementKind::Navigate)
                .unwrap();
            s2.execute(&[click(step)]);
        }
        let both = s2.execute(&[click(combo.setup), click(combo.trigger)]);
        assert!(both.latent_changed && both.milestone_reached.is_some());
    }

    #[test]
    fn calibration_holds_for_all_profiles() {
        for p in Profile::ALL {
            for seed in 0..5 {
                let w = generate_world(p, seed).unwrap();
                w.check_calibration(&SimilarityThresholds::default()).unwrap();
            }
        }
    }

    #[test]
    fn too_small_dimension_is_rejected() {
        let mut spec = generate_world(Profile::Linear, 0).unwrap().spec().clone();
        spec.dimension = 8;
        assert!(matches!(World::new(spec), Err(Error::InvalidWorld(_))));
    }
}

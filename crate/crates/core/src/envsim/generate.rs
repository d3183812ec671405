use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ComboSpec, ElementKind, ElementSpec, Profile, ScreenSpec, TransitionSpec, World, WorldSpec, WORLD_FORMAT_VERSION};
use crate::embedding::DEFAULT_DIMENSION;
use crate::error::Result;
use crate::ids::ObjectId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Screens along the main line, start included.
    pub chain_len: u32,
    pub milestone_every: u32,
    pub skins: u32,
    pub dimension: usize,
    pub grounding_failure: f64,
    /// Every n-th main-line screen gets a dead-end side screen.
    pub pocket_every: u32,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            chain_len: 13,
            milestone_every: 3,
            skins: 3,
            dimension: DEFAULT_DIMENSION,
            grounding_failure: 0.05,
            pocket_every: 2,
        }
    }
}

pub fn generate_world(profile: Profile, seed: u64) -> Result<World> {
    generate_with(profile, seed, &GeneratorParams::default())
}

/// Name, kind, salience range and transition target of an element not yet
/// placed.
type PendingElement = (String, ElementKind, (f64, f64), Option<u32>);

struct Builder {
    rng: ChaCha8Rng,
    screens: Vec<ScreenSpec>,
    elements: Vec<ElementSpec>,
    transitions: Vec<TransitionSpec>,
    pending: Vec<Vec<PendingElement>>,
}

impl Builder {
    fn screen(&mut self, name: String, group: u32, depth: u32) -> u32 {
        let id = self.screens.len() as u32;
        self.screens.push(ScreenSpec {
            id,
            name,
            group,
            depth,
            elements: Vec::new(),
        });
        self.pending.push(Vec::new());
        id
    }

    fn element(&mut self, screen: u32, name: &str, kind: ElementKind, salience: (f64, f64), to: Option<u32>) {
        self.pending[screen as usize].push((format!("{name}@{screen}"), kind, salience, to));
    }

    /// Assign ids screen by screen in shuffled order so an id says
    /// nothing about an element's role.
    fn finish(mut self) -> (Vec<ScreenSpec>, Vec<ElementSpec>, Vec<TransitionSpec>, ChaCha8Rng) {
        for s in 0..self.screens.len() {
            let mut items = std::mem::take(&mut self.pending[s]);
            items.shuffle(&mut self.rng);
            for (name, kind, (lo, hi), to) in items {
                let id = ObjectId(self.elements.len() as u32);
                let salience = self.rng.gen_range(lo..hi);
                self.elements.push(ElementSpec {
                    id,
                    name,
                    screen: s as u32,
                    kind,
                    salience,
                });
                self.screens[s].elements.push(id);
                if let Some(to) = to {
                    self.transitions.push(TransitionSpec {
                        screen: s as u32,
                        element: id,
                        to,
                    });
                }
            }
        }
        (self.screens, self.elements, self.transitions, self.rng)
    }
}

const COSMETIC: (f64, f64) = (0.75, 0.9);
const FORWARD: (f64, f64) = (0.55, 0.7);
const SIDE: (f64, f64) = (0.5, 0.65);
const BACK: (f64, f64) = (0.4, 0.55);
const NOOP: (f64, f64) = (0.3, 0.45);
const SETUP: (f64, f64) = (0.15, 0.25);
const TRIGGER: (f64, f64) = (0.5, 0.65);

pub fn generate_with(profile: Profile, seed: u64, params: &GeneratorParams) -> Result<World> {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        screens: Vec::new(),
        elements: Vec::new(),
        transitions: Vec::new(),
        pending: Vec::new(),
    };
    let n = params.chain_len.max(2);
    let every = params.milestone_every.max(1);
    let chain: Vec<u32> = (0..n).map(|i| b.screen(format!("screen{i}"), i / every, i)).collect();
    let milestones: Vec<u32> = (1..n).filter(|i| i % every == 0).collect();
    let guarded = |i: u32| profile == Profile::ComboHeavy && milestones.contains(&(i + 1));
    let branching = profile == Profile::Branching;

    let mut combos = Vec::new();
    for i in 0..n {
        let here = chain[i as usize];
        b.element(here, "banner", ElementKind::Cosmetic, COSMETIC, None);
        b.element(here, "label", ElementKind::NoOp, NOOP, None);
        if i + 1 < n {
            if guarded(i) {
                b.element(here, "select", ElementKind::Setup, SETUP, None);
                b.element(here, "confirm", ElementKind::Trigger, TRIGGER, Some(chain[i as usize + 1]));
                b.element(here, "tooltip", ElementKind::Cosmetic, COSMETIC, None);
                combos.push(here);
            } else {
                b.element(here, "next", ElementKind::Navigate, FORWARD, Some(chain[i as usize + 1]));
            }
        }
        if branching && i > 0 {
            b.element(here, "back", ElementKind::Navigate, BACK, Some(chain[i as usize - 1]));
        }
        // combo screens never get a side exit
        let pocketed = branching || (profile == Profile::ComboHeavy && !guarded(i));
        if pocketed && params.pocket_every > 0 && i % params.pocket_every == 1 {
            let pocket = b.screen(format!("side{i}"), i / every, i);
            b.element(here, "side", ElementKind::Navigate, SIDE, Some(pocket));
            b.element(pocket, "return", ElementKind::Navigate, BACK, Some(here));
            b.element(pocket, "banner", ElementKind::Cosmetic, COSMETIC, None);
            b.element(pocket, "label", ElementKind::NoOp, NOOP, None);
        }
    }

    let (screens, elements, transitions, _) = b.finish();
    let combos = combos
        .into_iter()
        .map(|screen| {
            let find = |kind| {
                screens[screen as usize]
                    .elements
                    .iter()
                    .copied()
                    .find(|e| elements[e.index()].kind == kind)
                    .expect("combo elements were added")
            };
            ComboSpec {
                screen,
                setup: find(ElementKind::Setup),
                trigger: find(ElementKind::Trigger),
            }
        })
        .collect();
    let spec = WorldSpec {
        format_version: WORLD_FORMAT_VERSION,
        seed,
        profile: Some(profile),
        start: chain[0],
        skins: params.skins,
        dimension: params.dimension,
        grounding_failure: params.grounding_failure,
        screens,
        elements,
        transitions,
        milestones,
        combos,
    };
    World::new(spec)
}

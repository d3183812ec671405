//! Deterministic synthetic GUI world: latent screens with skins,
//! interactable elements, hidden two-step combos, a 16x16 abstract grid
//! for visual change, and embeddings calibrated against the graph's
//! similarity thresholds.

mod generate;
mod sim;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::ObjectId;

pub use generate::{generate_with, generate_world, GeneratorParams};
pub use sim::{Observation, Simulator, StepOutcome, World, GRID_SIDE};

pub const WORLD_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    Linear,
    Branching,
    ComboHeavy,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::Linear, Profile::Branching, Profile::ComboHeavy];

    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Linear => "linear",
            Profile::Branching => "branching",
            Profile::ComboHeavy => "combo-heavy",
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Profile::Linear),
            "branching" => Ok(Profile::Branching),
            "combo-heavy" | "combo_heavy" => Ok(Profile::ComboHeavy),
            other => Err(Error::UnknownProfile(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    /// Moves to the screen given by its transition.
    Navigate,
    /// Does nothing visible.
    NoOp,
    /// Toggles a large panel; the screen stays put.
    Cosmetic,
    /// Arms its combo and highlights the trigger. Small visual change.
    Setup,
    /// Fires its transition only while its combo is armed.
    Trigger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenSpec {
    pub id: u32,
    pub name: String,
    /// Screens in one group share part of their embedding.
    pub group: u32,
    /// Distance along the main line; used to detect new ground.
    pub depth: u32,
    pub elements: Vec<ObjectId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElementSpec {
    pub id: ObjectId,
    pub name: String,
    pub screen: u32,
    pub kind: ElementKind,
    pub salience: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub screen: u32,
    pub element: ObjectId,
    pub to: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComboSpec {
    pub screen: u32,
    pub setup: ObjectId,
    pub trigger: ObjectId,
}

/// Serializable world description, generated or hand-authored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub format_version: u64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<Profile>,
    pub start: u32,
    /// Visual variants per screen.
    pub skins: u32,
    pub dimension: usize,
    /// Chance that resolving any single action fails.
    pub grounding_failure: f64,
    pub screens: Vec<ScreenSpec>,
    pub elements: Vec<ElementSpec>,
    pub transitions: Vec<TransitionSpec>,
    pub milestones: Vec<u32>,
    #[serde(default)]
    pub combos: Vec<ComboSpec>,
}

impl WorldSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: WorldSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn element(&self, id: ObjectId) -> Option<&ElementSpec> {
        self.elements.get(id.index()).filter(|e| e.id == id)
    }

    pub fn transition(&self, element: ObjectId) -> Option<u32> {
        self.transitions.iter().find(|t| t.element == element).map(|t| t.to)
    }

    pub fn combo_of(&self, element: ObjectId) -> Option<(usize, &ComboSpec)> {
        self.combos
            .iter()
            .enumerate()
            .find(|(_, c)| c.setup == element || c.trigger == element)
    }

    /// Elements that move to a deeper screen, per screen.
    pub fn progressing_elements(&self, screen: u32) -> Vec<ObjectId> {
        let depth = self.screens[screen as usize].depth;
        self.screens[screen as usize]
            .elements
            .iter()
            .copied()
            .filter(|e| self.transition(*e).is_some_and(|to| self.screens[to as usize].depth > depth))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidWorld(msg));
        if self.format_version > WORLD_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: WORLD_FORMAT_VERSION,
            });
        }
        if self.screens.is_empty() {
            return bad("no screens".into());
        }
        if self.skins == 0 {
            return bad("skins must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.grounding_failure) {
            return bad(format!("grounding_failure {} outside [0, 1)", self.grounding_failure));
        }
        let n = self.screens.len() as u32;
        for (i, s) in self.screens.iter().enumerate() {
            if s.id as usize != i {
                return bad(format!("screen at position {i} has id {}", s.id));
            }
            for e in &s.elements {
                match self.element(*e) {
                    Some(el) if el.screen == s.id => {}
                    _ => return bad(format!("screen {} lists {e} which is not its element", s.id)),
                }
            }
        }
        if self.start >= n {
            return bad(format!("start screen {} does not exist", self.start));
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.id.index() != i {
                return bad(format!("element at position {i} has id {}", e.id));
            }
            if e.screen >= n || !self.screens[e.screen as usize].elements.contains(&e.id) {
                return bad(format!("{} is not listed on screen {}", e.id, e.screen));
            }
            if !(0.0..=1.0).contains(&e.salience) {
                return bad(format!("{} salience {} outside [0, 1]", e.id, e.salience));
            }
        }
        let mut seen = BTreeSet::new();
        for t in &self.transitions {
            let Some(el) = self.element(t.element) else {
                return bad(format!("transition from unknown {}", t.element));
            };
            if el.screen != t.screen {
                return bad(format!("transition lists {} on screen {} but it lives on {}", t.element, t.screen, el.screen));
            }
            if t.to >= n {
                return bad(format!("transition target {} does not exist", t.to));
            }
            if !matches!(el.kind, ElementKind::Navigate | ElementKind::Trigger) {
                return bad(format!("{} is {:?} and cannot have a transition", el.id, el.kind));
            }
            if !seen.insert(t.element) {
                return bad(format!("{} has two transitions", t.element));
            }
        }
        for el in &self.elements {
            if matches!(el.kind, ElementKind::Navigate | ElementKind::Trigger) && !seen.contains(&el.id) {
                return bad(format!("{} needs a transition", el.id));
            }
        }
        if self.milestones.is_empty() {
            return bad("milestone list is empty".into());
        }
        let mut ms = BTreeSet::new();
        for m in &self.milestones {
            if *m >= n || !ms.insert(*m) {
                return bad(format!("milestone screen {m} is unknown or repeated"));
            }
        }
        let mut combo_elems = BTreeMap::new();
        for (i, c) in self.combos.iter().enumerate() {
            for (id, kind) in [(c.setup, ElementKind::Setup), (c.trigger, ElementKind::Trigger)] {
                match self.element(id) {
                    Some(el) if el.kind == kind && el.screen == c.screen => {}
                    _ => return bad(format!("combo {i}: {id} is not a {kind:?} on screen {}", c.screen)),
                }
                if combo_elems.insert(id, i).is_some() {
                    return bad(format!("{id} belongs to several combos"));
                }
            }
        }
        for el in &self.elements {
            if matches!(el.kind, ElementKind::Setup | ElementKind::Trigger) && !combo_elems.contains_key(&el.id) {
                return bad(format!("{} is a {:?} outside any combo", el.id, el.kind));
            }
        }
        Ok(())
    }
}

/// Ground-truth run metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub progression: usize,
    pub responsive_rate: f64,
    pub oracle_cost: u64,
}

/// Progression is the number of distinct milestones reached. The
/// responsive rate is the share of executions that changed the screen,
/// 1.0 when nothing ran.
pub fn metrics(trace: &crate::engine::EpisodeTrace) -> Metrics {
    let mut milestones = BTreeSet::new();
    let mut executed = 0usize;
    let mut responsive = 0usize;
    for step in &trace.steps {
        for x in &step.executions {
            executed += 1;
            if x.outcome.latent_changed {
                responsive += 1;
            }
            if let Some(m) = x.outcome.milestone {
                milestones.insert(m);
            }
        }
    }
    Metrics {
        progression: milestones.len(),
        responsive_rate: if executed == 0 { 1.0 } else { responsive as f64 / executed as f64 },
        oracle_cost: trace.summary.as_ref().map_or(0, |s| s.oracle_cost),
    }
}

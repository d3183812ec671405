//! The vision-language model behind four request kinds. Backends speak
//! [`OracleRequest`]/[`OracleResponse`]; [`Oracle`] wraps a backend with
//! contract checks, retries and cost accounting.

mod remote;
mod scripted;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OracleError, Result};
use crate::ids::{ObjectId, SkillId};
use crate::memory::{AtomicAction, Operation};

pub use remote::{RemoteConfig, RemoteOracle, DEADLINE_VAR, RETRIES_VAR, URL_VAR};
pub use scripted::{Persona, ScriptedOracle};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    Invoke,
    Augment,
    Refine,
    Evaluate,
}

impl RequestKind {
    pub const ALL: [RequestKind; 4] = [
        RequestKind::Invoke,
        RequestKind::Augment,
        RequestKind::Refine,
        RequestKind::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::Invoke => "invoke",
            RequestKind::Augment => "augment",
            RequestKind::Refine => "refine",
            RequestKind::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for RequestKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An interactable element as the model sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub id: ObjectId,
    pub name: String,
    /// How visually prominent the element is, in [0, 1].
    pub salience: f64,
    #[serde(default)]
    pub highlighted: bool,
}

/// Simulator annotations. Real screens carry none; scripted personae
/// read them to stand in for a model's judgement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub screen: u32,
    /// Elements whose activation never changes the screen.
    pub inert: Vec<ObjectId>,
    /// Elements on a shortest route to the nearest unreached milestone.
    #[serde(default)]
    pub useful: Vec<ObjectId>,
    /// Screen hops to the nearest unreached milestone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_distance: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationView {
    pub step: u64,
    /// Opaque screenshot handle.
    pub handle: String,
    pub objects: Vec<VisibleObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<GroundTruth>,
}

impl ObservationView {
    pub fn has_object(&self, id: ObjectId) -> bool {
        self.objects.iter().any(|o| o.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillView {
    pub id: SkillId,
    pub name: String,
    pub descriptor: String,
    pub actions: Vec<AtomicAction>,
    pub fitness: f64,
}

/// What happened when a sequence ran, as reported to the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub delta: f64,
    pub screen_changed: bool,
    pub grounding_failed: bool,
    /// Set when the transition advanced the run to a milestone it had not
    /// reached before.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub milestone: Option<u32>,
    /// Set when the transition entered a screen deeper than any reached so
    /// far in the run.
    #[serde(default)]
    pub frontier: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub actions: Vec<AtomicAction>,
    pub outcome: TransitionSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum OracleRequest {
    Invoke {
        observation: ObservationView,
        library: Vec<SkillView>,
    },
    Augment {
        observation: ObservationView,
        operations: Vec<Operation>,
        objects: Vec<ObjectId>,
        /// Validated prefix the proposed action will be appended to.
        prefix: Vec<AtomicAction>,
        /// Objects already proposed as first actions at this state.
        tried: Vec<ObjectId>,
    },
    Refine {
        observation: ObservationView,
        skill: SkillView,
        trajectory: Vec<TrajectoryStep>,
    },
    Evaluate {
        before: ObservationView,
        after: ObservationView,
        actions: Vec<AtomicAction>,
        outcome: TransitionSummary,
    },
}

impl OracleRequest {
    pub fn kind(&self) -> RequestKind {
        match self {
            OracleRequest::Invoke { .. } => RequestKind::Invoke,
            OracleRequest::Augment { .. } => RequestKind::Augment,
            OracleRequest::Refine { .. } => RequestKind::Refine,
            OracleRequest::Evaluate { .. } => RequestKind::Evaluate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum OracleResponse {
    Invoke {
        skill_ids: Vec<SkillId>,
    },
    Augment {
        action: AtomicAction,
        descriptor: String,
    },
    Refine {
        actions: Vec<AtomicAction>,
        descriptor: String,
    },
    Evaluate {
        progress: f64,
        semantics: f64,
        #[serde(default)]
        rationale: String,
    },
}

impl OracleResponse {
    pub fn kind(&self) -> RequestKind {
        match self {
            OracleResponse::Invoke { .. } => RequestKind::Invoke,
            OracleResponse::Augment { .. } => RequestKind::Augment,
            OracleResponse::Refine { .. } => RequestKind::Refine,
            OracleResponse::Evaluate { .. } => RequestKind::Evaluate,
        }
    }
}

/// Wire envelope: `{format_version, kind, payload, cost_units}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format_version: u64,
    #[serde(flatten)]
    pub body: T,
    #[serde(default)]
    pub cost_units: u64,
}

/// A backend answers one request with a response and its cost.
pub trait OracleBackend {
    fn call(&mut self, request: &OracleRequest) -> Result<(OracleResponse, u64), OracleError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OracleUsage {
    pub calls: u64,
    pub failures: u64,
    pub cost_units: u64,
}

/// Contract-checking front end over any backend.
pub struct Oracle {
    backend: Box<dyn OracleBackend>,
    max_retries: u32,
    usage: OracleUsage,
}

/// Either a checked answer or a fallback after transport retries ran out.
pub type Answer<T> = Option<T>;

impl Oracle {
    pub fn new(backend: Box<dyn OracleBackend>, max_retries: u32) -> Self {
        Oracle {
            backend,
            max_retries,
            usage: OracleUsage::default(),
        }
    }

    pub fn scripted(persona: Persona, seed: u64) -> Self {
        Oracle::new(Box::new(ScriptedOracle::new(persona, seed)), 0)
    }

    pub fn cost_total(&self) -> u64 {
        self.usage.cost_units
    }

    pub fn usage(&self) -> OracleUsage {
        self.usage
    }

    /// Transport failures are retried and then degrade to `None`.
    /// Protocol violations are retried and then returned as errors.
    fn exchange<T>(
        &mut self,
        request: &OracleRequest,
        check: impl Fn(OracleResponse) -> Result<T, OracleError>,
    ) -> Result<Answer<T>, OracleError> {
        let mut last = None;
        for _ in 0..=self.max_retries {
            self.usage.calls += 1;
            let outcome = self.backend.call(request).and_then(|(resp, cost)| {
                if resp.kind() != request.kind() {
                    return Err(OracleError::Protocol(format!(
                        "asked for {} but got {}",
                        request.kind(),
                        resp.kind()
                    )));
                }
                check(resp).map(|v| (v, cost))
            });
            match outcome {
                Ok((v, cost)) => {
                    self.usage.cost_units += cost;
                    return Ok(Some(v));
                }
                Err(e) => {
                    self.usage.failures += 1;
                    last = Some(e);
                }
            }
        }
        match last {
            Some(e) if e.is_retriable() => Ok(None),
            Some(e) => Err(e),
            None => Ok(None),
        }
    }

    /// Candidate skills drawn from `library`.
    pub fn invoke(&mut self, observation: &ObservationView, library: &[SkillView]) -> Result<Vec<SkillId>, OracleError> {
        if library.is_empty() {
            return Ok(Vec::new());
        }
        let offered: BTreeSet<SkillId> = library.iter().map(|s| s.id).collect();
        let request = OracleRequest::Invoke {
            observation: observation.clone(),
            library: library.to_vec(),
        };
        let answer = self.exchange(&request, |resp| match resp {
            OracleResponse::Invoke { skill_ids } => {
                let mut seen = BTreeSet::new();
                for id in &skill_ids {
                    if !offered.contains(id) {
                        return Err(OracleError::Protocol(format!("skill {id} was not offered")));
                    }
                    if !seen.insert(*id) {
                        return Err(OracleError::Protocol(format!("skill {id} listed twice")));
                    }
                }
                Ok(skill_ids)
            }
            _ => unreachable!("kind checked by exchange"),
        })?;
        Ok(answer.unwrap_or_default())
    }

    pub fn augment(
        &mut self,
        observation: &ObservationView,
        operations: &[Operation],
        prefix: &[AtomicAction],
        tried: &[ObjectId],
    ) -> Result<Answer<(AtomicAction, String)>, OracleError> {
        let objects: Vec<ObjectId> = observation.objects.iter().map(|o| o.id).collect();
        if objects.is_empty() || operations.is_empty() {
            return Ok(None);
        }
        let request = OracleRequest::Augment {
            observation: observation.clone(),
            operations: operations.to_vec(),
            objects: objects.clone(),
            prefix: prefix.to_vec(),
            tried: tried.to_vec(),
        };
        self.exchange(&request, |resp| match resp {
            OracleResponse::Augment { action, descriptor } => {
                if !objects.contains(&action.object_id) {
                    return Err(OracleError::Protocol(format!("object {} was not offered", action.object_id)));
                }
                if !operations.contains(&action.operate) {
                    return Err(OracleError::Protocol(format!("operation {:?} was not offered", action.operate)));
                }
                Ok((action, nonempty(descriptor, "augmented action")))
            }
            _ => unreachable!("kind checked by exchange"),
        })
    }

    pub fn refine(
        &mut self,
        observation: &ObservationView,
        skill: &SkillView,
        trajectory: &[TrajectoryStep],
    ) -> Result<Answer<(Vec<AtomicAction>, String)>, OracleError> {
        let known: BTreeSet<ObjectId> = skill
            .actions
            .iter()
            .map(|a| a.object_id)
            .chain(observation.objects.iter().map(|o| o.id))
            .collect();
        let request = OracleRequest::Refine {
            observation: observation.clone(),
            skill: skill.clone(),
            trajectory: trajectory.to_vec(),
        };
        self.exchange(&request, |resp| match resp {
            OracleResponse::Refine { actions, descriptor } => {
                if actions.is_empty() {
                    return Err(OracleError::Protocol("refined skill has no actions".into()));
                }
                if let Some(a) = actions.iter().find(|a| !known.contains(&a.object_id)) {
                    return Err(OracleError::Protocol(format!("refined action targets unknown {}", a.object_id)));
                }
                Ok((actions, nonempty(descriptor, &skill.descriptor)))
            }
            _ => unreachable!("kind checked by exchange"),
        })
    }

    /// `(progress, semantics)`, both in [0, 1].
    pub fn evaluate(
        &mut self,
        before: &ObservationView,
        after: &ObservationView,
        actions: &[AtomicAction],
        outcome: &TransitionSummary,
    ) -> Result<Answer<(f64, f64)>, OracleError> {
        let request = OracleRequest::Evaluate {
            before: before.clone(),
            after: after.clone(),
            actions: actions.to_vec(),
            outcome: outcome.clone(),
        };
        self.exchange(&request, |resp| match resp {
            OracleResponse::Evaluate { progress, semantics, .. } => {
                for (name, v) in [("progress", progress), ("semantics", semantics)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(OracleError::Protocol(format!("{name} score {v} outside [0, 1]")));
                    }
                }
                Ok((progress, semantics))
            }
            _ => unreachable!("kind checked by exchange"),
        })
    }
}

fn nonempty(text: String, fallback: &str) -> String {
    if text.trim().is_empty() {
        if fallback.trim().is_empty() {
            "unnamed".to_string()
        } else {
            fallback.to_string()
        }
    } else {
        text
    }
}

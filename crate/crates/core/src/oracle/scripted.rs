use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ObservationView, OracleBackend, OracleRequest, OracleResponse, TransitionSummary};
use crate::error::{Error, OracleError};
use crate::ids::ObjectId;
use crate::memory::{AtomicAction, Operation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Persona {
    /// Reads the simulator's annotations.
    Perfect,
    /// Perfect, with seeded jitter of up to 0.2 on evaluation scores.
    Noisy,
    /// Uniformly random, contract-respecting answers.
    Adversarial,
}

impl FromStr for Persona {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "perfect" => Ok(Persona::Perfect),
            "noisy" => Ok(Persona::Noisy),
            "adversarial" => Ok(Persona::Adversarial),
            other => Err(Error::Config(format!("unknown oracle persona `{other}`"))),
        }
    }
}

impl Persona {
    pub fn as_str(self) -> &'static str {
        match self {
            Persona::Perfect => "perfect",
            Persona::Noisy => "noisy",
            Persona::Adversarial => "adversarial",
        }
    }
}

const JITTER: f64 = 0.2;

/// Deterministic oracle: every answer is a function of the persona, the
/// seed and the request bytes. Charges one unit per call.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    persona: Persona,
    seed: u64,
}

impl ScriptedOracle {
    pub fn new(persona: Persona, seed: u64) -> Self {
        ScriptedOracle { persona, seed }
    }

    fn rng_for(&self, request: &OracleRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(self.persona.as_str().as_bytes());
        // serializing plain data cannot fail
        h.update(serde_json::to_vec(request).expect("request serializes"));
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    pub fn answer(&self, request: &OracleRequest) -> OracleResponse {
        let mut rng = self.rng_for(request);
        match self.persona {
            Persona::Perfect => perfect(request),
            Persona::Noisy => match perfect(request) {
                OracleResponse::Evaluate {
                    progress,
                    semantics,
                    rationale,
                } => OracleResponse::Evaluate {
                    progress: jitter(progress, &mut rng),
                    semantics: jitter(semantics, &mut rng),
                    rationale,
                },
                other => other,
            },
            Persona::Adversarial => adversarial(request, &mut rng),
        }
    }
}

impl OracleBackend for ScriptedOracle {
    fn call(&mut self, request: &OracleRequest) -> Result<(OracleResponse, u64), OracleError> {
        Ok((self.answer(request), 1))
    }
}

fn jitter(v: f64, rng: &mut impl Rng) -> f64 {
    (v + rng.gen_range(-JITTER..=JITTER)).clamp(0.0, 1.0)
}

fn inert(obs: &ObservationView) -> &[ObjectId] {
    obs.truth.as_ref().map_or(&[], |t| t.inert.as_slice())
}

fn describe(actions: &[AtomicAction]) -> String {
    let names: Vec<&str> = actions.iter().map(|a| a.object_name.as_str()).collect();
    format!("press {}", names.join(" then "))
}

fn perfect(request: &OracleRequest) -> OracleResponse {
    match request {
        OracleRequest::Invoke { observation, library } => OracleResponse::Invoke {
            skill_ids: library
                .iter()
                .filter(|s| s.actions.first().is_some_and(|a| observation.has_object(a.object_id)))
                .map(|s| s.id)
                .collect(),
        },
        OracleRequest::Augment {
            observation,
            operations,
            objects,
            prefix,
            tried,
        } => {
            let offered = |id: ObjectId| objects.contains(&id);
            let in_prefix = |id: ObjectId| prefix.iter().any(|a| a.object_id == id);
            let useful = |id: ObjectId| observation.truth.as_ref().is_some_and(|t| t.useful.contains(&id));
            let mut ranked: Vec<_> = observation.objects.iter().filter(|o| offered(o.id)).collect();
            ranked.sort_by(|a, b| {
                b.highlighted
                    .cmp(&a.highlighted)
                    .then(useful(b.id).cmp(&useful(a.id)))
                    .then(b.salience.total_cmp(&a.salience))
                    .then(a.id.cmp(&b.id))
            });
            let fresh = |o: &&&super::VisibleObject| {
                !in_prefix(o.id) && (!prefix.is_empty() || !tried.contains(&o.id))
            };
            let pick = ranked
                .iter()
                .find(fresh)
                .or_else(|| ranked.iter().find(|o| !in_prefix(o.id)))
                .or(ranked.first())
                .copied();
            let (id, name) = match pick {
                Some(o) => (o.id, o.name.clone()),
                None => (objects[0], String::new()),
            };
            let operate = if operations.contains(&Operation::Click) {
                Operation::Click
            } else {
                operations[0]
            };
            let action = AtomicAction {
                operate,
                object_id: id,
                object_name: name,
                payload: None,
            };
            let mut seq = prefix.clone();
            seq.push(action.clone());
            OracleResponse::Augment {
                descriptor: describe(&seq),
                action,
            }
        }
        OracleRequest::Refine { observation, skill, .. } => {
            let dead = inert(observation);
            let kept: Vec<AtomicAction> = skill
                .actions
                .iter()
                .filter(|a| !dead.contains(&a.object_id))
                .cloned()
                .collect();
            let actions = if kept.is_empty() { skill.actions.clone() } else { kept };
            OracleResponse::Refine {
                descriptor: describe(&actions),
                actions,
            }
        }
        OracleRequest::Evaluate {
            before, after, outcome, ..
        } => {
            let closer = match (goal(before), goal(after)) {
                (Some(b), Some(a)) => Some(a < b),
                _ => None,
            };
            let (progress, semantics) = perfect_scores(outcome, closer);
            OracleResponse::Evaluate {
                progress,
                semantics,
                rationale: String::new(),
            }
        }
    }
}

fn goal(obs: &ObservationView) -> Option<u32> {
    obs.truth.as_ref().and_then(|t| t.goal_distance)
}

/// Progress: 1 for a new milestone, 0.5 for a step toward the next one.
/// Semantics: 1 for a screen change, 0.3 if it led away from the goal,
/// the visual change when the screen stayed put. Without goal
/// annotations, reaching new ground counts as a step toward the goal.
pub(crate) fn perfect_scores(outcome: &TransitionSummary, closer: Option<bool>) -> (f64, f64) {
    if outcome.grounding_failed {
        return (0.0, 0.0);
    }
    let toward = closer.unwrap_or(outcome.frontier);
    let progress = if outcome.milestone.is_some() {
        1.0
    } else if toward {
        0.5
    } else {
        0.0
    };
    let semantics = match (outcome.screen_changed, closer) {
        (true, Some(false)) if outcome.milestone.is_none() => 0.3,
        (true, _) => 1.0,
        (false, _) => outcome.delta.clamp(0.0, 1.0),
    };
    (progress, semantics)
}

fn adversarial(request: &OracleRequest, rng: &mut ChaCha8Rng) -> OracleResponse {
    match request {
        OracleRequest::Invoke { library, .. } => OracleResponse::Invoke {
            skill_ids: library.iter().filter(|_| rng.gen_bool(0.5)).map(|s| s.id).collect(),
        },
        OracleRequest::Augment {
            observation,
            operations,
            objects,
            ..
        } => {
            let id = *objects.choose(rng).expect("augment offers objects");
            let name = observation
                .objects
                .iter()
                .find(|o| o.id == id)
                .map_or_else(String::new, |o| o.name.clone());
            let operate = *operations.choose(rng).expect("augment offers operations");
            let payload = (operate == Operation::Type).then(|| format!("t{}", rng.gen_range(0..100)));
            OracleResponse::Augment {
                action: AtomicAction {
                    operate,
                    object_id: id,
                    object_name: name,
                    payload,
                },
                descriptor: "try something".into(),
            }
        }
        OracleRequest::Refine { skill, .. } => {
            let mut actions = skill.actions.clone();
            actions.shuffle(rng);
            let keep = rng.gen_range(1..=actions.len());
            actions.truncate(keep);
            OracleResponse::Refine {
                descriptor: "reshuffled".into(),
                actions,
            }
        }
        OracleRequest::Evaluate { .. } => OracleResponse::Evaluate {
            progress: rng.gen_range(0.0..=1.0),
            semantics: rng.gen_range(0.0..=1.0),
            rationale: "coin flip".into(),
        },
    }
}

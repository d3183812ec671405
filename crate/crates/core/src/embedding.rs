//! State feature vectors and the cosine-threshold classifier used for
//! node merging and similarity linking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DIMENSION: usize = 64;

/// A nonzero, finite feature vector.
///
/// Vectors are stored as given; normalisation happens inside [`cosine`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Contract("embedding has no components".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("embedding has a non-finite component".into()));
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(Error::Contract("embedding is the zero vector".into()));
        }
        Ok(Embedding(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Cosine similarity of two embeddings of equal dimension.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Contract(format!(
            "dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let sim = dot / (a.norm() * b.norm());
    // rounding can push |sim| a hair past 1
    Ok(sim.clamp(-1.0, 1.0))
}

/// Merge and similarity-edge thresholds, `merge > similar` strictly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct SimilarityThresholds {
    merge: f64,
    similar: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    merge: f64,
    similar: f64,
}

impl TryFrom<RawThresholds> for SimilarityThresholds {
    type Error = Error;

    fn try_from(raw: RawThresholds) -> Result<Self> {
        SimilarityThresholds::new(raw.merge, raw.similar)
    }
}

impl SimilarityThresholds {
    pub fn new(merge: f64, similar: f64) -> Result<Self> {
        if !(merge > 0.0 && merge <= 1.0) {
            return Err(Error::Contract(format!("merge threshold {merge} outside (0, 1]")));
        }
        if !(similar > 0.0 && similar < 1.0) {
            return Err(Error::Contract(format!(
                "similarity threshold {similar} outside (0, 1)"
            )));
        }
        if merge <= similar {
            return Err(Error::Contract(format!(
                "merge threshold {merge} must exceed similarity threshold {similar}"
            )));
        }
        Ok(SimilarityThresholds { merge, similar })
    }

    pub fn merge(&self) -> f64 {
        self.merge
    }

    pub fn similar(&self) -> f64 {
        self.similar
    }

    /// Partition a similarity value. Equality with the merge threshold
    /// links; equality with the similarity threshold does not.
    pub fn classify(&self, sim: f64) -> SimilarityClass {
        if sim > self.merge {
            SimilarityClass::Merge
        } else if sim > self.similar {
            SimilarityClass::SimilarEdge
        } else {
            SimilarityClass::Unrelated
        }
    }
}

impl Default for SimilarityThresholds {
    fn default() -> Self {
        SimilarityThresholds {
            merge: 0.95,
            similar: 0.88,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SimilarityClass {
    Unrelated,
    SimilarEdge,
    Merge,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let v = e(&[0.3, -1.2, 4.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_and_diagonal() {
        assert_eq!(cosine(&e(&[1.0, 0.0]), &e(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&e(&[1.0, 1.0]), &e(&[1.0, 0.0])).unwrap();
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn rejects_zero_and_mismatched() {
        assert!(matches!(Embedding::new(vec![0.0; 4]), Err(Error::Contract(_))));
        assert!(matches!(Embedding::new(vec![]), Err(Error::Contract(_))));
        assert!(Embedding::new(vec![f64::NAN, 1.0]).is_err());
        let r = cosine(&e(&[1.0, 0.0]), &e(&[1.0, 0.0, 0.0]));
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn zero_vector_rejected_on_deserialize() {
        let r: std::result::Result<Embedding, _> = serde_json::from_str("[0.0, 0.0]");
        assert!(r.is_err());
    }

    #[test]
    fn classify_defaults() {
        let t = SimilarityThresholds::default();
        assert_eq!(t.classify(0.97), SimilarityClass::Merge);
        assert_eq!(t.classify(0.90), SimilarityClass::SimilarEdge);
        assert_eq!(t.classify(0.50), SimilarityClass::Unrelated);
    }

    #[test]
    fn classify_boundaries() {
        let t = SimilarityThresholds::default();
        assert_eq!(t.classify(0.95), SimilarityClass::SimilarEdge);
        assert_eq!(t.classify(0.88), SimilarityClass::Unrelated);
        assert_eq!(t.classify(1.0), SimilarityClass::Merge);
        assert_eq!(t.classify(-1.0), SimilarityClass::Unrelated);
    }

    #[test]
    fn thresholds_validated() {
        assert!(SimilarityThresholds::new(0.88, 0.95).is_err());
        assert!(SimilarityThresholds::new(0.9, 0.9).is_err());
        assert!(SimilarityThresholds::new(1.2, 0.5).is_err());
        assert!(SimilarityThresholds::new(1.0, 0.0).is_err());
        assert!(SimilarityThresholds::new(1.0, 0.5).is_ok());
        let bad: std::result::Result<SimilarityThresholds, _> =
            serde_json::from_str(r#"{"merge":0.5,"similar":0.9}"#);
        assert!(bad.is_err());
    }

    proptest! {
        #[test]
        fn classify_monotone(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            let t = SimilarityThresholds::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(t.classify(lo) <= t.classify(hi));
        }

        #[test]
        fn cosine_scale_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 8),
            b in proptest::collection::vec(-10.0f64..10.0, 8),
            k in 0.001f64..1000.0,
        ) {
            prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
            let ea = e(&a);
            let eb = e(&b);
            let scaled = e(&a.iter().map(|v| v * k).collect::<Vec<_>>());
            let c1 = cosine(&ea, &eb).unwrap();
            prop_assert!((c1 - cosine(&scaled, &eb).unwrap()).abs() < 1e-9);
            prop_assert!((c1 - cosine(&eb, &ea).unwrap()).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&c1));
        }
    }
}

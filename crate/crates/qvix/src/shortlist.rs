//! Label shortlisting for closed-set classification: rank the label space by
//! cosine similarity between an image embedding and per-label text
//! embeddings, and keep the top k as the prompt's option list.
//!
//! Vectors come either from an embedding endpoint or from a precomputed
//! sidecar file; both are unit-normalized at the boundary.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;

use crate::error::{QvixError, Result};
use crate::gateway::{normalize_unit, EmbedInput, Gateway};

pub const DEFAULT_TOP_K: usize = 5;

/// Prompt wrapper for label-text embeddings; `{label}` is substituted.
pub const DEFAULT_LABEL_TEMPLATE: &str = "a photo of a {label}";

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(QvixError::DimensionMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(QvixError::Embedding("cosine of empty vectors".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 || !(norm_a * norm_b).is_finite() {
        return Err(QvixError::Embedding(
            "cosine undefined for zero or non-finite vectors".into(),
        ));
    }
    Ok(dot / (norm_a * norm_b))
}

/// Precomputed vectors keyed by label text or image path, loaded from a
/// JSON sidecar (`{"key": [floats, ...], ...}`). All vectors must share one
/// dimension and are re-normalized on load.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    vectors: BTreeMap<String, Vec<f64>>,
    dimension: usize,
}

impl EmbeddingStore {
    pub fn from_sidecar(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let raw: BTreeMap<String, Vec<f64>> = serde_json::from_str(&text)?;
        Self::from_vectors(raw)
    }

    pub fn from_vectors(raw: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let mut dimension = 0usize;
        let mut vectors = BTreeMap::new();
        for (key, vector) in raw {
            if dimension == 0 {
                dimension = vector.len();
            }
            if vector.len() != dimension {
                return Err(QvixError::DimensionMismatch(dimension, vector.len()));
            }
            let unit = normalize_unit(&vector)
                .map_err(|_| QvixError::Embedding(format!("vector `{key}` is degenerate")))?;
            vectors.insert(key, unit);
        }
        if vectors.is_empty() {
            return Err(QvixError::Embedding("sidecar holds no vectors".into()));
        }
        Ok(Self { vectors, dimension })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    /// Image lookups accept absolute request paths against relative stored
    /// keys by matching on a path-component suffix.
    pub fn get_image(&self, path: &str) -> Option<&[f64]> {
        if let Some(v) = self.vectors.get(path) {
            return Some(v.as_slice());
        }
        self.vectors
            .iter()
            .find(|(key, _)| {
                path.ends_with(key.as_str())
                    && path.len() > key.len()
                    && path.as_bytes()[path.len() - key.len() - 1] == b'/'
            })
            .map(|(_, v)| v.as_slice())
    }
}

/// Where shortlisting gets its vectors from.
pub trait VectorSource {
    fn label_vector(&self, label: &str) -> Result<Vec<f64>>;
    fn image_vector(&self, image_path: &str) -> Result<Vec<f64>>;
}

pub struct SidecarSource {
    store: EmbeddingStore,
}

impl SidecarSource {
    pub fn new(store: EmbeddingStore) -> Self {
        Self { store }
    }
}

impl VectorSource for SidecarSource {
    fn label_vector(&self, label: &str) -> Result<Vec<f64>> {
        self.store
            .get(label)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| QvixError::Embedding(format!("sidecar has no vector for label `{label}`")))
    }

    fn image_vector(&self, image_path: &str) -> Result<Vec<f64>> {
        self.store
            .get_image(image_path)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| {
                QvixError::Embedding(format!("sidecar has no vector for image `{image_path}`"))
            })
    }
}

/// Live embedding endpoint. Label vectors are memoized: each label is
/// embedded once per run no matter how many images it is ranked against.
pub struct EndpointSource<'g> {
    gateway: &'g Gateway,
    endpoint_id: String,
    label_template: String,
    label_cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<'g> EndpointSource<'g> {
    pub fn new(gateway: &'g Gateway, endpoint_id: &str, label_template: &str) -> Self {
        Self {
            gateway,
            endpoint_id: endpoint_id.to_string(),
            label_template: label_template.to_string(),
            label_cache: Mutex::new(HashMap::new()),
        }
    }
}

impl VectorSource for EndpointSource<'_> {
    fn label_vector(&self, label: &str) -> Result<Vec<f64>> {
        if let Some(hit) = self.label_cache.lock().unwrap().get(label) {
            return Ok(hit.clone());
        }
        let text = self.label_template.replace("{label}", label);
        let mut vectors = self
            .gateway
            .embed(&self.endpoint_id, &[EmbedInput::Text(text)])?;
        let vector = vectors.remove(0);
        self.label_cache
            .lock()
            .unwrap()
            .insert(label.to_string(), vector.clone());
        Ok(vector)
    }

    fn image_vector(&self, image_path: &str) -> Result<Vec<f64>> {
        let mut vectors = self.gateway.embed(
            &self.endpoint_id,
            &[EmbedInput::Image(image_path.into())],
        )?;
        Ok(vectors.remove(0))
    }
}

/// Rank `labels` by cosine similarity against the image and return the top
/// `k` in descending similarity order. Ties break toward the lower label
/// index so results are deterministic; `k >= labels.len()` returns the full
/// ranking.
pub fn shortlist_labels(
    image_path: &str,
    labels: &[String],
    k: usize,
    source: &dyn VectorSource,
) -> Result<Vec<String>> {
    if labels.is_empty() {
        return Err(QvixError::Invalid("shortlist needs at least one label".into()));
    }
    if k == 0 {
        return Err(QvixError::Invalid("shortlist size must be at least 1".into()));
    }
    let image = source.image_vector(image_path)?;
    let mut ranked: Vec<(usize, f64)> = Vec::with_capacity(labels.len());
    for (index, label) in labels.iter().enumerate() {
        let vector = source.label_vector(label)?;
        ranked.push((index, cosine(&image, &vector)?));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(ranked
        .into_iter()
        .take(k)
        .map(|(index, _)| labels[index].clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(entries: &[(&str, &[f64])]) -> EmbeddingStore {
        let raw: BTreeMap<String, Vec<f64>> = entries
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_vec()))
            .collect();
        EmbeddingStore::from_vectors(raw).unwrap()
    }

    #[test]
    fn cosine_matches_hand_computed_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        let diagonal = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((diagonal - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        // Cosine is scale-invariant, so normalization cannot change ranks.
        assert!(
            (cosine(&[10.0, 0.0], &[0.2, 0.2]).unwrap() - diagonal).abs() < 1e-12
        );
    }

    #[test]
    fn cosine_rejects_degenerate_inputs() {
        assert!(matches!(
            cosine(&[1.0], &[1.0, 0.0]),
            Err(QvixError::DimensionMismatch(1, 2))
        ));
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[], &[]).is_err());
    }

    #[test]
    fn sidecar_store_normalizes_and_checks_dimensions() {
        let s = store(&[("a", &[3.0, 4.0])]);
        assert_eq!(s.get("a").unwrap(), &[0.6, 0.8]);
        assert_eq!(s.dimension(), 2);

        let mixed: BTreeMap<String, Vec<f64>> = [
            ("a".to_string(), vec![1.0, 0.0]),
            ("b".to_string(), vec![1.0, 0.0, 0.0]),
        ]
        .into();
        assert!(EmbeddingStore::from_vectors(mixed).is_err());
        assert!(EmbeddingStore::from_vectors(BTreeMap::new()).is_err());
    }

    #[test]
    fn image_lookup_accepts_absolute_paths_by_suffix() {
        let s = store(&[("img/i1.png", &[1.0, 0.0])]);
        assert!(s.get_image("/tmp/anywhere/img/i1.png").is_some());
        assert!(s.get_image("img/i1.png").is_some());
        // Not a path-component boundary:
        assert!(s.get_image("/tmp/other-img/i1.png").is_none());
    }

    #[test]
    fn shortlist_ranks_by_similarity_with_index_ties() {
        let s = store(&[
            ("img.png", &[1.0, 0.0]),
            ("close", &[0.9, 0.1]),
            ("closer", &[1.0, 0.05]),
            ("far", &[0.0, 1.0]),
            ("tie_b", &[0.5, 0.5]),
            ("tie_a", &[0.5, 0.5]),
        ]);
        let source = SidecarSource::new(s);
        let labels: Vec<String> = ["far", "tie_b", "tie_a", "close", "closer"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let top = shortlist_labels("img.png", &labels, 3, &source).unwrap();
        assert_eq!(top, vec!["closer", "close", "tie_b"]);
        // tie_b beats tie_a because it comes first in the label list.
        let top4 = shortlist_labels("img.png", &labels, 4, &source).unwrap();
        assert_eq!(top4[2], "tie_b");
        assert_eq!(top4[3], "tie_a");

        let all = shortlist_labels("img.png", &labels, 99, &source).unwrap();
        assert_eq!(all.len(), labels.len());
    }

    #[test]
    fn shortlist_validates_inputs_and_missing_vectors() {
        let source = SidecarSource::new(store(&[("img.png", &[1.0, 0.0])]));
        let labels = vec!["unknown".to_string()];
        assert!(shortlist_labels("img.png", &labels, 1, &source).is_err());
        assert!(shortlist_labels("img.png", &[], 1, &source).is_err());
        assert!(shortlist_labels("img.png", &labels, 0, &source).is_err());
        assert!(shortlist_labels("missing.png", &labels, 1, &source).is_err());
    }
}

//! Semantic routing: sparse TF-IDF vectors, cosine relevance, token-budgeted
//! tool selection and the similarity-keyed response cache.

mod cache;
pub mod knapsack;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::registry::ToolRegistry;

pub use cache::{CacheEntry, CacheHit, CognitiveCache, DEFAULT_CACHE_CAPACITY};

pub const DEFAULT_CACHE_THRESHOLD: f64 = 0.97;
pub const DEFAULT_TOKEN_BUDGET: usize = 512;

/// Lowercases, splits on anything that is not alphanumeric and drops tokens
/// shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

/// Sparse nonnegative term weights. Zero weights are never stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TermVector {
    weights: BTreeMap<String, f64>,
}

impl TermVector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a vector from raw weights, dropping zero, negative and NaN entries.
    pub fn from_weights<I, S>(weights: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let weights = weights
            .into_iter()
            .filter(|(_, w)| *w > 0.0)
            .map(|(t, w)| (t.into(), w))
            .collect();
        Self { weights }
    }

    pub fn get(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &TermVector) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().map(|(t, w)| w * large.get(t)).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_weights(self.iter().map(|(t, w)| (t.to_string(), w * factor)))
    }
}

/// Cosine similarity; zero when either vector has zero norm. Clamped to
/// [0, 1] against floating-point overshoot.
pub fn cosine_similarity(a: &TermVector, b: &TermVector) -> f64 {
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return 0.0;
    }
    (a.dot(b) / denom).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouterError {
    #[error("cannot build a routing index over an empty registry")]
    EmptyRegistry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTool {
    pub name: String,
    pub similarity: f64,
    pub token_cost: usize,
}

#[derive(Debug, Clone)]
pub struct RoutingIndex {
    document_frequency: HashMap<String, usize>,
    idf: HashMap<String, f64>,
    tool_vectors: BTreeMap<String, TermVector>,
    token_costs: BTreeMap<String, usize>,
    corpus_size: usize,
}

impl RoutingIndex {
    /// IDF is the smoothed `ln((1 + N) / (1 + df)) + 1`.
    pub fn build(registry: &ToolRegistry) -> Result<Self, RouterError> {
        if registry.is_empty() {
            return Err(RouterError::EmptyRegistry);
        }
        let docs: Vec<(String, Vec<String>, usize)> = registry
            .iter()
            .map(|t| (t.name.clone(), tokenize(&t.routing_text()), t.token_cost()))
            .collect();

        let mut document_frequency: HashMap<String, usize> = HashMap::new();
        for (_, tokens, _) in &docs {
            let mut unique: Vec<&String> = tokens.iter().collect();
            unique.sort();
            unique.dedup();
            for t in unique {
                *document_frequency.entry(t.clone()).or_default() += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = document_frequency
            .iter()
            .map(|(t, df)| (t.clone(), ((1.0 + n) / (1.0 + *df as f64)).ln() + 1.0))
            .collect();

        let mut index = Self {
            document_frequency,
            idf,
            tool_vectors: BTreeMap::new(),
            token_costs: BTreeMap::new(),
            corpus_size: docs.len(),
        };
        for (name, tokens, cost) in docs {
            let v = index.weigh(&tokens);
            index.tool_vectors.insert(name.clone(), v);
            index.token_costs.insert(name, cost);
        }
        Ok(index)
    }

    fn weigh(&self, tokens: &[String]) -> TermVector {
        let mut tf: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            if self.idf.contains_key(t) {
                *tf.entry(t.as_str()).or_default() += 1;
            }
        }
        TermVector::from_weights(
            tf.into_iter()
                .map(|(t, count)| (t.to_string(), count as f64 * self.idf[t])),
        )
    }

    /// Raw term frequency times IDF; out-of-vocabulary terms are dropped.
    pub fn embed(&self, text: &str) -> TermVector {
        self.weigh(&tokenize(text))
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.document_frequency.get(term).copied().unwrap_or(0)
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.idf.get(term).copied()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.idf.len()
    }

    pub fn tool_vector(&self, name: &str) -> Option<&TermVector> {
        self.tool_vectors.get(name)
    }

    pub fn token_cost(&self, name: &str) -> Option<usize> {
        self.token_costs.get(name).copied()
    }

    /// Similarity of `intent` to every indexed tool, in tool-name order.
    pub fn similarities(&self, intent: &TermVector) -> Vec<ScoredTool> {
        self.tool_vectors
            .iter()
            .map(|(name, v)| ScoredTool {
                name: name.clone(),
                similarity: cosine_similarity(intent, v),
                token_cost: self.token_costs[name],
            })
            .collect()
    }

    /// Token-budgeted tool selection: the subset of relevant tools with the
    /// largest total similarity whose summed token cost fits in `budget`.
    /// Tools with zero similarity are never selected. The result is ordered
    /// by descending similarity, ties by name.
    pub fn select_tools(&self, intent: &TermVector, budget: usize) -> Vec<ScoredTool> {
        let mut candidates: Vec<ScoredTool> = self
            .similarities(intent)
            .into_iter()
            .filter(|s| s.similarity > 0.0)
            .collect();
        canonical_order(&mut candidates);
        let items: Vec<knapsack::Item> = candidates
            .iter()
            .map(|c| knapsack::Item {
                value: c.similarity,
                cost: c.token_cost,
            })
            .collect();
        let chosen = knapsack::solve(&items, budget);
        chosen.into_iter().map(|i| candidates[i].clone()).collect()
    }
}

/// Descending similarity, then ascending name.
pub fn canonical_order(tools: &mut [ScoredTool]) {
    tools.sort_by(|a, b| {
        b.similarity
            .total_cmp(&a.similarity)
            .then_with(|| a.name.cmp(&b.name))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::registry::{Tier, ToolSchema};

    fn single(desc: &str) -> ToolRegistry {
        let mut r = ToolRegistry::new();
        r.register_tool(ToolSchema::new("only", "Only", desc, Tier::Read))
            .unwrap();
        r
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(
            tokenize("Revoke D-8821's access, a b!"),
            vec!["revoke", "8821", "access"]
        );
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn fixture_index_has_twelve_documents() {
        let index = RoutingIndex::build(&fixtures::registry().unwrap()).unwrap();
        assert_eq!(index.corpus_size(), 12);
    }

    #[test]
    fn empty_registry_is_rejected() {
        assert_eq!(
            RoutingIndex::build(&ToolRegistry::new()).unwrap_err(),
            RouterError::EmptyRegistry
        );
    }

    #[test]
    fn single_tool_has_uniform_idf() {
        let index = RoutingIndex::build(&single("alpha beta gamma")).unwrap();
        let expected = (2.0f64 / 2.0).ln() + 1.0;
        for term in ["only", "alpha", "beta", "gamma"] {
            assert_eq!(index.document_frequency(term), 1);
            assert!((index.idf(term).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_tools_are_orthogonal() {
        let mut r = ToolRegistry::new();
        r.register_tool(ToolSchema::new("a", "Aa", "apples bananas", Tier::Read))
            .unwrap();
        r.register_tool(ToolSchema::new("b", "Bb", "cherries dates", Tier::Read))
            .unwrap();
        let index = RoutingIndex::build(&r).unwrap();
        let sim = cosine_similarity(
            index.tool_vector("a").unwrap(),
            index.tool_vector("b").unwrap(),
        );
        assert_eq!(sim, 0.0);
    }

    #[test]
    fn own_routing_text_is_self_similar() {
        let reg = fixtures::registry().unwrap();
        let index = RoutingIndex::build(&reg).unwrap();
        for tool in reg.iter() {
            let v = index.embed(&tool.routing_text());
            let sim = cosine_similarity(&v, index.tool_vector(&tool.name).unwrap());
            assert!((sim - 1.0).abs() < 1e-12, "{}: {sim}", tool.name);
        }
    }

    #[test]
    fn empty_text_embeds_to_empty_vector() {
        let index = RoutingIndex::build(&single("x y")).unwrap();
        assert!(index.embed("").is_empty());
        assert!(index.embed("nothing in vocabulary").is_empty());
    }

    #[test]
    fn cosine_edge_cases() {
        let v = TermVector::from_weights([("a", 1.0), ("b", 2.0)]);
        assert!((cosine_similarity(&v, &v) - 1.0).abs() < 1e-12);
        let w = TermVector::from_weights([("c", 3.0)]);
        assert_eq!(cosine_similarity(&v, &w), 0.0);
        assert_eq!(cosine_similarity(&v, &TermVector::new()), 0.0);
    }

    #[test]
    fn zero_weights_are_not_stored() {
        let v = TermVector::from_weights([("a", 0.0), ("b", 1.0)]);
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn budget_zero_selects_nothing() {
        let index = RoutingIndex::build(&fixtures::registry().unwrap()).unwrap();
        let q = index.embed("revoke access permissions document");
        assert!(index.select_tools(&q, 0).is_empty());
    }

    #[test]
    fn unconstrained_budget_selects_every_relevant_tool() {
        let index = RoutingIndex::build(&fixtures::registry().unwrap()).unwrap();
        let q = index.embed("document");
        let relevant = index
            .similarities(&q)
            .iter()
            .filter(|s| s.similarity > 0.0)
            .count();
        let picked = index.select_tools(&q, usize::MAX / 2);
        assert_eq!(picked.len(), relevant);
        for pair in picked.windows(2) {
            assert!(pair[0].similarity >= pair[1].similarity);
        }
    }
}

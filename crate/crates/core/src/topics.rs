//! Topic covariates: maps each text to a multi-hot indicator over topics.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CovariateSchema, Covariates, Treatment};
use crate::error::{Error, Result};

const DEFAULT_TOPICS: &str = include_str!("../fixtures/topics.json");

/// Port for anything that assigns topics to a text.
///
/// Implementations must be deterministic: the same text always yields the
/// same topic indices. An embedding-cluster topic model can be plugged in
/// here by precomputing its assignments.
pub trait TopicExtractor {
    fn topic_names(&self) -> Vec<String>;

    /// Indices (into `topic_names`) of the topics present in `text`.
    fn extract(&self, text: &str) -> Vec<usize>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordTopic {
    pub name: String,
    pub keywords: Vec<String>,
}

/// Keyword-cluster extractor: a topic is active when any of its keywords
/// occurs as a token of the text.
#[derive(Debug, Clone)]
pub struct KeywordExtractor {
    topics: Vec<KeywordTopic>,
    sets: Vec<HashSet<String>>,
}

#[derive(Deserialize)]
struct TopicFile {
    topics: Vec<KeywordTopic>,
}

impl KeywordExtractor {
    pub fn new(topics: Vec<KeywordTopic>) -> Self {
        let sets = topics
            .iter()
            .map(|t| t.keywords.iter().map(|k| k.to_lowercase()).collect())
            .collect();
        KeywordExtractor { topics, sets }
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let f: TopicFile = serde_json::from_str(json)?;
        Ok(Self::new(f.topics))
    }

    /// The checked-in vocabulary.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TOPICS).expect("builtin topic fixture is valid")
    }
}

pub(crate) fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

impl TopicExtractor for KeywordExtractor {
    fn topic_names(&self) -> Vec<String> {
        self.topics.iter().map(|t| t.name.clone()).collect()
    }

    fn extract(&self, text: &str) -> Vec<usize> {
        let tokens: HashSet<String> = word_tokens(text).collect();
        self.sets
            .iter()
            .enumerate()
            .filter(|(_, set)| set.iter().any(|k| tokens.contains(k)))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Replaces every unit's covariates with a length-`k` indicator vector over
/// the `k` most frequent topics among control units (ties broken by topic
/// index). Treated units that carry a `pair_id` copy their source's vector,
/// since topics are pre-treatment.
pub fn assign_topic_covariates(
    corpus: Corpus,
    extractor: &dyn TopicExtractor,
    k: usize,
) -> Result<Corpus> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let names = extractor.topic_names();
    let extracted: Vec<Vec<usize>> = corpus
        .units()
        .iter()
        .map(|u| extractor.extract(&u.text))
        .collect();

    let mut freq = vec![0usize; names.len()];
    for (u, topics) in corpus.units().iter().zip(&extracted) {
        if u.treatment == Treatment::Control {
            for &t in topics {
                freq[t] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    order.truncate(k);

    let mut slot = vec![None; names.len()];
    for (dim, &t) in order.iter().enumerate() {
        slot[t] = Some(dim);
    }
    let vectors: Vec<Vec<u8>> = extracted
        .iter()
        .map(|topics| {
            let mut v = vec![0u8; k];
            for &t in topics {
                if let Some(d) = slot[t] {
                    v[d] = 1;
                }
            }
            v
        })
        .collect();

    let mut dim_names: Vec<String> = order.iter().map(|&t| names[t].clone()).collect();
    while dim_names.len() < k {
        dim_names.push(format!("unused_{}", dim_names.len()));
    }

    let mut units = corpus.into_units();
    let by_id: std::collections::HashMap<String, usize> =
        units.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
    let inherited: Vec<Vec<u8>> = units
        .iter()
        .enumerate()
        .map(|(i, u)| match (&u.treatment, &u.pair_id) {
            (Treatment::Treated, Some(src)) => match by_id.get(src) {
                Some(&j) => vectors[j].clone(),
                None => vectors[i].clone(),
            },
            _ => vectors[i].clone(),
        })
        .collect();
    for (u, v) in units.iter_mut().zip(inherited) {
        u.covariates = Covariates::Vector(v);
    }
    Corpus::with_schema(units, CovariateSchema::vector(dim_names))
}

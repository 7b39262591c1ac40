//! Seeded synthetic movie-tagging population.
//!
//! Users belong to cohorts. Every cohort has its own tag convention (a
//! permutation mapping the 15 topics onto the 15 tags) and a shared style
//! direction added to every document embedding of its members, so pooled user
//! vectors group by cohort. Each cohort also owns a set of collaborative
//! topics: a collaborative user's evaluation topic is absent from their own
//! profile but present, with the cohort's tag, in every other cohort member's
//! profile. All other users are evaluated on a topic from their own profile.
//! Loners have their own style and convention and belong to no cohort.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, CorpusHandle, Document, EmbeddingMatrix, QueryInstance, TaskId};
use crate::error::{Error, Result};
use crate::persist::write_atomic;
use crate::prompt::LAMP2_TAGS;
use crate::vector;

const N_TOPICS: usize = LAMP2_TAGS.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_cohorts: usize,
    pub cohort_size: usize,
    pub n_loners: usize,
    /// Collaborative users per cohort; also the number of collaborative topics.
    pub collab_per_cohort: usize,
    /// Own-topic documents per user, drawn from the cohort's other topics.
    pub base_topics: usize,
    pub dim: usize,
    /// Norm of the cohort style component relative to the unit topic vector.
    pub style_scale: f64,
    /// Expected norm of the noise added to document embeddings.
    pub doc_noise: f64,
    /// Expected norm of the noise added to query embeddings.
    pub query_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_cohorts: 25,
            cohort_size: 18,
            n_loners: 50,
            collab_per_cohort: 8,
            base_topics: 6,
            dim: 64,
            style_scale: 1.0,
            doc_noise: 0.1,
            query_noise: 0.1,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(format!("synthetic spec: {m}")));
        if self.dim < 2 {
            return bad("dim must be >= 2");
        }
        if self.collab_per_cohort > self.cohort_size || self.collab_per_cohort >= N_TOPICS {
            return bad("collab_per_cohort must be <= cohort_size and < 15");
        }
        if self.base_topics == 0 || self.base_topics > N_TOPICS - self.collab_per_cohort {
            return bad("base_topics must lie in 1..=15 - collab_per_cohort");
        }
        if self.n_cohorts * self.cohort_size + self.n_loners == 0 {
            return bad("empty population");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub spec: SyntheticSpec,
    pub documents: Vec<Document>,
    pub embeddings: EmbeddingMatrix,
    pub queries: Vec<QueryInstance>,
    pub query_embeddings: EmbeddingMatrix,
    /// Cohort of every user; `None` for loners.
    pub cohort_of: BTreeMap<String, Option<usize>>,
    /// Users whose gold tag appears only in other cohort members' profiles.
    pub collaborative: BTreeSet<String>,
}

impl SyntheticBenchmark {
    pub fn corpus(&self) -> Result<CorpusHandle> {
        CorpusHandle::from_parts(
            self.documents.clone(),
            self.embeddings.clone(),
            self.queries.clone(),
            Some(self.query_embeddings.clone()),
        )
    }

    /// Writes `documents.jsonl`, `embeddings.bin`, `queries.jsonl` and
    /// `query_embeddings.bin` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("documents.jsonl"), &self.documents)?;
        write_jsonl(&dir.join("queries.jsonl"), &self.queries)?;
        write_atomic(&dir.join("embeddings.bin"), &self.embeddings.to_bytes())?;
        write_atomic(&dir.join("query_embeddings.bin"), &self.query_embeddings.to_bytes())
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, norm: f64) -> Vec<f64> {
    let scale = norm / (dim as f64).sqrt();
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * scale).collect()
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v = gaussian(rng, dim, 1.0);
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn to_unit_f32(v: &[f64]) -> Vec<f32> {
    vector::normalized(&v.iter().map(|&x| x as f32).collect::<Vec<_>>())
}

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ter", "van", "sul", "dro", "pe", "nim", "ra", "zu", "ox", "bel", "quin", "fa", "gor",
];

/// Eight pseudo-words per topic.
fn topic_words(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let mut seen = BTreeSet::new();
    (0..N_TOPICS)
        .map(|_| {
            let mut words = Vec::new();
            while words.len() < 8 {
                let w: String = (0..3).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect();
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
            words
        })
        .collect()
}

fn describe(rng: &mut ChaCha8Rng, words: &[String]) -> String {
    let picked: Vec<&str> = (0..6).map(|_| words[rng.random_range(0..words.len())].as_str()).collect();
    format!("a film about {}", picked.join(" "))
}

struct Group {
    cohort: Option<usize>,
    style: Vec<f64>,
    convention: Vec<usize>,
    collab_topics: Vec<usize>,
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let topics: Vec<Vec<f64>> = (0..N_TOPICS).map(|_| unit(&mut rng, dim)).collect();
    let words = topic_words(&mut rng);

    let mut groups = Vec::new();
    for c in 0..spec.n_cohorts {
        let mut convention: Vec<usize> = (0..N_TOPICS).collect();
        convention.shuffle(&mut rng);
        let mut order: Vec<usize> = (0..N_TOPICS).collect();
        order.shuffle(&mut rng);
        groups.push(Group {
            cohort: Some(c),
            style: unit(&mut rng, dim).into_iter().map(|x| x * spec.style_scale).collect(),
            convention,
            collab_topics: order[..spec.collab_per_cohort].to_vec(),
        });
    }

    let mut documents = Vec::new();
    let mut embeddings = EmbeddingMatrix::new(dim);
    let mut queries = Vec::new();
    let mut query_embeddings = EmbeddingMatrix::new(dim);
    let mut cohort_of = BTreeMap::new();
    let mut collaborative = BTreeSet::new();
    let mut clock: i64 = 1_600_000_000;

    let mut emit_doc = |rng: &mut ChaCha8Rng, user: &str, group: &Group, topic: usize, n: usize| -> Result<()> {
        let doc_id = format!("{user}-d{n:02}");
        let noise = gaussian(rng, dim, spec.doc_noise);
        let v: Vec<f64> = (0..dim).map(|i| topics[topic][i] + group.style[i] + noise[i]).collect();
        embeddings.push(doc_id.clone(), &to_unit_f32(&v))?;
        clock += rng.random_range(60..86_400);
        documents.push(Document {
            doc_id,
            user_id: user.to_string(),
            text: describe(rng, &words[topic]),
            paired_output: Some(LAMP2_TAGS[group.convention[topic]].to_string()),
            timestamp: Some(clock),
            embedding_ref: None,
        });
        Ok(())
    };

    let n_users = spec.n_cohorts * spec.cohort_size + spec.n_loners;
    let width = n_users.to_string().len();
    let mut next_user = 0usize;
    let mut new_user = || {
        let id = format!("u{:0width$}", next_user);
        next_user += 1;
        id
    };

    for group in &groups {
        let members: Vec<String> = (0..spec.cohort_size).map(|_| new_user()).collect();
        let others: Vec<usize> = (0..N_TOPICS).filter(|t| !group.collab_topics.contains(t)).collect();
        for (j, user) in members.iter().enumerate() {
            cohort_of.insert(user.clone(), group.cohort);
            let eval_collab = (j < spec.collab_per_cohort).then(|| group.collab_topics[j]);
            let mut base = others.clone();
            base.shuffle(&mut rng);
            base.truncate(spec.base_topics);
            let mut profile: Vec<usize> = base.clone();
            profile.extend(group.collab_topics.iter().copied().filter(|&t| Some(t) != eval_collab));
            profile.shuffle(&mut rng);
            for (n, &t) in profile.iter().enumerate() {
                emit_doc(&mut rng, user, group, t, n)?;
            }
            let eval_topic = match eval_collab {
                Some(t) => {
                    collaborative.insert(user.clone());
                    t
                }
                None => base[rng.random_range(0..base.len())],
            };
            push_query(&mut rng, spec, &topics, &words, group, user, eval_topic, &mut queries, &mut query_embeddings)?;
        }
    }

    for _ in 0..spec.n_loners {
        let user = new_user();
        let mut convention: Vec<usize> = (0..N_TOPICS).collect();
        convention.shuffle(&mut rng);
        let group = Group {
            cohort: None,
            style: unit(&mut rng, dim).into_iter().map(|x| x * spec.style_scale).collect(),
            convention,
            collab_topics: Vec::new(),
        };
        cohort_of.insert(user.clone(), None);
        let mut order: Vec<usize> = (0..N_TOPICS).collect();
        order.shuffle(&mut rng);
        let profile = &order[..spec.base_topics + spec.collab_per_cohort];
        for (n, &t) in profile.iter().enumerate() {
            emit_doc(&mut rng, &user, &group, t, n)?;
        }
        let eval_topic = profile[rng.random_range(0..profile.len())];
        push_query(&mut rng, spec, &topics, &words, &group, &user, eval_topic, &mut queries, &mut query_embeddings)?;
    }

    Ok(SyntheticBenchmark {
        spec: spec.clone(),
        documents,
        embeddings,
        queries,
        query_embeddings,
        cohort_of,
        collaborative,
    })
}

#[allow(clippy::too_many_arguments)]
fn push_query(
    rng: &mut ChaCha8Rng,
    spec: &SyntheticSpec,
    topics: &[Vec<f64>],
    words: &[Vec<String>],
    group: &Group,
    user: &str,
    topic: usize,
    queries: &mut Vec<QueryInstance>,
    query_embeddings: &mut EmbeddingMatrix,
) -> Result<()> {
    let query_id = format!("q-{user}");
    let noise = gaussian(rng, spec.dim, spec.query_noise);
    let v: Vec<f64> = topics[topic].iter().zip(&noise).map(|(t, n)| t + n).collect();
    query_embeddings.push(query_id.clone(), &to_unit_f32(&v))?;
    queries.push(QueryInstance {
        query_id,
        user_id: user.to_string(),
        input_text: describe(rng, &words[topic]),
        gold_output: Some(LAMP2_TAGS[group.convention[topic]].to_string()),
        task_id: TaskId::Synth,
    });
    Ok(())
}

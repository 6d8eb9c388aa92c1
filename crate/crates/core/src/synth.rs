//! Synthetic behavior corpora with planted binary user factors.
//!
//! The vocabulary is split into fixed topic word lists. Every binary factor
//! owns `2 * topics_per_factor` lists (half for each value). A behavior picks
//! a factor, then one of the topics matching the user's value of that
//! factor, then draws its words from that list with uniform vocabulary noise.
//! Optional distractor topics carry no factor information.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{write_user_logs, Event, UserLog};
use crate::downstream::{write_labels, LabelRecord};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_factors: usize,
    pub topics_per_factor: usize,
    pub vocab_size: usize,
    pub words_per_behavior: usize,
    /// Behaviors in each of the history and target windows.
    pub behaviors_per_window: usize,
    /// Probability that a word is drawn uniformly from the whole vocabulary.
    pub noise_rate: f64,
    /// Topic lists that are independent of every factor.
    pub distractor_topics: usize,
    /// Probability that a behavior comes from a distractor topic.
    pub distractor_rate: f64,
    /// Draw per-user factor weights from the simplex instead of choosing
    /// factors uniformly for every behavior.
    pub mixed: bool,
    /// Window length: history timestamps lie in `[0, window)`, targets in
    /// `[window, 2 * window)`.
    pub window: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            n_factors: 2,
            topics_per_factor: 2,
            vocab_size: 2000,
            words_per_behavior: 8,
            behaviors_per_window: 20,
            noise_rate: 0.3,
            distractor_topics: 0,
            distractor_rate: 0.0,
            mixed: false,
            window: 1_000_000,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.n_users == 0 || self.n_factors == 0 || self.topics_per_factor == 0 {
            return bad("n_users, n_factors and topics_per_factor must be at least 1".into());
        }
        if self.words_per_behavior == 0 || self.behaviors_per_window == 0 {
            return bad("both windows need at least one behavior with at least one word".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise_rate {} outside [0, 1)", self.noise_rate));
        }
        if !(0.0..1.0).contains(&self.distractor_rate) {
            return bad(format!("distractor_rate {} outside [0, 1)", self.distractor_rate));
        }
        if self.distractor_rate > 0.0 && self.distractor_topics == 0 {
            return bad("distractor_rate > 0 needs distractor_topics".into());
        }
        if self.window < 1 || (self.window as u64) < self.behaviors_per_window as u64 {
            return bad("window must be at least behaviors_per_window".into());
        }
        let topics = self.num_topics();
        if self.vocab_size < topics {
            return bad(format!(
                "vocab_size {} too small for {topics} topic word lists",
                self.vocab_size
            ));
        }
        Ok(())
    }

    pub fn num_topics(&self) -> usize {
        self.n_factors * 2 * self.topics_per_factor + self.distractor_topics
    }

    /// First target-window timestamp.
    pub fn boundary(&self) -> i64 {
        self.window
    }

    pub fn words_per_topic(&self) -> usize {
        self.vocab_size / self.num_topics()
    }

    /// Topic index for a factor, its value and a topic slot.
    pub fn factor_topic(&self, factor: usize, value: u8, slot: usize) -> usize {
        (factor * 2 + value as usize) * self.topics_per_factor + slot
    }

    /// The word list of `topic`.
    pub fn topic_words(&self, topic: usize) -> Vec<String> {
        (0..self.words_per_topic()).map(|w| self.word(topic * self.words_per_topic() + w)).collect()
    }

    /// Name of vocabulary entry `index`.
    pub fn word(&self, index: usize) -> String {
        let wpt = self.words_per_topic();
        let factor_topics = self.n_factors * 2 * self.topics_per_factor;
        let topic = index / wpt;
        let w = index % wpt;
        if topic < factor_topics {
            let slot = topic % self.topics_per_factor;
            let fv = topic / self.topics_per_factor;
            format!("f{}v{}t{slot}w{w}", fv / 2, fv % 2)
        } else if topic < self.num_topics() {
            format!("d{}w{w}", topic - factor_topics)
        } else {
            format!("x{}", index - self.num_topics() * wpt)
        }
    }
}

/// Planted factor values of one user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserTruth {
    pub user_id: String,
    pub factors: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SynthTruth {
    pub users: Vec<UserTruth>,
}

impl SynthTruth {
    pub fn labels(&self, factor: usize) -> Vec<LabelRecord> {
        self.users
            .iter()
            .map(|u| LabelRecord {
                user_id: u.user_id.clone(),
                label: u.factors[factor] as usize,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub logs: Vec<UserLog>,
    pub truth: SynthTruth,
    pub boundary: i64,
}

pub fn user_id(index: usize) -> String {
    format!("user{index:06}")
}

fn gen_user(config: &SynthConfig, index: usize) -> (UserLog, UserTruth) {
    let mut rng = Rng::substream(config.seed, index as u64);
    let factors: Vec<u8> = (0..config.n_factors).map(|_| rng.bernoulli(0.5) as u8).collect();
    let weights: Vec<f64> = if config.mixed {
        // Uniform on the simplex via normalized exponentials.
        let e: Vec<f64> = (0..config.n_factors).map(|_| -(1.0 - rng.uniform(0.0, 1.0)).ln()).collect();
        let s: f64 = e.iter().sum();
        e.iter().map(|x| x / s).collect()
    } else {
        vec![1.0 / config.n_factors as f64; config.n_factors]
    };
    let wpt = config.words_per_topic();
    let factor_topics = config.n_factors * 2 * config.topics_per_factor;

    let behavior = |rng: &mut Rng| -> String {
        let topic = if config.distractor_rate > 0.0 && rng.bernoulli(config.distractor_rate) {
            factor_topics + rng.below(config.distractor_topics)
        } else {
            let mut r = rng.uniform(0.0, 1.0);
            let mut k = config.n_factors - 1;
            for (i, w) in weights.iter().enumerate() {
                if r < *w {
                    k = i;
                    break;
                }
                r -= w;
            }
            config.factor_topic(k, factors[k], rng.below(config.topics_per_factor))
        };
        let words: Vec<String> = (0..config.words_per_behavior)
            .map(|_| {
                let idx = if config.noise_rate > 0.0 && rng.bernoulli(config.noise_rate) {
                    rng.below(config.vocab_size)
                } else {
                    topic * wpt + rng.below(wpt)
                };
                config.word(idx)
            })
            .collect();
        words.join(" ")
    };

    let mut events = Vec::with_capacity(2 * config.behaviors_per_window);
    for start in [0, config.window] {
        let mut ts: Vec<i64> = (0..config.behaviors_per_window)
            .map(|_| rng.range_i64(start, start + config.window))
            .collect();
        ts.sort_unstable();
        for t in ts {
            events.push(Event {
                ts: t,
                text: behavior(&mut rng),
            });
        }
    }
    let id = user_id(index);
    (
        UserLog {
            user_id: id.clone(),
            events,
        },
        UserTruth { user_id: id, factors },
    )
}

/// Generates every user from its own seeded substream; output is ordered by
/// user id.
pub fn gen_corpus(config: &SynthConfig, exec: Execution) -> Result<SynthCorpus> {
    config.validate()?;
    let (logs, users) = exec.map_range(config.n_users, |i| gen_user(config, i)).into_iter().unzip();
    Ok(SynthCorpus {
        logs,
        truth: SynthTruth { users },
        boundary: config.boundary(),
    })
}

pub fn corpus_path(dir: &Path) -> PathBuf {
    dir.join("corpus.jsonl")
}

pub fn labels_path(dir: &Path, factor: usize) -> PathBuf {
    dir.join(format!("labels_factor{factor}.csv"))
}

/// Writes `corpus.jsonl` and one `labels_factor{k}.csv` per factor.
pub fn write_corpus(dir: &Path, corpus: &SynthCorpus) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = vec![corpus_path(dir)];
    write_user_logs(&written[0], &corpus.logs)?;
    let n_factors = corpus.truth.users.first().map_or(0, |u| u.factors.len());
    for k in 0..n_factors {
        let p = labels_path(dir, k);
        write_labels(&p, &corpus.truth.labels(k))?;
        written.push(p);
    }
    Ok(written)
}

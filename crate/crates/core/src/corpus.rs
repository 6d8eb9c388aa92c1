//! Behavior-log ingestion: JSONL user logs, tokenization, a capped
//! vocabulary, and the history/target split that produces training samples.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

pub type WordId = u32;

/// Word-id → occurrence count, ordered by id.
pub type Counts = BTreeMap<WordId, u32>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub ts: i64,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserLog {
    pub user_id: String,
    pub events: Vec<Event>,
}

impl UserLog {
    /// Validates and sorts events by timestamp (stable, so equal timestamps
    /// keep file order).
    pub fn normalize(mut self) -> Result<Self> {
        if self.user_id.is_empty() {
            return Err(Error::Invalid("empty user_id".into()));
        }
        if let Some(e) = self.events.iter().find(|e| e.ts < 0) {
            return Err(Error::Invalid(format!(
                "user {}: negative timestamp {}",
                self.user_id, e.ts
            )));
        }
        self.events.sort_by_key(|e| e.ts);
        Ok(self)
    }
}

pub fn parse_user_log(line: &str) -> Result<UserLog> {
    serde_json::from_str::<UserLog>(line)?.normalize()
}

/// Reads one [`UserLog`] per non-blank line.
pub fn read_user_logs(path: &Path) -> Result<Vec<UserLog>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut logs = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let log = parse_user_log(&line)
            .map_err(|e| Error::format("user log", format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        logs.push(log);
    }
    Ok(logs)
}

pub fn write_user_logs(path: &Path, logs: &[UserLog]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for log in logs {
        serde_json::to_writer(&mut w, log)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Dense word ↔ id map ordered by descending corpus frequency.
///
/// Equality compares the word list only; frequencies are build metadata.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, WordId>,
    /// Present when built from a corpus; the on-disk format stores words only.
    counts: Option<Vec<u64>>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words
    }
}

impl Eq for Vocabulary {}

pub const VOCAB_HEADER: &str = "sumn-vocab v1";

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::format("vocabulary", format!("invalid word {w:?} at id {i}")));
            }
            if index.insert(w.clone(), i as WordId).is_some() {
                return Err(Error::format("vocabulary", format!("duplicate word {w:?}")));
            }
        }
        Ok(Vocabulary {
            words,
            index,
            counts: None,
        })
    }

    /// Keeps the `max_size` most frequent words with count ≥ `min_count`;
    /// equal counts are ordered lexicographically.
    pub fn from_counts(counts: &HashMap<String, u64>, max_size: usize, min_count: u64) -> Result<Self> {
        if max_size == 0 || min_count == 0 {
            return Err(Error::Invalid("max_size and min_count must be at least 1".into()));
        }
        let mut ranked: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(_, &c)| c >= min_count)
            .map(|(w, &c)| (w, c))
            .collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(max_size);
        if ranked.is_empty() {
            return Err(Error::NoTokens);
        }
        let freq = ranked.iter().map(|(_, c)| *c).collect();
        let mut vocab = Self::from_words(ranked.into_iter().map(|(w, _)| w.clone()).collect())?;
        vocab.counts = Some(freq);
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> Option<WordId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: WordId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: WordId) -> Option<u64> {
        self.counts.as_ref()?.get(id as usize).copied()
    }

    /// Text form: a `sumn-vocab v1 <size>` header, then one word per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{VOCAB_HEADER} {}\n", self.words.len());
        for w in &self.words {
            s.push_str(w);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::format("vocabulary", "missing header"))?;
        let size: usize = header
            .strip_prefix(VOCAB_HEADER)
            .map(str::trim)
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::format("vocabulary", format!("bad header {header:?}")))?;
        let words: Vec<String> = lines.map(str::to_owned).collect();
        if words.len() != size {
            return Err(Error::format(
                "vocabulary",
                format!("header declares {size} words, found {}", words.len()),
            ));
        }
        Self::from_words(words)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

pub fn count_tokens<'a>(texts: impl IntoIterator<Item = &'a str>) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    for text in texts {
        for tok in tokenize(text) {
            *counts.entry(tok).or_insert(0) += 1;
        }
    }
    counts
}

pub fn merge_counts(into: &mut HashMap<String, u64>, other: HashMap<String, u64>) {
    for (w, c) in other {
        *into.entry(w).or_insert(0) += c;
    }
}

pub fn build_vocab<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    max_size: usize,
    min_count: u64,
) -> Result<Vocabulary> {
    if max_size == 0 || min_count == 0 {
        return Err(Error::Invalid("max_size and min_count must be at least 1".into()));
    }
    Vocabulary::from_counts(&count_tokens(texts), max_size, min_count)
}

/// Counts every event text of `logs`, sharded per user.
pub fn build_vocab_from_logs(
    logs: &[UserLog],
    max_size: usize,
    min_count: u64,
    exec: Execution,
) -> Result<Vocabulary> {
    if max_size == 0 || min_count == 0 {
        return Err(Error::Invalid("max_size and min_count must be at least 1".into()));
    }
    let counts = exec.reduce_chunks(
        logs,
        256,
        HashMap::new,
        |acc, log| merge_counts(acc, count_tokens(log.events.iter().map(|e| e.text.as_str()))),
        merge_counts,
    );
    Vocabulary::from_counts(&counts, max_size, min_count)
}

/// Tokenizes, drops out-of-vocabulary words and keeps the first `max_words` ids.
pub fn encode_behavior(text: &str, vocab: &Vocabulary, max_words: usize) -> Vec<WordId> {
    tokenize(text)
        .iter()
        .filter_map(|w| vocab.id(w))
        .take(max_words)
        .collect()
}

/// Truncation thresholds: behaviors per history and words per behavior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub max_behaviors: usize,
    pub max_words: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            max_behaviors: 25,
            max_words: 35,
        }
    }
}

impl Caps {
    pub fn validate(&self) -> Result<()> {
        if self.max_behaviors == 0 || self.max_words == 0 {
            return Err(Error::Invalid("truncation caps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub user_id: String,
    pub history: Vec<Vec<WordId>>,
    pub target_counts: Counts,
}

impl TrainingSample {
    /// The reconstruction variant: targets are the history's own words.
    pub fn autoencoder(&self) -> TrainingSample {
        TrainingSample {
            user_id: self.user_id.clone(),
            history: self.history.clone(),
            target_counts: target_counts(&self.history),
        }
    }
}

pub fn target_counts<B: AsRef<[WordId]>>(behaviors: &[B]) -> Counts {
    let mut counts = Counts::new();
    for b in behaviors {
        for &id in b.as_ref() {
            *counts.entry(id).or_insert(0) += 1;
        }
    }
    counts
}

/// Encodes events in timestamp order and keeps the most recent
/// `caps.max_behaviors` non-empty behaviors.
pub fn encode_history<'a>(
    events: impl IntoIterator<Item = &'a Event>,
    vocab: &Vocabulary,
    caps: Caps,
) -> Vec<Vec<WordId>> {
    let mut history: Vec<Vec<WordId>> = events
        .into_iter()
        .map(|e| encode_behavior(&e.text, vocab, caps.max_words))
        .filter(|b| !b.is_empty())
        .collect();
    if history.len() > caps.max_behaviors {
        history.drain(..history.len() - caps.max_behaviors);
    }
    history
}

/// Events before `boundary_ts` become the history, the rest the target.
/// Returns `None` when either side is empty after encoding.
pub fn split_sample(log: &UserLog, boundary_ts: i64, vocab: &Vocabulary, caps: Caps) -> Option<TrainingSample> {
    let cut = log.events.partition_point(|e| e.ts < boundary_ts);
    let (before, after) = log.events.split_at(cut);
    let history = encode_history(before, vocab, caps);
    if history.is_empty() {
        return None;
    }
    let mut targets = Counts::new();
    for e in after {
        for w in tokenize(&e.text) {
            if let Some(id) = vocab.id(&w) {
                *targets.entry(id).or_insert(0) += 1;
            }
        }
    }
    if targets.is_empty() {
        return None;
    }
    Some(TrainingSample {
        user_id: log.user_id.clone(),
        history,
        target_counts: targets,
    })
}

/// Splits every log, dropping users without both windows. Order follows `logs`.
pub fn build_samples(
    logs: &[UserLog],
    boundary_ts: i64,
    vocab: &Vocabulary,
    caps: Caps,
    exec: Execution,
) -> Vec<TrainingSample> {
    exec.map(logs, |log| split_sample(log, boundary_ts, vocab, caps))
        .into_iter()
        .flatten()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::from_words(words.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn log(events: &[(i64, &str)]) -> UserLog {
        UserLog {
            user_id: "u".into(),
            events: events
                .iter()
                .map(|&(ts, t)| Event {
                    ts,
                    text: t.into(),
                })
                .collect(),
        }
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Video Games!"), vec!["video", "games"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("NBA 2k20, NBA"), vec!["nba", "2k20", "nba"]);
        assert_eq!(tokenize("  --x--y  "), vec!["x", "y"]);
    }

    #[test]
    fn build_vocab_examples() {
        let v = build_vocab(["a a b", "a c"], 2, 1).unwrap();
        assert_eq!(v.words(), ["a", "b"]);
        assert_eq!(v.count(0), Some(3));
        assert!(matches!(build_vocab(["x"], 10, 2), Err(Error::NoTokens)));
        let v = build_vocab(["a"], 1, 1).unwrap();
        assert_eq!(v.words(), ["a"]);
        assert_eq!(v.id("a"), Some(0));
        assert!(matches!(build_vocab(Vec::<&str>::new(), 5, 1), Err(Error::NoTokens)));
        assert!(build_vocab(["a"], 0, 1).is_err());
    }

    #[test]
    fn vocab_text_round_trip() {
        let v = build_vocab(["b a c a", "c c"], 10, 1).unwrap();
        assert_eq!(v.to_text(), "sumn-vocab v1 3\nc\na\nb\n");
        let back = Vocabulary::from_text(&v.to_text()).unwrap();
        assert_eq!(back.words(), v.words());
        assert!(Vocabulary::from_text("sumn-vocab v1 2\na\n").is_err());
        assert!(Vocabulary::from_text("vocab 1\na\n").is_err());
        assert!(Vocabulary::from_text("sumn-vocab v1 2\na\na\n").is_err());
    }

    #[test]
    fn encode_behavior_examples() {
        let v = vocab(&["a", "b"]);
        assert_eq!(encode_behavior("a b zz", &v, 35), vec![0, 1]);
        assert_eq!(encode_behavior("a a a", &v, 2), vec![0, 0]);
        assert!(encode_behavior("zz", &v, 35).is_empty());
    }

    #[test]
    fn split_sample_examples() {
        let v = vocab(&["h1", "h2", "t1", "t2"]);
        let caps = Caps::default();
        let s = split_sample(&log(&[(1, "h1"), (2, "h2"), (10, "t1 t1"), (11, "t2")]), 5, &v, caps).unwrap();
        assert_eq!(s.history, vec![vec![0], vec![1]]);
        assert_eq!(s.target_counts, Counts::from([(2, 2), (3, 1)]));

        assert!(split_sample(&log(&[(1, "h1"), (2, "h2")]), 5, &v, caps).is_none());
        assert!(split_sample(&log(&[(7, "t1")]), 5, &v, caps).is_none());
        // all-OOV history is a skip too
        assert!(split_sample(&log(&[(1, "zz"), (7, "t1")]), 5, &v, caps).is_none());
    }

    #[test]
    fn split_sample_keeps_most_recent_behaviors() {
        let words: Vec<String> = (0..31).map(|i| format!("w{i}")).collect();
        let v = Vocabulary::from_words(words.clone()).unwrap();
        let mut events: Vec<(i64, &str)> = words[..30].iter().enumerate().map(|(i, w)| (i as i64, w.as_str())).collect();
        events.push((100, "w30"));
        let s = split_sample(&log(&events), 50, &v, Caps::default()).unwrap();
        assert_eq!(s.history.len(), 25);
        assert_eq!(s.history.first(), Some(&vec![5]));
        assert_eq!(s.history.last(), Some(&vec![29]));
    }

    #[test]
    fn target_counts_examples() {
        assert_eq!(target_counts(&[vec![0], vec![0, 1]]), Counts::from([(0, 2), (1, 1)]));
        assert!(target_counts::<Vec<WordId>>(&[]).is_empty());
        assert_eq!(target_counts(&[vec![4, 4, 4]]), Counts::from([(4, 3)]));
    }

    #[test]
    fn autoencoder_targets_are_history_words() {
        let s = TrainingSample {
            user_id: "u".into(),
            history: vec![vec![0, 0], vec![1]],
            target_counts: Counts::from([(7, 1)]),
        };
        assert_eq!(s.autoencoder().target_counts, Counts::from([(0, 2), (1, 1)]));
    }

    #[test]
    fn parse_rejects_bad_records() {
        assert!(parse_user_log(r#"{"user_id":"","events":[]}"#).is_err());
        assert!(parse_user_log(r#"{"user_id":"a","events":[{"ts":-1,"text":"x"}]}"#).is_err());
        let l = parse_user_log(r#"{"user_id":"a","events":[{"ts":5,"text":"x"},{"ts":1,"text":"y"}]}"#).unwrap();
        assert_eq!(l.events[0].ts, 1);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn corpus() -> impl Strategy<Value = Vec<String>> {
            prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "dd", "e", "ff", "g"]), 0..8)
                    .prop_map(|ws| ws.join(" ")),
                1..12,
            )
        }

        proptest! {
            #[test]
            fn vocab_is_shard_order_independent(texts in corpus(), cap in 1usize..8, split in 0usize..12) {
                let whole = build_vocab(texts.iter().map(String::as_str), cap, 1);
                let k = split.min(texts.len());
                let mut counts = count_tokens(texts[k..].iter().map(String::as_str));
                merge_counts(&mut counts, count_tokens(texts[..k].iter().map(String::as_str)));
                let sharded = Vocabulary::from_counts(&counts, cap, 1);
                match (whole, sharded) {
                    (Ok(a), Ok(b)) => {
                        prop_assert_eq!(a.words(), b.words());
                        prop_assert!(a.len() <= cap);
                        for (i, w) in a.words().iter().enumerate() {
                            prop_assert_eq!(a.id(w), Some(i as WordId));
                        }
                    }
                    (Err(Error::NoTokens), Err(Error::NoTokens)) => {}
                    (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
                }
            }

            #[test]
            fn encoded_behaviors_respect_caps(texts in corpus(), max_words in 1usize..5) {
                let v = vocab(&["a", "c", "ff"]);
                for t in &texts {
                    let ids = encode_behavior(t, &v, max_words);
                    prop_assert!(ids.len() <= max_words);
                    prop_assert!(ids.iter().all(|&i| (i as usize) < v.len()));
                }
            }

            #[test]
            fn split_windows_never_overlap(
                ts in prop::collection::vec(0i64..100, 1..20),
                boundary in 0i64..100,
            ) {
                let v = vocab(&["a"]);
                let events: Vec<(i64, &str)> = ts.iter().map(|&t| (t, "a")).collect();
                let l = log(&events).normalize().unwrap();
                if let Some(s) = split_sample(&l, boundary, &v, Caps::default()) {
                    let before = ts.iter().filter(|&&t| t < boundary).count();
                    let after = ts.len() - before;
                    prop_assert_eq!(s.history.len(), before.min(25));
                    prop_assert_eq!(s.target_counts[&0] as usize, after);
                }
            }
        }
    }
}

//! Session ingestion: whitespace session lines -> filtered, index-mapped
//! sessions -> prefix-augmented examples -> fixed-length windows.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Dense 1-based item index; 0 is the padding sentinel and never appears in
/// session data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId(pub u32);

pub const PAD: ItemId = ItemId(0);

impl ItemId {
    /// Row index into the `(m + 1) x d` embedding table.
    #[inline]
    pub fn row(self) -> usize {
        self.0 as usize
    }

    #[inline]
    pub fn is_pad(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Chronologically ordered item sequence, exactly as ingested.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub items: Vec<ItemId>,
}

impl Session {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// A prefix of a session plus the item that immediately followed it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<ItemId>,
    pub target: ItemId,
}

/// `Example` squeezed into exactly `n` slots, left-padded with 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedExample {
    pub slots: Vec<ItemId>,
    pub pad_count: usize,
    pub target: ItemId,
}

impl FixedExample {
    pub fn n(&self) -> usize {
        self.slots.len()
    }

    /// Number of real (non-pad) items.
    pub fn live_len(&self) -> usize {
        self.slots.len() - self.pad_count
    }

    /// `true` per slot that holds the padding sentinel.
    pub fn pad_mask(&self) -> Vec<bool> {
        self.slots.iter().map(|s| s.is_pad()).collect()
    }

    /// Drops the leading pads, recovering the (possibly truncated) input.
    pub fn decode(&self) -> Vec<ItemId> {
        self.slots[self.pad_count..].to_vec()
    }
}

/// Bijective raw-token <-> dense-index map over the filtered corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<ItemId> {
        self.index.get(token).copied().map(ItemId)
    }

    pub fn token(&self, id: ItemId) -> Option<&str> {
        if id.is_pad() {
            return None;
        }
        self.tokens.get(id.0 as usize - 1).map(String::as_str)
    }

    fn insert(&mut self, token: &str) -> ItemId {
        if let Some(&i) = self.index.get(token) {
            return ItemId(i);
        }
        self.tokens.push(token.to_string());
        let id = self.tokens.len() as u32;
        self.index.insert(token.to_string(), id);
        ItemId(id)
    }

    /// Rebuilds a vocab from tokens listed in index order (1..=m).
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.insert(t.clone(), i as u32 + 1);
        }
        Vocab { tokens, index }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusError {
    EmptyCorpus,
    SessionTooShort { len: usize },
    DegenerateSplit { sessions: usize, test: usize },
    UnknownToken { token: String },
}

impl fmt::Display for CorpusError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CorpusError::EmptyCorpus => write!(f, "no sessions survive filtering"),
            CorpusError::SessionTooShort { len } => {
                write!(f, "session of length {} cannot be augmented", len)
            }
            CorpusError::DegenerateSplit { sessions, test } => write!(
                f,
                "holdout split leaves {} of {} sessions for testing",
                test, sessions
            ),
            CorpusError::UnknownToken { token } => write!(f, "token {:?} not in vocabulary", token),
        }
    }
}

/// One session per nonempty line, whitespace-separated raw tokens, `#` lines
/// ignored. Returns the sessions in file order plus the count of skipped
/// blank lines.
pub fn parse_sessions_text(text: &str) -> (Vec<Vec<String>>, usize) {
    let mut sessions = Vec::new();
    let mut skipped = 0usize;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<String> = trimmed.split_whitespace().map(|t| t.to_string()).collect();
        if tokens.is_empty() {
            if !line.is_empty() {
                skipped += 1;
            }
            continue;
        }
        sessions.push(tokens);
    }
    (sessions, skipped)
}

/// Result of [`filter_and_index`]. `source_index[i]` is the position the
/// i-th surviving session held in the raw input, which lets callers re-split
/// a jointly filtered train+test concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredCorpus {
    pub sessions: Vec<Session>,
    pub source_index: Vec<usize>,
    pub vocab: Vocab,
}

impl FilteredCorpus {
    pub fn item_count(&self) -> usize {
        self.vocab.len()
    }
}

/// Drops rare items and short sessions, iterating to a fixed point: removing
/// a short session lowers item counts, which can orphan more sessions.
/// Surviving raw tokens get dense ids 1..=m in first-appearance order.
pub fn filter_and_index(
    raw: &[Vec<String>],
    min_item_count: usize,
    min_session_len: usize,
) -> Result<FilteredCorpus, CorpusError> {
    assert!(min_item_count >= 1, "min_item_count must be at least 1");
    assert!(min_session_len >= 2, "min_session_len must be at least 2");

    let mut kept: Vec<(usize, Vec<&str>)> = raw
        .iter()
        .enumerate()
        .map(|(i, s)| (i, s.iter().map(String::as_str).collect()))
        .collect();

    loop {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, s) in &kept {
            for t in s {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        let mut changed = false;
        let mut next: Vec<(usize, Vec<&str>)> = Vec::with_capacity(kept.len());
        for (idx, s) in kept {
            let old_len = s.len();
            let trimmed: Vec<&str> = s
                .into_iter()
                .filter(|t| counts.get(t).copied().unwrap_or(0) >= min_item_count)
                .collect();
            changed |= trimmed.len() != old_len;
            if trimmed.len() < min_session_len {
                changed = true;
                continue;
            }
            next.push((idx, trimmed));
        }
        kept = next;
        if kept.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        if !changed {
            break;
        }
    }

    let mut vocab = Vocab::default();
    let mut sessions = Vec::with_capacity(kept.len());
    let mut source_index = Vec::with_capacity(kept.len());
    for (idx, s) in kept {
        let items = s.iter().map(|t| vocab.insert(t)).collect();
        sessions.push(Session { items });
        source_index.push(idx);
    }
    Ok(FilteredCorpus {
        sessions,
        source_index,
        vocab,
    })
}

/// All length >= 2 prefixes of a session, each predicting its last item:
/// a session of length L yields exactly L - 1 examples.
pub fn augment(session: &Session) -> Result<Vec<Example>, CorpusError> {
    if session.len() < 2 {
        return Err(CorpusError::SessionTooShort { len: session.len() });
    }
    let mut out = Vec::with_capacity(session.len() - 1);
    for k in 2..=session.len() {
        out.push(Example {
            input: session.items[..k - 1].to_vec(),
            target: session.items[k - 1],
        });
    }
    Ok(out)
}

pub fn augment_all(sessions: &[Session]) -> Result<Vec<Example>, CorpusError> {
    let mut out = Vec::new();
    for s in sessions {
        out.extend(augment(s)?);
    }
    Ok(out)
}

/// Keeps the last `min(n, |input|)` items and left-pads with the sentinel.
pub fn to_fixed(example: &Example, n: usize) -> FixedExample {
    assert!(n >= 1, "window length must be positive");
    assert!(!example.input.is_empty(), "example input must be nonempty");
    let keep = example.input.len().min(n);
    let pad_count = n - keep;
    let mut slots = vec![PAD; pad_count];
    slots.extend_from_slice(&example.input[example.input.len() - keep..]);
    FixedExample {
        slots,
        pad_count,
        target: example.target,
    }
}

/// Order-preserving split: the last `ceil(fraction * S)` sessions become the
/// test side. Errors out if either side would be empty.
pub fn split_holdout(sessions: &[Session], fraction: f64) -> Result<(Vec<Session>, Vec<Session>), CorpusError> {
    assert!(fraction > 0.0 && fraction < 1.0, "fraction must be in (0, 1)");
    let s = sessions.len();
    let test = libm::ceil(fraction * s as f64) as usize;
    if test == 0 || test >= s {
        return Err(CorpusError::DegenerateSplit { sessions: s, test });
    }
    let cut = s - test;
    Ok((sessions[..cut].to_vec(), sessions[cut..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(sessions: &[&[&str]]) -> Vec<Vec<String>> {
        sessions
            .iter()
            .map(|s| s.iter().map(|t| t.to_string()).collect())
            .collect()
    }

    #[test]
    fn parse_transcribes_lines() {
        let (sessions, skipped) = parse_sessions_text("a b c\n\n# comment\nx\n  \n");
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0], vec!["a", "b", "c"]);
        assert_eq!(sessions[1], vec!["x"]); // filtering removes it later
        assert_eq!(skipped, 1); // the whitespace-only line
    }

    #[test]
    fn parse_empty_file() {
        let (sessions, skipped) = parse_sessions_text("");
        assert!(sessions.is_empty());
        assert_eq!(skipped, 0);
    }

    #[test]
    fn threshold_boundary_keeps_items_at_exactly_min_count() {
        let sessions = raw(&[&["a", "b"], &["a", "b"], &["a", "b"], &["a", "b"], &["a", "b"]]);
        let out = filter_and_index(&sessions, 5, 2).unwrap();
        assert_eq!(out.sessions.len(), 5);
        assert_eq!(out.item_count(), 2);
        assert_eq!(out.vocab.id("a"), Some(ItemId(1)));
        assert_eq!(out.vocab.id("b"), Some(ItemId(2)));
    }

    #[test]
    fn filtering_cascades_to_empty_corpus() {
        // hand-simulated fixed point: c has count 1 -> [c] dies as too short;
        // then a, b have count 1 each -> stripped -> [a, b] dies too
        let sessions = raw(&[&["a", "b"], &["c"]]);
        assert_eq!(
            filter_and_index(&sessions, 5, 2).unwrap_err(),
            CorpusError::EmptyCorpus
        );
    }

    #[test]
    fn min_count_one_only_length_filters() {
        let sessions = raw(&[&["a", "b"], &["c"]]);
        let out = filter_and_index(&sessions, 1, 2).unwrap();
        assert_eq!(out.sessions.len(), 1);
        assert_eq!(out.item_count(), 2);
    }

    #[test]
    fn fixed_point_invariant_holds() {
        let sessions = raw(&[
            &["a", "b", "c"],
            &["a", "b"],
            &["a", "c"],
            &["b", "c", "d"],
            &["d", "e"],
        ]);
        let out = filter_and_index(&sessions, 2, 2).unwrap();
        let mut counts: BTreeMap<ItemId, usize> = BTreeMap::new();
        for s in &out.sessions {
            assert!(s.len() >= 2);
            for &i in &s.items {
                *counts.entry(i).or_insert(0) += 1;
            }
        }
        for (_, c) in counts {
            assert!(c >= 2);
        }
    }

    #[test]
    fn vocab_round_trips() {
        let sessions = raw(&[&["x", "y", "x"], &["y", "z"], &["z", "x"]]);
        let out = filter_and_index(&sessions, 1, 2).unwrap();
        for i in 1..=out.item_count() as u32 {
            let tok = out.vocab.token(ItemId(i)).unwrap();
            assert_eq!(out.vocab.id(tok), Some(ItemId(i)));
        }
    }

    #[test]
    fn augment_enumerates_prefixes() {
        let s = Session {
            items: vec![ItemId(1), ItemId(2), ItemId(3), ItemId(4)],
        };
        let ex = augment(&s).unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[0], Example { input: vec![ItemId(1)], target: ItemId(2) });
        assert_eq!(ex[1], Example { input: vec![ItemId(1), ItemId(2)], target: ItemId(3) });
        assert_eq!(
            ex[2],
            Example { input: vec![ItemId(1), ItemId(2), ItemId(3)], target: ItemId(4) }
        );
    }

    #[test]
    fn augment_minimal_session() {
        let s = Session { items: vec![ItemId(5), ItemId(9)] };
        let ex = augment(&s).unwrap();
        assert_eq!(ex, vec![Example { input: vec![ItemId(5)], target: ItemId(9) }]);
    }

    #[test]
    fn augment_count_identity() {
        // brute-force summation oracle over a small corpus
        let sessions: Vec<Session> = (2..7)
            .map(|len| Session {
                items: (1..=len as u32).map(ItemId).collect(),
            })
            .collect();
        let total_len: usize = sessions.iter().map(Session::len).sum();
        let examples = augment_all(&sessions).unwrap();
        assert_eq!(examples.len(), total_len - sessions.len());
    }

    #[test]
    fn augment_rejects_singletons() {
        let s = Session { items: vec![ItemId(1)] };
        assert_eq!(augment(&s), Err(CorpusError::SessionTooShort { len: 1 }));
    }

    #[test]
    fn to_fixed_left_pads() {
        let ex = Example { input: vec![ItemId(7), ItemId(8)], target: ItemId(9) };
        let f = to_fixed(&ex, 5);
        assert_eq!(f.slots, vec![PAD, PAD, PAD, ItemId(7), ItemId(8)]);
        assert_eq!(f.pad_count, 3);
        assert_eq!(f.target, ItemId(9));
    }

    #[test]
    fn to_fixed_exact_fit() {
        let ex = Example { input: vec![ItemId(1), ItemId(2), ItemId(3)], target: ItemId(4) };
        let f = to_fixed(&ex, 3);
        assert_eq!(f.slots, vec![ItemId(1), ItemId(2), ItemId(3)]);
        assert_eq!(f.pad_count, 0);
    }

    #[test]
    fn to_fixed_truncates_to_last_n() {
        let ex = Example {
            input: (1..=6).map(ItemId).collect(),
            target: ItemId(7),
        };
        let f = to_fixed(&ex, 4);
        assert_eq!(f.slots, vec![ItemId(3), ItemId(4), ItemId(5), ItemId(6)]);
        assert_eq!(f.pad_count, 0);
    }

    #[test]
    fn split_last_fifth() {
        let sessions: Vec<Session> = (0..10)
            .map(|i| Session { items: vec![ItemId(i + 1), ItemId(i + 2)] })
            .collect();
        let (train, test) = split_holdout(&sessions, 0.2).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(test.len(), 2);
        assert_eq!(train[0], sessions[0]);
        assert_eq!(test[1], sessions[9]);
    }

    #[test]
    fn split_ceiling_arithmetic() {
        let sessions: Vec<Session> = (0..5)
            .map(|i| Session { items: vec![ItemId(i + 1), ItemId(i + 2)] })
            .collect();
        let (train, test) = split_holdout(&sessions, 0.2).unwrap();
        assert_eq!(train.len(), 4);
        assert_eq!(test.len(), 1);
    }

    #[test]
    fn split_rejects_degenerate() {
        let sessions: Vec<Session> = (0..3)
            .map(|i| Session { items: vec![ItemId(i + 1), ItemId(i + 2)] })
            .collect();
        assert!(matches!(
            split_holdout(&sessions, 0.99),
            Err(CorpusError::DegenerateSplit { .. })
        ));
    }
}

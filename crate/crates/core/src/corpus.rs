//! Corpus ingestion: frequency-capped vocabulary, id encoding, and stream batching.
//!
//! Text is expected pre-tokenized (one sentence per line, whitespace between
//! tokens). Every line contributes one `<eos>` token. Ids `0` and `1` are
//! reserved for `<unk>` and `<eos>`; retained words follow in order of
//! decreasing training frequency, ties broken by first occurrence.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOS: &str = "<eos>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, usize>,
    id_to_word: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    pub const UNK_ID: usize = 0;
    pub const EOS_ID: usize = 1;

    /// Retains the `cap` most frequent tokens of `tokens`. `<unk>` and `<eos>`
    /// are always present and never compete for the cap.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, cap: usize) -> Result<Self> {
        Self::build_counted(tokens, cap, 0)
    }

    /// Builds from newline-delimited training text; the `<eos>` count is the number of lines.
    pub fn from_text(text: &str, cap: usize) -> Result<Self> {
        let lines = text.lines().count() as u64;
        Self::build_counted(text.split_whitespace(), cap, lines)
    }

    fn build_counted<'a>(tokens: impl IntoIterator<Item = &'a str>, cap: usize, eos_lines: u64) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("vocabulary cap", "cap must be at least 1"));
        }
        let mut stats: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut total = 0u64;
        let mut literal_eos = 0u64;
        for (pos, tok) in tokens.into_iter().enumerate() {
            total += 1;
            if tok == EOS {
                literal_eos += 1;
                continue;
            }
            stats.entry(tok).or_insert((0, pos)).0 += 1;
        }
        if total == 0 {
            return Err(Error::invalid("token stream", "empty"));
        }
        let literal_unk = stats.remove(UNK).map_or(0, |(c, _)| c);

        let mut ranked: Vec<(&str, u64, usize)> = stats.into_iter().map(|(w, (c, f))| (w, c, f)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        let dropped: u64 = ranked.iter().skip(cap).map(|r| r.1).sum();
        ranked.truncate(cap);

        let mut vocab = Self {
            word_to_id: HashMap::with_capacity(ranked.len() + 2),
            id_to_word: Vec::with_capacity(ranked.len() + 2),
            counts: Vec::with_capacity(ranked.len() + 2),
        };
        vocab.push(UNK, literal_unk + dropped);
        vocab.push(EOS, literal_eos + eos_lines);
        for (w, c, _) in ranked {
            vocab.push(w, c);
        }
        Ok(vocab)
    }

    fn push(&mut self, word: &str, count: u64) {
        self.word_to_id.insert(word.to_owned(), self.id_to_word.len());
        self.id_to_word.push(word.to_owned());
        self.counts.push(count);
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        Self::UNK_ID
    }

    pub fn eos_id(&self) -> usize {
        Self::EOS_ID
    }

    /// Id of `word`, or the `<unk>` id when it is out of vocabulary.
    pub fn id(&self, word: &str) -> usize {
        self.word_to_id.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_to_id.contains_key(word)
    }

    pub fn word(&self, id: usize) -> Option<&str> {
        self.id_to_word.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.id_to_word.iter().map(String::as_str)
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<&str> {
        ids.iter().map(|&i| self.word(i).unwrap_or(UNK)).collect()
    }

    /// `word<TAB>id<TAB>count` per line, in id order.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for (id, (w, c)) in self.id_to_word.iter().zip(&self.counts).enumerate() {
            let _ = writeln!(out, "{w}\t{id}\t{c}");
        }
        out
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let mut vocab = Self {
            word_to_id: HashMap::new(),
            id_to_word: Vec::new(),
            counts: Vec::new(),
        };
        for (lineno, line) in s.lines().enumerate() {
            let bad = |msg: &str| Error::invalid("vocabulary file", format!("line {}: {msg}", lineno + 1));
            let mut fields = line.split('\t');
            let (Some(w), Some(id), Some(c), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected word<TAB>id<TAB>count"));
            };
            let id: usize = id.parse().map_err(|_| bad("id is not an integer"))?;
            let c: u64 = c.parse().map_err(|_| bad("count is not an integer"))?;
            if id != vocab.len() {
                return Err(bad("ids must be dense and ascending"));
            }
            if vocab.word_to_id.contains_key(w) {
                return Err(bad("duplicate word"));
            }
            vocab.push(w, c);
        }
        if vocab.word(Self::UNK_ID) != Some(UNK) || vocab.word(Self::EOS_ID) != Some(EOS) {
            return Err(Error::invalid("vocabulary file", "ids 0 and 1 must be <unk> and <eos>"));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_string(&fs::read_to_string(path)?)
    }

    /// Short content hash of the serialized vocabulary, stored in checkpoints.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_string().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub ids: Vec<usize>,
    pub token_count: usize,
    pub unk_count: usize,
}

impl EncodedCorpus {
    pub fn from_ids(ids: Vec<usize>, unk_id: usize) -> Self {
        let unk_count = ids.iter().filter(|&&i| i == unk_id).count();
        Self {
            token_count: ids.len(),
            unk_count,
            ids,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn unk_rate(&self) -> f64 {
        if self.token_count == 0 {
            0.0
        } else {
            self.unk_count as f64 / self.token_count as f64
        }
    }
}

/// Whitespace-tokenizes each line, maps tokens to ids and appends `<eos>` per line.
/// Token and `<unk>` counts include the boundary tokens.
pub fn encode(text: &str, vocab: &Vocabulary) -> EncodedCorpus {
    let mut ids = Vec::new();
    let mut unk_count = 0;
    for line in text.lines() {
        for tok in line.split_whitespace() {
            let id = vocab.id(tok);
            if id == vocab.unk_id() {
                unk_count += 1;
            }
            ids.push(id);
        }
        ids.push(vocab.eos_id());
    }
    EncodedCorpus {
        token_count: ids.len(),
        unk_count,
        ids,
    }
}

/// One unrolled training block: `batch` rows by `len` steps, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub batch: usize,
    pub len: usize,
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

impl Block {
    pub fn input(&self, row: usize, t: usize) -> usize {
        self.inputs[row * self.len + t]
    }

    pub fn target(&self, row: usize, t: usize) -> usize {
        self.targets[row * self.len + t]
    }

    /// Inputs of every stream at step `t`.
    pub fn input_column(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| self.input(b, t)).collect()
    }

    pub fn target_column(&self, t: usize) -> Vec<usize> {
        (0..self.batch).map(|b| self.target(b, t)).collect()
    }
}

/// Splits a corpus into `batch_size` contiguous streams and walks them in
/// lockstep, `bptt_len` positions at a time. Only whole blocks are yielded.
#[derive(Debug, Clone)]
pub struct BatchCursor<'a> {
    ids: &'a [usize],
    batch_size: usize,
    bptt_len: usize,
    stream_len: usize,
    position: usize,
}

pub fn batches(corpus: &EncodedCorpus, batch_size: usize, bptt_len: usize) -> Result<BatchCursor<'_>> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(Error::invalid("batch shape", "batch_size and bptt_len must be >= 1"));
    }
    if corpus.len() < batch_size * 2 {
        return Err(Error::invalid(
            "corpus",
            format!("{} tokens is too small for {batch_size} streams", corpus.len()),
        ));
    }
    Ok(BatchCursor {
        ids: &corpus.ids,
        batch_size,
        bptt_len,
        stream_len: corpus.len() / batch_size,
        position: 0,
    })
}

impl BatchCursor<'_> {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn bptt_len(&self) -> usize {
        self.bptt_len
    }

    pub fn stream_len(&self) -> usize {
        self.stream_len
    }

    pub fn blocks_per_epoch(&self) -> usize {
        (self.stream_len - 1) / self.bptt_len
    }

    pub fn targets_per_epoch(&self) -> usize {
        self.batch_size * self.blocks_per_epoch() * self.bptt_len
    }
}

impl Iterator for BatchCursor<'_> {
    type Item = Block;

    fn next(&mut self) -> Option<Block> {
        if self.position + self.bptt_len > self.stream_len - 1 {
            return None;
        }
        let (b, t) = (self.batch_size, self.bptt_len);
        let mut inputs = Vec::with_capacity(b * t);
        let mut targets = Vec::with_capacity(b * t);
        for s in 0..b {
            let start = s * self.stream_len + self.position;
            inputs.extend_from_slice(&self.ids[start..start + t]);
            targets.extend_from_slice(&self.ids[start + 1..start + t + 1]);
        }
        self.position += t;
        Some(Block {
            batch: b,
            len: t,
            inputs,
            targets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cap_keeps_most_frequent() {
        let v = Vocabulary::build("a a b b b c".split(' '), 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.word(2), Some("b"));
        assert_eq!(v.word(3), Some("a"));
        assert_eq!(v.id("c"), v.unk_id());
        assert_eq!(v.count(v.unk_id()), Some(1));
    }

    #[test]
    fn ties_follow_first_occurrence() {
        let v = Vocabulary::build("z y x y z x".split(' '), 2).unwrap();
        assert_eq!(v.word(2), Some("z"));
        assert_eq!(v.word(3), Some("y"));
    }

    #[test]
    fn empty_stream_and_zero_cap_are_errors() {
        assert!(Vocabulary::build(std::iter::empty(), 5).is_err());
        assert!(Vocabulary::build(["a"], 0).is_err());
    }

    #[test]
    fn large_cap_means_no_unk() {
        let text = "the cat sat\non the mat\n";
        let v = Vocabulary::from_text(text, 100).unwrap();
        let c = encode(text, &v);
        assert_eq!(c.unk_count, 0);
        assert_eq!(c.token_count, 8);
    }

    #[test]
    fn encode_definition() {
        let v = Vocabulary::build(["a"], 10).unwrap();
        let c = encode("a c\n", &v);
        assert_eq!(c.ids, vec![v.id("a"), v.unk_id(), v.eos_id()]);
        assert_eq!(c.unk_count, 1);
        let c = encode("\n", &v);
        assert_eq!(c.ids, vec![v.eos_id()]);
    }

    #[test]
    fn literal_reserved_tokens_map_to_reserved_ids() {
        let v = Vocabulary::from_text("a <unk> b\n<unk> a\n", 10).unwrap();
        assert!(!v.words().skip(2).any(|w| w == UNK));
        let c = encode("a <unk> b\n", &v);
        assert_eq!(c.ids, vec![v.id("a"), v.unk_id(), v.id("b"), v.eos_id()]);
        assert_eq!(c.unk_count, 1);
    }

    #[test]
    fn decode_inverts_encode_on_retained_words() {
        let text = "x y z x\ny y\n";
        let v = Vocabulary::from_text(text, 10).unwrap();
        let c = encode(text, &v);
        let words = v.decode(&c.ids);
        assert_eq!(words, vec!["x", "y", "z", "x", EOS, "y", "y", EOS]);
    }

    #[test]
    fn vocab_file_roundtrip_is_byte_identical() {
        let v = Vocabulary::from_text("b a b c\nc c d\n", 3).unwrap();
        let s = v.to_file_string();
        let back = Vocabulary::from_file_string(&s).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.to_file_string(), s);
        assert_eq!(back.hash(), v.hash());
        assert!(Vocabulary::from_file_string("a\t0\n").is_err());
        assert!(Vocabulary::from_file_string("<unk>\t0\t1\n<eos>\t2\t1\n").is_err());
    }

    #[test]
    fn batches_hand_enumeration() {
        let corpus = EncodedCorpus::from_ids((0..10).collect(), 99);
        let mut cur = batches(&corpus, 2, 2).unwrap();
        assert_eq!(cur.stream_len(), 5);
        let first = cur.next().unwrap();
        assert_eq!(first.inputs, vec![0, 1, 5, 6]);
        assert_eq!(first.targets, vec![1, 2, 6, 7]);
        let second = cur.next().unwrap();
        assert_eq!(second.inputs, vec![2, 3, 7, 8]);
        assert_eq!(second.targets, vec![3, 4, 8, 9]);
        assert!(cur.next().is_none());
    }

    #[test]
    fn degenerate_batch_yields_next_word_pairs() {
        let corpus = EncodedCorpus::from_ids(vec![4, 7, 1, 3], 0);
        let pairs: Vec<_> = batches(&corpus, 1, 1)
            .unwrap()
            .map(|b| (b.inputs[0], b.targets[0]))
            .collect();
        assert_eq!(pairs, vec![(4, 7), (7, 1), (1, 3)]);
    }

    #[test]
    fn too_small_corpus_is_an_error() {
        let corpus = EncodedCorpus::from_ids(vec![0, 1, 2], 0);
        assert!(batches(&corpus, 2, 1).is_err());
        assert!(batches(&corpus, 1, 0).is_err());
    }

    fn brute_force_unk(text: &str, vocab: &Vocabulary) -> (usize, usize) {
        let mut tokens = 0;
        let mut unk = 0;
        for line in text.lines() {
            for tok in line.split(' ').filter(|t| !t.is_empty()) {
                tokens += 1;
                if !vocab.words().skip(2).any(|w| w == tok) {
                    unk += 1;
                }
            }
            tokens += 1;
        }
        (tokens, unk)
    }

    proptest! {
        #[test]
        fn unk_rate_matches_recount(
            lines in prop::collection::vec(prop::collection::vec(0u8..12, 0..8), 1..30),
            cap in 1usize..10,
        ) {
            let text: String = lines
                .iter()
                .map(|l| l.iter().map(|w| format!("w{w}")).collect::<Vec<_>>().join(" ") + "\n")
                .collect();
            let vocab = Vocabulary::from_text(&text, cap);
            prop_assume!(vocab.is_ok());
            let vocab = vocab.unwrap();
            prop_assert!(vocab.len() <= cap + 2);
            let c = encode(&text, &vocab);
            let (tokens, unk) = brute_force_unk(&text, &vocab);
            prop_assert_eq!(c.token_count, tokens);
            prop_assert_eq!(c.unk_count, unk);
            prop_assert!(c.ids.iter().all(|&i| i < vocab.len()));
            prop_assert_eq!(Vocabulary::from_text(&text, cap).unwrap(), vocab);
        }

        #[test]
        fn batch_coverage(n in 4usize..200, batch in 1usize..5, bptt in 1usize..7) {
            prop_assume!(n >= 2 * batch);
            let corpus = EncodedCorpus::from_ids((0..n).collect(), usize::MAX);
            let cur = batches(&corpus, batch, bptt).unwrap();
            let expected = cur.targets_per_epoch();
            let stream_len = cur.stream_len();
            let blocks: Vec<Block> = cur.collect();
            let total: usize = blocks.iter().map(|b| b.targets.len()).sum();
            prop_assert_eq!(total, expected);
            prop_assert_eq!(expected, batch * ((stream_len - 1) / bptt) * bptt);
            for s in 0..batch {
                let targets: Vec<usize> = blocks
                    .iter()
                    .flat_map(|b| (0..b.len).map(move |t| b.target(s, t)))
                    .collect();
                let stream = &corpus.ids[s * stream_len..(s + 1) * stream_len];
                prop_assert_eq!(&targets[..], &stream[1..1 + targets.len()]);
                prop_assert!(stream_len - 1 - targets.len() < bptt);
            }
        }
    }
}

//! Byte-level tokenization and a deterministic English-like text generator.

use std::path::Path;

use apollo_core::CounterRng;

use crate::error::{HarnessError, Result};

/// 256 byte values plus one padding id.
pub const VOCAB_SIZE: usize = 257;
pub const PAD_ID: usize = 256;

pub fn tokenize(text: &str) -> Vec<usize> {
    text.bytes().map(usize::from).collect()
}

/// Inverse of [`tokenize`]; padding ids are dropped.
pub fn detokenize(ids: &[usize]) -> Result<String> {
    let bytes = ids
        .iter()
        .filter(|&&id| id != PAD_ID)
        .map(|&id| u8::try_from(id).map_err(|_| HarnessError::Config(format!("token id {id} is not a byte"))))
        .collect::<Result<Vec<u8>>>()?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Config(format!("tokens are not UTF-8: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// First `split` of the tokens train, the rest validation.
pub fn split_tokens(ids: Vec<usize>, split: f64) -> Corpus {
    let cut = ((ids.len() as f64 * split) as usize).min(ids.len());
    let mut train = ids;
    let validation = train.split_off(cut);
    Corpus { train, validation }
}

pub fn load_corpus(path: &Path, split: f64) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    if text.is_empty() {
        return Err(HarnessError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, "corpus is empty"),
        ));
    }
    Ok(split_tokens(tokenize(&text), split))
}

const SUBJECTS: &[&str] = &[
    "the old man", "a young woman", "the farmer", "my brother", "the captain", "our teacher", "the child",
    "a stranger", "the doctor", "her mother", "the king", "a small dog", "the river", "the wind", "his friend",
    "the merchant", "a tired soldier", "the baker", "the village", "the queen",
];
const VERBS: &[&str] = &[
    "walked", "looked", "waited", "spoke", "listened", "laughed", "worked", "wandered", "rested", "sang",
    "turned", "stood", "slept", "called", "smiled",
];
const TRANSITIVE: &[&str] = &[
    "found", "carried", "opened", "watched", "remembered", "painted", "built", "lost", "followed", "held",
    "sold", "read", "wrote", "cleaned", "fixed",
];
const OBJECTS: &[&str] = &[
    "the door", "a letter", "the bread", "an old map", "the garden", "a wooden box", "the boat", "the lamp",
    "a red coat", "the book", "the bridge", "a silver coin", "the fence", "the window", "a basket of apples",
];
const PLACES: &[&str] = &[
    "the market", "the hill", "the house", "the forest", "the church", "the harbour", "the field", "the road",
    "the kitchen", "the station",
];
const PREPOSITIONS: &[&str] = &["near", "behind", "inside", "across", "beside", "toward", "under"];
const ADVERBS: &[&str] = &["slowly", "quietly", "again", "at last", "for a while", "every morning", "that night"];
const CONNECTIVES: &[&str] = &["and then", "but", "because", "while", "so", "after that"];

fn pick<'a>(rng: &mut CounterRng, words: &[&'a str]) -> &'a str {
    words[rng.next_below(words.len())]
}

fn clause(rng: &mut CounterRng) -> String {
    let subject = pick(rng, SUBJECTS);
    match rng.next_below(4) {
        0 => format!("{subject} {} {}", pick(rng, VERBS), pick(rng, ADVERBS)),
        1 => format!(
            "{subject} {} {} {}",
            pick(rng, VERBS),
            pick(rng, PREPOSITIONS),
            pick(rng, PLACES)
        ),
        2 => format!("{subject} {} {}", pick(rng, TRANSITIVE), pick(rng, OBJECTS)),
        _ => format!(
            "{subject} {} {} {} {}",
            pick(rng, TRANSITIVE),
            pick(rng, OBJECTS),
            pick(rng, PREPOSITIONS),
            pick(rng, PLACES)
        ),
    }
}

fn sentence(rng: &mut CounterRng) -> String {
    let mut s = clause(rng);
    if rng.next_below(3) == 0 {
        s = format!("{s} {} {}", pick(rng, CONNECTIVES), clause(rng));
    }
    let mut chars = s.chars();
    let first = chars.next().map(|c| c.to_ascii_uppercase()).unwrap_or_default();
    let end = if rng.next_below(8) == 0 { '?' } else { '.' };
    format!("{first}{}{end}", chars.as_str())
}

/// Grammar-generated prose of exactly `bytes` bytes (ASCII), in paragraphs.
pub fn synthetic_text(bytes: usize, seed: u64) -> String {
    let mut rng = CounterRng::with_stream(seed, 7);
    let mut out = String::with_capacity(bytes + 128);
    while out.len() < bytes {
        let n = 3 + rng.next_below(5);
        for i in 0..n {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&sentence(&mut rng));
        }
        out.push_str("\n\n");
    }
    out.truncate(bytes);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_identity() {
        assert_eq!(tokenize("abc"), vec![97, 98, 99]);
        assert_eq!(tokenize("é"), vec![0xc3, 0xa9]);
    }

    #[test]
    fn round_trip() {
        for s in ["", "hello world", "naïve café ✓ 日本語", "tabs\tand\nnewlines"] {
            assert_eq!(detokenize(&tokenize(s)).unwrap(), s);
        }
        assert!(detokenize(&[300]).is_err());
        assert!(detokenize(&[0xff]).is_err());
        assert_eq!(detokenize(&[104, PAD_ID, 105]).unwrap(), "hi");
    }

    #[test]
    fn contiguous_split() {
        let c = split_tokens((0..10).collect(), 0.8);
        assert_eq!(c.train, (0..8).collect::<Vec<_>>());
        assert_eq!(c.validation, vec![8, 9]);
    }

    #[test]
    fn empty_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.txt");
        std::fs::write(&empty, "").unwrap();
        let err = load_corpus(&empty, 0.9).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("empty.txt"));
        let missing = dir.path().join("missing.txt");
        assert!(load_corpus(&missing, 0.9).unwrap_err().to_string().contains("missing.txt"));
    }

    #[test]
    fn synthetic_text_is_deterministic() {
        let a = synthetic_text(5000, 1);
        assert_eq!(a.len(), 5000);
        assert!(a.is_ascii());
        assert_eq!(a, synthetic_text(5000, 1));
        assert_ne!(a, synthetic_text(5000, 2));
        assert!(a.contains(". "));
    }
}

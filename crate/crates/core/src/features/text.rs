//! Frame-level word embeddings with a laughter bit.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dims::{FPS, TEXT_WIDTH, WORD_EMBEDDING};
use crate::error::{Error, Result};

/// Token the transcripts use for laughter.
pub const LAUGH_TOKEN: &str = "#";

#[derive(Debug, Clone, PartialEq)]
pub struct Word {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

/// Time-sorted, non-overlapping words.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Transcript {
    words: Vec<Word>,
}

impl Transcript {
    pub fn new(mut words: Vec<Word>) -> Result<Self> {
        for w in &words {
            if !(w.start >= 0.0 && w.start <= w.end) || !w.end.is_finite() {
                return Err(Error::Invalid(format!(
                    "word '{}' has bad interval [{}, {})",
                    w.text, w.start, w.end
                )));
            }
        }
        words.sort_by(|a, b| a.start.total_cmp(&b.start));
        for pair in words.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(Error::Invalid(format!(
                    "words '{}' [{}, {}) and '{}' [{}, {}) overlap",
                    pair[0].text, pair[0].start, pair[0].end, pair[1].text, pair[1].start, pair[1].end
                )));
            }
        }
        Ok(Transcript { words })
    }

    pub fn words(&self) -> &[Word] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.words.last().map_or(0.0, |w| w.end)
    }

    /// Parses `start\tend\tword` lines (no header).
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut words = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 {
                return Err(Error::parse(i + 1, "expected start<TAB>end<TAB>word"));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, format!("bad time '{s}'")))
            };
            words.push(Word {
                start: num(cols[0])?,
                end: num(cols[1])?,
                text: cols[2..].join("\t").trim().to_string(),
            });
        }
        Transcript::new(words)
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Transcript::parse_tsv(&text)
    }
}

/// Word vectors in the plain-text `word v1 ... vD` format. An optional
/// `count dim` header line (fastText `.vec`) is skipped.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    vectors: HashMap<String, Vec<f64>>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut toks = line.split_whitespace();
            let Some(word) = toks.next() else { continue };
            let vals: Vec<&str> = toks.collect();
            if i == 0 && vals.len() == 1 {
                continue;
            }
            if vals.len() != WORD_EMBEDDING {
                return Err(Error::parse(
                    i + 1,
                    format!("'{word}' has {} values, expected {WORD_EMBEDDING}", vals.len()),
                ));
            }
            let v = vals
                .iter()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(i + 1, format!("bad value '{t}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            vectors.insert(word.to_string(), v);
        }
        Ok(Lexicon { vectors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::parse(&text)
    }

    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != WORD_EMBEDDING {
            return Err(Error::Shape(format!("word vectors are {WORD_EMBEDDING} wide")));
        }
        self.vectors.insert(word.to_string(), vector);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// The stored vector (exact, then lowercase match) or the hash fallback.
    pub fn embed(&self, word: &str) -> Array1<f64> {
        self.vectors
            .get(word)
            .or_else(|| self.vectors.get(&word.to_lowercase()))
            .map(|v| Array1::from(v.clone()))
            .unwrap_or_else(|| hashed_embedding(word))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf29ce484222325, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
}

/// Unit-norm Gaussian direction seeded by the FNV-1a hash of the word.
pub fn hashed_embedding(word: &str) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.as_bytes()));
    let v: Array1<f64> = (0..WORD_EMBEDDING).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// N x 302 text features: word vector | laugh bit | zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TextFeatureSeq {
    pub frames: Array2<f64>,
}

impl TextFeatureSeq {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != TEXT_WIDTH {
            return Err(Error::Shape(format!(
                "text features must be {TEXT_WIDTH} wide, got {}",
                frames.ncols()
            )));
        }
        Ok(TextFeatureSeq { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn laugh(&self) -> ndarray::ArrayView1<'_, f64> {
        self.frames.column(WORD_EMBEDDING)
    }
}

/// Frame `i` (at `i / 30` s) takes the vector of the word whose `[start, end)`
/// interval covers it, or zeros between words.
pub fn frame_align_text(transcript: &Transcript, lexicon: &Lexicon, n_frames: usize) -> Result<TextFeatureSeq> {
    if n_frames == 0 {
        return Err(Error::Invalid("frame count must be positive".into()));
    }
    let mut frames = Array2::zeros((n_frames, TEXT_WIDTH));
    let words = transcript.words();
    let mut cursor = 0;
    let mut cache: Option<(usize, Array1<f64>)> = None;
    for i in 0..n_frames {
        let t = i as f64 / FPS as f64;
        while cursor < words.len() && words[cursor].end <= t {
            cursor += 1;
        }
        let Some(w) = words.get(cursor).filter(|w| w.start <= t) else {
            continue;
        };
        if cache.as_ref().map(|c| c.0) != Some(cursor) {
            cache = Some((cursor, lexicon.embed(&w.text)));
        }
        let emb = &cache.as_ref().unwrap().1;
        let mut row = frames.row_mut(i);
        row.slice_mut(s![..WORD_EMBEDDING]).assign(emb);
        if w.text == LAUGH_TOKEN {
            row[WORD_EMBEDDING] = 1.0;
        }
    }
    TextFeatureSeq::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word(start: f64, end: f64, text: &str) -> Word {
        Word {
            start,
            end,
            text: text.into(),
        }
    }

    #[test]
    fn empty_transcript_gives_zeros() {
        let t = frame_align_text(&Transcript::default(), &Lexicon::default(), 10).unwrap();
        assert_eq!(t.frames.dim(), (10, 302));
        assert!(t.frames.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laughter_spanning_clip() {
        let tr = Transcript::new(vec![word(0.0, 10.0, "#")]).unwrap();
        let t = frame_align_text(&tr, &Lexicon::default(), 120).unwrap();
        assert!(t.laugh().iter().all(|&v| v == 1.0));
        let expect = hashed_embedding("#");
        for r in t.frames.rows() {
            assert_eq!(r.slice(s![..300]), expect);
            assert_eq!(r[301], 0.0);
        }
        let mut lex = Lexicon::default();
        lex.insert("#", vec![0.5; 300]).unwrap();
        let t = frame_align_text(&tr, &lex, 4).unwrap();
        assert_eq!(t.frames[[2, 7]], 0.5);
    }

    #[test]
    fn word_interval_coverage() {
        // frames 0..=14 lie in [0, 0.5)
        let tr = Transcript::new(vec![word(0.0, 0.5, "hello")]).unwrap();
        let t = frame_align_text(&tr, &Lexicon::default(), 30).unwrap();
        for i in 0..30 {
            let nonzero = t.frames.row(i).iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, i <= 14, "frame {i}");
        }
        assert!(t.laugh().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlapping_words_are_rejected() {
        assert!(Transcript::new(vec![word(0.0, 1.0, "a"), word(0.5, 2.0, "b")]).is_err());
        assert!(Transcript::new(vec![word(1.0, 0.5, "a")]).is_err());
        assert!(Transcript::new(vec![word(1.0, 2.0, "a"), word(0.0, 1.0, "b")]).is_ok());
    }

    #[test]
    fn hashed_fallback_is_unit_and_deterministic() {
        let a = hashed_embedding("gesture");
        assert!((a.dot(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a, hashed_embedding("gesture"));
        assert_ne!(a, hashed_embedding("gestures"));
    }

    #[test]
    fn tsv_and_lexicon_parsing() {
        let tr = Transcript::parse_tsv("0.1\t0.4\thi\n0.5\t0.9\tthere\n").unwrap();
        assert_eq!(tr.words().len(), 2);
        assert_eq!(tr.words()[1].text, "there");
        assert!(matches!(
            Transcript::parse_tsv("0.1\tx\thi\n"),
            Err(Error::Parse { line: 1, .. })
        ));

        let vals = vec!["0.25"; 300].join(" ");
        let lex = Lexicon::parse(&format!("2 300\nhi {vals}\nThere {vals}\n")).unwrap();
        assert_eq!(lex.len(), 2);
        assert_eq!(lex.embed("hi")[0], 0.25);
        assert_eq!(lex.embed("there"), hashed_embedding("there"));
        assert!(Lexicon::parse("hi 1 2 3\n").is_err());
    }
}

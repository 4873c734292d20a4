//! Corpus statistics over a directory of transcripts and recordings:
//! durations, words per file, word frequencies and laughter counts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::text::LAUGH_TOKEN;
use crate::features::Transcript;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileStats {
    pub name: String,
    pub duration: f64,
    pub words: usize,
    pub laughs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusStats {
    pub files: Vec<FileStats>,
    /// Lower-cased word counts; laughter tokens are excluded.
    pub word_frequencies: BTreeMap<String, usize>,
    pub laughs: usize,
    /// Files that could not be read, with the reason.
    pub unreadable: Vec<(String, String)>,
}

/// Fixed-width bins starting at 0 and covering every value.
pub fn histogram(values: &[f64], bin_width: f64) -> Vec<HistogramBin> {
    assert!(bin_width > 0.0, "bin width must be positive");
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let n = if values.is_empty() {
        0
    } else {
        (max / bin_width).floor() as usize + 1
    };
    let mut bins: Vec<HistogramBin> = (0..n)
        .map(|i| HistogramBin {
            lo: i as f64 * bin_width,
            hi: (i + 1) as f64 * bin_width,
            count: 0,
        })
        .collect();
    for &v in values {
        bins[((v.max(0.0) / bin_width).floor() as usize).min(n - 1)].count += 1;
    }
    bins
}

impl CorpusStats {
    pub fn total_words(&self) -> usize {
        self.files.iter().map(|f| f.words).sum()
    }

    pub fn total_duration(&self) -> f64 {
        self.files.iter().map(|f| f.duration).sum()
    }

    pub fn max_words(&self) -> usize {
        self.files.iter().map(|f| f.words).max().unwrap_or(0)
    }

    /// The `k` most frequent words, ties broken alphabetically.
    pub fn top_words(&self, k: usize) -> Vec<(String, usize)> {
        let mut all: Vec<(String, usize)> = self.word_frequencies.iter().map(|(w, &c)| (w.clone(), c)).collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }

    pub fn duration_histogram(&self, bin_seconds: f64) -> Vec<HistogramBin> {
        histogram(&self.files.iter().map(|f| f.duration).collect::<Vec<_>>(), bin_seconds)
    }

    pub fn words_histogram(&self, bin_words: f64) -> Vec<HistogramBin> {
        histogram(
            &self.files.iter().map(|f| f.words as f64).collect::<Vec<_>>(),
            bin_words,
        )
    }

    fn add_transcript(&mut self, name: &str, transcript: &Transcript, duration: Option<f64>) {
        let (mut words, mut laughs) = (0, 0);
        for w in transcript.words() {
            for token in w.text.split_whitespace() {
                if token == LAUGH_TOKEN {
                    laughs += 1;
                } else {
                    words += 1;
                    *self.word_frequencies.entry(token.to_lowercase()).or_insert(0) += 1;
                }
            }
        }
        self.laughs += laughs;
        self.files.push(FileStats {
            name: name.to_string(),
            duration: duration.unwrap_or_else(|| transcript.duration()).max(0.0),
            words,
            laughs,
        });
    }

    /// Human-readable summary with histograms and the top `k` words.
    pub fn render(&self, bin_seconds: f64, bin_words: f64, k: usize) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "files: {}  total duration: {:.1} s  words: {}  max words in a file: {}  laughs: {}",
            self.files.len(),
            self.total_duration(),
            self.total_words(),
            self.max_words(),
            self.laughs
        )
        .unwrap();
        for (title, bins) in [
            ("duration (s)", self.duration_histogram(bin_seconds)),
            ("words per file", self.words_histogram(bin_words)),
        ] {
            writeln!(out, "{title}:").unwrap();
            for b in bins {
                writeln!(out, "  [{:>8.1}, {:>8.1})  {}", b.lo, b.hi, b.count).unwrap();
            }
        }
        writeln!(out, "top words:").unwrap();
        for (w, c) in self.top_words(k) {
            writeln!(out, "  {w:<20} {c}").unwrap();
        }
        for (file, why) in &self.unreadable {
            writeln!(out, "unreadable: {file}: {why}").unwrap();
        }
        out
    }
}

fn wav_duration(path: &Path) -> Result<f64> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    Ok(reader.duration() as f64 / spec.sample_rate as f64)
}

struct Loaded {
    stem: String,
    transcript: Option<Result<Transcript>>,
    duration: Option<Result<f64>>,
}

fn load_one(dir: &Path, stem: &str, has_tsv: bool, has_wav: bool) -> Loaded {
    let path = |ext: &str| -> PathBuf { dir.join(format!("{stem}.{ext}")) };
    Loaded {
        stem: stem.to_string(),
        transcript: has_tsv.then(|| Transcript::read_tsv(&path("tsv"))),
        duration: has_wav.then(|| wav_duration(&path("wav"))),
    }
}

/// Scans `dir` for `<name>.tsv` transcripts and `<name>.wav` recordings.
/// Duration comes from the recording when present, otherwise from the last
/// word's end time. Unreadable files are listed, not fatal. Up to `workers`
/// files are read concurrently; the result does not depend on the count.
pub fn corpus_stats(dir: &Path, workers: usize) -> Result<CorpusStats> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let (mut tsv, mut wav) = (BTreeSet::new(), BTreeSet::new());
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let (Some(stem), Some(ext)) = (path.file_stem(), path.extension()) else {
            continue;
        };
        let stem = stem.to_string_lossy().into_owned();
        match ext.to_string_lossy().to_lowercase().as_str() {
            "tsv" => tsv.insert(stem),
            "wav" => wav.insert(stem),
            _ => false,
        };
    }
    let stems: Vec<String> = tsv.union(&wav).cloned().collect();
    if stems.is_empty() {
        warn!("no .tsv or .wav files in {}", dir.display());
    }
    let workers = workers.max(1);
    let chunk = stems.len().div_ceil(workers).max(1);
    let loaded: Vec<Loaded> = std::thread::scope(|scope| {
        let handles: Vec<_> = stems
            .chunks(chunk)
            .map(|part| {
                let (tsv, wav) = (&tsv, &wav);
                scope.spawn(move || {
                    part.iter()
                        .map(|s| load_one(dir, s, tsv.contains(s), wav.contains(s)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("corpus worker panicked"))
            .collect()
    });

    let mut stats = CorpusStats::default();
    for item in loaded {
        let duration = match item.duration {
            Some(Ok(d)) => Some(d),
            Some(Err(e)) => {
                stats.unreadable.push((format!("{}.wav", item.stem), e.to_string()));
                None
            }
            None => None,
        };
        match item.transcript {
            Some(Ok(t)) => stats.add_transcript(&item.stem, &t, duration),
            Some(Err(e)) => stats.unreadable.push((format!("{}.tsv", item.stem), e.to_string())),
            None => {
                if let Some(d) = duration {
                    stats.files.push(FileStats {
                        name: item.stem.clone(),
                        duration: d,
                        words: 0,
                        laughs: 0,
                    });
                }
            }
        }
    }
    for (file, why) in &stats.unreadable {
        warn!("skipping {file}: {why}");
    }
    Ok(stats)
}

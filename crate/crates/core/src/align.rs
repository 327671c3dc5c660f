//! Phoneme alignments and the frame-level phoneme conditioning stream.
//!
//! Alignments arrive as plain-text `start end label` segments, get quantized
//! to analysis frames (exactly covering the paired utterance), and are
//! encoded per frame as an augmented one-hot (label + normalized length)
//! plus two pairs of complementary positional cross-fades: one spanning the
//! phrase, one restarting inside every phoneme.

use std::collections::HashMap;
use thiserror::Error;

/// Frames-per-phoneme normalizer for the length scalar in the augmented
/// one-hot; the scalar is `frames / 100`, clipped at 2.
pub const LENGTH_NORM_FRAMES: f64 = 100.0;
pub const LENGTH_SCALAR_MAX: f64 = 2.0;

/// Positional dims appended after the one-hot + length block.
pub const POSITIONAL_DIMS: usize = 4;

pub const SILENCE_SYMBOL: &str = "sil";

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("inventory is empty")]
    EmptyInventory,
    #[error("inventory line {0}: duplicate symbol '{1}'")]
    DuplicateSymbol(usize, String),
    #[error("inventory has no '{SILENCE_SYMBOL}' silence symbol")]
    MissingSilence,
    #[error("alignment line {line}: {reason}")]
    InvalidLine { line: usize, reason: String },
    #[error("alignment line {line}: unknown label '{label}'")]
    UnknownLabel { line: usize, label: String },
    #[error("alignment line {line} starts before line {prev_line} (unsorted)")]
    Unsorted { line: usize, prev_line: usize },
    #[error("alignment lines {first_line} and {second_line} overlap")]
    Overlap { first_line: usize, second_line: usize },
    #[error("alignment is empty")]
    EmptyAlignment,
    #[error("{segments} segments cannot fit in {frames} frames")]
    TooManySegments { segments: usize, frames: usize },
    #[error("alignment labels do not match the inventory (index {0} out of range)")]
    LabelOutOfRange(usize),
}

/// Ordered phoneme symbols with a vowel subset and a mandatory silence entry.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    vowel: Vec<bool>,
    index: HashMap<String, usize>,
    silence: usize,
}

impl PhonemeInventory {
    /// Parses one symbol per line; a `\tV` suffix flags vowels.
    pub fn parse(text: &str) -> Result<Self, AlignError> {
        let mut symbols = Vec::new();
        let mut vowel = Vec::new();
        let mut index = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let (sym, is_vowel) = match line.split_once('\t') {
                Some((s, marker)) => (s.trim(), marker.trim() == "V"),
                None => (line.trim(), false),
            };
            if index.insert(sym.to_string(), symbols.len()).is_some() {
                return Err(AlignError::DuplicateSymbol(i + 1, sym.to_string()));
            }
            symbols.push(sym.to_string());
            vowel.push(is_vowel);
        }
        if symbols.is_empty() {
            return Err(AlignError::EmptyInventory);
        }
        let silence = *index.get(SILENCE_SYMBOL).ok_or(AlignError::MissingSilence)?;
        Ok(Self { symbols, vowel, index, silence })
    }

    pub fn from_symbols(symbols: &[(&str, bool)]) -> Result<Self, AlignError> {
        let text: String = symbols
            .iter()
            .map(|(s, v)| if *v { format!("{s}\tV\n") } else { format!("{s}\n") })
            .collect();
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbol(&self, idx: usize) -> &str {
        &self.symbols[idx]
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn is_vowel(&self, idx: usize) -> bool {
        self.vowel[idx]
    }

    pub fn silence_index(&self) -> usize {
        self.silence
    }

    /// Serialized form identical to the accepted input format.
    pub fn to_text(&self) -> String {
        self.symbols
            .iter()
            .zip(&self.vowel)
            .map(|(s, &v)| if v { format!("{s}\tV\n") } else { format!("{s}\n") })
            .collect()
    }
}

/// A labeled time span in seconds (label is an inventory index).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub label: usize,
    pub start: f64,
    pub end: f64,
}

/// Ordered (label, frame count) pairs covering an utterance exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeAlignment {
    pub entries: Vec<(usize, usize)>,
}

impl PhonemeAlignment {
    pub fn total_frames(&self) -> usize {
        self.entries.iter().map(|(_, n)| n).sum()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|(l, _)| *l).collect()
    }

    /// Per-frame label indices, expanded.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_frames());
        for &(label, n) in &self.entries {
            out.extend(std::iter::repeat(label).take(n));
        }
        out
    }
}

/// Frame-level phoneme features: `T x (|symbols| + 1 + 4)` with a one-hot
/// block, the normalized length scalar, and the four positional dims.
#[derive(Debug, Clone, PartialEq)]
pub struct PhonemeFrameStream {
    data: Vec<f32>,
    n_frames: usize,
    n_symbols: usize,
}

impl PhonemeFrameStream {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_symbols(&self) -> usize {
        self.n_symbols
    }

    pub fn dim(&self) -> usize {
        self.n_symbols + 1 + POSITIONAL_DIMS
    }

    pub fn row(&self, t: usize) -> &[f32] {
        let d = self.dim();
        &self.data[t * d..(t + 1) * d]
    }

    /// One-hot + length scalar block (what the embedding conv consumes).
    pub fn label_block(&self, t: usize) -> &[f32] {
        &self.row(t)[..self.n_symbols + 1]
    }

    /// The four positional dims (concatenated after embedding).
    pub fn positional(&self, t: usize) -> &[f32] {
        &self.row(t)[self.n_symbols + 1..]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Parses `start_seconds end_seconds label` lines into contiguous segments,
/// filling any gaps (including a leading one) with silence.
pub fn parse_alignment(text: &str, inv: &PhonemeInventory) -> Result<Vec<Segment>, AlignError> {
    let mut parsed: Vec<(usize, Segment)> = Vec::new(); // (line number, segment)
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(AlignError::InvalidLine {
                line: line_no,
                reason: format!("expected 'start end label', got {} field(s)", fields.len()),
            });
        }
        let start: f64 = fields[0].parse().map_err(|_| AlignError::InvalidLine {
            line: line_no,
            reason: format!("bad start time '{}'", fields[0]),
        })?;
        let end: f64 = fields[1].parse().map_err(|_| AlignError::InvalidLine {
            line: line_no,
            reason: format!("bad end time '{}'", fields[1]),
        })?;
        if !(start.is_finite() && end.is_finite() && start >= 0.0 && start < end) {
            return Err(AlignError::InvalidLine {
                line: line_no,
                reason: format!("need 0 <= start < end, got {start}..{end}"),
            });
        }
        let label = inv
            .index_of(fields[2])
            .ok_or_else(|| AlignError::UnknownLabel { line: line_no, label: fields[2].into() })?;
        parsed.push((line_no, Segment { label, start, end }));
    }
    if parsed.is_empty() {
        return Err(AlignError::EmptyAlignment);
    }

    const EPS: f64 = 1e-9;
    let mut out = Vec::with_capacity(parsed.len());
    let mut prev: Option<(usize, Segment)> = None;
    for (line, seg) in parsed {
        if let Some((prev_line, prev_seg)) = prev {
            if seg.start < prev_seg.start - EPS {
                return Err(AlignError::Unsorted { line, prev_line });
            }
            if seg.start < prev_seg.end - EPS {
                return Err(AlignError::Overlap { first_line: prev_line, second_line: line });
            }
            if seg.start > prev_seg.end + EPS {
                out.push(Segment {
                    label: inv.silence_index(),
                    start: prev_seg.end,
                    end: seg.start,
                });
            }
        } else if seg.start > EPS {
            out.push(Segment { label: inv.silence_index(), start: 0.0, end: seg.start });
        }
        out.push(seg);
        prev = Some((line, seg));
    }
    Ok(out)
}

/// Quantizes segments to exactly `total_frames` frames: proportional shares
/// floored, the residual distributed by largest remainder (ties resolved
/// right-to-left), and every segment floored at one frame.
pub fn to_frames(
    segments: &[Segment],
    hop_seconds: f64,
    total_frames: usize,
) -> Result<PhonemeAlignment, AlignError> {
    assert!(hop_seconds > 0.0, "hop must be positive");
    if segments.is_empty() {
        return Err(AlignError::EmptyAlignment);
    }
    if segments.len() > total_frames {
        return Err(AlignError::TooManySegments { segments: segments.len(), frames: total_frames });
    }
    let total_dur: f64 = segments.iter().map(|s| s.end - s.start).sum();
    let raw: Vec<f64> = segments
        .iter()
        .map(|s| (s.end - s.start) / total_dur * total_frames as f64)
        .collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut residual = total_frames.saturating_sub(assigned);

    // largest remainder first; equal remainders favor later segments
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.partial_cmp(&fa).unwrap().then(b.cmp(&a))
    });
    for &i in &order {
        if residual == 0 {
            break;
        }
        counts[i] += 1;
        residual -= 1;
    }

    // every segment gets at least one frame; donors are the largest counts
    loop {
        let Some(zero) = counts.iter().position(|&c| c == 0) else { break };
        let donor = (0..counts.len())
            .max_by(|&a, &b| counts[a].cmp(&counts[b]).then(a.cmp(&b)))
            .expect("non-empty");
        if counts[donor] <= 1 {
            return Err(AlignError::TooManySegments {
                segments: segments.len(),
                frames: total_frames,
            });
        }
        counts[donor] -= 1;
        counts[zero] += 1;
    }

    let entries = segments.iter().zip(counts).map(|(s, c)| (s.label, c)).collect();
    let alignment = PhonemeAlignment { entries };
    debug_assert_eq!(alignment.total_frames(), total_frames);
    Ok(alignment)
}

/// Builds the frame-level stream: one-hot, length scalar, and positional
/// cross-fades. Degenerate lengths (single-frame phoneme or utterance) map
/// to the pair (0, 1).
pub fn encode_stream(
    a: &PhonemeAlignment,
    inv: &PhonemeInventory,
) -> Result<PhonemeFrameStream, AlignError> {
    let n_symbols = inv.len();
    for &(label, _) in &a.entries {
        if label >= n_symbols {
            return Err(AlignError::LabelOutOfRange(label));
        }
    }
    let total = a.total_frames();
    let dim = n_symbols + 1 + POSITIONAL_DIMS;
    let mut data = vec![0.0f32; total * dim];
    let mut t = 0usize;
    for &(label, frames) in &a.entries {
        let len_scalar = (frames as f64 / LENGTH_NORM_FRAMES).min(LENGTH_SCALAR_MAX) as f32;
        for j in 0..frames {
            let row = &mut data[t * dim..(t + 1) * dim];
            row[label] = 1.0;
            row[n_symbols] = len_scalar;
            let phrase = ramp(t, total);
            let phoneme = ramp(j, frames);
            row[n_symbols + 1] = phrase;
            row[n_symbols + 2] = 1.0 - phrase;
            row[n_symbols + 3] = phoneme;
            row[n_symbols + 4] = 1.0 - phoneme;
            t += 1;
        }
    }
    debug_assert_eq!(t, total);
    Ok(PhonemeFrameStream { data, n_frames: total, n_symbols })
}

fn ramp(i: usize, len: usize) -> f32 {
    if len <= 1 {
        0.0
    } else {
        (i as f64 / (len - 1) as f64) as f32
    }
}

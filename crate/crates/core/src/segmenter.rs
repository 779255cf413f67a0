//! Rule-based splitting of documents and summaries into text blocks.
//!
//! Sentence boundaries are placed after `.`, `!` or `?` (optionally followed
//! by closing quotes or brackets) when the next non-space character is an
//! uppercase letter, a digit or an opening quote. A period closing one of the
//! entries in [`ABBREVIATIONS`] never ends a sentence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever [`ABBREVIATIONS`] changes, since it changes block boundaries.
pub const ABBREVIATIONS_VERSION: u32 = 1;

/// Lowercased abbreviations (without their final period) that never end a sentence.
pub const ABBREVIATIONS: &[&str] = &[
    "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "st", "mt", "rev", "gen", "gov", "sen", "rep",
    "lt", "col", "sgt", "capt", "cmdr", "adm", "pres", "vs", "e.g", "i.e", "u.s", "u.k", "u.n",
    "inc", "ltd", "corp", "co", "jan", "feb", "aug", "sept", "oct", "nov", "dec", "approx", "dept",
    "fig", "no", "p.m", "a.m",
];

const TERMINALS: &[char] = &['.', '!', '?'];
const CLOSERS: &[char] = &['"', '\'', '\u{201d}', '\u{2019}', ')', ']'];
const OPENERS: &[char] = &['"', '\'', '\u{201c}', '\u{2018}', '(', '['];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Full,
    Paragraph,
    TwoSentence,
    Sentence,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Full,
        Granularity::Paragraph,
        Granularity::TwoSentence,
        Granularity::Sentence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Granularity::Full => "full",
            Granularity::Paragraph => "paragraph",
            Granularity::TwoSentence => "two_sentence",
            Granularity::Sentence => "sentence",
        }
    }

    /// Summaries are only split whole or per sentence.
    pub fn allowed_for(self, side: Side) -> bool {
        match side {
            Side::Document => true,
            Side::Summary => matches!(self, Granularity::Full | Granularity::Sentence),
        }
    }
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" | "document" => Ok(Granularity::Full),
            "paragraph" => Ok(Granularity::Paragraph),
            "two_sentence" | "2sent" | "mixed" => Ok(Granularity::TwoSentence),
            "sentence" => Ok(Granularity::Sentence),
            other => Err(Error::Config(format!("unknown granularity {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Document,
    Summary,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Document => "document",
            Side::Summary => "summary",
        })
    }
}

/// Ordered, non-empty text blocks for one side of a (document, summary) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockList {
    blocks: Vec<String>,
    side: Side,
    granularity: Granularity,
}

impl BlockList {
    /// Wraps pre-split blocks. Blocks are trimmed; empty ones are rejected.
    pub fn from_blocks<I, S>(blocks: I, side: Side, granularity: Granularity) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let blocks: Vec<String> = blocks
            .into_iter()
            .map(|b| b.into().trim().to_string())
            .collect();
        if let Some(i) = blocks.iter().position(|b| b.is_empty()) {
            return Err(Error::EmptyInput(format!("{side} block {i} is empty")));
        }
        Ok(BlockList {
            blocks,
            side,
            granularity,
        })
    }

    pub fn blocks(&self) -> &[String] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    /// Copy keeping only the blocks at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> BlockList {
        BlockList {
            blocks: indices.iter().map(|&i| self.blocks[i].clone()).collect(),
            side: self.side,
            granularity: self.granularity,
        }
    }
}

fn ensure_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        Err(Error::EmptyInput("text is empty or whitespace-only".into()))
    } else {
        Ok(())
    }
}

fn is_abbreviation(token: &str) -> bool {
    let token = token.trim_start_matches(OPENERS);
    let token = token.to_lowercase();
    ABBREVIATIONS.contains(&token.as_str())
}

/// Splits `text` into sentences. Every returned sentence is a trimmed slice of
/// the input; together they cover all non-whitespace characters in order.
pub fn split_sentences(text: &str) -> Result<Vec<String>> {
    ensure_text(text)?;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;

    while i < chars.len() {
        let (pos, c) = chars[i];
        if !TERMINALS.contains(&c) {
            i += 1;
            continue;
        }
        // Extend over runs like "?!" and closing quotes.
        let mut end = i + 1;
        while end < chars.len()
            && (TERMINALS.contains(&chars[end].1) || CLOSERS.contains(&chars[end].1))
        {
            end += 1;
        }
        if end >= chars.len() || !chars[end].1.is_whitespace() {
            i = end;
            continue;
        }
        let mut next = end;
        while next < chars.len() && chars[next].1.is_whitespace() {
            next += 1;
        }
        if next >= chars.len() {
            break;
        }
        let lead = chars[next].1;
        if !(lead.is_uppercase() || lead.is_ascii_digit() || OPENERS.contains(&lead)) {
            i = next;
            continue;
        }
        if c == '.' && end == i + 1 {
            let token_start = text[start..pos]
                .rfind(char::is_whitespace)
                .map(|w| start + w + 1)
                .unwrap_or(start);
            if is_abbreviation(&text[token_start..pos]) {
                i = next;
                continue;
            }
        }
        let boundary = chars[end].0;
        let sentence = text[start..boundary].trim();
        if !sentence.is_empty() {
            sentences.push(sentence.to_string());
        }
        start = chars[next].0;
        i = next;
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    Ok(sentences)
}

fn split_paragraphs(text: &str) -> Vec<String> {
    let mut paragraphs = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                paragraphs.push(current.join("\n").trim().to_string());
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        paragraphs.push(current.join("\n").trim().to_string());
    }
    paragraphs
}

/// Splits `text` into blocks at granularity `g`.
pub fn split_blocks(text: &str, g: Granularity, side: Side) -> Result<BlockList> {
    ensure_text(text)?;
    if !g.allowed_for(side) {
        return Err(Error::UnsupportedGranularity {
            granularity: g.to_string(),
            side: side.to_string(),
        });
    }
    let blocks = match g {
        Granularity::Full => vec![text.trim().to_string()],
        Granularity::Paragraph => split_paragraphs(text),
        Granularity::Sentence => split_sentences(text)?,
        Granularity::TwoSentence => split_sentences(text)?
            .chunks(2)
            .map(|pair| pair.join(" "))
            .collect(),
    };
    BlockList::from_blocks(blocks, side, g)
}

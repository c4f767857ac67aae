//! Frame-level caption documents, prompt templates, and per-frame
//! conditioning tracks.

use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::error::{ensure, Result};
use crate::numerics::Matrix;

/// First rule a caption document breaks.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CaptionViolation {
    #[error("opening code fence without a closing fence (or vice versa)")]
    UnbalancedFence,
    #[error("not valid JSON: {0}")]
    Syntax(String),
    #[error("top-level value is not a JSON object")]
    NotAnObject,
    #[error("key {0:?} is not a frame index")]
    NonIntegerKey(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("value for key {0:?} is not a string")]
    NonStringValue(String),
    #[error("value for key {0:?} is empty")]
    EmptyValue(String),
    #[error("extra key {0:?}")]
    ExtraKey(String),
    #[error("missing key \"{0}\"")]
    MissingKey(usize),
    #[error("keys are not in sequential order: found {found:?} where \"{expected}\" was expected")]
    OutOfOrder { found: String, expected: usize },
}

/// Validated per-frame captions, index `0` holding frame `"1"`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionDocument {
    captions: Vec<String>,
}

impl CaptionDocument {
    pub fn new(captions: Vec<String>) -> Result<Self> {
        ensure!(!captions.is_empty(), Contract, "caption document needs at least one frame");
        if let Some(i) = captions.iter().position(|c| c.trim().is_empty()) {
            return Err(CaptionViolation::EmptyValue((i + 1).to_string()).into());
        }
        Ok(Self { captions })
    }

    pub fn frame_count(&self) -> usize {
        self.captions.len()
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    /// Pretty JSON object with keys `"1"..="F"` in order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, c) in self.captions.iter().enumerate() {
            let sep = if i + 1 == self.captions.len() { "" } else { "," };
            let value = serde_json::to_string(c).expect("string serializes");
            out.push_str(&format!("  \"{}\": {value}{sep}\n", i + 1));
        }
        out.push_str("}\n");
        out
    }
}

// Object entries in document order, duplicates retained.
struct Entries(Vec<(String, Value)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Value>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_any(V)
    }
}

fn strip_fence(text: &str) -> std::result::Result<&str, CaptionViolation> {
    let t = text.trim();
    let opens = t.starts_with("```");
    let closes = t.len() >= 6 && t.ends_with("```");
    match (opens, closes) {
        (false, false) => Ok(t),
        (true, true) => {
            // Opening fence may carry a language tag on its own line.
            let after_open = t[3..].find('\n').map(|i| &t[3 + i + 1..]).ok_or(CaptionViolation::UnbalancedFence)?;
            let inner = after_open
                .strip_suffix("```")
                .ok_or(CaptionViolation::UnbalancedFence)?;
            Ok(inner.trim())
        }
        _ => Err(CaptionViolation::UnbalancedFence),
    }
}

fn frame_index(key: &str) -> Option<usize> {
    let canonical = !key.is_empty()
        && key.bytes().all(|b| b.is_ascii_digit())
        && !(key.len() > 1 && key.starts_with('0'));
    canonical.then(|| key.parse::<usize>().ok()).flatten().filter(|&i| i >= 1)
}

/// Parses and validates a caption document against `expected_frames`.
///
/// Accepts an optional surrounding code fence. The object must hold exactly
/// the string keys `"1"..="expected_frames"`, in order, each mapping to a
/// non-empty string; anything outside the object is rejected.
pub fn parse_caption_document(text: &str, expected_frames: usize) -> Result<CaptionDocument> {
    Ok(validate(text, expected_frames)?)
}

/// Number of top-level entries in a (possibly fenced) caption object, for
/// callers that do not know the frame count in advance.
pub fn caption_entry_count(text: &str) -> Result<usize> {
    let body = strip_fence(text)?;
    let value: Value = serde_json::from_str(body).map_err(|e| CaptionViolation::Syntax(e.to_string()))?;
    if !value.is_object() {
        return Err(CaptionViolation::NotAnObject.into());
    }
    let Entries(entries) = serde_json::from_str(body).map_err(|e| CaptionViolation::Syntax(e.to_string()))?;
    Ok(entries.len())
}

fn validate(text: &str, expected: usize) -> std::result::Result<CaptionDocument, CaptionViolation> {
    let body = strip_fence(text)?;
    let value: Value = serde_json::from_str(body).map_err(|e| CaptionViolation::Syntax(e.to_string()))?;
    if !value.is_object() {
        return Err(CaptionViolation::NotAnObject);
    }
    let Entries(entries) = serde_json::from_str(body).map_err(|e| CaptionViolation::Syntax(e.to_string()))?;

    let mut seen = vec![false; expected + 1];
    let mut indices = Vec::with_capacity(entries.len());
    for (key, value) in &entries {
        let idx = frame_index(key).ok_or_else(|| CaptionViolation::NonIntegerKey(key.clone()))?;
        if idx > expected {
            return Err(CaptionViolation::ExtraKey(key.clone()));
        }
        if seen[idx] {
            return Err(CaptionViolation::DuplicateKey(key.clone()));
        }
        seen[idx] = true;
        match value {
            Value::String(s) if s.trim().is_empty() => return Err(CaptionViolation::EmptyValue(key.clone())),
            Value::String(_) => {}
            _ => return Err(CaptionViolation::NonStringValue(key.clone())),
        }
        indices.push(idx);
    }
    if let Some(missing) = (1..=expected).find(|&i| !seen[i]) {
        return Err(CaptionViolation::MissingKey(missing));
    }
    if let Some(pos) = indices.iter().enumerate().position(|(i, &idx)| idx != i + 1) {
        return Err(CaptionViolation::OutOfOrder {
            found: entries[pos].0.clone(),
            expected: pos + 1,
        });
    }
    let captions = entries
        .into_iter()
        .map(|(_, v)| match v {
            Value::String(s) => s,
            _ => unreachable!("checked above"),
        })
        .collect();
    Ok(CaptionDocument { captions })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplateKind {
    /// Per-frame captioning of a video with `NUM_FRAMES` frames.
    Captioning,
    /// Decomposition of a global prompt into `NUM_PROMPTS` frame-level prompts.
    Conversion,
}

impl TemplateKind {
    fn placeholder(self) -> &'static str {
        match self {
            TemplateKind::Captioning => "{{NUM_FRAMES}}",
            TemplateKind::Conversion => "{{NUM_PROMPTS}}",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
    kind: TemplateKind,
}

const CAPTIONING_TEMPLATE: &str = include_str!("../templates/captioning.txt");
const CONVERSION_TEMPLATE: &str = include_str!("../templates/conversion.txt");

impl PromptTemplate {
    pub fn new(body: impl Into<String>, kind: TemplateKind) -> Result<Self> {
        let body = body.into();
        ensure!(
            body.contains(kind.placeholder()),
            Template,
            "{kind:?} template lacks {}",
            kind.placeholder()
        );
        let other = match kind {
            TemplateKind::Captioning => TemplateKind::Conversion,
            TemplateKind::Conversion => TemplateKind::Captioning,
        };
        ensure!(
            !body.contains(other.placeholder()),
            Template,
            "{kind:?} template contains foreign placeholder {}",
            other.placeholder()
        );
        Ok(Self { body, kind })
    }

    pub fn captioning() -> Self {
        Self::new(CAPTIONING_TEMPLATE, TemplateKind::Captioning).expect("shipped template")
    }

    pub fn conversion() -> Self {
        Self::new(CONVERSION_TEMPLATE, TemplateKind::Conversion).expect("shipped template")
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Substitutes `n` at every placeholder site. Conversion templates
    /// append the global prompt as the input section.
    pub fn render(&self, n: usize, global_prompt: Option<&str>) -> Result<String> {
        ensure!(n >= 1, Template, "template count must be at least 1");
        let mut out = self.body.replace(self.kind.placeholder(), &n.to_string());
        if self.kind == TemplateKind::Conversion {
            let prompt = global_prompt
                .filter(|p| !p.trim().is_empty())
                .ok_or_else(|| crate::Error::Template("conversion template requires a global prompt".into()))?;
            out.push_str("\nGlobal prompt:\n");
            out.push_str(prompt.trim());
            out.push('\n');
        }
        ensure!(!out.contains("{{"), Template, "unresolved placeholder in rendered template");
        Ok(out)
    }
}

pub fn render_template(template: &PromptTemplate, n: usize, global_prompt: Option<&str>) -> Result<String> {
    template.render(n, global_prompt)
}

/// Caption text to `tokens × text_dim` embedding.
pub trait TextEmbedder {
    fn text_dim(&self) -> usize;
    fn tokens(&self) -> usize;
    fn embed(&self, caption: &str) -> Result<Matrix>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptSource {
    FrameLevel,
    VideoLevelReplicated,
}

/// `F` conditioning blocks of `tokens × text_dim`, stored stacked as an
/// `(F·tokens) × text_dim` matrix so block `f` is rows
/// `f·tokens..(f+1)·tokens`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptTrack {
    stacked: Matrix,
    tokens: usize,
    source: PromptSource,
    raw: Option<Vec<String>>,
}

impl PromptTrack {
    pub fn from_blocks(blocks: &[Matrix], source: PromptSource, raw: Option<Vec<String>>) -> Result<Self> {
        ensure!(!blocks.is_empty(), Contract, "prompt track needs at least one block");
        let shape = blocks[0].shape();
        ensure!(
            blocks.iter().all(|b| b.shape() == shape),
            Dimension,
            "prompt blocks differ in shape"
        );
        ensure!(blocks.iter().all(Matrix::is_finite), NonFinite, "prompt block has non-finite entries");
        if let Some(r) = &raw {
            ensure!(r.len() == blocks.len(), Contract, "{} raw captions for {} blocks", r.len(), blocks.len());
        }
        let data: Vec<f64> = blocks.iter().flat_map(|b| b.data().iter().copied()).collect();
        Ok(Self {
            stacked: Matrix::from_vec(blocks.len() * shape.0, shape.1, data)?,
            tokens: shape.0,
            source,
            raw,
        })
    }

    pub fn frames(&self) -> usize {
        self.stacked.rows() / self.tokens
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn text_dim(&self) -> usize {
        self.stacked.cols()
    }

    pub fn source(&self) -> PromptSource {
        self.source
    }

    pub fn raw(&self) -> Option<&[String]> {
        self.raw.as_deref()
    }

    pub fn stacked(&self) -> &Matrix {
        &self.stacked
    }

    pub fn block(&self, f: usize) -> Matrix {
        self.stacked.slice_rows(f * self.tokens, (f + 1) * self.tokens)
    }

    /// Frames `start..end`.
    pub fn window(&self, start: usize, end: usize) -> PromptTrack {
        Self {
            stacked: self.stacked.slice_rows(start * self.tokens, end * self.tokens),
            tokens: self.tokens,
            source: self.source,
            raw: self.raw.as_ref().map(|r| r[start..end].to_vec()),
        }
    }

    /// Track made of the given frame indices, in order.
    pub fn select(&self, frames: &[usize]) -> PromptTrack {
        let blocks: Vec<Matrix> = frames.iter().map(|&f| self.block(f)).collect();
        let raw = self.raw.as_ref().map(|r| frames.iter().map(|&f| r[f].clone()).collect());
        Self::from_blocks(&blocks, self.source, raw).expect("blocks from a valid track")
    }

    pub fn with_block(&self, f: usize, block: &Matrix) -> Result<PromptTrack> {
        ensure!(
            block.shape() == (self.tokens, self.text_dim()),
            Dimension,
            "replacement block {:?}",
            block.shape()
        );
        let mut out = self.clone();
        out.stacked.data_mut()[f * self.tokens * self.text_dim()..(f + 1) * self.tokens * self.text_dim()]
            .copy_from_slice(block.data());
        Ok(out)
    }
}

fn embed_checked(embedder: &dyn TextEmbedder, caption: &str, tokens: usize) -> Result<Matrix> {
    let block = embedder.embed(caption)?;
    ensure!(
        block.shape() == (tokens, embedder.text_dim()),
        Contract,
        "embedder returned {:?}, expected {tokens}x{}",
        block.shape(),
        embedder.text_dim()
    );
    Ok(block)
}

/// One block per caption, in frame order.
pub fn build_prompt_track(doc: &CaptionDocument, embedder: &dyn TextEmbedder, tokens: usize) -> Result<PromptTrack> {
    let blocks = doc
        .captions()
        .iter()
        .map(|c| embed_checked(embedder, c, tokens))
        .collect::<Result<Vec<_>>>()?;
    PromptTrack::from_blocks(&blocks, PromptSource::FrameLevel, Some(doc.captions().to_vec()))
}

/// The same global caption embedding at every frame.
pub fn replicate_global_prompt(
    global_caption: &str,
    frames: usize,
    embedder: &dyn TextEmbedder,
    tokens: usize,
) -> Result<PromptTrack> {
    ensure!(frames >= 1, Contract, "replicated track needs at least one frame");
    let block = embed_checked(embedder, global_caption, tokens)?;
    PromptTrack::from_blocks(
        &vec![block; frames],
        PromptSource::VideoLevelReplicated,
        Some(vec![global_caption.to_string(); frames]),
    )
}

//! Token vocabulary, answer quantization and prompt rendering.
//!
//! Entities are single tokens, so the entity mention's last token is the
//! entity token itself. Year-valued properties share one token per year;
//! every other property gets its own run of bin tokens whose surface text
//! is a human-readable quantity ("40,300", "1.3 million", "-92.00").

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::{AnswerKind, NumericProperty, WorldConfig, WorldError, ENTITY_PLACEHOLDER};

pub const INSTRUCTION_SUFFIX: &str = "One word answer only";

pub const PAD: &str = "<pad>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const SEP: &str = "<sep>";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Unique key.
    pub key: String,
    /// Text the token stands for; bin tokens of different properties may
    /// share a surface.
    pub surface: String,
}

/// Maps property values to answer levels and back.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    property: NumericProperty,
    levels: usize,
}

impl Quantizer {
    pub fn new(property: &NumericProperty, bins: usize) -> Self {
        let levels = match property.answer {
            AnswerKind::Year => (property.max - property.min) as usize + 1,
            AnswerKind::Binned => bins,
        };
        Self {
            property: property.clone(),
            levels,
        }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Level for a normalized coordinate in `[0, 1]` (clamped).
    pub fn level_of_normalized(&self, v: f64) -> usize {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (v * (self.levels - 1) as f64).round() as usize
    }

    pub fn level_of(&self, value: f64) -> usize {
        match self.property.answer {
            AnswerKind::Year => {
                (value.round() - self.property.min).clamp(0.0, (self.levels - 1) as f64) as usize
            }
            AnswerKind::Binned => self.level_of_normalized(self.property.normalize(value)),
        }
    }

    /// Representative value of a level.
    pub fn value_of(&self, level: usize) -> f64 {
        match self.property.answer {
            AnswerKind::Year => self.property.min + level as f64,
            AnswerKind::Binned => self
                .property
                .denormalize(level as f64 / (self.levels - 1) as f64),
        }
    }

    pub fn label(&self, level: usize) -> String {
        format_quantity(&self.property, self.levels, self.value_of(level))
    }
}

/// Human-readable answer text for a quantized value.
pub fn format_quantity(property: &NumericProperty, levels: usize, value: f64) -> String {
    match (property.answer, property.distribution) {
        (AnswerKind::Year, _) => format!("{}", value.round() as i64),
        (AnswerKind::Binned, super::Distribution::Uniform) => {
            let step = (property.max - property.min) / (levels - 1) as f64;
            let decimals = ((-step.log10()).ceil() + 1.0).max(0.0) as usize;
            let s = format!("{value:.decimals$}");
            if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
                s[1..].to_string()
            } else {
                s
            }
        }
        (AnswerKind::Binned, super::Distribution::LogUniform) => format_significant(value),
    }
}

/// Three significant digits; millions and billions as named numbers,
/// thousands with comma grouping.
fn format_significant(value: f64) -> String {
    let neg = value < 0.0;
    let v = value.abs();
    let body = if v >= 1e9 {
        format!("{} billion", trim_zeros(&sig3(v / 1e9)))
    } else if v >= 1e6 {
        format!("{} million", trim_zeros(&sig3(v / 1e6)))
    } else {
        let s = sig3(v);
        if s.contains('.') {
            s
        } else {
            group_thousands(&s)
        }
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

fn sig3(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let e = v.log10().floor() as i32;
    let decimals = (2 - e).max(0) as usize;
    let scale = 10f64.powi(e - 2);
    let rounded = if e >= 2 { (v / scale).round() * scale } else { v };
    format!("{rounded:.decimals$}")
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn group_thousands(digits: &str) -> String {
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
enum Part {
    Word(String),
    Entity,
}

fn template_parts(template: &str) -> Vec<Part> {
    let mut parts = Vec::new();
    for piece in template.split_whitespace() {
        let core = piece.trim_end_matches(['?', '.', ',', '!']);
        let tail = &piece[core.len()..];
        if core == ENTITY_PLACEHOLDER {
            parts.push(Part::Entity);
        } else if !core.is_empty() {
            parts.push(Part::Word(core.to_string()));
        }
        for c in tail.chars() {
            parts.push(Part::Word(c.to_string()));
        }
    }
    parts
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedPrompt {
    pub tokens: Vec<u32>,
    /// Index of the entity token within `tokens`.
    pub entity_pos: usize,
}

#[derive(Debug, Clone)]
struct AnswerRange {
    first: u32,
    quantizer: Quantizer,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<Token>,
    index: HashMap<String, u32>,
    entity_first: u32,
    n_entities: usize,
    answers: HashMap<String, AnswerRange>,
    templates: HashMap<String, Vec<Part>>,
}

impl Vocab {
    /// Control tokens, prompt words, entities, shared year tokens, then bin
    /// tokens per binned property.
    pub fn build(config: &WorldConfig, n_entities: usize) -> Self {
        let mut tokens: Vec<Token> = Vec::new();
        let mut index = HashMap::new();
        let mut push = |tokens: &mut Vec<Token>, key: String, surface: String| -> u32 {
            *index.entry(key.clone()).or_insert_with(|| {
                tokens.push(Token { key, surface });
                (tokens.len() - 1) as u32
            })
        };
        for c in [PAD, BOS, EOS, SEP] {
            push(&mut tokens, c.into(), c.into());
        }
        let mut templates = HashMap::new();
        for p in &config.properties {
            let parts = template_parts(&p.template);
            for part in &parts {
                if let Part::Word(w) = part {
                    push(&mut tokens, format!("w:{w}"), w.clone());
                }
            }
            templates.insert(p.id.clone(), parts);
        }
        for w in INSTRUCTION_SUFFIX.split_whitespace() {
            push(&mut tokens, format!("w:{w}"), w.into());
        }
        let entity_first = tokens.len() as u32;
        for i in 0..n_entities {
            let name = super::entity_name(i);
            push(&mut tokens, format!("e:{name}"), name);
        }
        let years: Vec<&NumericProperty> = config
            .properties
            .iter()
            .filter(|p| p.answer == AnswerKind::Year)
            .collect();
        let mut answers = HashMap::new();
        if !years.is_empty() {
            let lo = years.iter().map(|p| p.min as i64).min().unwrap();
            let hi = years.iter().map(|p| p.max as i64).max().unwrap();
            let year_first = tokens.len() as u32;
            for y in lo..=hi {
                push(&mut tokens, format!("y:{y}"), y.to_string());
            }
            for p in &years {
                answers.insert(
                    p.id.clone(),
                    AnswerRange {
                        first: year_first + (p.min as i64 - lo) as u32,
                        quantizer: Quantizer::new(p, config.answer_bins),
                    },
                );
            }
        }
        for p in config.properties.iter().filter(|p| p.answer == AnswerKind::Binned) {
            let q = Quantizer::new(p, config.answer_bins);
            let first = tokens.len() as u32;
            for level in 0..q.levels() {
                push(&mut tokens, format!("b:{}:{level}", p.id), q.label(level));
            }
            answers.insert(p.id.clone(), AnswerRange { first, quantizer: q });
        }
        Self {
            tokens,
            index,
            entity_first,
            n_entities,
            answers,
            templates,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&Token> {
        self.tokens.get(id as usize)
    }

    pub fn id(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn surface(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", |t| t.surface.as_str())
    }

    pub fn pad(&self) -> u32 {
        0
    }

    pub fn bos(&self) -> u32 {
        1
    }

    pub fn eos(&self) -> u32 {
        2
    }

    pub fn sep(&self) -> u32 {
        3
    }

    pub fn entity_token(&self, name: &str) -> Result<u32, WorldError> {
        self.id(&format!("e:{name}"))
            .ok_or_else(|| WorldError::UnknownEntity(name.into()))
    }

    pub fn is_entity(&self, id: u32) -> bool {
        id >= self.entity_first && ((id - self.entity_first) as usize) < self.n_entities
    }

    pub fn quantizer(&self, property: &str) -> Result<&Quantizer, WorldError> {
        self.answers
            .get(property)
            .map(|a| &a.quantizer)
            .ok_or_else(|| WorldError::UnknownProperty(property.into()))
    }

    pub fn answer_token(&self, property: &str, level: usize) -> Result<u32, WorldError> {
        let a = self
            .answers
            .get(property)
            .ok_or_else(|| WorldError::UnknownProperty(property.into()))?;
        Ok(a.first + level.min(a.quantizer.levels() - 1) as u32)
    }

    /// Answer token for a gold value.
    pub fn answer_for_value(&self, property: &str, value: f64) -> Result<u32, WorldError> {
        let level = self.quantizer(property)?.level_of(value);
        self.answer_token(property, level)
    }

    /// The answer level `id` encodes for `property`, if it is one of its tokens.
    pub fn answer_level(&self, property: &str, id: u32) -> Option<usize> {
        let a = self.answers.get(property)?;
        (id >= a.first && ((id - a.first) as usize) < a.quantizer.levels())
            .then(|| (id - a.first) as usize)
    }

    /// Contiguous token id range of the property's answers.
    pub fn answer_range(&self, property: &str) -> Option<std::ops::Range<u32>> {
        let a = self.answers.get(property)?;
        Some(a.first..a.first + a.quantizer.levels() as u32)
    }

    pub fn render_prompt(
        &self,
        property: &NumericProperty,
        entity_name: &str,
        instruction_suffix: bool,
    ) -> Result<RenderedPrompt, WorldError> {
        let parts = self
            .templates
            .get(&property.id)
            .ok_or_else(|| WorldError::UnknownProperty(property.id.clone()))?;
        let entity = self.entity_token(entity_name)?;
        let mut tokens = vec![self.bos()];
        let mut entity_pos = 0;
        for part in parts {
            match part {
                Part::Entity => {
                    entity_pos = tokens.len();
                    tokens.push(entity);
                }
                Part::Word(w) => tokens.push(self.index[&format!("w:{w}")]),
            }
        }
        if instruction_suffix {
            for w in INSTRUCTION_SUFFIX.split_whitespace() {
                tokens.push(self.index[&format!("w:{w}")]);
            }
        }
        Ok(RenderedPrompt { tokens, entity_pos })
    }

    /// Space-joined surfaces.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.surface(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// SHA-256 over the ordered token keys, hex encoded.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.key.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

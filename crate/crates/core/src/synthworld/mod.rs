//! Synthetic world of entities with numeric attributes.
//!
//! A world is a seeded draw of `n_entities` entities, each carrying one value
//! for every configured [`NumericProperty`]. Properties may be derived from
//! another one through a [`CorrelationRule`] (death year = birth year + life
//! span). Entities are split 90/10 into train and test sets; the split is on
//! entities, so no test entity contributes a training fact.

mod csvio;
mod vocab;

pub use csvio::{read_facts_csv, write_facts_csv, FACTS_HEADER};
pub use vocab::{format_quantity, Quantizer, RenderedPrompt, Token, Vocab, INSTRUCTION_SUFFIX};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENTITY_PLACEHOLDER: &str = "{entity}";

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("invalid range for {property}: {reason}")]
    InvalidRange { property: String, reason: String },
    #[error("unknown property {0:?}")]
    UnknownProperty(String),
    #[error("unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("invalid template for {property}: {reason}")]
    InvalidTemplate { property: String, reason: String },
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("facts CSV header does not match schema: {0}")]
    SchemaMismatch(String),
    #[error("malformed facts CSV row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    Uniform,
    LogUniform,
}

/// How the model answers: one token per integer year, or one token per
/// quantization bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerKind {
    Year,
    Binned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericProperty {
    pub id: String,
    /// Knowledge-base property code, e.g. `P569`.
    pub code: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub distribution: Distribution,
    pub answer: AnswerKind,
    /// Prompt text containing `{entity}` exactly once.
    pub template: String,
}

impl NumericProperty {
    fn new(
        id: &str,
        code: &str,
        unit: &str,
        range: (f64, f64),
        distribution: Distribution,
        answer: AnswerKind,
        template: &str,
    ) -> Self {
        Self {
            id: id.into(),
            code: code.into(),
            unit: unit.into(),
            min: range.0,
            max: range.1,
            distribution,
            answer,
            template: template.into(),
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |reason: &str| WorldError::InvalidRange {
            property: self.id.clone(),
            reason: reason.into(),
        };
        if !(self.min.is_finite() && self.max.is_finite()) || self.min >= self.max {
            return Err(bad("min must be finite and below max"));
        }
        if self.distribution == Distribution::LogUniform && self.min <= 0.0 {
            return Err(bad("log-uniform range must be positive"));
        }
        if self.answer == AnswerKind::Year
            && (self.min.fract() != 0.0 || self.max.fract() != 0.0)
        {
            return Err(bad("year-valued range must be integral"));
        }
        let count = self.template.matches(ENTITY_PLACEHOLDER).count();
        if count != 1 {
            return Err(WorldError::InvalidTemplate {
                property: self.id.clone(),
                reason: format!("expected one {ENTITY_PLACEHOLDER}, found {count}"),
            });
        }
        Ok(())
    }

    pub fn render_text(&self, entity_name: &str) -> String {
        self.template.replace(ENTITY_PLACEHOLDER, entity_name)
    }

    /// Position of `value` in `[0, 1]` along the property's natural scale
    /// (log scale for log-uniform properties).
    pub fn normalize(&self, value: f64) -> f64 {
        match self.distribution {
            Distribution::Uniform => (value - self.min) / (self.max - self.min),
            Distribution::LogUniform => {
                (value.ln() - self.min.ln()) / (self.max.ln() - self.min.ln())
            }
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        match self.distribution {
            Distribution::Uniform => self.min + v * (self.max - self.min),
            Distribution::LogUniform => {
                (self.min.ln() + v * (self.max.ln() - self.min.ln())).exp()
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match (self.answer, self.distribution) {
            (AnswerKind::Year, _) => rng.random_range(self.min as i64..=self.max as i64) as f64,
            (_, Distribution::Uniform) => rng.random_range(self.min..=self.max),
            (_, Distribution::LogUniform) => {
                rng.random_range(self.min.ln()..=self.max.ln()).exp().clamp(self.min, self.max)
            }
        }
    }
}

/// `target = source + U[min, max]` (integer offset for year properties).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRule {
    pub source: String,
    pub target: String,
    pub offset_min: f64,
    pub offset_max: f64,
}

fn default_bins() -> usize {
    200
}

fn default_test_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub properties: Vec<NumericProperty>,
    #[serde(default)]
    pub correlations: Vec<CorrelationRule>,
    /// Quantization levels for binned answers.
    #[serde(default = "default_bins")]
    pub answer_bins: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

/// The six default properties.
pub fn default_properties() -> Vec<NumericProperty> {
    use AnswerKind::*;
    use Distribution::*;
    vec![
        NumericProperty::new(
            "birthyear",
            "P569",
            "annum",
            (1500.0, 2000.0),
            Uniform,
            Year,
            "In what year was {entity} born?",
        ),
        NumericProperty::new(
            "deathyear",
            "P570",
            "annum",
            (1520.0, 2090.0),
            Uniform,
            Year,
            "In what year did {entity} die?",
        ),
        NumericProperty::new(
            "population",
            "P1082",
            "1",
            (1e3, 1e7),
            LogUniform,
            Binned,
            "What is the population of {entity}?",
        ),
        NumericProperty::new(
            "elevation",
            "P2044",
            "metre",
            (1.0, 8000.0),
            LogUniform,
            Binned,
            "How high is {entity}?",
        ),
        NumericProperty::new(
            "longitude",
            "P625.long",
            "degree",
            (-180.0, 180.0),
            Uniform,
            Binned,
            "What is the longitude of {entity}?",
        ),
        NumericProperty::new(
            "latitude",
            "P625.lat",
            "degree",
            (-60.0, 70.0),
            Uniform,
            Binned,
            "What is the latitude of {entity}?",
        ),
    ]
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_entities: 1000,
            properties: default_properties(),
            correlations: vec![CorrelationRule {
                source: "birthyear".into(),
                target: "deathyear".into(),
                offset_min: 20.0,
                offset_max: 90.0,
            }],
            answer_bins: default_bins(),
            test_fraction: default_test_fraction(),
        }
    }
}

impl WorldConfig {
    pub fn property(&self, id: &str) -> Option<&NumericProperty> {
        self.properties.iter().find(|p| p.id == id)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.n_entities < 10 {
            return Err(WorldError::InvalidConfig(format!(
                "n_entities must be >= 10, got {}",
                self.n_entities
            )));
        }
        if self.properties.is_empty() {
            return Err(WorldError::InvalidConfig("no properties".into()));
        }
        if self.answer_bins < 2 {
            return Err(WorldError::InvalidConfig("answer_bins must be >= 2".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(WorldError::InvalidConfig(
                "test_fraction must lie in (0, 1)".into(),
            ));
        }
        for (i, p) in self.properties.iter().enumerate() {
            p.validate()?;
            if self.properties[..i].iter().any(|q| q.id == p.id) {
                return Err(WorldError::InvalidConfig(format!("duplicate property {}", p.id)));
            }
        }
        for rule in &self.correlations {
            let src = self
                .property(&rule.source)
                .ok_or_else(|| WorldError::UnknownProperty(rule.source.clone()))?;
            let dst = self
                .property(&rule.target)
                .ok_or_else(|| WorldError::UnknownProperty(rule.target.clone()))?;
            if rule.offset_min > rule.offset_max {
                return Err(WorldError::InvalidRange {
                    property: dst.id.clone(),
                    reason: "offset_min above offset_max".into(),
                });
            }
            if src.min + rule.offset_min < dst.min || src.max + rule.offset_max > dst.max {
                return Err(WorldError::InvalidRange {
                    property: dst.id.clone(),
                    reason: format!(
                        "{} + [{}, {}] escapes [{}, {}]",
                        src.id, rule.offset_min, rule.offset_max, dst.min, dst.max
                    ),
                });
            }
            if self.correlations.iter().filter(|r| r.target == rule.target).count() > 1 {
                return Err(WorldError::InvalidConfig(format!(
                    "{} is derived more than once",
                    rule.target
                )));
            }
            if self.correlations.iter().any(|r| r.target == rule.source) {
                return Err(WorldError::InvalidConfig(format!(
                    "{} is both derived and a derivation source",
                    rule.source
                )));
            }
        }
        Ok(())
    }
}

/// One `(entity, property, value)` fact and its rendered prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactRecord {
    pub property_id: String,
    pub property_code: String,
    pub entity_name: String,
    pub entity_id: String,
    pub prompt: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: WorldConfig,
    pub entities: Vec<Entity>,
    /// Entity-major, property order as configured.
    pub facts: Vec<FactRecord>,
    /// Entity indices, sorted.
    pub train_entities: Vec<usize>,
    pub test_entities: Vec<usize>,
}

pub fn entity_name(i: usize) -> String {
    format!("ENT_{i}")
}

pub fn generate_world(config: &WorldConfig) -> Result<World, WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let entities: Vec<Entity> = (0..config.n_entities)
        .map(|i| Entity {
            name: entity_name(i),
            id: format!("Q{}", i + 1),
        })
        .collect();

    let mut facts = Vec::with_capacity(config.n_entities * config.properties.len());
    for e in &entities {
        let mut values = vec![f64::NAN; config.properties.len()];
        for (pi, p) in config.properties.iter().enumerate() {
            if config.correlations.iter().any(|r| r.target == p.id) {
                continue;
            }
            values[pi] = p.sample(&mut rng);
        }
        for rule in &config.correlations {
            let si = config.properties.iter().position(|p| p.id == rule.source).unwrap();
            let ti = config.properties.iter().position(|p| p.id == rule.target).unwrap();
            let offset = if config.properties[ti].answer == AnswerKind::Year {
                rng.random_range(rule.offset_min as i64..=rule.offset_max as i64) as f64
            } else {
                rng.random_range(rule.offset_min..=rule.offset_max)
            };
            values[ti] = values[si] + offset;
        }
        for (p, &value) in config.properties.iter().zip(&values) {
            facts.push(FactRecord {
                property_id: p.id.clone(),
                property_code: p.code.clone(),
                entity_name: e.name.clone(),
                entity_id: e.id.clone(),
                prompt: p.render_text(&e.name),
                value,
                unit: p.unit.clone(),
            });
        }
    }

    let mut order: Vec<usize> = (0..config.n_entities).collect();
    order.shuffle(&mut rng);
    let n_test = ((config.n_entities as f64 * config.test_fraction).round() as usize)
        .clamp(1, config.n_entities - 1);
    let mut test_entities = order[..n_test].to_vec();
    let mut train_entities = order[n_test..].to_vec();
    test_entities.sort_unstable();
    train_entities.sort_unstable();

    Ok(World {
        config: config.clone(),
        entities,
        facts,
        train_entities,
        test_entities,
    })
}

impl World {
    pub fn n_properties(&self) -> usize {
        self.config.properties.len()
    }

    pub fn property(&self, id: &str) -> Result<&NumericProperty, WorldError> {
        self.config
            .property(id)
            .ok_or_else(|| WorldError::UnknownProperty(id.into()))
    }

    pub fn property_index(&self, id: &str) -> Result<usize, WorldError> {
        self.config
            .properties
            .iter()
            .position(|p| p.id == id)
            .ok_or_else(|| WorldError::UnknownProperty(id.into()))
    }

    /// The fact for `(entity index, property)`.
    pub fn fact(&self, entity: usize, property: &str) -> Result<&FactRecord, WorldError> {
        let pi = self.property_index(property)?;
        self.facts
            .get(entity * self.n_properties() + pi)
            .ok_or_else(|| WorldError::UnknownEntity(entity_name(entity)))
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        name.strip_prefix("ENT_")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&i| i < self.entities.len() && self.entities[i].name == name)
    }

    /// Facts of one property for the given entities, in the given order.
    pub fn facts_for(&self, property: &str, entities: &[usize]) -> Result<Vec<FactRecord>, WorldError> {
        entities
            .iter()
            .map(|&e| self.fact(e, property).cloned())
            .collect()
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::build(&self.config, self.entities.len())
    }
}

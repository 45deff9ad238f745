//! Hierarchical premise taxonomy: three levels, thirteen subtypes.
//!
//! The taxonomy is fixed data. Subtypes serialize as lowercase snake_case
//! strings everywhere (JSONL records, CLI flags, fixture keys), and the
//! subtype -> level mapping is total.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The three premise levels, ordered from direct perception to inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseLevel {
    Perceptual,
    Cognitive,
    Reasoning,
}

impl PremiseLevel {
    pub const ALL: [PremiseLevel; 3] = [
        PremiseLevel::Perceptual,
        PremiseLevel::Cognitive,
        PremiseLevel::Reasoning,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PremiseLevel::Perceptual => "perceptual",
            PremiseLevel::Cognitive => "cognitive",
            PremiseLevel::Reasoning => "reasoning",
        }
    }
}

impl fmt::Display for PremiseLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PremiseLevel {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PremiseLevel::ALL
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| UnknownName {
                kind: "level",
                name: s.to_owned(),
            })
    }
}

/// The thirteen premise subtypes. Declaration order is the canonical order:
/// perceptual subtypes first, then cognitive, then reasoning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PremiseSubtype {
    EntityExistence,
    VisualAttributes,
    NumericalAttributes,
    StateAttributes,
    TextualContent,
    SymbolicMeaning,
    SpatialRelations,
    InteractionRelations,
    PartWholeRelations,
    EmotionalState,
    Scene,
    LogicalRelations,
    CommonsenseKnowledge,
}

impl PremiseSubtype {
    pub const ALL: [PremiseSubtype; 13] = [
        PremiseSubtype::EntityExistence,
        PremiseSubtype::VisualAttributes,
        PremiseSubtype::NumericalAttributes,
        PremiseSubtype::StateAttributes,
        PremiseSubtype::TextualContent,
        PremiseSubtype::SymbolicMeaning,
        PremiseSubtype::SpatialRelations,
        PremiseSubtype::InteractionRelations,
        PremiseSubtype::PartWholeRelations,
        PremiseSubtype::EmotionalState,
        PremiseSubtype::Scene,
        PremiseSubtype::LogicalRelations,
        PremiseSubtype::CommonsenseKnowledge,
    ];

    /// All subtypes in canonical order.
    pub fn all() -> &'static [PremiseSubtype; 13] {
        &Self::ALL
    }

    /// The fixed level this subtype belongs to.
    pub fn level(&self) -> PremiseLevel {
        match self {
            PremiseSubtype::EntityExistence
            | PremiseSubtype::VisualAttributes
            | PremiseSubtype::NumericalAttributes
            | PremiseSubtype::StateAttributes
            | PremiseSubtype::TextualContent
            | PremiseSubtype::SymbolicMeaning => PremiseLevel::Perceptual,
            PremiseSubtype::SpatialRelations
            | PremiseSubtype::InteractionRelations
            | PremiseSubtype::PartWholeRelations
            | PremiseSubtype::EmotionalState
            | PremiseSubtype::Scene => PremiseLevel::Cognitive,
            PremiseSubtype::LogicalRelations | PremiseSubtype::CommonsenseKnowledge => {
                PremiseLevel::Reasoning
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PremiseSubtype::EntityExistence => "entity_existence",
            PremiseSubtype::VisualAttributes => "visual_attributes",
            PremiseSubtype::NumericalAttributes => "numerical_attributes",
            PremiseSubtype::StateAttributes => "state_attributes",
            PremiseSubtype::TextualContent => "textual_content",
            PremiseSubtype::SymbolicMeaning => "symbolic_meaning",
            PremiseSubtype::SpatialRelations => "spatial_relations",
            PremiseSubtype::InteractionRelations => "interaction_relations",
            PremiseSubtype::PartWholeRelations => "part_whole_relations",
            PremiseSubtype::EmotionalState => "emotional_state",
            PremiseSubtype::Scene => "scene",
            PremiseSubtype::LogicalRelations => "logical_relations",
            PremiseSubtype::CommonsenseKnowledge => "commonsense_knowledge",
        }
    }

    /// Key of the extraction prompt template for this subtype. The template
    /// store falls back to the shared `extract_premise` template when no
    /// per-subtype file is installed.
    pub fn extraction_prompt_key(&self) -> String {
        format!("extract_{}", self.as_str())
    }

    /// Human-readable description, used as a prompt binding.
    pub fn description(&self) -> &'static str {
        match self {
            PremiseSubtype::EntityExistence => {
                "whether a particular object or entity is present in the image"
            }
            PremiseSubtype::VisualAttributes => {
                "a visible property of an object, such as its color, shape, size, or material"
            }
            PremiseSubtype::NumericalAttributes => {
                "a count or quantity of objects visible in the image"
            }
            PremiseSubtype::StateAttributes => {
                "the condition or state an object is in, such as open, broken, lit, or wet"
            }
            PremiseSubtype::TextualContent => {
                "written text that appears in the image, such as signs, labels, or displays"
            }
            PremiseSubtype::SymbolicMeaning => {
                "the conventional meaning of a symbol, sign, icon, or gesture shown in the image"
            }
            PremiseSubtype::SpatialRelations => {
                "the spatial arrangement between objects, such as left of, behind, above, or inside"
            }
            PremiseSubtype::InteractionRelations => {
                "an action or interaction between agents or objects, such as holding, riding, or feeding"
            }
            PremiseSubtype::PartWholeRelations => {
                "a part-to-whole relationship, such as a component belonging to a larger object"
            }
            PremiseSubtype::EmotionalState => {
                "the apparent emotion or mood of a person or animal in the image"
            }
            PremiseSubtype::Scene => {
                "the overall setting or type of place the image depicts"
            }
            PremiseSubtype::LogicalRelations => {
                "a logical consequence or dependency implied by the visible situation"
            }
            PremiseSubtype::CommonsenseKnowledge => {
                "an everyday-knowledge fact grounded in the image content"
            }
        }
    }
}

impl fmt::Display for PremiseSubtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PremiseSubtype {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PremiseSubtype::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownName {
                kind: "subtype",
                name: s.to_owned(),
            })
    }
}

/// Error for parsing level/subtype names from CLI flags and records.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {kind} name `{name}`")]
pub struct UnknownName {
    pub kind: &'static str,
    pub name: String,
}

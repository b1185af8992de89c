//! Hierarchical style-embedding prediction from text prompts.

pub mod analysis;
pub mod annotation;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod hierarchy;
pub mod labels;
pub mod numerics;
pub mod prompt;

pub use error::{Error, Result};
pub use labels::{Attribute, AttributeLabels, Gender, Language, Level};

//! Domain schemas and DML-annotated dialogues: parsing, validation and
//! variable resolution.

mod acts;
mod dialogue;
mod error;
mod schema;
mod tokenize;
mod validate;

pub use acts::{ActKind, ActLabel, ActParseError};
pub use dialogue::{
    canonical_values, parse_corpus, parse_dialogue, render_pretty, var_prefix, write_corpus,
    AnnotatedDialogue, ArgValue, DialogueEvent, Span, TurnSlice, Variable, DML_VERSION,
};
pub use error::DmlError;
pub use schema::{
    parse_domain, placeholders, ActionRef, ApiDef, ArgDef, DomainSchema, EntityTypeDef, NlgDef,
    SchemaFile, UserTemplateDef, END_DIALOGUE, END_TURN,
};
pub use tokenize::{fold_value, normalize_value, tokenize, tokenize_with_offsets, Token};
pub use validate::{
    resolve_references, validate_dialogue, Environment, Finding, FindingKind, ValidationMode,
    ValidationReport,
};

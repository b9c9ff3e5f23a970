//! Campaign data model: label vocabulary, raw multi-label records and the
//! binary `(file, label) × annotator` matrix derived from them.

mod campaign;
mod matrix;
mod vocab;

pub use campaign::{parse_campaign, write_campaign, CampaignRecord, CAMPAIGN_HEADER};
pub use matrix::{expand_to_items, AnnotationMatrix, ItemId, Response};
pub use vocab::LabelVocabulary;

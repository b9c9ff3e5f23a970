//! Reliability analysis for crowdsourced multi-label annotations.
//!
//! Raw single-pass multi-label annotations (each annotator picks any subset of a
//! fixed label list for a file) are expanded into a sparse binary item matrix
//! where every `(file, label)` pair is one item. On top of that matrix the crate
//! provides:
//!
//! * [`agreement`]: Krippendorff's nominal alpha with missing data, per class,
//!   overall, and along competence-threshold sweeps.
//! * [`mace`]: the MACE latent-variable model fitted by EM, giving annotator
//!   trustworthiness, spamming distributions and truth posteriors.
//! * [`aggregate`]: union and majority vote baselines and label statistics.
//! * [`simulate`]: forward simulation of annotator populations with planted
//!   truth, used to validate everything above.
//!
//! ```
//! use annoreli::annotation::{expand_to_items, parse_campaign, LabelVocabulary};
//! use annoreli::agreement::{coincidences, nominal_alpha};
//!
//! let vocab = LabelVocabulary::new(["dog", "siren"]).unwrap();
//! let csv = "file_id,annotator_id,labels\n\
//!            f1,a,dog\n\
//!            f1,b,dog;siren\n\
//!            f2,a,\n\
//!            f2,b,\n";
//! let records = parse_campaign(csv.as_bytes(), &vocab).unwrap();
//! let matrix = expand_to_items(&records, &vocab).unwrap();
//! assert_eq!(matrix.num_items(), 4);
//!
//! let report = nominal_alpha(&coincidences(&matrix));
//! assert!(report.alpha.value().unwrap() < 1.0);
//! ```

pub mod aggregate;
pub mod agreement;
pub mod annotation;
pub mod error;
pub mod io;
pub mod mace;
pub mod manifest;
pub mod simulate;

pub use error::{Error, Result};

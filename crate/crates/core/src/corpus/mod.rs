//! Raw and annotated dataset ingestion, validation, and document-level splits.

mod load;
mod schema;
mod split;

pub use load::{load_annotated, load_corpus, CorpusLoad, RawDocument};
pub use schema::{
    AnnotatedDocument, EntityLabel, EntityMention, RelationInstance, RelationInventory, NO_RELATION,
};
pub use split::{split_dataset, split_report, stratified_relation_split, SplitCounts, SplitReport, SplitSpec, Splits};

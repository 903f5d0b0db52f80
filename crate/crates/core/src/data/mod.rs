//! Event ingestion, calendar contexts, k-core filtering, leave-one-out
//! splits and sampling.

mod context;
mod dataset;
mod events;
mod kcore;
mod sampling;

pub use context::{derive_context, ContextKind, ContextSchema, ContextTuple};
pub(crate) use dataset::hex;
pub use dataset::{
    build_sequences, leave_one_out_split, parse_stats, Dataset, Event, ItemSet, PaddedSequence,
    SplitDataset, UserSplit, PADDING_ITEM,
};
pub use events::{load_events, write_events_tsv, EventFormat, LoadedEvents, RawEvent};
pub use kcore::{k_core_filter, KCoreReport};
pub use sampling::{sample_eval_negatives, sample_fism_items, sample_negative, EvalNegatives};

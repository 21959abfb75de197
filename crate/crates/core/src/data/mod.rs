//! Practice-log ingestion, difficulty statistics and cross-validation splits.

mod difficulty;
mod ingest;
mod split;
mod stats;

pub use difficulty::{compute_difficulty, level_of, ConceptDifficulty, DifficultyTable, QuestionDifficulty, UNSEEN_THETA};
pub use ingest::{
    ingest_csv, ingest_reader, Catalog, CsvSchema, Dataset, PracticeRecord, QuestionCatalog, StudentSequence,
    WindowOptions,
};
pub use split::{split_folds, FoldData, FoldSplit, NUM_FOLDS};
pub use stats::std_log_statistic;

pub mod assess;
pub mod eval;
pub mod gradcheck;
pub mod ingest;
pub mod simulate;
pub mod train;

mod evaluate;
mod gradcheck;
mod report;
mod synth_data;
mod train;

pub use evaluate::cmd_evaluate;
pub use gradcheck::{cmd_gradcheck, gradcheck_variant, run_gradcheck, VariantReport};
pub use report::cmd_report;
pub use synth_data::cmd_synth_data;
pub use train::cmd_train;

//! One module per subcommand. Each returns a summary for the caller to print.

pub mod ablate;
pub mod eval;
pub mod fit;
pub mod heatmap;
pub mod score;

pub use ablate::{ablate, AblationRow, Sweep};
pub use eval::{eval, read_index, IndexRow};
pub use fit::{fit, FitSummary};
pub use heatmap::heatmap;
pub use score::{score, ScoreSummary};

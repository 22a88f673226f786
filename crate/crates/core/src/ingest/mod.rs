//! Grid file I/O, windowed sample extraction, splits, normalization and
//! synthetic fields.

mod grid;
mod norm;
mod samples;
mod synth;

pub use grid::{load_grid, load_grid_with, save_grid, DEFAULT_CELL_DEG, GridCell, GridField, GRID_VERSION_LINE};
pub use norm::{apply_norm, normalize_stats, NormStats, NormalizedSample, STD_FLOOR};
pub use samples::{build_samples, window_sample, MonthRange, SampleSplit, SplitSpec, WINDOW_OFFSETS};
pub use synth::{synthesize_field, SynthSpec, DEPTH_CURVATURE_BOUND, SPATIAL_ROUGHNESS_BOUND};

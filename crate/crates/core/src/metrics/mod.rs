//! Overlap and surface-distance evaluation, and paired significance tests.

pub mod distance;
pub mod edt;
pub mod report;
pub mod stats;
pub mod surface;

pub use distance::{asd, asd_with, dice, directed_hausdorff, hd95, percentile, surface_error_map, AsdMode};
pub use edt::squared_edt;
pub use report::{evaluate_case, CaseMetrics, Metric, MetricsReport, Summary};
pub use stats::{paired_t_test, TTest};
pub use surface::{directed_distances, extract_surface, SurfacePointSet};
